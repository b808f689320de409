"""Euler-Maruyama simulation of Lur'e systems with multiplicative noise.

Ito discretization with a single scalar Wiener increment shared by all
states of a path:

    x_{k+1} = x_k + (A x_k + F f(C x_k)) dt + sigma * x_k * dW_k,
    dW_k ~ Normal(0, dt).

Each path draws its increments from its own counter-based stream (Philox
keyed by seed XOR path_index), so ensembles are reproducible independently
of scheduling order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lure import LureSystem

__all__ = [
    "SimConfig",
    "SdePath",
    "em_step",
    "path_stream",
    "simulate",
    "simulate_ensemble",
    "ensemble_moments",
    "lowpass",
    "path_to_csv",
    "moments_to_csv",
]

_MASK64 = (1 << 64) - 1
_CHUNK = 2048  # increments are drawn in chunks to bound memory


@dataclass(frozen=True)
class SimConfig:
    """Integration grid and ensemble bookkeeping.

    Recorded samples are every record_stride-th step starting at t=0;
    the recorded count is floor(t_end/dt/record_stride) + 1.
    """

    t_end: float
    dt: float = 1e-3
    n_paths: int = 1
    seed: int = 0
    record_stride: int = 10

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.dt > self.t_end:
            raise ValueError("dt must not exceed t_end")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(np.floor(self.t_end / self.dt + 1e-12))


@dataclass(frozen=True, eq=False)
class SdePath:
    """One recorded trajectory.  If the integration produced a non-finite
    state the path is truncated at the last finite sample and flagged."""

    times: np.ndarray
    states: np.ndarray
    seed: int
    sigma: float
    path_index: int = 0
    diverged: bool = False


def path_stream(seed: int, path_index: int = 0) -> np.random.Generator:
    """Counter-based stream for one path: Philox keyed by seed XOR index."""
    key = (int(seed) ^ int(path_index)) & _MASK64
    return np.random.Generator(np.random.Philox(key=key))


def em_step(x, sys: LureSystem, dt: float, dw: float) -> np.ndarray:
    """One Euler-Maruyama step: x + (Ax + F f(Cx)) dt + sigma x dw."""
    x = np.asarray(x, dtype=float)
    return x + sys.drift(x) * dt + sys.sigma * x * dw


def _integrate(sys: LureSystem, x0: np.ndarray, cfg: SimConfig,
               path_indices: list[int]) -> list[SdePath]:
    n = sys.n
    npaths = len(path_indices)
    n_steps = cfg.n_steps
    stride = cfg.record_stride
    n_rec = n_steps // stride + 1
    dt = cfg.dt
    sigma = sys.sigma
    sqdt = np.sqrt(dt)

    x = np.tile(np.asarray(x0, dtype=float).reshape(1, n), (npaths, 1))
    rec = np.empty((n_rec, npaths, n))
    rec[0] = x

    gens = [path_stream(cfg.seed, i) for i in path_indices]
    a_t = sys.a.T
    c_t = sys.c.T
    f_t = sys.f_gain.T
    nl = sys.nonlinearity

    # a non-finite state propagates through the arithmetic on its own, so
    # divergence needs no masking here; truncation happens per path below
    step = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while step < n_steps:
            todo = min(_CHUNK, n_steps - step)
            dw = None
            if sigma != 0.0:
                dw = np.empty((npaths, todo))
                for i, g in enumerate(gens):
                    dw[i] = g.standard_normal(todo) * sqdt
            for k in range(todo):
                drift = x @ a_t + nl(x @ c_t) @ f_t
                if sigma != 0.0:
                    x = x + drift * dt + (sigma * dw[:, k])[:, None] * x
                else:
                    x = x + drift * dt
                step += 1
                if step % stride == 0:
                    rec[step // stride] = x

    paths = []
    times_full = np.arange(n_rec) * (dt * stride)
    for i, pidx in enumerate(path_indices):
        states = rec[:, i, :]
        finite = np.isfinite(states).all(axis=1)
        if finite.all():
            paths.append(SdePath(times_full.copy(), states.copy(), cfg.seed, sigma, pidx, False))
        else:
            first_bad = int(np.argmin(finite))
            paths.append(SdePath(times_full[:first_bad].copy(), states[:first_bad].copy(),
                                 cfg.seed, sigma, pidx, True))
    return paths


def simulate(sys: LureSystem, x0, cfg: SimConfig, path_index: int = 0) -> SdePath:
    """Integrate one path.  Divergence (non-finite state) truncates the
    recorded path and sets diverged=True."""
    return _integrate(sys, np.asarray(x0, dtype=float), cfg, [path_index])[0]


def simulate_ensemble(sys: LureSystem, x0, cfg: SimConfig) -> list[SdePath]:
    """Integrate cfg.n_paths paths; path i uses the stream keyed seed XOR i.
    Results are identical to calling simulate() per index."""
    return _integrate(sys, np.asarray(x0, dtype=float), cfg, list(range(cfg.n_paths)))


def ensemble_moments(paths: list[SdePath], order: int = 1):
    """Componentwise ensemble moments across paths on a shared time grid.

    order=1: mean and standard error of x_i(t); order=2: same for x_i(t)^2.
    Paths must share the time grid (mismatched grids are an error).
    """
    if not paths:
        raise ValueError("need at least one path")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    t0 = paths[0].times
    for p in paths[1:]:
        if p.times.shape != t0.shape or not np.array_equal(p.times, t0):
            raise ValueError("paths have mismatched time grids")
    stack = np.stack([p.states for p in paths])  # (P, k, n)
    if order == 2:
        stack = stack * stack
    mean = stack.mean(axis=0)
    if stack.shape[0] > 1:
        se = stack.std(axis=0, ddof=1) / np.sqrt(stack.shape[0])
    else:
        se = np.zeros_like(mean)
    return t0.copy(), mean, se


def lowpass(x, window: int) -> np.ndarray:
    """Centered moving average with reflected boundaries.

    window must be odd; output has the input's length; window=1 is the
    identity.  Applies along axis 0 for 2-D input.
    """
    x = np.asarray(x, dtype=float)
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    npts = x.shape[0]
    if window > 2 * npts:
        raise ValueError(f"window {window} longer than twice the series ({npts})")
    if window == 1:
        return x.copy()
    half = (window - 1) // 2
    if half > npts - 1:
        raise ValueError(f"window {window} too long to reflect a series of {npts} samples")
    kernel = np.full(window, 1.0 / window)
    if x.ndim == 1:
        padded = np.pad(x, half, mode="reflect")
        return np.convolve(padded, kernel, mode="valid")
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        padded = np.pad(x[:, j], half, mode="reflect")
        out[:, j] = np.convolve(padded, kernel, mode="valid")
    return out


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def path_to_csv(path: SdePath, file, var_names: list[str] | None = None) -> None:
    """Write `t,x1,...,xn` rows with %.17g formatting."""
    n = path.states.shape[1]
    names = var_names if var_names is not None else [f"x{i+1}" for i in range(n)]
    if len(names) != n:
        raise ValueError("var_names length mismatch")
    with open(file, "w") as fh:
        fh.write("t," + ",".join(names) + "\n")
        for t, row in zip(path.times, path.states):
            fh.write(_fmt(t) + "," + ",".join(_fmt(v) for v in row) + "\n")


def moments_to_csv(times, moments, stderrs, file) -> None:
    """Write `t,m1,...,mn,se1,...,sen` rows with %.17g formatting."""
    times = np.asarray(times)
    moments = np.asarray(moments)
    stderrs = np.asarray(stderrs)
    n = moments.shape[1]
    hdr = ("t," + ",".join(f"m{i+1}" for i in range(n)) + ","
           + ",".join(f"se{i+1}" for i in range(n)))
    with open(file, "w") as fh:
        fh.write(hdr + "\n")
        for t, m, s in zip(times, moments, stderrs):
            fh.write(_fmt(t) + "," + ",".join(_fmt(v) for v in m) + ","
                     + ",".join(_fmt(v) for v in s) + "\n")
