"""Sector-bounded Lur'e models with state-multiplicative noise.

The model class is

    dx = A x dt + F f(y) dt + sigma * x dbeta,    y = C x,

where beta is a single scalar Wiener process shared by all states, and the
feedback nonlinearity acts componentwise: f(y)_i = f_i(y_i).  Each component
is confined to the sector

    0 <= y_i f_i(y_i) <= s_i y_i^2      (equivalently f_i (f_i - s_i y_i) <= 0)

and has a bounded slope f_i' < delta_i.  The certificate machinery in
:mod:`sarlab.certify` consumes only (A, F, C, sigma, s, delta); the evaluator
is needed for simulation and sector checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

__all__ = [
    "Nonlinearity",
    "LureSystem",
    "AugmentedSystem",
    "AugmentSkeleton",
    "Violation",
    "SectorCheck",
    "tanh_bank",
    "identity_bank",
    "zero_bank",
    "get_nonlinearity",
    "register_nonlinearity",
    "validate",
    "sector_check",
    "augment",
    "save_system",
    "load_system",
    "system_to_dict",
    "system_from_dict",
]


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """Componentwise feedback nonlinearity y in R^m -> f(y) in R^m."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.fn(y)


def tanh_bank(slopes, biases=None) -> Nonlinearity:
    """Bank of centered tanh units, f_i(y) = tanh(s_i y + b_i) - tanh(b_i).

    Each unit vanishes at 0, lies in the sector [0, s_i] and has slope
    bounded by s_i, so a system using this bank with sector_slopes =
    deriv_bounds = slopes is exactly sector-consistent.
    """
    s = np.asarray(slopes, dtype=float)
    if biases is None:
        b = np.zeros_like(s)
    else:
        b = np.asarray(biases, dtype=float)
        if b.shape != s.shape:
            raise ValueError("biases shape must match slopes")
    tb = np.tanh(b)

    def fn(y: np.ndarray) -> np.ndarray:
        return np.tanh(s * y + b) - tb

    return Nonlinearity("tanh_bank", fn)


def identity_bank(slopes=None, biases=None) -> Nonlinearity:
    return Nonlinearity("identity", lambda y: y.copy())


def zero_bank(slopes=None, biases=None) -> Nonlinearity:
    return Nonlinearity("zero", np.zeros_like)


_REGISTRY: dict[str, Callable[..., Nonlinearity]] = {}


def register_nonlinearity(name: str, factory: Callable[..., Nonlinearity]) -> None:
    _REGISTRY[name] = factory


def get_nonlinearity(name: str, slopes=None, biases=None) -> Nonlinearity:
    """Build a registered evaluator.  Registry names travel in system JSON;
    unit parameters do not, so reconstruction uses the system's slopes."""
    if name not in _REGISTRY:
        raise KeyError(f"unknown nonlinearity {name!r}; known: {sorted(_REGISTRY)}")
    return _REGISTRY[name](slopes=slopes, biases=biases)


register_nonlinearity("tanh_bank", lambda slopes=None, biases=None: tanh_bank(slopes, biases))
# the Morris-Lecar embedding uses the same centered-tanh units, under its own name
register_nonlinearity("morris_lecar_bank", lambda slopes=None, biases=None: tanh_bank(slopes, biases))
register_nonlinearity("identity", identity_bank)
register_nonlinearity("zero", zero_bank)


@dataclass(frozen=True, eq=False)
class LureSystem:
    """Immutable value object holding the model data.

    a: (n, n) drift matrix, f_gain: (n, m) feedback gain, c: (m, n) output
    map, sigma >= 0 noise level, nonlinearity: componentwise evaluator,
    sector_slopes s and deriv_bounds delta: length-m positive vectors.
    """

    a: np.ndarray
    f_gain: np.ndarray
    c: np.ndarray
    sigma: float
    nonlinearity: Nonlinearity
    sector_slopes: np.ndarray
    deriv_bounds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", _frozen(np.atleast_2d(self.a)))
        object.__setattr__(self, "f_gain", _frozen(np.atleast_2d(self.f_gain)))
        object.__setattr__(self, "c", _frozen(np.atleast_2d(self.c)))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "sector_slopes", _frozen(np.atleast_1d(self.sector_slopes)))
        object.__setattr__(self, "deriv_bounds", _frozen(np.atleast_1d(self.deriv_bounds)))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.c.shape[0]

    def with_sigma(self, sigma: float) -> "LureSystem":
        """Copy with a different noise level (used by sweeps)."""
        return LureSystem(self.a, self.f_gain, self.c, sigma,
                          self.nonlinearity, self.sector_slopes, self.deriv_bounds)

    def drift(self, x: np.ndarray) -> np.ndarray:
        """A x + F f(C x) evaluated at one state (or a stack of states)."""
        y = x @ self.c.T
        return x @ self.a.T + self.nonlinearity(y) @ self.f_gain.T


@dataclass(frozen=True, eq=False)
class AugmentedSystem:
    """A LureSystem produced by padding an n_phys-state model with p
    fictitious states decaying at rate kappa (so that F is square)."""

    base: LureSystem
    kappa: float
    n_phys: int
    p: int


class AugmentSkeleton(NamedTuple):
    """Padded matrices produced by :func:`augment`."""

    a_bar: np.ndarray
    f_bar: np.ndarray
    n_phys: int
    p: int
    kappa: float


@dataclass(frozen=True)
class Violation:
    severity: str  # "error" | "warning"
    code: str
    message: str
    value: float | None = None


class SectorCheck(NamedTuple):
    ok: bool
    worst_point: float
    worst_value: float
    worst_index: int


def validate(sys: LureSystem, tolerance: float = 1e-9, probe_componentwise: bool = True) -> list[Violation]:
    """Structural checks.  Dimension errors and nonpositive bounds are
    errors; an orthonormality defect ||C^T C - I||_F > tolerance is a
    warning (the certificate hypothesis wants C^T C = I, which sector
    embeddings of low-dimensional physics cannot satisfy)."""
    out: list[Violation] = []
    n, m = sys.n, sys.m

    if sys.a.shape != (n, n):
        out.append(Violation("error", "dim_a", f"a must be square, got {sys.a.shape}"))
    if sys.f_gain.shape != (n, m):
        out.append(Violation("error", "dim_f_gain",
                             f"f_gain must be ({n}, {m}), got {sys.f_gain.shape}"))
    if sys.c.shape != (m, n):
        out.append(Violation("error", "dim_c", f"c must be ({m}, {n}), got {sys.c.shape}"))
    if sys.sector_slopes.shape != (m,):
        out.append(Violation("error", "dim_sector_slopes",
                             f"sector_slopes must have length {m}"))
    if sys.deriv_bounds.shape != (m,):
        out.append(Violation("error", "dim_deriv_bounds",
                             f"deriv_bounds must have length {m}"))
    if out:
        return out

    if sys.sigma < 0:
        out.append(Violation("error", "sigma_negative", "sigma must be >= 0", sys.sigma))
    for i, s in enumerate(sys.sector_slopes):
        if not s > 0:
            out.append(Violation("error", "bad_sector_slope",
                                 f"sector slope s[{i}] must be > 0", float(s)))
    for i, d in enumerate(sys.deriv_bounds):
        if not d > 0:
            out.append(Violation("error", "bad_deriv_bound",
                                 f"derivative bound delta[{i}] must be > 0", float(d)))

    defect = float(np.linalg.norm(sys.c.T @ sys.c - np.eye(n)))
    if defect > tolerance:
        out.append(Violation("warning", "c_not_orthonormal",
                             f"||C^T C - I||_F = {defect:.6g} exceeds {tolerance:g}; "
                             "the certificate hypothesis C^T C = I does not hold",
                             defect))

    if probe_componentwise:
        rng = np.random.default_rng(0)
        bases = [np.zeros(m)] + [rng.standard_normal(m) for _ in range(2)]
        for y0 in bases:
            f0 = sys.nonlinearity(y0)
            for j in range(m):
                y1 = y0.copy()
                y1[j] += 0.7
                f1 = sys.nonlinearity(y1)
                moved = np.abs(f1 - f0) > 1e-14
                moved[j] = False
                if np.any(moved):
                    out.append(Violation(
                        "error", "not_componentwise",
                        f"perturbing y[{j}] changed f at components {np.nonzero(moved)[0].tolist()}"))
                    break
            else:
                continue
            break

    return out


def sector_check(f, slopes, grid, tol: float = 1e-12) -> SectorCheck:
    """Sample the sector inequality f_i(y)(f_i(y) - s_i y) <= tol on a grid
    of scalar y values (applied to every component).  The grid must contain 0
    so that the check pins f_i(0) = 0."""
    grid = np.asarray(grid, dtype=float)
    if not np.any(grid == 0.0):
        raise ValueError("sector grid must include 0")
    s = np.atleast_1d(np.asarray(slopes, dtype=float))
    m = s.shape[0]

    worst_value = -np.inf
    worst_point = 0.0
    worst_index = 0
    for g in grid:
        fy = np.atleast_1d(np.asarray(f(np.full(m, g)), dtype=float))
        v = fy * (fy - s * g)
        i = int(np.argmax(v))
        if v[i] > worst_value:
            worst_value = float(v[i])
            worst_point = float(g)
            worst_index = i
    return SectorCheck(worst_value <= tol, worst_point, worst_value, worst_index)


def augment(a_phys, f_phys, kappa: float) -> AugmentSkeleton:
    """Pad an (n, m) system with p = m - n fictitious states decaying at
    -kappa, so the feedback gain becomes square:

        A_bar = [[A, 0], [0, -kappa I_p]],   F_bar = [[F], [0]].
    """
    a_phys = np.atleast_2d(np.asarray(a_phys, dtype=float))
    f_phys = np.atleast_2d(np.asarray(f_phys, dtype=float))
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    n = a_phys.shape[0]
    if a_phys.shape != (n, n):
        raise ValueError("a_phys must be square")
    if f_phys.shape[0] != n:
        raise ValueError("f_phys must have one row per physical state")
    m = f_phys.shape[1]
    if m < n:
        raise ValueError(f"need at least as many nonlinearities as states (m={m} < n={n})")
    p = m - n

    a_bar = np.zeros((m, m))
    a_bar[:n, :n] = a_phys
    if p:
        a_bar[n:, n:] = -kappa * np.eye(p)
    f_bar = np.zeros((m, m))
    f_bar[:n, :] = f_phys
    return AugmentSkeleton(a_bar, f_bar, n, p, float(kappa))


# ---------------------------------------------------------------------------
# serialization


def system_to_dict(sys: LureSystem) -> dict:
    return {
        "a": sys.a.tolist(),
        "f_gain": sys.f_gain.tolist(),
        "c": sys.c.tolist(),
        "sigma": sys.sigma,
        "sector_slopes": sys.sector_slopes.tolist(),
        "deriv_bounds": sys.deriv_bounds.tolist(),
        "nonlinearity": sys.nonlinearity.name,
    }


def system_from_dict(d: dict, nonlinearity: Nonlinearity | None = None) -> LureSystem:
    slopes = np.asarray(d["sector_slopes"], dtype=float)
    if nonlinearity is None:
        nonlinearity = get_nonlinearity(d.get("nonlinearity", "tanh_bank"), slopes=slopes)
    return LureSystem(
        a=np.asarray(d["a"], dtype=float),
        f_gain=np.asarray(d["f_gain"], dtype=float),
        c=np.asarray(d["c"], dtype=float),
        sigma=float(d["sigma"]),
        nonlinearity=nonlinearity,
        sector_slopes=slopes,
        deriv_bounds=np.asarray(d["deriv_bounds"], dtype=float),
    )


def save_system(sys: LureSystem, path) -> None:
    with open(path, "w") as fh:
        json.dump(system_to_dict(sys), fh, indent=2)
        fh.write("\n")


def load_system(path, nonlinearity: Nonlinearity | None = None) -> LureSystem:
    """Load a system JSON.  The evaluator is rebuilt from the registry by
    name using the stored slopes (unit biases are not serialized here; the
    cli reconstructs embedding evaluators exactly from their net files)."""
    with open(path) as fh:
        return system_from_dict(json.load(fh), nonlinearity=nonlinearity)
