"""Stability certificate for Lur'e systems with state-multiplicative noise.

Feasibility of the block matrix inequality N(nu, Lambda, T) < 0 certifies
almost-sure asymptotic stability of the origin, where

    N11 = nu (A^T + A - sigma^2 (1 - nu) I) + sigma^2 C^T Lambda Delta C
    N12 = nu F + (A - (sigma^2/2)(1 - nu/2) I)^T C^T Lambda + S C^T T
    N22 = -2 T + Lambda C F + F^T C^T Lambda

with Lambda = diag(lambda) >= 0 and T = diag(tau) >= 0 free multipliers,
S = diag(sector_slopes), Delta = diag(deriv_bounds), and nu in (0, 1) a
scalar exponent searched on a grid.  For fixed nu the largest eigenvalue of
N is convex in (lambda, tau); the solver runs a projected subgradient
descent on it with backtracking steps, diminishing-step fallback, random
restarts, and a deterministic set of warm-start probes.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .lure import LureSystem, system_from_dict, system_to_dict

__all__ = [
    "SolverOptions",
    "CertProblem",
    "Certificate",
    "default_nu_grid",
    "certificate_matrix",
    "max_eigenvalue",
    "certify",
    "recompute_margin",
    "sigma_sweep",
    "sweep_to_csv",
    "lyapunov_value",
    "save_certificate",
    "load_certificate",
]


def default_nu_grid() -> np.ndarray:
    return np.linspace(0.05, 0.95, 19)


@dataclass(frozen=True)
class SolverOptions:
    """Knobs for the projected-subgradient feasibility search."""

    max_iters: int = 5000
    tol: float = 1e-8           # feasible iff margin < -tol (absolute)
    restarts: int = 5
    seed: int = 0
    stall_window: int = 25      # stop a restart after this many non-improving iters
    init_step: float = 1.0
    allow_nonorthonormal_c: bool = False
    c_defect_tol: float = 1e-9
    feasible_exit_factor: float = 10.0

    def __post_init__(self):
        if self.max_iters < 1 or self.restarts < 1:
            raise ValueError("max_iters and restarts must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")


@dataclass(frozen=True, eq=False)
class CertProblem:
    sys: LureSystem
    nu_grid: np.ndarray = field(default_factory=default_nu_grid)
    options: SolverOptions = field(default_factory=SolverOptions)


@dataclass(frozen=True, eq=False)
class Certificate:
    """Outcome of a certification run: the best (nu, lambda, tau) found,
    the achieved margin = lambda_max(N), and the feasibility verdict."""

    sigma: float
    nu: float
    lam: np.ndarray
    tau: np.ndarray
    margin: float
    feasible: bool
    capped: bool = False


def certificate_matrix(sys: LureSystem, nu: float, lam, tau) -> np.ndarray:
    """Assemble the 2n x 2n block matrix N(nu, Lambda, T) for a square
    system (m == n; augment first if needed)."""
    n = sys.n
    if sys.m != n:
        raise ValueError(f"certificate needs a square system (m == n), got n={n}, m={sys.m}")
    if not 0.0 < nu < 1.0:
        raise ValueError("nu must lie in (0, 1)")
    lam = np.asarray(lam, dtype=float) * np.ones(n)
    tau = np.asarray(tau, dtype=float) * np.ones(n)
    if lam.shape != (n,) or tau.shape != (n,):
        raise ValueError("lambda and tau must have length n")
    if np.any(lam < 0) or np.any(tau < 0):
        raise ValueError("lambda and tau must be >= 0")

    a, f, c = sys.a, sys.f_gain, sys.c
    s2 = sys.sigma ** 2
    s = sys.sector_slopes
    delta = sys.deriv_bounds
    eye = np.eye(n)

    # C^T Lambda Delta C with diagonal Lambda, Delta
    ctld_c = c.T @ ((lam * delta)[:, None] * c)
    n11 = nu * (a.T + a - s2 * (1.0 - nu) * eye) + s2 * ctld_c
    m_shift = a - (s2 / 2.0) * (1.0 - nu / 2.0) * eye
    n12 = nu * f + m_shift.T @ (c.T * lam[None, :]) + (s[:, None] * c).T * tau[None, :]
    n22 = -2.0 * np.diag(tau) + (lam[:, None] * (c @ f)) + (c @ f).T * lam[None, :]
    return np.block([[n11, n12], [n12.T, n22]])


def max_eigenvalue(mat: np.ndarray, asym_tol: float = 1e-8) -> float:
    """Largest eigenvalue of a symmetric matrix; the input is symmetrized
    as (M + M^T)/2 first and rejected if the asymmetry exceeds asym_tol
    relative to its norm."""
    mat = np.asarray(mat, dtype=float)
    scale = max(1.0, float(np.linalg.norm(mat)))
    if float(np.linalg.norm(mat - mat.T)) > asym_tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    sym = 0.5 * (mat + mat.T)
    return float(np.linalg.eigvalsh(sym)[-1])


# ---------------------------------------------------------------------------
# solver


def _affine_parts(sys: LureSystem, nu: float):
    """N(theta) = N0 + sum_p theta_p B_p with theta = (lambda, tau)."""
    n = sys.n
    zeros = np.zeros(n)
    n0 = certificate_matrix(sys, nu, zeros, zeros)
    basis = np.empty((2 * n, 2 * n, 2 * n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        basis[i] = certificate_matrix(sys, nu, e, zeros) - n0
        basis[n + i] = certificate_matrix(sys, nu, zeros, e) - n0
    n0 = 0.5 * (n0 + n0.T)
    basis = 0.5 * (basis + np.transpose(basis, (0, 2, 1)))
    return n0, basis


def _top_eig(mat: np.ndarray):
    if mat.shape[0] == 1:
        return float(mat[0, 0]), np.ones(1)
    if mat.shape[0] == 2:
        # closed form keeps scalar demos cheap
        a, b, d = mat[0, 0], mat[0, 1], mat[1, 1]
        disc = np.hypot(a - d, 2.0 * b)
        top = 0.5 * ((a + d) + disc)
        if disc == 0.0:
            return float(top), np.array([1.0, 0.0])
        if abs(top - a) >= abs(top - d):
            v = np.array([b, top - a])
        else:
            v = np.array([top - d, b])
        nrm = np.linalg.norm(v)
        if nrm == 0.0:
            return float(top), np.array([1.0, 0.0])
        return float(top), v / nrm
    w, v = np.linalg.eigh(mat)
    return float(w[-1]), v[:, -1]


def _solve_fixed_nu(n0: np.ndarray, basis: np.ndarray, opts: SolverOptions,
                    rng: np.random.Generator):
    """min over theta >= 0 of lambda_max(N0 + theta . B), best-effort.

    Returns (best value, best theta, hit_cap).  Parameters are rescaled so a
    unit step in each scaled coordinate moves N by about ||N0||.
    """
    nparams = basis.shape[0]
    ref = float(np.linalg.norm(n0)) + 1e-12
    bnorm = np.linalg.norm(basis.reshape(nparams, -1), axis=1)
    scale = ref / np.maximum(bnorm, 1e-12 * ref)
    sbasis = basis * scale[:, None, None]

    def value(phi):
        mat = n0 + np.tensordot(phi, sbasis, axes=1)
        return _top_eig(0.5 * (mat + mat.T))

    exit_level = -opts.feasible_exit_factor * opts.tol

    best_phi = np.zeros(nparams)
    best_g, _ = value(best_phi)

    # deterministic probes: small multipliers of either family
    half = nparams // 2
    for eps in (1e-8, 1e-6, 1e-4, 1e-2, 1.0):
        for mask in ((slice(half, None),), (slice(None),), (slice(0, half),)):
            phi = np.zeros(nparams)
            phi[mask[0]] = eps
            g, _ = value(phi)
            if g < best_g:
                best_g, best_phi = g, phi
            if best_g < exit_level:
                return best_g, best_phi * scale, False

    hit_cap = False
    flat_restarts = 0
    for restart in range(opts.restarts):
        best_before = best_g
        if restart == 0:
            phi = best_phi.copy()
        else:
            phi = 10.0 ** rng.uniform(-4.0, 0.5, size=nparams)
        g, vec = value(phi)
        if g < best_g:
            best_g, best_phi = g, phi.copy()
        alpha = opts.init_step
        since_improve = 0
        it = 0
        while it < opts.max_iters:
            it += 1
            grad = np.einsum("pij,i,j->p", sbasis, vec, vec)
            gnorm = float(np.linalg.norm(grad))
            if gnorm < 1e-18 * ref:
                break
            stepped = False
            a = alpha
            for _ in range(25):
                cand = np.maximum(phi - (a / ref) * grad, 0.0)
                gc, vc = value(cand)
                if gc < g - 1e-15 * ref:
                    phi, g, vec = cand, gc, vc
                    alpha = min(a * 1.6, 1e6)
                    stepped = True
                    break
                a *= 0.5
                if a < 1e-12:
                    break
            if not stepped:
                # diminishing subgradient fallback keeps nonsmooth cases moving
                a = opts.init_step / (1.0 + it) ** 0.6
                phi = np.maximum(phi - a * grad / gnorm, 0.0)
                g, vec = value(phi)
                alpha = max(alpha * 0.5, 1e-9)
            if g < best_g - 1e-12 * max(1.0, abs(best_g)):
                best_g = g
                best_phi = phi.copy()
                since_improve = 0
            else:
                since_improve += 1
            if best_g < exit_level:
                return best_g, best_phi * scale, False
            if since_improve > opts.stall_window:
                break
        else:
            hit_cap = True
        # restarts that stopped improving the incumbent are diminishing returns
        if best_g > best_before - max(1e-12, 1e-6 * abs(best_before)):
            flat_restarts += 1
            if flat_restarts >= 2 and restart >= 1:
                break
        else:
            flat_restarts = 0
    return best_g, best_phi * scale, hit_cap


def certify(problem: CertProblem) -> Certificate:
    """Grid-search nu, minimizing lambda_max(N) over the multiplier cone at
    each grid point; feasible iff some margin drops below -tol.  Scanning
    stops at the first feasible nu."""
    sys = problem.sys
    opts = problem.options
    n = sys.n
    if sys.m != n:
        raise ValueError("certify needs a square system; use augment/embed first")
    nu_grid = np.atleast_1d(np.asarray(problem.nu_grid, dtype=float))
    if nu_grid.size == 0 or np.any(nu_grid <= 0.0) or np.any(nu_grid >= 1.0):
        raise ValueError("nu grid must be non-empty and lie strictly inside (0, 1)")

    defect = float(np.linalg.norm(sys.c.T @ sys.c - np.eye(n)))
    if defect > opts.c_defect_tol and not opts.allow_nonorthonormal_c:
        raise ValueError(
            f"C^T C deviates from identity by {defect:.3g} (Frobenius); the certificate "
            "hypothesis does not hold. Pass SolverOptions(allow_nonorthonormal_c=True) "
            "to proceed anyway.")

    rng = np.random.Generator(np.random.Philox(key=opts.seed & ((1 << 64) - 1)))
    best = None  # (margin, nu, theta)
    capped = False
    for nu in nu_grid:
        n0, basis = _affine_parts(sys, float(nu))
        margin, theta, hit_cap = _solve_fixed_nu(n0, basis, opts, rng)
        capped = capped or hit_cap
        if best is None or margin < best[0]:
            best = (margin, float(nu), theta)
        if margin < -opts.tol:
            break

    margin, nu, theta = best
    lam, tau = theta[:n].copy(), theta[n:].copy()
    # report the margin of the stored point exactly (reconstruction contract)
    margin = max_eigenvalue(certificate_matrix(sys, nu, lam, tau))
    return Certificate(sigma=sys.sigma, nu=nu, lam=lam, tau=tau,
                       margin=margin, feasible=bool(margin < -opts.tol), capped=capped)


def recompute_margin(sys: LureSystem, cert: Certificate) -> float:
    """lambda_max of N rebuilt from a certificate's stored point."""
    return max_eigenvalue(certificate_matrix(sys.with_sigma(cert.sigma), cert.nu,
                                             cert.lam, cert.tau))


def linear_necessity_bound(sys: LureSystem, n_random: int = 200, seed: int = 0):
    """Lower bound on the noise any sound certificate must demand.

    The sector class contains the linear feedbacks f_j(u) = theta_j s_j u
    with theta_j in [0, 1], so a certificate at noise level sigma also
    asserts almost-sure stability of dx = (A + F Theta S C) x dt
    + sigma x dbeta, which for this noise structure holds iff
    max Re eig(A + F Theta S C) < sigma^2 / 2.  Searching theta over
    corners (all-on, per-coordinate, random, plus greedy flips) yields a
    growth rate `rate`; no sigma with sigma^2/2 <= rate can be soundly
    certified.  Returns (rate, sigma_floor) with sigma_floor =
    sqrt(2 * max(rate, 0)).
    """
    m = sys.m
    fs = sys.f_gain * sys.sector_slopes[None, :]  # F S

    def growth(theta):
        return float(np.linalg.eigvals(sys.a + (fs * theta[None, :]) @ sys.c).real.max())

    rng = np.random.Generator(np.random.Philox(key=seed & ((1 << 64) - 1)))
    corners = [np.zeros(m), np.ones(m)]
    corners += [np.eye(m)[j] for j in range(m)]
    corners += [rng.integers(0, 2, size=m).astype(float) for _ in range(n_random)]
    best_theta, best = None, -np.inf
    for th in corners:
        g = growth(th)
        if g > best:
            best, best_theta = g, th.copy()
    improved = True
    while improved:  # greedy bit flips from the incumbent corner
        improved = False
        for j in range(m):
            cand = best_theta.copy()
            cand[j] = 1.0 - cand[j]
            g = growth(cand)
            if g > best + 1e-12:
                best, best_theta = g, cand
                improved = True
    return best, float(np.sqrt(2.0 * max(best, 0.0)))


# ---------------------------------------------------------------------------
# sweeps


def _sweep_worker(args):
    sys_dict, sigma, nu_grid, options = args
    sys = system_from_dict(sys_dict).with_sigma(sigma)
    return certify(CertProblem(sys, np.asarray(nu_grid), options))


def sigma_sweep(sys: LureSystem, sigmas, nu_grid=None, options: SolverOptions | None = None,
                jobs: int = 1) -> list[tuple[float, Certificate]]:
    """Certify a template system at each noise level of an ascending grid.

    Each sigma is solved independently (results do not depend on jobs).
    """
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    if sigmas.size == 0:
        raise ValueError("sigma grid is empty")
    if np.any(sigmas < 0):
        raise ValueError("sigma values must be >= 0")
    if np.any(np.diff(sigmas) <= 0) and sigmas.size > 1:
        raise ValueError("sigma grid must be strictly ascending")
    if nu_grid is None:
        nu_grid = default_nu_grid()
    if options is None:
        options = SolverOptions()

    if jobs > 1:
        payload = [(system_to_dict(sys), float(s), np.asarray(nu_grid), options) for s in sigmas]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            certs = list(pool.map(_sweep_worker, payload))
    else:
        certs = [certify(CertProblem(sys.with_sigma(float(s)), np.asarray(nu_grid), options))
                 for s in sigmas]
    return [(float(s), c) for s, c in zip(sigmas, certs)]


def sweep_to_csv(results: list[tuple[float, Certificate]], file) -> None:
    """Write `sigma,margin,feasible` rows (feasible as 0/1)."""
    with open(file, "w") as fh:
        fh.write("sigma,margin,feasible\n")
        for sigma, cert in results:
            fh.write(f"{sigma:.17g},{cert.margin:.17g},{int(cert.feasible)}\n")


# ---------------------------------------------------------------------------
# Lyapunov functional (diagnostic)


def lyapunov_value(x, sys: LureSystem, nu: float, lam, rho: float = 0.0) -> float:
    """V(x) = (x.x)^(nu/2) + sum_k lam_k * integral_0^{y_k} s^(-2 rho) f_k(s) ds.

    rho is a free exponent left unpinned by the certificate (default 0);
    rho >= 1 makes the integral diverge for components with linear growth
    at 0 and is rejected.  Diagnostic only: not used by certify.
    """
    if not 0.0 < nu < 1.0:
        raise ValueError("nu must lie in (0, 1)")
    if rho >= 1.0:
        raise ValueError("rho >= 1 gives a non-integrable weight at 0")
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float) * np.ones(sys.m)
    if np.any(lam < 0):
        raise ValueError("lambda must be >= 0")
    val = float(np.dot(x, x)) ** (nu / 2.0)
    y = sys.c @ x
    for k in range(sys.m):
        if lam[k] == 0.0 or y[k] == 0.0:
            continue

        def integrand(s, k=k):
            e = np.zeros(sys.m)
            e[k] = s
            fk = float(sys.nonlinearity(e)[k])
            w = abs(s) ** (-2.0 * rho) if rho != 0.0 else 1.0
            return w * fk

        part, _ = quad(integrand, 0.0, float(y[k]), limit=200)
        val += float(lam[k]) * part
    return val


# ---------------------------------------------------------------------------
# serialization


def save_certificate(cert: Certificate, path) -> None:
    doc = {
        "sigma": cert.sigma,
        "nu": cert.nu,
        "lambda": cert.lam.tolist(),
        "tau": cert.tau.tolist(),
        "margin": cert.margin,
        "feasible": bool(cert.feasible),
        "capped": bool(cert.capped),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_certificate(path) -> Certificate:
    with open(path) as fh:
        d = json.load(fh)
    return Certificate(sigma=float(d["sigma"]), nu=float(d["nu"]),
                       lam=np.asarray(d["lambda"], dtype=float),
                       tau=np.asarray(d["tau"], dtype=float),
                       margin=float(d["margin"]), feasible=bool(d["feasible"]),
                       capped=bool(d.get("capped", False)))
