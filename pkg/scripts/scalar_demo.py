#!/usr/bin/env python3
"""Worked scalar example of the certificate machinery.

Builds the 1-state system dx = a x dt + sigma x dW (no feedback column),
prints the closed-form feasibility verdict next to the solver's, and a
small sigma sweep.  Useful as a sanity check that the search agrees with
pencil-and-paper on the one case where the condition collapses to
2a < sigma^2 (1 - nu).
"""

import numpy as np

from sarlab.certify import CertProblem, certify, default_nu_grid, sigma_sweep
from sarlab.lure import LureSystem, get_nonlinearity


def scalar_system(a: float, sigma: float) -> LureSystem:
    return LureSystem(
        a=np.array([[a]]), f_gain=np.zeros((1, 1)), c=np.eye(1), sigma=sigma,
        nonlinearity=get_nonlinearity("tanh_bank", slopes=np.ones(1)),
        sector_slopes=np.ones(1), deriv_bounds=np.ones(1))


def closed_form(a: float, sigma: float) -> bool:
    return bool(np.any(2 * a < sigma ** 2 * (1 - default_nu_grid())))


def main() -> None:
    a = 0.1
    for sigma in (0.3, 0.7):
        cert = certify(CertProblem(scalar_system(a, sigma)))
        print(f"a={a} sigma={sigma}: solver={'feasible' if cert.feasible else 'infeasible'} "
              f"(margin {cert.margin:.3g}), closed form="
              f"{'feasible' if closed_form(a, sigma) else 'infeasible'}")

    print("\nsweep a=0.1, sigma in [0, 1]:")
    for sigma, cert in sigma_sweep(scalar_system(a, 0.0), np.round(np.arange(0, 1.05, 0.1), 10)):
        mark = "*" if cert.feasible else " "
        print(f"  sigma={sigma:4.1f}  margin={cert.margin:+.3e} {mark}")


if __name__ == "__main__":
    main()
