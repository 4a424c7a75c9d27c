#!/usr/bin/env python3
"""Recompute the independently derived values that the tests freeze.

    python3 scripts/oracles.py
"""

import numpy as np
from scipy import integrate

from renorm_lab import kernels


def watson_nquad():
    # 3-d integral over the torus, independent of the heat-kernel route
    f = lambda a, b, c: 1.0 / (6 - 2 * (np.cos(2 * np.pi * a) + np.cos(2 * np.pi * b)
                                        + np.cos(2 * np.pi * c)))
    val, err = integrate.nquad(f, [[0, 1]] * 3, opts={"epsabs": 1e-10, "limit": 200})
    return val, err


def main():
    print(f"d=3 G(0), heat kernel        {kernels.free_green(3, 0.0, 2).sigma!r}")
    print(f"d=3 G(0), polar quadrature   {kernels.watson_g0_quadrature()!r}")
    print(f"d=3 G(0), closed form        {float(kernels.watson_g0_closed_form())!r}")
    val, err = watson_nquad()
    print(f"d=3 G(0), nquad over T^3     {val!r} (+- {err:.1e})")
    c = kernels.renorm_constants(kernels.free_green(5, 0.0, 12))
    print(f"d=5 free constants R=12      sigma={c.sigma!r} rho={c.rho!r} eta={c.eta!r}")
    print(f"                             rho tail bound {c.rho_tail:.2e}")


if __name__ == "__main__":
    main()
