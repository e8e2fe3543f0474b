"""Piecewise Chebyshev tables for smooth radial functions and quadrature rules."""

from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss


@lru_cache(maxsize=None)
def gauss_legendre(n, a=-1.0, b=1.0):
    x, w = leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def bump(r, radius=1.0):
    """exp(-1/(1-(r/radius)^2)) inside the ball, 0 outside."""
    r = np.abs(np.asarray(r, dtype=float)) / radius
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def sphere_area(n):
    """Surface area of the unit sphere S^{n} in R^{n+1} (S^0 = two points)."""
    from scipy.special import gamma

    return 2.0 * np.pi ** ((n + 1) / 2) / gamma((n + 1) / 2)


class ChebTable:
    """Piecewise Chebyshev interpolant of ``f`` on ``[0, rmax]``; zero beyond ``rmax``.

    ``f`` is called once, vectorised, on all interpolation nodes.
    """

    def __init__(self, f, rmax, panels=64, degree=16):
        n = degree + 1
        x = np.cos(np.pi * (np.arange(n) + 0.5) / n)
        self.rmax = float(rmax)
        self.panels = int(panels)
        self.h = self.rmax / self.panels
        left = np.arange(self.panels) * self.h
        self.nodes = left[:, None] + 0.5 * (x[None, :] + 1.0) * self.h
        vals = np.asarray(f(self.nodes.ravel()), dtype=float).reshape(self.panels, n)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("non-finite values while tabulating radial function")
        T = np.cos(np.outer(np.arccos(x), np.arange(n)))
        self.coef = np.linalg.solve(T, vals.T).T

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        flat = np.abs(r).ravel()
        out = np.zeros_like(flat)
        inside = flat < self.rmax
        ri = flat[inside]
        idx = np.minimum((ri / self.h).astype(np.int64), self.panels - 1)
        x = 2.0 * (ri - idx * self.h) / self.h - 1.0
        c = self.coef[idx]
        b1 = np.zeros_like(ri)
        b2 = np.zeros_like(ri)
        for k in range(c.shape[1] - 1, 0, -1):
            b1, b2 = 2.0 * x * b1 - b2 + c[:, k], b1
        out[inside] = x * b1 - b2 + c[:, 0]
        return out.reshape(r.shape)
