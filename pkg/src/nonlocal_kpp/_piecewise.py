"""Exact piecewise-polynomial calculus on compact supports.

The sub-solution is a convolution of two piecewise cubics; representing both
factors exactly and convolving them in closed form (panel-exact Gauss
quadrature plus Chebyshev interpolation of the polynomial result) keeps the
construction accurate to rounding, which the residual certification at very
small dispersal ranges depends on.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as C

__all__ = ["PiecewisePoly"]


def _cheb_nodes(n):
    return np.cos(np.pi * (2 * np.arange(n) + 1) / (2 * n))


class PiecewisePoly:
    """Piecewise polynomial on [breaks[0], breaks[-1]], zero outside.

    Pieces are stored as Chebyshev series on each interval mapped to [-1, 1].
    """

    def __init__(self, breaks, cheb_coeffs):
        self.breaks = np.asarray(breaks, dtype=float)
        if self.breaks.ndim != 1 or self.breaks.size < 2:
            raise ValueError("need at least one piece")
        if np.any(np.diff(self.breaks) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if len(cheb_coeffs) != self.breaks.size - 1:
            raise ValueError("one coefficient array per piece required")
        self.cheb = [np.asarray(c, dtype=float) for c in cheb_coeffs]

    @classmethod
    def fit(cls, breaks, func, degree):
        """Interpolate a (piecewise-)polynomial callable of known degree."""
        breaks = np.asarray(breaks, dtype=float)
        xi = _cheb_nodes(degree + 1)
        coeffs = []
        for lo, hi in zip(breaks[:-1], breaks[1:]):
            x = 0.5 * (hi + lo) + 0.5 * (hi - lo) * xi
            coeffs.append(C.chebfit(xi, func(x), degree))
        return cls(breaks, coeffs)

    @property
    def lo(self):
        return float(self.breaks[0])

    @property
    def hi(self):
        return float(self.breaks[-1])

    @property
    def degree(self):
        return max(len(c) - 1 for c in self.cheb)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        inside = (x >= self.breaks[0]) & (x <= self.breaks[-1])
        if not np.any(inside):
            return out
        idx = np.clip(np.searchsorted(self.breaks, x, side="right") - 1, 0,
                      self.breaks.size - 2)
        for p in range(self.breaks.size - 1):
            sel = inside & (idx == p)
            if not np.any(sel):
                continue
            lo, hi = self.breaks[p], self.breaks[p + 1]
            t = (2.0 * x[sel] - (hi + lo)) / (hi - lo)
            out[sel] = C.chebval(t, self.cheb[p])
        return out

    def integral(self, weight_power=0):
        """Exact integral of f(x) * x^weight_power over the support."""
        total = 0.0
        xi, wi = np.polynomial.legendre.leggauss(
            (self.degree + weight_power) // 2 + 2
        )
        for p in range(self.breaks.size - 1):
            lo, hi = self.breaks[p], self.breaks[p + 1]
            x = 0.5 * (hi + lo) + 0.5 * (hi - lo) * xi
            t = (2.0 * x - (hi + lo)) / (hi - lo)
            vals = C.chebval(t, self.cheb[p]) * x**weight_power
            total += 0.5 * (hi - lo) * float(np.dot(wi, vals))
        return total

    def scale(self, factor):
        return PiecewisePoly(self.breaks, [c * factor for c in self.cheb])

    def even_reflection(self):
        """Even extension of a profile given on [0, X] to [-X, X]."""
        if abs(self.lo) > 1e-300:
            raise ValueError("even_reflection expects a profile starting at 0")
        breaks = np.concatenate([-self.breaks[::-1][:-1], self.breaks])
        coeffs = []
        for c in self.cheb[::-1]:
            # x -> -x maps the mapped variable t -> -t
            cc = c.copy()
            cc[1::2] *= -1.0
            coeffs.append(cc)
        coeffs.extend(self.cheb)
        return PiecewisePoly(breaks, coeffs)

    def convolve(self, other):
        """Exact convolution (f * g)(s) = int f(t) g(s - t) dt."""
        f, g = self, other
        out_breaks = np.unique(
            np.round(
                np.add.outer(f.breaks, g.breaks).ravel(), 14
            )
        )
        deg_out = f.degree + g.degree + 1
        n_samp = deg_out + 1
        xi = _cheb_nodes(n_samp)
        ng = (f.degree + g.degree) // 2 + 2
        gx, gw = np.polynomial.legendre.leggauss(ng)

        coeffs = []
        for lo, hi in zip(out_breaks[:-1], out_breaks[1:]):
            svals = 0.5 * (hi + lo) + 0.5 * (hi - lo) * xi
            hvals = np.empty(n_samp)
            for q, s in enumerate(svals):
                t0, t1 = max(f.lo, s - g.hi), min(f.hi, s - g.lo)
                if t1 <= t0:
                    hvals[q] = 0.0
                    continue
                cuts = np.concatenate([f.breaks, s - g.breaks])
                cuts = np.unique(np.clip(cuts, t0, t1))
                acc = 0.0
                for a, b in zip(cuts[:-1], cuts[1:]):
                    if b - a <= 1e-15 * max(abs(a), abs(b), 1.0):
                        continue
                    tt = 0.5 * (b + a) + 0.5 * (b - a) * gx
                    acc += 0.5 * (b - a) * float(np.dot(gw, f(tt) * g(s - tt)))
                hvals[q] = acc
            coeffs.append(C.chebfit(xi, hvals, deg_out))
        return PiecewisePoly(out_breaks, coeffs)
