"""Resource functions a(x): bounded, continuous, positive somewhere, negative far out.

Resources are analytic objects; grids only sample them.  Each family carries
closed-form metadata: the sup of the positive part, a radius R_a containing
supp(a+), and a pair (ell, R_ell) with a(x) <= -ell for |x| >= R_ell, which
the super-solution construction and the truncation schedules consume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Field

__all__ = ["ResourceSpec", "make_resource", "sample", "sample_plus"]

_FAMILIES = ("gaussian_bump", "compact_bump", "two_bumps", "custom")


@dataclass(frozen=True)
class ResourceSpec:
    """Validated resource function with derived quantities.

    ``sup_a_plus`` is ||a+||_inf, ``R_a`` satisfies supp(a+) within B_{R_a},
    and ``a(x) <= -ell`` holds for ``|x| >= R_ell``.
    """

    family: str
    params: dict
    dimension: int
    sup_a_plus: float
    R_a: float
    ell: float
    R_ell: float
    peak: np.ndarray  # a point where a+ attains (nearly) its sup
    evaluate: object = field(repr=False)  # callable on points, shape (..., N) or (...,) in 1D
    lipschitz: float = math.inf
    sup_abs: float = math.inf  # ||a||_inf, consumed by the solver's k formula

    def __call__(self, x):
        return self.evaluate(np.asarray(x, dtype=float))

    def a_plus(self, x):
        return np.maximum(0.0, self(x))

    def support_margin(self, x):
        """Distance from x to the complement of B_{R_a} (radial support bound)."""
        x = np.asarray(x, dtype=float)
        r = np.abs(x) if self.dimension == 1 else np.sqrt(np.sum(x * x, axis=-1))
        return self.R_a - r


def _norms(x, n):
    x = np.asarray(x, dtype=float)
    if n == 1:
        return np.abs(x)
    return np.sqrt(np.sum(x * x, axis=-1))


def _shell_check(spec, n_radii=64, n_dirs=32):
    """Verify a(x) <= -ell on sampled shells |x| in [R_ell, R_ell + 10]."""
    radii = np.linspace(spec.R_ell, spec.R_ell + 10.0, n_radii)
    if spec.dimension == 1:
        pts = np.concatenate([radii, -radii])
    else:
        ang = np.linspace(0.0, 2 * math.pi, n_dirs, endpoint=False)
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
        pts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
    vals = spec(pts)
    worst = float(np.max(vals))
    if worst > -spec.ell + 1e-12:
        raise ValueError(
            f"hypothesis violated: a = {worst} > -ell = {-spec.ell} on the far shells"
        )


def make_resource(family, params=None, N=1):
    """Construct a validated resource.

    gaussian_bump(A, sigma, delta):  a(x) = A exp(-|x|^2/sigma^2) - delta
    compact_bump(A, r0, delta):      a(x) = A max(0, 1-(|x|/r0)^2) - delta
    two_bumps(A1, r1, c1, A2, r2, c2, delta): sum of two compact bumps - delta
    custom: params must provide evaluate, sup_a_plus, R_a, ell, R_ell, peak.
    """
    params = dict(params or {})
    if N not in (1, 2):
        raise ValueError(f"dimension N must be 1 or 2, got {N}")
    if family not in _FAMILIES:
        raise ValueError(f"unknown resource family {family!r}")

    if family in ("gaussian_bump", "compact_bump"):
        A = float(params["A"])
        delta = float(params["delta"])
        if delta <= 0:
            raise ValueError("delta must be positive (a must be negative at infinity)")
        if A <= delta:
            raise ValueError("need A > delta, otherwise a+ is identically zero")

    if family == "gaussian_bump":
        sigma = float(params.get("sigma", 1.0))
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        A = float(params["A"])
        delta = float(params["delta"])
        ev = lambda x: A * np.exp(-((_norms(x, N) / sigma) ** 2)) - delta
        r_a = sigma * math.sqrt(math.log(A / delta))
        ell = delta / 2.0
        r_ell = sigma * math.sqrt(math.log(2.0 * A / delta))
        spec = ResourceSpec(
            family, params, N, A - delta, r_a, ell, max(r_ell, r_a),
            peak=np.zeros(N) if N == 2 else np.zeros(()),
            evaluate=ev,
            lipschitz=A * math.sqrt(2.0) / sigma * math.exp(-0.5),
            sup_abs=max(A - delta, delta),
        )
    elif family == "compact_bump":
        r0 = float(params.get("r0", 1.0))
        if r0 <= 0:
            raise ValueError("r0 must be positive")
        A = float(params["A"])
        delta = float(params["delta"])
        ev = lambda x: A * np.maximum(0.0, 1.0 - (_norms(x, N) / r0) ** 2) - delta
        r_a = r0 * math.sqrt(1.0 - delta / A)
        spec = ResourceSpec(
            family, params, N, A - delta, r_a, delta, r0,
            peak=np.zeros(N) if N == 2 else np.zeros(()),
            evaluate=ev,
            lipschitz=2.0 * A / r0,
            sup_abs=max(A - delta, delta),
        )
    elif family == "two_bumps":
        A1, r1 = float(params["A1"]), float(params["r1"])
        A2, r2 = float(params["A2"]), float(params["r2"])
        delta = float(params["delta"])
        if delta <= 0:
            raise ValueError("delta must be positive")
        if min(A1, A2, r1, r2) <= 0:
            raise ValueError("bump amplitudes and radii must be positive")
        c1 = np.atleast_1d(np.asarray(params["c1"], dtype=float))
        c2 = np.atleast_1d(np.asarray(params["c2"], dtype=float))
        if c1.shape != (N,) or c2.shape != (N,):
            raise ValueError(f"bump centers must be points in dimension {N}")
        if N == 1:
            c1s, c2s = float(c1[0]), float(c2[0])

            def ev(x):
                x = np.asarray(x, dtype=float)
                b1 = A1 * np.maximum(0.0, 1.0 - ((x - c1s) / r1) ** 2)
                b2 = A2 * np.maximum(0.0, 1.0 - ((x - c2s) / r2) ** 2)
                return b1 + b2 - delta

        else:

            def ev(x):
                x = np.asarray(x, dtype=float)
                d1 = _norms(x - c1, 2)
                d2 = _norms(x - c2, 2)
                b1 = A1 * np.maximum(0.0, 1.0 - (d1 / r1) ** 2)
                b2 = A2 * np.maximum(0.0, 1.0 - (d2 / r2) ** 2)
                return b1 + b2 - delta

        # the maximum of two radial bumps lies on the line through the centers
        ts = np.linspace(-1.2, 2.2, 4001)
        seg = c1[None, :] + ts[:, None] * (c2 - c1)[None, :]
        pts = seg[:, 0] if N == 1 else seg
        vals = ev(pts)
        imax = int(np.argmax(vals))
        sup_ap = float(vals[imax])
        if sup_ap <= 0:
            raise ValueError("a+ is identically zero: bumps never exceed delta")
        peak = seg[imax, 0] if N == 1 else seg[imax]
        r_a = max(
            float(np.linalg.norm(c1)) + r1 * math.sqrt(max(0.0, 1.0 - delta / (A1 + A2))),
            float(np.linalg.norm(c2)) + r2 * math.sqrt(max(0.0, 1.0 - delta / (A1 + A2))),
        )
        r_ell = max(float(np.linalg.norm(c1)) + r1, float(np.linalg.norm(c2)) + r2)
        spec = ResourceSpec(
            family, params, N, sup_ap, r_a, delta, max(r_ell, r_a),
            peak=np.asarray(peak) if N == 2 else np.asarray(peak, dtype=float),
            evaluate=ev,
            lipschitz=2.0 * A1 / r1 + 2.0 * A2 / r2,
            sup_abs=max(sup_ap, delta),
        )
    else:  # custom
        needed = ("evaluate", "sup_a_plus", "R_a", "ell", "R_ell", "sup_abs")
        missing = [k for k in needed if k not in params]
        if missing:
            raise ValueError(f"custom resource missing keys: {missing}")
        spec = ResourceSpec(
            family, params, N,
            float(params["sup_a_plus"]), float(params["R_a"]),
            float(params["ell"]), float(params["R_ell"]),
            peak=np.asarray(params.get("peak", np.zeros(N) if N == 2 else 0.0), dtype=float),
            evaluate=params["evaluate"],
            lipschitz=float(params.get("lipschitz", math.inf)),
            sup_abs=float(params["sup_abs"]),
        )
        if spec.ell <= 0:
            raise ValueError("custom resource needs ell > 0")
        if spec(spec.peak if N == 2 else float(spec.peak)) <= 0:
            raise ValueError("custom resource peak must have a > 0 (a+ not identically 0)")

    if spec.R_ell < spec.R_a:
        raise ValueError("R_ell must be at least R_a")
    _shell_check(spec)
    return spec


def sample(resource, grid):
    """Nodewise evaluation of a on a grid."""
    return Field(grid, resource(grid.nodes))


def sample_plus(resource, grid):
    """Nodewise evaluation of a+ = max(a, 0)."""
    return Field(grid, np.maximum(0.0, resource(grid.nodes)))
