"""Radial dispersal kernels: families, rescaling, moments, tails, discretization.

A kernel is stored through its radial profile ``J0`` with ``J(x) = J0(|x|)``;
all profiles are renormalized to unit mass at construction.  Discrete kernels
carry cell-integrated weights of the rescaled density ``J_eps(z) =
eps^-N J(z/eps)`` on a uniform lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

__all__ = [
    "KernelProfile",
    "DiscreteKernel",
    "make_kernel",
    "moment",
    "truncated_moment",
    "tail_mass",
    "discretize",
]

_FAMILIES = ("uniform_ball", "triangle", "gaussian", "power_tail", "custom")

#: relative tolerance for the adaptive radial quadratures
QUAD_RTOL = 1e-12


def _surface(n):
    """Surface measure of the unit sphere boundary in dimension n (1 or 2)."""
    return 2.0 if n == 1 else 2.0 * math.pi


def _radial_integral(f, lo, hi, breakpoints=()):
    """Adaptive quadrature of ``f`` on [lo, hi], hi possibly infinite.

    Splits at the given breakpoints (kinks, support edges) so the adaptive
    rule only ever sees smooth integrands.
    """
    pts = sorted(p for p in breakpoints if lo < p < (hi if math.isfinite(hi) else math.inf))
    total = 0.0
    left = lo
    for p in pts:
        val, _ = quad(f, left, p, epsabs=1e-300, epsrel=QUAD_RTOL, limit=400)
        total += val
        left = p
    if math.isinf(hi):
        val, _ = quad(f, left, np.inf, epsabs=1e-300, epsrel=QUAD_RTOL, limit=400)
    else:
        val, _ = quad(f, left, hi, epsabs=1e-300, epsrel=QUAD_RTOL, limit=400)
    return total + val


@dataclass(frozen=True)
class KernelProfile:
    """Unit-mass radial dispersal kernel in dimension 1 or 2.

    ``profile(r)`` evaluates the normalized radial density; ``support_radius``
    may be ``inf``; ``tail_exponent`` is the algebraic tail exponent ``alpha``
    (moments of order >= alpha diverge) or ``None`` when every moment is
    finite.
    """

    family: str
    params: dict
    dimension: int
    support_radius: float
    tail_exponent: float | None
    norm: float
    raw_profile: object = field(repr=False)
    breakpoints: tuple = ()

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        return self.norm * np.asarray(self.raw_profile(r), dtype=float)

    def density(self, x):
        """J(x) for points x (shape (..., N) or scalars in 1D)."""
        x = np.asarray(x, dtype=float)
        if self.dimension == 1:
            r = np.abs(x)
        else:
            r = np.sqrt(np.sum(x * x, axis=-1))
        return self.profile(r)


@dataclass(frozen=True)
class DiscreteKernel:
    """Cell-integrated weights of J_eps on a lattice of spacing ``grid_spacing``.

    ``weights`` has shape (2K+1,) in 1D and (2K+1, 2K+1) in 2D, index k
    corresponding to the offset ``(k - K) * grid_spacing``.  The weights sum
    to ``1 - mass_deficit``.
    """

    weights: np.ndarray
    epsilon: float
    grid_spacing: float
    mass_deficit: float
    dimension: int

    @property
    def radius_cells(self):
        return (self.weights.shape[0] - 1) // 2

    def offsets(self):
        """Integer offsets along one axis, -K..K."""
        k = self.radius_cells
        return np.arange(-k, k + 1)

    def to_csv(self, path):
        import csv

        k = self.radius_cells
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.dimension == 1:
                w.writerow(["offset_index", "weight"])
                for i, wi in zip(range(-k, k + 1), self.weights):
                    w.writerow([i, format(wi, ".17g")])
            else:
                w.writerow(["offset_index_x", "offset_index_y", "weight"])
                for i in range(-k, k + 1):
                    for j in range(-k, k + 1):
                        w.writerow([i, j, format(self.weights[i + k, j + k], ".17g")])


def make_kernel(family, params=None, N=1):
    """Construct a unit-mass radial kernel of the given family.

    Families: ``uniform_ball(radius)``, ``triangle(radius)``,
    ``gaussian(sigma)``, ``power_tail(alpha)`` realizing
    ``J(x) = c_a (1+|x|)^-(N+alpha)``, and ``custom`` with keys ``profile``
    (radial callable), ``support_radius`` and optionally ``tail_exponent``.
    """
    params = dict(params or {})
    if N not in (1, 2):
        raise ValueError(f"dimension N must be 1 or 2, got {N}")
    if family not in _FAMILIES:
        raise ValueError(f"unknown kernel family {family!r}")

    if family == "uniform_ball":
        radius = float(params.setdefault("radius", 1.0))
        if radius <= 0:
            raise ValueError("uniform_ball radius must be positive")
        raw = lambda r: np.where(np.asarray(r) <= radius, 1.0, 0.0)
        support, tail, brk = radius, None, (radius,)
    elif family == "triangle":
        radius = float(params.setdefault("radius", 1.0))
        if radius <= 0:
            raise ValueError("triangle radius must be positive")
        raw = lambda r: np.maximum(0.0, 1.0 - np.asarray(r) / radius)
        support, tail, brk = radius, None, (radius,)
    elif family == "gaussian":
        sigma = float(params.setdefault("sigma", 1.0))
        if sigma <= 0:
            raise ValueError("gaussian sigma must be positive")
        raw = lambda r: np.exp(-0.5 * (np.asarray(r) / sigma) ** 2)
        support, tail, brk = math.inf, None, ()
    elif family == "power_tail":
        alpha = float(params.get("alpha", math.nan))
        if not (alpha > 0):
            raise ValueError("power_tail exponent alpha must be positive")
        expo = N + alpha
        raw = lambda r: (1.0 + np.asarray(r)) ** (-expo)
        support, tail, brk = math.inf, alpha, ()
    else:  # custom
        raw = params.get("profile")
        if raw is None or not callable(raw):
            raise ValueError("custom kernel needs a callable params['profile']")
        support = float(params.get("support_radius", math.inf))
        tail = params.get("tail_exponent")
        if math.isinf(support) and tail is None:
            raise ValueError(
                "custom kernel with unbounded support needs params['tail_exponent'] "
                "to certify which moments are finite"
            )
        brk = tuple(params.get("breakpoints", ()))

    sn = _surface(N)
    mass = sn * _radial_integral(lambda r: float(raw(r)) * r ** (N - 1), 0.0, support, brk)
    if not (mass > 0 and math.isfinite(mass)):
        raise ValueError(f"kernel mass is not positive and finite (got {mass})")

    kern = KernelProfile(
        family=family,
        params=params,
        dimension=N,
        support_radius=support,
        tail_exponent=tail,
        norm=1.0 / mass,
        raw_profile=raw,
        breakpoints=brk,
    )
    # construction-time sanity: unit mass within quadrature tolerance
    check = sn * _radial_integral(lambda r: kern.profile(r) * r ** (N - 1), 0.0, support, brk)
    if abs(check - 1.0) > 1e-10:
        raise ValueError(f"renormalization failed, mass = {check}")
    return kern


def moment(kernel, beta):
    """beta-th order moment  M_beta(J) = int J(x) |x|^beta dx.

    Returns ``inf`` when the family metadata certifies divergence
    (power tails with beta >= alpha); divergence is never probed by
    quadrature timeout.
    """
    if beta < 0:
        raise ValueError("moment order beta must be nonnegative")
    if kernel.tail_exponent is not None and beta >= kernel.tail_exponent:
        return math.inf
    n = kernel.dimension
    sn = _surface(n)
    return sn * _radial_integral(
        lambda r: kernel.profile(r) * r ** (beta + n - 1),
        0.0,
        kernel.support_radius,
        kernel.breakpoints,
    )


def truncated_moment(kernel, beta, cutoff):
    """Moment of J restricted to the ball of the given radius (always finite)."""
    if beta < 0:
        raise ValueError("moment order beta must be nonnegative")
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    n = kernel.dimension
    hi = min(cutoff, kernel.support_radius)
    # decade breakpoints keep the adaptive rule honest over huge ranges
    decades = [10.0 ** p for p in range(0, 1 + int(math.log10(max(hi, 1.0))))]
    brk = tuple(kernel.breakpoints) + tuple(d for d in decades if d < hi)
    return _surface(n) * _radial_integral(
        lambda r: kernel.profile(r) * r ** (beta + n - 1), 0.0, hi, brk
    )


def tail_mass(kernel, radius):
    """Mass of J outside the ball of the given radius, in [0, 1]."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if radius >= kernel.support_radius:
        return 0.0
    n = kernel.dimension
    if kernel.family == "power_tail":
        # closed form: c int_L^inf (1+r)^-(N+alpha) r^(N-1) dr
        a = kernel.tail_exponent
        L1 = 1.0 + radius
        if n == 1:
            val = _surface(1) * kernel.norm * L1 ** (-a) / a
        else:
            val = _surface(2) * kernel.norm * (
                L1 ** (-a) / a - L1 ** (-(1.0 + a)) / (1.0 + a)
            )
        return min(max(val, 0.0), 1.0)
    val = _surface(n) * _radial_integral(
        lambda r: kernel.profile(r) * r ** (n - 1),
        radius,
        kernel.support_radius,
        kernel.breakpoints,
    )
    return min(max(val, 0.0), 1.0)


# ---------------------------------------------------------------------------
# discretization


def _cell_integral_1d(kernel, epsilon, lo, hi):
    """Integral of J_eps over the 1D cell [lo, hi]."""
    sup = kernel.support_radius * epsilon
    a, b = max(lo, -sup), min(hi, sup)
    if a >= b:
        return 0.0
    brk = [s * epsilon * r for r in kernel.breakpoints for s in (-1.0, 1.0)]
    brk.append(0.0)
    f = lambda z: kernel.profile(abs(z) / epsilon) / epsilon
    return _radial_integral(f, a, b, [p for p in brk if a < p < b])


_GL8_X, _GL8_W = np.polynomial.legendre.leggauss(8)


def _gl2d(f, x0, x1, y0, y1):
    xm, xr = 0.5 * (x0 + x1), 0.5 * (x1 - x0)
    ym, yr = 0.5 * (y0 + y1), 0.5 * (y1 - y0)
    gx = xm + xr * _GL8_X
    gy = ym + yr * _GL8_X
    vals = f(gx[:, None], gy[None, :])
    return xr * yr * float(np.sum(_GL8_W[:, None] * _GL8_W[None, :] * vals))


def _adaptive_cell_2d(f, x0, x1, y0, y1, tol, depth=12):
    coarse = _gl2d(f, x0, x1, y0, y1)
    xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    quads = (
        (x0, xm, y0, ym),
        (xm, x1, y0, ym),
        (x0, xm, ym, y1),
        (xm, x1, ym, y1),
    )
    fine = sum(_gl2d(f, *q) for q in quads)
    if depth == 0 or abs(fine - coarse) <= tol:
        return fine
    return sum(_adaptive_cell_2d(f, *q, tol / 4.0, depth - 1) for q in quads)


def _disk_slab_area(radius, x0, x1, y0, y1):
    """Exact area of [x0,x1] x [y0,y1] intersected with the disk |x| <= radius.

    Used for jump-discontinuous (uniform) profiles where adaptive quadrature
    of the indicator converges too slowly.
    """
    r = radius
    x0, x1 = max(x0, -r), min(x1, r)
    if x0 >= x1:
        return 0.0

    def anti(x):
        x = min(max(x, -r), r)
        return 0.5 * (x * math.sqrt(max(r * r - x * x, 0.0)) + r * r * math.asin(x / r))

    cuts = {x0, x1}
    for yc in (abs(y0), abs(y1)):
        if yc < r:
            xc = math.sqrt(r * r - yc * yc)
            for s in (-xc, xc):
                if x0 < s < x1:
                    cuts.add(s)
    xs = sorted(cuts)
    area = 0.0
    for a, b in zip(xs[:-1], xs[1:]):
        xm = 0.5 * (a + b)
        g = math.sqrt(max(r * r - xm * xm, 0.0))
        if min(y1, g) <= max(y0, -g):
            continue
        # integrate (top - bot) over [a, b]; each side is constant or +-g(x)
        val = 0.0
        if g < y1:  # top = g(x)
            val += anti(b) - anti(a)
        else:
            val += y1 * (b - a)
        if -g > y0:  # bot = -g(x)
            val += anti(b) - anti(a)
        else:
            val += -y0 * (b - a)
        area += val
    return area


def _cell_integral_2d(kernel, epsilon, x0, x1, y0, y1, tol):
    sup = kernel.support_radius * epsilon
    dx = 0.0 if x0 <= 0.0 <= x1 else min(abs(x0), abs(x1))
    dy = 0.0 if y0 <= 0.0 <= y1 else min(abs(y0), abs(y1))
    if math.hypot(dx, dy) >= sup:
        return 0.0
    if kernel.family == "uniform_ball":
        dens = kernel.profile(0.0) / epsilon**2
        return dens * _disk_slab_area(sup, x0, x1, y0, y1)
    f = lambda gx, gy: kernel.profile(np.hypot(gx, gy) / epsilon) / epsilon**2
    return _adaptive_cell_2d(f, x0, x1, y0, y1, tol)


def discretize(kernel, epsilon, grid_spacing, cutoff_radius=None):
    """Cell-integrated discrete kernel for J_eps on a lattice of the given spacing.

    Each weight is the integral of J_eps over its cell; the stencil covers the
    ball of ``cutoff_radius`` (default: the exact support for compactly
    supported kernels, 8*eps otherwise) and the weights are renormalized so
    their total equals the analytic mass inside the cutoff.  The lost tail is
    reported as ``mass_deficit``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if grid_spacing <= 0:
        raise ValueError("grid_spacing must be positive")
    core = epsilon * min(1.0, kernel.support_radius)
    if core / grid_spacing < 4.0 - 1e-9:
        raise ValueError(
            f"grid too coarse to resolve the kernel: {core / grid_spacing:.3g} cells "
            f"across the core, need at least 4"
        )
    compact = math.isfinite(kernel.support_radius)
    if cutoff_radius is None:
        cutoff_radius = kernel.support_radius * epsilon if compact else 8.0 * epsilon
    if not compact and cutoff_radius < 5.0 * epsilon:
        raise ValueError("cutoff_radius must be at least 5*epsilon for unbounded kernels")

    h = float(grid_spacing)
    n = kernel.dimension
    K = int(math.floor(cutoff_radius / h + 1e-12)) + 1
    deficit = tail_mass(kernel, cutoff_radius / epsilon)
    inside = 1.0 - deficit

    if n == 1:
        w = np.zeros(2 * K + 1)
        for k in range(0, K + 1):
            c = k * h
            if c - 0.5 * h > cutoff_radius:
                continue
            w[K + k] = _cell_integral_1d(kernel, epsilon, c - 0.5 * h, c + 0.5 * h)
        w[:K] = w[: K : -1]  # mirror negative offsets for exact evenness
    else:
        w = np.zeros((2 * K + 1, 2 * K + 1))
        tol = 1e-13 * max(h * h * kernel.profile(0.0) / epsilon**2, 1e-30)
        for i in range(0, K + 1):
            for j in range(0, i + 1):
                cx, cy = i * h, j * h
                if math.hypot(max(cx - 0.5 * h, 0.0), max(cy - 0.5 * h, 0.0)) > cutoff_radius:
                    continue
                v = _cell_integral_2d(
                    kernel, epsilon, cx - 0.5 * h, cx + 0.5 * h, cy - 0.5 * h, cy + 0.5 * h, tol
                )
                for si in (-i, i):
                    for sj in (-j, j):
                        w[K + si, K + sj] = v
                        w[K + sj, K + si] = v

    np.clip(w, 0.0, None, out=w)
    total = w.sum()
    if total <= 0:
        raise ValueError("discretization produced an empty stencil")
    w *= inside / total

    # trim all-zero border rings so compact kernels get their natural stencil
    while K > 0:
        if n == 1:
            edge = w[0] == 0.0 and w[-1] == 0.0
        else:
            edge = (
                not w[0].any() and not w[-1].any() and not w[:, 0].any() and not w[:, -1].any()
            )
        if not edge:
            break
        w = w[1:-1] if n == 1 else w[1:-1, 1:-1]
        K -= 1

    return DiscreteKernel(
        weights=w,
        epsilon=float(epsilon),
        grid_spacing=h,
        mass_deficit=float(deficit),
        dimension=n,
    )
