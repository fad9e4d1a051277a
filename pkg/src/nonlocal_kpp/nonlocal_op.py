"""Truncated nonlocal operator M_{R,eps,m} and related forms on grid fields.

The operator value at a node x is ``eps^-m (sum_y w(x-y) phi(y) - phi(x))``
with the sum running over grid nodes only; fields are implicitly extended by
zero, so this coincides with the full-space operator applied to the
zero-extended field.  The ``-phi(x)`` term always carries full weight, so
nodes near the boundary feel the mass leaking out of the ball.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import fft as sfft

from .grid import Field, same_grid
from .kernel import _adaptive_cell_2d, _disk_slab_area, _radial_integral, moment

__all__ = [
    "OperatorHandle",
    "apply",
    "kpp_residual",
    "second_difference_form",
    "second_difference_field",
]

_DIRECT_COST_LIMIT = 2_000_000  # node*stencil products below this stay direct


def _convolve_1d(values, weights, mode, cache):
    if mode == "direct":
        return np.convolve(values, weights, mode="same")
    key = (values.shape[0], weights.shape[0])
    if cache.get("key") != key:
        L = sfft.next_fast_len(values.shape[0] + weights.shape[0] - 1)
        cache.update(key=key, L=L, wf=sfft.rfft(weights, L))
    k = (weights.shape[0] - 1) // 2
    full = sfft.irfft(sfft.rfft(values, cache["L"]) * cache["wf"], cache["L"])
    return full[k : k + values.shape[0]]


def _convolve_2d(box, weights, mode, cache):
    side = box.shape[0]
    k = (weights.shape[0] - 1) // 2
    if mode == "direct":
        out = np.zeros_like(box)
        for di in range(-k, k + 1):
            for dj in range(-k, k + 1):
                wij = weights[di + k, dj + k]
                if wij == 0.0:
                    continue
                t0, t1 = max(0, di), side + min(0, di)
                u0, u1 = max(0, dj), side + min(0, dj)
                out[t0:t1, u0:u1] += wij * box[t0 - di : t1 - di, u0 - dj : u1 - dj]
        return out
    key = (box.shape, weights.shape)
    if cache.get("key") != key:
        L0 = sfft.next_fast_len(side + weights.shape[0] - 1)
        L1 = sfft.next_fast_len(box.shape[1] + weights.shape[1] - 1)
        cache.update(key=key, L=(L0, L1), wf=sfft.rfft2(weights, s=(L0, L1)))
    full = sfft.irfft2(sfft.rfft2(box, s=cache["L"]) * cache["wf"], s=cache["L"])
    return full[k : k + side, k : k + box.shape[1]]


def _lattice_convolve(grid, weights, values, mode, cache, emb=None, side=None):
    """sum_y w(x-y) v(y) over grid nodes, zero extension outside the ball."""
    if grid.dimension == 1:
        return _convolve_1d(values, weights, mode, cache)
    box = np.zeros(side * side)
    box[emb] = values
    conv = _convolve_2d(box.reshape(side, side), weights, mode, cache)
    return conv.reshape(-1)[emb]


class OperatorHandle:
    """Discrete truncated nonlocal operator bound to one grid and kernel.

    ``application_mode`` is ``direct`` (plain summation, the correctness
    reference), ``fft`` (zero-padded transform, the performance path) or
    ``auto`` (deterministic size-based choice).
    """

    def __init__(self, discrete_kernel, grid, m, application_mode="auto", kernel=None):
        if discrete_kernel.dimension != grid.dimension:
            raise ValueError("kernel and grid dimensions differ")
        if abs(discrete_kernel.grid_spacing - grid.spacing) > 1e-12 * grid.spacing:
            raise ValueError("kernel was discretized for a different grid spacing")
        if not (0.0 <= m <= 2.0):
            raise ValueError("cost exponent m must lie in [0, 2]")
        if application_mode not in ("direct", "fft", "auto"):
            raise ValueError(f"unknown application mode {application_mode!r}")
        self.discrete_kernel = discrete_kernel
        self.grid = grid
        self.epsilon = discrete_kernel.epsilon
        self.m = float(m)
        self.kernel = kernel  # analytic profile, needed only by the mollifier form
        k = discrete_kernel.radius_cells
        stencil = (2 * k + 1) ** grid.dimension
        if application_mode == "auto":
            application_mode = (
                "direct" if grid.n_nodes * stencil <= _DIRECT_COST_LIMIT else "fft"
            )
        self.application_mode = application_mode
        self._emb = grid.embed_indices() if grid.dimension == 2 else None
        self._side = 2 * grid.box_halfwidth() + 1 if grid.dimension == 2 else None
        self._cache = {}
        self._rho_cache = {}
        self._inside_mass = None

    def convolve_values(self, values, weights=None, cache=None):
        w = self.discrete_kernel.weights if weights is None else weights
        c = self._cache if cache is None else cache
        return _lattice_convolve(
            self.grid, w, values, self.application_mode, c, self._emb, self._side
        )

    def inside_mass(self):
        """Field of sum_y w(x-y) over grid nodes; 1 - deficit - leakage at x."""
        if self._inside_mass is None:
            self._inside_mass = self.convolve_values(np.ones(self.grid.n_nodes))
        return Field(self.grid, self._inside_mass.copy())


def apply(op, phi):
    """M[phi](x) = eps^-m (sum_y w(x-y) phi(y) - phi(x))."""
    if not same_grid(phi.grid, op.grid):
        raise ValueError("field lives on a different grid than the operator")
    conv = op.convolve_values(phi.values)
    scale = op.epsilon ** (-op.m)
    return Field(op.grid, scale * (conv - phi.values))


def kpp_residual(op, u, a):
    """M[u] + u (a - u), the stationary equation's left side."""
    if not same_grid(u.grid, op.grid):
        raise ValueError("u lives on a different grid than the operator")
    if not same_grid(a.grid, u.grid):
        raise ValueError("u and a live on different grids")
    out = apply(op, u)
    out.values += u.values * (a.values - u.values)
    return out


# -- second-difference (mollifier) form --------------------------------------


def _rho_weight_table(op):
    """Cell integrals of (M_m/2) rho_eps(y) / |y|^m, zero at the center cell.

    rho is the mollifier J(y)|y|^m / M_m(J); the table is integrated from
    that expression as written (no symbolic cancellation), so it is an
    independent numerical route to the operator kernel.
    """
    if "tab" in op._rho_cache:
        return op._rho_cache["tab"]
    if op.kernel is None:
        raise ValueError("operator needs the analytic kernel for the mollifier form")
    kern, eps, m = op.kernel, op.epsilon, op.m
    if m >= 2.0:
        raise ValueError("second-difference form requires m < 2")
    mm = moment(kern, m)
    if not math.isfinite(mm):
        raise ValueError("second-difference form requires a finite m-th moment")
    dk = op.discrete_kernel
    h, K, n = dk.grid_spacing, dk.radius_cells, dk.dimension

    def g(r):  # (M_m/2) * rho_eps(r) / r^m, radial
        z = np.asarray(r) / eps
        return (mm / 2.0) * (kern.profile(z) * z**m / mm / eps**n) / np.asarray(r) ** m

    sup = kern.support_radius * eps
    if n == 1:
        tab = np.zeros(2 * K + 1)
        brk = [eps * b for b in kern.breakpoints]
        for k in range(1, K + 1):
            lo, hi = (k - 0.5) * h, min((k + 0.5) * h, sup)
            if hi <= lo:
                continue
            tab[K + k] = _radial_integral(lambda y: float(g(abs(y))), lo, hi, brk)
        tab[:K] = tab[:K:-1]
    else:
        tab = np.zeros((2 * K + 1, 2 * K + 1))
        const_g = float(g(eps)) if kern.family == "uniform_ball" else None
        f2 = lambda gx, gy: g(np.hypot(gx, gy))
        tol = 1e-14 * max(float(g(max(h, 1e-6 * eps))) * h * h, 1e-30)
        for i in range(0, K + 1):
            for j in range(0, i + 1):
                if i == 0 and j == 0:
                    continue
                dx, dy = max((i - 0.5) * h, 0.0), max((j - 0.5) * h, 0.0)
                if math.hypot(dx, dy) >= sup:
                    continue
                x0, x1 = i * h - 0.5 * h, i * h + 0.5 * h
                y0, y1 = j * h - 0.5 * h, j * h + 0.5 * h
                if const_g is not None:
                    v = const_g * _disk_slab_area(sup, x0, x1, y0, y1)
                else:
                    v = _adaptive_cell_2d(f2, x0, x1, y0, y1, tol)
                for si in {-i, i}:
                    for sj in {-j, j}:
                        tab[K + si, K + sj] = v
                        tab[K + sj, K + si] = v
    op._rho_cache["tab"] = tab
    return tab


def second_difference_field(op, u):
    """(M_m/2) sum_y rho_eps(y) [u(x+y) - 2u(x) + u(x-y)] / |y|^m at all nodes."""
    if not same_grid(u.grid, op.grid):
        raise ValueError("field lives on a different grid than the operator")
    tab = _rho_weight_table(op)
    conv = op.convolve_values(u.values, weights=tab, cache=op._rho_cache.setdefault("c", {}))
    total = float(tab.sum())
    return Field(op.grid, 2.0 * (conv - total * u.values))


def second_difference_form(op, u, node_index):
    """The mollifier form at one node; agrees with apply() at interior nodes."""
    return float(second_difference_field(op, u).values[node_index])
