"""Explicit sub- and super-solutions and their numerical certification.

The sub-solution is a smooth cap convolved with a compactly supported,
radially decreasing, unit-mass profile that is subharmonic outside a core
ball; certification evaluates the full-space residual of the stationary
equation on a kernel-resolving grid for a descending list of dispersal
ranges.  The super-solution is a plateau with an algebraic power tail whose
flatness (tau) and plateau radius are searched geometrically until the
residual has the right sign everywhere.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._piecewise import PiecewisePoly
from .grid import Field, make_grid
from .kernel import discretize, moment, tail_mass
from .nonlocal_op import OperatorHandle, kpp_residual

__all__ = [
    "psi",
    "psi_laplacian",
    "PhiProfile",
    "build_phi",
    "SubSolutionSpec",
    "build_subsolution",
    "SubsolutionValidation",
    "validate_subsolution",
    "SuperSolutionSpec",
    "build_supersolution",
]

VALIDATION_MAX_NODES = 40_000_000
_GL32_X, _GL32_W = np.polynomial.legendre.leggauss(32)
_GL24_X, _GL24_W = np.polynomial.legendre.leggauss(24)


def psi(r):
    """Cubic cap profile max{(1-r)^3, 0}."""
    r = np.asarray(r, dtype=float)
    out = np.maximum(0.0, (1.0 - r) ** 3)
    return float(out) if out.ndim == 0 else out


def psi_laplacian(x, N=None):
    """Laplacian of Psi(x) = psi(|x|): 3(1-|x|)(2 - (N-1)(1-|x|)/|x|) on (0, 1].

    ``x`` is a point (array-like); for a scalar radius pass ``N`` explicitly.
    Nonnegative for |x| >= (N-1)/(N+1), which is what makes the cap
    subharmonic outside the core.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        r, n = abs(float(x)), (N if N is not None else 1)
    else:
        r, n = float(np.sqrt(np.sum(x * x))), (N if N is not None else x.size)
    if r == 0.0:
        raise ValueError("the Laplacian formula needs x != 0")
    if r > 1.0:
        return 0.0
    return 3.0 * (1.0 - r) * (2.0 - (n - 1) * (1.0 - r) / r)


@dataclass(frozen=True)
class PhiProfile:
    """Unit-mass radial profile, constant on the core ball, cubic outside.

    Subharmonic outside the closed core ball of radius kappa; supported in
    the unit ball.
    """

    dimension: int
    kappa: float
    C: float
    radial: PiecewisePoly

    def __call__(self, r):
        return self.radial(np.abs(np.asarray(r, dtype=float)))

    def mass(self):
        surf = 2.0 if self.dimension == 1 else 2.0 * math.pi
        return surf * self.radial.integral(weight_power=self.dimension - 1)


def build_phi(N):
    """The capped cubic bump phi = C min{psi(|x|), psi(kappa)} with unit mass."""
    if N not in (1, 2):
        raise ValueError("dimension must be 1 or 2")
    kappa = max(0.5, (N - 1) / (N + 1))
    cap = psi(kappa)
    raw = PiecewisePoly.fit(
        [0.0, kappa, 1.0],
        lambda r: np.minimum((1.0 - np.minimum(r, 1.0)) ** 3, cap),
        3,
    )
    surf = 2.0 if N == 1 else 2.0 * math.pi
    mass = surf * raw.integral(weight_power=N - 1)
    C = 1.0 / mass
    return PhiProfile(dimension=N, kappa=kappa, C=C, radial=raw.scale(C))


# ---------------------------------------------------------------------------
# sub-solution


@dataclass
class SubSolutionSpec:
    """Construction record for one sub-solution cap.

    ``profile`` maps |x - z| to the sub-solution value (exact piecewise
    polynomial in 1D, quadrature table in 2D); ``eps_threshold`` is filled in
    by validation.
    """

    z: np.ndarray
    theta: float
    R_loc: float
    kappa: float
    C_kappa: float
    eta0: float
    a_plus_at_z: float
    support_radius: float
    dimension: int
    profile: object = field(repr=False)
    eta_profile: object = field(repr=False)
    eps_threshold: float | None = None

    def field_on(self, grid, center=None):
        """Sample the sub-solution on a grid (grid coordinates around ``center``)."""
        z = self.z if center is None else np.asarray(center, dtype=float)
        x = grid.nodes
        if grid.dimension == 1:
            r = np.abs(x - float(z))
        else:
            r = np.sqrt(np.sum((x - z) ** 2, axis=1))
        return Field(grid, self.profile(r))


def _min_a_on_ball(resource, z, rho):
    """min of a over the closed ball B_rho(z), using radial structure when exact."""
    n = resource.dimension
    if resource.family in ("gaussian_bump", "compact_bump"):
        zr = abs(float(z)) if n == 1 else float(np.linalg.norm(z))
        far = zr + rho
        pt = far if n == 1 else np.array([far, 0.0])
        return float(resource(pt))
    if n == 1:
        pts = float(z) + np.linspace(-rho, rho, 2049)
        return float(np.min(resource(pts)))
    radii = np.linspace(0.0, rho, 33)
    ang = np.linspace(0.0, 2 * math.pi, 64, endpoint=False)
    dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    pts = (z[None, None, :] + radii[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
    return float(np.min(resource(pts)))


def _locality_radius(resource, z, theta, a_z):
    """Largest R with (1 - theta/4) a+(z) <= a+ on the ball of radius 2R around z."""
    target = (1.0 - theta / 4.0) * a_z
    lo = 0.0
    hi = resource.R_a / 2.0
    # shrink hi until it is invalid or accept it outright
    if _min_a_on_ball(resource, z, 2.0 * hi) >= target:
        return hi * (1.0 - 1e-12)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _min_a_on_ball(resource, z, 2.0 * mid) >= target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(resource.R_a, 1.0):
            break
    if lo <= 0.0:
        raise ValueError("could not find a positive locality radius at z")
    return lo * (1.0 - 1e-12)


def _circle_integral(eta, s, rho):
    """int_0^{2pi} eta(sqrt(s^2 + rho^2 - 2 s rho cos t)) dt, panel-exact.

    Substituting u = d^2 turns the angular integral into
    int eta(sqrt(u)) / sqrt((u - dmin^2)(dmax^2 - u)) du, whose endpoint
    singularities are removed per-panel by square-root substitutions.
    """
    if s < 1e-13 or rho < 1e-13:
        return 2.0 * math.pi * float(eta(np.array([max(s, rho)])))
    dmin, dmax = abs(s - rho), s + rho
    u0, u1 = dmin * dmin, dmax * dmax
    cuts = {u0, u1}
    for rb in eta.breaks:
        if dmin < rb < dmax:
            cuts.add(float(rb) * float(rb))
    us = sorted(cuts)
    total = 0.0
    for p, q in zip(us[:-1], us[1:]):
        if q - p <= 1e-15 * u1:
            continue
        sub = []
        if p == u0 and q == u1:
            mid = 0.5 * (p + q)
            sub = [(p, mid, "lo"), (mid, q, "hi")]
        elif p == u0:
            sub = [(p, q, "lo")]
        elif q == u1:
            sub = [(p, q, "hi")]
        else:
            sub = [(p, q, "mid")]
        for a, b, kind in sub:
            if kind == "lo":
                vmax = math.sqrt(b - u0)
                v = 0.5 * vmax * (_GL32_X + 1.0)
                u = u0 + v * v
                w = 0.5 * vmax * _GL32_W * 2.0 / np.sqrt(u1 - u)
            elif kind == "hi":
                vmax = math.sqrt(b - a)
                v = 0.5 * vmax * (_GL32_X + 1.0)
                u = u1 - v * v
                w = 0.5 * vmax * _GL32_W * 2.0 / np.sqrt(u - u0)
            else:
                u = 0.5 * (b + a) + 0.5 * (b - a) * _GL32_X
                w = 0.5 * (b - a) * _GL32_W / np.sqrt((u - u0) * (u1 - u))
            total += float(np.dot(w, eta(np.sqrt(u))))
    return 2.0 * total


def _radial_convolution_2d(eta, phi_scaled, R_loc, degree=48):
    """Radial profile of eta * phi as a piecewise-Chebyshev polynomial (2D).

    The profile is analytic between the tangency radii |a +- b| of the two
    factors' breakpoints, so a per-piece Chebyshev fit of the quadrature
    values is spectrally accurate.
    """
    half = phi_scaled.hi  # = R_loc / 2
    support = 1.5 * R_loc

    rho_cuts = set(float(b) for b in phi_scaled.breaks if 0.0 <= b <= half)

    # quintic smoothstep substitution: the Jacobian vanishes quadratically at
    # panel ends, taming the |rho - rho*|^(3/2) behavior at tangency radii
    t = 0.5 + 0.5 * _GL24_X
    s5 = t**3 * (10.0 - 15.0 * t + 6.0 * t**2)
    ds5 = 30.0 * t**2 * (1.0 - t) ** 2

    def value(s):
        cuts = set(rho_cuts)
        for rb in eta.breaks:
            for cand in (abs(s - rb), s + rb):
                if 0.0 < cand < half:
                    cuts.add(float(cand))
        rs = sorted(cuts | {0.0, half})
        acc = 0.0
        for a, b in zip(rs[:-1], rs[1:]):
            if b - a <= 1e-15 * half:
                continue
            rho = a + (b - a) * s5
            w = 0.5 * (b - a) * _GL24_W * ds5
            vals = np.array([_circle_integral(eta, s, r) for r in rho])
            acc += float(np.dot(w, phi_scaled(rho) * rho * vals))
        return acc

    combos = set()
    for a in {0.0} | {float(b) for b in phi_scaled.breaks if b >= 0}:
        for b in {0.0} | {float(c) for c in eta.breaks if c >= 0}:
            for cand in (abs(a - b), a + b):
                if 0.0 <= cand <= support + 1e-15:
                    combos.add(round(cand, 14))
    breaks = sorted(combos | {0.0, support})
    merged = [breaks[0]]
    for b in breaks[1:]:
        if b - merged[-1] > 1e-10 * support:
            merged.append(b)
    merged[-1] = support
    return PiecewisePoly.fit(merged, np.vectorize(value), degree)


def build_subsolution(resource, z, theta, grid):
    """Cap-convolution sub-solution centered at z in supp(a+).

    Returns the sampled field on ``grid`` together with the construction
    record.  The cap height is (1 - 3 theta/4) a+(z), strictly between the
    required bounds, so the center value exceeds (1 - theta) a+(z) with
    margin theta/4 a+(z).
    """
    n = resource.dimension
    if grid.dimension != n:
        raise ValueError("grid and resource dimensions differ")
    if not (0.0 < theta < 1.0):
        raise ValueError("theta must lie in (0, 1)")
    z = np.asarray(z, dtype=float)
    if n == 2 and z.shape != (2,):
        raise ValueError("z must be a point in the plane")
    a_z = float(resource(z if n == 2 else float(z)))
    if a_z <= 0.0:
        raise ValueError("z must lie in the support of a+ (a(z) > 0)")

    R = _locality_radius(resource, z, theta, a_z)
    if grid.spacing > R / 16.0 + 1e-15:
        raise ValueError(
            f"grid too coarse for the cap: h = {grid.spacing:.3g} but the bump "
            f"needs h <= R_loc/16 = {R / 16.0:.3g}"
        )

    eta0 = (1.0 - 0.75 * theta) * a_z
    half = R / 2.0

    def eta_func(r):
        t = np.clip((np.asarray(r, dtype=float) - half) / half, 0.0, 1.0)
        ramp = 1.0 - 3.0 * t**2 + 2.0 * t**3
        return eta0 * ramp

    eta = PiecewisePoly.fit([0.0, half, R], eta_func, 3)

    phi = build_phi(n)
    phi_scaled = PiecewisePoly(phi.radial.breaks * half, phi.radial.cheb).scale(
        (1.0 / half) ** n
    )

    if n == 1:
        # the even convolution evaluates radially as-is
        profile = eta.even_reflection().convolve(phi_scaled.even_reflection())
    else:
        profile = _radial_convolution_2d(eta, phi_scaled, R)

    spec = SubSolutionSpec(
        z=z,
        theta=float(theta),
        R_loc=float(R),
        kappa=phi.kappa,
        C_kappa=phi.C,
        eta0=eta0,
        a_plus_at_z=a_z,
        support_radius=1.5 * R,
        dimension=n,
        profile=profile,
        eta_profile=eta,
    )

    fld = spec.field_on(grid)
    # postconditions on the grid
    center_val = float(spec.profile(np.zeros(1))[0])
    if center_val < (1.0 - theta) * a_z:
        raise AssertionError("sub-solution lost its center bound")
    ap = np.maximum(0.0, resource(grid.nodes))
    on_supp = fld.values > 0.0
    if np.any(fld.values[on_supp] >= ap[on_supp]):
        raise AssertionError("sub-solution is not strictly below a+ on its support")
    return fld, spec


# ---------------------------------------------------------------------------
# validation


@dataclass
class SubsolutionValidation:
    """Per-epsilon residual audit of a sub-solution."""

    entries: list
    eps_threshold: float | None
    tol_sub: float

    def to_json_dict(self):
        return {
            "eps_threshold": self.eps_threshold,
            "tol_sub": self.tol_sub,
            "entries": self.entries,
        }


def _tail_budget_cutoff(kernel, m, eps, slack, cap=256.0):
    """Smallest stencil cutoff with eps^-m tail mass below the slack budget."""
    if math.isfinite(kernel.support_radius):
        return kernel.support_radius * eps
    L = 8.0 * eps
    scale = eps ** (-m)
    while L < cap and scale * tail_mass(kernel, L / eps) > slack:
        L *= 2.0
    return min(L, cap)


def _validate_one(spec, resource, kernel, m, eps, tol, max_nodes):
    a_z = spec.a_plus_at_z
    slack_budget = (spec.theta / 16.0) * a_z
    cutoff = _tail_budget_cutoff(kernel, m, eps, slack_budget)
    h = min(eps / 4.0, spec.R_loc / 16.0)
    r_target = spec.support_radius + cutoff + 2.0 * h
    ncell = int(math.ceil(r_target / h))
    n = spec.dimension
    n_est = (2 * ncell + 1) ** n
    if n_est > max_nodes:
        return None
    grid = make_grid(n, ncell * h, h, max_nodes=max_nodes + 1)
    dk = discretize(kernel, eps, h, cutoff_radius=cutoff)
    # the direct path keeps rounding local to each stencil window, which the
    # eps^-m amplification near the support edge requires; fft's global
    # |u|_inf * machine-eps noise floor would swamp the tolerance there
    stencil = (2 * dk.radius_cells + 1) ** n
    mode = "direct" if stencil <= 64**n else "fft"
    op = OperatorHandle(dk, grid, m, application_mode=mode, kernel=kernel)
    u = spec.field_on(grid, center=np.zeros(n) if n == 2 else 0.0)
    shifted = grid.nodes + (spec.z if n == 2 else float(spec.z))
    a_field = Field(grid, resource(shifted))
    res = kpp_residual(op, u, a_field)
    imin = int(np.argmin(res.values))
    min_res = float(res.values[imin])
    slack = (spec.theta / 8.0) * a_z * float(u.values[imin])
    return {
        "eps": eps,
        "min_residual": min_res,
        "predicted_slack": slack,
        "passed": bool(min_res >= -tol),
        "grid_nodes": grid.n_nodes,
        "cutoff_radius": cutoff,
        "mass_deficit": dk.mass_deficit,
    }


def validate_subsolution(
    spec, resource, kernel, m, eps_list, tol_sub=None, threads=1, max_nodes=VALIDATION_MAX_NODES
):
    """Evaluate the full-space residual of the sub-solution for each epsilon.

    Returns the audit with ``eps_threshold`` the largest epsilon such that it
    and every smaller evaluated epsilon meet ``min_residual >= -tol_sub``
    (default ``1e-8 ||a+||_inf``).  An empty validated set is a legitimate
    outcome for heavy-tailed kernels.
    """
    if not (0.0 <= m < 2.0):
        raise ValueError("validation requires 0 <= m < 2")
    eps_sorted = sorted(set(float(e) for e in eps_list), reverse=True)
    if tol_sub is None:
        tol_sub = 1e-8 * resource.sup_a_plus

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(
                ex.map(
                    lambda e: _validate_one(spec, resource, kernel, m, e, tol_sub, max_nodes),
                    eps_sorted,
                )
            )
    else:
        results = [
            _validate_one(spec, resource, kernel, m, e, tol_sub, max_nodes)
            for e in eps_sorted
        ]

    entries = [r for r in results if r is not None]
    threshold = None
    for i, ent in enumerate(entries):
        if ent["passed"] and all(e["passed"] for e in entries[i:]):
            threshold = ent["eps"]
            break
    spec.eps_threshold = threshold
    return SubsolutionValidation(entries=entries, eps_threshold=threshold, tol_sub=tol_sub)


# ---------------------------------------------------------------------------
# super-solution


@dataclass
class SuperSolutionSpec:
    """Plateau-with-power-tail super-solution parameters."""

    beta: float
    tau: float
    R_sup: float
    C_tau_R: float
    C_eps_beta: float
    ell: float
    plateau: float
    epsilon: float
    m: float
    dimension: int
    converged: bool
    candidates_tried: int

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        tail = self.C_tau_R * self.tau / (1.0 + self.tau * r**self.beta)
        return np.where(r <= self.R_sup, self.plateau, tail)

    def field_on(self, grid):
        return Field(grid, self.radial(grid.radii()))


def _analytic_convolution(dk, grid, radial):
    """sum_k w_k f(x + y_k) with f evaluated analytically (no zero extension)."""
    h, K = dk.grid_spacing, dk.radius_cells
    if grid.dimension == 1:
        xs = grid.nodes
        acc = np.zeros_like(xs)
        for k in range(-K, K + 1):
            w = dk.weights[k + K]
            if w == 0.0:
                continue
            acc += w * radial(np.abs(xs + k * h))
        return acc
    xs, ys = grid.nodes[:, 0], grid.nodes[:, 1]
    acc = np.zeros_like(xs)
    for di in range(-K, K + 1):
        row = dk.weights[di + K]
        xi = xs + di * h
        for dj in range(-K, K + 1):
            w = row[dj + K]
            if w == 0.0:
                continue
            acc += w * radial(np.hypot(xi, ys + dj * h))
    return acc


def build_supersolution(
    resource,
    kernel,
    m,
    beta,
    epsilon,
    grid_extended=None,
    tol_sup=None,
    tau_steps=16,
    R_steps=7,
    max_nodes=VALIDATION_MAX_NODES,
):
    """Search tau (down) and the plateau radius (up) for a verified super-solution.

    The accepted pair must give residual <= tol_sup on the check grid and
    residual <= -ell/2 * ubar + tol_sup outside the plateau.  The plateau
    value is ||a+||_inf by construction, so ubar >= a+ holds everywhere.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not math.isfinite(moment(kernel, beta)):
        raise ValueError("kernel must have a finite beta-th moment")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if tol_sup is None:
        tol_sup = 1e-8 * resource.sup_a_plus

    sup_ap = resource.sup_a_plus
    ell = resource.ell
    R0 = max(resource.R_ell, resource.R_a, 1.0)
    eps = float(epsilon)
    n = resource.dimension
    cutoff = (
        kernel.support_radius * eps
        if math.isfinite(kernel.support_radius)
        else max(8.0 * eps, _tail_budget_cutoff(kernel, m, eps, ell / 8.0))
    )
    h = eps / 4.0
    scale = eps ** (-m)

    tried = 0
    best = None
    for level in range(tau_steps + R_steps):
        for i_r in range(0, min(level, R_steps - 1) + 1):
            i_tau = level - i_r
            if i_tau >= tau_steps:
                continue
            tau = 2.0 ** (-(1 + i_tau))
            R_sup = R0 * 2.0**i_r
            C = (1.0 / tau + R_sup**beta) * sup_ap
            spec = SuperSolutionSpec(
                beta=float(beta), tau=tau, R_sup=R_sup, C_tau_R=C, C_eps_beta=C,
                ell=ell, plateau=sup_ap, epsilon=eps, m=float(m), dimension=n,
                converged=False, candidates_tried=0,
            )
            tried += 1
            r_target = 2.0 * R_sup + cutoff
            ncell = int(math.ceil(r_target / h))
            if (2 * ncell + 1) ** n > max_nodes:
                continue
            grid = make_grid(n, ncell * h, h, max_nodes=max_nodes + 1)
            dk = discretize(kernel, eps, h, cutoff_radius=cutoff)
            ub = spec.radial(grid.radii())
            conv = _analytic_convolution(dk, grid, spec.radial)
            a_vals = resource(grid.nodes)
            res = scale * (conv - ub) + ub * (a_vals - ub)
            outside = grid.radii() > R_sup
            ok_all = float(np.max(res)) <= tol_sup
            ok_out = (
                float(np.max(res[outside] + 0.5 * ell * ub[outside])) <= tol_sup
                if np.any(outside)
                else True
            )
            ok_dom = bool(np.all(ub >= np.maximum(0.0, a_vals) - 1e-14 * sup_ap))
            if ok_all and ok_out and ok_dom:
                spec.converged = True
                spec.candidates_tried = tried
                target = grid_extended if grid_extended is not None else grid
                return spec.field_on(target), spec
            if best is None:
                best = spec
        # keep searching
    if best is None:
        best = SuperSolutionSpec(
            beta=float(beta), tau=0.5, R_sup=R0, C_tau_R=(2.0 + R0**beta) * sup_ap,
            C_eps_beta=(2.0 + R0**beta) * sup_ap, ell=ell, plateau=sup_ap,
            epsilon=eps, m=float(m), dimension=n, converged=False, candidates_tried=tried,
        )
    best.candidates_tried = tried
    target = grid_extended if grid_extended is not None else make_grid(
        n, math.ceil((2 * R0 + cutoff) / h) * h, h
    )
    return best.field_on(target), best
