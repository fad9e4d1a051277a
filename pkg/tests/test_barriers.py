import math

import numpy as np
import pytest

from nonlocal_kpp.barriers import (
    build_phi,
    build_subsolution,
    build_supersolution,
    psi,
    psi_laplacian,
    validate_subsolution,
)
from nonlocal_kpp.grid import make_grid
from nonlocal_kpp.kernel import discretize, make_kernel
from nonlocal_kpp.resource import make_resource


@pytest.fixture(scope="module")
def bump_resource():
    return make_resource("compact_bump", {"A": 1.0, "r0": 1.0, "delta": 0.5})


@pytest.fixture(scope="module")
def uniform_kernel():
    return make_kernel("uniform_ball", {"radius": 1.0}, N=1)


@pytest.fixture(scope="module")
def subsolution(bump_resource):
    g = make_grid(1, 0.32, 0.004)
    return build_subsolution(bump_resource, 0.0, 0.3, g)


def test_psi_values():
    assert psi(0.0) == 1.0
    assert psi(1.5) == 0.0
    assert psi(0.5) == pytest.approx(0.125)  # (0.5)^3


def test_psi_laplacian_formula():
    # at |x| = (N-1)/(N+1) with N=3: 3*(1/2)*(2 - 2*(1/2)/(1/2)) = 0
    assert psi_laplacian(np.array([0.5, 0.0, 0.0])) == pytest.approx(0.0, abs=1e-14)
    # nonnegative beyond the core radius in the supported dimensions
    for n in (1, 2):
        core = (n - 1) / (n + 1)
        for r in np.linspace(core + 1e-6, 1.0, 50):
            assert psi_laplacian(r, N=n) >= -1e-13
    assert psi_laplacian(1.7, N=1) == 0.0
    with pytest.raises(ValueError):
        psi_laplacian(0.0, N=1)


def test_build_phi_1d():
    phi = build_phi(1)
    assert phi.kappa == 0.5
    # 1/(2*(kappa psi(kappa) + int_kappa^1 psi)) = 1/(2*(1/16 + 1/64)) = 6.4
    assert phi.C == pytest.approx(6.4, rel=1e-12)
    assert phi.mass() == pytest.approx(1.0, abs=1e-12)
    # constant on the core, monotone nonincreasing, supported in [0, 1]
    rs = np.linspace(0.0, 0.5, 20)
    np.testing.assert_allclose(phi(rs), phi(0.0), rtol=1e-13)
    rr = np.linspace(0.0, 1.1, 200)
    vals = phi(rr)
    assert np.all(np.diff(vals) <= 1e-13)
    assert np.all(vals[rr > 1.0] == 0.0)


def test_build_phi_2d():
    phi = build_phi(2)
    assert phi.kappa == 0.5  # max(1/2, 1/3)
    assert phi.mass() == pytest.approx(1.0, abs=1e-12)
    # subharmonic outside the closed core ball: Laplacian of the cubic part
    for r in np.linspace(0.51, 0.999, 40):
        assert psi_laplacian(r, N=2) >= 0.0


def test_subsolution_postconditions(bump_resource, subsolution):
    fld, spec = subsolution
    a_z = spec.a_plus_at_z
    assert a_z == pytest.approx(0.5)
    assert spec.R_loc == pytest.approx(math.sqrt(0.0375) / 2.0, rel=1e-6)
    # center bound with margin theta/4 a+(z)
    center = float(spec.profile(np.array([0.0]))[0])
    assert center >= (1.0 - spec.theta) * a_z
    assert center == pytest.approx(spec.eta0, abs=1e-13)
    # supported exactly in B_{3R/2}
    g = fld.grid
    outside = np.abs(g.nodes) > spec.support_radius + 1e-12
    assert np.all(fld.values[outside] == 0.0)
    # strictly below a+ on the support
    ap = np.maximum(0.0, bump_resource(g.nodes))
    on = fld.values > 0
    assert np.all(fld.values[on] < ap[on])


def test_subsolution_rejects_bad_inputs(bump_resource):
    g = make_grid(1, 0.32, 0.004)
    with pytest.raises(ValueError):
        build_subsolution(bump_resource, 0.9, 0.3, g)  # a(0.9) < 0
    with pytest.raises(ValueError):
        build_subsolution(bump_resource, 0.0, 1.2, g)
    coarse = make_grid(1, 0.32, 0.04)
    with pytest.raises(ValueError):
        build_subsolution(bump_resource, 0.0, 0.3, coarse)


def test_generalized_mean_value_inequality(bump_resource, uniform_kernel, subsolution):
    # discrete form: sum_y w(x-y) u(y) >= u(x) sum_y w(x-y) outside the
    # non-subharmonic core, whenever the kernel reach stays outside it
    fld, spec = subsolution
    R, kap = spec.R_loc, spec.kappa
    inner = R * (1.0 + (kap + 1.0) / 4.0)
    eps = 0.001
    h = eps / 4.0
    ncell = int(math.ceil((spec.support_radius + 2 * eps) / h))
    g = make_grid(1, ncell * h, h)
    dk = discretize(uniform_kernel, eps, h)
    u = spec.profile(np.abs(g.nodes))
    conv = np.convolve(u, dk.weights, mode="same")
    inmass = np.convolve(np.ones_like(u), dk.weights, mode="same")
    sel = (np.abs(g.nodes) >= inner) & (np.abs(g.nodes) <= g.radius - eps)
    assert np.all(conv[sel] - u[sel] * inmass[sel] >= -1e-15)


def test_validation_thresholds_decrease_with_m(bump_resource, uniform_kernel, subsolution):
    _, spec = subsolution
    eps_list = [2.0 ** (-k) for k in range(1, 13)]
    thresholds = {}
    for m in (0.0, 0.5, 1.0):
        rep = validate_subsolution(spec, bump_resource, uniform_kernel, m, eps_list)
        assert rep.eps_threshold is not None
        thresholds[m] = rep.eps_threshold
        # residual min non-decreasing as eps decreases through the validated range
        passed = [e for e in rep.entries if e["passed"]]
        mins = [e["min_residual"] for e in passed]
        assert all(b >= a - 1e-12 for a, b in zip(mins, mins[1:]))
    assert thresholds[0.0] >= thresholds[0.5] >= thresholds[1.0]


def test_validation_reports_slack(bump_resource, uniform_kernel, subsolution):
    _, spec = subsolution
    rep = validate_subsolution(spec, bump_resource, uniform_kernel, 1.0, [0.25, 0.125])
    for e in rep.entries:
        assert set(e) >= {"eps", "min_residual", "predicted_slack", "passed"}
        assert e["predicted_slack"] >= 0.0


def test_fat_tail_validation_fails(bump_resource):
    # alpha < m: no uniform sub-solution can certify (Prop-A.1 regime)
    _, spec = build_subsolution(bump_resource, 0.0, 0.3, make_grid(1, 0.32, 0.004))
    kern = make_kernel("power_tail", {"alpha": 0.75}, N=1)
    rep = validate_subsolution(spec, bump_resource, kern, 1.0, [1e-2, 3e-3, 1e-3])
    assert rep.eps_threshold is None
    assert all(e["min_residual"] < 0 for e in rep.entries)


def test_supersolution_accepted(bump_resource, uniform_kernel):
    for m in (0.0, 1.0, 2.0):
        fld, spec = build_supersolution(bump_resource, uniform_kernel, m, 2.0, 0.1)
        assert spec.converged
        # plateau equals ||a+||_inf and dominates a+ everywhere
        assert spec.plateau == bump_resource.sup_a_plus
        g = fld.grid
        ap = np.maximum(0.0, bump_resource(g.nodes))
        assert np.all(fld.values >= ap - 1e-14)
        # power decay outside the plateau: ubar * (1 + |x|^beta) constant
        r = g.radii()
        out = r > spec.R_sup
        if np.any(out):
            const = fld.values[out] * (1.0 / spec.tau + r[out] ** spec.beta)
            np.testing.assert_allclose(const, const[0], rtol=1e-12)


def test_supersolution_residual_sign(bump_resource, uniform_kernel):
    from nonlocal_kpp.barriers import _analytic_convolution

    m, eps = 1.0, 0.1
    fld, spec = build_supersolution(bump_resource, uniform_kernel, m, 2.0, eps)
    g = fld.grid
    dk = discretize(uniform_kernel, eps, g.spacing)
    conv = _analytic_convolution(dk, g, spec.radial)
    ub = fld.values
    a_vals = bump_resource(g.nodes)
    res = eps ** (-m) * (conv - ub) + ub * (a_vals - ub)
    assert np.max(res) <= 1e-8 * bump_resource.sup_a_plus
    out = g.radii() > spec.R_sup
    # strict outer bound: residual <= -(ell/2) ubar
    assert np.max(res[out] + 0.5 * spec.ell * ub[out]) <= 1e-8


def test_supersolution_requires_finite_moment(bump_resource):
    kern = make_kernel("power_tail", {"alpha": 1.5}, N=1)
    with pytest.raises(ValueError):
        build_supersolution(bump_resource, kern, 1.0, 2.0, 0.1)


def test_subsolution_2d(uniform_kernel):
    res2 = make_resource("compact_bump", {"A": 1.0, "r0": 1.0, "delta": 0.5}, N=2)
    g = make_grid(2, 0.32, 0.004)
    fld, spec = build_subsolution(res2, np.zeros(2), 0.3, g)
    assert float(spec.profile(np.array([0.0]))[0]) >= 0.7 * 0.5
    kern2 = make_kernel("uniform_ball", {"radius": 1.0}, N=2)
    rep = validate_subsolution(spec, res2, kern2, 0.5, [2.0 ** (-k) for k in range(4, 9)])
    assert rep.eps_threshold is not None
