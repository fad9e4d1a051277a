import math

import numpy as np
import pytest
from scipy.stats import norm as normal_dist

from nonlocal_kpp.kernel import (
    discretize,
    make_kernel,
    moment,
    tail_mass,
    truncated_moment,
)


def test_uniform_ball_1d_profile_and_mass():
    k = make_kernel("uniform_ball", {"radius": 1.0}, N=1)
    # closed form: 2 * (1/2) * 1 = 1, so the density is 1/2 on [0, 1]
    assert k.profile(0.3) == pytest.approx(0.5, abs=1e-12)
    assert k.profile(1.2) == 0.0
    assert moment(k, 0.0) == pytest.approx(1.0, abs=1e-10)


def test_gaussian_1d_is_standard_normal():
    k = make_kernel("gaussian", {"sigma": 1.0}, N=1)
    assert k.profile(0.0) == pytest.approx(1.0 / math.sqrt(2 * math.pi), rel=1e-10)
    assert moment(k, 2.0) == pytest.approx(1.0, rel=1e-9)  # unit variance


def test_power_tail_moment_finiteness():
    k = make_kernel("power_tail", {"alpha": 0.5}, N=1)
    # comparison integral (1+r)^{-1.5} r^beta converges iff beta < 0.5
    assert moment(k, 1.0) == math.inf
    assert moment(k, 0.5) == math.inf
    m = moment(k, 0.25)
    assert math.isfinite(m) and m > 0


def test_power_tail_rejects_bad_alpha():
    with pytest.raises(ValueError):
        make_kernel("power_tail", {"alpha": 0.0})
    with pytest.raises(ValueError):
        make_kernel("power_tail", {"alpha": -1.0})


def test_custom_unbounded_requires_tail_exponent():
    with pytest.raises(ValueError):
        make_kernel("custom", {"profile": lambda r: 1.0 / (1.0 + r) ** 3})


def test_uniform_ball_second_moment():
    k = make_kernel("uniform_ball", {"radius": 1.0}, N=1)
    # int_{-1}^{1} (1/2) x^2 dx = 1/3
    assert moment(k, 2.0) == pytest.approx(1.0 / 3.0, rel=1e-10)


def test_moment_zero_is_total_mass():
    for fam, params in [
        ("uniform_ball", {"radius": 2.0}),
        ("triangle", {"radius": 1.5}),
        ("gaussian", {"sigma": 0.7}),
        ("power_tail", {"alpha": 1.5}),
    ]:
        for n in (1, 2):
            k = make_kernel(fam, dict(params), N=n)
            assert moment(k, 0.0) == pytest.approx(1.0, abs=1e-9)


def test_tail_mass_compact_support():
    k = make_kernel("uniform_ball", {"radius": 1.0}, N=1)
    assert tail_mass(k, 1.0) == 0.0
    # 2 * int_{0.5}^{1} (1/2) dr = 0.5
    assert tail_mass(k, 0.5) == pytest.approx(0.5, abs=1e-12)


def test_tail_mass_markov_bound():
    # tail_mass(r) * r^m <= M_m whenever M_m is finite
    cases = [
        ("power_tail", {"alpha": 2.0}, 1.0),
        ("gaussian", {"sigma": 1.0}, 2.0),
        ("triangle", {"radius": 1.0}, 1.0),
    ]
    for fam, params, m in cases:
        k = make_kernel(fam, params, N=1)
        mm = moment(k, m)
        for r in (1.0, 2.0, 5.0, 10.0):
            assert tail_mass(k, r) * r**m <= mm * (1 + 1e-9)


def test_power_tail_markov_at_ten():
    k = make_kernel("power_tail", {"alpha": 2.0}, N=1)
    m1 = moment(k, 1.0)
    assert tail_mass(k, 10.0) <= m1 / 10.0


def test_discretize_uniform_nine_point():
    k = make_kernel("uniform_ball", {"radius": 1.0}, N=1)
    dk = discretize(k, epsilon=1.0, grid_spacing=0.25)
    assert dk.weights.shape == (9,)
    assert dk.mass_deficit == 0.0
    assert dk.weights.sum() == pytest.approx(1.0, abs=1e-12)
    # interior cells hold 0.25 * 0.5, the two boundary cells half of that
    assert dk.weights[4] == pytest.approx(0.125, abs=1e-10)
    assert dk.weights[0] == pytest.approx(0.0625, abs=1e-10)


def test_discretize_symmetry_and_positivity():
    for fam, params in [
        ("triangle", {"radius": 1.0}),
        ("gaussian", {"sigma": 1.0}),
        ("power_tail", {"alpha": 1.5}),
    ]:
        k = make_kernel(fam, params, N=1)
        dk = discretize(k, 0.5, 0.1, cutoff_radius=4.0)
        assert np.all(dk.weights >= 0)
        np.testing.assert_array_equal(dk.weights, dk.weights[::-1])
        assert dk.weights.sum() + dk.mass_deficit == pytest.approx(1.0, abs=1e-10)


def test_discretize_gaussian_deficit_matches_normal_tail():
    k = make_kernel("gaussian", {"sigma": 1.0}, N=1)
    dk = discretize(k, epsilon=1.0, grid_spacing=0.25, cutoff_radius=5.0)
    expected = 2 * normal_dist.sf(5.0)  # two-sided tail beyond 5 sigma
    assert dk.mass_deficit == pytest.approx(expected, rel=1e-6)
    assert dk.mass_deficit == pytest.approx(5.7e-7, rel=2e-2)


def test_discretize_rejects_coarse_grid():
    k = make_kernel("uniform_ball", {"radius": 1.0}, N=1)
    with pytest.raises(ValueError):
        discretize(k, epsilon=1.0, grid_spacing=0.5)


def test_discretize_rejects_small_cutoff_for_unbounded():
    k = make_kernel("gaussian", {"sigma": 1.0}, N=1)
    with pytest.raises(ValueError):
        discretize(k, epsilon=1.0, grid_spacing=0.2, cutoff_radius=2.0)


def test_discretize_2d_uniform_exact_mass():
    k = make_kernel("uniform_ball", {"radius": 1.0}, N=2)
    dk = discretize(k, epsilon=1.0, grid_spacing=0.25)
    assert dk.mass_deficit == 0.0
    assert dk.weights.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(dk.weights, dk.weights[::-1, :])
    np.testing.assert_array_equal(dk.weights, dk.weights[:, ::-1])
    np.testing.assert_array_equal(dk.weights, dk.weights.T)


def test_discretize_2d_gaussian():
    k = make_kernel("gaussian", {"sigma": 1.0}, N=2)
    dk = discretize(k, epsilon=0.5, grid_spacing=0.125, cutoff_radius=2.5)
    assert dk.weights.sum() + dk.mass_deficit == pytest.approx(1.0, abs=1e-10)
    # center weight close to the cell integral of the peak
    assert dk.weights[dk.radius_cells, dk.radius_cells] > 0


def test_rescaling_moment_consistency():
    # discrete sum_k w_k |y_k|^beta tracks eps^beta M_beta within 1 percent
    k = make_kernel("gaussian", {"sigma": 1.0}, N=1)
    beta = 2.0
    mb = moment(k, beta)
    for eps in (0.5, 1.0):
        dk = discretize(k, eps, eps / 16.0, cutoff_radius=10.0 * eps)
        y = dk.offsets() * dk.grid_spacing
        disc = float(np.sum(dk.weights * np.abs(y) ** beta))
        assert disc == pytest.approx(eps**beta * mb, rel=1e-2)


@pytest.mark.parametrize("alpha,m", [(1.5, 1.0), (0.75, 1.0)])
def test_appendix_limit_probe(alpha, m):
    # (m - beta) M_beta stays bounded iff alpha > m; divergence is certified
    # symbolically and exhibited by growing truncated moments.
    k = make_kernel("power_tail", {"alpha": alpha}, N=1)
    betas = [m - 0.1, m - 0.05, m - 0.01]
    entries = [(m - b) * moment(k, b) for b in betas]
    if alpha > m:
        assert all(math.isfinite(e) for e in entries)
        for prev, nxt in zip(entries, entries[1:]):
            assert nxt <= 2.0 * prev
    else:
        assert any(math.isinf(e) for e in entries)
        # truncated moments grow without bound: factor > 2 per cutoff step
        for b in betas:
            if b < alpha:
                continue
            vals = [truncated_moment(k, b, L) for L in (1e2, 1e6, 1e10)]
            assert vals[1] > 2 * vals[0] and vals[2] > 2 * vals[1]


def test_discrete_kernel_csv(tmp_path):
    k = make_kernel("uniform_ball", {"radius": 1.0}, N=1)
    dk = discretize(k, 1.0, 0.25)
    path = tmp_path / "dk.csv"
    dk.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "offset_index,weight"
    assert len(lines) == 10
