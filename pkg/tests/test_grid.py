import math

import numpy as np
import pytest

from nonlocal_kpp.grid import (
    Field,
    field_to_csv,
    inf_on,
    integrate,
    make_grid,
    restrict,
    sup_norm,
)


def test_make_grid_1d_nodes():
    g = make_grid(1, 1.0, 0.5)
    np.testing.assert_allclose(g.nodes, [-1.0, -0.5, 0.0, 0.5, 1.0])


def test_make_grid_2d_cross():
    g = make_grid(2, 1.0, 1.0)
    pts = {tuple(p) for p in g.nodes}
    assert pts == {(0.0, 0.0), (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)}


def test_make_grid_symmetric_and_counts():
    g = make_grid(1, 2.0, 0.25)
    assert g.n_nodes == 17
    np.testing.assert_allclose(g.nodes, -g.nodes[::-1])


def test_make_grid_rejects_nonintegral():
    with pytest.raises(ValueError):
        make_grid(1, 1.0, 0.3)


def test_make_grid_rejects_huge():
    with pytest.raises(ValueError):
        make_grid(1, 1.0, 1e-9, max_nodes=1000)


def test_integrate_constant():
    g = make_grid(1, 1.0, 0.5)
    assert integrate(Field(g, np.ones(g.n_nodes))) == pytest.approx(2.5)
    assert integrate(Field(g, np.zeros(g.n_nodes))) == 0.0


def test_integrate_quadratic():
    # full-weight boundary nodes make the cell union [-R-h/2, R+h/2], so the
    # rule carries an O(h) edge term ~ h*f(R) for data not vanishing at R
    g = make_grid(1, 1.0, 0.01)
    f = Field(g, g.nodes**2)
    h = 0.01
    assert integrate(f) == pytest.approx(2.0 / 3.0, abs=1.2 * h)
    # for interior-supported data the quadrature is clean O(h^2)
    g2 = make_grid(1, 1.0, 0.01)
    bump = np.maximum(0.0, 0.25 - g2.nodes**2) ** 2
    exact = 2 * (0.25**2 * 0.5 - 2 * 0.25 * 0.5**3 / 3 + 0.5**5 / 5)
    assert integrate(Field(g2, bump)) == pytest.approx(exact, abs=1e-6)


def test_integrate_reflection_exact():
    rng = np.random.default_rng(7)
    g = make_grid(1, 1.0, 0.125)
    vals = rng.normal(size=g.n_nodes)
    f = Field(g, vals)
    fr = Field(g, vals[::-1])
    assert integrate(f) == integrate(fr)
    assert sup_norm(f) == sup_norm(fr)


def test_refinement_order_two():
    # midpoint sums of exp(-|x|) carry a clean h^2/6 error (kink at a node),
    # so successive refinements must show second-order decay
    fn = lambda x: np.exp(-np.abs(x))
    vals = []
    hs = [0.2, 0.1, 0.05, 0.025]
    for h in hs:
        g = make_grid(1, 12.0, h)
        vals.append(integrate(Field(g, fn(g.nodes))))
    diffs = [abs(vals[i] - vals[i + 1]) for i in range(len(vals) - 1)]
    slopes = [
        math.log(diffs[i] / diffs[i + 1]) / math.log(2.0) for i in range(len(diffs) - 1)
    ]
    assert min(slopes) >= 1.9


def test_sup_norm_constant():
    g = make_grid(1, 1.0, 0.5)
    assert sup_norm(Field(g, np.full(g.n_nodes, -3.25))) == 3.25


def test_inf_on_subset():
    g = make_grid(1, 1.0, 0.25)
    f = Field(g, g.nodes.copy())
    mask = g.nodes >= 0
    assert inf_on(f, mask) == 0.0
    with pytest.raises(ValueError):
        inf_on(f, np.zeros(g.n_nodes, dtype=bool))


def test_restrict_identity_and_nested():
    g = make_grid(1, 2.0, 0.25)
    f = Field(g, np.arange(g.n_nodes, dtype=float))
    same = restrict(f, g)
    np.testing.assert_array_equal(same.values, f.values)
    sub = make_grid(1, 1.0, 0.25)
    fr = restrict(f, sub)
    assert fr.grid.n_nodes == 9
    np.testing.assert_allclose(fr.grid.nodes, np.arange(-1, 1.01, 0.25))


def test_restrict_rejects_non_nested():
    g = make_grid(1, 1.0, 0.25)
    f = Field(g, np.zeros(g.n_nodes))
    with pytest.raises(ValueError):
        restrict(f, make_grid(1, 1.0, 0.5))
    with pytest.raises(ValueError):
        restrict(f, make_grid(1, 2.0, 0.25))


def test_restrict_2d():
    g = make_grid(2, 2.0, 0.5)
    f = Field(g, g.radii())
    sub = make_grid(2, 1.0, 0.5)
    fr = restrict(f, sub)
    np.testing.assert_allclose(fr.values, sub.radii())


def test_field_rejects_nan():
    g = make_grid(1, 1.0, 0.5)
    vals = np.ones(g.n_nodes)
    vals[2] = np.nan
    with pytest.raises(ValueError):
        Field(g, vals)


def test_field_csv(tmp_path):
    g = make_grid(1, 1.0, 0.5)
    f = Field(g, np.linspace(0, 1, g.n_nodes))
    p = tmp_path / "f.csv"
    field_to_csv(f, p)
    lines = p.read_text().strip().splitlines()
    assert lines[0] == "x,value"
    assert len(lines) == 6

    g2 = make_grid(2, 1.0, 1.0)
    f2 = Field(g2, np.ones(g2.n_nodes))
    p2 = tmp_path / "f2.csv"
    field_to_csv(f2, p2)
    assert p2.read_text().splitlines()[0] == "x,y,value"
