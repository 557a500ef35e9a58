import numpy as np
import pytest

from kancl.spline import GridError, basis_derivative, basis_eval, build_grid, spline_eval

from oracles import naive_basis, naive_spline


def test_grid_shapes():
    g = build_grid(0, 1, 1, 0)
    assert g.knots.tolist() == [0.0, 1.0]
    g = build_grid(-1, 1, 5, 3)
    assert len(g.knots) == 12 and abs(g.h - 0.4) < 1e-15
    expected = [-2.2 + 0.4 * i for i in range(12)]
    assert np.max(np.abs(g.knots - expected)) < 1e-12
    assert abs(g.knots[3] + 1) < 1e-12 and abs(g.knots[8] - 1) < 1e-12
    g = build_grid(0, 1, 200, 3)
    assert len(g.knots) == 207 and g.n_basis == 203
    assert np.all(np.diff(g.knots) > 0)


@pytest.mark.parametrize("args", [(0, 1, 0, 3), (0, 1, 5, -1), (1, 0, 5, 3), (0, np.inf, 5, 3), (np.nan, 1, 5, 3)])
def test_grid_rejects(args):
    with pytest.raises(GridError):
        build_grid(*args)


def test_order_zero_indicator():
    g = build_grid(0, 1, 4, 0)
    assert basis_eval(0.3, g).tolist() == [0.0, 1.0, 0.0, 0.0]


def test_matches_naive_recursion():
    g = build_grid(-1, 1, 5, 3)
    assert np.max(np.abs(basis_eval(0.0, g) - naive_basis(0.0, -1, 1, 5, 3))) < 1e-12
    rng = np.random.default_rng(1)
    for x in rng.uniform(-1, 1, 200):
        assert np.max(np.abs(basis_eval(x, g) - naive_basis(x, -1, 1, 5, 3))) < 1e-12


@pytest.mark.parametrize("G,k", [(5, 3), (200, 3), (4, 1), (7, 2), (3, 0)])
def test_partition_of_unity_and_support(G, k):
    g = build_grid(-1, 1, G, k)
    x = np.concatenate([np.random.default_rng(G).uniform(-1, 1, 2000), [-1.0, 1.0], g.knots[k:G + k + 1]])
    B = basis_eval(x, g)
    assert np.max(np.abs(B.sum(axis=1) - 1)) <= 1e-9
    assert B.min() >= 0
    assert np.max((B != 0).sum(axis=1)) <= k + 1


def test_active_window_monotone():
    g = build_grid(0, 1, 10, 3)
    firsts = [g.active_window(x)[0] for x in np.linspace(0, 1, 301)]
    assert all(b >= a for a, b in zip(firsts, firsts[1:]))


def test_clamping():
    g = build_grid(-1, 1, 5, 3)
    assert np.array_equal(basis_eval(-7.0, g), basis_eval(-1.0, g))
    assert np.array_equal(basis_eval(3.0, g), basis_eval(1.0, g))
    with pytest.raises(GridError):
        basis_eval(np.nan, g)


def test_derivative_sums_to_zero_and_matches_fd():
    g = build_grid(-1, 1, 5, 3)
    x = np.random.default_rng(3).uniform(-0.999, 0.999, 100)
    d = basis_derivative(x, g)
    assert np.max(np.abs(d.sum(axis=1))) < 1e-12
    eps = 1e-5
    fd = (basis_eval(x + eps, g) - basis_eval(x - eps, g)) / (2 * eps)
    assert np.max(np.abs(fd - d)) < 1e-6


def test_hat_slopes():
    g = build_grid(0, 1, 2, 1)
    d = basis_derivative(0.25, g)
    # knots -0.5, 0, 0.5, 1, 1.5: hats peaking at 0 and 0.5 are active
    assert np.allclose(d, [-2.0, 2.0, 0.0], atol=1e-12)


def test_derivative_order_zero_unsupported():
    with pytest.raises(GridError):
        basis_derivative(0.5, build_grid(0, 1, 4, 0))


def test_spline_eval():
    g = build_grid(-1, 1, 5, 3)
    assert spline_eval(0.3, g, np.zeros(8)) == 0.0
    assert abs(spline_eval(0.3, g, np.full(8, 2.5)) - 2.5) < 1e-12
    rng = np.random.default_rng(5)
    c = rng.normal(size=8)
    for x in rng.uniform(-1, 1, 50):
        assert abs(spline_eval(x, g, c) - naive_spline(x, -1, 1, 5, 3, c)) < 1e-12
    with pytest.raises(GridError):
        spline_eval(0.0, g, np.zeros(7))


def test_coefficient_locality_is_exact():
    g = build_grid(0, 1, 20, 3)
    rng = np.random.default_rng(2)
    c = rng.normal(size=g.n_basis)
    x = np.linspace(0, 1, 2001)
    base = spline_eval(x, g, c)
    for j in (0, 5, 11, g.n_basis - 1):
        c2 = c.copy()
        c2[j] += 1.0
        lo, hi = g.support(j)
        outside = (x <= lo) | (x >= hi)
        assert np.array_equal(spline_eval(x, g, c2)[outside], base[outside])
