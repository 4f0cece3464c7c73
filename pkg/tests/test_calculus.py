import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tugobstacle.calculus import (
    QuadraticTest,
    ball_average,
    ball_max,
    ball_min,
    expansion_limit_check,
    infinity_laplacian_quadratic,
    mean_value_defect,
    minimizer_direction,
    p_laplacian_quadratic,
)
from tugobstacle.dpp import alpha_beta
from tugobstacle.errors import VanishingGradient

HALF_NORM_SQ = QuadraticTest(np.eye(2), np.zeros(2))


def sampled_extrema(phi, x, eps, n_r=400, n_t=1440):
    """Max/min of phi over a dense polar sample of the closed ball (2D)."""
    r = np.linspace(0.0, eps, n_r)
    t = np.linspace(0.0, 2 * np.pi, n_t, endpoint=False)
    R, T = np.meshgrid(r, t)
    pts = np.asarray(x) + np.stack([R.ravel() * np.cos(T.ravel()), R.ravel() * np.sin(T.ravel())], axis=1)
    vals = 0.5 * np.einsum("ij,jk,ik->i", pts, phi.A, pts) + pts @ phi.b + phi.c
    return vals.max(), vals.min()


def quadratic_strategy(dim=2):
    entries = st.floats(-3.0, 3.0, allow_nan=False)
    return st.builds(
        lambda a, b, c: QuadraticTest(np.array(a).reshape(dim, dim), np.array(b), c),
        st.lists(entries, min_size=dim * dim, max_size=dim * dim),
        st.lists(entries, min_size=dim, max_size=dim),
        entries,
    )


# -- p-Laplacian of quadratics


def test_p_laplacian_examples():
    affine = QuadraticTest(np.zeros((2, 2)), np.array([1.0, -2.0]))
    for p in (2.0, 3.0, 7.5):
        assert p_laplacian_quadratic(affine, (0.3, 0.4), p) == 0.0
    assert p_laplacian_quadratic(HALF_NORM_SQ, (1.0, 0.0), 2.0) == pytest.approx(2.0, abs=1e-15)
    assert p_laplacian_quadratic(HALF_NORM_SQ, (1.0, 0.0), 4.0) == pytest.approx(4.0, abs=1e-15)
    assert infinity_laplacian_quadratic(HALF_NORM_SQ, (0.0, 3.0)) == pytest.approx(1.0)


def test_vanishing_gradient():
    with pytest.raises(VanishingGradient):
        p_laplacian_quadratic(HALF_NORM_SQ, (0.0, 0.0), 3.0)
    with pytest.raises(VanishingGradient):
        expansion_limit_check(HALF_NORM_SQ, (0.0, 0.0), 3.0)


def test_symmetrizes_and_validates():
    phi = QuadraticTest(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2))
    np.testing.assert_array_equal(phi.A, [[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ValueError):
        QuadraticTest(np.eye(2), np.zeros(3))


# -- ball extrema and average


@pytest.mark.parametrize(
    "A,b,x",
    [
        (np.eye(2), np.zeros(2), (1.0, 0.0)),
        (np.diag([2.0, 1.0]), np.array([1.0, 0.0]), (0.0, 0.0)),
        (np.diag([1.0, -1.0]), np.zeros(2), (0.0, 0.0)),  # hard case: zero gradient, indefinite
        (np.array([[-3.0, 1.0], [1.0, 0.5]]), np.array([0.2, -0.1]), (0.1, 0.2)),
        (np.diag([-4.0, -4.0]), np.array([0.0, 0.0]), (0.0, 0.0)),
    ],
)
def test_ball_extrema_against_sampling(A, b, x):
    phi = QuadraticTest(A, b, 0.3)
    eps = 0.2
    hi, xhi = ball_max(phi, x, eps)
    lo, xlo = ball_min(phi, x, eps)
    s_hi, s_lo = sampled_extrema(phi, x, eps)
    # sampling is a lower bound for the max and an upper bound for the min
    assert s_hi <= hi + 1e-12 and s_lo >= lo - 1e-12
    assert hi - s_hi <= 1e-4 and s_lo - lo <= 1e-4
    assert np.linalg.norm(xhi - x) <= eps * (1 + 1e-12)
    assert np.linalg.norm(xlo - x) <= eps * (1 + 1e-12)
    assert phi(xhi) == pytest.approx(hi) and phi(xlo) == pytest.approx(lo)


def test_ball_average_against_quadrature():
    phi = QuadraticTest(np.array([[2.0, 0.5], [0.5, -1.0]]), np.array([0.3, 0.1]), 1.0)
    x, eps = np.array([0.2, -0.4]), 0.3
    rng = np.random.default_rng(0)
    n = 400_000
    r = eps * np.sqrt(rng.random(n))
    t = 2 * np.pi * rng.random(n)
    pts = x + np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    vals = 0.5 * np.einsum("ij,jk,ik->i", pts, phi.A, pts) + pts @ phi.b + phi.c
    assert abs(vals.mean() - ball_average(phi, x, eps)) <= 5 * vals.std() / np.sqrt(n)


# -- defect


def test_affine_defect_is_zero():
    phi = QuadraticTest(np.zeros((2, 2)), np.array([3.0, -1.0]), 2.0)
    for p in (2.0, 3.0, 10.0):
        a, b = alpha_beta(p, 2)
        assert mean_value_defect(phi, (0.5, 0.5), 0.1, a, b) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(phi=quadratic_strategy(), x=st.tuples(st.floats(-1, 1), st.floats(-1, 1)), eps=st.floats(0.01, 0.5))
def test_p2_defect_is_exact_ball_average(phi, x, eps):
    a, b = alpha_beta(2.0, 2)
    assert a == 0.0
    expected = b * eps**2 * phi.laplacian / 8
    assert mean_value_defect(phi, x, eps, a, b) == pytest.approx(expected, abs=1e-13)


def test_radial_defect_ratio_is_one_third():
    a, b = alpha_beta(4.0, 2)
    ratios = [mean_value_defect(HALF_NORM_SQ, (1.0, 0.0), e, a, b) / e**2 for e in (0.1, 0.05, 0.025)]
    # the linear terms of sup and inf cancel, so the ratio equals its limit for every eps
    assert max(abs(r - 1 / 3) for r in ratios) <= 1e-12
    # closed form on the radial quadratic: sup = (1+e)^2/2, inf = (1-e)^2/2, avg = 1/2 + e^2/4
    for e, r in zip((0.1, 0.05, 0.025), ratios):
        direct = a / 2 * (1 + e) ** 2 / 2 + a / 2 * (1 - e) ** 2 / 2 + b * (0.5 + e**2 / 4) - 0.5
        assert r == pytest.approx(direct / e**2, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    phi=quadratic_strategy(),
    const=st.floats(-5, 5),
    lam=st.floats(0.1, 10),
    p=st.floats(2, 8),
)
def test_defect_shift_invariance_and_scaling(phi, const, lam, p):
    a, b = alpha_beta(p, 2)
    x, eps = (0.3, -0.2), 0.15
    d = mean_value_defect(phi, x, eps, a, b)
    scale = 1e-10 * max(1.0, abs(d) * lam, float(np.abs(phi.A).max() + np.abs(phi.b).max()) * lam)
    assert mean_value_defect(phi.shifted(const), x, eps, a, b) == pytest.approx(d, abs=1e-12 * max(1, abs(const)))
    assert mean_value_defect(phi.scaled(lam), x, eps, a, b) == pytest.approx(lam * d, abs=scale)


# -- expansion check


def test_expansion_examples():
    affine = QuadraticTest(np.zeros((2, 2)), np.array([1.0, 2.0]))
    chk = expansion_limit_check(affine, (0.1, 0.1), 3.0, 2)
    assert chk.reference == 0.0 and chk.rel_error == 0.0

    chk = expansion_limit_check(HALF_NORM_SQ, (1.0, 0.0), 4.0, 2, (0.1, 0.05, 0.025))
    assert chk.reference == pytest.approx(1 / 3, abs=1e-15)
    assert chk.rel_error <= 1e-3

    aniso = QuadraticTest(np.diag([2.0, 1.0]), np.array([1.0, 0.0]))
    chk = expansion_limit_check(aniso, (0.0, 0.0), 3.0, 2)
    assert chk.reference == pytest.approx(0.5, abs=1e-15)
    assert abs(chk.estimated_limit - 0.5) <= 1e-2


@settings(max_examples=40, deadline=None)
@given(phi=quadratic_strategy(), p=st.floats(2, 6))
def test_defect_ratio_converges_for_random_quadratics(phi, p):
    x = np.array([0.2, 0.1])
    g = phi.gradient(x)
    if np.linalg.norm(g) < 0.5:
        return
    a, b = alpha_beta(p, 2)
    nu = g / np.linalg.norm(g)
    ref = b / 8 * (phi.laplacian + (p - 2) * nu @ phi.A @ nu)
    errs = [abs(mean_value_defect(phi, x, e, a, b) / e**2 - ref) for e in (0.02, 0.01, 0.005, 0.0025)]
    assert errs[-1] <= errs[0] + 1e-9
    assert errs[-1] <= 1e-2 * max(1.0, float(np.abs(phi.A).max()))


def test_expansion_in_one_dimension():
    phi = QuadraticTest(np.array([[3.0]]), np.array([1.0]))
    chk = expansion_limit_check(phi, (0.5,), 5.0, 1)
    assert chk.rel_error <= 1e-6


def test_invalid_expansion_arguments():
    with pytest.raises(ValueError):
        expansion_limit_check(HALF_NORM_SQ, (1.0, 0.0), 3.0, 2, (0.1, 0.05))
    with pytest.raises(ValueError):
        expansion_limit_check(HALF_NORM_SQ, (1.0, 0.0), 3.0, 2, (0.05, 0.1, 0.025))
    with pytest.raises(ValueError):
        expansion_limit_check(HALF_NORM_SQ, (1.0, 0.0), 3.0, 3)


def test_minimizer_direction_is_first_order():
    phi = QuadraticTest(np.array([[1.0, 0.5], [0.5, -2.0]]), np.array([5.0, 2.0]))
    x = np.array([0.1, 0.0])
    g = phi.gradient(x)
    target = -g / np.linalg.norm(g)
    errs = [np.linalg.norm(minimizer_direction(phi, x, e) - target) for e in (0.2, 0.1, 0.05, 0.025)]
    for coarse, fine in zip(errs, errs[1:]):
        assert fine <= 0.6 * coarse
    assert errs[-1] / 0.025 <= errs[0] / 0.2 * 1.5
