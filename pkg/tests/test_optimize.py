import numpy as np
import pytest

from bdpkit.optimize import ConstraintSpec, as_constraints, hessian_fd, minimize


def test_quadratic():
    res = minimize(lambda x: (x[0] - 2) ** 2, [4.0], [(0, 5)])
    assert res.success
    assert res.x[0] == pytest.approx(2, abs=1e-6)


def test_rosenbrock_de():
    def rosen(x):
        return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2

    # coarse grid oracle: the global minimiser is unique at (1, 1)
    g = np.linspace(-2, 2, 401)
    X, Y = np.meshgrid(g, g)
    k = np.argmin(rosen((X, Y)))
    assert (X.ravel()[k], Y.ravel()[k]) == pytest.approx((1, 1), abs=1e-2)
    res = minimize(rosen, [0.0, 0.0], [(-2, 2), (-2, 2)], method="differential-evolution",
                   seed=3)
    np.testing.assert_allclose(res.x, [1, 1], atol=1e-4)


def test_active_constraint():
    con = {"type": "ineq", "fun": lambda x: x[0] - 1}
    res = minimize(lambda x: x[0] ** 2, [3.0], [(-5, 5)], [con])
    assert res.x[0] == pytest.approx(1, abs=1e-5)


def test_active_constraint_de():
    con = {"type": "ineq", "fun": lambda x: x[0] - 1}
    res = minimize(lambda x: x[0] ** 2, [3.0], [(-5, 5)], [con],
                   method="differential-evolution", seed=1)
    assert res.x[0] == pytest.approx(1, abs=1e-4)


def test_infinite_objective_is_tolerated():
    f = lambda x: np.inf if x[0] < 0.5 else (x[0] - 1) ** 2  # noqa: E731
    res = minimize(f, [2.0], [(0, 3)])
    assert res.x[0] == pytest.approx(1, abs=1e-5)


def test_multi_start_seeded():
    f = lambda x: np.sin(3 * x[0]) + 0.1 * x[0] ** 2  # noqa: E731
    a = minimize(f, [2.5], [(-3, 3)], multi_start=5, seed=9)
    b = minimize(f, [2.5], [(-3, 3)], multi_start=5, seed=9)
    assert a.x[0] == b.x[0]
    assert a.fun <= minimize(f, [2.5], [(-3, 3)]).fun + 1e-12


def test_unknown_method():
    with pytest.raises(ValueError):
        minimize(lambda x: x[0] ** 2, [1.0], [(0, 2)], method="newton")


def test_constraint_spec_parsing():
    cons = as_constraints([{"type": "eq", "fun": lambda x: x[0]},
                           ConstraintSpec("ineq", lambda x: x[0])])
    assert [c.kind for c in cons] == ["eq", "ineq"]
    with pytest.raises(ValueError):
        ConstraintSpec("le", lambda x: 0)


def test_hessian_square():
    for x in (-3.0, 0.2, 7.0):
        np.testing.assert_allclose(hessian_fd(lambda v: v[0] ** 2, [x]), [[2.0]], atol=1e-6)


def test_hessian_quadratic_form():
    H = hessian_fd(lambda v: v[0] ** 2 + 3 * v[0] * v[1] + v[1] ** 2, [0.7, -1.2])
    np.testing.assert_allclose(H, [[2, 3], [3, 2]], atol=1e-4)


def test_hessian_poisson_loglik():
    # log L(g) = N log g - g T, so d2/dg2 = -N / g^2
    N, T, g = 37.0, 20.0, 1.6
    H = hessian_fd(lambda v: N * np.log(v[0]) - v[0] * T, [g])
    assert H[0, 0] == pytest.approx(-N / g ** 2, rel=1e-3)


def test_hessian_symmetric():
    f = lambda v: np.exp(v[0] * v[1]) + v[2] ** 3 * v[0]  # noqa: E731
    H = hessian_fd(f, [0.3, 0.5, 1.1])
    np.testing.assert_allclose(H, H.T, atol=0)
