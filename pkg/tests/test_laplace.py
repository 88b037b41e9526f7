from math import comb

import numpy as np
import pytest
from scipy.integrate import quad

from bdpkit.laplace import invert, lentz, transform_matrix, transform_pij
from bdpkit.linalg import TruncationWindow, build_generator, transition_matrix
from bdpkit.models import builtin_model


def test_lentz_golden_ratio():
    val = lentz(lambda k: 1.0, lambda k: 1.0, eps=1e-12)
    assert abs(val - (np.sqrt(5) - 1) / 2) < 1e-9


def test_lentz_two_terms():
    big = 1e12
    val = lentz(lambda k: 4.0 if k == 1 else 1.0,
                lambda k: 1.0 if k == 1 else big, eps=1e-12)
    assert val.real == pytest.approx(4 / (1 + 1 / big), rel=1e-10)


@pytest.mark.parametrize("method", ["euler", "gaver-stehfest", "talbot", "cme-talbot"])
def test_invert_constant(method):
    assert invert(lambda s: 1 / s, 1.0, method) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("method,tol", [("euler", 1e-6), ("talbot", 1e-6),
                                        ("gaver-stehfest", 1e-4)])
def test_invert_exponential(method, tol):
    assert abs(invert(lambda s: 1 / (s + 2), 1.0, method) - np.exp(-2)) < tol


@pytest.mark.parametrize("method", ["euler", "talbot"])
def test_invert_ramp(method):
    assert invert(lambda s: 1 / s ** 2, 3.0, method) == pytest.approx(3.0, abs=1e-6)


def test_invert_rejects_nonpositive_time():
    with pytest.raises(ValueError):
        invert(lambda s: 1 / s, 0.0)


def test_pure_death_absorbing_transform():
    s = np.array([0.5, 1.0, 3.0 + 2j])
    np.testing.assert_allclose(transform_pij(builtin_model("pure-death"), (1.0,), 0, 0, s),
                               1 / s, rtol=1e-12)


def _linear_pmf(i, j, lam, mu, t):
    # generating-function law of the linear process, written out with binomials
    e = np.exp((lam - mu) * t)
    b1 = mu * (e - 1) / (lam * e - mu)
    b2 = lam * (e - 1) / (lam * e - mu)
    if j == 0:
        return b1 ** i
    return sum(comb(i, k) * comb(j - 1, i - k - 1) * b1 ** k
               * ((1 - b1) * (1 - b2)) ** (i - k) * b2 ** (j - i + k)
               for k in range(max(0, i - j), i))


@pytest.mark.parametrize("i,j", [(3, 5), (4, 2), (2, 2)])
def test_linear_transform_against_quadrature(i, j):
    lam, mu, s = 0.6, 0.4, 1.0
    # the integrand is below 1e-30 beyond t = 80
    want = quad(lambda t: np.exp(-s * t) * _linear_pmf(i, j, lam, mu, t), 0, 80,
                epsabs=1e-13, epsrel=1e-12, limit=400)[0]
    got = transform_pij(builtin_model("linear"), (lam, mu), i, j, s, lentz_eps=1e-14)
    assert abs(got.real - want) < 1e-8


def test_verhulst_transform_against_expm_quadrature():
    m = builtin_model("Verhulst")
    p = (0.8, 0.4, 0.025, 0.0)
    gen = build_generator(m, p, TruncationWindow(0, 40))
    want = quad(lambda t: np.exp(-t) * transition_matrix(gen, t)[15, 10], 0, 60,
                epsabs=1e-12, limit=400)[0]
    got = transform_pij(m, p, 15, 10, 1.0, lentz_eps=1e-12)
    assert abs(got.real - want) < 1e-6


def test_transform_matrix_matches_entries():
    m = builtin_model("Verhulst")
    p = (0.8, 0.4, 0.025, 0.0)
    s = np.array([1.0, 2.0 + 1j])
    M = transform_matrix(m, p, 5, 12, s, lentz_eps=1e-12)
    for i in (5, 8, 12):
        for j in (5, 9, 12):
            np.testing.assert_allclose(M[:, i - 5, j - 5],
                                       transform_pij(m, p, i, j, s, lentz_eps=1e-12),
                                       rtol=1e-9)


def test_diagonal_branches_agree():
    # for i == j both product branches are empty
    m = builtin_model("linear")
    a = transform_pij(m, (0.5, 0.45), 4, 4, 1.5)
    b = 1.0 / (1.5 + 0.0)
    assert np.isfinite(a) and a.real < b
