import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bdpkit.estimate import ObservedData, estimate
from bdpkit.models import builtin_model, custom_model
from bdpkit.simulate import simulate_discrete
from bdpkit.uncertainty import (asymptotic_cov, confidence_ellipse, forecast, nearest_psd,
                                sample_parameters, simulated_cov)


def test_asymptotic_quadratic():
    rep = asymptotic_cov(lambda x: -x[0] ** 2, [0.3])
    np.testing.assert_allclose(rep.cov, [[0.5]], atol=1e-6)
    np.testing.assert_allclose(rep.se, [np.sqrt(0.5)], atol=1e-6)
    assert not rep.projected


def test_asymptotic_projection_warns():
    with pytest.warns(RuntimeWarning, match="projected"):
        rep = asymptotic_cov(lambda x: -x[0] ** 2 + x[1] ** 2, [0.1, 0.2])
    assert rep.projected
    assert np.isnan(rep.se[1])
    assert np.all(np.linalg.eigvalsh(rep.cov) >= -1e-12)


@settings(max_examples=40)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_nearest_psd_symmetric_psd(entries):
    C, _ = nearest_psd(np.array(entries).reshape(2, 2))
    np.testing.assert_allclose(C, C.T, atol=1e-12)
    assert np.linalg.eigvalsh(C).min() >= -1e-10


def test_se_is_sqrt_diag(robin):
    r = estimate(robin.t_data, robin.p_data, [0.5, 0.5], [(0, 1), (0, 1)], model="linear")
    np.testing.assert_array_equal(r.se, np.sqrt(np.diag(r.cov)))
    np.testing.assert_array_equal(r.cov, r.cov.T)


def test_simulated_cov_frozen_model():
    frozen = custom_model(lambda z, p: 0 * z + 0 * p[0], lambda z, p: 0 * z, 1)
    d = ObservedData([0, 1, 2], [4, 4, 4])
    rep = simulated_cov(lambda dd: np.array([0.7]), frozen, np.array([0.7]), d, 10, seed=1)
    np.testing.assert_allclose(rep.cov, 0.0, atol=1e-15)


def test_simulated_cov_failures_skipped():
    d = ObservedData([0, 1, 2], [4, 5, 6])
    calls = iter(range(100))

    def fit(_):
        if next(calls) % 4 == 0:
            raise ValueError("no fit")
        return np.array([1.0])

    rep = simulated_cov(fit, builtin_model("Poisson"), np.array([1.0]), d, 8, seed=0)
    assert "2 failed" in rep.message


def test_simulated_cov_too_many_failures():
    d = ObservedData([0, 1, 2], [4, 5, 6])

    def fit(_):
        raise ValueError("no fit")

    with pytest.raises(RuntimeError, match="failed"):
        simulated_cov(fit, builtin_model("Poisson"), np.array([1.0]), d, 6, seed=0)


def test_simulated_close_to_asymptotic():
    m = builtin_model("linear")
    times = np.arange(0, 8.0)
    z = simulate_discrete(m, (0.5, 0.3), 10, times, k=4, seed=8).astype(float)
    kw = dict(model="linear", framework="dnm", likelihood="gwa")
    a = estimate([times] * 4, list(z), [0.4, 0.4], [(0.01, 2), (0.01, 2)], **kw)
    s = estimate([times] * 4, list(z), [0.4, 0.4], [(0.01, 2), (0.01, 2)], se_type="simulated",
                 num_samples=40, seed=3, **kw)
    ratio = s.se / a.se
    assert np.all((ratio > 0.5) & (ratio < 2.0))


def test_ellipse_identity_radius():
    (pts,) = confidence_ellipse([0, 0], np.eye(2), [0.95])
    np.testing.assert_allclose(np.hypot(pts[:, 0], pts[:, 1]), np.sqrt(5.991464547), rtol=1e-8)


def test_ellipse_degenerate():
    (pts,) = confidence_ellipse([1.5, -2], np.zeros((2, 2)))
    np.testing.assert_array_equal(pts, np.tile([1.5, -2], (256, 1)))


def _inside(poly, pts):
    # even-odd ray casting
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    for (x1, y1), (x2, y2) in zip(poly, np.roll(poly, -1, axis=0)):
        cross = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xin = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= cross & (x < xin)
    return inside


def test_ellipse_coverage():
    mean = np.array([1.0, 2.0])
    cov = np.array([[2.0, 0.8], [0.8, 1.0]])
    (poly,) = confidence_ellipse(mean, cov, [0.95], n_points=1024)
    draws = np.random.default_rng(1).multivariate_normal(mean, cov, 100000)
    assert abs(_inside(poly[:-1], draws).mean() - 0.95) < 0.005


def test_sample_parameters_respect_bounds():
    X = sample_parameters([0.5, 0.5], np.eye(2), 500, [(0, 1), (0, 1)],
                          [{"type": "ineq", "fun": lambda x: x[0] - x[1]}], rng=0)
    assert X.shape == (500, 2)
    assert np.all((X >= 0) & (X <= 1)) and np.all(X[:, 0] >= X[:, 1])


def test_poisson_fm_forecast_is_linear():
    times = np.array([2.0, 3.0, 5.0, 10.0])
    b = forecast("Poisson", 7, times, [1.3], method="fm", k=20)
    want = 7 + 1.3 * (times - times[0])
    for col in range(len(b.percentiles)):
        np.testing.assert_allclose(b.values[:, col], want, rtol=1e-10)


@pytest.mark.parametrize("interval,method", [("confidence", "fm"), ("confidence", "gwa"),
                                             ("prediction", "gwa"), ("prediction", "exact")])
def test_percentiles_monotone(interval, method):
    b = forecast("Verhulst", 10, np.arange(0, 11.0), [0.8, 0.4, 0.025, 0],
                 cov=np.diag([0.01, 0.005, 1e-5]), known_p=[0], idx_known_p=[3],
                 p_bounds=[(0, 2), (0, 2), (0, 0.05)], interval=interval, method=method,
                 k=200, n=20, seed=4)
    assert np.all(np.diff(b.values, axis=1) >= 0)


def test_band_collapse_without_spread():
    b = forecast("Verhulst", 10, np.arange(0, 11.0), [0.8, 0.4, 0.025, 0],
                 cov=np.zeros((4, 4)), k=100, seed=1)
    np.testing.assert_allclose(b.values.max(axis=1), b.values.min(axis=1), atol=1e-12)


def test_forecast_method_validation():
    with pytest.raises(ValueError, match="not available"):
        forecast("Poisson", 3, [0, 1], [1.0], interval="prediction", method="fm")


def test_svg_written(tmp_path):
    b = forecast("Poisson", 3, [0, 1, 2], [1.0], k=5)
    out = tmp_path / "bands.svg"
    b.to_svg(out, observed=([0, 1], [3, 4]))
    text = out.read_text()
    assert text.startswith("<svg") and text.count("<polyline") == len(b.percentiles) + 1
