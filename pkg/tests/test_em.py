import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bdpkit.estimate import DiscreteLikelihood, ObservedData, ParamMap, em_expected_stats
from bdpkit.estimate.em import ACCELERATORS, TECHNIQUES, em_estimate
from bdpkit.models import builtin_model
from bdpkit.simulate import simulate_discrete

VER = builtin_model("Verhulst")
VP = (0.8, 0.4, 0.025, 0.0)


def _check_conservation(st_, dt, z_prev, z_next, tol=1e-6):
    assert st_.H.sum() == pytest.approx(dt, abs=tol)
    assert st_.U.sum() - st_.D.sum() == pytest.approx(z_next - z_prev, abs=tol)


@pytest.mark.parametrize("technique", TECHNIQUES)
def test_conservation_random_transitions(technique):
    rng = np.random.default_rng(12)
    for _ in range(100):
        z_prev = int(rng.integers(2, 30))
        dt = float(rng.uniform(0.1, 1.5))
        z_next = int(simulate_discrete(VER, VP, z_prev, [0, dt], seed=int(rng.integers(1e9)))[0, 1])
        st_ = em_expected_stats(VER, VP, z_prev, z_next, dt, technique, z_trunc=(0, 60))
        _check_conservation(st_, dt, z_prev, z_next)


def test_techniques_agree_on_30_state_toy():
    out = {t: em_expected_stats(VER, VP, 12, 17, 1.0, t, z_trunc=(0, 29)) for t in TECHNIQUES}
    for a in TECHNIQUES:
        for b in TECHNIQUES:
            for name in ("U", "D", "H"):
                np.testing.assert_allclose(getattr(out[a], name), getattr(out[b], name),
                                           atol=1e-4)


def test_pure_death_bridge_against_simulation():
    # 2 -> 1 over one time unit with nu = 1 on the window {0, 1, 2}
    pd = builtin_model("pure-death")
    stats = {t: em_expected_stats(pd, (1.0,), 2, 1, 1.0, t, z_trunc=(0, 2)) for t in TECHNIQUES}
    for t in TECHNIQUES[1:]:
        np.testing.assert_allclose(stats[t].H, stats["expm"].H, atol=1e-4)
    rng = np.random.default_rng(99)
    n = 1_000_000
    t1 = rng.exponential(0.5, n)
    t2 = t1 + rng.exponential(1.0, n)
    keep = (t1 < 1.0) & (t2 > 1.0)
    h2 = t1[keep]
    se = h2.std() / np.sqrt(h2.size)
    assert abs(stats["expm"].H[2] - h2.mean()) < 3 * se
    assert stats["expm"].D[2] == pytest.approx(1.0, abs=1e-8)
    assert stats["expm"].D[1] == pytest.approx(0.0, abs=1e-8)


def test_pruning():
    st_ = em_expected_stats(VER, VP, 12, 13, 0.5, "expm", j_tol=1e-2, h_tol=1e-2)
    assert np.all((st_.U == 0) | (st_.U >= 1e-2))
    assert np.all((st_.H == 0) | (st_.H >= 1e-2))


def test_unknown_technique():
    with pytest.raises(ValueError):
        em_estimate(VER, ObservedData([0, 1], [3, 4]), ParamMap(4), [0.5, 0.3, 0.01, 0],
                    [(0, 1)] * 4, technique="mcmc")


def _short_verhulst():
    times = np.arange(0, 30.0)
    z = simulate_discrete(VER, VP, 5, times, k=3, seed=7).astype(float)
    return ObservedData([times] * 3, list(z))


def test_em_ascent_plain():
    d = _short_verhulst()
    pm = ParamMap(4, [0.0], [3])
    out = em_estimate(VER, d, pm, [0.6, 0.3, 0.02], [(1e-6, 3), (1e-6, 3), (1e-6, 0.1)],
                      accelerator="none", max_it=15, i_tol=0, j_tol=0, h_tol=0)
    lik = DiscreteLikelihood(VER, d)
    vals = np.array([lik(p) for p in out["iterations"]])
    assert np.all(np.diff(vals) >= -1e-8)
    assert vals[-1] > vals[0]


def _poisson_toy():
    times = np.arange(0, 11.0)
    z = simulate_discrete(builtin_model("Poisson"), (2.0,), 0, times, k=2, seed=4)
    return ObservedData([times] * 2, list(z.astype(float)))


@pytest.mark.parametrize("accelerator", ACCELERATORS)
def test_accelerators_share_fixed_point(accelerator):
    d = _poisson_toy()
    want = sum(z[-1] - z[0] for z in d.p_data) / 20.0
    out = em_estimate(builtin_model("Poisson"), d, ParamMap(1), [0.5], [(0.01, 10)],
                      accelerator=accelerator, i_tol=1e-4, j_tol=0, h_tol=0, max_it=200,
                      z_trunc=(0, 80))
    assert out["x"][0] == pytest.approx(want, abs=10 * 1e-4)


def test_em_lange_recovers_verhulst(verhulst_data):
    t, z = verhulst_data
    from bdpkit.estimate import estimate
    amax = 1 / max(np.max(row) for row in z)
    r = estimate(t, z, [0.51, 0.5, 0.5 * amax], [(1e-6, 5), (1e-6, 5), (1e-6, amax)],
                 framework="em", model="Verhulst", known_p=[0], idx_known_p=[3],
                 con={"type": "ineq", "fun": lambda p: p[0] - p[1]},
                 technique="expm", accelerator="Lange")
    assert np.all(np.abs(r.p[:3] - np.array(VP[:3])) <= 3 * r.se)


@settings(max_examples=25, deadline=None)
@given(z_prev=st.integers(1, 25), z_next=st.integers(0, 25), dt=st.floats(0.05, 2.0),
       technique=st.sampled_from(TECHNIQUES))
def test_conservation_property(z_prev, z_next, dt, technique):
    st_ = em_expected_stats(VER, VP, z_prev, z_next, dt, technique, z_trunc=(0, 45))
    _check_conservation(st_, dt, z_prev, z_next)
    assert np.all(st_.U >= -1e-9) and np.all(st_.D >= -1e-9) and np.all(st_.H >= -1e-9)
