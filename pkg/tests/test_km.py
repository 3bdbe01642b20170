import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mstcure.data import TwoSampleDataset
from mstcure.exceptions import DegenerateError
from mstcure.km import KaplanMeier, eval_survival, eval_v_hat, fit_km, fit_pooled

from .conftest import sample, survival_samples

D = [(1, 1), (2, 1), (3, 0), (4, 0)]


def km_oracle(time, status):
    """Product-limit estimate by direct loops over distinct event times."""
    out_t, out_s, out_v = [], [], []
    s, v, n = 1.0, 0.0, len(time)
    for u in sorted({t for t, d in zip(time, status) if d == 1}):
        r = sum(1 for t in time if t >= u)
        d = sum(1 for t, e in zip(time, status) if t == u and e == 1)
        s *= 1.0 - d / r
        if r > d:
            v += n * d / (r * (r - d))
        out_t.append(u)
        out_s.append(s)
        out_v.append(v)
    return out_t, out_s, out_v


def test_hand_example_d():
    f = fit_km(sample(D))
    assert list(f.event_times) == [1.0, 2.0]
    assert np.allclose(f.survival, [0.75, 0.5])
    assert f.cure_fraction == 0.5
    assert f.last_event_time == 2.0
    assert np.allclose(f.v_hat, [1 / 3, 1.0])
    assert list(f.at_risk) == [4, 3] and list(f.events) == [1, 1]


def test_no_censoring_hand():
    f = fit_km(sample([(1, 1), (2, 1), (3, 1)]))
    assert np.allclose(f.survival, [2 / 3, 1 / 3, 0.0])
    assert f.cure_fraction == 0.0
    # last increment skipped because the risk set is exhausted
    assert np.allclose(f.v_hat, [0.5, 2.0, 2.0])


def test_eval_survival_steps():
    f = fit_km(sample(D))
    assert eval_survival(f, 0.0) == 1.0
    assert eval_survival(f, 1.5) == 0.75
    assert eval_survival(f, 100.0) == 0.5
    assert eval_survival(f, 1.0) == 0.75  # right-continuous
    assert np.allclose(f([0.5, 2.0]), [1.0, 0.5])
    with pytest.raises(ValueError):
        eval_survival(f, -1.0)
    assert eval_v_hat(f, 0.5) == 0.0


def test_tied_event_and_censoring_stay_at_risk():
    f = fit_km(sample([(1, 1), (1, 0), (2, 1), (3, 0)]))
    assert f.at_risk[0] == 4
    assert np.allclose(f.survival, [0.75, 0.375])


def test_tied_events_aggregate():
    f = fit_km(sample([(1, 1), (1, 1), (2, 0)]))
    assert f.events[0] == 2 and f.n_steps == 1
    assert np.isclose(f.survival[0], 1 / 3)


def test_pooled_hand():
    s2 = sample([(1, 1), (2, 1), (3, 1)], 2)
    f = fit_pooled(TwoSampleDataset(sample(D), s2))
    assert f.n == 7
    assert f.at_risk[0] == 7 and f.events[0] == 2
    assert np.isclose(f.survival[0], 5 / 7)


def test_pooled_identical_equals_duplicated():
    s = sample(D)
    f = fit_pooled(TwoSampleDataset(s, sample(D, 2)))
    g = fit_km(sample(D + D))
    assert np.array_equal(f.survival, g.survival)
    assert np.array_equal(f.v_hat, g.v_hat)


@pytest.mark.parametrize("pairs", [[(1, 0), (2, 0)], [(3, 0), (3, 0), (3, 0)]])
def test_no_events_error(pairs):
    with pytest.raises(DegenerateError):
        fit_km(sample(pairs))


def test_csv_export():
    text = fit_km(sample(D)).to_csv().splitlines()
    assert text[0] == "time,survival,at_risk,events,v_hat"
    assert text[1] == "1.0,0.75,4,1,0.3333333333333333"


def test_estimator_wrapper():
    km = KaplanMeier().fit([1, 2, 3, 4], [1, 1, 0, 0])
    assert km.cure_fraction_ == 0.5
    assert km.predict(1.5) == 0.75
    arr = np.array(D, dtype=float)
    assert KaplanMeier().fit(arr).cure_fraction_ == 0.5
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        KaplanMeier().predict(1.0)


@given(survival_samples(max_n=40, grid=True))
def test_matches_loop_oracle(s):
    f = fit_km(s)
    t, surv, v = km_oracle(list(s.time), list(s.status))
    assert np.allclose(f.event_times, t)
    assert np.allclose(f.survival, surv, rtol=1e-12, atol=1e-14)
    assert np.allclose(f.v_hat, v, rtol=1e-12)


def test_monotone_on_200_random_samples():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(2, 60))
        t = np.round(rng.exponential(2.0, n), 1)
        d = (rng.random(n) < 0.6).astype(int)
        d[0] = 1
        f = fit_km(sample(list(zip(t, d))))
        assert np.all(np.diff(f.survival) <= 0)
        assert np.all((f.survival >= 0) & (f.survival <= 1))
        assert np.all(np.diff(f.v_hat) >= 0)
        assert np.all(np.isfinite(f.v_hat))


@given(survival_samples(), st.sampled_from([0.5, 2.0, 3.7]))
def test_scale_equivariance(s, c):
    f, g = fit_km(s), fit_km(s.scaled(c))
    assert np.array_equal(f.survival, g.survival)
    assert np.array_equal(f.v_hat, g.v_hat)
    assert np.allclose(g.event_times, c * f.event_times)


@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=30, unique=True))
def test_no_censoring_reduction(times):
    n = len(times)
    f = fit_km(sample([(t, 1) for t in times]))
    for t in f.event_times:
        assert eval_survival(f, t) == pytest.approx(sum(1 for u in times if u > t) / n, abs=1e-12)
