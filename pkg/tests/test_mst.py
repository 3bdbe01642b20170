import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mstcure.data import SurvivalSample, TwoSampleDataset
from mstcure.exceptions import DegenerateError
from mstcure.km import eval_survival, eval_v_hat, fit_km
from mstcure.mst import (
    PooledSplitter,
    estimate,
    mst_uncured,
    sigma_sq_plugin,
    sigma_sq_terms,
    two_sample_estimate,
)
from mstcure.resampling import substream
from mstcure.sim import get_setting, sample_setting

from .conftest import datasets, sample, survival_samples

D = [(1, 1), (2, 1), (3, 0), (4, 0)]


def brute_force_sigma_sq(fit):
    """Double sum over the grid of constancy intervals, written straight from the variance formula."""
    p = fit.cure_fraction
    edges = np.concatenate([[0.0], fit.event_times])
    s = np.concatenate([[1.0], fit.survival])[:-1]
    v = np.concatenate([[0.0], fit.v_hat])[:-1]
    length = np.diff(edges)
    m = len(length)
    mst = sum(length[k] * (s[k] - p) for k in range(m)) / (1 - p)
    tau = edges[-1]
    double = 0.0
    for j in range(m):
        for k in range(m):
            double += length[j] * length[k] * s[j] * s[k] * v[min(j, k)]
    term1 = double / (1 - p) ** 2
    term2 = p**2 / (1 - p) ** 2 * (mst - tau) ** 2 * fit.v_hat[-1]
    term3 = 2 * p / (1 - p) ** 2 * (mst - tau) * sum(length[k] * s[k] * v[k] for k in range(m))
    return mst, term1, term2, term3


def test_mst_example_d():
    f = fit_km(sample(D))
    assert mst_uncured(f).value == pytest.approx(1.5, abs=1e-14)
    t = sigma_sq_terms(f)
    assert t.plateau == pytest.approx(0.25, abs=1e-14)
    assert t.integral == pytest.approx(0.75, abs=1e-14)
    assert t.cross == pytest.approx(-0.5, abs=1e-14)
    assert sigma_sq_plugin(f) == pytest.approx(0.5, abs=1e-14)


def test_mst_no_censoring_is_mean():
    f = fit_km(sample([(1, 1), (2, 1), (3, 1)]))
    assert mst_uncured(f).value == pytest.approx(2.0)
    t = sigma_sq_terms(f)
    assert t.plateau == 0.0 and t.cross == 0.0


def test_degenerate_mass():
    # a single event exhausts the risk set, so p_hat = 0
    assert mst_uncured(fit_km(sample([(1, 1)]))).value == 1.0
    f = fit_km(sample([(1, 1), (2, 0)]))
    assert mst_uncured(f).value == 1.0
    with pytest.raises(DegenerateError, match="no estimated uncured mass"):
        mst_uncured(f, eps=0.6)


def test_brute_force_example_d():
    f = fit_km(sample(D))
    mst, t1, t2, t3 = brute_force_sigma_sq(f)
    assert sigma_sq_plugin(f) == pytest.approx(t1 + t2 + t3, abs=1e-12)


@given(survival_samples(max_n=40))
def test_brute_force_oracle(s):
    f = fit_km(s)
    if f.cure_fraction >= 1 - 1e-10:
        return
    mst, t1, t2, t3 = brute_force_sigma_sq(f)
    terms = sigma_sq_terms(f)
    assert mst_uncured(f).value == pytest.approx(mst, rel=1e-12, abs=1e-12)
    assert terms.integral == pytest.approx(t1, rel=1e-11, abs=1e-12)
    assert terms.plateau == pytest.approx(t2, rel=1e-11, abs=1e-12)
    assert terms.cross == pytest.approx(t3, rel=1e-11, abs=1e-12)
    assert sigma_sq_plugin(f) >= -1e-12


@given(survival_samples(max_n=30, grid=True))
def test_riemann_oracle(s):
    """Midpoint Riemann sums with step 1e-4 times the time range [0, 10]; integer jumps fall on cell edges."""
    f = fit_km(s)
    if f.cure_fraction >= 1 - 1e-10:
        return
    h = 10.0 * 1e-4
    grid = (np.arange(round(f.last_event_time / h)) + 0.5) * h
    surv = eval_survival(f, grid)
    p = f.cure_fraction
    mst = np.sum(surv - p) * h / (1 - p)
    assert mst_uncured(f).value == pytest.approx(mst, abs=1e-6)
    # coarser grid for the double integral (still a multiple of the lattice)
    h2 = 0.005
    g2 = (np.arange(round(f.last_event_time / h2)) + 0.5) * h2
    s2, v2 = eval_survival(f, g2), eval_v_hat(f, g2)
    vmin = v2[np.minimum.outer(np.arange(g2.size), np.arange(g2.size))]
    t1 = (s2 @ vmin @ s2) * h2 * h2 / (1 - p) ** 2
    tau = f.last_event_time
    mst2 = np.sum(s2 - p) * h2 / (1 - p)
    t2 = p**2 / (1 - p) ** 2 * (mst2 - tau) ** 2 * f.v_hat[-1]
    t3 = 2 * p / (1 - p) ** 2 * (mst2 - tau) * np.sum(s2 * v2) * h2
    assert sigma_sq_plugin(f) == pytest.approx(t1 + t2 + t3, rel=1e-9, abs=1e-9)


def test_two_sample_basic():
    s = sample(D)
    r = estimate(TwoSampleDataset(s, sample(D, 2)))
    assert r.m_hat == 0.0 and r.t_stat == 0.0
    rng = np.random.default_rng(0)
    big = SurvivalSample(rng.exponential(size=200), np.ones(200, int))
    assert TwoSampleDataset(big, big.take(slice(None), 2)).a_n == 10.0


def test_two_sample_variance_weights():
    f1 = fit_km(sample(D))
    f2 = fit_km(sample([(1, 1), (2, 1), (3, 1)]))
    r = two_sample_estimate(f1, f2)
    v1, v2 = sigma_sq_plugin(f1), sigma_sq_plugin(f2)
    assert r.sigma_hat**2 == pytest.approx(3 / 7 * v1 + 4 / 7 * v2)
    assert r.m_hat == pytest.approx(-0.5)
    assert r.a_n == pytest.approx(np.sqrt(12 / 7))


def test_degenerate_studentization():
    one = sample([(1, 1)])
    with pytest.raises(DegenerateError, match="degenerate studentization"):
        estimate(TwoSampleDataset(one, sample([(2, 1)], 2)))


@given(datasets(), st.sampled_from([0.25, 2.0, 4.0]))
def test_scale_equivariance(ds, c):
    try:
        r = estimate(ds)
    except DegenerateError:
        return
    q = estimate(ds.scaled(c))
    assert q.m_hat == pytest.approx(c * r.m_hat, rel=1e-12, abs=1e-12)
    assert q.sigma_hat == pytest.approx(c * r.sigma_hat, rel=1e-12)
    assert q.t_stat == pytest.approx(r.t_stat, rel=1e-10, abs=1e-12)


@given(datasets())
def test_swap_antisymmetry(ds):
    try:
        r = estimate(ds)
    except DegenerateError:
        return
    q = estimate(ds.swapped())
    assert q.m_hat == -r.m_hat
    assert q.sigma_hat == pytest.approx(r.sigma_hat, rel=1e-12)
    assert q.t_stat == pytest.approx(-r.t_stat, rel=1e-12, abs=1e-14)


@given(datasets())
def test_splitter_matches_direct(ds):
    sp = PooledSplitter(ds)
    ok, m, sig = sp.statistic(sp.identity_member())
    try:
        r = estimate(ds)
    except DegenerateError:
        assert not ok
        return
    assert ok
    assert m == pytest.approx(r.m_hat, rel=1e-12, abs=1e-13)
    assert sig == pytest.approx(r.sigma_hat, rel=1e-12)


def test_monte_carlo_calibration_setting_1():
    spec = get_setting("I.1")
    truth = spec.true_m()
    z, sig = [], []
    for r in range(400):
        res = estimate(sample_setting(spec, 200, 200, substream(11, r)))
        z.append(res.a_n * (res.m_hat - truth))
        sig.append(res.sigma_hat)
    assert np.std(z, ddof=1) == pytest.approx(np.mean(sig), rel=0.10)
