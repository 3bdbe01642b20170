import json
import math
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize

from mstcure.cure import (
    Baseline,
    ConvergenceWarning,
    EmConfig,
    IdentifiabilityWarning,
    LogisticCoxCure,
    conditional_mst,
    conditional_survival,
    e_step_weights,
    fit_logistic_cox,
    m_step_incidence,
    m_step_latency,
    observed_loglik,
)
from mstcure.data import SurvivalSample
from mstcure.exceptions import DegenerateError, RankDeficientError, SeparationError
from mstcure.resampling import substream
from mstcure.sim import get_setting, sample_group

from .conftest import cure_sample, sample

D = [(1, 1), (2, 1), (3, 0), (4, 0)]


def random_fit_sample(r, n=300):
    rng = substream(5, r)
    if r % 2:
        return sample_group(get_setting("II.1").group1, n, rng)
    return cure_sample(rng, n)


def cox_oracle(time, status, z):
    """Breslow partial likelihood coded with explicit risk sets, maximized by BFGS."""
    time, status, z = np.asarray(time), np.asarray(status), np.atleast_2d(z)
    ev = np.unique(time[status == 1])

    def negll(b):
        eta = z @ b
        val = 0.0
        for u in ev:
            d = (time == u) & (status == 1)
            risk = time >= u
            val += eta[d].sum() - d.sum() * math.log(np.exp(eta[risk]).sum())
        return -val

    res = minimize(negll, np.zeros(z.shape[1]), method="BFGS", options={"gtol": 1e-11})
    b = res.x
    inc = [((time == u) & (status == 1)).sum() / np.exp(z[time >= u] @ b).sum() for u in ev]
    return b, ev, np.array(inc)


def numeric_score(s, fit):
    out = []
    for which in ("gamma", "beta"):
        vec = getattr(fit, which)
        for j in range(vec.shape[0]):
            h = 1e-6 * (1 + abs(vec[j]))
            vals = []
            for sign in (1, -1):
                v = vec.copy()
                v[j] += sign * h
                g, b = (v, fit.beta) if which == "gamma" else (fit.gamma, v)
                vals.append(observed_loglik(s, g, b, fit.baseline))
            out.append((vals[0] - vals[1]) / (2 * h))
    return np.array(out)


# ------------------------------------------------------------------ E-step


def test_e_step_hand_values():
    # pi = 0.5 with gamma = 0; baseline chosen so that S_u(3) = 0.5
    s = SurvivalSample([1.0, 3.0, 9.0], [1, 0, 0], x=np.zeros((3, 1)), z=np.zeros((3, 1)))
    base = Baseline(np.array([1.0, 4.0]), np.array([math.log(2.0), 2.0]))
    w = e_step_weights(s, [0.0, 0.0], [0.0], base)
    assert w[0] == 1.0
    assert w[1] == pytest.approx(1 / 3)
    assert w[2] == 0.0  # beyond the last step: zero tail


# ------------------------------------------------------------------ incidence M-step


@pytest.mark.parametrize("wval,expected", [(0.5, 0.0), (0.75, math.log(3.0))])
def test_incidence_intercept_only(wval, expected):
    g = m_step_incidence(np.ones((10, 1)), np.full(10, wval))
    assert g[0] == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("wval", [0.0, 1.0])
def test_incidence_separation(wval):
    with pytest.raises(SeparationError):
        m_step_incidence(np.ones((10, 1)), np.full(10, wval))


def test_incidence_rank_deficient():
    x = np.column_stack([np.ones(6), np.ones(6)])
    with pytest.raises(RankDeficientError, match="rank-deficient"):
        m_step_incidence(x, np.full(6, 0.5))


def test_incidence_matches_scipy():
    rng = np.random.default_rng(2)
    x = np.column_stack([np.ones(80), rng.normal(size=(80, 2))])
    w = rng.uniform(0.05, 0.95, 80)
    g = m_step_incidence(x, w)

    def nll(b):
        eta = x @ b
        return -np.sum(w * eta - np.logaddexp(0.0, eta))

    ref = minimize(nll, np.zeros(3), method="BFGS", options={"gtol": 1e-11}).x
    assert np.allclose(g, ref, atol=1e-6)


# ------------------------------------------------------------------ latency M-step


def test_nelson_aalen_example_d():
    s = SurvivalSample([t for t, _ in D], [d for _, d in D], z=np.zeros((4, 1)))
    with pytest.raises(RankDeficientError):
        m_step_latency(s, np.zeros((4, 1)), np.ones(4))
    # beta is not identified with a constant z, so compare the Breslow step at beta = 0 directly
    from mstcure import _emkernels as K
    from mstcure.cure import _Design

    d = _Design(s, z=np.zeros((4, 1)))
    inc = K.breslow(d.z, d.delta, np.ones(4), d.ev_start, d.ev_d, np.zeros(1))
    assert np.allclose(np.cumsum(inc), [0.25, 7 / 12])


def test_halved_weight_brute_force():
    rng = np.random.default_rng(4)
    n = 12
    z = rng.normal(size=(n, 1))
    time = rng.exponential(size=n).round(2) + 0.01
    status = np.array([1, 0] * 6)
    s = SurvivalSample(time, status, z=z)
    w = np.where(status == 1, 1.0, 0.8)
    w2 = w.copy()
    target = int(np.flatnonzero(status == 0)[0])
    w2[target] *= 0.5
    beta = np.array([0.4])
    from mstcure import _emkernels as K
    from mstcure.cure import _Design

    d = _Design(s, z=z)
    for weights in (w, w2):
        inc = K.breslow(d.z, d.delta, np.ascontiguousarray(weights[d.order]), d.ev_start, d.ev_d, beta)
        brute = []
        for u in d.event_times:
            risk = time >= u
            denom = np.sum(weights[risk] * np.exp(z[risk, 0] * beta[0]))
            brute.append(np.sum((time == u) & (status == 1)) / denom)
        assert np.allclose(inc, brute, rtol=1e-13)
    inc1 = K.breslow(d.z, d.delta, np.ascontiguousarray(w[d.order]), d.ev_start, d.ev_d, beta)
    inc2 = K.breslow(d.z, d.delta, np.ascontiguousarray(w2[d.order]), d.ev_start, d.ev_d, beta)
    affected = d.event_times <= time[target]
    assert np.all(inc2[affected] > inc1[affected])
    assert np.array_equal(inc2[~affected], inc1[~affected])


@pytest.mark.parametrize("seed", range(5))
def test_plain_cox_reduction(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 51))
    z = rng.normal(size=(n, 2))
    t = np.round(rng.exponential(size=n) / np.exp(z @ [0.5, -0.3]), 1) + 0.1  # rounding creates ties
    status = (rng.random(n) < 0.7).astype(int)
    s = SurvivalSample(t, status, z=z)
    beta, base = m_step_latency(s, z, np.ones(n))
    b_ref, ev, inc_ref = cox_oracle(t, status, z)
    assert np.allclose(beta, b_ref, atol=1e-6)
    assert np.array_equal(base.times, ev)
    assert np.allclose(base.increments, inc_ref, atol=1e-6)


def test_latency_singular_z():
    s = SurvivalSample([1, 2, 3, 4], [1, 1, 0, 1], z=np.ones((4, 1)))
    with pytest.raises(RankDeficientError):
        m_step_latency(s, np.ones((4, 1)), np.ones(4))


def test_latency_no_events():
    s = SurvivalSample([1, 2], [0, 0], z=[[0.0], [1.0]])
    with pytest.raises(DegenerateError):
        m_step_latency(s, s.z, np.ones(2))


# ------------------------------------------------------------------ log-likelihood


def test_loglik_plateau_record():
    s = SurvivalSample([1.0, 5.0], [1, 0], x=[[0.3], [0.7]], z=[[0.0], [0.0]])
    base = Baseline(np.array([1.0]), np.array([0.5]))
    g = np.array([0.2, -0.4])
    full = observed_loglik(s, g, [0.1], base)
    eta0 = g[0] + g[1] * 0.3
    # event density dLambda(Y) exp(beta z) S_u(Y | z), with S_u(1) = exp(-0.5)
    ev = eta0 - math.log1p(math.exp(eta0)) + math.log(0.5) - 0.5
    eta1 = g[0] + g[1] * 0.7
    assert full == pytest.approx(ev - math.log1p(math.exp(eta1)))


def test_loglik_event_off_step():
    s = SurvivalSample([1.0, 2.0], [1, 1], x=np.zeros((2, 0)), z=np.zeros((2, 1)))
    with pytest.raises(ValueError, match="zero density"):
        observed_loglik(s, [0.0], [0.0], Baseline(np.array([1.0]), np.array([0.5])))


# ------------------------------------------------------------------ full EM


def test_em_properties_random_datasets():
    worst_asc, worst_w, worst_score = 0.0, 0.0, 0.0
    for r in range(12):
        s = random_fit_sample(r)
        fit = fit_logistic_cox(s, keep_path=True, check=False)
        assert fit.converged
        worst_asc = min(worst_asc, float(np.min(np.diff(fit.loglik_path))))
        for g, b, c in zip(fit.gamma_path, fit.beta_path, fit.cumhaz_path):
            w = e_step_weights(s, g, b, Baseline(fit.baseline.times, c))
            worst_w = min(worst_w, float(np.min(w - s.status)), float(np.min(1 - w)))
        worst_score = max(worst_score, float(np.max(np.abs(numeric_score(s, fit)))))
        assert np.all(fit.baseline.increments >= 0)
        assert fit.loglik == pytest.approx(observed_loglik(s, fit.gamma, fit.beta, fit.baseline))
    assert worst_asc >= -1e-10
    assert worst_w >= 0.0
    assert worst_score < 1e-4


def test_em_consistency_large_sample():
    s = sample_group(get_setting("II.1").group1, 2000, substream(2024, 1))
    fit = fit_logistic_cox(s, check=False)
    assert np.max(np.abs(fit.gamma - [0.0, 0.5, 0.8])) < 0.15
    assert np.max(np.abs(fit.beta - [0.3, 0.5])) < 0.15


def test_em_nonconvergence_warns():
    s = random_fit_sample(0)
    with pytest.warns(ConvergenceWarning):
        fit = fit_logistic_cox(s, config=EmConfig(max_iter=2), check=False)
    assert not fit.converged and fit.em_iterations == 2


def test_identifiability_warnings():
    s = SurvivalSample([1, 2, 3, 4, 5], [1, 0, 1, 1, 1], x=np.ones((5, 1)), z=[[0], [1], [0], [1], [2]])
    with pytest.warns(IdentifiabilityWarning):
        with pytest.raises(RankDeficientError):
            fit_logistic_cox(s)


def test_no_events_is_degenerate():
    s = SurvivalSample([1, 2, 3], [0, 0, 0], x=[[0], [1], [2]], z=[[0], [1], [2]])
    with pytest.raises(DegenerateError):
        fit_logistic_cox(s, check=False)


def test_column_selection_and_json():
    s = random_fit_sample(1)
    fit = fit_logistic_cox(s, x_cols=[0], z_cols=[1], check=False)
    assert fit.gamma.shape == (2,) and fit.beta.shape == (1,)
    d = json.loads(fit.to_json())
    assert {"gamma", "beta", "baseline", "converged", "iterations", "loglik", "schema_version"} <= set(d)
    assert d["baseline"][0].keys() == {"time", "cumhaz"}


# ------------------------------------------------------------------ conditional quantities


def test_conditional_survival_and_mst():
    s = random_fit_sample(3)
    fit = fit_logistic_cox(s, check=False)
    z = np.array([0.3, 1.0])
    assert conditional_survival(fit, z, 0.0) == 1.0
    assert conditional_survival(fit, z, fit.last_event_time + 1e-9) == 0.0
    grid = np.linspace(0, fit.last_event_time, 500)
    assert np.all(np.diff(conditional_survival(fit, z, grid)) <= 0)
    # midpoint Riemann oracle over the step function
    n = 2_000_000
    h = fit.last_event_time / n
    mid = (np.arange(n) + 0.5) * h
    riemann = np.sum(conditional_survival(fit, z, mid)) * h
    assert conditional_mst(fit, z) == pytest.approx(riemann, abs=1e-6)
    with pytest.raises(ValueError):
        conditional_mst(fit, [1.0])


def test_beta_zero_collapse():
    fit = fit_logistic_cox(random_fit_sample(3), check=False)
    fit.beta = np.zeros(2)
    vals = [conditional_mst(fit, z) for z in ([0, 0], [3, 1], [-2, 0.5])]
    assert max(vals) - min(vals) == 0.0
    assert conditional_survival(fit, [5, 1], 0.5) == conditional_survival(fit, [0, 0], 0.5)


def test_estimator_front_end():
    s = random_fit_sample(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IdentifiabilityWarning)
        est = LogisticCoxCure().fit(s)
    assert est.get_params()["tol"] == 1e-7
    assert est.predict_uncured_proba([[0.0, 1.0]]).shape == (1,)
    assert est.conditional_mst([0.0, 1.0]) == pytest.approx(conditional_mst(est.fit_, [0.0, 1.0]))
