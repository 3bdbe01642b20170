"""Logistic-Cox mixture cure model fitted by EM under the zero-tail constraint.

The probability of being uncured is ``expit(gamma' (1, x))`` and the
uncured follow a Cox model with baseline cumulative hazard ``Lambda``,
estimated by a weighted Breslow step function. Beyond the last event time
the uncured survival is set to zero, so plateau observations are classified
as cured.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import _emkernels as K
from .data import SurvivalSample
from .exceptions import DegenerateError, FitError, RankDeficientError, SeparationError

SCHEMA_VERSION = 1


class IdentifiabilityWarning(UserWarning):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EmConfig:
    tol: float = 1e-7
    max_iter: int = 500
    newton_tol: float = 1e-10
    newton_max_steps: int = 50

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.newton_tol > 0 or self.newton_max_steps < 1:
            raise ValueError("invalid Newton settings")


@dataclass(frozen=True, eq=False)
class Baseline:
    """Cumulative baseline hazard as a right-continuous step function."""

    times: np.ndarray
    cumhaz: np.ndarray

    @classmethod
    def from_increments(cls, times, increments) -> "Baseline":
        return cls(np.asarray(times, dtype=float), np.cumsum(np.asarray(increments, dtype=float)))

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.cumhaz, prepend=0.0)

    @property
    def last_time(self) -> float:
        return float(self.times[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        vals = np.concatenate([[0.0], self.cumhaz])[idx]
        return float(vals) if vals.ndim == 0 else vals


@dataclass(eq=False)
class LogisticCoxFit:
    gamma: np.ndarray
    beta: np.ndarray
    baseline: Baseline
    em_iterations: int
    loglik_path: np.ndarray
    converged: bool
    n: int = 0
    metadata: dict = field(default_factory=dict)
    gamma_path: np.ndarray | None = None
    beta_path: np.ndarray | None = None
    cumhaz_path: np.ndarray | None = None

    @property
    def last_event_time(self) -> float:
        return self.baseline.last_time

    @property
    def loglik(self) -> float:
        return float(self.loglik_path[-1])

    def uncured_probability(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return 1.0 / (1.0 + np.exp(-(self.gamma[0] + x @ self.gamma[1:])))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "gamma": self.gamma.tolist(),
            "beta": self.beta.tolist(),
            "baseline": [{"time": float(t), "cumhaz": float(c)} for t, c in zip(self.baseline.times, self.baseline.cumhaz)],
            "converged": bool(self.converged),
            "iterations": int(self.em_iterations),
            "loglik": self.loglik,
            **self.metadata,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


class _Design:
    """Sorted arrays and event-time bookkeeping shared by the EM kernels."""

    def __init__(self, sample: SurvivalSample, x=None, z=None, grid=None):
        x = sample.x if x is None else np.asarray(x, dtype=float).reshape(sample.n, -1)
        z = sample.z if z is None else np.asarray(z, dtype=float).reshape(sample.n, -1)
        order = np.argsort(sample.time, kind="stable")
        self.order = order
        self.time = np.ascontiguousarray(sample.time[order])
        self.delta = np.ascontiguousarray(sample.status[order].astype(np.int64))
        self.x = np.ascontiguousarray(np.column_stack([np.ones(sample.n), x[order]]))
        self.z = np.ascontiguousarray(z[order], dtype=float)
        if grid is None:
            ev = self.time[self.delta == 1]
            if ev.size == 0:
                raise DegenerateError("no events: latency model cannot be fitted")
            self.event_times, counts = np.unique(ev, return_counts=True)
            self.ev_d = counts.astype(float)
            self.ev_start = np.searchsorted(self.time, self.event_times, side="left").astype(np.int64)
        else:
            self.event_times = np.asarray(grid, dtype=float)
        self.k = np.searchsorted(self.event_times, self.time, side="right").astype(np.int64)
        self.t_last = float(self.event_times[-1])

    def unsort(self, values):
        out = np.empty_like(values)
        out[self.order] = values
        return out


def _raise_status(status: int):
    if status == K.INC_SINGULAR:
        raise RankDeficientError("incidence design rank-deficient")
    if status == K.INC_DIVERGED:
        raise SeparationError("incidence Newton diverged (quasi-separation)")
    if status == K.LAT_SINGULAR:
        raise RankDeficientError("latency information singular: z has no within-risk-set variation")
    if status == K.LAT_DIVERGED:
        raise FitError("latency Newton did not converge")


def e_step_weights(sample: SurvivalSample, gamma, beta, baseline: Baseline) -> np.ndarray:
    """Posterior probabilities of being uncured: 1 for events, 0 beyond the last baseline step."""
    d = _Design(sample, grid=baseline.times)
    w = K.e_step(d.time, d.delta, d.x, d.z, d.k, d.t_last,
                 np.asarray(gamma, float), np.asarray(beta, float), np.asarray(baseline.cumhaz, float))
    return d.unsort(w)


def m_step_incidence(x_matrix, w, gamma_init=None, config: EmConfig = EmConfig()) -> np.ndarray:
    """Weighted logistic maximum likelihood; ``x_matrix`` includes the intercept column."""
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(x_matrix, dtype=float)))
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("weights must lie in [0, 1]")
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise RankDeficientError("incidence design rank-deficient")
    g0 = np.zeros(x.shape[1]) if gamma_init is None else np.asarray(gamma_init, dtype=float)
    gamma, status = K.logistic_newton(x, w, g0, config.newton_tol, config.newton_max_steps)
    _raise_status(status)
    return gamma


def m_step_latency(sample: SurvivalSample, z_matrix, w, beta_init=None, config: EmConfig = EmConfig()):
    """Weighted Cox partial likelihood for beta, then the weighted Breslow baseline."""
    d = _Design(sample, z=z_matrix)
    w_sorted = np.ascontiguousarray(np.asarray(w, dtype=float)[d.order])
    b0 = np.zeros(d.z.shape[1]) if beta_init is None else np.asarray(beta_init, dtype=float)
    beta, status = K.cox_newton(d.z, d.delta, w_sorted, d.ev_start, d.ev_d, b0, config.newton_tol, config.newton_max_steps)
    _raise_status(status)
    inc = K.breslow(d.z, d.delta, w_sorted, d.ev_start, d.ev_d, beta)
    return beta, Baseline.from_increments(d.event_times, inc)


def observed_loglik(sample: SurvivalSample, gamma, beta, baseline: Baseline) -> float:
    """Observed-data log-likelihood with the event density dLambda(Y) exp(beta'z) S_u(Y|z)."""
    d = _Design(sample, grid=baseline.times)
    ev = d.delta == 1
    on_step = d.k[ev] > 0
    on_step[on_step] = d.event_times[d.k[ev][on_step] - 1] == d.time[ev][on_step]
    if not np.all(on_step):
        raise ValueError("zero density: an observed event time is not a step of the baseline")
    val = K.loglik(d.time, d.delta, d.x, d.z, d.k, d.t_last, np.asarray(gamma, float),
                   np.asarray(beta, float), baseline.increments, np.asarray(baseline.cumhaz, float))
    if val == -np.inf:
        raise ValueError("zero density: baseline step of size zero at an observed event time")
    return float(val)


def identifiability_warnings(sample: SurvivalSample, x=None, z=None) -> list[str]:
    """Cheap proxies for the identifiability conditions; returned and issued as warnings."""
    x = sample.x if x is None else np.asarray(x, dtype=float).reshape(sample.n, -1)
    z = sample.z if z is None else np.asarray(z, dtype=float).reshape(sample.n, -1)
    msgs = []
    if sample.n_events == 0:
        msgs.append("no events")
    for name, mat in (("x", x), ("z", z)):
        for j in range(mat.shape[1]):
            if np.ptp(mat[:, j]) == 0:
                msgs.append(f"{name} column {j} is constant")
    if sample.n_events:
        t_last = sample.time[sample.status == 1].max()
        if not np.any((sample.status == 0) & (sample.time > t_last)):
            msgs.append("no censored observations beyond the last event time (no plateau)")
    for msg in msgs:
        warnings.warn(msg, IdentifiabilityWarning, stacklevel=3)
    return msgs


def fit_logistic_cox(
    sample: SurvivalSample,
    x_cols=None,
    z_cols=None,
    config: EmConfig = EmConfig(),
    *,
    keep_path: bool = False,
    check: bool = True,
) -> LogisticCoxFit:
    """EM fit of the logistic-Cox cure model.

    Starts from a logistic regression of the event indicator on x and an
    unweighted Cox/Breslow fit; stops when the largest absolute change in
    gamma, beta and the cumulative hazard at event times is below ``tol``.
    ``x_cols``/``z_cols`` select columns of ``sample.x``/``sample.z``.
    """
    x = sample.x if x_cols is None else sample.x[:, list(x_cols)]
    z = sample.z if z_cols is None else sample.z[:, list(z_cols)]
    if sample.n_events == 0:
        raise DegenerateError("no events: latency model cannot be fitted")
    notes = identifiability_warnings(sample, x, z) if check else []
    d = _Design(sample, x, z)
    if np.linalg.matrix_rank(d.x) < d.x.shape[1]:
        raise RankDeficientError("incidence design rank-deficient")
    gamma, beta, dlam, iters, path, converged, status, gp, bp, cp = K.em(
        d.time, d.delta, d.x, d.z, d.k, d.ev_start, d.ev_d, d.t_last,
        np.zeros(d.x.shape[1]), np.zeros(d.z.shape[1]),
        config.tol, config.max_iter, config.newton_tol, config.newton_max_steps, keep_path,
    )
    _raise_status(status)
    if not converged:
        warnings.warn(f"EM did not converge in {config.max_iter} iterations", ConvergenceWarning, stacklevel=2)
    meta = {
        "initialization": "logistic(delta ~ x); unweighted Cox/Breslow",
        "stopping": f"max abs change < {config.tol:g} over gamma, beta, cumulative hazard",
        "ties": "Breslow; censored records at an event time stay at risk",
        "warnings": notes,
    }
    return LogisticCoxFit(
        gamma, beta, Baseline.from_increments(d.event_times, dlam), int(iters), path, bool(converged),
        sample.n, meta,
        gp if keep_path else None, bp if keep_path else None, cp if keep_path else None,
    )


def conditional_survival(fit: LogisticCoxFit, z, t):
    """exp(-Lambda(t) exp(beta' z)) for t up to the last event time, 0 afterwards."""
    z = np.asarray(z, dtype=float).ravel()
    if z.shape[0] != fit.beta.shape[0]:
        raise ValueError(f"z has dimension {z.shape[0]}, expected {fit.beta.shape[0]}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    s = np.exp(-fit.baseline(t_arr) * np.exp(z @ fit.beta))
    s = np.where(t_arr > fit.last_event_time, 0.0, s)
    return float(s) if s.ndim == 0 else s


def conditional_mst(fit: LogisticCoxFit, z) -> float:
    """Exact integral of the uncured survival over [0, last event time]."""
    z = np.asarray(z, dtype=float).ravel()
    if z.shape[0] != fit.beta.shape[0]:
        raise ValueError(f"z has dimension {z.shape[0]}, expected {fit.beta.shape[0]}")
    times = fit.baseline.times
    lengths = np.diff(times, prepend=0.0)
    # survival on [t_{k-1}, t_k) uses the cumulative hazard reached at t_{k-1}
    prev = np.concatenate([[0.0], fit.baseline.cumhaz[:-1]])
    return float(np.sum(lengths * np.exp(-prev * np.exp(z @ fit.beta))))


class LogisticCoxCure(BaseEstimator):
    """Estimator front end for :func:`fit_logistic_cox`.

    ``fit(sample)`` takes a :class:`SurvivalSample` whose ``x``/``z`` hold the
    incidence and latency covariates. Fitted attributes: ``gamma_``,
    ``beta_``, ``baseline_``, ``fit_``.
    """

    def __init__(self, tol=1e-7, max_iter=500, newton_tol=1e-10, newton_max_steps=50):
        self.tol = tol
        self.max_iter = max_iter
        self.newton_tol = newton_tol
        self.newton_max_steps = newton_max_steps

    def fit(self, sample: SurvivalSample, y=None):
        config = EmConfig(self.tol, self.max_iter, self.newton_tol, self.newton_max_steps)
        self.fit_ = fit_logistic_cox(sample, config=config)
        self.gamma_ = self.fit_.gamma
        self.beta_ = self.fit_.beta
        self.baseline_ = self.fit_.baseline
        self.converged_ = self.fit_.converged
        return self

    def _check(self):
        if not hasattr(self, "fit_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("LogisticCoxCure is not fitted yet")

    def predict_uncured_proba(self, x):
        self._check()
        return self.fit_.uncured_probability(x)

    def predict_survival(self, z, t):
        self._check()
        return conditional_survival(self.fit_, z, t)

    def conditional_mst(self, z) -> float:
        self._check()
        return conditional_mst(self.fit_, z)
