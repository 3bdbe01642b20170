"""Kaplan-Meier fits with the cure-fraction plateau and the variance process v_hat."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import _kmkernels
from .data import SurvivalSample, TwoSampleDataset
from .exceptions import DegenerateError


@dataclass(frozen=True, eq=False)
class KmFit:
    """Step-function summary of a Kaplan-Meier fit, one entry per distinct event time."""

    event_times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    v_hat: np.ndarray
    n: int

    def __post_init__(self):
        for name in ("event_times", "survival", "at_risk", "events", "v_hat"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def cure_fraction(self) -> float:
        return float(self.survival[-1])

    @property
    def last_event_time(self) -> float:
        return float(self.event_times[-1])

    @property
    def n_steps(self) -> int:
        return self.event_times.shape[0]

    def __call__(self, t):
        return eval_survival(self, t)

    def to_csv(self) -> str:
        """Curve table with columns time, survival, at_risk, events, v_hat."""
        buf = io.StringIO()
        buf.write("time,survival,at_risk,events,v_hat\n")
        for row in zip(self.event_times, self.survival, self.at_risk, self.events, self.v_hat):
            t, s, r, d, v = map(float, row)
            buf.write(f"{t!r},{s!r},{int(r)},{int(d)},{v!r}\n")
        return buf.getvalue()


def _sorted_arrays(sample: SurvivalSample):
    order = np.argsort(sample.time, kind="stable")
    return (
        np.ascontiguousarray(sample.time[order]),
        np.ascontiguousarray(sample.status[order].astype(np.int64)),
    )


def _km_from_sorted(time, status, member, g, n) -> KmFit:
    size = time.shape[0]
    buf = [np.empty(size) for _ in range(5)]
    m = _kmkernels.km_steps(time, status, member, g, *buf)
    if m == 0:
        raise DegenerateError("sample has no events; Kaplan-Meier cure fraction and MST undefined")
    t, s, v, r, d = (b[:m].copy() for b in buf)
    return KmFit(t, s, r, d, v, n)


def fit_km(sample: SurvivalSample) -> KmFit:
    """Kaplan-Meier fit of one sample (ties: censored records stay at risk for events)."""
    if sample.n == 0 or sample.n_events == 0:
        raise DegenerateError("sample has no events; Kaplan-Meier cure fraction and MST undefined")
    time, status = _sorted_arrays(sample)
    member = np.ones(sample.n, dtype=np.int64)
    return _km_from_sorted(time, status, member, 1, sample.n)


def fit_pooled(ds: TwoSampleDataset) -> KmFit:
    return fit_km(ds.pooled())


def eval_survival(fit: KmFit, t):
    """Right-continuous step evaluation of the survival estimate; accepts scalars or arrays."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    idx = np.searchsorted(fit.event_times, t_arr, side="right")
    vals = np.concatenate([[1.0], fit.survival])[idx]
    return float(vals) if vals.ndim == 0 else vals


def eval_v_hat(fit: KmFit, t):
    t_arr = np.asarray(t, dtype=float)
    idx = np.searchsorted(fit.event_times, t_arr, side="right")
    vals = np.concatenate([[0.0], fit.v_hat])[idx]
    return float(vals) if vals.ndim == 0 else vals


class KaplanMeier(BaseEstimator):
    """Estimator wrapper: ``fit(time, status)`` then ``predict(t)`` gives survival probabilities.

    Attributes after fitting mirror :class:`KmFit`: ``fit_``, ``cure_fraction_``,
    ``last_event_time_``.
    """

    def fit(self, time, status=None):
        if status is None:
            arr = np.asarray(time, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise ValueError("pass (time, status) or an (n, 2) array")
            time, status = arr[:, 0], arr[:, 1]
        self.fit_ = fit_km(SurvivalSample(time, status))
        self.cure_fraction_ = self.fit_.cure_fraction
        self.last_event_time_ = self.fit_.last_event_time
        self.n_samples_ = self.fit_.n
        return self

    def predict(self, t):
        if not hasattr(self, "fit_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("KaplanMeier is not fitted yet")
        return eval_survival(self.fit_, t)
