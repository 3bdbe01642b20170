"""Plug-in mean survival time of the uncured and its asymptotic variance."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _kmkernels
from .data import TwoSampleDataset
from .exceptions import DegenerateError
from .km import KmFit, _sorted_arrays, fit_km

EPS = 1e-10


@dataclass(frozen=True)
class MstEstimate:
    value: float
    variance: float
    n: int


@dataclass(frozen=True)
class VarianceTerms:
    """The three pieces of the per-sample variance; ``total`` is their sum."""

    integral: float
    plateau: float
    cross: float

    @property
    def total(self) -> float:
        return self.integral + self.plateau + self.cross


@dataclass(frozen=True)
class TwoSampleMstResult:
    m_hat: float
    sigma_hat: float
    a_n: float
    t_stat: float
    mst1: float
    mst2: float
    sigma1_sq: float
    sigma2_sq: float
    n1: int
    n2: int

    def to_dict(self) -> dict:
        return asdict(self)


def _check_mass(fit: KmFit, eps: float):
    if fit.cure_fraction >= 1.0 - eps:
        raise DegenerateError("degenerate: no estimated uncured mass")


def _terms(fit: KmFit, eps: float):
    _check_mass(fit, eps)
    return _kmkernels.mst_sigma_terms(fit.event_times, fit.survival, fit.v_hat, fit.n_steps)


def mst_uncured(fit: KmFit, eps: float = EPS) -> MstEstimate:
    """Exact integral of (S - p)/(1 - p) up to the last event time, with its plug-in variance."""
    _check_mass(fit, eps)
    value, var, _ = _kmkernels.mst_sigma(fit.event_times, fit.survival, fit.v_hat, fit.n_steps)
    return MstEstimate(float(value), float(var), fit.n)


def sigma_sq_terms(fit: KmFit, eps: float = EPS) -> VarianceTerms:
    _, t1, t2, t3, _ = _terms(fit, eps)
    return VarianceTerms(float(t1), float(t2), float(t3))


def sigma_sq_plugin(fit: KmFit, eps: float = EPS) -> float:
    """Plug-in asymptotic variance of sqrt(n) (MST_hat - MST) for one sample."""
    return mst_uncured(fit, eps).variance


def two_sample_estimate(f1: KmFit, f2: KmFit, eps: float = EPS) -> TwoSampleMstResult:
    """Difference of MSTs, pooled-weight variance and the studentized statistic."""
    e1, e2 = mst_uncured(f1, eps), mst_uncured(f2, eps)
    n1, n2 = f1.n, f2.n
    tot = n1 + n2
    var = n2 / tot * e1.variance + n1 / tot * e2.variance
    if not var > 0.0:
        raise DegenerateError("degenerate studentization: sigma_hat = 0")
    sigma = math.sqrt(var)
    a_n = math.sqrt(n1 * n2 / tot)
    m_hat = e1.value - e2.value
    return TwoSampleMstResult(
        m_hat, sigma, a_n, a_n * m_hat / sigma, e1.value, e2.value, e1.variance, e2.variance, n1, n2
    )


def estimate(ds: TwoSampleDataset, eps: float = EPS) -> TwoSampleMstResult:
    return two_sample_estimate(fit_km(ds.sample1), fit_km(ds.sample2), eps)


class PooledSplitter:
    """Pooled records sorted once by time, evaluated under arbitrary group labels.

    ``statistic(member)`` returns ``(ok, m_hat, sigma_hat)`` for the split
    where ``member[i]`` in {1, 2} is the group of the i-th record of the
    pooled sample (group 1 first, as in :meth:`TwoSampleDataset.pooled`).
    """

    def __init__(self, ds: TwoSampleDataset, eps: float = EPS):
        pooled = ds.pooled()
        self.order = np.argsort(pooled.time, kind="stable")
        self.time, self.status = _sorted_arrays(pooled)
        self.n, self.n1 = pooled.n, ds.n1
        self.eps = eps

    def identity_member(self) -> np.ndarray:
        member = np.full(self.n, 2, dtype=np.int64)
        member[: self.n1] = 1
        return member

    def statistic(self, member: np.ndarray):
        sorted_member = np.ascontiguousarray(np.asarray(member, dtype=np.int64)[self.order])
        ok, m_hat, sigma = _kmkernels.split_statistic(self.time, self.status, sorted_member, self.eps)
        return bool(ok), float(m_hat), float(sigma)
