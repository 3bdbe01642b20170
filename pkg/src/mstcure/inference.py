"""Confidence intervals and tests for the difference of MSTs of the uncured.

Two constructions are offered: the normal approximation of the studentized
difference, and a studentized permutation version that is exact when the
two groups are exchangeable. A Wald test for equal cure fractions is
included as a companion check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator

from .data import TwoSampleDataset
from .exceptions import DegenerateError, ResamplingError
from .km import KmFit
from .mst import EPS, PooledSplitter, TwoSampleMstResult
from .resampling import (
    PERM,
    ReplicateStream,
    check_seed,
    collect_valid,
    entropy_seed,
    enumerate_splits,
    n_splits,
    run_indices,
)

SCHEMA_VERSION = 1
# relative slack for ties between a replicate statistic and the observed one
TIE_RTOL = 1e-12


@dataclass
class InferenceResult:
    estimate: float
    ci_lower: float
    ci_upper: float
    p_two_sided: float
    p_greater: float
    p_less: float
    method: str
    alpha: float
    statistic: float = float("nan")
    null_value: float = 0.0
    n_replicates_used: int | None = None
    n_replicates_discarded: int | None = None
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def ci(self) -> tuple[float, float]:
        return (self.ci_lower, self.ci_upper)

    def to_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "estimate": self.estimate,
            "ci": [self.ci_lower, self.ci_upper],
            "statistic": self.statistic,
            "null_value": self.null_value,
            "p_two_sided": self.p_two_sided,
            "p_greater": self.p_greater,
            "p_less": self.p_less,
            "alpha": self.alpha,
            "B": self.n_replicates_used,
            "seed": self.seed,
            "discarded": self.n_replicates_discarded,
        }
        out.update(self.extra)
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _normal_pvalues(z: float) -> tuple[float, float, float]:
    """(two-sided, greater, less) p-values of a standard-normal statistic."""
    return float(2.0 * norm.sf(abs(z))), float(norm.sf(z)), float(norm.cdf(z))


def asymptotic_inference(res: TwoSampleMstResult, alpha: float = 0.05, null_value: float = 0.0) -> InferenceResult:
    """Normal-approximation interval m_hat -/+ q * sigma_hat / a_n and matching tests."""
    _check_alpha(alpha)
    if not res.sigma_hat > 0:
        raise DegenerateError("degenerate studentization: sigma_hat = 0")
    q = float(norm.ppf(1.0 - alpha / 2.0))
    half = q * res.sigma_hat / res.a_n
    z = res.a_n * (res.m_hat - null_value) / res.sigma_hat
    p2, pg, pl = _normal_pvalues(z)
    return InferenceResult(
        res.m_hat, res.m_hat - half, res.m_hat + half, p2, pg, pl, "asymptotic", alpha, z, null_value
    )


def type1_quantile(sorted_values: np.ndarray, prob: float) -> float:
    """Empirical quantile as the order statistic of rank ceil(B * prob), clamped to [1, B]."""
    b = sorted_values.shape[0]
    k = min(max(math.ceil(b * prob - 1e-12), 1), b)
    return float(sorted_values[k - 1])


def _counts(t_perm: np.ndarray, t_obs: float) -> tuple[int, int, int]:
    slack = TIE_RTOL * max(1.0, abs(t_obs))
    two = int(np.sum(np.abs(t_perm) >= abs(t_obs) - slack))
    greater = int(np.sum(t_perm >= t_obs - slack))
    less = int(np.sum(t_perm <= t_obs + slack))
    return two, greater, less


def permutation_from_replicates(
    m_hat: float,
    sigma_hat: float,
    t_perm,
    alpha: float,
    null_value: float = 0.0,
    exact: bool = False,
) -> tuple[float, float, float, float, float, float]:
    """CI and p-values from replicate statistics ``T = m/sigma`` (unscaled by a_n).

    Returns ``(ci_lower, ci_upper, p_two, p_greater, p_less, t_obs)``. With
    ``exact`` the replicates are the full permutation distribution (the
    observed split included) and p-values are plain proportions; otherwise
    add-one smoothing is applied.
    """
    t_perm = np.sort(np.asarray(t_perm, dtype=float))
    b = t_perm.shape[0]
    if b == 0:
        raise ResamplingError("no valid replicates")
    t_obs = (m_hat - null_value) / sigma_hat
    lo = m_hat - type1_quantile(t_perm, 1.0 - alpha / 2.0) * sigma_hat
    hi = m_hat - type1_quantile(t_perm, alpha / 2.0) * sigma_hat
    two, greater, less = _counts(t_perm, t_obs)
    if exact:
        return lo, hi, two / b, greater / b, less / b, t_obs
    return lo, hi, (1 + two) / (b + 1), (1 + greater) / (b + 1), (1 + less) / (b + 1), t_obs


class _PermutationJob:
    """Replicate job: random relabelling of the pooled records, returns (m, sigma)."""

    def __init__(self, splitter: PooledSplitter):
        self.splitter = splitter

    def __call__(self, rng, r):
        n, n1 = self.splitter.n, self.splitter.n1
        order = rng.permutation(n)
        member = np.full(n, 2, dtype=np.int64)
        member[order[:n1]] = 1
        return self.evaluate(member)

    def evaluate(self, member):
        ok, m_hat, sigma = self.splitter.statistic(member)
        if not ok:
            raise DegenerateError("permuted group without events, uncured mass or variance")
        return m_hat, sigma


class _EnumerationJob(_PermutationJob):
    def __init__(self, splitter: PooledSplitter, splits: list[np.ndarray]):
        super().__init__(splitter)
        self.splits = splits

    def __call__(self, rng, r):
        member = np.full(self.splitter.n, 2, dtype=np.int64)
        member[self.splits[r]] = 1
        return self.evaluate(member)


def observed_statistic(ds: TwoSampleDataset, eps: float = EPS) -> tuple[float, float]:
    """(m_hat, sigma_hat) of the observed split, computed by the replicate kernel."""
    splitter = PooledSplitter(ds, eps)
    ok, m_hat, sigma = splitter.statistic(splitter.identity_member())
    if not ok:
        raise DegenerateError("observed samples give an undefined or degenerate statistic")
    return m_hat, sigma


def permutation_inference(
    ds: TwoSampleDataset,
    alpha: float = 0.05,
    B: int = 500,
    seed: int | None = None,
    null_value: float = 0.0,
    *,
    exhaustive: bool = False,
    enumeration_cap: int = 200_000,
    workers: int | None = None,
    max_discard_rate: float = 0.2,
    identity: bool = False,
    eps: float = EPS,
) -> InferenceResult:
    """Studentized permutation interval and tests for the MST difference.

    Each replicate relabels the pooled records, recomputes both KM fits and
    forms ``T = m_hat / sigma_hat``. Replicates with a degenerate group are
    discarded and replaced by fresh draws. ``exhaustive`` replaces random
    draws by every distinct split, giving exact p-values (no smoothing).
    ``identity`` forces every replicate to be the observed split (test hook).
    """
    _check_alpha(alpha)
    seed = entropy_seed() if seed is None else check_seed(seed)
    splitter = PooledSplitter(ds, eps)
    ok, m_hat, sigma = splitter.statistic(splitter.identity_member())
    if not ok or not sigma > 0:
        raise DegenerateError("observed samples give an undefined or degenerate statistic")

    if exhaustive:
        total = n_splits(splitter.n, splitter.n1)
        splits = list(enumerate_splits(splitter.n, splitter.n1, enumeration_cap))
        stream = ReplicateStream(seed, total, "identity", (PERM,))
        outcomes = run_indices(stream, _EnumerationJob(splitter, splits), range(total), workers)
        good = [o for o in outcomes if o.ok]
        bad = [o for o in outcomes if not o.ok]
        if len(bad) > max_discard_rate * total:
            raise ResamplingError(
                f"permutation distribution unreliable: {len(bad)} of {total} splits degenerate"
            )
        method = "permutation-exhaustive"
    else:
        if B < 1:
            raise ValueError("B must be >= 1")
        scheme = "identity" if identity else "permutation"
        stream = ReplicateStream(seed, B, scheme, (PERM,))
        good, bad = collect_valid(stream, _PermutationJob(splitter), workers, max_discard_rate)
        method = "permutation"

    t_perm = np.array([o.value[0] / o.value[1] for o in good])
    lo, hi, p2, pg, pl, t_obs = permutation_from_replicates(m_hat, sigma, t_perm, alpha, null_value, exhaustive)
    return InferenceResult(
        m_hat, lo, hi, p2, pg, pl, method, alpha, t_obs, null_value,
        len(good), len(bad), seed, {"sigma_hat": sigma},
    )


def cure_fraction_test(f1: KmFit, f2: KmFit, alpha: float = 0.05) -> InferenceResult:
    """Wald comparison of KM plateau heights, Var(p_hat) ~ p_hat^2 v_hat(tau0) / n."""
    _check_alpha(alpha)
    p1, p2 = f1.cure_fraction, f2.cure_fraction
    var = float(p1 * p1 * f1.v_hat[-1] / f1.n + p2 * p2 * f2.v_hat[-1] / f2.n)
    if not var > 0:
        raise DegenerateError("cure fraction variances are both zero")
    se = math.sqrt(var)
    diff = p1 - p2
    z = diff / se
    q = float(norm.ppf(1.0 - alpha / 2.0))
    pt, pg, pl = _normal_pvalues(z)
    return InferenceResult(
        diff, diff - q * se, diff + q * se, pt, pg, pl, "cure-fraction-wald", alpha, z, 0.0,
        extra={"cure_fractions": [p1, p2], "note": "Wald approximation from KM asymptotics"},
    )


class MstDifferenceTest(BaseEstimator):
    """Estimator-style front end: ``fit(dataset)`` stores ``result_`` for the chosen method."""

    def __init__(self, method="asymptotic", alpha=0.05, n_permutations=500, seed=None, null_value=0.0):
        self.method = method
        self.alpha = alpha
        self.n_permutations = n_permutations
        self.seed = seed
        self.null_value = null_value

    def fit(self, ds: TwoSampleDataset, y=None):
        from .mst import estimate

        if self.method == "asymptotic":
            self.result_ = asymptotic_inference(estimate(ds), self.alpha, self.null_value)
        elif self.method in ("permutation", "exhaustive"):
            self.result_ = permutation_inference(
                ds, self.alpha, self.n_permutations, self.seed, self.null_value,
                exhaustive=self.method == "exhaustive",
            )
        else:
            raise ValueError(f"unknown method {self.method!r}")
        return self
