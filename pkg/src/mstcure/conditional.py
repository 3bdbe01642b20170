"""Inference on the covariate-specific MST difference under logistic-Cox cure models.

The variance of ``a_n * m_z_hat`` is estimated by a stratified bootstrap.
The permutation version relabels pooled (Y, status, x, z) records, refits
both models and studentizes with a bootstrap nested inside each permuted
dataset.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

from .cure import ConvergenceWarning, EmConfig, LogisticCoxFit, conditional_mst, fit_logistic_cox
from .data import TwoSampleDataset
from .exceptions import DegenerateError, FitError
from .inference import InferenceResult, _check_alpha, _normal_pvalues, permutation_from_replicates
from .resampling import (
    BOOT,
    PERM,
    ReplicateStream,
    bootstrap_dataset,
    check_seed,
    collect_valid,
    entropy_seed,
)


def _z_grid(z, q: int) -> np.ndarray:
    grid = np.atleast_2d(np.asarray(z, dtype=float))
    if grid.shape[1] != q:
        raise ValueError(f"z has dimension {grid.shape[1]}, latency model has {q} covariates")
    return grid


def fit_pair(ds: TwoSampleDataset, config: EmConfig = EmConfig(), require_convergence: bool = True):
    """Fit both groups; non-convergence raises :class:`FitError` when required."""
    fits = []
    for s in (ds.sample1, ds.sample2):
        with warnings.catch_warnings():
            # non-convergence is reported through FitError below
            warnings.simplefilter("ignore", ConvergenceWarning)
            fit = fit_logistic_cox(s, config=config, check=False)
        if require_convergence and not fit.converged:
            raise FitError(f"EM did not converge in {config.max_iter} iterations")
        fits.append(fit)
    return fits[0], fits[1]


def m_z_hat(fit1: LogisticCoxFit, fit2: LogisticCoxFit, z) -> np.ndarray:
    grid = _z_grid(z, fit1.beta.shape[0])
    return np.array([conditional_mst(fit1, zz) - conditional_mst(fit2, zz) for zz in grid])


@dataclass(frozen=True)
class ConditionalMstResult:
    z: tuple
    m_z_hat: float
    sigma_z_hat: float
    t_stat: float
    bootstrap_B: int
    fit_failures: int

    def to_dict(self) -> dict:
        return asdict(self)


class _BootJob:
    def __init__(self, ds, grid, config):
        self.ds, self.grid, self.config = ds, grid, config

    def __call__(self, rng, r):
        f1, f2 = fit_pair(bootstrap_dataset(self.ds, rng), self.config)
        return m_z_hat(f1, f2, self.grid), np.concatenate([f1.gamma, f1.beta, f2.gamma, f2.beta])


@dataclass(frozen=True, eq=False)
class BootstrapDraws:
    """Replicate values of m_z (B x len(z)) and of (gamma1, beta1, gamma2, beta2)."""

    m_z: np.ndarray
    coef: np.ndarray
    failures: int
    a_n: float

    @property
    def B(self) -> int:
        return self.m_z.shape[0]

    def sigma_z(self) -> np.ndarray:
        if self.B < 2:
            return np.full(self.m_z.shape[1], np.nan)
        return self.a_n * np.std(self.m_z, axis=0, ddof=1)

    def coef_se(self) -> np.ndarray:
        return np.std(self.coef, axis=0, ddof=1)


def _bootstrap(ds, grid, B, stream_key, seed, config, workers, max_discard_rate) -> BootstrapDraws:
    stream = ReplicateStream(seed, B, "bootstrap-stratified", stream_key)
    good, bad = collect_valid(stream, _BootJob(ds, grid, config), workers, max_discard_rate)
    m = np.array([o.value[0] for o in good]).reshape(B, grid.shape[0])
    coef = np.array([o.value[1] for o in good])
    return BootstrapDraws(m, coef, len(bad), ds.a_n)


def bootstrap_replicates(
    ds: TwoSampleDataset,
    z,
    B: int = 100,
    seed: int | None = None,
    em_config: EmConfig = EmConfig(),
    *,
    workers: int | None = None,
    max_discard_rate: float = 0.2,
) -> BootstrapDraws:
    """Stratified bootstrap refits of both groups (substreams ``(BOOT, b)``)."""
    if B < 2:
        raise ValueError("the bootstrap needs B >= 2")
    seed = entropy_seed() if seed is None else check_seed(seed)
    grid = _z_grid(z, ds.sample1.z.shape[1])
    return _bootstrap(ds, grid, B, (BOOT,), seed, em_config, workers, max_discard_rate)


def bootstrap_sigma_z(
    ds: TwoSampleDataset,
    z,
    B: int = 100,
    seed: int | None = None,
    em_config: EmConfig = EmConfig(),
    *,
    workers: int | None = None,
    max_discard_rate: float = 0.2,
):
    """``a_n`` times the bootstrap standard deviation of ``m_z_hat``, per row of ``z``.

    Returns ``(sigma, failures)``; non-converged replicate fits are redrawn.
    """
    draws = bootstrap_replicates(ds, z, B, seed, em_config, workers=workers, max_discard_rate=max_discard_rate)
    return draws.sigma_z(), draws.failures


def estimate_conditional(
    ds: TwoSampleDataset,
    z,
    B: int = 100,
    seed: int | None = None,
    em_config: EmConfig = EmConfig(),
    *,
    workers: int | None = None,
    fits=None,
    draws: BootstrapDraws | None = None,
) -> list[ConditionalMstResult]:
    seed = entropy_seed() if seed is None else check_seed(seed)
    f1, f2 = fit_pair(ds, em_config) if fits is None else fits
    grid = _z_grid(z, f1.beta.shape[0])
    m = m_z_hat(f1, f2, grid)
    if draws is None:
        draws = bootstrap_replicates(ds, grid, B, seed, em_config, workers=workers)
    sigma = draws.sigma_z()
    out = []
    for zz, mm, ss in zip(grid, m, sigma):
        t = ds.a_n * mm / ss if ss > 0 else float("nan")
        out.append(ConditionalMstResult(tuple(map(float, zz)), float(mm), float(ss), float(t), draws.B, draws.failures))
    return out


def compare_conditional_mst(
    ds: TwoSampleDataset,
    z,
    alpha: float = 0.05,
    B_boot: int = 100,
    seed: int | None = None,
    em_config: EmConfig = EmConfig(),
    null_value: float = 0.0,
    *,
    workers: int | None = None,
    fits=None,
    draws: BootstrapDraws | None = None,
):
    """Normal-approximation interval ``m_z_hat -/+ q sigma_z / a_n`` and tests.

    ``z`` may be one covariate vector (returns one result) or a matrix of
    vectors (returns a list, all sharing the bootstrap replicates).
    """
    _check_alpha(alpha)
    seed = entropy_seed() if seed is None else check_seed(seed)
    single = np.ndim(z) == 1
    ests = estimate_conditional(ds, z, B_boot, seed, em_config, workers=workers, fits=fits, draws=draws)
    q = float(norm.ppf(1.0 - alpha / 2.0))
    out = []
    for est in ests:
        if not est.sigma_z_hat > 0:
            raise DegenerateError("degenerate studentization: sigma_z_hat = 0")
        half = q * est.sigma_z_hat / ds.a_n
        stat = ds.a_n * (est.m_z_hat - null_value) / est.sigma_z_hat
        p2, pg, pl = _normal_pvalues(stat)
        out.append(InferenceResult(
            est.m_z_hat, est.m_z_hat - half, est.m_z_hat + half, p2, pg, pl, "asymptotic-bootstrap",
            alpha, stat, null_value, None, None, seed,
            {"z": list(est.z), "B_boot": B_boot, "fit_failures": est.fit_failures, "sigma_z_hat": est.sigma_z_hat},
        ))
    return out[0] if single else out


class _PermJobSp:
    """Outer replicate: relabel pooled records, refit, nested bootstrap; returns (m_z, sigma_z) arrays."""

    def __init__(self, ds, grid, B_boot, seed, config, identity, max_discard_rate):
        self.pooled = ds.pooled()
        self.n1 = ds.n1
        self.a_n = ds.a_n
        self.grid, self.B_boot, self.seed = grid, B_boot, seed
        self.config, self.identity = config, identity
        self.max_discard_rate = max_discard_rate

    def __call__(self, rng, r):
        order = rng.permutation(self.pooled.n)
        ds = TwoSampleDataset(self.pooled.take(order[: self.n1], 1), self.pooled.take(order[self.n1 :], 2))
        f1, f2 = fit_pair(ds, self.config)
        m = m_z_hat(f1, f2, self.grid)
        # under the identity hook every replicate repeats the observed bootstrap
        key = (BOOT,) if self.identity else (PERM, r, BOOT)
        sigma = _bootstrap(ds, self.grid, self.B_boot, key, self.seed, self.config, 1, self.max_discard_rate).sigma_z()
        if not np.all(sigma > 0):
            raise DegenerateError("permuted bootstrap variance is zero")
        return m, sigma


def permutation_inference_sp(
    ds: TwoSampleDataset,
    z,
    alpha: float = 0.05,
    B_perm: int = 500,
    B_boot: int = 100,
    seed: int | None = None,
    em_config: EmConfig = EmConfig(),
    null_value: float = 0.0,
    *,
    workers: int | None = None,
    identity: bool = False,
    max_discard_rate: float = 0.2,
):
    """Studentized permutation interval and tests for ``m_z``.

    Replicate ``r`` permutes with substream ``(PERM, r)`` and bootstraps
    with ``(PERM, r, BOOT, b)``; the observed statistic uses ``(BOOT, b)``.
    Failed replicates (non-converged fits, degenerate variance) are redrawn.
    """
    _check_alpha(alpha)
    if B_perm < 1:
        raise ValueError("B_perm must be >= 1")
    seed = entropy_seed() if seed is None else check_seed(seed)
    single = np.ndim(z) == 1
    f1, f2 = fit_pair(ds, em_config)
    grid = _z_grid(z, f1.beta.shape[0])
    m_obs = m_z_hat(f1, f2, grid)
    obs_draws = _bootstrap(ds, grid, B_boot, (BOOT,), seed, em_config, workers, max_discard_rate)
    sigma_obs, boot_fail = obs_draws.sigma_z(), obs_draws.failures
    if not np.all(sigma_obs > 0):
        raise DegenerateError("degenerate studentization: sigma_z_hat = 0")

    stream = ReplicateStream(seed, B_perm, "identity" if identity else "permutation", (PERM,))
    job = _PermJobSp(ds, grid, B_boot, seed, em_config, identity, max_discard_rate)
    good, bad = collect_valid(stream, job, workers, max_discard_rate)
    m_perm = np.array([o.value[0] for o in good])
    s_perm = np.array([o.value[1] for o in good])
    t_perm = m_perm / s_perm

    out = []
    for j, zz in enumerate(grid):
        lo, hi, p2, pg, pl, t_obs = permutation_from_replicates(
            float(m_obs[j]), float(sigma_obs[j]), t_perm[:, j], alpha, null_value
        )
        out.append(InferenceResult(
            float(m_obs[j]), lo, hi, p2, pg, pl, "permutation-bootstrap", alpha, t_obs, null_value,
            len(good), len(bad), seed,
            {"z": [float(v) for v in zz], "B_boot": B_boot, "fit_failures": boot_fail,
             "sigma_z_hat": float(sigma_obs[j])},
        ))
    return out[0] if single else out
