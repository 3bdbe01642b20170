"""Simulation settings for two-sample cure data and a Monte Carlo coverage driver.

Latency families are written through their baseline cumulative hazard
``Lambda0``; covariates act proportionally, ``Lambda(t | z) = Lambda0(t) exp(beta' z)``.
Uncured event times are truncated at ``tau0``, the 99% quantile of the
baseline law. The default ``"point-mass"`` truncation is ``min(T, tau0)``;
``"conditional"`` draws from the law of ``T`` given ``T <= tau0`` instead.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .data import SurvivalSample, TwoSampleDataset
from .exceptions import MstCureError, ResamplingError
from .resampling import SIM, ReplicateStream, check_seed, entropy_seed, run_replicates

TRUNCATION_MODES = ("point-mass", "conditional")


@dataclass(frozen=True)
class Weibull:
    """``Lambda0(t) = rate * t**shape``."""

    shape: float
    rate: float

    def cumhaz(self, t):
        return self.rate * np.power(t, self.shape)

    def inv_cumhaz(self, h):
        return np.power(np.asarray(h, dtype=float) / self.rate, 1.0 / self.shape)


@dataclass(frozen=True)
class Gompertz:
    """``Lambda0(t) = eta * (exp(b t) - 1)``, i.e. hazard ``eta * b * exp(b t)``."""

    eta: float
    b: float = 1.0

    @classmethod
    def from_rate(cls, a: float, b: float) -> "Gompertz":
        """Hazard ``a exp(b t)``: survival ``exp(-(a/b)(exp(b t) - 1))``."""
        return cls(a / b, b)

    def cumhaz(self, t):
        return self.eta * np.expm1(self.b * np.asarray(t, dtype=float))

    def inv_cumhaz(self, h):
        return np.log1p(np.asarray(h, dtype=float) / self.eta) / self.b


def _check_quantile(q):
    if not 0.0 < q < 1.0:
        raise ValueError(f"truncation quantile must lie in (0, 1), got {q}")


def truncation_point(family, quantile: float = 0.99) -> float:
    """tau0 with baseline F(tau0) = quantile (closed form for both families)."""
    _check_quantile(quantile)
    return float(family.inv_cumhaz(-math.log1p(-quantile)))


def sample_truncated_latency(family, u, quantile: float = 0.99, mode: str = "point-mass", link=None):
    """Inverse-transform draw of the truncated latency for uniforms ``u``.

    ``link`` holds ``exp(beta' z)`` per draw (default 1). ``point-mass`` maps
    ``u`` through the untruncated law and caps at tau0; ``conditional``
    inverts on ``[0, F(tau0)]``.
    """
    u = np.asarray(u, dtype=float)
    link = np.ones_like(u) if link is None else np.asarray(link, dtype=float)
    tau0 = truncation_point(family, quantile)
    if mode == "point-mass":
        t = family.inv_cumhaz(-np.log1p(-u) / link)
        return np.minimum(t, tau0)
    if mode == "conditional":
        f_tau = -np.expm1(-family.cumhaz(tau0) * link)
        return np.minimum(family.inv_cumhaz(-np.log1p(-u * f_tau) / link), tau0)
    raise ValueError(f"unknown truncation mode {mode!r}")


def true_mst_oracle(family, quantile: float = 0.99, mode: str = "point-mass", link: float = 1.0) -> float:
    """MST of the truncated uncured law by adaptive quadrature (tolerance 1e-8).

    ``point-mass``: integral of S over [0, tau0]. ``conditional``:
    integral of (S - S(tau0)) / (1 - S(tau0)).
    """
    tau0 = truncation_point(family, quantile)

    def surv(t):
        return math.exp(-float(family.cumhaz(t)) * link)

    opts = dict(epsabs=1e-10, epsrel=1e-8, limit=200)
    if mode == "point-mass":
        return integrate.quad(surv, 0.0, tau0, **opts)[0]
    if mode == "conditional":
        s_tau = surv(tau0)
        return integrate.quad(lambda t: (surv(t) - s_tau) / (1.0 - s_tau), 0.0, tau0, **opts)[0]
    raise ValueError(f"unknown truncation mode {mode!r}")


# ------------------------------------------------------------------ settings


@dataclass(frozen=True)
class Covariate:
    law: str  # normal, bernoulli, uniform
    a: float
    b: float = 0.0

    def draw(self, rng, n):
        if self.law == "normal":
            return rng.normal(self.a, self.b, n)
        if self.law == "bernoulli":
            return (rng.random(n) < self.a).astype(float)
        if self.law == "uniform":
            return rng.uniform(self.a, self.b, n)
        raise ValueError(f"unknown covariate law {self.law!r}")


@dataclass(frozen=True)
class GroupSpec:
    """One group: cure mechanism, latency law, censoring and covariates.

    Either ``cure_rate`` (constant) or ``gamma`` (logistic model for the
    probability of being uncured, intercept first) is set. Covariates enter
    both the incidence (x) and the latency (z).
    """

    latency: object
    censor_rate: float
    cure_rate: float | None = None
    gamma: tuple = ()
    beta: tuple = ()
    covariates: tuple = ()

    def __post_init__(self):
        if not self.censor_rate > 0:
            raise ValueError("censoring rate must be > 0")
        if self.cure_rate is None and not self.gamma:
            raise ValueError("set cure_rate or gamma")
        if self.gamma and len(self.gamma) != len(self.covariates) + 1:
            raise ValueError("gamma needs an intercept plus one coefficient per covariate")
        if self.beta and len(self.beta) != len(self.covariates):
            raise ValueError("beta needs one coefficient per covariate")

    def mst(self, z=None, quantile=0.99, mode="point-mass") -> float:
        link = 1.0
        if self.beta:
            link = math.exp(float(np.dot(self.beta, np.asarray(z, dtype=float))))
        return true_mst_oracle(self.latency, quantile, mode, link)


@dataclass(frozen=True)
class SettingSpec:
    id: str
    group1: GroupSpec
    group2: GroupSpec
    quantile: float = 0.99
    truncation: str = "point-mass"
    z_grid: tuple = ()
    description: str = ""

    def __post_init__(self):
        _check_quantile(self.quantile)
        if self.truncation not in TRUNCATION_MODES:
            raise ValueError(f"unknown truncation mode {self.truncation!r}")

    @property
    def semiparametric(self) -> bool:
        return bool(self.group1.covariates)

    def true_m(self) -> float:
        return self.group1.mst(None, self.quantile, self.truncation) - self.group2.mst(None, self.quantile, self.truncation)

    def true_m_z(self, z) -> float:
        return self.group1.mst(z, self.quantile, self.truncation) - self.group2.mst(z, self.quantile, self.truncation)

    def truth(self) -> np.ndarray:
        """True m (one entry) or m_z per row of ``z_grid``."""
        if self.semiparametric:
            return np.array([self.true_m_z(z) for z in self.z_grid])
        return np.array([self.true_m()])


def _wb(shape, rate):
    return Weibull(shape, rate)


def _gz(eta):
    return Gompertz(eta, 1.0)


_II1_S1 = GroupSpec(_wb(0.75, 1.5), 0.4, gamma=(0.0, 0.5, 0.8), beta=(0.3, 0.5),
                    covariates=(Covariate("normal", 0.0, 1.0), Covariate("bernoulli", 0.4)))
_II1_S2 = GroupSpec(_wb(0.75, 2.0), 0.2, gamma=(0.1, 1.0, 0.6), beta=(0.3 + math.log(0.75), 0.5),
                    covariates=(Covariate("normal", 1.0, 1.0), Covariate("bernoulli", 0.6)))
_II2_COV = (Covariate("normal", 0.0, 1.0), Covariate("uniform", -1.0, 1.0))
_Z_GRID_1 = ((0, 1), (-1, 0), (1, 0), (1, 1), (2, 1), (4, 0), (-4, 0), (-3, 1))
_Z_GRID_2 = ((-2, 0), (-1.85, 0.8), (-2.16, -0.8), (0, 0), (1, 0.5), (-1, -0.5), (-3, 0.5), (-6, 0),
             (2, 0), (-1.5, 0), (-2.5, 0))

SETTINGS: dict[str, SettingSpec] = {
    s.id: s
    for s in [
        SettingSpec("I.1", GroupSpec(_wb(0.75, 1.5), 0.3, 0.4), GroupSpec(_wb(0.75, 1.5), 0.3, 0.4),
                    description="exchangeable, m = 0"),
        SettingSpec("I.2", GroupSpec(_wb(0.75, 1.5), 0.25, 0.2), GroupSpec(_wb(0.75, 1.5), 0.5, 0.6),
                    description="same latency, cure 20% vs 60%"),
        SettingSpec("I.3", GroupSpec(_wb(0.75, 1.5), 0.3, 0.6), GroupSpec(_wb(0.75, 1.5), 0.1, 0.2),
                    description="same latency, cure 60% vs 20%"),
        SettingSpec("I.4", GroupSpec(_wb(0.75, 1.0), 0.2, 0.4), GroupSpec(_gz(0.327), 0.15, 0.4),
                    description="Weibull vs Gompertz with equal MST"),
        SettingSpec("I.5", GroupSpec(_gz(0.1), 0.3, 0.4), GroupSpec(_gz(0.5), 0.1, 0.4),
                    description="Gompertz 0.1 vs 0.5"),
        SettingSpec("I.6", GroupSpec(_gz(0.5), 0.1, 0.4), GroupSpec(_gz(0.1), 0.3, 0.4),
                    description="I.5 with groups exchanged"),
        SettingSpec("I.7", GroupSpec(_gz(0.08), 0.2, 0.6), GroupSpec(_gz(0.1), 0.15, 0.2),
                    description="Gompertz 0.08 vs 0.1, cure 60% vs 20%"),
        SettingSpec("I.8", GroupSpec(_gz(0.08), 0.1, 0.3), GroupSpec(_gz(0.1), 0.1, 0.2),
                    description="latency of I.7, cure 30% vs 20%"),
        SettingSpec("I.9", GroupSpec(_gz(0.08), 0.1, 0.4), GroupSpec(_wb(2.0, 0.28), 0.1, 0.4),
                    description="Gompertz vs Weibull, common support"),
        SettingSpec("II.1", _II1_S1, _II1_S2, z_grid=_Z_GRID_1, description="logistic-Cox, Weibull baselines"),
        SettingSpec(
            "II.2",
            GroupSpec(_gz(0.1), 0.1, gamma=(0.8, -1.0, 1.0), beta=(-0.6, 0.5), covariates=_II2_COV),
            GroupSpec(_gz(0.3), 0.2, gamma=(0.8, -1.0, 1.0), beta=(-0.05, 0.4), covariates=_II2_COV),
            z_grid=_Z_GRID_2,
            description="logistic-Cox, Gompertz baselines",
        ),
        SettingSpec("II.3", _II1_S1, _II1_S1, z_grid=_Z_GRID_1, description="exchangeable copy of II.1 sample 1"),
    ]
}


def get_setting(setting_id: str) -> SettingSpec:
    try:
        return SETTINGS[setting_id]
    except KeyError:
        raise ValueError(f"unknown setting {setting_id!r}; choose from {', '.join(SETTINGS)}") from None


def sample_group(group: GroupSpec, n: int, rng, quantile=0.99, mode="point-mass", label=1) -> SurvivalSample:
    """Draw one group: covariates, cure status, truncated latency, capped censoring."""
    cov = np.column_stack([c.draw(rng, n) for c in group.covariates]) if group.covariates else np.empty((n, 0))
    if group.gamma:
        eta = group.gamma[0] + cov @ np.asarray(group.gamma[1:])
        p_uncured = 1.0 / (1.0 + np.exp(-eta))
    else:
        p_uncured = np.full(n, 1.0 - group.cure_rate)
    uncured = rng.random(n) < p_uncured
    link = np.exp(cov @ np.asarray(group.beta)) if group.beta else np.ones(n)
    t = sample_truncated_latency(group.latency, rng.random(n), quantile, mode, link)
    t = np.where(uncured, t, np.inf)
    cap = truncation_point(group.latency, quantile) + 2.0
    c = np.minimum(rng.exponential(1.0 / group.censor_rate, n), cap)
    status = (t <= c).astype(np.int8)
    return SurvivalSample(np.minimum(t, c), status, cov, cov, label)


def sample_setting(spec: SettingSpec, n1: int, n2: int, rng) -> TwoSampleDataset:
    s1 = sample_group(spec.group1, n1, rng, spec.quantile, spec.truncation, 1)
    s2 = sample_group(spec.group2, n2, rng, spec.quantile, spec.truncation, 2)
    return TwoSampleDataset(s1, s2)


# ------------------------------------------------------------------ Monte Carlo


@dataclass(frozen=True)
class CellSummary:
    method: str
    n1: int
    n2: int
    target: str
    truth: float
    coverage: float
    mean_length: float
    rejection: float
    replications: int
    failures: int


@dataclass
class SimulationReport:
    setting: str
    reps: int
    seed: int
    alpha: float
    test: str
    cells: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["setting", "method", "n1", "n2", "target", "truth", "coverage_pct", "mean_length",
                    "rejection_pct", "replications", "failures", "seed", "test"])
        for c in self.cells:
            w.writerow([self.setting, c.method, c.n1, c.n2, c.target, f"{c.truth:.6g}", f"{c.coverage:.2f}",
                        f"{c.mean_length:.6g}", f"{c.rejection:.2f}", c.replications, c.failures, self.seed, self.test])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"Setting {self.setting}: {self.reps} replications, seed {self.seed}, "
                 f"{100 * (1 - self.alpha):.0f}% intervals, test {self.test}"]
        lines.append(f"{'method':<12}{'n1':>6}{'n2':>6}{'target':>14}{'truth':>9}{'CP%':>8}{'L':>8}{'rej%':>8}{'fail':>6}")
        for c in self.cells:
            lines.append(f"{c.method:<12}{c.n1:>6}{c.n2:>6}{c.target:>14}{c.truth:>9.3f}{c.coverage:>8.1f}"
                         f"{c.mean_length:>8.3f}{c.rejection:>8.1f}{c.failures:>6}")
        return "\n".join(lines) + "\n"


class _NpReplicate:
    def __init__(self, spec, n1, n2, alpha, B_perm):
        self.spec, self.n1, self.n2, self.alpha, self.B_perm = spec, n1, n2, alpha, B_perm

    def __call__(self, rng, r):
        from .inference import asymptotic_inference, permutation_inference
        from .mst import estimate

        ds = sample_setting(self.spec, self.n1, self.n2, rng)
        inner_seed = int(rng.integers(0, 2**63))
        out = {"M1": asymptotic_inference(estimate(ds), self.alpha)}
        if self.B_perm > 0:
            out["M2"] = permutation_inference(ds, self.alpha, self.B_perm, inner_seed, workers=1)
        return {k: (v.ci_lower, v.ci_upper, v.p_greater, v.p_two_sided) for k, v in out.items()}


class _SpReplicate:
    def __init__(self, spec, n1, n2, alpha, B_perm, B_boot, em_config):
        self.spec, self.n1, self.n2, self.alpha = spec, n1, n2, alpha
        self.B_perm, self.B_boot, self.em_config = B_perm, B_boot, em_config
        self.grid = np.asarray(spec.z_grid, dtype=float)

    def __call__(self, rng, r):
        from .conditional import compare_conditional_mst, permutation_inference_sp

        ds = sample_setting(self.spec, self.n1, self.n2, rng)
        inner_seed = int(rng.integers(0, 2**63))
        out = {"M1": compare_conditional_mst(ds, self.grid, self.alpha, self.B_boot, inner_seed, self.em_config, workers=1)}
        if self.B_perm > 0:
            out["M2"] = permutation_inference_sp(ds, self.grid, self.alpha, self.B_perm, self.B_boot, inner_seed,
                                                 self.em_config, workers=1)
        return {k: [(v.ci_lower, v.ci_upper, v.p_greater, v.p_two_sided) for v in res] for k, res in out.items()}


def monte_carlo_table(
    spec: SettingSpec | str,
    sizes=((200, 200),),
    reps: int = 1000,
    alpha: float = 0.05,
    B_perm: int = 500,
    B_boot: int = 100,
    seed: int | None = None,
    *,
    workers: int | None = None,
    em_config=None,
    max_failure_rate: float = 0.01,
) -> SimulationReport:
    """Coverage, mean interval length and rejection rates over ``reps`` simulated datasets.

    Part I settings test H0: m <= 0 one-sided; Part II settings test
    H0: m_z = 0 two-sided, per row of the setting's z grid. Replication
    ``r`` of size pair ``k`` draws from substream ``(SIM, k, r)``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    spec = get_setting(spec) if isinstance(spec, str) else spec
    seed = entropy_seed() if seed is None else check_seed(seed)
    truth = spec.truth()
    sp = spec.semiparametric
    if sp:
        from .cure import EmConfig

        em_config = EmConfig() if em_config is None else em_config
        targets = [f"z{j + 1}" for j in range(len(spec.z_grid))]
    else:
        targets = ["m"]
    report = SimulationReport(spec.id, reps, seed, alpha, "two-sided m_z = 0" if sp else "one-sided m <= 0")
    for k, (n1, n2) in enumerate(sizes):
        job = _SpReplicate(spec, n1, n2, alpha, B_perm, B_boot, em_config) if sp else _NpReplicate(spec, n1, n2, alpha, B_perm)
        outcomes = run_replicates(ReplicateStream(seed, reps, "permutation", (SIM, k)), job, workers)
        ok = [o.value for o in outcomes if o.ok]
        failures = reps - len(ok)
        if failures > max_failure_rate * reps:
            errors = sorted({o.error for o in outcomes if not o.ok})[:3]
            raise ResamplingError(f"{failures} of {reps} replications failed; e.g. {errors}")
        if not ok:
            raise MstCureError("no successful replication")
        for method in ok[0]:
            rows = [v[method] for v in ok]
            arr = np.array(rows, dtype=float).reshape(len(ok), len(targets), 4)
            for j, target in enumerate(targets):
                lo, hi, p_greater, p_two = arr[:, j, 0], arr[:, j, 1], arr[:, j, 2], arr[:, j, 3]
                cover = 100.0 * np.mean((lo <= truth[j]) & (truth[j] <= hi))
                pvals = p_two if sp else p_greater
                reject = 100.0 * np.mean(pvals <= alpha)
                report.cells.append(CellSummary(method, n1, n2, target, float(truth[j]), float(cover),
                                                float(np.mean(hi - lo)), float(reject), len(ok), failures))
    return report
