"""Two-sample inference on the mean survival time of the uncured in cure-rate data."""

from .conditional import (
    bootstrap_replicates,
    bootstrap_sigma_z,
    compare_conditional_mst,
    permutation_inference_sp,
)
from .cure import (
    Baseline,
    EmConfig,
    LogisticCoxCure,
    LogisticCoxFit,
    conditional_mst,
    conditional_survival,
    e_step_weights,
    fit_logistic_cox,
    m_step_incidence,
    m_step_latency,
    observed_loglik,
)
from .data import CsvSchema, SurvivalRecord, SurvivalSample, TwoSampleDataset, parse_csv, to_csv, validate_dataset
from .exceptions import (
    DegenerateError,
    FitError,
    InputError,
    MstCureError,
    ParseError,
    RankDeficientError,
    ResamplingError,
    SchemaError,
    SeparationError,
    ValidationError,
)
from .inference import (
    InferenceResult,
    MstDifferenceTest,
    asymptotic_inference,
    cure_fraction_test,
    permutation_inference,
)
from .km import KaplanMeier, KmFit, eval_survival, fit_km, fit_pooled
from .mst import MstEstimate, TwoSampleMstResult, mst_uncured, sigma_sq_plugin, two_sample_estimate
from .resampling import ReplicateStream, bootstrap_sample, permute_split, run_replicates
from .sim import SETTINGS, SettingSpec, monte_carlo_table, sample_setting, true_mst_oracle

__version__ = "0.1.0"
