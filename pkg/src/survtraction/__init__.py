"""Prompt-guided multimodal survival prediction with an autoregressive
cross-chain transformer, in plain numpy."""

from .cohort import MODALITIES, Cohort, CohortError, load_cohort, save_cohort
from .config import ConfigError, RunConfig, load_config
from .harness import CVReport, FoldResult, gradcheck, run_cv
from .metrics import c_index, chi2_sf, km_estimate, log_rank
from .model import SurvivalModel
from .synth import SynthSpec, generate_cohort, write_synthetic

__version__ = "0.1.0"

__all__ = [
    "CVReport", "Cohort", "CohortError", "ConfigError", "FoldResult", "MODALITIES", "RunConfig",
    "SurvivalModel", "SynthSpec", "c_index", "chi2_sf", "generate_cohort", "gradcheck",
    "km_estimate", "load_cohort", "load_config", "log_rank", "run_cv", "save_cohort",
    "write_synthetic",
]
