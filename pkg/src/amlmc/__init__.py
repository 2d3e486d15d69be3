"""Antithetic multilevel Monte Carlo and multilevel particle filters for
elliptic and hypo-elliptic SDEs."""

from .model_core import (
    DiffusionModel,
    ModelError,
    Regime,
    TestFunction,
    commutator,
    lie_drift_drift,
)
from .noise import (
    CoarseStepNoise,
    EtaTable,
    HalfStepNoise,
    NoiseStream,
    aggregate_coarse,
    build_eta,
    sample_coarse_step,
    sample_half_step,
    swap_fine_halves,
)
from .schemes import (
    AntitheticQuad,
    AntitheticTriple,
    SchemeKind,
    euler_step,
    milstein_commutative_step,
    simulate_antithetic_quad,
    simulate_antithetic_triple_tm,
    simulate_coupled_pair,
    simulate_path,
    truncated_milstein_step,
    weak2_step,
)
from .mlmc import (
    LevelPlan,
    MlmcReport,
    allocate_amlmc,
    allocate_amlpf,
    allocate_mlpf,
    run_amlmc,
    run_ammlmc,
    run_plain_mlmc,
    run_single_level,
)
from .filtering import (
    FilterReport,
    ParticleEnsemble,
    StateSpaceModel,
    acpf_run,
    cpf_run,
    ess,
    four_way_coupling_sample,
    maximal_coupling_sample,
    pf_run,
    run_mlpf,
)
from .models import (
    FhnParams,
    HestonParams,
    ModelSetup,
    OuOracle,
    build_fhn,
    build_gbm_2d,
    build_heston,
    build_linear_ou,
    make_model,
)
from .bench import ExperimentConfig, RateTable, make_ground_truth, run_experiment

__version__ = "0.1.0"
