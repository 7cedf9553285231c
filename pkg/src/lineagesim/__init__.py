"""Event-driven simulation of interacting birth-death populations whose
individuals carry ancestral trait lineages, plus the path-space calculus,
Feynman-Kac estimators, and genealogical observables used to validate runs."""

from .paths import (
    StepPath,
    TimeChange,
    PathDomainError,
    PremiseNotSatisfied,
    step_path,
    constant_path,
    eval_at,
    eval_many,
    stop,
    concat,
    skorokhod_distance,
    sup_distance,
    lambda0,
    check_concat_stability,
    path_to_json,
    path_from_json,
)
from .model import (
    MemoryKernel,
    DIRAC_AT_ZERO,
    memory_integral,
    MutationKernel,
    ConstantRate,
    GaussianPeak,
    TanhShiftRate,
    ConstantPathRate,
    ConstantCompetition,
    GaussianCompetition,
    GaussianDensityCompetition,
    KisdiCompetition,
    RateSpec,
    ModelConfig,
    RateBoundError,
    SCENARIOS,
    scenario,
    birth_rate,
    death_rate,
    interaction_rate,
)
from .engine import (
    Trace,
    ReplicateResult,
    ExplosionError,
    rng_for,
    simulate,
    run_replicates,
    lineage_of,
    mass_series,
    state_at,
    replay,
)
from .config import (
    ConfigError,
    parse_config,
    load_config,
    serialize_config,
    config_hash,
)
from .observables import (
    EmptyPopulationError,
    DisjointAncestryError,
    G_LIBRARY,
    gaussian_bump_g,
    exp_linear_g,
    TestFunctionGg,
    make_test_function,
    eval_Gg,
    eval_D2Gg,
    ProductTestFunction,
    eval_product,
    tilde_delta,
    mollify,
    MartingaleSeries,
    martingale_residual,
    sample_lineage,
    mrca,
    family_count,
)
from .fk import (
    DegenerateEstimateError,
    FkEstimate,
    IntensityEstimate,
    fk1_estimator,
    fk2_estimator,
    feller_mass_sample,
    particle_intensity_estimator,
)
from .tracefiles import (
    write_events,
    write_mass,
    write_forest,
    write_genealogy,
    write_lineages,
    genealogy_newick,
    run_summary,
    batch_summary,
)
from .acceptance import run_acceptance

__version__ = "0.1.0"
