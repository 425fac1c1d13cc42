"""Decoherent-histories simulator for a random-matrix heat-exchange model."""

from .model import (
    BlockHamiltonian,
    Coarsening,
    CouplingParameters,
    Ensemble,
    ModelConfig,
    Perturbation,
    PerturbationKind,
    Regime,
    Spacing,
    build_coarsening,
    build_hamiltonian,
    derive_coupling,
    derive_seed,
)
from .spectral import (
    SpectralDecomposition,
    apply_projector,
    eigendecompose,
    evolve,
    sample_haar_state,
    select_eigenstate,
)
from .histories import (
    BranchStates,
    DecoherenceFunctional,
    HistoryGrid,
    compute_branch_states,
    compute_df,
    decode_history,
    encode_history,
    history_string,
    marginalize,
)
from .metrics import (
    ArrowReport,
    EpsilonReport,
    TraceDistanceReport,
    arrow_classification,
    branch_histogram,
    delta_max,
    epsilon_average,
    epsilon_by_distance,
    epsilon_pair,
    hamming_distance,
    macro_dynamics,
    marginal_probabilities,
    trace_distance,
)
from .experiments import (
    InitFamily,
    RandomSpacing,
    RealizationResult,
    ScalingFit,
    SweepSpec,
    compute_realization_df,
    fit_scaling,
    run_realization,
    run_sweep,
)

__version__ = "0.1.0"
