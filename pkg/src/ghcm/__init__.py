"""Geometric hidden community model: generation, thresholds, and recovery."""

from .adversary import (
    AdversaryPolicy,
    corrupt,
    derive_rates,
    propagate_two_community,
    recover_robust,
)
from .errors import (
    DegenerateGrid,
    Disconnected,
    DistinctnessViolated,
    DomainError,
    EmptyReference,
    GHCMError,
    InfeasibleRegime,
    KindMismatch,
    MapBudgetExceeded,
    MonotonicityViolated,
    NotBernoulli,
    NotTwoCommunities,
    TooManyCommunities,
)
from .geometry import (
    BlockGrid,
    Instance,
    VisibilityGraph,
    bfs_spanning_order,
    build_grid,
    build_visibility_graph,
    compute_chi,
    compute_delta,
    connected_components,
    sample_instance,
    toroidal_distance,
    vertex_visibility_connected,
)
from .harness import (
    SweepMode,
    SweepPlan,
    SweepResult,
    TrialOutcome,
    emit_csv,
    parse_csv,
    run_sweep,
    run_trial,
    set_axis,
    trial_seed,
)
from .io import (
    instance_from_json,
    instance_to_json,
    load_instance,
    read_instance,
    save_instance,
    write_instance,
)
from .model import (
    Distribution,
    DivergenceResult,
    ModelSpec,
    Relabeling,
    ch_divergence,
    enumerate_relabelings,
    log_likelihood,
    min_pairwise_divergence,
    phi_t,
    threshold_margin,
    unit_ball_volume,
)
from .recovery import (
    UNKNOWN,
    RecoveryReport,
    agreement,
    genie_labels,
    map_initial_block,
    propagate,
    recover,
    recover_1d,
    refine_all,
    refine_vertex,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
