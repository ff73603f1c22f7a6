"""Matrix-analytic solver and simulator for the (m, n)-batch matched queue."""

from .departure import (
    MmapSet,
    build_mmap,
    consecutive_mark_probability,
    departure_rates,
    mark_probabilities,
)
from .model import (
    LevelBlock,
    LevelPhase,
    ModelError,
    ModelParams,
    StateCoords,
    TruncatedGenerator,
    build_block,
    build_truncated_generator,
    coords_to_levelphase,
    levelphase_to_coords,
)
from .rg import (
    RgMeasures,
    UlFactorization,
    apply_unilateral_inverse,
    bidirectional_inverse_apply,
    compute_rg_negative,
    compute_rg_positive,
    ul_factorize,
)
from .simulator import SimConfig, SimResult, empirical_mark_sequences, simulate
from .sojourn import (
    arrival_weights,
    conditional_sojourn,
    erlang_max_sojourn,
    erlang_tail_integral,
    mean_first_passage_upper,
    mean_sojourn_little,
    mean_sojourn_probabilistic,
)
from .stability import (
    drift_generator_A,
    drift_generator_B,
    drift_rates_A,
    drift_rates_B,
    is_stable,
    stationary_of_finite_generator,
)
from .stationary import (
    StationaryDist,
    assemble_stationary,
    mean_queue_length_A,
    mean_queue_length_B,
    solve_boundary,
    solve_stationary,
)

__all__ = [name for name in dir() if not name.startswith("_")]
