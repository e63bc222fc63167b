"""moltrace: Monte Carlo tracing of seed molecules through voxelized
buffer-gas flow fields."""

__version__ = "0.1.0"

from .collision import (  # noqa: F401
    GasParams,
    SamplingMethod,
    collision_rate,
    elastic_update,
    elastic_update_pair,
    hard_sphere_scatter,
    mean_free_path_check,
    mean_thermal_speed,
    sample_partner,
)
from .flowfield import (  # noqa: F401
    FieldMetadata,
    FlowSample,
    VoxelGrid,
    curl,
    fill_soft_edges,
    generate_analytic,
    load_grid,
    load_samples_csv,
    save_grid,
    voxelize,
)
from .geometry import (  # noqa: F401
    CellRegions,
    Disc,
    TerminalClass,
    classify_terminal,
    wall_chart,
)
from .rng import Stream  # noqa: F401
from .tracer import (  # noqa: F401
    Discard,
    EnsembleResult,
    MoleculeState,
    Terminal,
    TracerConfig,
    TrajectoryRecord,
    init_molecule,
    run_ensemble,
    run_trajectory,
    step,
)
from .analysis import (  # noqa: F401
    ExtractionCounts,
    ResidenceHistogram,
    RunSummary,
    ThermalizationCurve,
    WallChart,
    analytic_thermalization,
    extraction_efficiency,
    median_coated_area,
    residence_histogram,
    summarize_run,
    thermalization_curve,
    thermalization_decay_rate,
)
