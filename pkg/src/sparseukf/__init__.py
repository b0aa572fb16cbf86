"""Square-root UKF with a sparsity-promoting joint extension.

Estimates system states together with a sparse linear combination of library
functions that stands in for unknown partial dynamics, online, inside each
filter iteration.
"""

from .library import (
    CoefficientReport,
    FunctionLibrary,
    LibraryTerm,
    builtin_library,
    dominant_terms,
    library_from_names,
    make_duffing_libraries,
    make_golf_library,
)
from .models import (
    Benchmark,
    DiscreteModel,
    PartialModel,
    duffing_benchmark,
    euler_discretize,
    golf_benchmark,
    make_joint_model,
    rk4_step,
)
from .sparse import SparseJointUKF, SparsityConfig, SparsityDiagnostics, active_count, soft_switch
from .squkf import (
    FilterState,
    NoiseSpec,
    SquareRootUKF,
    UnscentedParams,
    compute_weights,
    default_noise,
    initial_state,
    sigma_points,
)
from .harness import (
    ExperimentConfig,
    MetricsSummary,
    RunTrace,
    compute_rmse,
    default_duffing_config,
    default_golf_config,
    export_trace,
    load_config,
    run_experiment,
    simulate_truth,
)

__version__ = "0.1.0"
