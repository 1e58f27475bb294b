"""Event-driven simulation and averaging analysis of slow-fast synaptic
plasticity models."""

from .model import (
    ActivationSpec,
    CalciumDriveSpec,
    DiscreteState,
    KernelSpec,
    PhiCurve,
    PlasticityMapSpec,
    ResetSpec,
    SpecError,
    SystemState,
    calcium_kernel,
    exp_phi,
    pa_kernel,
    pa_kernel_with_offsets,
    pns_kernel,
    simple_kernel,
    validate,
    zero_state,
)
from .engine import (
    DiscreteParams,
    NumericError,
    SimConfig,
    Trajectory,
    simulate_discrete_fast,
    simulate_discrete_scaled,
    simulate_fast_fixed_w,
    simulate_nofilter_scaled,
    simulate_scaled,
    uniform_grid,
)
from .analytics import (
    CalciumParams,
    CQParams,
    PACoefficients,
    PNSParams,
    calcium_laplace,
    cq_pgf,
    cq_tail,
    mc_invariant,
    pa_coeffs,
    pns_drive,
    pns_tail,
    postsyn_count_laplace,
)
from .limits import (
    BlowupReport,
    DriveTable,
    LimitSolution,
    RangeError,
    affine_solution,
    load_drive_table,
    pa_offset_drive,
    save_drive_table,
    simulate_limit_discrete,
    solve_limit_pa,
    solve_limit_table,
    solve_nofilter,
)
from .harness import (
    RegimeReport,
    SweepReport,
    classify_regime,
    eps_sweep,
    figure1_golden_params,
    figure2_params,
    reproduce_figure2,
    toy_analytic_solution,
    toy_drive_coeffs,
)
from .streams import stream

__version__ = "0.1.0"
