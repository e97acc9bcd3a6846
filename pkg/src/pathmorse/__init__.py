"""Numerical Morse theory for the path space of a Riemannian manifold.

Geodesics of a conservative system's dressed metric, Jacobi fields and
conjugate points, Morse indices, gradient-flow trajectories between critical
geodesics, and the resulting integer homology of the space of paths between
two fixed points.
"""

from .errors import (
    AntipodalEndpoints,
    BoundaryNotSquareZero,
    BudgetExhausted,
    ConfigInvalid,
    ConjugateEndpoints,
    DegenerateMetric,
    EndpointViolation,
    GridTooCoarse,
    IndexGapNotOne,
    IntegrationFailure,
    NoConvergence,
    NonphysicalSystem,
    OutOfChart,
    PathmorseError,
    SegmentCountTooSmall,
    SegmentTooLong,
    StepUnderflow,
    Unclassified,
    UnresolvedBasin,
    Unsupported,
)
from .geometry import (
    ChartModel,
    ConservativeSystem,
    SphereModel,
    dressed_metric,
    free_system,
    potential_from_spec,
)
from .geodesics import (
    BreakDiscontinuity,
    GeodesicPath,
    SampledCurve,
    action,
    concatenate_paths,
    exponential_map,
    first_variation,
    geodesic_residual,
    great_circle_length,
    integrate_geodesic,
    solve_bvp,
)
from .jacobi import (
    JacobiSolution,
    SturmLiouvilleOperator,
    TangentField,
    apply_sturm_liouville,
    detect_conjugate_points,
    hessian_spectrum,
    hessian_spectrum_index,
    integrate_jacobi,
    morse_index,
    second_variation_form,
)
from .pathspace import (
    BrokenPath,
    FlowTrajectory,
    action_gradient,
    broken_action,
    flow_energy,
    flow_residual,
    flow_step,
    linearized_flow_apply,
    perturbed_seed,
    run_flow,
)
from .homology import (
    ChainComplexData,
    CriticalGeodesic,
    HomologyGroup,
    ModuliCount,
    assemble_complex,
    build_omega_complex,
    count_trajectories,
    enumerate_critical_points,
    homology,
    smith_normal_form,
    sphere_reference_complex,
)

__version__ = "0.1.0"
