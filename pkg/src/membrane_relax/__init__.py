"""Numerical toolkit for membrane energy densities derived from 3D elasticity with det > 0.

Modules
-------
tensor_core     3x2 / 3x3 linear algebra and extended-real energies
energy_models   stored energies, fiber relaxation ``W_0`` and its oracle
envelopes       sequential lamination envelopes ``R_i f``
cell_problem    finite-element upper bounds for the quasiconvex envelope
microstructure  explicit zig-zag laminates and Vitali refinement
thin_film       thin-film energies and recovery-sequence experiments
cli             JSON-config experiment runner
"""

__version__ = "0.1.0"

from .tensor_core import ExtendedEnergy, INFINITY, adjoin_column, det3, outer_32, wedge
from .densities import PlanarDensity, double_well, quadratic_density, rank_one_double_well
from .energy_models import (
    DegenerateMatrixError,
    FiberSolverConfig,
    StoredEnergy,
    base_density,
    default_energy,
    fiber_relax,
    fiber_relax_batch,
    fiber_relax_constrained,
    fiber_relax_grid_oracle,
    inverse_square_barrier,
    make_barrier_energy,
    normal_field,
)
from .envelopes import (
    LaminateParams,
    LaminationSearchConfig,
    MemoizationLimitError,
    laminate_envelope,
    laminate_step,
    laminated_density,
    rank_one_midpoint_check,
    two_point_value,
)
from .cell_problem import CellMeshSpec, cell_quasiconvex_estimate
from .microstructure import (
    LaminateGeometry,
    Rect,
    Region,
    classify_and_sigma,
    closed_form_energy,
    laminate_energy_quadrature,
    region_measures,
    sigma_lp_norm,
    verify_cell_refinement,
    vitali_cover,
)
from .thin_film import (
    FilmConfig,
    film_energy,
    gamma_gap_report,
    membrane_energy,
    midplane_average,
    recovery_experiment,
)
