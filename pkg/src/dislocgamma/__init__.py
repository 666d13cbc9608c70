"""Numerical laboratory for multiwell dislocation energies in two dimensions."""

from .dislocations import (
    AngularKernel,
    BurgersLattice,
    SelfEnergyTable,
    brute_force_phi,
    cell_energy,
    cell_energy_eps,
    divergence_free_kernel,
    hat_psi,
    interpolant_zeta,
    relax_phi,
    solve_angular_kernel,
)
from .elliptic import HelmholtzSplit, PoissonProblem, helmholtz_split, solve_poisson
from .fields import (
    Domain,
    ScalarField,
    StrainField,
    VectorMeasureSample,
    circulation,
    discrete_curl,
    discrete_div,
    lp_norm,
    total_variation,
    weak_lp_quasinorm,
)
from .gamma import (
    AdmissibleStrain,
    DislocationMeasure,
    EnergyReport,
    ScaleSchedule,
    build_recovery,
    energy_eps,
    gamma_liminf_diagnostic,
    limit_energy,
    validate_configuration,
)
from .rigidity import ProbeReport, WhitneyCover, best_constant_fit, probe_inequality, whitney_decompose
from .wells import ElasticDensity, WellSet

__version__ = "0.1.0"
