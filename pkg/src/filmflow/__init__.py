"""Evaporation-condensation evolution of strained crystalline thin films.

The film surface is the periodic graph of a height field; each time step
solves an incremental minimization of elastic plus anisotropic surface
energy with a curvature regularization, penalized by a weighted L2
distance to the previous profile.
"""

from filmflow.geometry import (
    GridProfile,
    GridSpec,
    SurfaceGeometry,
    differentiate,
    lipschitz_seminorm,
    sobolev_w2p_norm,
)
from filmflow.anisotropy import Anisotropy, WulffReport, tangential_convexity, wulff_facet_test
from filmflow.elasticity import (
    ElasticState,
    ElasticTensor,
    Mismatch,
    SlabMesh,
    boundary_energy_density,
    flat_equilibrium,
    solve_equilibrium,
)
from filmflow.energy import (
    EnergyBreakdown,
    RegularizationParams,
    first_variation,
    penalization,
    surface_energy,
    total_energy,
)
from filmflow.stepper import StepParams, StepRecord, minimize_step
from filmflow.evolution import (
    EvolutionParams,
    EvolutionTrace,
    holder_time_diagnostic,
    interpolate_constant,
    interpolate_linear,
    run,
)
from filmflow.stability import (
    StabilityReport,
    asymptotic_experiment,
    lyapunov_experiment,
    second_variation_flat,
)

__version__ = "0.1.0"
