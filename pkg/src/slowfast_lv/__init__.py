"""Cyclic three-species stochastic system, its fast periodic flow, and the
averaged slow diffusion of the conserved product z = x1*x2*x3."""

from .core import (CENTRE, Z_MAX, CountState, JumpVector, ModelParams,
                   SimplexPoint, apply_jump, nearest_state, to_point, z_of)
from .fast_dynamics import (FlowTrajectory, IntegrationError, LoopGeometry,
                            action, branch_x2, integrate_flow, loop_geometry,
                            loop_return_time, loop_roots, loop_table, mean_m,
                            period, period_quadrature, slow_generator_apply,
                            time_average, vector_field)
from .particle import (GridMeasure, JumpTrajectory, ParticleEnsemble,
                       RateVector, generator_matrix, invariant_measure,
                       quadratic_operator, rates, sample_invariant, ssa_ensemble,
                       ssa_run, wendel_ratio)
from .sde import (BoundaryClassification, ScaleSpeed, SdeCoefficients,
                  SdeEnsemble, StationaryDensity, avg_generator_apply,
                  classify_boundaries, diffusion, drift, em_step,
                  feller_integrals, sde_ensemble, stationary_density)
from .analysis import (EmpiricalLaw, dirichlet_moment, ks_distance,
                       stationary_comparison)

__version__ = "0.1.0"
