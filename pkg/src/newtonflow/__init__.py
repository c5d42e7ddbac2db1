"""Particle ensembles and conservative density transport for the flow
dx/dt = v(x), with velocity fields built from root-finding and scoring
iterations, plus a verification harness comparing the two descriptions."""

__version__ = "0.1.0"

from .equivalence import (ComparisonReport, compare_densities,
                          delta_surrogate_test, drift_test,
                          equivalence_experiment, variance_test,
                          velocity_identification)
from .errors import (ConfigError, GridTooSmall, IndefiniteInformation,
                     NewtonFlowError, NonConvergence, NonFiniteEvaluation,
                     SchemeError, SingularJacobian, StabilityError)
from .fields import (VelocityField, builtin_field, linear_decay_field,
                     make_fisher_field, make_gradient_field,
                     make_newton_field, numeric_jacobian,
                     quadratic_newton_field, rotation_field,
                     sampled_divergence, zero_field)
from .glm import (BartlettReport, GlmDataset, MleResult, bartlett_check,
                  fisher_scoring_solve, fisher_velocity_field, glm_fisher,
                  glm_loglik, glm_score, glm_simulate, load_dataset,
                  save_dataset, score_velocity_field)
from .grids import (DensityField, GridSpec, WorkingDomain, load_density,
                    save_density)
from .particles import (ParticleEnsemble, Trajectory, advance_ensemble,
                        empirical_density, integrate, sample_initial)
from .transport import (MomentReport, TransportResult, gaussian_density,
                        max_stable_dt, moment_report, solve_transport,
                        transport_step)

__all__ = [
    "__version__",
    "BartlettReport", "ComparisonReport", "ConfigError", "DensityField",
    "GlmDataset", "GridSpec", "GridTooSmall", "IndefiniteInformation",
    "MleResult", "MomentReport", "NewtonFlowError", "NonConvergence",
    "NonFiniteEvaluation", "ParticleEnsemble", "SchemeError",
    "SingularJacobian", "StabilityError", "Trajectory", "TransportResult",
    "VelocityField", "WorkingDomain", "advance_ensemble", "bartlett_check",
    "builtin_field", "compare_densities", "delta_surrogate_test",
    "drift_test", "empirical_density", "equivalence_experiment",
    "fisher_scoring_solve", "fisher_velocity_field", "gaussian_density",
    "glm_fisher", "glm_loglik", "glm_score", "glm_simulate", "integrate",
    "linear_decay_field", "load_dataset", "load_density",
    "make_fisher_field", "make_gradient_field", "make_newton_field",
    "max_stable_dt", "moment_report", "numeric_jacobian",
    "quadratic_newton_field", "rotation_field", "sample_initial",
    "sampled_divergence", "save_dataset", "save_density",
    "score_velocity_field", "solve_transport", "transport_step",
    "variance_test", "velocity_identification", "zero_field",
]
