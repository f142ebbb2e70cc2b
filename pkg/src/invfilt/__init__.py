"""Inverse filtering for hidden Markov models.

Reconstructs the transition matrix, observation matrix and observation
sequence of an HMM from the posteriors its Bayesian filter produced, and uses
that to calibrate an adversary's sensor from the actions it takes.
"""
from .algebra import (NullspaceBasis, check_identifiability, coefficient_matrices,
                      coefficient_matrix, factorize_directions, filter_direction, group_priors,
                      intersect_nullspaces, invert_known_observations, nullspace_basis,
                      orient_direction, reconstruct_observations, unvec, vec)
from .caa import (AdversaryModel, CaaTrace, CalibrationReport, PipelineConfig,
                  QuadraticCostModel, best_action, calibrate_sensor_ml, reconstruct_belief,
                  reconstruct_beliefs, remote_calibration_pipeline, simulate_adversary)
from .clustering import (InverseFilterConfig, InverseFilterResult, inverse_filter,
                         refine_and_intersect, spherical_kmeans)
from .errors import (ClusteringError, FactorizationError, InvFiltError, ModelAssumptionError,
                     NotIdentifiableError, RelaxationError, StageError, ValidationError,
                     ZeroLikelihoodError)
from .experiment import ExperimentConfig, SuccessCurve, emit_results, run_success_curve
from .metrics import permutation_aligned_error
from .presets import get_preset
from .relaxation import (NullspaceCandidate, RelaxationConfig, RelaxationProblem,
                         solve_relaxation)
from .rng import make_rng
from .stochastic import (HmmTrajectory, HmmValidity, filter_sequence, filter_update, simulate,
                         validate_hmm)

__version__ = "0.1.0"
