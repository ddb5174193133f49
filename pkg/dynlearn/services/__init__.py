"""Services module.

Submodules are imported in dependency order.
"""

from dynlearn.services.numcore import (
    DimensionMismatchError,
    IllConditionedMassError,
    Mlp,
    NumericalFailureError,
    batch_jacobian,
    mass_solve,
    mlp_eval,
    mlp_input_jacobian,
    mlp_param_grad,
)
from dynlearn.services.physnets import (
    CholeskyHead,
    InputMatrixHead,
    MechanicalStructure,
    PotentialHead,
    StructuredModel,
    build_structured_model,
)
from dynlearn.services.dynamics import (
    ConfState,
    coriolis_force,
    energy_rate,
    hamiltonian,
    hamiltonian_field,
    hamiltonian_vector_field,
    lagrangian,
    lagrangian_field,
    lagrangian_forward_dynamics,
)
from dynlearn.services.integrators import IntegrationError, rk4_step, rollout, rollout_windowed
from dynlearn.services.learning import (
    LossEvaluationError,
    TrainingDivergedError,
    TrainingError,
    TrainResult,
    TransitionDataset,
    hnn_loss,
    lnn_loss,
    train,
)
from dynlearn.services.plants import (
    Plant,
    PlantDomainError,
    UnknownPlantError,
    builtin_plants,
    generate_dataset,
    get_plant,
    plant_forward_dynamics,
)
from dynlearn.services.control import (
    ClosedLoopResult,
    ControllerError,
    ReferenceSignal,
    RegulationController,
    TrackingController,
    closed_loop,
    estimate_P,
    regulation_control,
    tracking_control,
    tracking_rmse,
)
from dynlearn.services.evaluation import BlackBoxModel, EvaluationError, evaluate_model, train_blackbox

__all__ = [
    "BlackBoxModel",
    "CholeskyHead",
    "ClosedLoopResult",
    "ConfState",
    "ControllerError",
    "DimensionMismatchError",
    "EvaluationError",
    "IllConditionedMassError",
    "InputMatrixHead",
    "IntegrationError",
    "LossEvaluationError",
    "MechanicalStructure",
    "Mlp",
    "NumericalFailureError",
    "Plant",
    "PlantDomainError",
    "PotentialHead",
    "ReferenceSignal",
    "RegulationController",
    "StructuredModel",
    "TrackingController",
    "TrainResult",
    "TrainingDivergedError",
    "TrainingError",
    "TransitionDataset",
    "UnknownPlantError",
    "batch_jacobian",
    "build_structured_model",
    "builtin_plants",
    "closed_loop",
    "coriolis_force",
    "energy_rate",
    "estimate_P",
    "evaluate_model",
    "generate_dataset",
    "get_plant",
    "hamiltonian",
    "hamiltonian_field",
    "hamiltonian_vector_field",
    "hnn_loss",
    "lagrangian",
    "lagrangian_field",
    "lagrangian_forward_dynamics",
    "lnn_loss",
    "mass_solve",
    "mlp_eval",
    "mlp_input_jacobian",
    "mlp_param_grad",
    "plant_forward_dynamics",
    "regulation_control",
    "rk4_step",
    "rollout",
    "rollout_windowed",
    "tracking_control",
    "tracking_rmse",
    "train",
    "train_blackbox",
]
