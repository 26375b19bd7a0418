"""Risk-constrained LQR: model-based oracle and model-free actor-critic learner.

The package solves the average-cost LQR problem with a variance-style risk
constraint two ways: exactly, from the model (oracle), and model-free, by a
multi-time-scale actor-critic recursion (learner). The plant module supplies
the stochastic environment and noise moments; matkit holds the shared dense
matrix utilities; cli wires everything into reproducible experiments.
"""

from .matkit import (
    InstabilityError,
    NumericError,
    project_box,
    smat,
    solve_discrete_lyapunov,
    spectral_radius,
    svec,
)
from .plant import (
    ClosedLoopMoments,
    Gaussian,
    GaussianMixture,
    NoiseMoments,
    NoiseSpec,
    Policy,
    SystemModel,
    Uniform,
    closed_loop_moments,
    component_from_dict,
    compute_moments,
    sample_noise,
    simulate,
    step,
)
from .oracle import (
    Certificate,
    CostSpec,
    GradientParts,
    LagrangianParams,
    QParams,
    ReferenceSolution,
    ValueParams,
    bar_iota_value,
    constraint_value,
    exact_gradient,
    fd_gradient,
    lagrangian_params,
    lagrangian_value,
    q_params,
    solve_reference,
    stage_cost,
    stationary_weight,
    value_params,
)
from .learner import (
    CriticParams,
    LearnerState,
    RunParams,
    StepSchedule,
    Trackers,
    TrainingResult,
    actor_step,
    constraint_sample,
    critic_step,
    dual_step,
    feature,
    feature_dim,
    gradient_estimate,
    td_error,
    train,
)

__all__ = [
    "InstabilityError",
    "NumericError",
    "project_box",
    "smat",
    "solve_discrete_lyapunov",
    "spectral_radius",
    "svec",
    "ClosedLoopMoments",
    "Gaussian",
    "GaussianMixture",
    "NoiseMoments",
    "NoiseSpec",
    "Policy",
    "SystemModel",
    "Uniform",
    "closed_loop_moments",
    "component_from_dict",
    "compute_moments",
    "sample_noise",
    "simulate",
    "step",
    "Certificate",
    "CostSpec",
    "GradientParts",
    "LagrangianParams",
    "QParams",
    "ReferenceSolution",
    "ValueParams",
    "bar_iota_value",
    "constraint_value",
    "exact_gradient",
    "fd_gradient",
    "lagrangian_params",
    "lagrangian_value",
    "q_params",
    "solve_reference",
    "stage_cost",
    "stationary_weight",
    "value_params",
    "CriticParams",
    "LearnerState",
    "RunParams",
    "StepSchedule",
    "Trackers",
    "TrainingResult",
    "actor_step",
    "constraint_sample",
    "critic_step",
    "dual_step",
    "feature",
    "feature_dim",
    "gradient_estimate",
    "td_error",
    "train",
]

__version__ = "0.1.0"
