"""Wake-regularized natural-gradient optimizers over Kronecker-factored curvature."""
from .curvature import EAState, KronFactors, compute_factors, ea_update, kappa, should_refresh
from .linalg import BACKEND, dense_kron, kron_matvec
from .network import LayerSpec, NetParams, Network
from .steps import (
    ClipPolicy,
    DenseCurvature,
    KronCurvature,
    StepState,
    boundedness_margin,
    build_hat_factors,
    clip_step,
    hat_m_apply,
    hat_m_dense,
    q_step,
    q_step_variable_lambda,
    so_step,
    woqm_step,
)

__version__ = "0.1.0"
