"""Local asymptotic minimax estimation of nondifferentiable parameters ``f(g(beta))``."""

from ._validation import InputError, ResourceError
from .equivariant import (
    AffineCombo,
    Coord,
    DirectionalDerivative,
    EquivariantMap,
    GHatEstimator,
    Linear,
    Max,
    Min,
    dir_deriv,
    evaluate,
    exact_step,
    g_hat,
)
from .transform import Loss, Transform, a_hat, f_bar_prime, f_eval, loss_eval
from .risk import (
    GaussianLimit,
    RiskConfig,
    RiskCurve,
    oracle_B,
    oracle_curve,
    select_c_hat,
    simulate_B,
)

__version__ = "0.1.0"
