"""otpitch: 1D optimal-transport primitives and an OT equivariance loss
for self-supervised single-pitch estimation on synthetic data."""

from .ot_core import (
    DiscreteDistribution,
    TransportPlan,
    cdf,
    grid_wasserstein,
    lp_ot_oracle,
    monotone_plan,
    normalize,
    quantile,
    translate,
    wasserstein_distance,
    wasserstein_grad,
    wasserstein_p,
)
from .losses import (
    LossState,
    equiv_loss,
    inv_loss,
    ot_loss,
    pesto_baseline_objective,
    pesto_ot_objective,
    sce_loss,
    update_lambdas,
)
from .grad_engine import Tape, Tensor, backward, finite_diff_check
from .model import EncoderConfig, EncoderParams, encode, init_params, \
    load_params, save_params

__all__ = [
    "DiscreteDistribution", "TransportPlan", "cdf", "grid_wasserstein",
    "lp_ot_oracle", "monotone_plan", "normalize", "quantile", "translate",
    "wasserstein_distance", "wasserstein_grad", "wasserstein_p",
    "LossState", "equiv_loss", "inv_loss", "ot_loss",
    "pesto_baseline_objective", "pesto_ot_objective", "sce_loss",
    "update_lambdas",
    "Tape", "Tensor", "backward", "finite_diff_check",
    "EncoderConfig", "EncoderParams", "encode", "init_params",
    "load_params", "save_params",
]

__version__ = "0.1.0"
