"""Training objectives for the Siamese pitch estimator.

The OT equivariance loss is the 2-Wasserstein distance between the padded
posterior of one frame and the back-shifted padded posterior of its
pitch-shifted sibling.  Baseline alternatives (power-series ratio loss and
shifted symmetric cross-entropy) plus an invariance cross-entropy and a
gradient-norm-based weighting scheme complete the two objective
compositions.

All loss functions return analytic gradients w.r.t. their posterior
arguments so the trainer can chain them into the encoder tape.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .ot_core import grid_wasserstein, translate

# Probability floor inside every logarithm; one-hot targets would
# otherwise produce infinite cross-entropies.
PROB_FLOOR = 1e-8

LAMBDA_MIN = 1e-3
LAMBDA_MAX = 1e3


class PairLoss(NamedTuple):
    value: float
    grad_y: np.ndarray
    grad_yk: np.ndarray


class EquivLoss(NamedTuple):
    value: float
    grad_y: np.ndarray
    grad_yk: np.ndarray
    overflow: bool


def _as_posterior(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("posterior must be a non-empty 1D vector")
    return y


def ot_loss(y, y_k, k: int, k_max: int) -> PairLoss:
    """W2 distance between padded y and the back-shifted padded y_k.

    Zero iff y_k equals y translated by k bins (inside the pad).  The
    distance (not its square) is used so the value scales linearly in the
    residual shift.
    """
    y = _as_posterior(y)
    y_k = _as_posterior(y_k)
    n = y.size
    pad_y = translate(y, 0, k_max)
    pad_yk = translate(y_k, -k, k_max)
    cost, ga, gb = grid_wasserstein(pad_y, pad_yk, p=2.0, with_grad=True)
    if cost < 1e-18:
        return PairLoss(0.0, np.zeros(n), np.zeros(n))
    dist = float(np.sqrt(cost))
    scale = 0.5 / dist
    grad_y = scale * ga[k_max:k_max + n]
    grad_yk = scale * np.roll(gb, k)[k_max:k_max + n]
    return PairLoss(dist, grad_y, grad_yk)


def _huber(t: float):
    """Huber with delta 1: value and derivative."""
    if abs(t) <= 1.0:
        return 0.5 * t * t, t
    return abs(t) - 0.5, float(np.sign(t))


def equiv_loss(y, y_k, k: int, alpha: float) -> EquivLoss:
    """Power-series projection baseline.

    Both posteriors are projected to scalars with the vector
    (alpha, alpha^2, ..., alpha^n); the ratio of the scalars is compared
    to alpha^k through a Huber penalty.  Large alpha^i overflow double
    precision: the overflow flag reports any non-finite intermediate and
    the gradients are zeroed so training can skip the step rather than
    silently diverge.
    """
    y = _as_posterior(y)
    y_k = _as_posterior(y_k)
    alpha = float(alpha)
    if alpha <= 1.0:
        raise ValueError(f"alpha must be > 1; got {alpha!r}")
    n = y.size
    with np.errstate(over="ignore", invalid="ignore"):
        powers = alpha ** np.arange(1, n + 1, dtype=float)
        e_y = float(powers @ y)
        e_yk = float(powers @ y_k)
        ratio = e_yk / e_y if e_y != 0 else np.inf
        target = alpha ** float(k)
        t = ratio - target
    overflow = not (np.all(np.isfinite(powers)) and np.isfinite(ratio)
                    and np.isfinite(target) and np.isfinite(t))
    if overflow:
        return EquivLoss(float(t), np.zeros(n), np.zeros(n), True)
    value, dh = _huber(t)
    grad_yk = dh * powers / e_y
    grad_y = -dh * e_yk / (e_y * e_y) * powers
    return EquivLoss(float(value), grad_y, grad_yk, False)


def _floor(v: np.ndarray) -> np.ndarray:
    # Affine shrink toward uniform keeps the floored vector on the simplex.
    return (1.0 - v.size * PROB_FLOOR) * v + PROB_FLOOR


def _symmetric_ce(p: np.ndarray, q: np.ndarray):
    """0.5 * [CE(p, q) + CE(q, p)] with floored logs; returns value, grads."""
    scale = 1.0 - p.size * PROB_FLOOR
    fp = _floor(p)
    fq = _floor(q)
    value = -0.5 * float(p @ np.log(fq) + q @ np.log(fp))
    grad_p = -0.5 * (np.log(fq) + q * scale / fp)
    grad_q = -0.5 * (np.log(fp) + p * scale / fq)
    return value, grad_p, grad_q


def sce_loss(y, y_k, k: int, k_max: int) -> PairLoss:
    """Shifted symmetric cross-entropy on the padded domain."""
    y = _as_posterior(y)
    y_k = _as_posterior(y_k)
    n = y.size
    p = translate(y, 0, k_max)
    q = translate(y_k, -k, k_max)
    value, gp, gq = _symmetric_ce(p, q)
    return PairLoss(value, gp[k_max:k_max + n], np.roll(gq, k)[k_max:k_max + n])


def inv_loss(y_a, y_b) -> PairLoss:
    """Symmetric cross-entropy between posteriors of two augmentations."""
    y_a = _as_posterior(y_a)
    y_b = _as_posterior(y_b)
    if y_a.size != y_b.size:
        raise ValueError("posteriors must have equal length")
    value, ga, gb = _symmetric_ce(y_a, y_b)
    return PairLoss(value, ga, gb)


@dataclass(frozen=True)
class LossState:
    """Loss weights plus running gradient-norm statistics.

    The first loss listed in each update call is the reference: its
    lambda stays pinned at 1 and its gradient-norm EMA is the target the
    other weights are balanced against.
    """

    lambda_ot: float = 1.0
    lambda_inv: float = 1.0
    lambda_equiv: float = 1.0
    lambda_sce: float = 1.0
    ema: dict = field(default_factory=dict)
    ema_decay: float = 0.99

    def __post_init__(self):
        for name in ("lambda_ot", "lambda_inv", "lambda_equiv", "lambda_sce"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 < self.ema_decay < 1.0):
            raise ValueError("ema_decay must be in (0, 1)")

    def weight(self, name: str) -> float:
        return getattr(self, f"lambda_{name}")


def update_lambdas(state: LossState, grad_norms: dict[str, float]) -> LossState:
    """Inverse-gradient-norm balancing with an EMA of each norm.

    Non-finite norms leave the state untouched (with a warning) so a
    single bad step cannot poison the weighting.
    """
    norms = {name: float(v) for name, v in grad_norms.items()}
    if not norms:
        return state
    if any(not np.isfinite(v) or v < 0 for v in norms.values()):
        warnings.warn("non-finite gradient norms; lambda state unchanged",
                      RuntimeWarning, stacklevel=2)
        return state
    ema = dict(state.ema)
    for name, norm in norms.items():
        prev = ema.get(name, norm)
        ema[name] = state.ema_decay * prev + (1.0 - state.ema_decay) * norm
    names = list(norms)
    reference = names[0]
    target = ema[reference]
    updates: dict[str, float] = {f"lambda_{reference}": 1.0}
    for name in names[1:]:
        lam = target / (ema[name] + 1e-8)
        updates[f"lambda_{name}"] = float(np.clip(lam, LAMBDA_MIN, LAMBDA_MAX))
    return replace(state, ema=ema, **updates)


@dataclass(frozen=True)
class ObjectiveResult:
    total: float
    components: dict
    grads: dict
    overflow: bool = False


def pesto_ot_objective(y, y_k, y_aug, k: int, k_max: int,
                       state: LossState) -> ObjectiveResult:
    """lambda_OT * OT equivariance + lambda_inv * invariance.

    ``y_aug`` is the pair of posteriors from two independent
    pitch-preserving augmentations of the frame behind ``y``; keeping the
    invariance term on its own branch pair makes the objective symmetric
    under relabeling (y, y_k, k) <-> (y_k, y, -k).
    """
    y_a, y_b = y_aug
    ot = ot_loss(y, y_k, k, k_max)
    inv = inv_loss(y_a, y_b)
    l_ot, l_inv = state.lambda_ot, state.lambda_inv
    total = l_ot * ot.value + l_inv * inv.value
    return ObjectiveResult(
        total=float(total),
        components={"ot": ot.value, "inv": inv.value},
        grads={
            "y": l_ot * ot.grad_y,
            "y_k": l_ot * ot.grad_yk,
            "y_aug": (l_inv * inv.grad_y, l_inv * inv.grad_yk),
        },
    )


def pesto_baseline_objective(y, y_k, y_aug, k: int, k_max: int, alpha: float,
                             state: LossState) -> ObjectiveResult:
    """lambda_equiv * ratio loss + lambda_sce * shifted CE + lambda_inv * invariance."""
    y_a, y_b = y_aug
    eq = equiv_loss(y, y_k, k, alpha)
    sce = sce_loss(y, y_k, k, k_max)
    inv = inv_loss(y_a, y_b)
    l_eq, l_sce, l_inv = state.lambda_equiv, state.lambda_sce, state.lambda_inv
    total = l_eq * eq.value + l_sce * sce.value + l_inv * inv.value
    return ObjectiveResult(
        total=float(total),
        components={"equiv": eq.value, "sce": sce.value, "inv": inv.value},
        grads={
            "y": l_eq * eq.grad_y + l_sce * sce.grad_y,
            "y_k": l_eq * eq.grad_yk + l_sce * sce.grad_yk,
            "y_aug": (l_inv * inv.grad_y, l_inv * inv.grad_yk),
        },
        overflow=eq.overflow,
    )
