"""Discrete 1D optimal transport.

Distributions are nonnegative weights on a strictly increasing position
grid.  The p-Wasserstein cost between two such distributions has a closed
form: integrate |F_mu^{-1}(r) - F_nu^{-1}(r)|^p over the merged quantile
levels of both cumulative weight sequences.  For discrete inputs this sum
is exact, which lets us cross-check it against a small LP solver.

All functions are pure; nothing here holds mutable state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import (
    DegenerateInputError,
    DomainError,
    ShiftOutOfRangeError,
    SizeError,
)

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-9
# Softmax round-off can leave tiny negative weights; anything below this
# is a genuine error rather than noise.
NEGATIVE_CLAMP = -1e-12

# Exact LP oracle is meant for tiny test instances only.
LP_MAX_CELLS = 64


def normalize(weights) -> np.ndarray:
    """Rescale a nonnegative weight vector onto the probability simplex."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise DegenerateInputError("weights must be a non-empty 1D sequence")
    if np.any(w < 0):
        raise DegenerateInputError("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise DegenerateInputError("weights sum to zero; cannot normalize")
    return w / total


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability weights on a strictly increasing 1D position grid."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if pos.ndim != 1 or w.ndim != 1:
            raise DomainError("positions and weights must be 1D")
        if pos.size != w.size or pos.size < 1:
            raise DomainError("positions and weights must have equal length >= 1")
        if pos.size > 1 and not np.all(np.diff(pos) > 0):
            raise DomainError("positions must be strictly increasing")
        if np.any(w < NEGATIVE_CLAMP):
            raise DomainError("weights must be nonnegative")
        w = np.clip(w, 0.0, None)
        total = w.sum()
        if abs(total - 1.0) > SIMPLEX_TOL:
            raise DomainError(
                f"weights must sum to 1 within {SIMPLEX_TOL}; got {total!r}"
            )
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w / total)

    @classmethod
    def on_grid(cls, weights, spacing: float = 1.0, origin: float = 0.0):
        """Distribution on the uniform grid origin + spacing * [0..n)."""
        w = np.asarray(weights, dtype=float)
        return cls(origin + spacing * np.arange(w.size, dtype=float), w)

    def __len__(self) -> int:
        return self.positions.size


@dataclass(frozen=True)
class TransportPlan:
    """Coupling matrix between two discrete distributions plus its cost."""

    matrix: np.ndarray
    cost: float

    def check_marginals(self, mu: DiscreteDistribution, nu: DiscreteDistribution,
                        tol: float = SIMPLEX_TOL) -> None:
        m = np.asarray(self.matrix, dtype=float)
        if np.any(m < -tol):
            raise DomainError("transport plan has negative entries")
        if (np.max(np.abs(m.sum(axis=1) - mu.weights)) > tol
                or np.max(np.abs(m.sum(axis=0) - nu.weights)) > tol):
            raise DomainError("transport plan marginals do not match")


def cdf(dist: DiscreteDistribution, t: float) -> float:
    """Right-continuous CDF: total weight of atoms at positions <= t."""
    return float(dist.weights[dist.positions <= t].sum())


def quantile(dist: DiscreteDistribution, r: float) -> float:
    """Smallest position whose CDF reaches r, for r in (0, 1]."""
    if not (0.0 < r <= 1.0):
        raise DomainError(f"quantile level must be in (0, 1]; got {r!r}")
    cw = np.cumsum(dist.weights)
    idx = int(np.searchsorted(cw, r, side="left"))
    idx = min(idx, len(dist) - 1)
    return float(dist.positions[idx])


def _merged_cost_grad(pos_a, w_a, pos_b, w_b, p, want_grad):
    """Shared core: exact 1D OT cost over merged quantile levels.

    Gradients flow through the cumulative sums that define the levels;
    quantile positions are treated as piecewise constant.  On ties the
    stable sort keeps mu-levels before nu-levels.
    """
    n, m = w_a.size, w_b.size
    cwa = np.cumsum(w_a)
    cwb = np.cumsum(w_b)
    qs_all = np.concatenate([cwa, cwb])
    order = np.argsort(qs_all, kind="stable")
    qs = qs_all[order]
    iu = np.minimum(np.searchsorted(cwa, qs, side="left"), n - 1)
    iv = np.minimum(np.searchsorted(cwb, qs, side="left"), m - 1)
    diff = np.abs(pos_a[iu] - pos_b[iv]) ** p
    deltas = np.diff(qs, prepend=0.0)
    cost = float(np.dot(diff, deltas))
    if not want_grad:
        return cost, None, None
    # d(cost)/d(level_l) = diff_l - diff_{l+1}; scatter back to the
    # originating cumulative sums, then reverse-cumsum onto the weights.
    dlevel = diff - np.concatenate([diff[1:], [0.0]])
    dlevel_orig = np.empty_like(dlevel)
    dlevel_orig[order] = dlevel
    grad_a = np.cumsum(dlevel_orig[:n][::-1])[::-1]
    grad_b = np.cumsum(dlevel_orig[n:][::-1])[::-1]
    return cost, grad_a, grad_b


def _check_p(p) -> float:
    p = float(p)
    if not np.isfinite(p) or p < 1.0:
        raise DomainError(f"Wasserstein order p must be finite and >= 1; got {p!r}")
    return p


def wasserstein_p(mu: DiscreteDistribution, nu: DiscreteDistribution, p) -> float:
    """Exact OT cost with ground cost |x - y|^p, i.e. W_p raised to the p."""
    p = _check_p(p)
    cost, _, _ = _merged_cost_grad(mu.positions, mu.weights,
                                   nu.positions, nu.weights, p, False)
    return cost


def wasserstein_distance(mu: DiscreteDistribution, nu: DiscreteDistribution, p) -> float:
    """The p-Wasserstein distance, cost ** (1/p)."""
    p = _check_p(p)
    return wasserstein_p(mu, nu, p) ** (1.0 / p)


def wasserstein_grad(mu: DiscreteDistribution, nu: DiscreteDistribution, p):
    """Gradient of the OT cost w.r.t. both weight vectors.

    Defined almost everywhere (exact ties between quantile levels
    excluded).  The components are meaningful up to a per-distribution
    constant; project onto the simplex tangent space before comparing
    against finite differences.
    """
    p = _check_p(p)
    _, ga, gb = _merged_cost_grad(mu.positions, mu.weights,
                                  nu.positions, nu.weights, p, True)
    return ga, gb


def grid_wasserstein(w_a, w_b, p=2.0, spacing: float = 1.0, with_grad: bool = False):
    """OT cost between weight vectors on a shared uniform grid.

    Skips distribution validation so callers may pass slightly
    off-simplex vectors (finite-difference probes, padded posteriors).
    Returns ``cost`` or ``(cost, grad_a, grad_b)``.
    """
    p = _check_p(p)
    w_a = np.asarray(w_a, dtype=float)
    w_b = np.asarray(w_b, dtype=float)
    pos_a = spacing * np.arange(w_a.size, dtype=float)
    pos_b = spacing * np.arange(w_b.size, dtype=float)
    cost, ga, gb = _merged_cost_grad(pos_a, w_a, pos_b, w_b, p, with_grad)
    if with_grad:
        return cost, ga, gb
    return cost


def translate(y, k: int, k_max: int) -> np.ndarray:
    """Pad with k_max zeros on both sides, then circularly shift right by k.

    Mass wrapping around the padded boundary is permitted but logged:
    the translation identities hold only while the shifted support stays
    inside the pad.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise DomainError("translate expects a 1D weight vector")
    k = int(k)
    k_max = int(k_max)
    if k_max < 0:
        raise DomainError("k_max must be nonnegative")
    if abs(k) > k_max:
        raise ShiftOutOfRangeError(f"|k|={abs(k)} exceeds k_max={k_max}")
    padded = np.concatenate([np.zeros(k_max), y, np.zeros(k_max)])
    if k != 0:
        wrapped = padded[-k:].sum() if k > 0 else padded[:-k].sum()
        if wrapped > 0:
            logger.debug("translate: %.3g mass wraps around the pad boundary", wrapped)
    return np.roll(padded, k)


def monotone_plan(mu: DiscreteDistribution, nu: DiscreteDistribution,
                  cost_matrix) -> TransportPlan:
    """North-west-corner (monotone) coupling; optimal in 1D for convex costs."""
    c = np.asarray(cost_matrix, dtype=float)
    n, m = len(mu), len(nu)
    if c.shape != (n, m):
        raise DomainError(f"cost matrix must be {(n, m)}; got {c.shape}")
    plan = np.zeros((n, m))
    a = mu.weights.copy()
    b = nu.weights.copy()
    i = j = 0
    while i < n and j < m:
        mass = min(a[i], b[j])
        plan[i, j] = mass
        a[i] -= mass
        b[j] -= mass
        if a[i] <= b[j]:
            i += 1
        else:
            j += 1
    return TransportPlan(plan, float(np.sum(plan * c)))


def lp_ot_oracle(mu: DiscreteDistribution, nu: DiscreteDistribution,
                 cost_matrix) -> TransportPlan:
    """Exact optimal transport plan via linear programming (test oracle).

    Small instances only (n*m <= 64).
    """
    c = np.asarray(cost_matrix, dtype=float)
    n, m = len(mu), len(nu)
    if c.shape != (n, m):
        raise DomainError(f"cost matrix must be {(n, m)}; got {c.shape}")
    if np.any(c < 0):
        raise DomainError("cost matrix must be nonnegative")
    if n * m > LP_MAX_CELLS:
        raise SizeError(f"instance {n}x{m} exceeds {LP_MAX_CELLS} cells")

    # Row and column marginal equalities over the flattened plan.
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([mu.weights, nu.weights])
    res = linprog(c.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise DomainError(f"LP solver failed: {res.message}")
    plan = TransportPlan(res.x.reshape(n, m), float(res.fun))
    plan.check_marginals(mu, nu, tol=1e-8)
    return plan
