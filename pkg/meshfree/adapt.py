import logging
from dataclasses import dataclass, field
from enum import IntEnum
from math import comb, log
from typing import Optional, Sequence, Tuple

import numpy as np

from meshfree.approx import ALLOWED_ORDERS, IMEX_ORDERS, PHS_EXPONENT, build_operator_table
from meshfree.errors import NoDataError
from meshfree.interpolate import ShepardInterpolator
from meshfree.nodegen import NodeSet, NodeType, SpacingField
from meshfree.system import assemble

logger = logging.getLogger(__name__)

ORDER_NEIGHBORS = 3
WARM_START_NEIGHBORS = 3


class Action(IntEnum):
    DEREFINE = -1
    NONE = 0
    REFINE = 1


@dataclass(frozen=True)
class AdaptivityParams:
    alpha_h: float
    beta_h: float
    lambda_h: float
    theta_h: float
    alpha_p: float
    beta_p: float
    lambda_p: float
    theta_p: float
    h_max: float
    n_max: int
    n_iter: int
    gamma: Optional[float] = None

    def __post_init__(self):
        for pair in ("h", "p"):
            alpha, beta = getattr(self, f"alpha_{pair}"), getattr(self, f"beta_{pair}")
            if not (0 < alpha < 1 and 0 < beta < 1):
                raise ValueError(f"alpha_{pair} and beta_{pair} must lie in (0, 1), got {alpha}, {beta}.")
            if beta > alpha:
                raise ValueError(f"beta_{pair} ({beta}) must not exceed alpha_{pair} ({alpha}).")
            for name in ("lambda", "theta"):
                if getattr(self, f"{name}_{pair}") < 1:
                    raise ValueError(f"{name}_{pair} must be at least 1.")
        if self.h_max <= 0:
            raise ValueError(f"h_max must be positive, got {self.h_max}.")
        if self.n_max <= 0 or self.n_iter < 0:
            raise ValueError("n_max must be positive and n_iter non-negative.")


@dataclass
class IndicatorField:
    """Per-node error indication; ``active`` excludes the exactly imposed (Dirichlet) nodes."""

    eta: np.ndarray
    active: np.ndarray

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        self.active = np.asarray(self.active, dtype=bool)
        if self.eta.shape != self.active.shape:
            raise ValueError("eta and active mask must have the same length.")
        if not np.all(np.isfinite(self.eta)) or np.any(self.eta < 0):
            raise ValueError("Indicator values must be finite and non-negative.")

    @property
    def eta_max(self) -> float:
        return float(self.eta[self.active].max()) if self.active.any() else 0.0

    @property
    def eta_min(self) -> float:
        return float(self.eta[self.active].min()) if self.active.any() else 0.0


@dataclass
class MarkDecision:
    h: np.ndarray
    p: np.ndarray = field(default=None)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=int)
        self.p = np.zeros_like(self.h) if self.p is None else np.asarray(self.p, dtype=int)

    def counts(self) -> dict:
        return {f"{kind}_{a.name.lower()}": int(np.count_nonzero(getattr(self, kind) == a))
                for kind in ("h", "p") for a in Action}


def _residual_indicator(system, solution: np.ndarray) -> np.ndarray:
    residual = system.rhs - system.matrix @ solution
    residual[system.constraint_rows] = 0.0
    return np.linalg.norm(residual.reshape(-1, system.components), axis=1)


def imex_indicator(problem, solution: np.ndarray, nodes: NodeSet, order_bump: int = 2,
                   k: int = PHS_EXPONENT, imex_orders: Sequence[int] = IMEX_ORDERS) -> IndicatorField:
    """
    Rebuild the problem's operators at orders m_i + order_bump, apply them to the
    implicit solution and compare with the right-hand side node by node.
    """
    orders = nodes.m + order_bump
    bad = ~np.isin(orders, imex_orders)
    if bad.any():
        raise ValueError(f"Explicit orders {sorted(set(orders[bad].tolist()))} are outside {tuple(imex_orders)}.")
    weights = build_operator_table(nodes, problem.operators(), k, orders=orders)
    explicit = assemble(problem, nodes, weights)
    eta = _residual_indicator(explicit, np.asarray(solution, dtype=float).reshape(-1))
    active = nodes.types != NodeType.DIRICHLET
    eta[~active] = 0.0
    return IndicatorField(eta, active)


def exact_indicator(problem, solution: np.ndarray, nodes: NodeSet) -> IndicatorField:
    """Nodal distance between the numerical and the closed-form solution."""
    if problem.exact is None:
        raise ValueError(f"Problem '{problem.name}' has no closed form for the exact indicator.")
    exact = np.asarray(problem.exact(nodes.positions), dtype=float).reshape(len(nodes), -1)
    diff = np.asarray(solution, dtype=float).reshape(len(nodes), -1) - exact
    eta = np.linalg.norm(diff, axis=1)
    active = nodes.types != NodeType.DIRICHLET
    eta[~active] = 0.0
    return IndicatorField(eta, active)


def mark(eta: IndicatorField, alpha: float, beta: float) -> np.ndarray:
    """Refine above alpha * eta_max, derefine below beta * eta_max, inactive nodes untouched."""
    if beta > alpha:
        raise ValueError(f"beta ({beta}) must not exceed alpha ({alpha}).")
    top = eta.eta_max
    actions = np.full(len(eta.eta), Action.NONE, dtype=int)
    actions[eta.eta > alpha * top] = Action.REFINE
    actions[eta.eta < beta * top] = Action.DEREFINE
    actions[~eta.active] = Action.NONE
    return actions


def mark_nodes(eta: IndicatorField, params: AdaptivityParams) -> MarkDecision:
    return MarkDecision(mark(eta, params.alpha_h, params.beta_h), mark(eta, params.alpha_p, params.beta_p))


def _scalar_or_array(values: np.ndarray):
    return float(values) if np.ndim(values) == 0 else values


def refine_denominator(eta_i, eta_max: float, alpha: float, lam: float):
    """Refinement divisor in [1, lambda]; lambda itself when the band is degenerate."""
    eta_i = np.asarray(eta_i, dtype=float)
    band = eta_max - alpha * eta_max
    if band <= 0:
        return _scalar_or_array(np.full_like(eta_i, lam))
    frac = np.clip((eta_i - alpha * eta_max) / band, 0.0, 1.0)
    return _scalar_or_array(frac * (lam - 1.0) + 1.0)


def derefine_denominator(eta_i, eta_max: float, eta_min: float, beta: float, theta: float):
    """De-refinement divisor in [1/theta, 1]; 1/theta when the band is degenerate."""
    eta_i = np.asarray(eta_i, dtype=float)
    band = beta * eta_max - eta_min
    if band <= 0:
        return _scalar_or_array(np.full_like(eta_i, 1.0 / theta))
    frac = np.clip((beta * eta_max - eta_i) / band, 0.0, 1.0)
    return _scalar_or_array(frac * (1.0 / theta - 1.0) + 1.0)


def refine_spacing(h_old, eta_i, eta_max: float, alpha: float, lam: float):
    return _scalar_or_array(np.asarray(h_old, dtype=float) / refine_denominator(eta_i, eta_max, alpha, lam))


def derefine_spacing(h_old, eta_i, eta_max: float, eta_min: float, beta: float, theta: float):
    return _scalar_or_array(
        np.asarray(h_old, dtype=float) / derefine_denominator(eta_i, eta_max, eta_min, beta, theta))


def snap_order(target, allowed: Sequence[int] = ALLOWED_ORDERS):
    """
    Round to the nearest integer (halves up), then to the nearest allowed order
    with ties going to the higher order.
    """
    allowed = np.sort(np.asarray(allowed, dtype=int))
    rounded = np.floor(np.asarray(target, dtype=float) + 0.5)
    flat = np.atleast_1d(rounded).reshape(-1)
    desc = allowed[::-1]
    idx = np.argmin(np.abs(desc[None, :] - flat[:, None]), axis=1)
    snapped = desc[idx].reshape(np.shape(rounded))
    return int(snapped) if np.ndim(snapped) == 0 else snapped


def update_order(m_old, action, factor, allowed: Sequence[int] = ALLOWED_ORDERS):
    """New order m_old * factor for refine/derefine actions, snapped to ``allowed``; unchanged for none."""
    m_old = np.asarray(m_old, dtype=int)
    action = np.broadcast_to(np.asarray(action, dtype=int), m_old.shape)
    target = m_old * np.asarray(factor, dtype=float)
    out = np.where(action == Action.NONE, m_old, snap_order(target, allowed))
    return int(out) if np.ndim(out) == 0 else out


class OrderField:
    """Approximation order m(p): Shepard over the 3 nearest carriers, snapped to the allowed orders."""

    def __init__(self, points, values, n_nearest: int = ORDER_NEIGHBORS,
                 allowed: Sequence[int] = ALLOWED_ORDERS, power: float = 2.0):
        self._interp = ShepardInterpolator(points, values, n_nearest, power)
        self.allowed = tuple(sorted(allowed))

    @classmethod
    def constant(cls, m: int, dimension: int = 2, allowed: Sequence[int] = ALLOWED_ORDERS) -> "OrderField":
        return cls(np.zeros((1, dimension)), [m], n_nearest=1, allowed=allowed)

    def raw(self, x) -> np.ndarray:
        return self._interp(x)

    def __call__(self, x):
        return snap_order(self._interp(x), self.allowed)


def transfer_fields(old_nodes: NodeSet, h_new_at_old, m_new_at_old, h_max: Optional[float] = None,
                    allowed: Sequence[int] = ALLOWED_ORDERS) -> Tuple[SpacingField, OrderField]:
    """Global h and m fields over the domain from per-node targets on the previous cloud."""
    h_new_at_old = np.asarray(h_new_at_old, dtype=float)
    m_new_at_old = np.asarray(m_new_at_old, dtype=float)
    if len(h_new_at_old) != len(old_nodes) or len(m_new_at_old) != len(old_nodes):
        raise ValueError("transfer_fields needs one target value per old node.")
    spacing = SpacingField(old_nodes.positions, h_new_at_old, h_max=h_max)
    order = OrderField(old_nodes.positions, m_new_at_old, allowed=allowed)
    return spacing, order


def enforce_caps(n_nodes: int, n_max: int, decision: MarkDecision) -> MarkDecision:
    """Once the node budget is reached h-refinement is switched off; everything else stays."""
    if n_nodes < n_max:
        return decision
    h = decision.h.copy()
    blocked = int(np.count_nonzero(h == Action.REFINE))
    h[h == Action.REFINE] = Action.NONE
    if blocked:
        logger.info(f"Node budget reached ({n_nodes} >= {n_max}); suppressed {blocked} h-refinements.")
    return MarkDecision(h, decision.p.copy())


def stop_check(eta_max_history: Sequence[float], iteration: int, n_iter: int, gamma: Optional[float] = None) -> bool:
    if len(eta_max_history) == 0:
        raise ValueError("stop_check needs at least one indicator maximum.")
    if iteration >= n_iter:
        return True
    if gamma is None:
        return False
    first = eta_max_history[0]
    if first == 0:
        return True
    return eta_max_history[-1] / first <= gamma


def target_order_guess(m0: float, e0: float, e_t: float) -> float:
    if e0 <= 0 or e_t <= 0:
        raise ValueError("Errors must be positive.")
    return m0 + log(e_t / e0)


def complexity_ratio(m_t: int, m_0: int, h_t: float, h_0: float, d: int) -> float:
    if h_t <= 0 or h_0 <= 0:
        raise ValueError("Spacings must be positive.")
    return (comb(m_t + d, d) ** 3 * (1.0 / h_t) ** d) / (comb(m_0 + d, d) ** 3 * (1.0 / h_0) ** d)


def adapt_fields(nodes: NodeSet, eta: IndicatorField, params: AdaptivityParams,
                 allowed: Sequence[int] = ALLOWED_ORDERS) -> Tuple[SpacingField, OrderField, MarkDecision]:
    """Mark, apply the caps, compute per-node h and m targets and transfer them onto global fields."""
    decision = enforce_caps(len(nodes), params.n_max, mark_nodes(eta, params))
    top, bottom = eta.eta_max, eta.eta_min

    h_new = nodes.h.copy()
    refine = decision.h == Action.REFINE
    derefine = decision.h == Action.DEREFINE
    h_new[refine] = refine_spacing(nodes.h[refine], eta.eta[refine], top, params.alpha_h, params.lambda_h)
    h_new[derefine] = derefine_spacing(nodes.h[derefine], eta.eta[derefine], top, bottom,
                                       params.beta_h, params.theta_h)

    factor = np.ones(len(nodes))
    refine_p = decision.p == Action.REFINE
    derefine_p = decision.p == Action.DEREFINE
    factor[refine_p] = refine_denominator(eta.eta[refine_p], top, params.alpha_p, params.lambda_p)
    factor[derefine_p] = derefine_denominator(eta.eta[derefine_p], top, bottom, params.beta_p, params.theta_p)
    m_new = update_order(nodes.m, decision.p, factor, allowed)

    logger.info(f"Marked nodes: {decision.counts()}")
    spacing, order = transfer_fields(nodes, h_new, m_new, params.h_max, allowed)
    return spacing, order, decision


def warm_start(old_nodes: NodeSet, old_solution: np.ndarray, new_nodes: NodeSet, components: int) -> np.ndarray:
    """Previous solution carried to the new cloud by Shepard interpolation, node-major."""
    if len(old_nodes) == 0:
        raise NoDataError("No previous solution to interpolate from.")
    values = np.asarray(old_solution, dtype=float).reshape(len(old_nodes), components)
    out = np.column_stack([
        ShepardInterpolator(old_nodes.positions, values[:, c], WARM_START_NEIGHBORS)(new_nodes.positions)
        for c in range(components)
    ])
    return out.reshape(-1)
