"""Analytic self-checks run by the ``check`` subcommand."""
import logging
from typing import Callable, List, NamedTuple

import numpy as np
from scipy.integrate import quad

from meshfree.adapt import OrderField
from meshfree.approx import (ALLOWED_ORDERS, Operator, build_operator_table, compute_weights, gradient_operators,
                             hessian_operators, monomial_derivatives, monomial_exponents, stencil_size)
from meshfree.errors import HpAdaptError
from meshfree.nodegen import NodeType, SpacingField, fill_domain
from meshfree.problems import ElasticMaterial, contact_tractions, hertz_constants, peak_problem
from meshfree.system import assemble

logger = logging.getLogger(__name__)

HALF_WIDTH_MM = 0.2067
HALF_WIDTH_TOLERANCE = 5e-4
FORCE_TOLERANCE = 5e-3
EXACTNESS_TOLERANCE = 1e-7
RESIDUAL_SLOPE = 3.0
RESIDUAL_SPACINGS = (0.05, 0.025, 0.0125)
# derivatives below this magnitude are compared in absolute terms
EXACTNESS_FLOOR = 1.0


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def _fretting_constants():
    aluminium = ElasticMaterial(72.1e9, 0.33)
    return hertz_constants(543.0, 10e-3, 4e-3, (aluminium, aluminium), 0.3, 155.0, 100e6)


def check_hertz_half_width() -> CheckResult:
    a_mm = _fretting_constants().a * 1e3
    error = abs(a_mm - HALF_WIDTH_MM) / HALF_WIDTH_MM
    return CheckResult("hertz-half-width", error <= HALF_WIDTH_TOLERANCE, f"a = {a_mm:.5f} mm (rel. error {error:.2e})")


def check_hertz_force_balance() -> CheckResult:
    hertz = _fretting_constants()
    total, _ = quad(lambda x: float(contact_tractions(hertz, x)[0]), -hertz.a, hertz.a, limit=200)
    force = total * 4e-3
    error = abs(force - 543.0) / 543.0
    return CheckResult("hertz-force-balance", error <= FORCE_TOLERANCE, f"integral p t dx = {force:.3f} N (rel. error {error:.2e})")


def peak_residual_levels(h_values=RESIDUAL_SPACINGS, m: int = 4, strength: float = 10.0, seed: int = 0):
    """RMS interior residual of the exact peak solution in the discrete operator per spacing."""
    problem = peak_problem(strength)
    residuals = []
    for h in h_values:
        nodes = problem.prepare(fill_domain(problem.shape, SpacingField.constant(h), seed,
                                            order=OrderField.constant(m, allowed=[m])))
        weights = build_operator_table(nodes, problem.operators(), orders=nodes.m)
        system = assemble(problem, nodes, weights)
        r = system.matrix @ problem.exact(nodes.positions) - system.rhs
        interior = nodes.types == NodeType.INTERIOR
        residuals.append(float(np.sqrt(np.mean(r[interior] ** 2))))
    return np.asarray(h_values, dtype=float), np.asarray(residuals)


def residual_slope(h, residuals) -> float:
    return float(np.polyfit(np.log(h), np.log(residuals), 1)[0])


def check_peak_residual() -> CheckResult:
    h, residuals = peak_residual_levels()
    slope = residual_slope(h, residuals)
    return CheckResult("peak-closed-form-residual", slope >= RESIDUAL_SLOPE,
                       f"residual slope {slope:.2f} over h = {list(h)}")


def scattered_stencil(center, n: int, spacing: float, rng: np.random.Generator) -> np.ndarray:
    """The n points of a randomly jittered lattice nearest to ``center``, centre first."""
    center = np.asarray(center, dtype=float)
    d = len(center)
    half = int(np.ceil(n ** (1.0 / d))) // 2 + 2
    axis = np.arange(-half, half + 1, dtype=float)
    lattice = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    lattice = lattice[np.any(lattice != 0, axis=1)]
    lattice += rng.uniform(-0.25, 0.25, lattice.shape)
    nearest = np.argsort(np.linalg.norm(lattice, axis=1))[:n - 1]
    return np.vstack([center, center + spacing * lattice[nearest]])


def relative_error(approx, exact) -> np.ndarray:
    """|approx - exact| relative to |exact|, or absolute where |exact| < EXACTNESS_FLOOR."""
    exact = np.asarray(exact, dtype=float)
    return np.abs(np.asarray(approx, dtype=float) - exact) / np.maximum(np.abs(exact), EXACTNESS_FLOOR)


def monomial_exactness(m: int, d: int, trials: int, seed: int = 0) -> float:
    """Worst relative error of RBF-FD weights on all monomials of degree <= m over scattered stencils."""
    rng = np.random.default_rng(seed)
    exps = monomial_exponents(m, d)
    operators = [Operator.laplacian()] + gradient_operators(d) + hessian_operators(d)
    worst = 0.0
    for _ in range(trials):
        center = rng.uniform(-0.5, 0.5, d)
        stencil = scattered_stencil(center, stencil_size(m, d), 0.05, rng)
        values = np.prod(stencil[:, None, :] ** exps[None, :, :], axis=2)
        for op in operators:
            exact = monomial_derivatives(op, exps, center)
            approx = compute_weights(center, stencil, op, m=m) @ values
            worst = max(worst, float(np.max(relative_error(approx, exact))))
    return worst


def check_weight_exactness(trials: int = 5) -> CheckResult:
    worst = max(monomial_exactness(m, d, trials) for m in ALLOWED_ORDERS for d in (2, 3))
    return CheckResult("rbf-fd-monomial-exactness", worst <= EXACTNESS_TOLERANCE, f"worst relative error {worst:.2e}")


CHECKS: List[Callable[[], CheckResult]] = [
    check_hertz_half_width,
    check_hertz_force_balance,
    check_peak_residual,
    check_weight_exactness,
]


def run_checks() -> List[CheckResult]:
    results = []
    for check in CHECKS:
        try:
            results.append(check())
        except HpAdaptError as e:
            logger.error(f"Check {check.__name__} raised: {e}", exc_info=True)
            results.append(CheckResult(check.__name__.removeprefix("check_"), False, f"[{e.module}] {e}"))
    return results
