import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from meshfree.adapt import (AdaptivityParams, IndicatorField, OrderField, adapt_fields, exact_indicator,
                            imex_indicator, stop_check, warm_start)
from meshfree.approx import ALLOWED_ORDERS, PHS_EXPONENT, WeightSet, build_operator_table
from meshfree.config import RunConfig
from meshfree.errors import HpAdaptError
from meshfree.nodegen import DEFAULT_MAX_NODES, DomainShape, NodeSet, SpacingField, fill_domain
from meshfree.problems import (MM, MPA, ElasticMaterial, FrettingGeometry, FrettingLoads, ProblemSpec, StressField,
                               boussinesq_spec, diagonal_von_mises_error, error_norms, fretting_spec,
                               mean_traction_difference, peak_problem, read_reference_csv, stress_and_vonmises,
                               surface_traction)
from meshfree.records import RunRecorder
from meshfree.schemas import IterationRecord, StudyRow, order_histogram
from meshfree.system import SolverConfig, assemble, solve

logger = logging.getLogger(__name__)

NODE_CAP_FACTOR = 10


@dataclass
class AdaptiveResult:
    solution: np.ndarray
    nodes: NodeSet
    records: List[IterationRecord]
    best_iteration: int
    stress: Optional[StressField] = None


@dataclass
class _Clock:
    timings: dict = field(default_factory=dict)

    def phase(self, name: str, start: float) -> float:
        now = time.perf_counter()
        self.timings[f"t_{name}_ms"] = (now - start) * 1e3
        return now


def _diagnostics(problem: ProblemSpec, nodes: NodeSet, solution: np.ndarray, weights: WeightSet,
                 reference: Optional[pd.DataFrame]) -> Tuple[dict, Optional[StressField]]:
    if problem.material is None:
        return {}, None
    stress = stress_and_vonmises(nodes, solution, weights, problem.material)
    extra = {}
    if problem.name == "fretting" and reference is not None:
        hertz = problem.metadata["hertz"]
        extra["mean_abs_dsxx"] = mean_traction_difference(reference, surface_traction(nodes, stress), hertz.a)
    if problem.name == "boussinesq":
        extra["vm_diag_rel_err"] = diagonal_von_mises_error(nodes, stress, problem.metadata["stress"],
                                                            problem.metadata["epsilon"])
    return extra, stress


def _indicate(problem: ProblemSpec, solution: np.ndarray, nodes: NodeSet, indicator: str, order_bump: int,
              k: int, allowed: Sequence[int]) -> IndicatorField:
    if indicator == "exact":
        return exact_indicator(problem, solution, nodes)
    return imex_indicator(problem, solution, nodes, order_bump, k, tuple(m + order_bump for m in allowed))


def adaptive_solve(problem: ProblemSpec, h0: SpacingField, m0: OrderField, params: AdaptivityParams, *,
                   solver: Optional[SolverConfig] = None, indicator: str = "imex", order_bump: int = 2,
                   k: int = PHS_EXPONENT, allowed: Sequence[int] = ALLOWED_ORDERS, seed: int = 0,
                   recorder: Optional[RunRecorder] = None, reference: Optional[pd.DataFrame] = None,
                   warm: bool = True, dump_matrices: bool = False,
                   on_iteration: Optional[Callable[[IterationRecord], None]] = None) -> AdaptiveResult:
    """
    Run the discretise / solve / indicate / stop / adapt loop.

    Every iteration rediscretises the domain from scratch with the current h and
    m fields and the same seed. The returned solution is the one with the
    smallest e_inf when a closed form exists, otherwise the last one.
    """
    if indicator not in ("imex", "exact"):
        raise ValueError(f"Unknown indicator '{indicator}'.")
    solver = solver or SolverConfig()
    spacing, order = h0, m0
    records: List[IterationRecord] = []
    eta_history: List[float] = []
    previous: Optional[Tuple[NodeSet, np.ndarray]] = None
    best: Optional[tuple] = None
    iteration = 0

    while True:
        try:
            clock = _Clock()
            start = time.perf_counter()
            nodes = problem.prepare(fill_domain(problem.shape, spacing, seed, order=order,
                                                  max_nodes=NODE_CAP_FACTOR * params.n_max))
            start = clock.phase("discretise", start)

            weights = build_operator_table(nodes, problem.operators(), k, orders=nodes.m)
            start = clock.phase("weights", start)
            system = assemble(problem, nodes, weights)
            if recorder is not None and dump_matrices:
                recorder.write_matrix(iteration, system)
            start = clock.phase("assemble", start)

            guess = None
            if warm and previous is not None:
                guess = warm_start(previous[0], previous[1], nodes, problem.components)
            result = solve(system, solver, guess)
            start = clock.phase("solve", start)

            eta = _indicate(problem, result.solution, nodes, indicator, order_bump, k, allowed)
            start = clock.phase("indicate", start)

            norms = {}
            if problem.exact is not None:
                exact = problem.exact(nodes.positions)
                norms = dict(zip(("e1", "e2", "einf"), error_norms(result.solution, exact)))
            extra, stress = _diagnostics(problem, nodes, result.solution, weights, reference)

            eta_history.append(eta.eta_max)
            done = stop_check(eta_history, iteration, params.n_iter, params.gamma)
            if not done:
                spacing, order, _ = adapt_fields(nodes, eta, params, allowed)
            clock.phase("adapt", start)
        except HpAdaptError as e:
            e.tag(iteration)
            logger.error(f"Adaptive run aborted: {e}", exc_info=True)
            raise

        record = IterationRecord(
            iteration=iteration, n_nodes=len(nodes), eta_max=eta.eta_max, eta_min=eta.eta_min,
            solver_iterations=result.iterations, solver_residual=result.residual,
            h_min=float(nodes.h.min()), h_max=float(nodes.h.max()),
            h_ratio=float(nodes.h.max() / nodes.h.min()),
            **norms, **extra, **clock.timings, **order_histogram(nodes.m))
        records.append(record)
        if recorder is not None:
            recorder.append(record)
            recorder.write_nodes(iteration, nodes, eta.eta)
            recorder.write_indicator(iteration, eta.eta)
        if on_iteration is not None:
            on_iteration(record)
        logger.info(f"Iteration {iteration}: N={len(nodes)}, eta_max={eta.eta_max:.3e}"
                    + (f", e_inf={norms['einf']:.3e}" if norms else ""))

        score = norms.get("einf", -iteration)
        if problem.exact is None or best is None or score < best[0]:
            best = (score, iteration, result.solution, nodes, stress)
        previous = (nodes, result.solution)
        if done:
            break
        iteration += 1

    _, best_iteration, solution, nodes, stress = best
    return AdaptiveResult(solution, nodes, records, best_iteration, stress)


def unrefined_convergence_study(problem: ProblemSpec, h_values: Sequence[float], m_values: Sequence[int],
                                seeds: int, *, k: int = PHS_EXPONENT, order_bump: int = 2,
                                solver: Optional[SolverConfig] = None, max_nodes: int = DEFAULT_MAX_NODES,
                                recorder: Optional[RunRecorder] = None) -> Tuple[List[StudyRow], pd.DataFrame]:
    """
    One non-adaptive solve per (h, m, seed) cell recording e_inf and the IMEX
    maximum; failed cells are recorded and the study continues.
    """
    if problem.exact is None:
        raise ValueError(f"Problem '{problem.name}' has no closed form; the convergence study needs one.")
    solver = solver or SolverConfig()
    d = problem.dimension
    rows: List[StudyRow] = []
    for h in h_values:
        for m in m_values:
            for seed in range(seeds):
                try:
                    nodes = problem.prepare(fill_domain(problem.shape, SpacingField.constant(h, d), seed,
                                                        order=OrderField.constant(m, d, allowed=[m]),
                                                        max_nodes=max_nodes))
                    weights = build_operator_table(nodes, problem.operators(), k, orders=nodes.m)
                    result = solve(assemble(problem, nodes, weights), solver)
                    einf = error_norms(result.solution, problem.exact(nodes.positions))[2]
                    eta = imex_indicator(problem, result.solution, nodes, order_bump, k, imex_orders=[m + order_bump])
                    rows.append(StudyRow(h=h, m=m, seed=seed, n_nodes=len(nodes), einf=einf, eta_max=eta.eta_max))
                    logger.info(f"Study cell h={h}, m={m}, seed={seed}: N={len(nodes)}, e_inf={einf:.3e}")
                except HpAdaptError as e:
                    logger.warning(f"Study cell h={h}, m={m}, seed={seed} failed: {e}", exc_info=True)
                    rows.append(StudyRow(h=h, m=m, seed=seed, failed=True, error=f"[{e.module}] {e}"))
    if recorder is not None:
        summary = recorder.write_study(rows)
    else:
        frame = pd.DataFrame([row.model_dump() for row in rows])
        ok = frame[~frame["failed"]]
        summary = ok.groupby(["h", "m"], as_index=False)[["n_nodes", "einf", "eta_max"]].median()
    return rows, summary


# --- run configuration -------------------------------------------------------

def length_scale(config: RunConfig) -> float:
    """Factor from configured lengths to metres."""
    return MM if config.problem == "fretting" else 1.0


def build_problem(config: RunConfig) -> ProblemSpec:
    if config.problem == "peak":
        return peak_problem(config.peak.strength, config.peak.source, DomainShape.disc(radius=config.peak.radius))
    if config.problem == "fretting":
        f = config.fretting
        geometry = FrettingGeometry(f.length_mm * MM, f.width_mm * MM, f.thickness_mm * MM, f.pad_radius_mm * MM)
        loads = FrettingLoads(f.normal_force_n, f.tangential_force_n, f.axial_stress_mpa * MPA, f.friction)
        return fretting_spec(geometry, ElasticMaterial(f.young_modulus_mpa * MPA, f.poisson_ratio), loads,
                             ElasticMaterial(f.pad_young_modulus_mpa * MPA, f.pad_poisson_ratio))
    b = config.boussinesq
    return boussinesq_spec(b.force, ElasticMaterial(b.young_modulus, b.poisson_ratio), b.epsilon)


def adaptivity_params(config: RunConfig) -> AdaptivityParams:
    return AdaptivityParams(
        alpha_h=config.alpha_h, beta_h=config.beta_h, lambda_h=config.lambda_h, theta_h=config.theta_h,
        alpha_p=config.alpha_p, beta_p=config.beta_p, lambda_p=config.lambda_p, theta_p=config.theta_p,
        h_max=config.h_max * length_scale(config), n_max=config.n_max, n_iter=config.n_iter, gamma=config.gamma)


def solver_config(config: RunConfig) -> SolverConfig:
    return SolverConfig(**config.solver.model_dump())


def initial_fields(config: RunConfig, problem: ProblemSpec) -> Tuple[SpacingField, OrderField]:
    d = problem.dimension
    return (SpacingField.constant(config.h_initial * length_scale(config), d),
            OrderField.constant(config.initial_order, d, allowed=config.allowed_orders))


def run_config(config: RunConfig, recorder: Optional[RunRecorder] = None,
               on_iteration: Optional[Callable[[IterationRecord], None]] = None) -> AdaptiveResult:
    """Build the configured benchmark and run the adaptive loop on it."""
    problem = build_problem(config)
    reference = read_reference_csv(config.reference_csv) if config.reference_csv else None
    if reference is not None and problem.name != "fretting":
        logger.warning("A reference traction file only applies to the fretting problem; ignoring it.")
        reference = None
    h0, m0 = initial_fields(config, problem)
    return adaptive_solve(problem, h0, m0, adaptivity_params(config), solver=solver_config(config),
                          indicator=config.indicator, order_bump=config.order_bump, k=config.phs_exponent,
                          allowed=config.allowed_orders, seed=config.seed, recorder=recorder,
                          reference=reference, dump_matrices=config.debug_dump_matrix, on_iteration=on_iteration)


def run_study(config: RunConfig, recorder: Optional[RunRecorder] = None) -> Tuple[List[StudyRow], pd.DataFrame]:
    problem = build_problem(config)
    scale = length_scale(config)
    return unrefined_convergence_study(problem, [h * scale for h in config.study.h], config.study.m,
                                       config.study.seeds, k=config.phs_exponent, order_bump=config.order_bump,
                                       solver=solver_config(config), max_nodes=NODE_CAP_FACTOR * config.n_max,
                                       recorder=recorder)
