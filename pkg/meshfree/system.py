import logging
import time
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np
from scipy.sparse import bmat, csr_matrix, diags
from scipy.sparse.linalg import LinearOperator, bicgstab, spilu, spsolve

from meshfree.approx import Operator, WeightSet
from meshfree.errors import AssemblyIncompleteError, SolverFailureError
from meshfree.nodegen import NodeSet, NodeType

logger = logging.getLogger(__name__)

DIRECT_LIMIT = 2000
SOLVER_METHODS = ("bicgstab", "direct")


@dataclass
class SparseSystem:
    """
    Assembled linear system in node-major ordering: row ``i * components + c``
    belongs to component ``c`` of node ``i``.
    """

    matrix: csr_matrix
    rhs: np.ndarray
    components: int
    constraint_rows: np.ndarray
    row_node: np.ndarray

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.size // self.components


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-15
    max_iterations: int = 300
    drop_tolerance: float = 1e-5
    fill_factor: float = 50.0
    method: str = "bicgstab"

    def __post_init__(self):
        for name in ("tolerance", "max_iterations", "drop_tolerance", "fill_factor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"SolverConfig.{name} must be positive, got {getattr(self, name)}.")
        if self.method not in SOLVER_METHODS:
            raise ValueError(f"Unknown solver method '{self.method}', expected one of {SOLVER_METHODS}.")


class SolveResult(NamedTuple):
    solution: np.ndarray
    iterations: int
    residual: float


def _row_mask(nodes: NodeSet, node_type: NodeType) -> np.ndarray:
    return nodes.types == node_type


def _condition_data(problem, node_type: NodeType, nodes: NodeSet, mask: np.ndarray) -> np.ndarray:
    condition = problem.conditions.get(node_type)
    if condition is None:
        first = int(np.flatnonzero(mask)[0])
        raise AssemblyIncompleteError(
            f"Problem '{problem.name}' has no boundary condition for {node_type.name} nodes.", node_index=first)
    values = np.zeros((len(nodes), problem.components))
    if condition.data is not None and mask.any():
        data = condition.data(nodes.positions[mask], nodes.normals[mask])
        values[mask] = np.asarray(data, dtype=float).reshape(-1, problem.components)
    return values


def _scaled(mask: np.ndarray, coefficient, matrix) -> csr_matrix:
    """Rows of ``matrix`` multiplied by ``coefficient`` where ``mask`` holds, zero elsewhere."""
    return diags(np.where(mask, coefficient, 0.0)) @ matrix


def _assemble_scalar(problem, nodes: NodeSet, weights: WeightSet):
    n = len(nodes)
    interior = _row_mask(nodes, NodeType.INTERIOR)
    dirichlet = _row_mask(nodes, NodeType.DIRICHLET)
    neumann = _row_mask(nodes, NodeType.NEUMANN)
    unsupported = ~(interior | dirichlet | neumann)
    if unsupported.any():
        raise AssemblyIncompleteError("Scalar problems accept interior, Dirichlet and Neumann nodes only.",
                                      node_index=int(np.flatnonzero(unsupported)[0]))

    A = weights.matrix(Operator.laplacian(), rows=interior) + diags(dirichlet.astype(float))
    if neumann.any():
        for a in range(nodes.dimension):
            A = A + _scaled(neumann, nodes.normals[:, a], weights.matrix(Operator.grad(a), rows=neumann))

    b = np.zeros(n)
    b[interior] = np.asarray(problem.rhs(nodes.positions[interior]), dtype=float).reshape(-1)
    for node_type, mask in ((NodeType.DIRICHLET, dirichlet), (NodeType.NEUMANN, neumann)):
        if mask.any():
            b[mask] = _condition_data(problem, node_type, nodes, mask)[mask, 0]
    return csr_matrix(A), b[:, None], dirichlet[:, None]


def _assemble_navier_cauchy(problem, nodes: NodeSet, weights: WeightSet):
    n, d = len(nodes), nodes.dimension
    lam, mu = problem.material.lame
    interior = _row_mask(nodes, NodeType.INTERIOR)
    dirichlet = _row_mask(nodes, NodeType.DIRICHLET)
    traction = _row_mask(nodes, NodeType.TRACTION)
    symmetry = _row_mask(nodes, NodeType.SYMMETRY)
    flux = traction | symmetry
    unsupported = ~(interior | dirichlet | flux)
    if unsupported.any():
        raise AssemblyIncompleteError("Elasticity problems accept interior, Dirichlet, traction and symmetry nodes.",
                                      node_index=int(np.flatnonzero(unsupported)[0]))

    H = {}
    for a in range(d):
        for b in range(a, d):
            H[a, b] = H[b, a] = weights.matrix(Operator.hess(a, b), rows=interior)
    lap = sum(H[a, a] for a in range(d))
    G = [weights.matrix(Operator.grad(a), rows=flux) for a in range(d)]
    nrm = nodes.normals
    Gn = sum(_scaled(flux, nrm[:, e], G[e]) for e in range(d))

    # symmetry nodes: the normal-displacement row sits on the dominant normal component
    normal_comp = np.argmax(np.abs(nrm), axis=1)
    ratio = (lam + mu) / mu
    blocks = [[None] * d for _ in range(d)]
    constraint = np.zeros((n, d), dtype=bool)
    for c in range(d):
        sym_normal = symmetry & (normal_comp == c)
        sym_tangent = symmetry & (normal_comp != c)
        tau = np.zeros((n, d))
        tau[:, c] = 1.0
        tau -= nrm * nrm[:, [c]]
        length = np.linalg.norm(tau, axis=1)
        tau[length > 0] /= length[length > 0, None]
        Gt = sum(_scaled(sym_tangent, tau[:, e], G[e]) for e in range(d))
        constraint[:, c] = dirichlet | sym_normal
        for b in range(d):
            block = ratio * H[c, b]
            if b == c:
                block = block + lap + diags(dirichlet.astype(float))
                block = block + _scaled(traction, 1.0, Gn)
            block = block + _scaled(traction, (lam / mu) * nrm[:, c], G[b])
            block = block + _scaled(traction, nrm[:, b], G[c])
            block = block + diags(np.where(sym_normal, nrm[:, b], 0.0))
            block = block + _scaled(sym_tangent, tau[:, b], Gn) + _scaled(sym_tangent, nrm[:, b], Gt)
            blocks[c][b] = block

    body = np.asarray(problem.rhs(nodes.positions[interior]), dtype=float).reshape(-1, d)
    rhs = np.zeros((n, d))
    rhs[interior] = body / mu
    if dirichlet.any():
        rhs[dirichlet] = _condition_data(problem, NodeType.DIRICHLET, nodes, dirichlet)[dirichlet]
    if traction.any():
        rhs[traction] = _condition_data(problem, NodeType.TRACTION, nodes, traction)[traction] / mu
    if symmetry.any():
        # zero normal displacement and zero tangential traction
        _condition_data(problem, NodeType.SYMMETRY, nodes, symmetry)

    A = bmat(blocks, format="csr")
    perm = (np.arange(d)[None, :] * n + np.arange(n)[:, None]).reshape(-1)
    return A[perm][:, perm], rhs, constraint


def assemble(problem, nodes: NodeSet, weights: WeightSet) -> SparseSystem:
    """Discretise the problem's PDE and boundary conditions into a node-major sparse system."""
    start = time.perf_counter()
    if problem.interior == "laplacian":
        A, rhs, constraint = _assemble_scalar(problem, nodes, weights)
    elif problem.interior == "navier-cauchy":
        A, rhs, constraint = _assemble_navier_cauchy(problem, nodes, weights)
    else:
        raise ValueError(f"Unknown interior operator '{problem.interior}'.")
    A = csr_matrix(A)
    A.eliminate_zeros()
    components = rhs.shape[1]
    system = SparseSystem(A, rhs.reshape(-1), components, constraint.reshape(-1),
                          np.repeat(np.arange(len(nodes)), components))
    logger.info(f"Assembled {system.size}x{system.size} system with {A.nnz} nonzeros "
                f"in {time.perf_counter() - start:.2f}s.")
    return system


def _equilibrate(system: SparseSystem):
    """Rows scaled to unit max-norm; the scaled system has the same solution."""
    A = system.matrix
    row_max = np.asarray(abs(A).max(axis=1).todense()).reshape(-1)
    zero = np.flatnonzero(row_max == 0)
    if zero.size:
        row = int(zero[0])
        raise SolverFailureError(f"System matrix is singular: row {row} (node {int(system.row_node[row])}) is empty.")
    scale = diags(1.0 / row_max)
    return csr_matrix(scale @ A), system.rhs / row_max


def _ilut(matrix: csr_matrix, config: SolverConfig) -> Optional[LinearOperator]:
    """ILUT preconditioner; retried with partial pivoting and a tighter drop tolerance, None if both fail."""
    attempts = (dict(drop_tol=config.drop_tolerance, fill_factor=config.fill_factor),
                dict(drop_tol=config.drop_tolerance * 1e-2, fill_factor=config.fill_factor, diag_pivot_thresh=1.0))
    csc = matrix.tocsc()
    for options in attempts:
        try:
            ilu = spilu(csc, **options)
        except RuntimeError as e:
            logger.warning(f"ILUT factorisation with {options} failed: {e}")
            continue
        return LinearOperator(matrix.shape, matvec=ilu.solve, dtype=float)
    return None


def relative_residual(system: SparseSystem, x: np.ndarray) -> float:
    normb = np.linalg.norm(system.rhs)
    r = np.linalg.norm(system.rhs - system.matrix @ x)
    return float(r / normb) if normb > 0 else float(r)


def _spsolve(system: SparseSystem) -> SolveResult:
    x = np.asarray(spsolve(system.matrix.tocsc(), system.rhs), dtype=float)
    if not np.all(np.isfinite(x)):
        raise SolverFailureError("Direct solve produced non-finite values; the matrix is singular.")
    return SolveResult(x, 0, relative_residual(system, x))


def solve_direct(system: SparseSystem) -> SolveResult:
    """Sparse direct solve, limited to small systems."""
    if system.size >= DIRECT_LIMIT:
        raise ValueError(f"The direct solver is limited to fewer than {DIRECT_LIMIT} unknowns, got {system.size}.")
    return _spsolve(system)


def solve(system: SparseSystem, config: Optional[SolverConfig] = None,
          guess: Optional[np.ndarray] = None) -> SolveResult:
    """
    Solve the system with ILUT-preconditioned BiCGSTAB, starting from ``guess``
    when given. Hitting the iteration cap is logged and the achieved residual is
    returned. When no ILUT factor can be built the system is solved directly.
    """
    config = config or SolverConfig()
    if system.matrix.shape[0] != system.matrix.shape[1]:
        raise ValueError(f"System matrix must be square, got {system.matrix.shape}.")
    if config.method == "direct":
        return solve_direct(system)

    start = time.perf_counter()
    if np.linalg.norm(system.rhs) == 0:
        return SolveResult(np.zeros_like(system.rhs), 0, 0.0)
    x0 = np.zeros_like(system.rhs) if guess is None else np.asarray(guess, dtype=float).reshape(-1).copy()
    if x0.shape != system.rhs.shape:
        raise ValueError(f"Initial guess has {x0.size} entries, system has {system.rhs.size} unknowns.")

    A, b = _equilibrate(system)
    precond = _ilut(A, config)
    if precond is None:
        logger.warning(f"No ILUT preconditioner for the {system.size}-unknown system; solving it directly.")
        return _spsolve(system)

    normb = np.linalg.norm(b)
    r0 = b - A @ x0
    history: List[float] = [float(np.linalg.norm(r0) / normb)]
    if history[0] <= config.tolerance:
        return SolveResult(x0, 0, relative_residual(system, x0))

    # iterate on the correction A d = r0 / |r0| so breakdown tests see a unit residual
    scale = np.linalg.norm(r0)
    unit = r0 / scale

    def record(dk):
        history.append(float(np.linalg.norm(unit - A @ dk)) * history[0])

    d, info = bicgstab(A, unit, rtol=config.tolerance / history[0], atol=0.0, maxiter=config.max_iterations,
                       M=precond, callback=record)
    final = float(np.linalg.norm(unit - A @ d)) * history[0]
    if info < 0:
        raise SolverFailureError(f"BiCGSTAB breakdown (code {info}) after {len(history) - 1} iterations.",
                                 residual_history=history)
    if not np.isfinite(final):
        raise SolverFailureError("BiCGSTAB produced a non-finite residual.", residual_history=history)
    # convergence on the half step returns without a callback
    if info == 0 and final < history[-1]:
        history.append(final)
    x = x0 + scale * d
    iterations = len(history) - 1
    residual = relative_residual(system, x)
    if info > 0:
        logger.warning(f"BiCGSTAB stopped after {iterations} iterations at relative residual {residual:.3e} "
                       f"(tolerance {config.tolerance:.1e}).")
    logger.info(f"Solved {system.size} unknowns in {iterations} iterations, residual {residual:.3e}, "
                f"{time.perf_counter() - start:.2f}s.")
    return SolveResult(x, iterations, residual)


def dump_matrix(system: SparseSystem, path) -> None:
    """Write the matrix in coordinate text form, one ``row col value`` triple per line."""
    coo = system.matrix.tocoo()
    np.savetxt(path, np.column_stack([coo.row, coo.col, coo.data]), fmt=["%d", "%d", "%.17g"])
    logger.debug(f"Dumped {coo.nnz} matrix entries to {path}.")
