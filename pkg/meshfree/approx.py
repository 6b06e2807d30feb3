import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.linalg.lapack import dgecon
from scipy.sparse import csr_matrix

from meshfree.config import THREADS
from meshfree.errors import AssemblyIncompleteError, StencilDegenerateError
from meshfree.nodegen import NodeSet, stencil_indices

logger = logging.getLogger(__name__)

PHS_EXPONENT = 3
CONDITION_LIMIT = 1e14
ALLOWED_ORDERS = (2, 4, 6, 8)
IMEX_ORDERS = (4, 6, 8, 10)
CHUNK_SIZE = 512

OPERATOR_KINDS = ("identity", "grad", "hess", "laplacian")


@dataclass(frozen=True, order=True)
class Operator:
    """Closed set of scalar differential operators acting on the centre variable."""

    kind: str
    axes: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ValueError(f"Unknown operator kind '{self.kind}'.")
        arity = {"identity": 0, "grad": 1, "hess": 2, "laplacian": 0}[self.kind]
        if len(self.axes) != arity:
            raise ValueError(f"Operator '{self.kind}' takes {arity} axes, got {self.axes}.")
        object.__setattr__(self, "axes", tuple(sorted(int(a) for a in self.axes)))

    @classmethod
    def identity(cls) -> "Operator":
        return cls("identity")

    @classmethod
    def grad(cls, a: int) -> "Operator":
        return cls("grad", (a,))

    @classmethod
    def hess(cls, a: int, b: int) -> "Operator":
        return cls("hess", (a, b))

    @classmethod
    def laplacian(cls) -> "Operator":
        return cls("laplacian")

    @property
    def derivative_order(self) -> int:
        return {"identity": 0, "grad": 1, "hess": 2, "laplacian": 2}[self.kind]

    def __str__(self) -> str:
        return self.kind + "".join(str(a) for a in self.axes)


def gradient_operators(d: int) -> List[Operator]:
    return [Operator.grad(a) for a in range(d)]


def hessian_operators(d: int) -> List[Operator]:
    return [Operator.hess(a, b) for a, b in combinations_with_replacement(range(d), 2)]


@dataclass(frozen=True)
class PhsBasis:
    """Polyharmonic spline r^k (odd k) or r^k log r (even k)."""

    k: int = PHS_EXPONENT

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"PHS exponent must be a positive integer, got {self.k}.")

    @property
    def even(self) -> bool:
        return self.k % 2 == 0

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if not self.even:
            return r ** self.k
        safe = np.where(r > 0, r, 1.0)
        return np.where(r > 0, safe ** self.k * np.log(safe), 0.0)

    def evaluate(self, operator: Operator, diff: np.ndarray) -> np.ndarray:
        """
        Apply ``operator`` in the centre variable to phi(|x - node|) for rows
        ``diff = x - node``. Values at r = 0 are the analytic limit 0.
        """
        diff = np.atleast_2d(np.asarray(diff, dtype=float))
        d = diff.shape[1]
        k = self.k
        r = np.linalg.norm(diff, axis=1)
        at_origin = r == 0
        s = np.where(at_origin, 1.0, r)
        log = np.log(s)

        if operator.kind == "identity":
            out = self(r)
        else:
            # f1 = phi'/r, f2 = (phi'' - phi'/r)/r^2
            if self.even:
                f1 = s ** (k - 2) * (k * log + 1)
                f2 = s ** (k - 4) * (k * (k - 2) * log + 2 * k - 2)
            else:
                f1 = k * s ** (k - 2)
                f2 = k * (k - 2) * s ** (k - 4)
            if operator.kind == "grad":
                out = f1 * diff[:, operator.axes[0]]
            elif operator.kind == "hess":
                a, b = operator.axes
                out = f2 * diff[:, a] * diff[:, b] + (f1 if a == b else 0.0)
            else:
                out = d * f1 + f2 * s ** 2
        return np.where(at_origin, 0.0, out)


def phs_apply(k: int, operator: Operator, center, node) -> float:
    diff = np.asarray(center, dtype=float) - np.asarray(node, dtype=float)
    return float(PhsBasis(k).evaluate(operator, diff)[0])


def stencil_size(m: int, d: int) -> int:
    """Twice the number of monomials of total degree <= m in d variables."""
    if m < 0 or d not in (2, 3):
        raise ValueError(f"stencil_size needs m >= 0 and d in (2, 3), got m={m}, d={d}.")
    return 2 * comb(m + d, m)


@lru_cache(maxsize=None)
def monomial_exponents(m: int, d: int) -> np.ndarray:
    exps = [e for total in range(m + 1) for e in _exponents_of_degree(total, d)]
    return np.array(exps, dtype=int).reshape(-1, d)


def _exponents_of_degree(total: int, d: int):
    if d == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _exponents_of_degree(total - first, d - 1):
            yield (first,) + rest


def _monomial_rhs(operator: Operator, exps: np.ndarray) -> np.ndarray:
    """The operator applied to every xi^alpha at xi = 0."""
    d = exps.shape[1]
    target = np.zeros(d, dtype=int)
    if operator.kind == "identity":
        return np.all(exps == 0, axis=1).astype(float)
    if operator.kind == "grad":
        target[operator.axes[0]] = 1
        return np.all(exps == target, axis=1).astype(float)
    if operator.kind == "hess":
        a, b = operator.axes
        target[a] += 1
        target[b] += 1
        return np.all(exps == target, axis=1) * (2.0 if a == b else 1.0)
    out = np.zeros(len(exps))
    for a in range(d):
        target = np.zeros(d, dtype=int)
        target[a] = 2
        out += 2.0 * np.all(exps == target, axis=1)
    return out


def _saddle_system(center: np.ndarray, stencil: np.ndarray, basis: PhsBasis, m: int):
    scale = float(np.max(np.linalg.norm(stencil - center, axis=1)))
    if scale == 0:
        raise StencilDegenerateError("Stencil collapses onto its centre.")
    xi = (stencil - center) / scale
    exps = monomial_exponents(m, stencil.shape[1])
    n, n_poly = len(xi), len(exps)
    if n < n_poly:
        raise ValueError(f"Stencil of {n} nodes cannot carry {n_poly} monomials (m={m}).")

    P = np.prod(xi[:, None, :] ** exps[None, :, :], axis=2)
    col_scale = np.max(np.abs(P), axis=0)
    col_scale[col_scale == 0] = 1.0
    P /= col_scale

    A = basis(np.linalg.norm(xi[:, None, :] - xi[None, :, :], axis=2))
    M = np.zeros((n + n_poly, n + n_poly))
    M[:n, :n] = A
    M[:n, n:] = P
    M[n:, :n] = P.T
    return M, xi, exps, col_scale, scale


def _factorize(M: np.ndarray):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        warnings.simplefilter("ignore", RuntimeWarning)
        lu, piv = lu_factor(M, check_finite=False)
    anorm = np.max(np.sum(np.abs(M), axis=0))
    rcond, _ = dgecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 or not np.isfinite(rcond) else 1.0 / rcond
    return (lu, piv), cond


def stencil_condition(center, stencil, k: int = PHS_EXPONENT, m: int = 2) -> float:
    """1-norm condition estimate of the local saddle-point matrix."""
    M, *_ = _saddle_system(np.asarray(center, float), np.asarray(stencil, float), PhsBasis(k), m)
    return _factorize(M)[1]


def _stencil_weights(center: np.ndarray, stencil: np.ndarray, operators: Sequence[Operator],
                     basis: PhsBasis, m: int) -> np.ndarray:
    M, xi, exps, col_scale, scale = _saddle_system(center, stencil, basis, m)
    factors, cond = _factorize(M)
    if cond > CONDITION_LIMIT:
        raise StencilDegenerateError(f"Local RBF-FD system is singular or ill-conditioned (cond {cond:.3e}, m={m}).")

    n = len(xi)
    rhs = np.empty((len(M), len(operators)))
    for j, op in enumerate(operators):
        rhs[:n, j] = basis.evaluate(op, -xi)
        rhs[n:, j] = _monomial_rhs(op, exps) / col_scale
    sol = lu_solve(factors, rhs, check_finite=False)
    sol += lu_solve(factors, rhs - M @ sol, check_finite=False)
    if not np.all(np.isfinite(sol)):
        raise StencilDegenerateError("Local RBF-FD solve produced non-finite weights.")

    orders = np.array([op.derivative_order for op in operators], dtype=float)
    return (sol[:n] / scale ** orders).T


def compute_weights(center, stencil, operator: Operator, k: int = PHS_EXPONENT, m: int = 2) -> np.ndarray:
    """RBF-FD weights w such that (L u)(center) ~ sum_i w_i u(stencil_i)."""
    center = np.asarray(center, dtype=float)
    stencil = np.atleast_2d(np.asarray(stencil, dtype=float))
    return _stencil_weights(center, stencil, [operator], PhsBasis(k), m)[0]


@dataclass
class WeightSet:
    """Per-node stencils and, per operator, one weight vector per node (None where not computed)."""

    n_nodes: int
    stencils: List[Optional[np.ndarray]] = field(default_factory=list)
    weights: Dict[Operator, List[Optional[np.ndarray]]] = field(default_factory=dict)

    @property
    def operators(self) -> List[Operator]:
        return list(self.weights)

    def __contains__(self, operator: Operator) -> bool:
        return operator in self.weights

    def stencil(self, i: int) -> np.ndarray:
        return self.stencils[i]

    def get(self, operator: Operator, i: int) -> np.ndarray:
        return self.weights[operator][i]

    def matrix(self, operator: Operator, rows: Optional[np.ndarray] = None) -> csr_matrix:
        """
        Sparse N x N matrix whose row i holds the stencil weights of node i.

        Only ``rows`` (a boolean mask, default all) are filled; a requested row
        without weights raises AssemblyIncompleteError.
        """
        if rows is None:
            rows = np.ones(self.n_nodes, dtype=bool)
        per_node = self.weights.get(operator)
        lengths = np.zeros(self.n_nodes, dtype=int)
        cols, vals = [], []
        for i in np.flatnonzero(rows):
            w = None if per_node is None else per_node[i]
            if w is None:
                raise AssemblyIncompleteError(f"No '{operator}' weights for node {i}.", node_index=int(i))
            lengths[i] = len(w)
            cols.append(self.stencils[i])
            vals.append(w)
        indptr = np.concatenate([[0], np.cumsum(lengths)])
        indices = np.concatenate(cols) if cols else np.empty(0, dtype=int)
        data = np.concatenate(vals) if vals else np.empty(0)
        return csr_matrix((data, indices, indptr), shape=(self.n_nodes, self.n_nodes))

    def apply(self, operator: Operator, values: np.ndarray) -> np.ndarray:
        return self.matrix(operator) @ np.asarray(values, dtype=float)


def build_operator_table(nodes: NodeSet, operators: Sequence[Operator], k: int = PHS_EXPONENT,
                         orders: Optional[np.ndarray] = None, threads: Optional[int] = None) -> WeightSet:
    """
    RBF-FD weights for every node and operator, each node using the nearest
    stencil_size(m_i, d) nodes. ``orders`` overrides the NodeSet orders.
    """
    operators = list(dict.fromkeys(operators))
    n_nodes = len(nodes)
    table = WeightSet(n_nodes)
    if not operators:
        return table

    start = time.perf_counter()
    orders = nodes.m if orders is None else np.asarray(orders, dtype=int)
    d = nodes.dimension
    basis = PhsBasis(k)
    stencils: List[Optional[np.ndarray]] = [None] * n_nodes
    weights: Dict[Operator, List[Optional[np.ndarray]]] = {op: [None] * n_nodes for op in operators}

    def work(chunk: np.ndarray, m: int):
        idx = stencil_indices(nodes, chunk, stencil_size(m, d))
        for i, st in zip(chunk, idx):
            try:
                w = _stencil_weights(nodes.positions[i], nodes.positions[st], operators, basis, m)
            except StencilDegenerateError as e:
                logger.debug(f"Degenerate stencil at node {i}: {e.message}")
                raise StencilDegenerateError(f"{e.message} at node {i}", node_index=int(i)) from e
            stencils[i] = st
            for op, row in zip(operators, w):
                weights[op][i] = row

    jobs = []
    for m in np.unique(orders):
        members = np.flatnonzero(orders == m)
        jobs.extend((members[s:s + CHUNK_SIZE], int(m)) for s in range(0, len(members), CHUNK_SIZE))

    workers = max(1, THREADS if threads is None else threads)
    nodes.tree  # built once, shared read-only by the workers
    if workers == 1:
        for chunk, m in jobs:
            work(chunk, m)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for future in [pool.submit(work, chunk, m) for chunk, m in jobs]:
                future.result()

    table.stencils = stencils
    table.weights = weights
    logger.info(f"Computed {len(operators)} operator(s) on {n_nodes} nodes "
                f"(orders {sorted(set(orders.tolist()))}) in {time.perf_counter() - start:.2f}s.")
    return table


def _differentiate(exps: np.ndarray, coef: np.ndarray, axis: int):
    coef = coef * exps[:, axis]
    exps = exps.copy()
    exps[:, axis] = np.maximum(exps[:, axis] - 1, 0)
    return exps, coef


def monomial_derivatives(operator: Operator, exps: np.ndarray, x) -> np.ndarray:
    """Exact values of the operator applied to each monomial x^alpha at point x."""
    x = np.asarray(x, dtype=float)
    exps = np.asarray(exps, dtype=int)
    if operator.kind == "laplacian":
        return sum(monomial_derivatives(Operator.hess(a, a), exps, x) for a in range(exps.shape[1]))
    coef = np.ones(len(exps))
    for axis in operator.axes:
        exps, coef = _differentiate(exps, coef, axis)
    return coef * np.prod(x[None, :] ** exps, axis=1)
