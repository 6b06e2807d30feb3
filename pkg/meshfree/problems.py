import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from meshfree.approx import Operator, WeightSet, gradient_operators, hessian_operators
from meshfree.errors import InvalidLoadingError, UndefinedNormError
from meshfree.interpolate import ShepardInterpolator
from meshfree.nodegen import DomainShape, NodeSet, NodeType, remove_corner_nodes

logger = logging.getLogger(__name__)

REFERENCE_NEIGHBORS = 2
MM = 1e-3
MPA = 1e6


@dataclass(frozen=True)
class BoundaryCondition:
    """Condition imposed on one node type; ``data(positions, normals)`` gives its values."""

    kind: NodeType
    data: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None


@dataclass
class ProblemSpec:
    name: str
    shape: DomainShape
    components: int
    interior: str
    classify: Callable[[NodeSet], np.ndarray]
    conditions: Dict[NodeType, BoundaryCondition]
    rhs: Callable[[np.ndarray], np.ndarray]
    exact: Optional[Callable[[np.ndarray], np.ndarray]] = None
    material: Optional["ElasticMaterial"] = None
    remove_corners: bool = False
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.shape.dimension

    def operators(self) -> List[Operator]:
        d = self.dimension
        if self.interior == "laplacian":
            return [Operator.laplacian()] + gradient_operators(d)
        return hessian_operators(d) + gradient_operators(d)

    def prepare(self, nodes: NodeSet) -> NodeSet:
        """Drop corner nodes when required and tag every node with its condition type."""
        if self.remove_corners:
            nodes = remove_corner_nodes(nodes, self.shape)
        nodes = nodes.with_types(self.classify(nodes))
        missing = set(np.unique(nodes.types[nodes.boundary]).tolist()) - set(int(t) for t in self.conditions)
        if missing:
            raise ValueError(f"Problem '{self.name}' lacks conditions for node types {sorted(missing)}.")
        return nodes


@dataclass(frozen=True)
class ElasticMaterial:
    young: float
    poisson: float

    def __post_init__(self):
        if self.young <= 0:
            raise ValueError(f"Young's modulus must be positive, got {self.young}.")
        if not 0 < self.poisson < 0.5:
            raise ValueError(f"Poisson ratio must lie in (0, 0.5), got {self.poisson}.")

    @property
    def lam(self) -> float:
        return self.young * self.poisson / ((1 + self.poisson) * (1 - 2 * self.poisson))

    @property
    def mu(self) -> float:
        return self.young / (2 * (1 + self.poisson))

    @property
    def lame(self) -> Tuple[float, float]:
        return self.lam, self.mu


# --- exponential peak -------------------------------------------------------

def peak_problem(a_strength: float = 1000.0, x_s=(0.5, 1.0 / 3.0),
                 shape: Optional[DomainShape] = None) -> ProblemSpec:
    """
    Poisson problem with closed form u = exp(-a |x - x_s|^2). Boundary nodes with
    x > 1/2 are Dirichlet, the rest Neumann (n . grad u).
    """
    if a_strength <= 0:
        raise ValueError(f"Source strength must be positive, got {a_strength}.")
    shape = shape or DomainShape.disc()
    x_s = np.asarray(x_s, dtype=float)
    d = shape.dimension
    a = float(a_strength)

    def exact(x):
        r2 = np.sum((np.atleast_2d(x) - x_s) ** 2, axis=1)
        return np.exp(-a * r2)

    def gradient(x):
        diff = np.atleast_2d(x) - x_s
        return -2 * a * diff * exact(x)[:, None]

    def laplacian(x):
        r2 = np.sum((np.atleast_2d(x) - x_s) ** 2, axis=1)
        return 2 * a * np.exp(-a * r2) * (2 * a * r2 - d)

    def classify(nodes: NodeSet):
        types = np.full(len(nodes), NodeType.INTERIOR, dtype=int)
        boundary = nodes.side >= 0
        types[boundary & (nodes.positions[:, 0] > 0.5)] = NodeType.DIRICHLET
        types[boundary & (nodes.positions[:, 0] <= 0.5)] = NodeType.NEUMANN
        return types

    conditions = {
        NodeType.DIRICHLET: BoundaryCondition(NodeType.DIRICHLET, lambda x, n: exact(x)),
        NodeType.NEUMANN: BoundaryCondition(NodeType.NEUMANN, lambda x, n: np.sum(n * gradient(x), axis=1)),
    }
    return ProblemSpec("peak", shape, 1, "laplacian", classify, conditions, laplacian, exact,
                       metadata={"strength": a, "source": x_s, "gradient": gradient})


# --- fretting fatigue -------------------------------------------------------

@dataclass(frozen=True)
class HertzConstants:
    a: float
    p0: float
    c: float
    e: float
    e_star: float
    friction: float


def combined_modulus(first: ElasticMaterial, second: ElasticMaterial) -> float:
    return 1.0 / ((1 - first.poisson ** 2) / first.young + (1 - second.poisson ** 2) / second.young)


def loading_conditions(F: float, Q: float, sigma_ax: float, friction: float, p0: float) -> Dict[str, Tuple[float, bool]]:
    """Left-hand sides of the loading validity inequalities and whether they hold."""
    slip = abs(Q) / (friction * F)
    root = np.sqrt(max(0.0, 1 - slip))
    axial = sigma_ax / (4 * friction * p0) + root
    printed = sigma_ax / MPA
    return {
        "Q <= mu*F": (slip, slip <= 1),
        "sigma_ax/(4*mu*p0) + sqrt(1 - Q/(mu*F)) <= 1": (axial, axial <= 1),
        "sigma_ax[MPa] <= 4*(1 - sqrt(1 - Q/(mu*F)))": (printed, printed <= 4 * (1 - root)),
    }


def hertz_constants(F: float, R: float, t: float, materials: Tuple[ElasticMaterial, ElasticMaterial],
                    friction: float, Q: float, sigma_ax: float) -> HertzConstants:
    """Contact half-width, peak pressure, stick-zone half-width and eccentricity of a cylindrical pad."""
    e_star = combined_modulus(*materials)
    a = 2 * np.sqrt(F * R / (t * np.pi * e_star))
    p0 = np.sqrt(F * e_star / (t * np.pi * R))
    checks = loading_conditions(F, Q, sigma_ax, friction, p0)
    for condition in ("Q <= mu*F", "sigma_ax/(4*mu*p0) + sqrt(1 - Q/(mu*F)) <= 1"):
        value, holds = checks[condition]
        if not holds:
            raise InvalidLoadingError(f"Loading violates {condition} (value {value:.4g}).", condition=condition)
    printed, holds = checks["sigma_ax[MPa] <= 4*(1 - sqrt(1 - Q/(mu*F)))"]
    logger.debug(f"Printed axial inequality evaluates to {printed:.4g} ({'holds' if holds else 'fails'}).")
    c = a * np.sqrt(1 - abs(Q) / (friction * F))
    e = np.sign(Q) * a * sigma_ax / (4 * friction * p0)
    return HertzConstants(float(a), float(p0), float(c), float(e), float(e_star), float(friction))


def contact_tractions(constants: HertzConstants, x) -> Tuple[np.ndarray, np.ndarray]:
    """Normal pressure p(x) and tangential traction q(x) under the pad."""
    x = np.asarray(x, dtype=float)
    a, c, e, p0, f = constants.a, constants.c, constants.e, constants.p0, constants.friction
    ellipse = np.sqrt(np.clip(1 - x ** 2 / a ** 2, 0.0, None))
    p = np.where(np.abs(x) < a, p0 * ellipse, 0.0)
    stick = np.abs(x - e) < c
    inner = (c / a) * np.sqrt(np.clip(1 - (x - e) ** 2 / c ** 2, 0.0, None)) if c > 0 else np.zeros_like(x)
    q = np.where(stick, -f * p0 * (ellipse - inner),
                 np.where(np.abs(x) <= a, -f * p0 * ellipse, 0.0))
    return p, q


@dataclass(frozen=True)
class FrettingGeometry:
    length: float
    width: float
    thickness: float
    pad_radius: float


@dataclass(frozen=True)
class FrettingLoads:
    normal_force: float
    tangential_force: float
    axial_stress: float
    friction: float


def fretting_spec(geometry: FrettingGeometry, material: ElasticMaterial, loads: FrettingLoads,
                  pad_material: Optional[ElasticMaterial] = None) -> ProblemSpec:
    """
    Plane-strain half specimen [-L/2, L/2] x [-W/2, 0] under Hertzian pad tractions:
    left edge clamped, right edge axial traction, top edge pad traction,
    bottom edge symmetry, corner nodes removed. SI units.
    """
    hertz = hertz_constants(loads.normal_force, geometry.pad_radius, geometry.thickness,
                            (material, pad_material or material), loads.friction,
                            loads.tangential_force, loads.axial_stress)
    shape = DomainShape.rectangle((-geometry.length / 2, -geometry.width / 2), (geometry.length / 2, 0.0))
    side_types = {0: NodeType.SYMMETRY, 1: NodeType.TRACTION, 2: NodeType.TRACTION, 3: NodeType.DIRICHLET}

    def classify(nodes: NodeSet):
        types = np.full(len(nodes), NodeType.INTERIOR, dtype=int)
        for side, node_type in side_types.items():
            types[nodes.side == side] = node_type
        return types

    def traction(x, n):
        p, q = contact_tractions(hertz, x[:, 0])
        right = n[:, 0] > 0.5
        return np.column_stack([np.where(right, loads.axial_stress, q), np.where(right, 0.0, -p)])

    conditions = {
        NodeType.DIRICHLET: BoundaryCondition(NodeType.DIRICHLET, lambda x, n: np.zeros((len(x), 2))),
        NodeType.TRACTION: BoundaryCondition(NodeType.TRACTION, traction),
        NodeType.SYMMETRY: BoundaryCondition(NodeType.SYMMETRY, lambda x, n: np.zeros((len(x), 2))),
    }
    logger.info(f"Hertz contact: a={hertz.a:.4e} m, p0={hertz.p0:.4e} Pa, c={hertz.c:.4e} m, e={hertz.e:.4e} m.")
    return ProblemSpec("fretting", shape, 2, "navier-cauchy", classify, conditions,
                       lambda x: np.zeros((len(x), 2)), None, material, remove_corners=True,
                       metadata={"hertz": hertz, "geometry": geometry, "loads": loads})


# --- Boussinesq -------------------------------------------------------------

def _cylindrical(x: np.ndarray):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.hypot(x[:, 0], x[:, 1])
    z = x[:, 2]
    return r, z, np.sqrt(r ** 2 + z ** 2)


def boussinesq_displacement_cylindrical(r, z, P: float, material: ElasticMaterial):
    """(u_r, u_theta, u_z) of a point load P on an elastic half-space."""
    r, z = np.asarray(r, dtype=float), np.asarray(z, dtype=float)
    mu, nu = material.mu, material.poisson
    R = np.sqrt(r ** 2 + z ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        u_r = P * r / (4 * np.pi * mu) * (z / R ** 3 - (1 - 2 * nu) / (R * (z + R)))
    u_r = np.where(r == 0, 0.0, u_r)
    u_z = P / (4 * np.pi * mu) * (2 * (1 - nu) / R + z ** 2 / R ** 3)
    return u_r, np.zeros_like(u_r), u_z


def boussinesq_stress_cylindrical(r, z, P: float, material: ElasticMaterial) -> Dict[str, np.ndarray]:
    r, z = np.asarray(r, dtype=float), np.asarray(z, dtype=float)
    nu = material.poisson
    R = np.sqrt(r ** 2 + z ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_rr = P / (2 * np.pi) * ((1 - 2 * nu) / (R * (z + R)) - 3 * r ** 2 * z / R ** 5)
        s_tt = P * (1 - 2 * nu) / (2 * np.pi) * (z / R ** 3 - 1 / (R * (z + R)))
    s_zz = -3 * P * z ** 3 / (2 * np.pi * R ** 5)
    s_rz = -3 * P * r * z ** 2 / (2 * np.pi * R ** 5)
    zero = np.zeros_like(s_zz)
    return {"rr": s_rr, "tt": s_tt, "zz": s_zz, "rz": s_rz, "rt": zero, "tz": zero}


def cylindrical_to_cartesian(x: np.ndarray, u_r, u_t, u_z) -> np.ndarray:
    x = np.atleast_2d(x)
    r = np.hypot(x[:, 0], x[:, 1])
    safe = np.where(r > 0, r, 1.0)
    c = np.where(r > 0, x[:, 0] / safe, 1.0)
    s = np.where(r > 0, x[:, 1] / safe, 0.0)
    return np.column_stack([u_r * c - u_t * s, u_r * s + u_t * c, u_z])


def cartesian_to_cylindrical(x: np.ndarray, u: np.ndarray):
    x, u = np.atleast_2d(x), np.atleast_2d(u)
    r = np.hypot(x[:, 0], x[:, 1])
    safe = np.where(r > 0, r, 1.0)
    c = np.where(r > 0, x[:, 0] / safe, 1.0)
    s = np.where(r > 0, x[:, 1] / safe, 0.0)
    return u[:, 0] * c + u[:, 1] * s, -u[:, 0] * s + u[:, 1] * c, u[:, 2]


def boussinesq_displacement(x, P: float, material: ElasticMaterial) -> np.ndarray:
    r, z, _ = _cylindrical(x)
    u_r, u_t, u_z = boussinesq_displacement_cylindrical(r, z, P, material)
    return cylindrical_to_cartesian(np.atleast_2d(x), u_r, u_t, u_z)


def boussinesq_stress(x, P: float, material: ElasticMaterial) -> np.ndarray:
    """Closed-form Cartesian stress tensors, shape (n, 3, 3)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r, z, _ = _cylindrical(x)
    s = boussinesq_stress_cylindrical(r, z, P, material)
    safe = np.where(r > 0, r, 1.0)
    cos = np.where(r > 0, x[:, 0] / safe, 1.0)
    sin = np.where(r > 0, x[:, 1] / safe, 0.0)
    out = np.zeros((len(x), 3, 3))
    out[:, 0, 0] = s["rr"] * cos ** 2 + s["tt"] * sin ** 2
    out[:, 1, 1] = s["rr"] * sin ** 2 + s["tt"] * cos ** 2
    out[:, 2, 2] = s["zz"]
    out[:, 0, 1] = out[:, 1, 0] = (s["rr"] - s["tt"]) * sin * cos
    out[:, 0, 2] = out[:, 2, 0] = s["rz"] * cos
    out[:, 1, 2] = out[:, 2, 1] = s["rz"] * sin
    return out


def boussinesq_spec(P: float = -1.0, material: Optional[ElasticMaterial] = None, epsilon: float = 0.1) -> ProblemSpec:
    """Point load on a half-space, solved on the box [-1, -eps]^3 with closed-form Dirichlet data on every face."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}.")
    material = material or ElasticMaterial(1.0, 0.33)
    shape = DomainShape.box((-1.0, -1.0, -1.0), (-epsilon, -epsilon, -epsilon))

    def exact(x):
        return boussinesq_displacement(x, P, material)

    def classify(nodes: NodeSet):
        return np.where(nodes.side >= 0, NodeType.DIRICHLET, NodeType.INTERIOR).astype(int)

    conditions = {NodeType.DIRICHLET: BoundaryCondition(NodeType.DIRICHLET, lambda x, n: exact(x))}
    return ProblemSpec("boussinesq", shape, 3, "navier-cauchy", classify, conditions,
                       lambda x: np.zeros((len(x), 3)), exact, material,
                       metadata={"force": P, "epsilon": epsilon,
                                 "stress": lambda x: boussinesq_stress(x, P, material)})


# --- post-processing --------------------------------------------------------

@dataclass
class StressField:
    tensor: np.ndarray
    von_mises: np.ndarray


def von_mises(tensor: np.ndarray) -> np.ndarray:
    """Von Mises equivalent stress of (n, 3, 3) tensors."""
    s = np.asarray(tensor, dtype=float).reshape(-1, 3, 3)
    normal = (s[:, 0, 0] - s[:, 1, 1]) ** 2 + (s[:, 1, 1] - s[:, 2, 2]) ** 2 + (s[:, 2, 2] - s[:, 0, 0]) ** 2
    shear = s[:, 0, 1] ** 2 + s[:, 1, 2] ** 2 + s[:, 2, 0] ** 2
    return np.sqrt(0.5 * normal + 3 * shear)


def stress_and_vonmises(nodes: NodeSet, displacement: np.ndarray, weights: WeightSet,
                        material: ElasticMaterial) -> StressField:
    """
    Small-strain Hooke stresses from the discrete displacement gradients; plane
    strain in 2D, so sigma_zz = lambda * tr(eps).
    """
    d = nodes.dimension
    u = np.asarray(displacement, dtype=float).reshape(len(nodes), d)
    grad = np.empty((len(nodes), d, d))
    for a in range(d):
        G = weights.matrix(Operator.grad(a))
        grad[:, :, a] = G @ u
    strain = 0.5 * (grad + grad.transpose(0, 2, 1))
    trace = np.trace(strain, axis1=1, axis2=2)
    lam, mu = material.lame
    tensor = np.zeros((len(nodes), 3, 3))
    tensor[:, :d, :d] = 2 * mu * strain
    for a in range(3):
        tensor[:, a, a] += lam * trace
    return StressField(tensor, von_mises(tensor))


def error_norms(numeric, exact) -> Tuple[float, float, float]:
    """Relative l1, l2 and l-infinity errors over all components."""
    numeric = np.asarray(numeric, dtype=float).reshape(-1)
    exact = np.asarray(exact, dtype=float).reshape(-1)
    if numeric.shape != exact.shape:
        raise ValueError(f"Error norms need equal lengths, got {numeric.size} and {exact.size}.")
    diff = numeric - exact
    scales = [np.sum(np.abs(exact)), np.linalg.norm(exact), np.max(np.abs(exact), initial=0.0)]
    if min(scales) == 0:
        raise UndefinedNormError("The exact solution has zero norm; relative errors are undefined.")
    errors = [np.sum(np.abs(diff)), np.linalg.norm(diff), np.max(np.abs(diff))]
    return tuple(float(e / s) for e, s in zip(errors, scales))


def surface_traction(nodes: NodeSet, stress: StressField) -> pd.DataFrame:
    """sigma_xx along the contact edge (top side), ordered by x."""
    top = nodes.side == 2
    frame = pd.DataFrame({"x": nodes.positions[top, 0], "sigma_xx": stress.tensor[top, 0, 0]})
    return frame.sort_values("x", ignore_index=True)


def read_reference_csv(path) -> pd.DataFrame:
    """Externally computed surface traction ``x,sigma_xx`` in mm / MPa, returned in SI."""
    frame = pd.read_csv(path)
    missing = {"x", "sigma_xx"} - set(frame.columns)
    if missing:
        raise ValueError(f"Reference file {path} lacks columns {sorted(missing)}.")
    return pd.DataFrame({"x": frame["x"].astype(float) * MM, "sigma_xx": frame["sigma_xx"].astype(float) * MPA})


def mean_traction_difference(reference: pd.DataFrame, surface: pd.DataFrame, half_width: float) -> float:
    """Mean |sigma_ref - sigma| over |x| <= a with mesh-free values interpolated onto the reference abscissae."""
    under = reference[np.abs(reference["x"]) <= half_width]
    if under.empty or surface.empty:
        return float("nan")
    interp = ShepardInterpolator(surface["x"].to_numpy(), surface["sigma_xx"].to_numpy(), REFERENCE_NEIGHBORS)
    return float(np.mean(np.abs(under["sigma_xx"].to_numpy() - interp(under["x"].to_numpy()))))


def diagonal_von_mises_error(nodes: NodeSet, stress: StressField, exact_stress: Callable, epsilon: float) -> float:
    """Largest relative von Mises error over nodes within one local spacing of the body diagonal."""
    start = np.full(3, -1.0)
    direction = np.full(3, -epsilon) - start
    direction /= np.linalg.norm(direction)
    rel = nodes.positions - start
    off_axis = np.linalg.norm(rel - np.outer(rel @ direction, direction), axis=1)
    near = off_axis <= nodes.h
    if not near.any():
        return float("nan")
    reference = von_mises(exact_stress(nodes.positions[near]))
    return float(np.max(np.abs(stress.von_mises[near] - reference) / reference))
