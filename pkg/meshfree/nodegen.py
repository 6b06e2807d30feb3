import itertools
import logging
import time
from collections import deque
from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import cached_property
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from meshfree.errors import GenerationOverflowError, InsufficientNodesError
from meshfree.interpolate import ShepardInterpolator

logger = logging.getLogger(__name__)

C_MIN = 0.7
N_CANDIDATES = 15
SPACING_NEIGHBORS = 30
TAIL_CAPACITY = 256
DEFAULT_MAX_NODES = 2_500_000

DOMAIN_KINDS = ("disc", "rectangle", "box")


class NodeType(IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2
    TRACTION = 3
    SYMMETRY = 4


@dataclass(frozen=True)
class DomainShape:
    """
    Geometric primitive to be discretised.

    ``bounds`` holds one ``(low, high)`` pair per axis. A disc is described by its
    bounding square; rectangles are two-dimensional, boxes three-dimensional.
    """

    kind: str
    bounds: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise ValueError(f"Unknown domain kind '{self.kind}', expected one of {DOMAIN_KINDS}.")
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        object.__setattr__(self, "bounds", bounds)
        arr = np.asarray(bounds)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"Domain bounds must be finite, got {bounds}.")
        if np.any(arr[:, 1] <= arr[:, 0]):
            raise ValueError(f"Domain bounds must have positive extent, got {bounds}.")
        expected = {"disc": 2, "rectangle": 2, "box": 3}[self.kind]
        if len(bounds) != expected:
            raise ValueError(f"A {self.kind} needs {expected} coordinate extents, got {len(bounds)}.")
        if self.kind == "disc" and not np.isclose(arr[0, 1] - arr[0, 0], arr[1, 1] - arr[1, 0]):
            raise ValueError("Disc bounds must form a square.")

    @classmethod
    def disc(cls, center=(0.0, 0.0), radius: float = 1.0) -> "DomainShape":
        cx, cy = center
        return cls("disc", ((cx - radius, cx + radius), (cy - radius, cy + radius)))

    @classmethod
    def rectangle(cls, lower, upper) -> "DomainShape":
        return cls("rectangle", tuple(zip(lower, upper)))

    @classmethod
    def box(cls, lower, upper) -> "DomainShape":
        return cls("box", tuple(zip(lower, upper)))

    @property
    def dimension(self) -> int:
        return len(self.bounds)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.bounds])

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self) -> float:
        return 0.5 * (self.bounds[0][1] - self.bounds[0][0])

    @property
    def measure(self) -> float:
        if self.kind == "disc":
            return float(np.pi * self.radius ** 2)
        return float(np.prod(self.upper - self.lower))

    def contains(self, points) -> np.ndarray:
        """Strict interior test, vectorised over rows."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "disc":
            return np.linalg.norm(pts - self.center, axis=1) < self.radius
        return np.all((pts > self.lower) & (pts < self.upper), axis=1)

    def corners(self) -> np.ndarray:
        if self.kind == "disc":
            raise ValueError("A disc has no corners.")
        return np.array(list(itertools.product(*self.bounds)), dtype=float)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform random points strictly inside the shape."""
        out = []
        count = 0
        while count < n:
            pts = rng.uniform(self.lower, self.upper, size=(2 * n, self.dimension))
            pts = pts[self.contains(pts)]
            out.append(pts)
            count += len(pts)
        return np.vstack(out)[:n]


class SpacingField:
    """Nodal spacing h(p), Shepard-interpolated from carrier values and optionally capped at h_max."""

    def __init__(self, points, values, n_nearest: int = SPACING_NEIGHBORS, power: float = 2.0,
                 h_max: Optional[float] = None):
        values = np.asarray(values, dtype=float)
        if np.any(~np.isfinite(values)) or np.any(values <= 0):
            raise ValueError("Spacing values must be finite and strictly positive.")
        if h_max is not None and h_max <= 0:
            raise ValueError(f"h_max must be positive, got {h_max}.")
        self._interp = ShepardInterpolator(points, values, n_nearest, power)
        self.h_max = h_max

    @classmethod
    def constant(cls, h: float, dimension: int = 2) -> "SpacingField":
        return cls(np.zeros((1, dimension)), [h], n_nearest=1)

    @property
    def points(self) -> np.ndarray:
        return self._interp.points

    @property
    def values(self) -> np.ndarray:
        return self._interp.values

    @property
    def min_value(self) -> float:
        low = float(self.values.min())
        return low if self.h_max is None else min(low, self.h_max)

    def __call__(self, x) -> np.ndarray:
        out = self._interp(x)
        if self.h_max is not None:
            out = np.minimum(out, self.h_max)
        return out


@dataclass
class NodeSet:
    """Discretisation carrier: positions plus per-node type, normal, spacing, order and boundary side."""

    positions: np.ndarray
    types: np.ndarray
    normals: np.ndarray
    h: np.ndarray
    m: np.ndarray
    side: np.ndarray = field(default=None)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        n = len(self.positions)
        self.types = np.asarray(self.types, dtype=int)
        self.normals = np.asarray(self.normals, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        self.m = np.asarray(self.m, dtype=int)
        self.side = np.full(n, -1, dtype=int) if self.side is None else np.asarray(self.side, dtype=int)
        for name in ("types", "normals", "h", "m", "side"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"NodeSet field '{name}' has {len(getattr(self, name))} rows, expected {n}.")
        if np.any(self.h <= 0):
            raise ValueError("NodeSet spacing must be strictly positive.")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    @property
    def boundary(self) -> np.ndarray:
        return self.types != NodeType.INTERIOR

    def mask(self, node_type: NodeType) -> np.ndarray:
        return self.types == node_type

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.positions)

    def subset(self, keep: np.ndarray) -> "NodeSet":
        keep = np.asarray(keep)
        return NodeSet(self.positions[keep], self.types[keep], self.normals[keep],
                       self.h[keep], self.m[keep], self.side[keep])

    def with_types(self, types) -> "NodeSet":
        return replace(self, types=np.asarray(types, dtype=int))

    def with_orders(self, m) -> "NodeSet":
        return replace(self, m=np.broadcast_to(np.asarray(m, dtype=int), (len(self),)).copy())


class _NodeIndex:
    """Proximity index: a cKDTree over settled nodes plus a brute-force tail of recent ones."""

    def __init__(self, dimension: int):
        self._settled = np.empty((0, dimension))
        self._tree: Optional[cKDTree] = None
        self._tail: List[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._settled) + len(self._tail)

    def add(self, point: np.ndarray):
        self._tail.append(point)
        if len(self._tail) >= TAIL_CAPACITY:
            self._settled = np.vstack([self._settled, np.asarray(self._tail)])
            self._tree = cKDTree(self._settled)
            self._tail = []

    def is_free(self, points: np.ndarray, radii: np.ndarray) -> np.ndarray:
        """True where no indexed node lies closer than the matching radius."""
        free = np.ones(len(points), dtype=bool)
        if self._tree is not None:
            dist, _ = self._tree.query(points, k=1)
            free &= dist >= radii
        if self._tail:
            tail = np.asarray(self._tail)
            dist = np.linalg.norm(points[:, None, :] - tail[None, :, :], axis=2).min(axis=1)
            free &= dist >= radii
        return free


def _directions(k: int, rng: np.random.Generator) -> np.ndarray:
    if k == 2:
        angles = rng.uniform(0.0, 2 * np.pi) + 2 * np.pi * np.arange(N_CANDIDATES) / N_CANDIDATES
        return np.column_stack([np.cos(angles), np.sin(angles)])
    dirs = rng.normal(size=(N_CANDIDATES, k))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _advance_front(index: _NodeIndex, seeds: np.ndarray, inside: Callable[[np.ndarray], np.ndarray],
                   basis: np.ndarray, spacing: SpacingField, rng: np.random.Generator,
                   max_nodes: int) -> np.ndarray:
    """
    Grow nodes outward from ``seeds`` in the subspace spanned by the rows of ``basis``.

    Every front node proposes candidates on a sphere of radius h(p); a candidate is
    kept when it is inside and no node is closer than C_MIN * h(candidate).
    """
    accepted: List[np.ndarray] = []
    queue = deque(seeds)
    while queue:
        p = queue.popleft()
        hp = float(spacing(p))
        cands = p + hp * _directions(basis.shape[0], rng) @ basis
        cands = cands[inside(cands)]
        if len(cands) == 0:
            continue
        radii = C_MIN * spacing(cands)
        free = index.is_free(cands, radii)
        batch: List[np.ndarray] = []
        for c, r in zip(cands[free], radii[free]):
            if batch and np.min(np.linalg.norm(np.asarray(batch) - c, axis=1)) < r:
                continue
            batch.append(c)
        for c in batch:
            index.add(c)
            accepted.append(c)
            queue.append(c)
        if len(index) > max_nodes:
            raise GenerationOverflowError(
                f"Node generation exceeded the cap of {max_nodes} nodes; the spacing field is too fine.")
    return np.asarray(accepted).reshape(-1, basis.shape[1])


def _march_segment(length: float, h_along: Callable[[float], float]) -> np.ndarray:
    """Arclength stations in [0, length) spaced by the local h, rescaled to close the last gap."""
    ts = [0.0]
    while True:
        nxt = ts[-1] + h_along(ts[-1])
        if nxt >= length:
            break
        ts.append(nxt)
    last_step = nxt - ts[-1]
    gap = length - ts[-1]
    if len(ts) > 1 and gap < 0.5 * last_step:
        end = ts.pop()
        scale = length / end
    else:
        scale = length / nxt
    return np.asarray(ts) * scale


def _disc_boundary(shape: DomainShape, spacing: SpacingField):
    c, r = shape.center, shape.radius
    point = lambda t: c + r * np.array([np.cos(t / r), np.sin(t / r)])
    ts = _march_segment(2 * np.pi * r, lambda t: float(spacing(point(t))))
    pts = np.array([point(t) for t in ts])
    normals = (pts - c) / np.linalg.norm(pts - c, axis=1, keepdims=True)
    return pts, normals, np.zeros(len(pts), dtype=int)


_RECT_NORMALS = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])


def _rectangle_boundary(shape: DomainShape, spacing: SpacingField):
    lo, hi = shape.lower, shape.upper
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    pts, normals, sides = [], [], []
    for s in range(4):
        a, b = corners[s], corners[(s + 1) % 4]
        length = float(np.linalg.norm(b - a))
        tangent = (b - a) / length
        ts = _march_segment(length, lambda t: float(spacing(a + t * tangent)))
        for j, t in enumerate(ts):
            pts.append(a + t * tangent)
            if j == 0:
                n = _RECT_NORMALS[s] + _RECT_NORMALS[(s - 1) % 4]
                normals.append(n / np.linalg.norm(n))
            else:
                normals.append(_RECT_NORMALS[s])
            sides.append(s)
    return np.array(pts), np.array(normals), np.array(sides, dtype=int)


def _face_normal(face: int) -> np.ndarray:
    n = np.zeros(3)
    n[face // 2] = -1.0 if face % 2 == 0 else 1.0
    return n


def _faces_touching(point: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> List[int]:
    faces = []
    for axis in range(3):
        if point[axis] == lo[axis]:
            faces.append(2 * axis)
        elif point[axis] == hi[axis]:
            faces.append(2 * axis + 1)
    return faces


def _box_boundary(shape: DomainShape, spacing: SpacingField, index: _NodeIndex,
                  rng: np.random.Generator, max_nodes: int):
    lo, hi = shape.lower, shape.upper
    pts = [c for c in shape.corners()]
    for p in pts:
        index.add(p)
    for axis in range(3):
        others = [a for a in range(3) if a != axis]
        for v0, v1 in itertools.product(*(shape.bounds[a] for a in others)):
            a = np.empty(3)
            a[axis], a[others[0]], a[others[1]] = lo[axis], v0, v1
            length = hi[axis] - lo[axis]
            tangent = np.eye(3)[axis]
            ts = _march_segment(length, lambda t: float(spacing(a + t * tangent)))
            for t in ts[1:]:
                p = a + t * tangent
                pts.append(p)
                index.add(p)

    for face in range(6):
        axis, value = face // 2, shape.bounds[face // 2][face % 2]
        others = [a for a in range(3) if a != axis]
        on_face = np.array([p for p in pts if p[axis] == value])

        def inside(c, axis=axis, others=others):
            return np.all((c[:, others] > lo[others]) & (c[:, others] < hi[others]), axis=1)

        grown = _advance_front(index, on_face, inside, np.eye(3)[others], spacing, rng, max_nodes)
        if len(grown):
            grown[:, axis] = value
        pts.extend(grown)

    pts = np.array(pts)
    normals = np.empty_like(pts)
    sides = np.empty(len(pts), dtype=int)
    for i, p in enumerate(pts):
        faces = _faces_touching(p, lo, hi)
        n = sum(_face_normal(f) for f in faces)
        normals[i] = n / np.linalg.norm(n)
        sides[i] = min(faces)
    return pts, normals, sides


def _estimate_count(shape: DomainShape, spacing: SpacingField, seed: int) -> float:
    sample = shape.sample(2000, np.random.default_rng([seed, 1]))
    return shape.measure * float(np.mean(spacing(sample) ** (-shape.dimension)))


def fill_domain(shape: DomainShape, h: SpacingField, seed: int,
                order: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                max_nodes: int = DEFAULT_MAX_NODES) -> NodeSet:
    """
    Discretise ``shape`` with spacing ``h`` by an advancing front.

    The boundary is marched first; the interior is then grown from the boundary
    nodes. Boundary nodes are tagged DIRICHLET with their side id; problems retag
    them. Orders come from ``order`` (default 2 everywhere).
    """
    start = time.perf_counter()
    d = shape.dimension
    estimate = _estimate_count(shape, h, seed)
    if estimate > max_nodes:
        raise GenerationOverflowError(
            f"Spacing field implies about {estimate:.0f} nodes, above the cap of {max_nodes}.")

    rng = np.random.default_rng(seed)
    index = _NodeIndex(d)
    if shape.kind == "disc":
        b_pts, b_normals, b_sides = _disc_boundary(shape, h)
    elif shape.kind == "rectangle":
        b_pts, b_normals, b_sides = _rectangle_boundary(shape, h)
    else:
        b_pts, b_normals, b_sides = _box_boundary(shape, h, _NodeIndex(d), rng, max_nodes)
    for p in b_pts:
        index.add(p)

    interior = _advance_front(index, b_pts, shape.contains, np.eye(d), h, rng, max_nodes)

    positions = np.vstack([b_pts, interior])
    nb, ni = len(b_pts), len(interior)
    types = np.concatenate([np.full(nb, NodeType.DIRICHLET), np.full(ni, NodeType.INTERIOR)])
    normals = np.vstack([b_normals, np.zeros((ni, d))])
    sides = np.concatenate([b_sides, np.full(ni, -1)])
    m = np.full(len(positions), 2) if order is None else order(positions)
    nodes = NodeSet(positions, types, normals, h(positions), m, sides)
    logger.info(f"Generated {len(nodes)} nodes ({nb} boundary) on {shape.kind} "
                f"in {time.perf_counter() - start:.2f}s (seed {seed}).")
    return nodes


def nearest_neighbors(nodes: NodeSet, x, n: int) -> np.ndarray:
    """Indices of the n nodes closest to x, ascending by distance, ties to the lower index."""
    if n > len(nodes):
        raise InsufficientNodesError(f"Requested {n} neighbours from a set of {len(nodes)} nodes.")
    x = np.asarray(x, dtype=float)
    dist, _ = nodes.tree.query(x, k=n)
    cutoff = float(np.atleast_1d(dist)[-1])
    pool = np.asarray(nodes.tree.query_ball_point(x, cutoff * (1 + 1e-12) + 1e-300), dtype=int)
    exact = np.linalg.norm(nodes.positions[pool] - x, axis=1)
    order = np.lexsort((pool, exact))
    return pool[order][:n]


def stencil_indices(nodes: NodeSet, centers: Sequence[int], n: int) -> np.ndarray:
    """Batched nearest-n lookup for stencil selection, rows ordered like nearest_neighbors."""
    if n > len(nodes):
        raise InsufficientNodesError(f"Stencils of {n} nodes need at least that many nodes, got {len(nodes)}.")
    centers = np.asarray(centers, dtype=int)
    k = min(n + 4, len(nodes))
    _, idx = nodes.tree.query(nodes.positions[centers], k=k)
    idx = idx.reshape(len(centers), k)
    dist = np.linalg.norm(nodes.positions[idx] - nodes.positions[centers][:, None, :], axis=2)
    order = np.lexsort((idx, dist), axis=1)
    return np.take_along_axis(idx, order, axis=1)[:, :n]


def remove_corner_nodes(nodes: NodeSet, shape: DomainShape) -> NodeSet:
    """Drop nodes within h/4 of a geometric corner of a rectangle or box."""
    corners = shape.corners()
    dist, _ = cKDTree(corners).query(nodes.positions, k=1)
    keep = dist >= nodes.h / 4
    removed = int(np.count_nonzero(~keep))
    if removed:
        logger.debug(f"Removed {removed} corner nodes.")
        return nodes.subset(keep)
    return nodes
