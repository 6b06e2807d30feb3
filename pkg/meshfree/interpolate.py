import numpy as np
from scipy.spatial import cKDTree

from meshfree.errors import NoDataError

EXACT_HIT = 1e-12


class ShepardInterpolator:
    """
    Inverse-distance-weighted (Shepard) interpolation over the n nearest data points.

    Weights are ||q - p_i||^(-power); a query closer than 1e-12 to a data point
    returns that point's value. The neighbour count is capped at the number of
    data points.
    """

    def __init__(self, points, values, n_nearest: int, power: float = 2.0):
        points = np.asarray(points, dtype=float)
        values = np.asarray(values, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if len(points) == 0:
            raise NoDataError("Shepard interpolation needs at least one data point.")
        if len(points) != len(values):
            raise ValueError(f"len(points) {len(points)} != len(values) {len(values)}")
        if n_nearest < 1:
            raise ValueError("n_nearest has to be a positive integer")
        if power <= 0:
            raise ValueError("power has to be positive")
        self.points = points
        self.values = values
        self.n_nearest = min(int(n_nearest), len(points))
        self.power = float(power)
        self.tree = cKDTree(points)

    def __call__(self, queries) -> np.ndarray:
        queries = np.asarray(queries, dtype=float)
        if self.points.shape[1] == 1:
            single = queries.ndim == 0
            q = queries.reshape(-1, 1)
        else:
            single = queries.ndim == 1
            q = np.atleast_2d(queries)
        if q.shape[1] != self.points.shape[1]:
            raise ValueError(f"query dimension {q.shape[1]} != data dimension {self.points.shape[1]}")

        dist, idx = self.tree.query(q, k=self.n_nearest)
        if self.n_nearest == 1:
            dist, idx = dist[:, None], idx[:, None]
        vals = self.values[idx]

        hit = dist[:, 0] < EXACT_HIT
        safe = np.where(dist < EXACT_HIT, 1.0, dist)
        w = safe ** (-self.power)
        out = np.sum(w * vals, axis=1) / np.sum(w, axis=1)
        out[hit] = vals[hit, 0]
        return out[0] if single else out


def shepard(points, values, query, n_nearest: int, power: float = 2.0) -> float:
    """Shepard value at a single query position."""
    return float(ShepardInterpolator(points, values, n_nearest, power)(np.asarray(query, dtype=float)))
