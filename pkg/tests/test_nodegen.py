import numpy as np
import pytest
from scipy.spatial import cKDTree

from meshfree.errors import GenerationOverflowError, InsufficientNodesError
from meshfree.nodegen import (C_MIN, DomainShape, NodeSet, NodeType, SpacingField, fill_domain, nearest_neighbors,
                              remove_corner_nodes, stencil_indices)


def _nearest_distances(positions):
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    np.fill_diagonal(dist, np.inf)
    return dist.min(axis=1)


def test_domain_shape_validation():
    with pytest.raises(ValueError):
        DomainShape("torus", ((0, 1), (0, 1)))
    with pytest.raises(ValueError):
        DomainShape.rectangle((1.0, 0.0), (0.0, 1.0))
    with pytest.raises(ValueError):
        DomainShape("box", ((0, 1), (0, 1)))
    with pytest.raises(ValueError):
        DomainShape.disc().corners()


def test_domain_shape_geometry(disc, square, cube):
    assert disc.measure == pytest.approx(np.pi)
    assert square.dimension == 2 and cube.dimension == 3
    assert len(cube.corners()) == 8
    assert disc.contains([[0.0, 0.0], [1.0, 0.0], [0.9, 0.0]]).tolist() == [True, False, True]
    assert square.contains([[0.5, 0.5], [0.0, 0.5]]).tolist() == [True, False]


@pytest.mark.parametrize("shape_name, h", [("disc", 0.1), ("square", 0.1), ("cube", 0.2)])
@pytest.mark.parametrize("seed", range(10))
def test_fill_domain_spacing_and_coverage(shape_name, h, seed, request):
    shape = request.getfixturevalue(shape_name)
    nodes = fill_domain(shape, SpacingField.constant(h, shape.dimension), seed)

    nearest = _nearest_distances(nodes.positions)
    assert np.all(nearest >= C_MIN * h * (1 - 1e-9))

    samples = shape.sample(2000, np.random.default_rng(seed + 100))
    gap, _ = cKDTree(nodes.positions).query(samples)
    assert gap.max() <= 2 * h


def test_fill_domain_is_deterministic(disc):
    a = fill_domain(disc, SpacingField.constant(0.1), seed=3)
    b = fill_domain(disc, SpacingField.constant(0.1), seed=3)
    c = fill_domain(disc, SpacingField.constant(0.1), seed=4)
    np.testing.assert_array_equal(a.positions, b.positions)
    assert len(a) != len(c) or not np.array_equal(a.positions, c.positions)


def test_boundary_nodes_and_normals(disc, square):
    nodes = fill_domain(disc, SpacingField.constant(0.1), seed=0)
    boundary = nodes.side >= 0
    assert boundary.sum() > 50
    np.testing.assert_allclose(np.linalg.norm(nodes.positions[boundary], axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(nodes.normals[boundary], nodes.positions[boundary], atol=1e-12)
    assert np.all(disc.contains(nodes.positions[~boundary]))
    assert np.all(nodes.types[boundary] == NodeType.DIRICHLET)
    assert np.all(nodes.m == 2)

    rect = fill_domain(square, SpacingField.constant(0.1), seed=0)
    bottom = rect.side == 0
    assert np.all(rect.positions[bottom, 1] == 0.0)
    right = (rect.side == 1) & (rect.positions[:, 1] > 0)
    np.testing.assert_allclose(rect.normals[right], [[1.0, 0.0]] * right.sum())


def test_variable_spacing_concentrates_nodes(square):
    carriers = np.array([[0.0, 0.0], [1.0, 1.0]])
    spacing = SpacingField(carriers, [0.02, 0.1], n_nearest=2)
    nodes = fill_domain(square, spacing, seed=0)
    near = np.linalg.norm(nodes.positions, axis=1) < 0.3
    far = np.linalg.norm(nodes.positions - 1.0, axis=1) < 0.3
    assert near.sum() > 3 * far.sum()


def test_fill_domain_overflow(disc):
    with pytest.raises(GenerationOverflowError):
        fill_domain(disc, SpacingField.constant(0.01), seed=0, max_nodes=1000)


def test_spacing_field_clamps_and_validates():
    field = SpacingField(np.array([[0.0, 0.0], [1.0, 0.0]]), [0.5, 2.0], n_nearest=2, h_max=1.0)
    assert field(np.array([1.0, 0.0])) == pytest.approx(1.0)
    assert field(np.array([0.0, 0.0])) == pytest.approx(0.5)
    assert SpacingField.constant(0.3)(np.array([[0.2, 0.4], [0.9, 0.1]])).tolist() == pytest.approx([0.3, 0.3])
    with pytest.raises(ValueError):
        SpacingField(np.zeros((1, 2)), [0.0])


def _star():
    positions = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [0.0, 0.0], [3.0, 3.0]])
    n = len(positions)
    return NodeSet(positions, np.zeros(n), np.zeros((n, 2)), np.ones(n), np.full(n, 2))


def test_nearest_neighbors_orders_ties_by_index():
    nodes = _star()
    assert nearest_neighbors(nodes, [0.0, 0.0], 3).tolist() == [4, 0, 1]
    assert nearest_neighbors(nodes, [0.0, 0.0], 5).tolist() == [4, 0, 1, 2, 3]
    with pytest.raises(InsufficientNodesError):
        nearest_neighbors(nodes, [0.0, 0.0], 7)


def test_nearest_neighbors_match_brute_force(rng):
    points = rng.uniform(0.0, 1.0, (500, 2))
    nodes = NodeSet(points, np.zeros(500), np.zeros((500, 2)), np.full(500, 0.05), np.full(500, 2))
    for query in rng.uniform(-0.1, 1.1, (100, 2)):
        dist = np.linalg.norm(points - query, axis=1)
        expected = np.lexsort((np.arange(500), dist))[:15]
        assert nearest_neighbors(nodes, query, 15).tolist() == expected.tolist()


def test_stencil_indices_match_nearest_neighbors(disc):
    nodes = fill_domain(disc, SpacingField.constant(0.1), seed=1)
    centers = [0, 10, len(nodes) - 1]
    batched = stencil_indices(nodes, centers, 12)
    for row, c in zip(batched, centers):
        assert row[0] == c
        assert row.tolist() == nearest_neighbors(nodes, nodes.positions[c], 12).tolist()


def test_remove_corner_nodes(square):
    nodes = fill_domain(square, SpacingField.constant(0.1), seed=0)
    trimmed = remove_corner_nodes(nodes, square)
    assert len(trimmed) == len(nodes) - 4
    dist, _ = cKDTree(square.corners()).query(trimmed.positions)
    assert dist.min() > 0.0


def test_nodeset_rejects_inconsistent_fields():
    with pytest.raises(ValueError):
        NodeSet(np.zeros((3, 2)), np.zeros(2), np.zeros((3, 2)), np.ones(3), np.full(3, 2))
    with pytest.raises(ValueError):
        NodeSet(np.zeros((1, 2)), np.zeros(1), np.zeros((1, 2)), np.zeros(1), np.full(1, 2))
