import numpy as np
import pandas as pd
import pytest

from meshfree.approx import build_operator_table, gradient_operators
from meshfree.errors import InvalidLoadingError, UndefinedNormError
from meshfree.nodegen import DomainShape, NodeType, SpacingField, fill_domain
from meshfree.problems import (MM, MPA, ElasticMaterial, FrettingGeometry, FrettingLoads, StressField,
                               boussinesq_displacement, boussinesq_spec, boussinesq_stress_cylindrical,
                               cartesian_to_cylindrical, contact_tractions, error_norms, fretting_spec,
                               hertz_constants, loading_conditions, mean_traction_difference, peak_problem,
                               read_reference_csv, stress_and_vonmises, surface_traction, von_mises)

ALUMINIUM = ElasticMaterial(72.1e9, 0.33)
GEOMETRY = FrettingGeometry(40 * MM, 10 * MM, 4 * MM, 10 * MM)
LOADS = FrettingLoads(543.0, 155.0, 100 * MPA, 0.3)


@pytest.fixture
def hertz():
    return hertz_constants(543.0, 10 * MM, 4 * MM, (ALUMINIUM, ALUMINIUM), 0.3, 155.0, 100 * MPA)


def test_material_lame_constants():
    assert ALUMINIUM.mu == pytest.approx(2.711e10, rel=1e-3)
    lam, mu = ElasticMaterial(1.0, 0.25).lame
    assert lam == pytest.approx(0.4) and mu == pytest.approx(0.4)
    with pytest.raises(ValueError):
        ElasticMaterial(1.0, 0.5)
    with pytest.raises(ValueError):
        ElasticMaterial(-1.0, 0.3)


def test_peak_problem_closed_form():
    problem = peak_problem()
    x_s = np.array([[0.5, 1.0 / 3.0]])
    assert problem.exact(x_s)[0] == pytest.approx(1.0)
    assert problem.rhs(x_s)[0] == pytest.approx(-4000.0)
    np.testing.assert_allclose(problem.metadata["gradient"](x_s), 0.0)
    with pytest.raises(ValueError):
        peak_problem(0.0)


def test_peak_rhs_matches_finite_differences():
    problem = peak_problem(20.0)
    x = np.array([[0.3, 0.1]])
    step = 1e-4
    lap = sum(problem.exact(x + step * e) - 2 * problem.exact(x) + problem.exact(x - step * e)
              for e in np.eye(2)[:, None, :]) / step ** 2
    assert problem.rhs(x)[0] == pytest.approx(lap[0], rel=1e-5)


def test_peak_problem_splits_the_boundary(make_nodes):
    problem = peak_problem(5.0)
    nodes = make_nodes(problem, 0.1)
    boundary = nodes.side >= 0
    right = nodes.positions[:, 0] > 0.5
    assert np.all(nodes.types[boundary & right] == NodeType.DIRICHLET)
    assert np.all(nodes.types[boundary & ~right] == NodeType.NEUMANN)
    assert np.all(nodes.types[~boundary] == NodeType.INTERIOR)


def test_hertz_constants(hertz):
    assert hertz.a / MM == pytest.approx(0.2067, rel=5e-4)
    assert hertz.p0 == pytest.approx(4.181e8, rel=1e-3)
    assert hertz.c / hertz.a == pytest.approx(np.sqrt(1 - 155.0 / 162.9), rel=1e-6)
    assert hertz.c <= hertz.a
    assert hertz.e > 0


def test_loading_conditions_hold_for_reference_loads(hertz):
    checks = loading_conditions(543.0, 155.0, 100 * MPA, 0.3, hertz.p0)
    assert len(checks) == 3
    assert all(holds for _, holds in list(checks.values())[:2])


@pytest.mark.parametrize("tangential, axial, condition", [
    (200.0, 100 * MPA, "Q <= mu*F"),
    (155.0, 500 * MPA, "sigma_ax/(4*mu*p0) + sqrt(1 - Q/(mu*F)) <= 1"),
])
def test_invalid_loading_names_the_condition(tangential, axial, condition):
    with pytest.raises(InvalidLoadingError) as info:
        hertz_constants(543.0, 10 * MM, 4 * MM, (ALUMINIUM, ALUMINIUM), 0.3, tangential, axial)
    assert info.value.condition == condition


def test_contact_tractions(hertz):
    a = hertz.a
    p, q = contact_tractions(hertz, np.array([-a, 0.0, a, 1.5 * a, -2 * a]))
    np.testing.assert_allclose(p, [0.0, hertz.p0, 0.0, 0.0, 0.0], atol=1e-6 * hertz.p0)
    np.testing.assert_allclose(q[3:], 0.0)

    _, q_e = contact_tractions(hertz, np.array([hertz.e]))
    expected = -hertz.friction * hertz.p0 * (np.sqrt(1 - hertz.e ** 2 / a ** 2) - hertz.c / a)
    assert q_e[0] == pytest.approx(expected)


def test_fretting_spec_boundary_conditions(hertz):
    problem = fretting_spec(GEOMETRY, ALUMINIUM, LOADS)
    assert problem.components == 2 and problem.remove_corners
    assert problem.metadata["hertz"].a == pytest.approx(hertz.a)

    traction = problem.conditions[NodeType.TRACTION].data
    x = np.array([[2 * hertz.a, 0.0], [0.0, 0.0], [GEOMETRY.length / 2, -1 * MM]])
    n = np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    values = traction(x, n)
    np.testing.assert_allclose(values[0], [0.0, 0.0])
    assert values[1, 1] == pytest.approx(-hertz.p0)
    np.testing.assert_allclose(values[2], [100 * MPA, 0.0])


def test_fretting_spec_classifies_edges():
    problem = fretting_spec(GEOMETRY, ALUMINIUM, LOADS)
    nodes = problem.prepare(fill_domain(problem.shape, SpacingField.constant(1 * MM), seed=0))
    assert np.all(nodes.types[nodes.side == 0] == NodeType.SYMMETRY)
    assert np.all(nodes.types[nodes.side == 3] == NodeType.DIRICHLET)
    assert np.all(nodes.types[(nodes.side == 1) | (nodes.side == 2)] == NodeType.TRACTION)
    corners = problem.shape.corners()
    assert not any(np.any(np.all(nodes.positions == c, axis=1)) for c in corners)


def test_boussinesq_axis_stress():
    material = ElasticMaterial(1.0, 0.33)
    stress = boussinesq_stress_cylindrical(np.array([0.0]), np.array([-1.0]), -1.0, material)
    assert stress["zz"][0] == pytest.approx(-3 / (2 * np.pi))
    assert stress["rt"][0] == 0.0 and stress["tz"][0] == 0.0


def test_boussinesq_displacement_has_no_hoop_component(rng):
    material = ElasticMaterial(1.0, 0.33)
    x = rng.uniform(-1.0, -0.1, (1000, 3))
    u = boussinesq_displacement(x, -1.0, material)
    _, u_t, u_z = cartesian_to_cylindrical(x, u)
    np.testing.assert_allclose(u_t, 0.0, atol=1e-12)
    np.testing.assert_allclose(u_z, u[:, 2])


def test_boussinesq_spec_is_fully_dirichlet(make_nodes):
    problem = boussinesq_spec(epsilon=0.1)
    nodes = make_nodes(problem, 0.2)
    assert np.all(nodes.types[nodes.side >= 0] == NodeType.DIRICHLET)
    assert problem.metadata["stress"](nodes.positions[:3]).shape == (3, 3, 3)
    with pytest.raises(ValueError):
        boussinesq_spec(epsilon=0.0)


def test_von_mises_uniaxial():
    tensor = np.zeros((2, 3, 3))
    tensor[0, 0, 0] = 5.0
    tensor[1, 1, 1] = -3.0
    np.testing.assert_allclose(von_mises(tensor), [5.0, 3.0])


@pytest.fixture
def square_table(square):
    nodes = fill_domain(square, SpacingField.constant(0.1), seed=0)
    return nodes, build_operator_table(nodes, gradient_operators(2))


def test_stress_of_rigid_translation_vanishes(square_table):
    nodes, weights = square_table
    displacement = np.tile([0.3, -0.7], len(nodes))
    stress = stress_and_vonmises(nodes, displacement, weights, ElasticMaterial(1.0, 0.3))
    np.testing.assert_allclose(stress.tensor, 0.0, atol=1e-9)


def test_stress_of_uniaxial_plane_strain_field(square_table):
    nodes, weights = square_table
    nu, s = 0.3, 2.0
    material = ElasticMaterial(1.0, nu)
    e_xx = (1 - nu ** 2) * s / material.young
    e_yy = -nu * (1 + nu) * s / material.young
    u = np.column_stack([e_xx * nodes.positions[:, 0], e_yy * nodes.positions[:, 1]])
    stress = stress_and_vonmises(nodes, u, weights, material)
    np.testing.assert_allclose(stress.tensor[:, 0, 0], s, rtol=1e-6)
    np.testing.assert_allclose(stress.tensor[:, 1, 1], 0.0, atol=1e-6)
    np.testing.assert_allclose(stress.tensor[:, 2, 2], nu * s, rtol=1e-6)
    expected = np.sqrt(0.5 * (s ** 2 + (nu * s) ** 2 + (nu * s - s) ** 2))
    np.testing.assert_allclose(stress.von_mises, expected, rtol=1e-6)


def test_error_norms():
    u = np.array([1.0, -2.0, 0.5])
    assert error_norms(u, u) == (0.0, 0.0, 0.0)
    assert error_norms(2 * u, u)[2] == pytest.approx(1.0)
    bumped = u.copy()
    bumped[2] += 2.0
    assert error_norms(bumped, u)[2] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        error_norms(u, u[:2])
    with pytest.raises(UndefinedNormError):
        error_norms(u, np.zeros(3))


def test_reference_csv_and_mean_difference(tmp_path):
    path = tmp_path / "reference.csv"
    pd.DataFrame({"x": [-0.2, -0.1, 0.0, 0.1, 0.2, 0.5], "sigma_xx": [10.0, 20.0, 30.0, 20.0, 10.0, 0.0]}) \
        .to_csv(path, index=False)
    reference = read_reference_csv(path)
    assert reference["x"].iloc[-1] == pytest.approx(0.5 * MM)
    assert reference["sigma_xx"].iloc[2] == pytest.approx(30 * MPA)

    assert mean_traction_difference(reference, reference, 0.25 * MM) == pytest.approx(0.0)
    shifted = reference.assign(sigma_xx=reference["sigma_xx"] + 1 * MPA)
    assert mean_traction_difference(reference, shifted, 0.25 * MM) == pytest.approx(1 * MPA)

    bad = tmp_path / "bad.csv"
    pd.DataFrame({"x": [0.0]}).to_csv(bad, index=False)
    with pytest.raises(ValueError):
        read_reference_csv(bad)


def test_surface_traction_reads_the_top_edge():
    shape = DomainShape.rectangle((-1.0, -1.0), (1.0, 0.0))
    nodes = fill_domain(shape, SpacingField.constant(0.25), seed=0)
    tensor = np.zeros((len(nodes), 3, 3))
    tensor[:, 0, 0] = nodes.positions[:, 0]
    surface = surface_traction(nodes, StressField(tensor, von_mises(tensor)))
    assert len(surface) == np.count_nonzero(nodes.side == 2)
    assert surface["x"].is_monotonic_increasing
    np.testing.assert_allclose(surface["sigma_xx"], surface["x"])
