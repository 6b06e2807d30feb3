import numpy as np
import pytest

from meshfree.approx import (Operator, PhsBasis, WeightSet, build_operator_table, compute_weights,
                             gradient_operators, monomial_exponents, phs_apply, stencil_condition, stencil_size)
from meshfree.checks import EXACTNESS_TOLERANCE, monomial_exactness, scattered_stencil
from meshfree.errors import AssemblyIncompleteError, StencilDegenerateError
from meshfree.nodegen import SpacingField, fill_domain


def test_operator_validation():
    with pytest.raises(ValueError):
        Operator("curl")
    with pytest.raises(ValueError):
        Operator("grad", (0, 1))
    assert Operator.hess(1, 0) == Operator.hess(0, 1)
    assert Operator.laplacian().derivative_order == 2
    assert str(Operator.grad(1)) == "grad1"


@pytest.mark.parametrize("m, d, size", [(2, 2, 12), (4, 2, 30), (2, 3, 20), (8, 3, 330)])
def test_stencil_size(m, d, size):
    assert stencil_size(m, d) == size
    assert len(monomial_exponents(m, d)) == size // 2


def test_stencil_size_rejects_bad_dimension():
    with pytest.raises(ValueError):
        stencil_size(2, 1)


def test_phs_closed_forms():
    assert phs_apply(3, Operator.identity(), [1.0, 0.0], [0.0, 0.0]) == pytest.approx(1.0)
    assert phs_apply(3, Operator.laplacian(), [1.0, 0.0], [0.0, 0.0]) == pytest.approx(9.0)
    assert phs_apply(3, Operator.laplacian(), [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]) == pytest.approx(12.0)
    assert phs_apply(3, Operator.grad(0), [2.0, 0.0], [0.0, 0.0]) == pytest.approx(12.0)
    for op in (Operator.identity(), Operator.grad(0), Operator.hess(0, 1), Operator.laplacian()):
        assert phs_apply(3, op, [0.3, 0.4], [0.3, 0.4]) == 0.0


def test_even_phs_uses_log():
    basis = PhsBasis(2)
    assert basis(np.array([0.0, 1.0])).tolist() == [0.0, 0.0]
    assert basis(np.array([np.e]))[0] == pytest.approx(np.e ** 2)
    with pytest.raises(ValueError):
        PhsBasis(0)


@pytest.mark.parametrize("m", [2, 4, 6, 8])
@pytest.mark.parametrize("d", [2, 3])
def test_weights_reproduce_monomials(m, d):
    assert monomial_exactness(m, d, trials=50, seed=m * 10 + d) <= EXACTNESS_TOLERANCE


def test_weights_are_translation_invariant(rng):
    stencil = scattered_stencil(np.zeros(2), 12, 0.1, rng)
    w = compute_weights(stencil[0], stencil, Operator.laplacian())
    shifted = compute_weights(stencil[0] + 5.0, stencil + 5.0, Operator.laplacian())
    np.testing.assert_allclose(w, shifted, rtol=1e-8, atol=1e-8)
    assert abs(w.sum()) < 1e-8


def test_collinear_stencil_is_degenerate():
    stencil = np.column_stack([np.linspace(-1.0, 1.0, 12), np.zeros(12)])
    with pytest.raises(StencilDegenerateError):
        compute_weights(np.zeros(2), stencil, Operator.laplacian())


def test_duplicate_nodes_are_degenerate(rng):
    stencil = scattered_stencil(np.zeros(2), 12, 0.1, rng)
    stencil[5] = stencil[4]
    with pytest.raises(StencilDegenerateError):
        compute_weights(stencil[0], stencil, Operator.laplacian())


def test_stencil_condition_is_finite(rng):
    stencil = scattered_stencil(np.zeros(3), 20, 0.1, rng)
    assert 1.0 < stencil_condition(stencil[0], stencil, m=2) < 1e14


@pytest.fixture
def disc_nodes(disc):
    return fill_domain(disc, SpacingField.constant(0.08), seed=0)


def test_operator_table_differentiates_quadratics(disc_nodes):
    ops = [Operator.laplacian()] + gradient_operators(2)
    table = build_operator_table(disc_nodes, ops)
    x, y = disc_nodes.positions.T
    np.testing.assert_allclose(table.apply(Operator.laplacian(), x ** 2 + 3 * y ** 2), 8.0, atol=1e-7)
    np.testing.assert_allclose(table.apply(Operator.grad(0), x * y), y, atol=1e-8)
    assert all(len(table.stencil(i)) == 12 for i in range(len(disc_nodes)))


def test_operator_table_mixed_orders(disc_nodes):
    orders = np.where(disc_nodes.positions[:, 0] > 0, 4, 2)
    table = build_operator_table(disc_nodes, [Operator.laplacian()], orders=orders)
    sizes = np.array([len(table.stencil(i)) for i in range(len(disc_nodes))])
    assert np.all(sizes[orders == 4] == 30) and np.all(sizes[orders == 2] == 12)
    x, y = disc_nodes.positions.T
    lap = table.apply(Operator.laplacian(), x ** 4)
    np.testing.assert_allclose(lap[orders == 4], 12 * x[orders == 4] ** 2, atol=1e-6)


def test_operator_table_is_thread_independent(disc_nodes):
    ops = [Operator.laplacian(), Operator.grad(1)]
    serial = build_operator_table(disc_nodes, ops, threads=1)
    threaded = build_operator_table(disc_nodes, ops, threads=4)
    for op in ops:
        assert (serial.matrix(op) != threaded.matrix(op)).nnz == 0


def test_missing_operator_rows_raise(disc_nodes):
    table = build_operator_table(disc_nodes, [Operator.laplacian()])
    with pytest.raises(AssemblyIncompleteError):
        table.matrix(Operator.grad(0))
    empty = WeightSet(3)
    assert empty.matrix(Operator.grad(0), rows=np.zeros(3, dtype=bool)).nnz == 0
