import math

import numpy as np
import pytest

from shared.errors import (
    DimensionMismatchError,
    EmptySpectrumError,
    InfiniteQuantileError,
    MapTestError,
    NullModeDivisionError,
)
from shared.spectral_core import (
    Grid,
    NormalDist,
    SpectralOperator,
    dense_operator,
    normal_cdf,
    normal_quantile,
    pseudo_inverse_adjoint_solve,
    sine_basis_matrix,
    tstar_t_power,
)


def periodic_op(n=16):
    grid = Grid(-1.0, 1.0, n, 'cell_centered_periodic')
    k = np.arange(-n // 2, n // 2)
    return SpectralOperator(grid, 'periodic_fourier', 1.0 / (1.0 + k ** 2))


def sine_op(n=16):
    grid = Grid(0.0, 1.0, n, 'interior')
    k = np.arange(1, n + 1, dtype=float)
    return SpectralOperator(grid, 'odd_sine', k ** -2.0)


ALL_OPS = [periodic_op, sine_op, lambda: dense_operator([1.0, 0.5, 0.25, 0.125])]


def test_grid_spacing_and_nodes():
    periodic = Grid(-1.0, 1.0, 4, 'cell_centered_periodic')
    assert periodic.h == pytest.approx(0.5)
    np.testing.assert_allclose(periodic.nodes, [-1.0, -0.5, 0.0, 0.5])

    interior = Grid(0.0, 1.0, 3, 'interior')
    assert interior.h == pytest.approx(0.25)
    np.testing.assert_allclose(interior.nodes, [0.25, 0.5, 0.75])


def test_grid_rejects_bad_input():
    with pytest.raises(MapTestError):
        Grid(0.0, 1.0, 1, 'interior')
    with pytest.raises(MapTestError):
        Grid(1.0, 0.0, 8, 'interior')
    with pytest.raises(MapTestError):
        Grid(0.0, 1.0, 8, 'staggered')


def test_grid_function_is_read_only():
    f = Grid(0.0, 1.0, 4, 'interior').function([1.0, 2.0, 3.0, 4.0])
    with pytest.raises(ValueError):
        f.values[0] = 5.0


def test_inner_product_is_h_weighted():
    grid = Grid(0.0, 1.0, 4, 'interior')
    f = grid.function([1.0, 2.0, 3.0, 4.0])
    assert f.inner(f) == pytest.approx(grid.h * 30.0)
    assert f.norm() == pytest.approx(math.sqrt(grid.h * 30.0))
    assert f.euclidean_inner(f) == pytest.approx(30.0)


def test_dimension_mismatch():
    f = Grid(0.0, 1.0, 4, 'interior').zeros()
    g = Grid(0.0, 1.0, 5, 'interior').zeros()
    with pytest.raises(DimensionMismatchError) as excinfo:
        f.inner(g)
    assert excinfo.value.expected == 4
    assert excinfo.value.actual == 5
    with pytest.raises(DimensionMismatchError):
        sine_op(8).apply(g)


def test_periodic_basis_needs_even_n():
    grid = Grid(-1.0, 1.0, 5, 'cell_centered_periodic')
    with pytest.raises(MapTestError):
        SpectralOperator(grid, 'periodic_fourier', np.ones(5))


def test_operator_norm_is_max_singular_value():
    op = dense_operator([0.3, 0.9, 0.1])
    assert op.operator_norm == 0.9


@pytest.mark.parametrize('make_op', ALL_OPS)
def test_apply_zero_gives_zero(make_op):
    op = make_op()
    assert not np.any(op.apply(op.grid.zeros()).values)


@pytest.mark.parametrize('make_op', ALL_OPS)
def test_forward_inverse_round_trip(make_op, rng):
    op = make_op()
    f = op.grid.function(rng.standard_normal(op.n))
    np.testing.assert_allclose(op.inverse(op.forward(f)).values, f.values, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize('make_op', ALL_OPS)
def test_parseval(make_op, rng):
    op = make_op()
    f = op.grid.function(rng.standard_normal(op.n))
    assert np.linalg.norm(op.forward(f)) == pytest.approx(f.norm(), rel=1e-12)


@pytest.mark.parametrize('make_op', ALL_OPS)
def test_adjointness(make_op, rng):
    op = make_op()
    for _ in range(100):
        f = op.grid.function(rng.standard_normal(op.n))
        g = op.grid.function(rng.standard_normal(op.n))
        gap = abs(op.apply(f).inner(g) - f.inner(op.adjoint_apply(g)))
        assert gap <= 1e-12 * f.norm() * g.norm()


def test_identity_multipliers():
    grid = Grid(0.0, 1.0, 16, 'interior')
    op = SpectralOperator(grid, 'odd_sine', np.ones(16))
    f = grid.function(np.sin(3 * grid.nodes) + grid.nodes ** 2)
    np.testing.assert_allclose(op.apply(f).values, f.values, rtol=1e-12, atol=1e-12)


def test_first_sine_mode_is_kept():
    op = sine_op(8)
    f = op.grid.function(np.sin(math.pi * op.grid.nodes))
    np.testing.assert_allclose(op.apply(f).values, f.values, atol=1e-12)


def test_sine_transform_matches_dense_matrix(rng):
    n = 8
    fast = sine_op(n)
    dense = SpectralOperator(fast.grid, 'dense', fast.singular_values, basis_matrix=sine_basis_matrix(n))
    f = fast.grid.function(rng.standard_normal(n))
    np.testing.assert_allclose(fast.apply(f).values, dense.apply(f).values, atol=1e-12)


def test_power_matches_explicit_matrix(rng):
    tau = np.array([1.0, 0.5, 0.25, 0.125])
    op = dense_operator(tau)
    q = op.basis_matrix
    f = op.grid.function(rng.standard_normal(4))
    expected = q @ np.diag(tau ** 2) @ q.T @ f.values
    np.testing.assert_allclose(tstar_t_power(op, 1.0, f).values, expected, atol=1e-12)


def test_power_zero_is_identity(rng):
    op = periodic_op()
    f = op.grid.function(rng.standard_normal(op.n))
    np.testing.assert_allclose(tstar_t_power(op, 0.0, f).values, f.values, atol=1e-12)


def test_half_powers_invert_each_other(rng):
    op = sine_op()
    f = op.grid.function(rng.standard_normal(op.n))
    back = tstar_t_power(op, -0.5, tstar_t_power(op, 0.5, f))
    np.testing.assert_allclose(back.values, f.values, rtol=1e-10, atol=1e-10)


def test_power_semigroup(rng):
    op = periodic_op()
    f = op.grid.function(rng.standard_normal(op.n))
    composed = tstar_t_power(op, 0.3, tstar_t_power(op, 0.2, f))
    direct = tstar_t_power(op, 0.5, f)
    np.testing.assert_allclose(composed.values, direct.values, rtol=1e-10, atol=1e-12)


def test_negative_power_refuses_null_mode_mass():
    op = dense_operator([1.0, 0.0, 0.5])
    f = op.basis_vector(1)
    with pytest.raises(NullModeDivisionError):
        tstar_t_power(op, -0.5, f)
    # no mass on the null mode: fine
    g = op.basis_vector(0) + op.basis_vector(2)
    assert tstar_t_power(op, -0.5, g).norm() == pytest.approx(math.sqrt(1.0 + 4.0))


def test_pseudo_inverse_single_mode():
    op = dense_operator([0.5, 0.25, 0.1])
    phi = op.basis_vector(0) * 0.5
    probe = pseudo_inverse_adjoint_solve(op, phi)
    np.testing.assert_allclose(probe.values, op.basis_vector(0).values, atol=1e-12)


def test_pseudo_inverse_of_identity(rng):
    op = dense_operator(np.ones(4))
    phi = op.grid.function(rng.standard_normal(4))
    np.testing.assert_allclose(pseudo_inverse_adjoint_solve(op, phi).values, phi.values, atol=1e-12)


def test_pseudo_inverse_cutoff():
    op = dense_operator([1.0, 1e-6])
    phi = op.basis_vector(0) + op.basis_vector(1)
    truncated = pseudo_inverse_adjoint_solve(op, phi, rel_cutoff=1e-3)
    np.testing.assert_allclose(truncated.values, op.basis_vector(0).values, atol=1e-12)
    with pytest.raises(EmptySpectrumError):
        pseudo_inverse_adjoint_solve(dense_operator([0.0, 0.0]), phi)


def test_normal_distribution_values():
    assert normal_cdf(0.0) == 0.5
    assert normal_quantile(0.5) == pytest.approx(0.0, abs=1e-15)
    assert normal_quantile(0.1) == pytest.approx(-1.2815515655, abs=1e-10)
    assert NormalDist.cdf(NormalDist.ppf(0.975)) == pytest.approx(0.975, rel=1e-14)
    assert NormalDist.pdf(0.0) == pytest.approx(1.0 / math.sqrt(2.0 * math.pi))


def test_normal_cdf_tail_has_no_cancellation():
    assert normal_cdf(-30.0) > 0.0
    assert normal_cdf(-30.0) == pytest.approx(4.906713927148187e-198, rel=1e-10)


@pytest.mark.parametrize('p', [0.0, 1.0, -0.1, float('nan')])
def test_quantile_outside_unit_interval(p):
    with pytest.raises(InfiniteQuantileError):
        normal_quantile(p)


def test_vectorized_normal_functions():
    x = np.array([-1.0, 0.0, 1.0])
    np.testing.assert_allclose(normal_cdf(x) + normal_cdf(-x), 1.0, rtol=1e-15)
    np.testing.assert_allclose(normal_quantile(normal_cdf(x)), x, atol=1e-12)
