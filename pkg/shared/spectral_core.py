"""
Grids, grid functions and operators that are diagonal in a fast orthonormal basis.

Everything here is a pure function of its inputs. Grid functions and operators are
frozen after construction (their arrays are marked read-only), so they can be shared
between threads freely.

Coefficients are taken with respect to the h-weighted inner product
    <f, g> = h * sum_j f_j g_j
so a basis vector e_k has <e_k, e_k> = 1 and Parseval reads ||f||^2 = sum_k |c_k|^2.
"""
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import fft as sp_fft
from scipy import special

from shared.errors import (
    DimensionMismatchError,
    EmptySpectrumError,
    InfiniteQuantileError,
    MapTestError,
    NullModeDivisionError,
)

NODE_RULES = ('cell_centered_periodic', 'interior')
BASES = ('periodic_fourier', 'odd_sine', 'dense')

# Relative coefficient mass tolerated on null modes before a negative power refuses
NULL_MODE_TOL = 1e-10

SQRT2 = math.sqrt(2.0)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Grid:
    """
    Uniform grid on [a, b] with n nodes.

    cell_centered_periodic: h = (b-a)/n, nodes a + j h for j = 0..n-1 (b wraps onto a)
    interior: h = (b-a)/(n+1), nodes a + j h for j = 1..n
    """
    a: float
    b: float
    n: int
    node_rule: str = 'cell_centered_periodic'

    def __post_init__(self):
        if self.node_rule not in NODE_RULES:
            raise MapTestError(f"unknown node rule '{self.node_rule}', expected one of {NODE_RULES}")
        if int(self.n) != self.n or self.n < 2:
            raise MapTestError(f"grid needs an integer N >= 2, got {self.n}")
        if not self.b > self.a:
            raise MapTestError(f"grid needs a < b, got [{self.a}, {self.b}]")

    @property
    def h(self) -> float:
        if self.node_rule == 'interior':
            return (self.b - self.a) / (self.n + 1)
        return (self.b - self.a) / self.n

    @property
    def nodes(self) -> np.ndarray:
        if self.node_rule == 'interior':
            return self.a + self.h * np.arange(1, self.n + 1)
        return self.a + self.h * np.arange(self.n)

    def function(self, values) -> 'GridFunction':
        return GridFunction(self, values)

    def zeros(self) -> 'GridFunction':
        return GridFunction(self, np.zeros(self.n))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Node values of a function on a Grid"""
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.shape[0] != self.grid.n:
            raise DimensionMismatchError(self.grid.n, values.size)
        object.__setattr__(self, 'values', _frozen(values))

    def _check(self, other: 'GridFunction'):
        if other.grid.n != self.grid.n:
            raise DimensionMismatchError(self.grid.n, other.grid.n)

    def inner(self, other: 'GridFunction') -> float:
        self._check(other)
        return float(self.grid.h * np.dot(self.values, other.values))

    def norm(self) -> float:
        return math.sqrt(self.grid.h) * float(np.linalg.norm(self.values))

    def euclidean_inner(self, other: 'GridFunction') -> float:
        """Plain dot product of the node vectors (no quadrature weight)"""
        self._check(other)
        return float(np.dot(self.values, other.values))

    def with_values(self, values) -> 'GridFunction':
        return GridFunction(self.grid, values)

    def __add__(self, other: 'GridFunction') -> 'GridFunction':
        self._check(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: 'GridFunction') -> 'GridFunction':
        self._check(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar: float) -> 'GridFunction':
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> 'GridFunction':
        return self.with_values(self.values / float(scalar))

    def __neg__(self) -> 'GridFunction':
        return self.with_values(-self.values)


@dataclass(frozen=True, eq=False)
class SpectralOperator:
    """
    Linear operator diagonal in an orthonormal basis of the grid.

    periodic_fourier: complex exponentials, coefficients in k = -N/2, ..., N/2-1 order
    odd_sine: sqrt(2/L) sin(pi k (x-a)/L) on interior nodes, k = 1..N (type-I DST)
    dense: columns of an explicit Euclidean-orthonormal N x N matrix (test oracles)

    The operator is self-adjoint in the pairing e_k <-> f_k, so the singular values
    double as multipliers of T and T*.
    """
    grid: Grid
    basis: str
    singular_values: np.ndarray
    norm_factor: float = 1.0
    basis_matrix: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.basis not in BASES:
            raise MapTestError(f"unknown basis '{self.basis}', expected one of {BASES}")
        tau = np.array(self.singular_values, dtype=float)
        if tau.ndim != 1 or tau.shape[0] != self.grid.n:
            raise DimensionMismatchError(self.grid.n, tau.size, what="singular values")
        if not np.all(np.isfinite(tau)) or np.any(tau < 0):
            raise MapTestError("singular values must be finite and nonnegative")
        object.__setattr__(self, 'singular_values', _frozen(tau))

        if self.basis == 'dense':
            if self.basis_matrix is None:
                raise MapTestError("dense basis needs a basis_matrix")
            matrix = np.array(self.basis_matrix, dtype=float)
            if matrix.shape != (self.grid.n, self.grid.n):
                raise DimensionMismatchError(self.grid.n, matrix.shape[0], what="basis matrix")
            if not np.allclose(matrix.T @ matrix, np.eye(self.grid.n), atol=1e-10):
                raise MapTestError("dense basis matrix is not orthonormal")
            object.__setattr__(self, 'basis_matrix', _frozen(matrix))
        elif self.basis == 'periodic_fourier':
            if self.grid.n % 2:
                raise MapTestError(f"periodic_fourier needs an even N, got {self.grid.n}")
            if self.grid.node_rule != 'cell_centered_periodic':
                raise MapTestError("periodic_fourier needs a cell_centered_periodic grid")
        elif self.grid.node_rule != 'interior':
            raise MapTestError("odd_sine needs an interior grid")

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def operator_norm(self) -> float:
        return float(np.max(self.singular_values))

    @property
    def mode_numbers(self) -> np.ndarray:
        if self.basis == 'periodic_fourier':
            return np.arange(-self.n // 2, self.n // 2)
        return np.arange(1, self.n + 1)

    def _check(self, f: GridFunction):
        if f.grid.n != self.n:
            raise DimensionMismatchError(self.n, f.grid.n)

    def forward(self, f: GridFunction) -> np.ndarray:
        """Coefficients <f, e_k> (complex for the periodic basis)"""
        self._check(f)
        scale = math.sqrt(self.grid.h)
        if self.basis == 'periodic_fourier':
            return scale * sp_fft.fftshift(sp_fft.fft(f.values, norm='ortho'))
        if self.basis == 'odd_sine':
            return scale * sp_fft.dst(f.values, type=1, norm='ortho')
        return scale * (self.basis_matrix.T @ f.values)

    def inverse(self, coefficients: np.ndarray) -> GridFunction:
        """Grid function sum_k c_k e_k"""
        coefficients = np.asarray(coefficients)
        if coefficients.shape != (self.n,):
            raise DimensionMismatchError(self.n, coefficients.size, what="coefficient vector")
        scale = 1.0 / math.sqrt(self.grid.h)
        if self.basis == 'periodic_fourier':
            values = sp_fft.ifft(sp_fft.ifftshift(coefficients), norm='ortho').real
        elif self.basis == 'odd_sine':
            values = sp_fft.dst(coefficients.real, type=1, norm='ortho')
        else:
            values = self.basis_matrix @ coefficients.real
        return GridFunction(self.grid, scale * values)

    def basis_vector(self, index: int) -> GridFunction:
        """e_k for the mode at position `index` of the coefficient vector"""
        coefficients = np.zeros(self.n, dtype=complex if self.basis == 'periodic_fourier' else float)
        coefficients[index] = 1.0
        return self.inverse(coefficients)

    def apply(self, f: GridFunction) -> GridFunction:
        return self.inverse(self.singular_values * self.forward(f))

    def adjoint_apply(self, f: GridFunction) -> GridFunction:
        return self.inverse(np.conj(self.singular_values) * self.forward(f))


def sine_basis_matrix(n: int) -> np.ndarray:
    """Euclidean-orthonormal sine matrix; column k-1 samples sin(pi k j / (n+1))"""
    j = np.arange(1, n + 1)
    return math.sqrt(2.0 / (n + 1)) * np.sin(np.pi * np.outer(j, j) / (n + 1))


def dense_operator(singular_values, basis_matrix: Optional[np.ndarray] = None,
                   grid: Optional[Grid] = None) -> SpectralOperator:
    """Small explicit operator for oracle checks (sine basis on (0, 1) by default)"""
    tau = np.asarray(singular_values, dtype=float)
    if grid is None:
        grid = Grid(0.0, 1.0, tau.size, 'interior')
    if basis_matrix is None:
        basis_matrix = sine_basis_matrix(tau.size)
    return SpectralOperator(grid, 'dense', tau, 1.0, basis_matrix)


def apply(op: SpectralOperator, f: GridFunction) -> GridFunction:
    """T f"""
    return op.apply(f)


def adjoint_apply(op: SpectralOperator, f: GridFunction) -> GridFunction:
    """T* f"""
    return op.adjoint_apply(f)


def power_coefficients(tau: np.ndarray, coefficients: np.ndarray, s: float) -> np.ndarray:
    """Multiply mode coefficients by tau_k^(2s); null modes map to zero"""
    out = np.zeros_like(coefficients)
    if s == 0:
        out[:] = coefficients
        return out
    positive = tau > 0
    with np.errstate(over='ignore', under='ignore'):
        if s > 0:
            out[positive] = coefficients[positive] * tau[positive] ** (2.0 * s)
        else:
            out[positive] = coefficients[positive] / tau[positive] ** (-2.0 * s)
    out[coefficients == 0] = 0
    return out


def tstar_t_power(op: SpectralOperator, s: float, f: GridFunction) -> GridFunction:
    """(T*T)^s f"""
    coefficients = op.forward(f)
    if s < 0:
        null = op.singular_values == 0
        if np.any(null):
            mass = float(np.linalg.norm(coefficients[null]))
            total = float(np.linalg.norm(coefficients))
            if mass > NULL_MODE_TOL * total:
                raise NullModeDivisionError(mass, total)
    return op.inverse(power_coefficients(op.singular_values, coefficients, s))


def pseudo_inverse_adjoint_solve(op: SpectralOperator, phi: GridFunction,
                                 rel_cutoff: float = 0.0) -> GridFunction:
    """
    Minimum-norm Phi0 with T* Phi0 = phi on the retained modes.

    Modes with tau_k <= rel_cutoff * max(tau) (and all null modes) are dropped.
    rel_cutoff = 0 divides by every nonzero singular value.
    """
    if not 0.0 <= rel_cutoff < 1.0:
        raise MapTestError(f"rel_cutoff must lie in [0, 1), got {rel_cutoff}")
    tau = op.singular_values
    keep = (tau > 0) & (tau > rel_cutoff * op.operator_norm)
    if not np.any(keep):
        raise EmptySpectrumError(f"empty spectrum: no singular value above cutoff {rel_cutoff}")
    coefficients = op.forward(phi)
    out = np.zeros_like(coefficients)
    with np.errstate(over='ignore'):
        out[keep] = coefficients[keep] / tau[keep]
    return op.inverse(out)


# Standard normal distribution

Number = Union[float, np.ndarray]


def _as_output(values: np.ndarray) -> Number:
    return float(values) if np.ndim(values) == 0 else values


def normal_pdf(x: Number) -> Number:
    x = np.asarray(x, dtype=float)
    return _as_output(np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi))


def normal_cdf(x: Number) -> Number:
    """Q(x) through the complementary error function (no cancellation in the tails)"""
    x = np.asarray(x, dtype=float)
    return _as_output(0.5 * special.erfc(-x / SQRT2))


def normal_quantile(p: Number) -> Number:
    """Q^-1(p) for p in (0, 1), polished by one Newton step"""
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p <= 0.0) or np.any(p >= 1.0):
        raise InfiniteQuantileError(f"infinite quantile: p must lie in (0, 1), got {p}")
    z = special.ndtri(p)
    z = z - (0.5 * special.erfc(-z / SQRT2) - p) / (np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi))
    return _as_output(z)


class NormalDist:
    """Stateless standard normal distribution"""

    @staticmethod
    def cdf(x: Number) -> Number:
        return normal_cdf(x)

    @staticmethod
    def ppf(p: Number) -> Number:
        return normal_quantile(p)

    @staticmethod
    def pdf(x: Number) -> Number:
        return normal_pdf(x)
