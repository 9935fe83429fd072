"""
The three shipped test problems: periodic deconvolution, differentiation (second
antiderivative) and the backward heat equation.

Each scenario bundles the forward operator (normalized to norm 1), the feature phi,
the truth u_dagger and the source-condition parameters (nu, rho) plus the prior
exponent mu. Parameter values come from shared.constants.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from shared.constants import (
    DEFAULT_N,
    DEFAULT_NU,
    FEATURE_LENGTH,
    HEAT_T0,
    KERNEL_WIDTH,
    PERIOD,
    PROBLEM_DECONVOLUTION,
    PROBLEM_DEFAULTS,
    PROBLEM_DIFFERENTIATION,
    PROBLEM_HEAT,
    PROBLEMS,
    TRUTH_OFFSET_FRACTION,
)
from shared.errors import MapTestError
from shared.spectral_core import Grid, GridFunction, SpectralOperator, dense_operator, tstar_t_power

logger = logging.getLogger(__name__)

CUSTOM = 'custom'


@dataclass(frozen=True, eq=False)
class Scenario:
    """One test problem: operator, feature, truth and source parameters"""
    name: str
    op: SpectralOperator
    phi: GridFunction
    u_dagger: GridFunction
    rho: float
    nu: float = DEFAULT_NU
    mu: float = 1.0
    beta: float = 1.0
    c: float = 0.0
    l: float = FEATURE_LENGTH
    lambda_off: Optional[float] = None
    delta: Optional[float] = None
    t0: float = HEAT_T0
    # w with u_dagger = (T*T)^(nu/2) w, when the truth is built from a source
    source: Optional[GridFunction] = None

    def __post_init__(self):
        if self.name not in PROBLEMS and self.name != CUSTOM:
            raise MapTestError(f"unknown scenario '{self.name}', expected one of {PROBLEMS}")
        phi_norm = self.phi.norm()
        if abs(phi_norm - 1.0) > 1e-10:
            raise MapTestError(f"feature must have unit norm, got {phi_norm!r}")
        if self.u_dagger.grid.n != self.op.n:
            raise MapTestError("truth and operator live on different grids")

    @property
    def grid(self) -> Grid:
        return self.op.grid

    @property
    def feature_value(self) -> float:
        """<phi, u_dagger>"""
        return self.phi.inner(self.u_dagger)

    @property
    def xi(self) -> float:
        """Normalized feature size <u_dagger, phi> / ||phi||"""
        return self.feature_value / self.phi.norm()


def build_grid(name: str, n: int = DEFAULT_N) -> Grid:
    if name not in PROBLEM_DEFAULTS:
        raise MapTestError(f"unknown problem '{name}', expected one of {PROBLEMS}")
    a, b = PROBLEM_DEFAULTS[name]['domain']
    return Grid(a, b, n, PROBLEM_DEFAULTS[name]['node_rule'])


def build_deconvolution(n: int = DEFAULT_N) -> SpectralOperator:
    """Periodic convolution on [-1, 1] with (F h)(xi) = (1 + 0.06^2 xi^2)^-2"""
    if n % 2:
        raise MapTestError(f"deconvolution needs an even N, got {n}")
    grid = build_grid(PROBLEM_DECONVOLUTION, n)
    k = np.arange(-n // 2, n // 2)
    multipliers = (1.0 + KERNEL_WIDTH ** 2 * (k / PERIOD) ** 2) ** -2
    return SpectralOperator(grid, 'periodic_fourier', multipliers, 1.0)


def build_differentiation(n: int = DEFAULT_N) -> SpectralOperator:
    """Second antiderivative with zero boundary values; raw multipliers (pi k)^-2"""
    grid = build_grid(PROBLEM_DIFFERENTIATION, n)
    k = np.arange(1, n + 1, dtype=float)
    return SpectralOperator(grid, 'odd_sine', k ** -2, math.pi ** -2)


def build_heat(n: int = DEFAULT_N, t0: float = HEAT_T0) -> SpectralOperator:
    """Heat semigroup at time t0; raw multipliers exp(-pi^2 t0 k^2)"""
    if not t0 > 0:
        raise MapTestError(f"heat time t0 must be positive, got {t0}")
    grid = build_grid(PROBLEM_HEAT, n)
    k = np.arange(1, n + 1, dtype=float)
    with np.errstate(under='ignore'):
        tau = np.exp(-math.pi ** 2 * t0 * (k ** 2 - 1.0))
    return SpectralOperator(grid, 'odd_sine', tau, math.exp(-math.pi ** 2 * t0))


def build_operator(name: str, n: int = DEFAULT_N, t0: float = HEAT_T0) -> SpectralOperator:
    if name == PROBLEM_DECONVOLUTION:
        return build_deconvolution(n)
    if name == PROBLEM_DIFFERENTIATION:
        return build_differentiation(n)
    if name == PROBLEM_HEAT:
        return build_heat(n, t0)
    raise MapTestError(f"unknown problem '{name}', expected one of {PROBLEMS}")


def second_antiderivative_kernel(grid: Grid) -> np.ndarray:
    """
    Quadrature matrix of the Green's function min{x(1-y), (1-x)y} on (0, 1),
    scaled by 1/pi^-2 to match the normalized differentiation operator.
    """
    x = grid.nodes
    xi, xj = np.meshgrid(x, x, indexing='ij')
    kernel = np.minimum(xi * (1.0 - xj), (1.0 - xi) * xj)
    return grid.h * kernel / math.pi ** -2


def _check_interval(grid: Grid, start: float, end: float, what: str):
    if start < grid.a or end > grid.b:
        raise MapTestError(
            f"{what} interval [{start}, {end}] lies outside the grid domain [{grid.a}, {grid.b}]"
        )


def beta_kernel(grid: Grid, c: float, l: float, shape: float) -> GridFunction:
    """
    Symmetric beta kernel on [c, c+l], normalized to unit discrete norm.

    Values are proportional to s^(shape-1) (1-s)^(shape-1) with s = (x-c)/l.
    shape = 1 gives the normalized indicator of the interval.
    """
    if not shape > 0:
        raise MapTestError(f"beta kernel shape must be positive, got {shape}")
    if not l > 0:
        raise MapTestError(f"beta kernel length must be positive, got {l}")
    _check_interval(grid, c, c + l, 'beta kernel')

    s = (grid.nodes - c) / l
    if shape < 1:
        inside = (s > 0) & (s < 1)
    else:
        inside = (s >= 0) & (s <= 1)
    values = np.zeros(grid.n)
    values[inside] = (s[inside] * (1.0 - s[inside])) ** (shape - 1.0)

    kernel = GridFunction(grid, values)
    norm = kernel.norm()
    if norm == 0:
        raise MapTestError(f"no grid node inside the kernel support [{c}, {c + l}]")
    return kernel / norm


def truth_offset(grid: Grid, l: float = FEATURE_LENGTH) -> float:
    """lambda = l/3 rounded up to a whole number of grid steps"""
    return math.ceil(TRUTH_OFFSET_FRACTION * l / grid.h - 1e-9) * grid.h


def heat_source(grid: Grid, c: float, l: float = FEATURE_LENGTH,
                lambda_off: Optional[float] = None) -> GridFunction:
    """+1 on [c+lambda, c+lambda+l), -1 on the two flanks of length l/2, 0 elsewhere"""
    if lambda_off is None:
        lambda_off = truth_offset(grid, l)
    start = c + lambda_off
    _check_interval(grid, start - l / 2, start + 3 * l / 2, 'heat source')
    x = grid.nodes
    values = np.zeros(grid.n)
    values[(x >= start - l / 2) & (x < start + 3 * l / 2)] = -1.0
    values[(x >= start) & (x < start + l)] = 1.0
    return GridFunction(grid, values)


def build_truth_with_source(name: str, grid: Grid, op: SpectralOperator,
                            nu: float = DEFAULT_NU) -> Tuple[GridFunction, Optional[GridFunction]]:
    """Truth u_dagger and, for the heat problem, its source w (scaled alongside)"""
    defaults = PROBLEM_DEFAULTS.get(name)
    if defaults is None:
        raise MapTestError(f"unknown problem '{name}', expected one of {PROBLEMS}")
    c = defaults['c']
    if name != PROBLEM_HEAT:
        truth = beta_kernel(grid, c + truth_offset(grid), FEATURE_LENGTH, defaults['delta'])
        return truth, None

    source = heat_source(grid, c)
    truth = tstar_t_power(op, nu / 2.0, source)
    scale = 1.0 / truth.norm()
    return truth * scale, source * scale


def build_truth(name: str, grid: Grid, op: SpectralOperator, nu: float = DEFAULT_NU) -> GridFunction:
    return build_truth_with_source(name, grid, op, nu)[0]


def compute_rho(scn: Scenario, u: Optional[GridFunction] = None) -> float:
    """
    Source radius ||(T*T)^(-nu/2) u|| (u defaults to the scenario truth).

    When the scenario carries its source w, u_dagger = (T*T)^(nu/2) w holds by
    construction and rho = ||w||.
    """
    if u is None:
        if scn.source is not None:
            return scn.source.norm()
        u = scn.u_dagger
    return tstar_t_power(scn.op, -scn.nu / 2.0, u).norm()


def build_scenario(name: str, n: int = DEFAULT_N, beta: Optional[float] = None,
                   mu: Optional[float] = None, nu: float = DEFAULT_NU,
                   t0: float = HEAT_T0) -> Scenario:
    """Shipped scenario with the problem defaults for anything not given"""
    defaults = PROBLEM_DEFAULTS.get(name)
    if defaults is None:
        raise MapTestError(f"unknown problem '{name}', expected one of {PROBLEMS}")
    beta = defaults['beta'] if beta is None else float(beta)
    mu = defaults['mu'] if mu is None else float(mu)

    op = build_operator(name, n, t0)
    phi = beta_kernel(op.grid, defaults['c'], FEATURE_LENGTH, beta)
    truth, source = build_truth_with_source(name, op.grid, op, nu)
    scn = Scenario(
        name=name,
        op=op,
        phi=phi,
        u_dagger=truth,
        rho=math.nan,
        nu=nu,
        mu=mu,
        beta=beta,
        c=defaults['c'],
        delta=defaults['delta'],
        lambda_off=truth_offset(op.grid),
        t0=t0,
        source=source,
    )
    scn = replace(scn, rho=compute_rho(scn))
    logger.debug("built %s scenario: N=%d beta=%s mu=%s rho=%.6g", name, n, beta, mu, scn.rho)
    return scn


def custom_scenario(op: SpectralOperator, phi: GridFunction, u_dagger: GridFunction,
                    nu: float = DEFAULT_NU, mu: float = 1.0,
                    rho: Optional[float] = None) -> Scenario:
    """Scenario from explicit parts (oracle checks); phi is normalized here"""
    phi = phi / phi.norm()
    if rho is None:
        rho = tstar_t_power(op, -nu / 2.0, u_dagger).norm()
    return Scenario(name=CUSTOM, op=op, phi=phi, u_dagger=u_dagger, rho=rho, nu=nu, mu=mu)


def dense_scenario(singular_values, phi_coefficients, source_coefficients,
                   nu: float = DEFAULT_NU, mu: float = 1.0) -> Scenario:
    """
    Small scenario on a dense sine basis, specified by mode coefficients:
    u_dagger = (T*T)^(nu/2) w with w given by source_coefficients, rho = ||w||.
    """
    op = dense_operator(singular_values)
    phi = op.inverse(np.asarray(phi_coefficients, dtype=float))
    if phi.norm() == 0:
        raise MapTestError("feature coefficients are all zero")
    source = op.inverse(np.asarray(source_coefficients, dtype=float))
    truth = tstar_t_power(op, nu / 2.0, source)
    return Scenario(name=CUSTOM, op=op, phi=phi / phi.norm(), u_dagger=truth, rho=source.norm(),
                    nu=nu, mu=mu, source=source)
