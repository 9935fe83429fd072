"""
Choice of the prior scale gamma for C0 = gamma^2 (T*T)^mu.

    a priori      closed form from the expected feature size xi
    oracle        minimize the true J over gamma (needs u_dagger)
    a posteriori  minimize the empirical J plus omega (ln gamma)^2

Both searches run on log10(gamma): a coarse grid, then golden-section refinement
in the bracket around the best grid point. The module also carries the power lower
bounds for the a priori choice and the convergence check for optimally chosen
diagonal priors.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
from scipy import optimize

from shared.constants import (
    GAMMA_COARSE_POINTS,
    GAMMA_LOG10_MAX,
    GAMMA_LOG10_MIN,
    GAMMA_REFINE_TOL,
)
from shared.errors import BoundInapplicableError, DetectabilityError, GammaSearchError, MapTestError
from shared.forward_problems import Scenario
from shared.map_testing import (
    PriorSpec,
    j_from_coefficients,
    map_probe,
    power_law_variances,
    probe_gain,
    residual,
)
from shared.spectral_core import GridFunction, normal_cdf, normal_quantile, tstar_t_power

logger = logging.getLogger(__name__)

LN10 = math.log(10.0)
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
INV_PHI_SQ = (3.0 - math.sqrt(5.0)) / 2.0


@dataclass(frozen=True)
class GammaSearchConfig:
    log10_min: float = GAMMA_LOG10_MIN
    log10_max: float = GAMMA_LOG10_MAX
    coarse_points: int = GAMMA_COARSE_POINTS
    refine_tol: float = GAMMA_REFINE_TOL
    omega: float = 0.0

    def __post_init__(self):
        if not self.log10_min < self.log10_max:
            raise MapTestError(
                f"gamma search needs log10_min < log10_max, got {self.log10_min} and {self.log10_max}"
            )
        if int(self.coarse_points) != self.coarse_points or self.coarse_points < 3:
            raise MapTestError(f"gamma search needs at least 3 coarse points, got {self.coarse_points}")
        if not self.refine_tol > 0:
            raise MapTestError(f"refine_tol must be positive, got {self.refine_tol}")
        if not self.omega >= 0:
            raise MapTestError(f"penalty weight omega must be nonnegative, got {self.omega}")

    def coarse_grid(self) -> np.ndarray:
        return np.linspace(self.log10_min, self.log10_max, int(self.coarse_points))


@dataclass(frozen=True)
class BoundParams:
    """Inputs of the a priori power bounds (gamma = gamma0 * sigma)"""
    xi: float = 1.0
    gamma0: float = 1.0
    nu: float = 1.0
    mu: float = 1.0
    rho: float = 1.0
    sigma: float = 1.0
    alpha: float = 0.1

    def __post_init__(self):
        if not (self.xi > 0 and self.gamma0 > 0 and self.sigma > 0 and self.nu > 0):
            raise MapTestError("bound parameters xi, gamma0, sigma and nu must be positive")
        if not self.rho >= 0:
            raise MapTestError(f"source radius rho must be nonnegative, got {self.rho}")
        if not 0.0 < self.alpha < 1.0:
            raise MapTestError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.mu > self.nu / 2.0 - 1.0:
            raise BoundInapplicableError(
                f"bound inapplicable: needs mu > nu/2 - 1, got mu={self.mu}, nu={self.nu}"
            )


@dataclass(frozen=True)
class ResidualBounds:
    lhs1: float
    rhs1: float
    lhs2: float
    rhs2: float

    def holds(self, rel_tol: float = 1e-10) -> bool:
        return self.lhs1 <= self.rhs1 * (1 + rel_tol) and self.lhs2 <= self.rhs2 * (1 + rel_tol)


@dataclass(frozen=True)
class ConvergenceResult:
    j_values: np.ndarray
    j_optimal: float
    probe_optimal: GridFunction
    variances: np.ndarray
    never_above_first: bool


class ProbeFamily:
    """Power-law MAP probes of one scenario, evaluated for many gammas at once"""

    def __init__(self, scn: Scenario, mu: Optional[float] = None):
        self.scn = scn
        self.mu = scn.mu if mu is None else float(mu)
        op = scn.op
        self.tau = op.singular_values
        self.phi_c = op.forward(scn.phi)
        self.phi_abs2 = np.abs(self.phi_c) ** 2
        with np.errstate(under='ignore'):
            self.weight = self.tau ** (2.0 * scn.nu)
        self.truth_pairing = self.pairing(self.tau * op.forward(scn.u_dagger))

    def pairing(self, data_c: np.ndarray) -> np.ndarray:
        """Re(data_k conj(phi_k)); <data, Phi> = sum_k gain_k * pairing_k"""
        return np.real(data_c * np.conj(self.phi_c))

    def gains(self, log10_gamma, sigma: float) -> np.ndarray:
        gamma = 10.0 ** np.atleast_1d(np.asarray(log10_gamma, dtype=float))
        return probe_gain(self.tau, power_law_variances(self.tau, gamma, self.mu), sigma)

    def j_values(self, log10_gamma, sigma: float, pairing: np.ndarray) -> np.ndarray:
        """J of the probes for each log10 gamma; rows are rescaled by their largest gain"""
        gains = self.gains(log10_gamma, sigma)
        scale = gains.max(axis=1, keepdims=True)
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            g = gains / scale
            resid = (self.tau * g - 1.0 / scale) ** 2
            source = np.sqrt(resid @ (self.weight * self.phi_abs2))
            norm = np.sqrt((g ** 2) @ self.phi_abs2)
            return (self.scn.rho * source - g @ pairing) / norm

    def oracle_objective(self, sigma: float) -> Callable[[np.ndarray], np.ndarray]:
        return lambda x: self.j_values(x, sigma, self.truth_pairing)

    def empirical_objective(self, data_c: np.ndarray, sigma: float,
                            omega: float) -> Callable[[np.ndarray], np.ndarray]:
        pairing = self.pairing(data_c)

        def objective(x):
            x = np.atleast_1d(np.asarray(x, dtype=float))
            return self.j_values(x, sigma, pairing) + omega * (x * LN10) ** 2
        return objective

    def probe_coefficients(self, gamma: float, sigma: float) -> np.ndarray:
        return self.gains(math.log10(gamma), sigma)[0] * self.phi_c

    def probe(self, gamma: float, sigma: float) -> GridFunction:
        return map_probe(self.scn, PriorSpec.power_law(gamma, self.mu), sigma)


def golden_section(objective: Callable[[float], float], a: float, b: float, tol: float) -> float:
    """Minimizer of a unimodal objective on [a, b] to within tol"""
    dist = b - a
    if dist <= tol:
        return (a + b) / 2

    n = int(math.ceil(math.log(tol / dist) / math.log(INV_PHI)))
    c = a + INV_PHI_SQ * dist
    d = a + INV_PHI * dist
    yc = objective(c)
    yd = objective(d)

    for _ in range(n - 1):
        if yc < yd:
            b = d
            d = c
            yd = yc
            dist = INV_PHI * dist
            c = a + INV_PHI_SQ * dist
            yc = objective(c)
        else:
            a = c
            c = d
            yc = yd
            dist = INV_PHI * dist
            d = a + INV_PHI * dist
            yd = objective(d)

    return (a + b) / 2 if yc >= yd else (a + d) / 2


def search_log10_gamma(objective: Callable[[np.ndarray], np.ndarray], cfg: GammaSearchConfig) -> float:
    """Coarse grid plus golden-section refinement; never worse than the best grid point"""
    grid = cfg.coarse_grid()
    values = np.asarray(objective(grid), dtype=float)
    bad = ~np.isfinite(values)
    if np.any(bad):
        raise GammaSearchError("non-finite objective on the coarse grid", gamma=float(10.0 ** grid[bad][0]))

    best = int(np.argmin(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid.size - 1)]

    def scalar(x: float) -> float:
        value = float(np.asarray(objective(np.array([x])))[0])
        if not math.isfinite(value):
            raise GammaSearchError("non-finite objective during refinement", gamma=10.0 ** x)
        return value

    refined = golden_section(scalar, lo, hi, cfg.refine_tol)
    if scalar(refined) <= values[best]:
        return refined
    return float(grid[best])


def a_priori_gamma(xi: float, rho: float, nu: float, mu: float, sigma: float) -> float:
    """(xi / (2 rho (nu+1)))^(-(mu+1)/nu) sigma"""
    for name, value in (('xi', xi), ('rho', rho), ('nu', nu), ('mu', mu), ('sigma', sigma)):
        if not value > 0:
            raise MapTestError(f"a priori gamma needs positive {name}, got {value!r}")
    return (xi / (2.0 * rho * (nu + 1.0))) ** (-(mu + 1.0) / nu) * sigma


def oracle_gamma(scn: Scenario, sigma: float, cfg: GammaSearchConfig,
                 family: Optional[ProbeFamily] = None) -> float:
    """gamma minimizing J_true(Phi_MAP(gamma^2 (T*T)^mu))"""
    family = family or ProbeFamily(scn)
    return 10.0 ** search_log10_gamma(family.oracle_objective(sigma), cfg)


def a_posteriori_gamma(scn: Scenario, y: GridFunction, sigma: float, cfg: GammaSearchConfig,
                       family: Optional[ProbeFamily] = None) -> float:
    """gamma minimizing J_y(Phi_MAP(gamma^2 (T*T)^mu)) + omega (ln gamma)^2"""
    family = family or ProbeFamily(scn)
    return a_posteriori_gamma_from_coefficients(family, scn.op.forward(y), sigma, cfg)


def a_posteriori_gamma_from_coefficients(family: ProbeFamily, data_c: np.ndarray, sigma: float,
                                         cfg: GammaSearchConfig) -> float:
    objective = family.empirical_objective(data_c, sigma, cfg.omega)
    return 10.0 ** search_log10_gamma(objective, cfg)


def power_lower_bound_gamma0(params: BoundParams, feature_size: float) -> float:
    """Lower bound on the MAP power for gamma = gamma0 sigma"""
    p = params
    exponent = 1.0 / (p.mu + 1.0)
    shift = (feature_size - 2.0 * p.rho * p.gamma0 ** (-p.nu * exponent)) / (p.sigma * p.gamma0 ** exponent)
    return normal_cdf(normal_quantile(p.alpha) + shift)


def power_lower_bound_xi(params: BoundParams, feature_size: float) -> float:
    """Lower bound on the MAP power for the a priori gamma built from xi"""
    p = params
    ratio = p.xi / (p.nu + 1.0)
    if p.rho == 0:
        raise BoundInapplicableError("bound inapplicable: the xi bound needs rho > 0")
    shift = (feature_size - ratio) * ratio ** (1.0 / p.nu) / (p.sigma * (2.0 * p.rho) ** (1.0 / p.nu))
    return normal_cdf(normal_quantile(p.alpha) + shift)


def residual_bound_check(scn: Scenario, gamma0: float, mu: float, sigma: float) -> ResidualBounds:
    """Both sides of the residual and norm estimates for Phi_MAP with gamma = gamma0 sigma"""
    if not mu > scn.nu / 2.0 - 1.0:
        raise BoundInapplicableError(f"bound inapplicable: needs mu > nu/2 - 1, got mu={mu}, nu={scn.nu}")
    probe = map_probe(scn, PriorSpec.power_law(gamma0 * sigma, mu), sigma)
    phi_norm = scn.phi.norm()
    lhs1 = tstar_t_power(scn.op, scn.nu / 2.0, residual(scn, probe)).norm()
    rhs1 = gamma0 ** (-scn.nu / (mu + 1.0)) * phi_norm
    return ResidualBounds(lhs1, rhs1, probe.norm(), gamma0 ** (1.0 / (mu + 1.0)) * phi_norm)


def _minimize_j(scn: Scenario, restarts: int, seed: int) -> np.ndarray:
    """Multi-start quasi-Newton minimization of J_true over nonzero coefficient vectors"""
    op = scn.op
    data_c = op.singular_values * op.forward(scn.u_dagger)

    def objective(x: np.ndarray) -> float:
        if not np.any(x):
            return math.inf
        return j_from_coefficients(scn, x, data_c)

    rng = np.random.default_rng(seed)
    best_x, best_j = None, math.inf
    for _ in range(restarts):
        start = rng.standard_normal(op.n)
        start *= 10.0 ** rng.uniform(-2.0, 2.0) / np.linalg.norm(start)
        result = optimize.minimize(objective, start, method='BFGS')
        if math.isfinite(result.fun) and result.fun < best_j:
            best_x, best_j = result.x, float(result.fun)

    if best_x is None:
        raise DetectabilityError("alternative not detectable: J minimization produced no finite value")
    return best_x


def optimal_prior_variances(tau: np.ndarray, phi_c: np.ndarray, probe_c: np.ndarray,
                            sigma: float, n: int, zero_tol: float = 1e-12) -> np.ndarray:
    """
    Mode variances rho_{k,n} whose MAP probe matches probe_c on modes k <= n.

    k <= n with both T*Phi and phi - T*Phi nonzero: sigma^2 t_k / (tau_k^2 d_k)
    k <= n with phi - T*Phi zero: sigma^2 n tau_k^-2
    otherwise (and where the first case is not positive): sigma^2 2^-k
    """
    k = np.arange(1, tau.size + 1)
    t = np.real(tau * probe_c * np.conj(phi_c)) / np.maximum(np.abs(phi_c), 1e-300)
    d = np.abs(phi_c) - t
    scale = float(np.max(np.abs(phi_c)))
    variances = sigma ** 2 * 2.0 ** (-k.astype(float))

    head = (k <= n) & (tau > 0)
    exact = head & (np.abs(d) <= zero_tol * scale)
    ratio = head & ~exact & (np.abs(t) > zero_tol * scale)
    with np.errstate(divide='ignore', invalid='ignore'):
        candidate = sigma ** 2 * t / (tau ** 2 * d)
    ratio &= candidate > 0
    variances[ratio] = candidate[ratio]
    variances[exact] = sigma ** 2 * n / tau[exact] ** 2
    return variances


def inf_prior_convergence_check(scn: Scenario, n_max: int, sigma: float = 0.1,
                                restarts: int = 200, seed: int = 0) -> ConvergenceResult:
    """
    J(Phi_MAP(C_{0,n})) for n = 1..n_max with the mode variances of
    optimal_prior_variances built from a numerically minimized J.
    """
    if scn.op.n > 16:
        raise MapTestError(f"convergence check is meant for small dense scenarios, got N={scn.op.n}")
    if n_max < 1:
        raise MapTestError(f"n_max must be at least 1, got {n_max}")

    op = scn.op
    tau = op.singular_values
    phi_c = op.forward(scn.phi)
    data_c = tau * op.forward(scn.u_dagger)

    optimum = _minimize_j(scn, restarts, seed)
    j_optimal = j_from_coefficients(scn, optimum, data_c)
    if not j_optimal < 0:
        raise DetectabilityError(f"alternative not detectable: minimal J is {j_optimal:.6g} >= 0")

    values: List[float] = []
    variances = None
    for n in range(1, n_max + 1):
        variances = optimal_prior_variances(tau, phi_c, optimum, sigma, n)
        probe_c = probe_gain(tau, variances, sigma) * phi_c
        values.append(j_from_coefficients(scn, probe_c, data_c))

    j_values = np.array(values)
    never_above = bool(np.all(j_values <= j_values[0] + 1e-9))
    logger.debug("convergence check: J(Phi_dagger)=%.6g, J(n_max)=%.6g", j_optimal, j_values[-1])
    return ConvergenceResult(j_values, j_optimal, op.inverse(optimum), variances, never_above)
