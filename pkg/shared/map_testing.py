"""
Gaussian posterior algebra and the MAP test built from it.

Everything is computed mode-wise in the diagonal basis of the scenario operator:
with prior variances rho_k the MAP probe has coefficients

    tau_k rho_k / (tau_k^2 rho_k + sigma^2) * <phi, e_k>

and the test rejects the hypothesis <phi, u> <= 0 when <y, Phi> > c.
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from shared.errors import IdentifiabilityError, MapTestError, ZeroProbeError
from shared.forward_problems import Scenario
from shared.spectral_core import (
    GridFunction,
    SpectralOperator,
    normal_cdf,
    normal_quantile,
    power_coefficients,
    pseudo_inverse_adjoint_solve,
    tstar_t_power,
)

PRIOR_KINDS = ('power_law', 'diagonal')
PROVENANCES = ('a_priori', 'oracle', 'a_posteriori', 'unregularized', 'eigenvector_closed_form')

# Relative spread of tau_k^2 rho_k tolerated by the eigenvector diagnostic
EIGENVECTOR_TOL = 1e-8
# |<(T*T)^(nu/2) phi, T*Phi - phi>| relative to ||(T*T)^(nu/2) phi|| ||phi|| below which m0 is not identifiable
IDENTIFIABILITY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PriorSpec:
    """Gaussian prior N(m0, C0) diagonal in the operator basis"""
    kind: str = 'power_law'
    gamma: float = 1.0
    mu: float = 1.0
    m0: Optional[GridFunction] = None
    mode_variances: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise MapTestError(f"unknown prior kind '{self.kind}', expected one of {PRIOR_KINDS}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise MapTestError(f"prior scale gamma must be positive, got {self.gamma!r}")
        if self.kind == 'diagonal':
            if self.mode_variances is None:
                raise MapTestError("diagonal prior needs mode_variances")
            variances = np.array(self.mode_variances, dtype=float)
            if np.any(~np.isfinite(variances)) or np.any(variances <= 0):
                raise MapTestError("diagonal prior needs finite positive mode variances")
            variances.setflags(write=False)
            object.__setattr__(self, 'mode_variances', variances)

    @classmethod
    def power_law(cls, gamma: float, mu: float, m0: Optional[GridFunction] = None) -> 'PriorSpec':
        """C0 = gamma^2 (T*T)^mu"""
        return cls('power_law', float(gamma), float(mu), m0)

    @classmethod
    def diagonal(cls, variances, m0: Optional[GridFunction] = None) -> 'PriorSpec':
        return cls('diagonal', 1.0, 0.0, m0, np.asarray(variances, dtype=float))

    def variances(self, op: SpectralOperator) -> np.ndarray:
        """rho_k, one per mode of op"""
        if self.kind == 'diagonal':
            if self.mode_variances.shape != (op.n,):
                raise MapTestError(
                    f"prior has {self.mode_variances.size} mode variances, operator has {op.n} modes"
                )
            return self.mode_variances
        return power_law_variances(op.singular_values, self.gamma, self.mu)

    def mean(self, scn: Scenario) -> GridFunction:
        return scn.grid.zeros() if self.m0 is None else self.m0


def power_law_variances(tau: np.ndarray, gamma, mu: float) -> np.ndarray:
    """gamma^2 tau^(2 mu); gamma may be an array (one row per value)"""
    gamma = np.asarray(gamma, dtype=float)
    with np.errstate(under='ignore', over='ignore', divide='ignore'):
        base = np.where(tau > 0, tau, 1.0) ** (2.0 * mu)
    base = np.where(tau > 0, base, 0.0)
    if gamma.ndim == 0:
        return float(gamma) ** 2 * base
    return (gamma ** 2)[:, None] * base[None, :]


@dataclass(frozen=True)
class PosteriorSummary:
    mean: GridFunction
    feature_mean: float
    feature_var: float


@dataclass(frozen=True, eq=False)
class MapTest:
    """Linear test rejecting the hypothesis when <y, probe> > threshold"""
    probe: GridFunction
    threshold: float
    alpha: float
    gamma_used: float
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise MapTestError(f"unknown provenance '{self.provenance}', expected one of {PROVENANCES}")
        if not math.isfinite(self.threshold):
            raise MapTestError(f"test threshold must be finite, got {self.threshold!r}")

    def statistic(self, y: GridFunction) -> float:
        return self.probe.inner(y)

    def decide(self, y: GridFunction) -> bool:
        return self.statistic(y) > self.threshold

    def decide_batch(self, data: np.ndarray) -> np.ndarray:
        """Decisions for the rows of an (M, N) array of node values"""
        statistics = self.probe.grid.h * (np.asarray(data, dtype=float) @ self.probe.values)
        return statistics > self.threshold


def _check_sigma(sigma: float):
    if not sigma > 0:
        raise MapTestError(f"noise level sigma must be positive, got {sigma!r}")


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 1.0:
        raise MapTestError(f"alpha must lie in (0, 1), got {alpha!r}")


def _check_probe(probe: GridFunction):
    if not np.any(probe.values):
        raise ZeroProbeError("probe element is identically zero")


def probe_gain(tau: np.ndarray, variances: np.ndarray, sigma: float) -> np.ndarray:
    """tau_k rho_k / (tau_k^2 rho_k + sigma^2), broadcasting over rows of variances"""
    with np.errstate(under='ignore'):
        return tau * variances / (tau ** 2 * variances + sigma ** 2)


def map_probe(scn: Scenario, prior: PriorSpec, sigma: float) -> GridFunction:
    """Phi_MAP; does not depend on the prior mean"""
    _check_sigma(sigma)
    gain = probe_gain(scn.op.singular_values, prior.variances(scn.op), sigma)
    return scn.op.inverse(gain * scn.op.forward(scn.phi))


def posterior_summary(scn: Scenario, prior: PriorSpec, y: GridFunction, sigma: float) -> PosteriorSummary:
    _check_sigma(sigma)
    op = scn.op
    tau = op.singular_values
    variances = prior.variances(op)
    m0 = op.forward(prior.mean(scn))
    data = op.forward(y)
    phi = op.forward(scn.phi)

    gain = probe_gain(tau, variances, sigma)
    mean = op.inverse(m0 + gain * (data - tau * m0))
    posterior_var = sigma ** 2 * variances / (tau ** 2 * variances + sigma ** 2)
    feature_var = float(np.sum(posterior_var * np.abs(phi) ** 2))
    return PosteriorSummary(mean, scn.phi.inner(mean), max(feature_var, 0.0))


def posterior_alternative_probability(scn: Scenario, prior: PriorSpec, y: GridFunction,
                                      sigma: float) -> float:
    """P(<phi, U> > 0 | Y = y)"""
    summary = posterior_summary(scn, prior, y, sigma)
    if summary.feature_var == 0:
        return 1.0 if summary.feature_mean > 0 else 0.0
    return normal_cdf(summary.feature_mean / math.sqrt(summary.feature_var))


def map_decision(scn: Scenario, prior: PriorSpec, y: GridFunction, sigma: float) -> bool:
    """MAP rule: reject when the posterior mean of the feature is positive"""
    return posterior_summary(scn, prior, y, sigma).feature_mean > 0


def vprime_norm(scn: Scenario, f: GridFunction) -> float:
    """rho ||(T*T)^(nu/2) f||"""
    return scn.rho * tstar_t_power(scn.op, scn.nu / 2.0, f).norm()


def residual(scn: Scenario, probe: GridFunction) -> GridFunction:
    """T* Phi - phi"""
    return scn.op.adjoint_apply(probe) - scn.phi


def threshold_c(scn: Scenario, probe: GridFunction, sigma: float, alpha: float) -> float:
    """sigma ||Phi|| Q^-1(1 - alpha) + ||T* Phi - phi||_V'"""
    _check_probe(probe)
    _check_alpha(alpha)
    return sigma * probe.norm() * normal_quantile(1.0 - alpha) + vprime_norm(scn, residual(scn, probe))


def map_test(scn: Scenario, prior: PriorSpec, sigma: float, alpha: float,
             provenance: str = 'a_priori') -> MapTest:
    probe = map_probe(scn, prior, sigma)
    return MapTest(probe, threshold_c(scn, probe, sigma, alpha), alpha, prior.gamma, provenance)


def calibrate_m0(scn: Scenario, probe: GridFunction, sigma: float, alpha: float,
                 target: Optional[float] = None) -> GridFunction:
    """
    Prior mean m0 = w (T*T)^(nu/2) phi with <m0, T*Phi - phi> = target.

    target defaults to threshold_c(...); with this m0 the MAP rule coincides with the
    regularized test <y, Phi> > c.
    """
    if target is None:
        target = threshold_c(scn, probe, sigma, alpha)
    direction = tstar_t_power(scn.op, scn.nu / 2.0, scn.phi)
    resid = residual(scn, probe)
    pairing = direction.inner(resid)
    if abs(pairing) <= IDENTIFIABILITY_TOL * direction.norm() * scn.phi.norm():
        raise IdentifiabilityError("m0 not identifiable; use threshold directly")
    return direction * (target / pairing)


def exact_size(scn: Scenario, test: MapTest, u: GridFunction, sigma: float) -> float:
    """Q((<u, T*Phi> - c) / (sigma ||Phi||))"""
    _check_probe(test.probe)
    _check_sigma(sigma)
    shift = u.inner(scn.op.adjoint_apply(test.probe)) - test.threshold
    return normal_cdf(shift / (sigma * test.probe.norm()))


def _scaled_norm(values: np.ndarray) -> float:
    scale = float(np.max(np.abs(values)))
    if scale == 0 or not math.isfinite(scale):
        return scale
    return scale * float(np.linalg.norm(values / scale))


def j_from_coefficients(scn: Scenario, probe_c: np.ndarray, data_c: np.ndarray) -> float:
    """
    (||T*Phi - phi||_V' - <data, Phi>) / ||Phi|| from mode coefficients.

    Numerator and denominator are divided by max|Phi_k| first, so probes with
    enormous coefficients (unregularized, severely ill-posed) stay finite.
    """
    scale = float(np.max(np.abs(probe_c)))
    if scale == 0:
        raise ZeroProbeError("probe element is identically zero")
    tau = scn.op.singular_values
    phi_c = scn.op.forward(scn.phi)
    d = probe_c / scale
    resid = power_coefficients(tau, tau * d - phi_c / scale, scn.nu / 2.0)
    pairing = float(np.sum(np.real(data_c * np.conj(d))))
    return (scn.rho * _scaled_norm(resid) - pairing) / _scaled_norm(d)


def j_true(scn: Scenario, probe: GridFunction, u: GridFunction) -> float:
    """J with the true data <Phi, T u>"""
    op = scn.op
    return j_from_coefficients(scn, op.forward(probe), op.singular_values * op.forward(u))


def j_empirical(scn: Scenario, probe: GridFunction, y: GridFunction) -> float:
    """J with <Phi, T u> replaced by <y, Phi>"""
    return j_from_coefficients(scn, scn.op.forward(probe), scn.op.forward(y))


def power_from_j(j_value, sigma: float, alpha: float):
    """Q(Q^-1(alpha) - J / sigma)"""
    _check_sigma(sigma)
    _check_alpha(alpha)
    return normal_cdf(normal_quantile(alpha) - np.asarray(j_value) / sigma)


def exact_power_regularized(scn: Scenario, probe: GridFunction, sigma: float, alpha: float,
                            u: GridFunction) -> float:
    return power_from_j(j_true(scn, probe, u), sigma, alpha)


def unregularized_probe(scn: Scenario, rel_cutoff: float = 0.0) -> GridFunction:
    return pseudo_inverse_adjoint_solve(scn.op, scn.phi, rel_cutoff)


def unregularized_test(scn: Scenario, sigma: float, alpha: float, rel_cutoff: float = 0.0) -> MapTest:
    """Probe Phi0 = (T*)^+ phi with threshold -sigma ||Phi0|| Q^-1(alpha)"""
    _check_sigma(sigma)
    _check_alpha(alpha)
    probe = unregularized_probe(scn, rel_cutoff)
    _check_probe(probe)
    threshold = -sigma * probe.norm() * normal_quantile(alpha)
    return MapTest(probe, threshold, alpha, math.inf, 'unregularized')


def eigenvector_diagnostic(scn: Scenario, prior: PriorSpec,
                           phi: Optional[GridFunction] = None) -> Optional[float]:
    """
    gamma_hat with C0^(1/2) T*T C0^(1/2) phi = gamma_hat phi, or None.

    None means phi is not an eigenvector: the products tau_k^2 rho_k differ on the
    modes carrying phi-mass.
    """
    phi = scn.phi if phi is None else phi
    weights = np.abs(scn.op.forward(phi)) ** 2
    total = float(np.sum(weights))
    if total == 0:
        return None
    products = scn.op.singular_values ** 2 * prior.variances(scn.op)
    gamma_hat = float(np.sum(products * weights) / total)
    if gamma_hat <= 0:
        return None
    spread = math.sqrt(float(np.sum((products - gamma_hat) ** 2 * weights)) / total)
    if spread > EIGENVECTOR_TOL * gamma_hat:
        return None
    return gamma_hat


def eigenvector_prior_mean(scn: Scenario, prior: PriorSpec, sigma: float, alpha: float) -> GridFunction:
    """
    m0 = t phi / ||phi||^2 with <m0, phi> = (sigma^2 + gamma_hat)/sigma ||Phi_MAP|| Q^-1(alpha),
    the prior mean that gives the MAP test level alpha when phi is an eigenvector.
    """
    _check_alpha(alpha)
    gamma_hat = eigenvector_diagnostic(scn, prior)
    if gamma_hat is None:
        raise IdentifiabilityError("feature is not an eigenvector of C0^(1/2) T*T C0^(1/2)")
    probe = map_probe(scn, prior, sigma)
    target = (sigma ** 2 + gamma_hat) / sigma * probe.norm() * normal_quantile(alpha)
    return scn.phi * (target / scn.phi.norm() ** 2)


def eigenvector_map_test(scn: Scenario, prior: PriorSpec, sigma: float, alpha: float) -> MapTest:
    """MAP test with the level-alpha prior mean; threshold <m0, T*Phi_MAP - phi>"""
    m0 = eigenvector_prior_mean(scn, prior, sigma, alpha)
    probe = map_probe(scn, prior, sigma)
    threshold = m0.inner(residual(scn, probe))
    return MapTest(probe, threshold, alpha, prior.gamma, 'eigenvector_closed_form')


def tikhonov_residual(scn: Scenario, prior: PriorSpec, sigma: float) -> float:
    """
    Relative residual of (T T* + sigma^2 C0^-1) Phi_MAP = T phi on modes with positive
    prior variance, multiplied through by C0: (C0 T T* + sigma^2) Phi_MAP = C0 T phi.
    """
    op = scn.op
    tau = op.singular_values
    variances = prior.variances(op)
    phi_c = op.forward(scn.phi)
    probe_c = op.forward(map_probe(scn, prior, sigma))
    active = variances > 0
    lhs = (tau[active] ** 2 * variances[active] + sigma ** 2) * probe_c[active]
    rhs = tau[active] * variances[active] * phi_c[active]
    scale = float(np.linalg.norm(rhs))
    if scale == 0:
        return float(np.linalg.norm(lhs))
    return float(np.linalg.norm(lhs - rhs)) / scale
