"""
Fast verification suite behind `map_tests.py verify`.

Each check yields a row with measured value, target, tolerance and a status:
    pass / FAIL   structural identities and analytic oracles
    reference     published constants not held to a tolerance, shown with their relative deviation

Scenarios are built through the shared.forward_problems module attributes, so a
patched builder is picked up by every check.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List

import numpy as np
from tabulate import tabulate

from shared import forward_problems
from shared.constants import (
    DEFAULT_N,
    GOLDEN_FEATURE_VALUES,
    GOLDEN_RHO,
    HEAT_T0,
    PROBLEM_DECONVOLUTION,
    PROBLEM_DEFAULTS,
    PROBLEMS,
)
from shared.gamma_selection import (
    BoundParams,
    ProbeFamily,
    a_priori_gamma,
    inf_prior_convergence_check,
    power_lower_bound_xi,
    residual_bound_check,
)
from shared.map_testing import (
    PriorSpec,
    calibrate_m0,
    eigenvector_map_test,
    exact_power_regularized,
    exact_size,
    map_decision,
    map_test,
    power_from_j,
    tikhonov_residual,
    unregularized_probe,
    unregularized_test,
)

logger = logging.getLogger(__name__)

STATUS_PASS = 'pass'
STATUS_FAIL = 'FAIL'
STATUS_REFERENCE = 'reference'

# Dense oracle scenarios
ORACLE_TAU4 = (1.0, 0.5, 0.25, 0.125)
ORACLE_PHI4 = (1.0, 0.6, 0.4, 0.3)
ORACLE_SOURCE4 = (0.8, 0.5, 0.4, 0.3)
ORACLE_TAU8 = (1.0, 0.7, 0.5, 0.35, 0.25, 0.18, 0.12, 0.08)
ORACLE_PHI8 = (0.9, -0.4, 0.5, 0.2, -0.3, 0.25, 0.1, -0.15)
ORACLE_SOURCE8 = (0.6, 0.3, -0.2, 0.4, 0.1, -0.2, 0.3, 0.1)


@dataclass(frozen=True)
class Check:
    group: str
    name: str
    measured: float
    target: float
    tolerance: float
    status: str
    provenance: str = ''

    @property
    def failed(self) -> bool:
        return self.status == STATUS_FAIL


def _rel_dev(measured: float, target: float) -> float:
    return abs(measured - target) / abs(target) if target else abs(measured)


def close_check(group: str, name: str, measured: float, target: float, rel_tol: float,
                provenance: str = '') -> Check:
    ok = math.isfinite(measured) and _rel_dev(measured, target) <= rel_tol
    return Check(group, name, measured, target, rel_tol, STATUS_PASS if ok else STATUS_FAIL, provenance)


def at_most_check(group: str, name: str, measured: float, limit: float, provenance: str = '') -> Check:
    ok = math.isfinite(measured) and measured <= limit
    return Check(group, name, measured, 0.0, limit, STATUS_PASS if ok else STATUS_FAIL, provenance)


def reference_row(group: str, name: str, measured: float, target: float, provenance: str) -> Check:
    return Check(group, name, measured, target, _rel_dev(measured, target), STATUS_REFERENCE, provenance)


def eigenvector_oracle():
    """N=4 scenario whose feature spans two modes with equal tau_k^2 rho_k (= 0.4)"""
    tau = np.array(ORACLE_TAU4)
    scn = forward_problems.dense_scenario(tau, (1.0, 1.0, 0.0, 0.0), ORACLE_SOURCE4)
    variances = np.array([0.4 / tau[0] ** 2, 0.4 / tau[1] ** 2, 0.3, 0.7])
    return scn, PriorSpec.diagonal(variances), 0.4


def golden_row(group: str, name: str, measured: float, golden) -> Check:
    target, rel_tol = golden
    if rel_tol is None:
        return reference_row(group, name, measured, target, 'published value')
    return close_check(group, name, measured, target, rel_tol, 'published value')


def golden_checks(n: int) -> List[Check]:
    group = 'golden'
    checks = []
    for name in PROBLEMS:
        for beta in PROBLEM_DEFAULTS[name]['betas']:
            scn = forward_problems.build_scenario(name, n, beta=beta)
            checks.append(close_check(group, f"||phi|| {name} beta={beta:g}", scn.phi.norm(), 1.0, 1e-12))
            checks.append(golden_row(group, f"<phi,u> {name} beta={beta:g}", scn.feature_value,
                                     GOLDEN_FEATURE_VALUES[(name, beta)]))
        scn = forward_problems.build_scenario(name, n)
        checks.append(golden_row(group, f"rho {name}", scn.rho, GOLDEN_RHO[name]))
    return checks


def green_kernel_deviation(op, rng: np.random.Generator, draws: int = 20) -> float:
    """Worst relative sup-norm gap between the Green's kernel quadrature and op.apply"""
    kernel = forward_problems.second_antiderivative_kernel(op.grid)
    worst = 0.0
    for _ in range(draws):
        f = op.grid.function(rng.standard_normal(op.n))
        spectral = op.apply(f).values
        gap = np.max(np.abs(kernel @ f.values - spectral)) / np.max(np.abs(spectral))
        worst = max(worst, float(gap))
    return worst


def operator_checks(n: int, rng: np.random.Generator) -> List[Check]:
    group = 'operators'
    deconv = forward_problems.build_deconvolution(n)
    diff = forward_problems.build_differentiation(n)
    heat = forward_problems.build_heat(n, HEAT_T0)
    checks = [
        close_check(group, "deconvolution multiplier max", deconv.operator_norm, 1.0, 1e-12),
        close_check(group, "differentiation normalized norm", diff.operator_norm, 1.0, 1e-12),
        close_check(group, "differentiation raw norm", diff.norm_factor, math.pi ** -2, 1e-12),
        close_check(group, "heat normalized norm", heat.operator_norm, 1.0, 1e-12),
        close_check(group, "heat raw norm", heat.norm_factor, math.exp(-math.pi ** 2 * HEAT_T0), 1e-12),
    ]

    deviation = green_kernel_deviation(diff, rng)
    checks.append(at_most_check(group, "Green's kernel vs spectral antiderivative, 20 random inputs",
                                deviation, 1e-3, 'min{x(1-y), (1-x)y} quadrature'))

    worst = 0.0
    dense = forward_problems.dense_scenario(ORACLE_TAU8, ORACLE_PHI8, ORACLE_SOURCE8).op
    for op in (deconv, diff, heat, dense):
        for _ in range(20):
            f = op.grid.function(rng.standard_normal(op.n))
            g = op.grid.function(rng.standard_normal(op.n))
            gap = abs(op.apply(f).inner(g) - f.inner(op.adjoint_apply(g)))
            worst = max(worst, gap / (f.norm() * g.norm()))
    checks.append(at_most_check(group, "adjointness, 20 random pairs per basis", worst, 1e-12))

    scn = forward_problems.build_scenario(PROBLEM_DECONVOLUTION, n, beta=5.0)
    probe = unregularized_probe(scn)
    resid = (scn.op.adjoint_apply(probe) - scn.phi).norm() / scn.phi.norm()
    checks.append(at_most_check(group, "pseudo-inverse residual, deconvolution beta=5", resid, 1e-8))
    return checks


def eigenvector_checks(rng: np.random.Generator) -> List[Check]:
    group = 'eigenvector'
    scn, prior, gamma_hat = eigenvector_oracle()
    zero = scn.grid.zeros()
    pairs = [(0.1, 0.1), (0.3, 0.05), (1.0, 0.2), (0.05, 0.01), (2.0, 0.3)]
    size_gap = 0.0
    closed_gap = 0.0
    agree, total = 0, 0
    for sigma, alpha in pairs:
        test = eigenvector_map_test(scn, prior, sigma, alpha)
        size_gap = max(size_gap, abs(exact_size(scn, test, zero, sigma) - alpha))

        kappa = gamma_hat / (gamma_hat + sigma ** 2)
        phi0 = unregularized_probe(scn)
        closed_gap = max(
            closed_gap,
            (scn.op.adjoint_apply(test.probe) - scn.phi * kappa).norm(),
            abs(test.probe.norm() - kappa * phi0.norm()),
        )

        unreg = unregularized_test(scn, sigma, alpha)
        u = scn.phi * (sigma * rng.standard_normal())
        clean = scn.op.apply(u).values
        data = clean + sigma / math.sqrt(scn.grid.h) * rng.standard_normal((10000, scn.op.n))
        agree += int(np.sum(test.decide_batch(data) == unreg.decide_batch(data)))
        total += data.shape[0]

    return [
        at_most_check(group, "exact size at u=0 minus alpha", size_gap, 1e-10),
        at_most_check(group, "T*Phi_MAP and ||Phi_MAP|| closed forms", closed_gap, 1e-10),
        close_check(group, "MAP vs unregularized decisions agree", agree / total, 1.0, 0.0,
                    f"{total} samples"),
    ]


def coherence_checks(rng: np.random.Generator) -> List[Check]:
    group = 'coherence'
    scn = forward_problems.dense_scenario(ORACLE_TAU8, ORACLE_PHI8, ORACLE_SOURCE8)
    m = 10000
    worst_z = 0.0
    for _ in range(10):
        sigma = 10.0 ** rng.uniform(-2.0, -0.5)
        alpha = rng.uniform(0.05, 0.3)
        prior = PriorSpec.power_law(10.0 ** rng.uniform(-1.0, 1.0), float(rng.choice([1.0, 2.0])))
        test = map_test(scn, prior, sigma, alpha)
        u = scn.u_dagger * rng.uniform(-0.5, 1.0)
        exact = exact_size(scn, test, u, sigma)
        clean = scn.op.apply(u).values
        data = clean + sigma / math.sqrt(scn.grid.h) * rng.standard_normal((m, scn.op.n))
        rate = float(np.mean(test.decide_batch(data)))
        se = max(math.sqrt(exact * (1.0 - exact) / m), 1.0 / m)
        worst_z = max(worst_z, abs(rate - exact) / se)

    identity_gap = 0.0
    tikhonov = 0.0
    for _ in range(50):
        sigma = 10.0 ** rng.uniform(-3.0, 0.0)
        alpha = rng.uniform(0.01, 0.4)
        prior = PriorSpec.power_law(10.0 ** rng.uniform(-2.0, 2.0), rng.uniform(0.0, 3.0))
        test = map_test(scn, prior, sigma, alpha)
        power = exact_power_regularized(scn, test.probe, sigma, alpha, scn.u_dagger)
        identity_gap = max(identity_gap, abs(power - exact_size(scn, test, scn.u_dagger, sigma)))
        tikhonov = max(tikhonov, tikhonov_residual(scn, prior, sigma))

    sigma, alpha = 0.05, 0.1
    prior = PriorSpec.power_law(1.0, 1.0)
    test = map_test(scn, prior, sigma, alpha)
    calibrated = PriorSpec.power_law(1.0, 1.0, m0=calibrate_m0(scn, test.probe, sigma, alpha))
    clean = scn.op.apply(scn.u_dagger)
    agree = 0
    for _ in range(200):
        noise = rng.standard_normal(scn.op.n) / math.sqrt(scn.grid.h)
        y = clean.with_values(clean.values + sigma * noise)
        agree += int(map_decision(scn, calibrated, y, sigma) == test.decide(y))

    return [
        at_most_check(group, "exact size vs Monte Carlo (max |z|, M=1e4)", worst_z, 3.0, '10 configurations'),
        at_most_check(group, "exact power equals exact size at u_dagger", identity_gap, 1e-10, '50 draws'),
        at_most_check(group, "Tikhonov normal-equation residual", tikhonov, 1e-8, '50 draws'),
        close_check(group, "calibrated m0: MAP rule equals threshold test", agree / 200, 1.0, 0.0),
    ]


def bound_checks(n: int, rng: np.random.Generator) -> List[Check]:
    group = 'bounds'
    checks = []
    for name in PROBLEMS:
        scn = forward_problems.build_scenario(name, n)
        violations = 0
        for _ in range(100):
            gamma0 = 10.0 ** rng.uniform(-3.0, 3.0)
            mu = rng.uniform(max(scn.nu / 2.0 - 1.0, 0.0) + 0.05, 3.0)
            sigma = 10.0 ** rng.uniform(-5.0, 0.0)
            if not residual_bound_check(scn, gamma0, mu, sigma).holds():
                violations += 1
        checks.append(at_most_check(group, f"residual and norm estimates, {name}", violations, 0,
                                    '100 random (gamma0, mu, sigma)'))

        family = ProbeFamily(scn)
        excess = -math.inf
        for sigma in np.logspace(0.0, math.log10(PROBLEM_DEFAULTS[name]['sigma_floor']), 16):
            params = BoundParams(xi=scn.xi, nu=scn.nu, mu=scn.mu, rho=scn.rho, sigma=sigma, alpha=0.1)
            gamma = a_priori_gamma(scn.xi, scn.rho, scn.nu, scn.mu, sigma)
            j_value = family.j_values(math.log10(gamma), sigma, family.truth_pairing)[0]
            power = float(power_from_j(j_value, sigma, 0.1))
            excess = max(excess, power_lower_bound_xi(params, scn.xi) - power)
        checks.append(at_most_check(group, f"xi bound below a priori MAP power, {name}", excess, 1e-12))

        params = BoundParams(xi=scn.xi, nu=scn.nu, mu=scn.mu, rho=scn.rho, sigma=0.01, alpha=0.1)
        at_edge = power_lower_bound_xi(params, scn.xi / (scn.nu + 1.0))
        checks.append(close_check(group, f"xi bound at feature size xi/(nu+1), {name}", at_edge, 0.1, 1e-12))
    return checks


def convergence_checks(seed: int) -> List[Check]:
    group = 'convergence'
    scn = forward_problems.dense_scenario(ORACLE_TAU4, ORACLE_PHI4, ORACLE_SOURCE4)
    result = inf_prior_convergence_check(scn, 64, seed=seed)
    final = float(result.j_values[-1])
    excess = float(np.max(result.j_values - result.j_values[0]))
    return [
        at_most_check(group, "|J(Phi_MAP(C_0,64)) - min J|", abs(final - result.j_optimal), 1e-3),
        at_most_check(group, "final J", final, 0.0),
        Check(group, "J(Phi_MAP(C_0,n)) never above J(Phi_MAP(C_0,1)) + 1e-9", excess, 0.0, 1e-9,
              STATUS_PASS if result.never_above_first else STATUS_FAIL),
    ]


def _guarded(group: str, fn: Callable[[], List[Check]]) -> List[Check]:
    try:
        return fn()
    except Exception as exc:
        logger.exception("%s checks raised", group)
        return [Check(group, f"{group} checks raised {type(exc).__name__}: {exc}",
                      math.nan, math.nan, math.nan, STATUS_FAIL)]


def run_verification(n: int = DEFAULT_N, seed: int = 0) -> List[Check]:
    rng = np.random.default_rng(seed)
    checks = []
    checks += _guarded('golden', lambda: golden_checks(n))
    checks += _guarded('operators', lambda: operator_checks(n, rng))
    checks += _guarded('eigenvector', lambda: eigenvector_checks(rng))
    checks += _guarded('coherence', lambda: coherence_checks(rng))
    checks += _guarded('bounds', lambda: bound_checks(n, rng))
    checks += _guarded('convergence', lambda: convergence_checks(seed))
    return checks


def print_checks(checks: List[Check]):
    rows = [(c.group, c.name, c.measured, c.target, c.tolerance, c.status, c.provenance) for c in checks]
    print(tabulate(rows, headers=['Group', 'Check', 'Measured', 'Target', 'Tolerance', 'Status', 'Source'],
                   tablefmt='simple', floatfmt='.6g'))
