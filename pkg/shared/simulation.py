"""
Monte Carlo side of the MAP tests: seeded noise, empirical power and level, and
noise-level sweeps.

Every sample gets its own generator derived from (master seed, task, sigma index,
sample index), so a sweep gives the same numbers regardless of evaluation order or
the number of worker threads.

Usage:
    policy = RngPolicy(20240101)
    result = run_sweep(scn, SweepConfig(), RunParams(), policy, kind='power')
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from shared.constants import (
    DEFAULT_ALPHA,
    DEFAULT_ALPHA1,
    LEVEL_ABORT,
    LEVEL_DECAY,
    M_LEVEL,
    M_POWER,
    MAX_FAILURE_SHARE,
    N_LEVEL,
    POWER_ABORT,
    POWER_DECAY,
    QUICK_M_LEVEL,
    QUICK_M_POWER,
    QUICK_N_LEVEL,
    SIGMA_START,
    WINDOW_FACTOR,
)
from shared.errors import BoundInapplicableError, GammaSearchError, MapTestError, SimulationError
from shared.forward_problems import Scenario
from shared.gamma_selection import (
    BoundParams,
    GammaSearchConfig,
    ProbeFamily,
    a_posteriori_gamma_from_coefficients,
    a_priori_gamma,
    oracle_gamma,
    power_lower_bound_xi,
)
from shared.map_testing import j_from_coefficients, power_from_j, unregularized_probe
from shared.spectral_core import GridFunction, normal_quantile, tstar_t_power

logger = logging.getLogger(__name__)

# Task ids of the per-sample random streams
TASK_POWER = 1
TASK_LEVEL_TRUTH = 2
TASK_LEVEL_SAMPLE = 3

SWEEP_KINDS = ('power', 'level')


@dataclass(frozen=True)
class RngPolicy:
    """Counter-based streams: one generator per (task, sigma index, sample index, ...)"""
    master_seed: int

    def __post_init__(self):
        if int(self.master_seed) != self.master_seed or not 0 <= self.master_seed < 2 ** 64:
            raise MapTestError(f"master seed must be an unsigned 64-bit integer, got {self.master_seed!r}")

    def generator(self, task: int, sigma_index: int, sample_index: int, *extra: int) -> np.random.Generator:
        key = (int(task), int(sigma_index), int(sample_index)) + tuple(int(e) for e in extra)
        return np.random.default_rng(np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=key))


@dataclass(frozen=True)
class SweepConfig:
    sigma_start: float = SIGMA_START
    decay: float = POWER_DECAY
    level_decay: float = LEVEL_DECAY
    sigma_floor: float = 1e-5
    m_power: int = M_POWER
    m_level: int = M_LEVEL
    n_level: int = N_LEVEL
    power_abort: float = POWER_ABORT
    level_abort: float = LEVEL_ABORT
    window_factor: float = WINDOW_FACTOR

    def __post_init__(self):
        for name in ('decay', 'level_decay'):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise MapTestError(f"{name} must lie in (0, 1), got {value!r}")
        if not self.sigma_floor > 0:
            raise MapTestError(f"sigma_floor must be positive, got {self.sigma_floor!r}")
        if not self.sigma_start >= self.sigma_floor:
            raise MapTestError(
                f"sigma_start ({self.sigma_start!r}) must not be below sigma_floor ({self.sigma_floor!r})"
            )
        for name in ('m_power', 'm_level', 'n_level'):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise MapTestError(f"{name} must be a positive integer, got {value!r}")
        for name in ('power_abort', 'level_abort'):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise MapTestError(f"{name} must lie in (0, 1), got {value!r}")
        if not self.window_factor >= 1.0:
            raise MapTestError(f"window_factor must be at least 1, got {self.window_factor!r}")

    def quick(self) -> 'SweepConfig':
        return replace(self, m_power=QUICK_M_POWER, m_level=QUICK_M_LEVEL, n_level=QUICK_N_LEVEL)

    def sigmas(self, kind: str) -> List[float]:
        """Noise levels sigma_start * decay^i down to sigma_floor"""
        if kind not in SWEEP_KINDS:
            raise MapTestError(f"unknown sweep kind '{kind}', expected one of {SWEEP_KINDS}")
        decay = self.decay if kind == 'power' else self.level_decay
        values = []
        i = 0
        while True:
            sigma = self.sigma_start * decay ** i
            if sigma < self.sigma_floor * (1.0 - 1e-12):
                return values
            values.append(sigma)
            i += 1


@dataclass(frozen=True)
class RunParams:
    """Test levels and search settings shared by every sigma-point"""
    alpha: float = DEFAULT_ALPHA
    alpha1: float = DEFAULT_ALPHA1
    gamma_search: GammaSearchConfig = field(default_factory=GammaSearchConfig)
    workers: int = 1

    def __post_init__(self):
        for name in ('alpha', 'alpha1'):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise MapTestError(f"{name} must lie in (0, 1), got {value!r}")
        if int(self.workers) != self.workers or self.workers < 1:
            raise MapTestError(f"workers must be a positive integer, got {self.workers!r}")


@dataclass(frozen=True)
class GammaStats:
    mean: float
    q16: float
    q84: float

    @classmethod
    def from_samples(cls, gammas: np.ndarray) -> 'GammaStats':
        q16, q84 = np.quantile(gammas, [0.16, 0.84])
        return cls(float(np.mean(gammas)), float(q16), float(q84))


@dataclass(frozen=True)
class PowerEstimate:
    emp_1sample: float
    emp_2sample: float
    gamma: GammaStats
    failures: int


@dataclass(frozen=True)
class SweepRecord:
    """One sigma-point; None marks an empty cell"""
    sigma: float
    exact_unreg: Optional[float] = None
    exact_oracle_map: Optional[float] = None
    exact_apriori_map: Optional[float] = None
    bound_xi: Optional[float] = None
    emp_2sample: Optional[float] = None
    emp_1sample: Optional[float] = None
    emp_level: Optional[float] = None
    gamma_mean: Optional[float] = None
    gamma_q16: Optional[float] = None
    gamma_q84: Optional[float] = None
    gamma_oracle: Optional[float] = None
    flags: Tuple[str, ...] = ()


@dataclass
class SweepResult:
    kind: str
    records: List[SweepRecord] = field(default_factory=list)
    power_aborted_at: Optional[float] = None
    level_aborted_at: Optional[float] = None

    @property
    def sigmas(self) -> List[float]:
        return [r.sigma for r in self.records]

    def column(self, name: str) -> List[Optional[float]]:
        return [getattr(r, name) for r in self.records]


def sample_data(scn: Scenario, u: GridFunction, sigma: float, rng: np.random.Generator) -> GridFunction:
    """y = T u + sigma eps with node values of eps i.i.d. N(0, 1/h)"""
    if sigma < 0:
        raise MapTestError(f"noise level sigma must be nonnegative, got {sigma!r}")
    clean = scn.op.apply(u)
    noise = rng.standard_normal(scn.op.n) / math.sqrt(scn.grid.h)
    return clean.with_values(clean.values + sigma * noise)


def sample_batch(scn: Scenario, clean: GridFunction, sigma: float, policy: RngPolicy,
                 task: int, sigma_index: int, count: int, *extra: int) -> np.ndarray:
    """(count, N) node values T u + sigma eps, row m drawn from stream (task, sigma_index, m, *extra)"""
    scale = sigma / math.sqrt(scn.grid.h)
    rows = np.empty((count, scn.op.n))
    for m in range(count):
        rng = policy.generator(task, sigma_index, m, *extra)
        rows[m] = clean.values + scale * rng.standard_normal(scn.op.n)
    return rows


def _map_indexed(fn: Callable[[int], object], count: int, workers: int) -> list:
    """fn(0..count-1) in index order, on a thread pool when workers > 1"""
    if workers <= 1:
        return [fn(m) for m in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def _check_failures(failures: int, total: int, sigma: float):
    if failures > MAX_FAILURE_SHARE * total:
        raise SimulationError(
            f"gamma search failed on {failures} of {total} samples at sigma={sigma!r}"
        )
    if failures:
        logger.warning("excluded %d of %d samples at sigma=%.6g after failed gamma search",
                       failures, total, sigma)


class _SampleTester:
    """a posteriori gamma and the 1-sample decision for one data sample"""

    def __init__(self, family: ProbeFamily, sigma: float, params: RunParams):
        self.family = family
        self.sigma = sigma
        self.params = params
        self.cutoff = sigma * normal_quantile(params.alpha1)

    def __call__(self, values: np.ndarray) -> Tuple[float, bool]:
        """(gamma, reject); gamma is nan when the search failed"""
        scn = self.family.scn
        data_c = scn.op.forward(scn.grid.function(values))
        try:
            gamma = a_posteriori_gamma_from_coefficients(self.family, data_c, self.sigma,
                                                         self.params.gamma_search)
        except GammaSearchError as exc:
            logger.debug("gamma search failed: %s", exc)
            return math.nan, False
        pairing = self.family.pairing(data_c)
        j_emp = float(self.family.j_values(math.log10(gamma), self.sigma, pairing)[0])
        # <y, Phi> > c  <=>  J_y(Phi) < sigma Q^-1(alpha1)
        return gamma, j_emp < self.cutoff


def empirical_power(scn: Scenario, sigma: float, cfg: SweepConfig, params: RunParams,
                    policy: RngPolicy, sigma_index: int = 0,
                    family: Optional[ProbeFamily] = None) -> PowerEstimate:
    """1-sample rejection rate, 2-sample power and gamma statistics from the same M_power samples"""
    family = family or ProbeFamily(scn)
    clean = scn.op.apply(scn.u_dagger)
    data = sample_batch(scn, clean, sigma, policy, TASK_POWER, sigma_index, cfg.m_power)
    tester = _SampleTester(family, sigma, params)
    outcomes = _map_indexed(lambda m: tester(data[m]), cfg.m_power, params.workers)

    gammas = np.array([g for g, _ in outcomes])
    decisions = np.array([d for _, d in outcomes])
    ok = np.isfinite(gammas)
    failures = int(np.sum(~ok))
    _check_failures(failures, cfg.m_power, sigma)

    j_true = family.j_values(np.log10(gammas[ok]), sigma, family.truth_pairing)
    emp_2sample = float(np.mean(power_from_j(j_true, sigma, params.alpha)))
    return PowerEstimate(
        emp_1sample=float(np.mean(decisions[ok])),
        emp_2sample=emp_2sample,
        gamma=GammaStats.from_samples(gammas[ok]),
        failures=failures,
    )


def empirical_power_1sample(scn: Scenario, sigma: float, cfg: SweepConfig, params: RunParams,
                            policy: RngPolicy, sigma_index: int = 0) -> Tuple[float, GammaStats]:
    estimate = empirical_power(scn, sigma, cfg, params, policy, sigma_index)
    return estimate.emp_1sample, estimate.gamma


def empirical_power_2sample(scn: Scenario, sigma: float, cfg: SweepConfig, params: RunParams,
                            policy: RngPolicy, sigma_index: int = 0) -> float:
    """Mean closed-form power Q(Q^-1(alpha) - J_true / sigma) of the tests built from each sample"""
    return empirical_power(scn, sigma, cfg, params, policy, sigma_index).emp_2sample


def draw_level_truths(scn: Scenario, count: int, policy: RngPolicy) -> List[GridFunction]:
    """
    u_n = +-rho (T*T)^(nu/2) w_n with w_n uniform on the Euclidean unit sphere and the
    sign chosen so that the Euclidean pairing with phi is <= 0.
    """
    truths = []
    for n in range(count):
        rng = policy.generator(TASK_LEVEL_TRUTH, 0, n)
        w = rng.standard_normal(scn.op.n)
        w /= np.linalg.norm(w)
        u = tstar_t_power(scn.op, scn.nu / 2.0, scn.grid.function(w)) * scn.rho
        if float(np.dot(scn.phi.values, u.values)) > 0:
            u = -u
        truths.append(u)
    return truths


def empirical_level(scn: Scenario, sigma: float, cfg: SweepConfig, params: RunParams,
                    policy: RngPolicy, sigma_index: int = 0,
                    truths: Optional[Sequence[GridFunction]] = None,
                    family: Optional[ProbeFamily] = None) -> float:
    """Maximum over the N_level null truths of the 1-sample rejection rate"""
    family = family or ProbeFamily(scn)
    if truths is None:
        truths = draw_level_truths(scn, cfg.n_level, policy)
    tester = _SampleTester(family, sigma, params)

    sizes = []
    for n, u in enumerate(truths):
        clean = scn.op.apply(u)
        data = sample_batch(scn, clean, sigma, policy, TASK_LEVEL_SAMPLE, sigma_index, cfg.m_level, n)
        outcomes = _map_indexed(lambda m: tester(data[m]), cfg.m_level, params.workers)
        ok = [d for g, d in outcomes if math.isfinite(g)]
        _check_failures(cfg.m_level - len(ok), cfg.m_level, sigma)
        sizes.append(float(np.mean(ok)))
    return max(sizes)


class _AbortWindow:
    """Trailing window spanning window_factor in sigma; fires once every value passes"""

    def __init__(self, sigma_start: float, window_factor: float, passes: Callable[[float], bool]):
        self.sigma_start = sigma_start
        self.window_factor = window_factor
        self.passes = passes
        self.points: List[Tuple[float, Optional[float]]] = []

    def push(self, sigma: float, value: Optional[float]) -> bool:
        self.points.append((sigma, value))
        top = sigma * self.window_factor
        if top > self.sigma_start * (1.0 + 1e-12):
            return False
        window = [v for s, v in self.points if s <= top * (1.0 + 1e-12)]
        return all(v is not None and self.passes(v) for v in window)


def _bound_params(scn: Scenario, sigma: float, alpha: float) -> BoundParams:
    return BoundParams(xi=scn.xi, gamma0=1.0, nu=scn.nu, mu=scn.mu, rho=scn.rho, sigma=sigma, alpha=alpha)


class SweepRunner:
    """Evaluates one scenario at successive sigma-points of a power or level grid"""

    def __init__(self, scn: Scenario, cfg: SweepConfig, params: RunParams, policy: RngPolicy):
        self.scn = scn
        self.cfg = cfg
        self.params = params
        self.policy = policy
        self.family = ProbeFamily(scn)
        self.oracle_search = replace(params.gamma_search, omega=0.0)
        self.j_unreg = self._unregularized_j()
        self._truths: Optional[List[GridFunction]] = None

    def _unregularized_j(self) -> float:
        """J of Phi0 = (T*)^+ phi; nan when the probe is not finite"""
        op = self.scn.op
        try:
            probe = unregularized_probe(self.scn)
            with np.errstate(over='ignore', invalid='ignore'):
                value = j_from_coefficients(self.scn, op.forward(probe),
                                            op.singular_values * op.forward(self.scn.u_dagger))
        except (MapTestError, FloatingPointError) as exc:
            logger.warning("unregularized probe unusable: %s", exc)
            return math.nan
        if not math.isfinite(value):
            logger.warning("unregularized probe is not finite for %s; its curve stays empty", self.scn.name)
        return value

    @property
    def level_truths(self) -> List[GridFunction]:
        if self._truths is None:
            self._truths = draw_level_truths(self.scn, self.cfg.n_level, self.policy)
        return self._truths

    def exact_record(self, sigma: float) -> SweepRecord:
        """Closed-form curves at one sigma"""
        scn, alpha = self.scn, self.params.alpha
        flags = []
        record = SweepRecord(sigma=sigma)

        if math.isfinite(self.j_unreg):
            record = replace(record, exact_unreg=float(power_from_j(self.j_unreg, sigma, alpha)))
        else:
            flags.append('unreg_nonfinite')

        try:
            gamma = oracle_gamma(scn, sigma, self.oracle_search, self.family)
            j_value = float(self.family.j_values(math.log10(gamma), sigma, self.family.truth_pairing)[0])
            record = replace(record, gamma_oracle=gamma,
                             exact_oracle_map=float(power_from_j(j_value, sigma, alpha)))
        except GammaSearchError as exc:
            logger.warning("oracle gamma search failed at sigma=%.6g: %s", sigma, exc)
            flags.append('oracle_failed')

        try:
            gamma = a_priori_gamma(scn.xi, scn.rho, scn.nu, scn.mu, sigma)
            j_value = float(self.family.j_values(math.log10(gamma), sigma, self.family.truth_pairing)[0])
            record = replace(record, exact_apriori_map=float(power_from_j(j_value, sigma, alpha)))
        except MapTestError as exc:
            logger.warning("a priori gamma unavailable at sigma=%.6g: %s", sigma, exc)
            flags.append('apriori_failed')

        try:
            record = replace(record, bound_xi=power_lower_bound_xi(_bound_params(scn, sigma, alpha), scn.xi))
        except BoundInapplicableError as exc:
            logger.debug("bound skipped: %s", exc)
            flags.append('bound_inapplicable')

        return replace(record, flags=tuple(flags))

    def power_record(self, sigma: float, sigma_index: int, record: SweepRecord) -> SweepRecord:
        try:
            est = empirical_power(self.scn, sigma, self.cfg, self.params, self.policy,
                                  sigma_index, self.family)
        except SimulationError as exc:
            logger.warning("sigma-point %.6g failed: %s", sigma, exc)
            return replace(record, flags=record.flags + ('gamma_search_failed',))
        flags = record.flags + (('samples_excluded',) if est.failures else ())
        return replace(
            record,
            emp_1sample=est.emp_1sample,
            emp_2sample=est.emp_2sample,
            gamma_mean=est.gamma.mean,
            gamma_q16=est.gamma.q16,
            gamma_q84=est.gamma.q84,
            flags=flags,
        )

    def level_record(self, sigma: float, sigma_index: int, record: SweepRecord) -> SweepRecord:
        try:
            level = empirical_level(self.scn, sigma, self.cfg, self.params, self.policy,
                                    sigma_index, self.level_truths, self.family)
        except SimulationError as exc:
            logger.warning("sigma-point %.6g failed: %s", sigma, exc)
            return replace(record, flags=record.flags + ('gamma_search_failed',))
        return replace(record, emp_level=level)


def run_sweep(scn: Scenario, cfg: SweepConfig, params: RunParams, policy: RngPolicy,
              kind: str = 'power', resume: Sequence[SweepRecord] = (),
              on_record: Optional[Callable[[SweepRecord], None]] = None) -> SweepResult:
    """
    Sweep sigma down the power grid (decay) or the level grid (level_decay).

    Exact curves are evaluated at every sigma-point. The empirical track stops once
    every value in a trailing window spanning window_factor in sigma passes its abort
    threshold (power above power_abort, level below level_abort). Records in resume
    must be a prefix of the grid; they are replayed to rebuild the abort state and the
    sweep continues after them. on_record is called after every new sigma-point.
    """
    sigmas = cfg.sigmas(kind)
    if len(resume) > len(sigmas):
        raise MapTestError(f"resume has {len(resume)} records, the {kind} grid only {len(sigmas)}")
    for i, record in enumerate(resume):
        if not math.isclose(record.sigma, sigmas[i], rel_tol=1e-12):
            raise MapTestError(
                f"resume record {i} has sigma={record.sigma!r}, the {kind} grid expects {sigmas[i]!r}"
            )

    if kind == 'power':
        window = _AbortWindow(cfg.sigma_start, cfg.window_factor, lambda v: v > cfg.power_abort)
        track = 'emp_1sample'
    else:
        window = _AbortWindow(cfg.sigma_start, cfg.window_factor, lambda v: v < cfg.level_abort)
        track = 'emp_level'

    result = SweepResult(kind=kind)
    aborted = False
    for record in resume:
        result.records.append(record)
        if not aborted and window.push(record.sigma, getattr(record, track)):
            aborted = True
            _mark_abort(result, kind, record.sigma)

    runner = SweepRunner(scn, cfg, params, policy)
    for i in range(len(resume), len(sigmas)):
        sigma = sigmas[i]
        record = runner.exact_record(sigma)
        if not aborted:
            if kind == 'power':
                record = runner.power_record(sigma, i, record)
            else:
                record = runner.level_record(sigma, i, record)
            if window.push(sigma, getattr(record, track)):
                aborted = True
                _mark_abort(result, kind, sigma)
                logger.info("%s track aborted at sigma=%.6g", kind, sigma)
        logger.debug("sigma=%.6g %s", sigma, record)
        result.records.append(record)
        if on_record is not None:
            on_record(record)
    return result


def _mark_abort(result: SweepResult, kind: str, sigma: float):
    if kind == 'power':
        result.power_aborted_at = sigma
    else:
        result.level_aborted_at = sigma
