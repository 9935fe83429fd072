"""
Run configuration: problem defaults, environment, config files.

Precedence (lowest first): PROBLEM_DEFAULTS in shared.constants, environment
variables (optionally from a .env at the repo root), a `section.key = value` config
file, then command-line flags (applied by map_tests.py).

Config file example:

    # differentiation, smaller grid
    run.problem = differentiation
    run.beta = 3
    run.N = 256
    sweep.m_power = 200
    gamma_search.coarse_points = 41
"""
import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from shared.constants import DEFAULT_ALPHA, DEFAULT_ALPHA1, DEFAULT_N, DEFAULT_NU, PROBLEM_DEFAULTS, PROBLEMS
from shared.errors import ConfigError, MapTestError
from shared.gamma_selection import GammaSearchConfig
from shared.simulation import RngPolicy, RunParams, SweepConfig

# Load .env file from project root (for local runs)
try:
    from dotenv import load_dotenv
    env_path = Path(__file__).resolve().parent.parent / '.env'
    load_dotenv(env_path)
except ImportError:
    pass  # dotenv is optional

logger = logging.getLogger(__name__)

ENV_OUT_DIR = 'MAPTEST_OUT_DIR'
ENV_SEED = 'MAPTEST_SEED'
ENV_WORKERS = 'MAPTEST_WORKERS'

DEFAULT_OUT_DIR = 'results'
DEFAULT_SEED = 20240101

# run.<key> -> RunConfig attribute and value type
RUN_KEYS = {
    'problem': ('problem', str),
    'beta': ('beta', float),
    'mu': ('mu', float),
    'nu': ('nu', float),
    'alpha': ('alpha', float),
    'alpha1': ('alpha1', float),
    'omega': ('omega', float),
    'N': ('n', int),
    'seed': ('seed', int),
    'out_dir': ('out_dir', str),
    'workers': ('workers', int),
}
SWEEP_KEYS = {f.name: f.type for f in fields(SweepConfig)}
GAMMA_KEYS = {f.name: f.type for f in fields(GammaSearchConfig) if f.name != 'omega'}


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == '':
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(name, f"expected an integer, got {raw!r}") from None


def env_defaults() -> Dict[str, object]:
    return {
        'out_dir': os.getenv(ENV_OUT_DIR) or DEFAULT_OUT_DIR,
        'seed': _env_int(ENV_SEED, DEFAULT_SEED),
        'workers': _env_int(ENV_WORKERS, 1),
    }


@dataclass(frozen=True)
class RunConfig:
    problem: str
    beta: float
    mu: float
    nu: float = DEFAULT_NU
    alpha: float = DEFAULT_ALPHA
    alpha1: float = DEFAULT_ALPHA1
    omega: float = 0.0
    n: int = DEFAULT_N
    seed: int = DEFAULT_SEED
    out_dir: str = DEFAULT_OUT_DIR
    workers: int = 1
    sweep: SweepConfig = field(default_factory=SweepConfig)
    gamma_search: GammaSearchConfig = field(default_factory=GammaSearchConfig)

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError('run.problem', f"unknown problem '{self.problem}', expected one of {PROBLEMS}")
        for key in ('beta', 'nu'):
            if not getattr(self, key) > 0:
                raise ConfigError(f'run.{key}', f"must be positive, got {getattr(self, key)!r}")
        if not self.mu >= 0:
            raise ConfigError('run.mu', f"must be nonnegative, got {self.mu!r}")
        for key in ('alpha', 'alpha1'):
            if not 0.0 < getattr(self, key) < 1.0:
                raise ConfigError(f'run.{key}', f"must lie in (0, 1), got {getattr(self, key)!r}")
        if not self.omega >= 0:
            raise ConfigError('run.omega', f"must be nonnegative, got {self.omega!r}")
        if self.n < 2:
            raise ConfigError('run.N', f"must be at least 2, got {self.n!r}")
        if self.problem == PROBLEMS[0] and self.n % 2:
            raise ConfigError('run.N', f"deconvolution needs an even N, got {self.n!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError('run.seed', f"must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.workers < 1:
            raise ConfigError('run.workers', f"must be at least 1, got {self.workers!r}")
        if not self.out_dir:
            raise ConfigError('run.out_dir', "must not be empty")

    @classmethod
    def for_problem(cls, problem: str = PROBLEMS[0], **overrides) -> 'RunConfig':
        """Problem defaults plus environment, then overrides"""
        defaults = PROBLEM_DEFAULTS.get(problem)
        if defaults is None:
            raise ConfigError('run.problem', f"unknown problem '{problem}', expected one of {PROBLEMS}")
        values = dict(
            problem=problem,
            beta=defaults['beta'],
            mu=defaults['mu'],
            omega=defaults['omega'],
            sweep=SweepConfig(sigma_floor=defaults['sigma_floor']),
        )
        values.update(env_defaults())
        values.update(overrides)
        return cls(**values)

    def quick(self) -> 'RunConfig':
        return replace(self, sweep=self.sweep.quick())

    def run_params(self) -> RunParams:
        return RunParams(
            alpha=self.alpha,
            alpha1=self.alpha1,
            gamma_search=replace(self.gamma_search, omega=self.omega),
            workers=self.workers,
        )

    def policy(self) -> RngPolicy:
        return RngPolicy(self.seed)

    @property
    def stem(self) -> str:
        """<problem>_<beta>_<mu>, used for output file names"""
        return f"{self.problem}_{_format_number(self.beta)}_{_format_number(self.mu)}"


def _format_number(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def _convert(key: str, raw: str, kind, line: Optional[int]):
    try:
        if kind is int or kind == 'int':
            return int(raw)
        if kind is float or kind == 'float':
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {getattr(kind, '__name__', kind)}", line) from None


def _split_lines(text: str) -> Dict[Tuple[str, str], Tuple[str, int]]:
    entries = {}
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(line, "expected 'section.key = value'", number)
        name, value = (part.strip() for part in line.split('=', 1))
        if '.' not in name:
            raise ConfigError(name, "key needs a section prefix (run., sweep., gamma_search.)", number)
        section, key = name.split('.', 1)
        known = {'run': RUN_KEYS, 'sweep': SWEEP_KEYS, 'gamma_search': GAMMA_KEYS}.get(section)
        if known is None or key not in known:
            raise ConfigError(name, "unknown key", number)
        if (section, key) in entries:
            raise ConfigError(name, f"duplicate key (first set on line {entries[(section, key)][1]})", number)
        entries[(section, key)] = (value, number)
    return entries


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """
    RunConfig from config-file text.

    Keys not set in the text keep their value from base, or the problem defaults
    (for run.problem, default deconvolution) when base is None.
    """
    entries = _split_lines(text)
    problem_entry = entries.get(('run', 'problem'))
    if base is None or (problem_entry and problem_entry[0] != base.problem):
        problem = problem_entry[0] if problem_entry else PROBLEMS[0]
        if problem not in PROBLEM_DEFAULTS:
            raise ConfigError('run.problem', f"unknown problem '{problem}', expected one of {PROBLEMS}",
                              problem_entry[1])
        base = RunConfig.for_problem(problem)

    run_values, sweep_values, gamma_values = {}, {}, {}
    last_line = {}
    for (section, key), (raw, number) in entries.items():
        name = f"{section}.{key}"
        last_line[section] = number
        if section == 'run':
            attr, kind = RUN_KEYS[key]
            run_values[attr] = _convert(name, raw, kind, number)
        elif section == 'sweep':
            sweep_values[key] = _convert(name, raw, SWEEP_KEYS[key], number)
        else:
            gamma_values[key] = _convert(name, raw, GAMMA_KEYS[key], number)

    try:
        sweep = replace(base.sweep, **sweep_values)
    except MapTestError as exc:
        raise ConfigError('sweep', str(exc), last_line.get('sweep')) from None
    try:
        gamma_search = replace(base.gamma_search, **gamma_values)
    except MapTestError as exc:
        raise ConfigError('gamma_search', str(exc), last_line.get('gamma_search')) from None
    try:
        return replace(base, sweep=sweep, gamma_search=gamma_search, **run_values)
    except ConfigError as exc:
        section, _, key = exc.field.partition('.')
        entry = entries.get((section, key))
        if exc.line is not None or entry is None:
            raise
        raise ConfigError(exc.field, exc.detail, entry[1]) from None


def serialize_config(cfg: RunConfig) -> str:
    """Every field as `section.key = value`; parse_config inverts it"""
    lines = ['# MAP test run configuration']
    for key, (attr, _) in RUN_KEYS.items():
        lines.append(f"run.{key} = {_format_value(getattr(cfg, attr))}")
    for key in SWEEP_KEYS:
        lines.append(f"sweep.{key} = {_format_value(getattr(cfg.sweep, key))}")
    for key in GAMMA_KEYS:
        lines.append(f"gamma_search.{key} = {_format_value(getattr(cfg.gamma_search, key))}")
    return '\n'.join(lines) + '\n'


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_config(path, base: Optional[RunConfig] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise ConfigError('--config', f"cannot read {path}: {exc.strerror}") from None
    logger.debug("loaded config from %s", path)
    return parse_config(text, base)
