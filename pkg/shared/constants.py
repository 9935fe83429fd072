"""
Shared constants for the MAP testing scenarios and sweeps.

All modules should import from here so a parameter change only needs one edit.
"""

# Problem names (must match the keys of PROBLEM_DEFAULTS)
PROBLEM_DECONVOLUTION = "deconvolution"
PROBLEM_DIFFERENTIATION = "differentiation"
PROBLEM_HEAT = "heat"

PROBLEMS = (
    PROBLEM_DECONVOLUTION,
    PROBLEM_DIFFERENTIATION,
    PROBLEM_HEAT,
)

# Grid size used for every shipped scenario
DEFAULT_N = 1024

# Feature interval length l; the truth starts lambda = l/3 past the feature,
# rounded up to a whole number of grid steps
FEATURE_LENGTH = 5.0 / 128.0
TRUTH_OFFSET_FRACTION = 1.0 / 3.0

# Convolution kernel: (F h)(xi) = (1 + KERNEL_WIDTH^2 xi^2)^(-2) on a period of length PERIOD
KERNEL_WIDTH = 0.06
PERIOD = 2.0

# Backward heat equation final time
HEAT_T0 = 1e-4

# Source exponent nu (same for all shipped scenarios)
DEFAULT_NU = 1.0

# Significance levels: alpha for exact curves, alpha1 for the 1-sample test
DEFAULT_ALPHA = 0.1
DEFAULT_ALPHA1 = 0.05

# Per-problem settings.
# Format: 'problem': {
#     'domain': (a, b) interval of the grid,
#     'node_rule': grid node convention,
#     'c': left end of the feature interval,
#     'delta': beta shape of the truth (None when the truth is built from a source),
#     'beta': default feature shape,
#     'betas': feature shapes checked by `verify`,
#     'mu': default prior exponent,
#     'omega': a posteriori penalty weight,
#     'sigma_floor': smallest noise level of a sweep,
# }
PROBLEM_DEFAULTS = {
    PROBLEM_DECONVOLUTION: {
        'domain': (-1.0, 1.0),
        'node_rule': 'cell_centered_periodic',
        'c': 0.0,
        'delta': 5.0,
        'beta': 1.0,
        'betas': (5.0, 1.0),
        'mu': 2.0,
        'omega': 1e-4,
        'sigma_floor': 1e-5,
    },
    PROBLEM_DIFFERENTIATION: {
        'domain': (0.0, 1.0),
        'node_rule': 'interior',
        'c': 0.5,
        'delta': 3.0,
        'beta': 1.0,
        'betas': (3.0, 1.0),
        'mu': 2.0,
        'omega': 1e-10,
        'sigma_floor': 1e-6,
    },
    PROBLEM_HEAT: {
        'domain': (0.0, 1.0),
        'node_rule': 'interior',
        'c': 0.5,
        'delta': None,
        'beta': 1.0,
        'betas': (1.0,),
        'mu': 1.0,
        'omega': 1e-4,
        'sigma_floor': 1e-5,
    },
}

# Sweep protocol
SIGMA_START = 1.0
POWER_DECAY = 0.9
LEVEL_DECAY = 0.9 ** 5
M_POWER = 1000
M_LEVEL = 500
N_LEVEL = 100
POWER_ABORT = 0.99
LEVEL_ABORT = 0.01
WINDOW_FACTOR = 10.0

# Quick preset (desk-scale runs)
QUICK_M_POWER = 200
QUICK_M_LEVEL = 100
QUICK_N_LEVEL = 20

# Gamma search
GAMMA_LOG10_MIN = -8.0
GAMMA_LOG10_MAX = 12.0
GAMMA_COARSE_POINTS = 81
GAMMA_REFINE_TOL = 1e-4

# Sample failures tolerated before a sigma-point is declared failed
MAX_FAILURE_SHARE = 0.01

# CSV column order (shared by the writer, the reader and the plots)
CSV_COLUMNS = [
    'sigma',
    'exact_unreg',
    'exact_oracle_map',
    'exact_apriori_map',
    'bound_xi',
    'emp_2sample',
    'emp_1sample',
    'emp_level',
    'gamma_mean',
    'gamma_q16',
    'gamma_q84',
    'gamma_oracle',
    'flags',
]

# Published values at N = 1024 as (value, relative tolerance).
# A tolerance of None marks a value `verify` reports with its deviation but never fails.
# Keyed by (problem, beta); rho is keyed by problem.
GOLDEN_FEATURE_VALUES = {
    (PROBLEM_DECONVOLUTION, 5.0): (0.285843, 1e-3),
    (PROBLEM_DECONVOLUTION, 1.0): (0.629367, 1e-3),
    (PROBLEM_DIFFERENTIATION, 3.0): (0.473619, 1e-3),
    (PROBLEM_DIFFERENTIATION, 1.0): (0.655476, None),
    (PROBLEM_HEAT, 1.0): (0.643260, None),
}
GOLDEN_RHO = {
    PROBLEM_DECONVOLUTION: (16.2959, 1e-2),
    PROBLEM_DIFFERENTIATION: (5764.93, None),
    PROBLEM_HEAT: (7.23614, None),
}
