"""
Centralized defaults for run configs, solvers and the optimizer.
Process-level overrides come from the environment via Django settings.
"""
import os

DEFAULT_ACTIVATION = "tanh"
DEFAULT_CLASSIFIER = "identity"
DEFAULT_ALPHAS = (1.0, 1.0, 1.0, 1.0)
DEFAULT_TAUS = (1.0, 1.0)

# Optimizer
DEFAULT_MAX_ITERS = 500
DEFAULT_GRAD_TOL = 1e-6
DEFAULT_ARMIJO_C1 = 1e-4
DEFAULT_BACKTRACK = 0.5
DEFAULT_INITIAL_STEP = 1.0
DEFAULT_STEP_GROWTH = 2.0
DEFAULT_MOMENTUM = 0.0
DEFAULT_MAX_BACKTRACKS = 60
DEFAULT_MULTISTART = 1
DEFAULT_INIT_AMPLITUDE = 0.1
OPTIMIZE_METHODS = ("gradient-descent", "lbfgs")
DEFAULT_OPTIMIZE_METHOD = "gradient-descent"
LBFGS_MEMORY = 20

# ODE solver
SOLVER_METHODS = ("explicit-euler", "midpoint", "rk4")
DEFAULT_SOLVER_METHOD = "rk4"
DEFAULT_SOLVER_STEPS = 256
REFERENCE_MIN_STEPS = 1024
REFERENCE_STEPS_PER_LAYER = 16

# Ladder / training
DEFAULT_N_VALUES = (4, 8, 16, 32, 64)
DEFAULT_CONTINUUM_NODES = 129
DEFAULT_CONTINUUM_METHOD = "lbfgs"
DEFAULT_CONTINUUM_MAX_ITERS = 5000
DEFAULT_TRAIN_N = 16

# Finite-difference checks
DEFAULT_FD_STEP = 1e-5
DEFAULT_FD_STEPS = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)

COMMANDS = (
    "train-discrete",
    "train-continuum",
    "ladder",
    "euler-bound",
    "grad-check",
    "recovery-check",
    "morrey-sweep",
    "rate-fit",
)

CSV_FLOAT_FORMAT = "%.17g"

DEFAULT_OUTPUT_DIR = os.environ.get("DEEPLIMIT_OUTPUT_DIR", "runs")
