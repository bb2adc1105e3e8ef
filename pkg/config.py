import os

# Simulation Configuration (overridable via environment variables)
TS_S = float(os.environ.get('BOMPC_TS_S', 10.0))            # sampling time [s]
EPISODE_STEPS = int(os.environ.get('BOMPC_STEPS', 240))     # M, 40 simulated minutes at 10 s
INITIAL_SOC = float(os.environ.get('BOMPC_Z0', 0.1))
U1_FEEDBACK = os.environ.get('BOMPC_U1_FEEDBACK', 'estimated')  # controller carries its own u1

# Cell Configuration (the fixture table only carries the SOC-dependent curves)
ETA = 1.0                   # Coulombic efficiency
CAPACITY_AS = 2.0 * 3600.0  # 2 Ah
I_MAX_A = 6.0
V_T_MIN = 2.5
V_T_MAX = 4.2
CELL_TABLE = os.environ.get(
    'BOMPC_CELL_TABLE',
    os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data', 'cell_nmc_synthetic.csv'),
)

# MPC Configuration
HORIZON = int(os.environ.get('BOMPC_HORIZON', 10))
SOFT_WEIGHT = 1e4           # λ on squared voltage violation [1/V²]
INPUT_REG = 1e-8            # ε on Σ I², tie-break at the fully charged optimum
SOLVER_MAX_ITER = 200
SOLVER_GTOL = 1e-7
SOLVER_FTOL = 1e-12
FD_REL_STEP = 1e-6

# Closed-loop objective
C1_WEIGHT = float(os.environ.get('BOMPC_C1', 1e-3))
SOC_MILESTONES = (0.8, 0.9, 0.95)

# Model-plant mismatch
MISMATCH_SEED = int(os.environ.get('BOMPC_MISMATCH_SEED', 3))
MISMATCH_DELTA = float(os.environ.get('BOMPC_MISMATCH_DELTA', 0.5))

# Bayesian optimization
BO_BUDGET = int(os.environ.get('BOMPC_BO_BUDGET', 50))
BO_INIT = int(os.environ.get('BOMPC_BO_INIT', 5))
BO_SEED = int(os.environ.get('BOMPC_BO_SEED', 0))
EI_MARGIN = 0.01            # ξ_EI in standardized target units
ACQ_SAMPLES = 512
ACQ_TOP = 8
ACQ_REFINE_ITERS = 50
GP_RESTARTS = 16
GP_JITTER = 1e-9            # relative to signal variance

# Case-study grids
SPLINE_KNOTS = 7
BACKOFF_MAX_V = 0.5
MODEL_SCALE_BOUNDS = (0.25, 4.0)

# Application Configuration
APP_NAME = "bompc"
LOG_LEVEL = os.environ.get('BOMPC_LOG', 'INFO')

# ── Logging Setup ─────────────────────────────────────────────
import logging


def setup_logging():
    """Configure the application-wide logger."""
    logger = logging.getLogger(APP_NAME)
    if logger.handlers:
        return logger  # Already configured
    logger.setLevel(getattr(logging, LOG_LEVEL.upper(), logging.INFO))
    fmt = logging.Formatter('[%(asctime)s] %(name)s.%(module)s: %(message)s', datefmt='%H:%M:%S')
    sh = logging.StreamHandler()
    sh.setFormatter(fmt)
    logger.addHandler(sh)
    return logger

log = setup_logging()
