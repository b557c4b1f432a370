"""Constants for the levyrkhs package."""

from __future__ import annotations

import math

# Tolerances
GRID_TOL = 1e-9
MASS_TOL = 1e-10
NEGATIVE_DENSITY_TOL = 1e-8
RANK_RTOL = 1e-12
PSD_CLAMP_RTOL = 1e-12
PSD_NEGATIVE_RTOL = 1e-8
SYMMETRY_RTOL = 1e-10

# Initial condition of the FPE generator: N(0, 0.25) renormalized on the domain
DEFAULT_IC_STD = 0.5

# Diffusion coefficient of the FPE experiments
DEFAULT_SIGMA = 1.0

# Jump laws paired with the built-in Levy densities
GAUSSIAN_DECAY_RATE = math.sqrt(math.pi)
GAUSSIAN_DECAY_JUMP_STD = math.sqrt(0.5)
EXPONENTIAL_DECAY_RATE = 1.0
EXPONENTIAL_DECAY_JUMP_SCALE = 0.5

# Ensemble simulation and KDE
DEFAULT_CHUNK_SIZE = 65536
DEFAULT_BANDWIDTH_CONSTANT = 0.5
DEFAULT_SAVGOL_WINDOW = 11
DEFAULT_SAVGOL_ORDER = 3
KDE_EXACT_LIMIT = 20_000_000
KDE_BIN_REFINE = 4
KDE_KERNEL_CUTOFF = 6.0

# Bilevel optimizer
DEFAULT_ETA0 = 0.004
DEFAULT_IOTA = 0.99
DEFAULT_MAX_ITERS = 500
DEFAULT_GRAD_EPS = 1e-8
DEFAULT_STOP_WINDOW = 20
DEFAULT_EPS_GAMMA = 1e-4
DEFAULT_EPS_LOSS = 1e-8
DEFAULT_GAMMA0 = 0.0
DEFAULT_V0 = 0.0

# Baseline selectors
DEFAULT_LAMBDA_MIN_EXP = -12.0
DEFAULT_LAMBDA_MAX_EXP = 2.0
DEFAULT_LAMBDA_NUM = 141

# Studies
DEFAULT_STUDY_MESHES = (0.01, 0.02, 0.025, 0.05)
DEFAULT_STUDY_BANDWIDTH_CONSTANTS = (0.25, 0.5, 1.0, 2.0)

# Artifacts
CSV_FLOAT_FORMAT = "%.17g"
RUN_ID_LENGTH = 12
