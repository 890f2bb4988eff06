VERSION = "0.4.0"

# Arms / strata
CONTROL = 0
TREATMENT = 1
ARMS = (CONTROL, TREATMENT)

# Cox partial likelihood fitting
SCORE_TOL = 1e-8
MAX_ITER = 50
MAX_HALVING = 10
SEPARATION_NORM = 50.0

# Group sequential integration engine
TOTAL_ALPHA = 0.05
POWER_RHO = 3.0
GRID_POINTS = 4001
GRID_SD = 8.0
MIN_STAGE_ALPHA = 1e-15
BOUNDARY_SEARCH = 40.0
BOUNDARY_XTOL = 1e-12
SIDES = ("two_sided", "one_sided_upper", "one_sided_lower")

# Monte Carlo trial simulation
REPLICATES = 2000
SIM_GRID_POINTS = 1001
CALIBRATION_REPLICATES = 500
CALIBRATION_GRID = 21
FAILURE_TOLERANCE = 0.005
EFFECT_POWER_TOL = 0.01
EFFECT_MAX_EVALUATIONS = 24
EFFECT_INITIAL_STEP = 0.1
NOMINAL_POWER = 0.8
PROGRESS_EVERY = 250

# RNG stream tags (one SeedSequence branch per purpose)
STREAM_OC = 0
STREAM_CALIBRATE_TIMES = 1
STREAM_CALIBRATE_EFFECT = 2

# Input / output
CSV_REQUIRED = ("id", "arm", "entry", "time", "event")
COVARIATE_PREFIX = "z"
OC_COLUMNS = ("stage", "method", "cum_rejection", "se")
METHODS = ("adjusted", "km", "cox")

# Exit codes
EXIT_CONTINUE = 0
EXIT_ERROR = 1
EXIT_REJECT = 2
