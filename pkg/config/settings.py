import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


class Config:
    """Integrator and study configuration"""

    # Reference solutions
    REFERENCE_CACHE_DIR = os.getenv('MERK_REFERENCE_CACHE', '.merk_cache')
    REFERENCE_REFINEMENT = 20  # h_ref = smallest tested h / 20

    # Study output
    OUTPUT_DIR = os.getenv('MERK_OUTPUT_DIR', 'results')
    LOG_LEVEL = os.getenv('MERK_LOG_LEVEL', 'INFO')
    DEFAULT_JOBS = int(os.getenv('MERK_JOBS', 1))

    # Oracle limits
    ORACLE_MAX_DIMENSION = 64
    PHI_MAX_ORDER = 8
    ORACLE_MAX_DEGREE = 7

    # Rate fitting
    FLOOR_CUTOFF_EXACT = 1e-13  # analytic / expm references
    FLOOR_CUTOFF_FINE = 1e-11  # fine Runge-Kutta references
    STEP_COUNT_TOLERANCE = 1e-9

    # m-sweep
    MSWEEP_ENVELOPE_FACTOR = 1.5
    MSWEEP_M_GRID = (5, 10, 25, 50, 75, 85, 100, 125)
