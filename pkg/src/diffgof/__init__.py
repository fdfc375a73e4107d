"""Asymptotically distribution-free goodness-of-fit tests for ergodic scalar diffusions."""
from ._backend import BACKEND
from .calibrate import CriticalValueTable, get_table, load_table, quantile_table, sample_limit, save_table
from .composite import ParametricModel, corrected_cvm, mle_fit, pseudo_true_theta, r_statistic
from .errors import *  # noqa: F401,F403
from .estimate import edf, kernel_density, lte, unbiased_density
from .grid import GridPolicy, SpatialGrid
from .law import InvariantLaw, build_law, condition_integrals, distance_norms
from .model import DiffusionModel, DiffusionSpec, DriftSpec, check_conditions, ou_model, switching_model
from .simulate import RngStream, SamplePath, dump_path, load_path, simulate_path
from .stats import STATISTICS, STAT_TABLES, TestResult, compute, run_test

__version__ = "0.1.0"
