"""
Configuration file for the positive-matrix walk laboratory
"""
import os

from dotenv import load_dotenv

load_dotenv()

# Cone geometry
GEOMETRY_CONFIG = {
    'simplex_tol': 1e-12,
    'max_dim': 10,
}

# Analytic kernels
KERNEL_CONFIG = {
    'y_zero_threshold': 1e-6,
    'quadrature': 'gauss_kronrod',
    'quad_abs_tol': 1e-10,
    'quad_rel_tol': 1e-10,
    'quad_limit': 200,
    'tail_sd': 12.0,
}

# Walk simulation
WALK_CONFIG = {
    'block_size': 4096,
    'n_jobs': int(os.getenv('LAB_N_JOBS', '1')),
    'max_enumeration_words': 2 ** 20,
}

# Estimators
ESTIMATOR_CONFIG = {
    'lyapunov_target_stderr': 1e-4,
    'lyapunov_max_traj': 1_000_000,
    'burn_in': 1000,
    'stride': 10,
    'chains': 64,
    'grid_points': 513,
    'histogram_bins': 64,
    'poisson_tol': 1e-3,
    'plateau_rel': 0.01,
}

# Verification harness
HARNESS_CONFIG = {
    'tol_cell': 0.15,
    'floor': 1e-6,
    'delta_floor': 0.1,
    'min_n': 16,
    'max_rel_stderr': 0.25,
    'ks_tol': 0.03,
    'min_survivors': 10_000,
    'slope_max': -1.35,
    'bounded_ratio': 3.0,
    'duality_max_n': 2048,
    'duality_max_traj': 10_000,
    'sandwich_epsilon': 0.25,
}

# Paths
PATHS = {
    'config_dir': 'configs/',
    'results_dir': os.getenv('LAB_RESULTS_DIR', 'results/'),
}

LOG_LEVEL = os.getenv('LAB_LOG_LEVEL', 'INFO')
