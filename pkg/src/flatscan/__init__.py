"""
flatscan - second-order critical-point finding and gradient-flatness diagnostics
Newton-MR with MINRES-QLP steps, the objectives it is studied on, and the
experiment pipeline that classifies where it terminates.
"""

__version__ = '0.3.0'

from .config import (Cutoffs, ExperimentConfig, FinderConfig, SolverConfig, load_config)
from .data import Dataset, gaussian_dataset, load_csv, pca_project, shuffle_labels, zscore
from .diagnostics import (FlatnessReport, RunOutcome, classify_outcome, cokernel_residual,
                          diagnose_point, morse_index, rayleigh_flatness, relative_residual,
                          smooth_trace)
from .errors import (ConfigError, DataError, DimensionError, EigenSolverError, FlatscanError,
                     SolverBreakdown, TraceError)
from .fields import ScalarField, dense_hessian, fd_gradient, fd_hvp
from .krylov import KrylovSolution, mrqlp_solve
from .linalg import DenseSymMatrix, Spectrum, frobenius_norm, pinv_solve, sym_eig
from .models import (CriticalPointRecord, NetworkSpec, linear_ae_critical_points, network_field,
                     quartic_field, swish)
from .pipeline import (ExperimentResults, ecdf, loss_index_table, run_experiment,
                       sample_loss_uniform)
from .solvers import (IterateTrace, damped_newton, gradient_norm_min, line_search, newton_mr,
                      train_gd_momentum)
