"""Initialization-controlled gradient descent for underdetermined linear
systems: closed-form limit prediction, controlled initialization, rank-one
row-space initializations that collapse hidden layers to O(n) iterations,
kernel-part stability analysis, and Riemannian descent for orthogonal
networks.
"""

from .deep import (LayerStack, StabilityDecomposition, baseline_init,
                   check_bioptimality2, check_coupled_outer, coupled_init,
                   deep_gradients, gd_step_deep, run_compact2, run_deep,
                   stability_bound, stability_decompose)
from .estimators import (CompactOneHiddenRegressor, CompactTwoHiddenRegressor,
                         ControlledGDRegressor, MinNormGDRegressor,
                         RiemannianLinearRegressor)
from .experiments import (LR_GRID, PathProjection, ZigzagReport, detect_zigzag,
                          kernel_perturbed_init, lr_grid_search, project_paths,
                          run_stability_experiment, scaled_spectrum_problem)
from .flat import controlled_init, gd_step, predict_limit, run_gd
from .hidden import (BioptReport, CompactState, HiddenPair, PairState,
                     biopt_init, check_bioptimality, check_rowspace_outer,
                     gd_step_hidden, run_biopt_reduced, run_compact1, run_hidden)
from .io import load_svmlight, read_trace_csv, write_trace_csv
from .iterate import GdConfig, IterateTrace, Termination, TraceRecord
from .linalg import (MatrixNorms, ProblemInstance, SvdSplit, min_norm_solution,
                     norms, random_orthogonal, random_problem, svd_split)
from .rng import RngSpec
from .stiefel import (TrialStats, default_riemannian_alpha, orthogonality_defect,
                      qr_retract, range_distance, riemannian_step, run_riemannian,
                      run_trials, tangent_project)

__version__ = "0.1.0"
