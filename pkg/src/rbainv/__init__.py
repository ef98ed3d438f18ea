"""Transient diffusion inversion built on shared-pole rational approximants.

Forward responses, Jacobian actions and adjoint actions all reduce to one
set of complex shifted solves per model, independent of the number of time
channels, which makes the Gauss-Newton inversion embarrassingly parallel
over poles.
"""

from .forward import (EulerResult, ForwardResult, dense_expm_oracle,
                      forward_response, implicit_euler_reference,
                      response_from_pole_solutions)
from .inversion import (InversionConfig, InversionState, IterationRecord,
                        LineSearchResult, LsqrConfig, chi_squared,
                        default_lambda0, gn_step, line_search, run_inversion)
from .mesh import (AnomalySpec, Grid, Model, Problem, ProblemSpec, SourceSpec,
                   assemble_M, build_problem, build_source, dM_contract,
                   export_matrices, parse_problem_file, spectral_bound)
from .rba import (FitConfig, FitReport, PoleCollisionError, RationalApproximant,
                  TimeChannels, eval_scalar, fit_common_pole, fit_pole_sweep,
                  load_approximant, refit_residues, save_approximant, validate_fit)
from .regularization import (RegOperator, apply_sqrt, apply_sqrt_t, build_reg,
                             reg_value_grad)
from .reporting import (RunReport, TimingModel, consolidate_report,
                        fit_timing_model, pole_solution_checksum,
                        scaling_benchmark, write_run_artifacts)
from .sensitivity import JacobianOperator, TaylorReport, adjoint_test, taylor_test
from .shifted import (CacheMissError, PoleWorkerPool, ShiftedFactorCache,
                      SolveError, default_worker_count, factorize_all_poles,
                      resolve_with_cache, solve_all_poles)
from .synthetic import DataSet, NoiseSpec, load_dataset, make_dataset, save_dataset

__version__ = "0.1.0"
