"""Constructive solver for delay equations with state-dependent delay.

The IVP ``x'(t) = G(t, x_t)``, ``x = Phi`` on ``[-h, 0]`` is solved as a fixed
point of ``v -> I_rho G(., pi_alpha((v + Phi_hat)_.))`` in an exponentially
weighted Sobolev space, with the slope bound alpha doubled until the final time
is reached or the solution blows up.
"""

from .errors import (DelayOutOfRange, DimensionMismatch, KernelDomain, LagOutOfRange,
                     NoConvergence, NotInValpha, OutOfDomain, ParseError, RhoOverflow, SddeError,
                     StageInconsistency, ValidationError)
from .grid_fn import (Grid, GridFunction, Prehistory, deriv_sup_norm, eval_at, h1_norm, l2_norm,
                      read_csv, restrict, sobolev_embedding_check, sup_norm, weighted_h1_norm,
                      weighted_l2_norm, write_csv)
from .operators import (HistorySegment, ValphaSpec, discrete_derivative, discrete_h1_norm,
                        eval_lipschitz_check, history_at, in_valpha, integrate_rho,
                        project_valpha, theta_norm_estimate)
from .rhs import (ConstantDelaySpec, IntegroDiffSpec, RhsModel, StateDelaySpec, exp_kernel,
                  linear_constant_delay, linear_integro, linear_state_delay, make_academic,
                  make_constant_delay, make_integro, make_quadratic_zero_lag, make_state_delay)
from .solver import (ExtendedPrehistory, SolutionRecord, SolverConfig, extend_prehistory,
                     gamma_step, residual, select_rho, solve_global, solve_local)
from .verify import DependenceReport, certify_bounds, dependence_on_datum, dependence_on_rhs

__version__ = "0.1.0"
