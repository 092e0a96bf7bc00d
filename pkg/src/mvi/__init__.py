"""Solvers for stochastic variational inequalities under Markovian noise.

Plain, skipped-sampling, and operator-extrapolated projected iterations with
the full catalog of published stepsize policies, a policy-evaluation reduction
for finite MDPs with linear features, a Grid-World benchmark generator, and a
configuration-driven experiment CLI.
"""

from .chains import (BatchSpec, MarkovOracle, MixingParams, batch_operator,
                     fit_mixing, probe_bias_decay, robust_tau, skip_collect,
                     spawn_streams, substream_rng, tau_lower_bound)
from .geometry import (Ball, FeasibleRegion, OperatorPair, ProblemParams, Vec,
                       WholeSpace, bregman, prox_step, residual)
from .schedules import (ConfigError, StepSchedule, make_schedule, schedule_eval)
from .solvers import (DivergenceError, SolverConfig, SolverRun, TracePoint,
                      ctd_step, ftd_step, planned_iterations, robust_output,
                      run_solver, td_step)

__all__ = [
    "Ball", "BatchSpec", "ConfigError", "DivergenceError", "FeasibleRegion",
    "MarkovOracle", "MixingParams", "OperatorPair", "ProblemParams",
    "SolverConfig", "SolverRun", "StepSchedule", "TracePoint", "Vec",
    "WholeSpace", "batch_operator", "bregman", "ctd_step", "fit_mixing",
    "ftd_step", "make_schedule", "planned_iterations", "probe_bias_decay",
    "prox_step", "residual", "robust_output", "robust_tau", "run_solver",
    "schedule_eval", "skip_collect", "spawn_streams", "substream_rng",
    "td_step", "tau_lower_bound",
]

__version__ = "0.1.0"
