"""The three iterations (plain, skipped, extrapolated) and the run harness.

All three updates share one prox step; they differ only in how the stochastic
operator value is obtained: the plain update consumes one transition per
stream, the skipped update advances each stream tau transitions and keeps the
last sample, and the extrapolated update additionally adds
lambda_t (g_t - g_{t-1}) using the cached previous operator value. A run is
single-owner sequential state; parallelism lives across independent streams
inside one update and across independently seeded runs in the harness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .chains import BatchSpec, MarkovOracle, batch_operator, substream_rng
from .geometry import (FeasibleRegion, ProblemParams, Vec, WholeSpace, as_vec,
                       bregman, residual)
from .schedules import (ConfigError, RobustConstant, StepSchedule, _WarmupBall,
                        schedule_eval)

DIVERGENCE_NORM = 1e12


class DivergenceError(RuntimeError):
    """Iterate exceeded the divergence guard or became non-finite."""

    def __init__(self, message: str, run: "SolverRun"):
        super().__init__(message)
        self.run = run


@dataclass
class TracePoint:
    t: int
    samples_consumed: int
    gamma: float
    lam: float
    error_to_star: Optional[float] = None
    residual: Optional[float] = None
    extra: dict = field(default_factory=dict)


@dataclass
class SolverRun:
    """Mutable iterate state plus the recorded trace."""

    x_curr: Vec
    x_prev: Vec
    g_prev: Optional[Vec] = None
    t: int = 0
    t_local: int = 0
    epoch: int = 1
    samples_consumed: int = 0
    trace: list[TracePoint] = field(default_factory=list)
    robust_index: Optional[int] = None
    robust_x: Optional[Vec] = None
    horizon: Optional[int] = None


def _oracle_list(oracles) -> Sequence[MarkovOracle]:
    if isinstance(oracles, MarkovOracle):
        return (oracles,)
    return tuple(oracles)


def _apply(run: SolverRun, direction: Vec, gamma: float, region: FeasibleRegion,
           check_contraction: bool = False) -> None:
    # a single NaN/inf propagates into the squared norm, so one pass suffices
    d_sq = float(direction @ direction)
    if not np.isfinite(d_sq):
        raise DivergenceError(
            f"non-finite operator value at update {run.t + 1} "
            f"(samples consumed: {run.samples_consumed})", run)
    x_new = region.project(run.x_curr - gamma * direction)
    if check_contraction:
        step_norm = float(np.linalg.norm(x_new - run.x_curr))
        if step_norm > gamma * math.sqrt(d_sq) * (1.0 + 1e-9) + 1e-12:
            raise AssertionError(
                f"contraction violated at t={run.t + 1}: ||x+ - x|| = {step_norm} "
                f"> gamma * ||g|| = {gamma * math.sqrt(d_sq)}")
    n_sq = float(x_new @ x_new)
    if not np.isfinite(n_sq) or n_sq > DIVERGENCE_NORM ** 2:
        run.x_prev, run.x_curr = run.x_curr, x_new
        run.t += 1
        raise DivergenceError(
            f"iterate norm {math.sqrt(n_sq) if np.isfinite(n_sq) else float('inf'):.3e} "
            f"exceeded the divergence guard at update {run.t}", run)
    run.x_prev = run.x_curr
    run.x_curr = x_new
    run.t += 1


def td_step(run: SolverRun, oracle: MarkovOracle, gamma: float,
            region: FeasibleRegion, check_contraction: bool = False) -> SolverRun:
    """One plain update: a single transition, then a projected operator step."""
    g = oracle.evaluate(run.x_curr, oracle.step())
    run.samples_consumed += 1
    _apply(run, g, gamma, region, check_contraction)
    return run


def ctd_step(run: SolverRun, oracles, gamma: float, tau: int,
             region: FeasibleRegion, check_contraction: bool = False) -> SolverRun:
    """One skipped update: tau transitions per stream, last samples averaged."""
    oracles = _oracle_list(oracles)
    g = batch_operator(run.x_curr, oracles, tau)
    run.samples_consumed += tau * len(oracles)
    _apply(run, g, gamma, region, check_contraction)
    return run


def ftd_step(run: SolverRun, oracles, gamma: float, lam: float, tau: int,
             region: FeasibleRegion, check_contraction: bool = False) -> SolverRun:
    """One extrapolated update; caches the operator value for the next step.

    At the first update (no cached value) the extrapolation term vanishes by
    the x_0 = x_1 initialization convention, as it does whenever lam == 0.
    """
    oracles = _oracle_list(oracles)
    g = batch_operator(run.x_curr, oracles, tau)
    run.samples_consumed += tau * len(oracles)
    if lam != 0.0 and run.g_prev is not None:
        direction = g + lam * (g - run.g_prev)
    else:
        direction = g
    _apply(run, direction, gamma, region, check_contraction)
    run.g_prev = g
    return run


@dataclass
class SolverConfig:
    """Everything run_solver needs; oracle_factory(i) builds stream i."""

    algorithm: str
    schedule: StepSchedule
    oracle_factory: Callable[[int], MarkovOracle]
    params: ProblemParams
    x1: Vec
    tau: int = 1
    region: FeasibleRegion = field(default_factory=WholeSpace)
    batch: BatchSpec = field(default_factory=BatchSpec)
    max_iters: Optional[int] = None
    max_samples: Optional[int] = None
    trace_stride: Union[int, str] = "auto"
    x_star: Optional[Vec] = None
    exact: Optional[Callable[[Vec], Vec]] = None
    extra_metrics: Optional[Mapping[str, Callable[[Vec], float]]] = None
    seed: int = 0
    check_contraction: bool = False
    force_batch: Optional[int] = None  # beats schedule- and spec-level batch sizes

    def validate(self) -> None:
        if self.algorithm not in ("td", "ctd", "ftd"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.schedule.algorithm != self.algorithm:
            raise ConfigError(
                f"schedule {self.schedule.name} belongs to the "
                f"{self.schedule.algorithm} family, not {self.algorithm}")
        if isinstance(self.schedule, RobustConstant) and self.algorithm != "ftd":
            raise ConfigError("robust_constant runs only with the ftd algorithm")
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")
        if self.max_iters is None and self.max_samples is None:
            raise ConfigError("set max_iters or max_samples")
        if self.max_iters is not None and self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.max_samples is not None and self.max_samples < 0:
            raise ConfigError("max_samples must be >= 0")


class _TraceGate:
    """Dense recording up to 1000 points, then logarithmic thinning.

    An integer stride records every stride-th update instead; a collection of
    indices records exactly those updates.
    """

    def __init__(self, stride):
        self.every = None
        self.at = None
        if stride == "auto":
            pass
        elif isinstance(stride, (int, np.integer)):
            if int(stride) < 1:
                raise ConfigError("trace stride must be >= 1")
            self.every = int(stride)
        else:
            self.at = frozenset(int(t) for t in stride)
        self._next_log = None

    def want(self, t: int) -> bool:
        if self.at is not None:
            return t in self.at
        if self.every is not None:
            return t % self.every == 0
        if t <= 1000:
            return True
        if self._next_log is None:
            self._next_log = 1020
        if t >= self._next_log:
            self._next_log = max(int(self._next_log * 1.02) + 1, t + 1)
            return True
        return False


def planned_iterations(config: SolverConfig) -> int:
    """Updates the budget allows, resolving per-update sample costs upfront."""
    config.validate()
    if config.max_iters is not None and config.max_samples is None:
        return config.max_iters
    budget = config.max_samples
    t, used = 0, 0
    while True:
        info = schedule_eval(config.schedule, t + 1, config.params, config.tau)
        if config.force_batch is not None:
            m = config.force_batch
        elif info.batch_m is not None:
            m = info.batch_m
        else:
            m = config.batch.size_at(t + 1)
        tau_t = 1 if config.algorithm == "td" else config.tau
        cost = m * tau_t
        if used + cost > budget:
            break
        used += cost
        t += 1
        if config.max_iters is not None and t >= config.max_iters:
            break
    return t


def run_solver(config: SolverConfig) -> SolverRun:
    """Run the configured iteration until the sample or iteration budget ends.

    The trace is recorded at the configured stride plus the final update.
    Robust runs draw the designated output index r uniformly from {2,...,k}
    up front (from a substream of the run seed) and capture x_{r+1} on the
    fly, so memory stays flat.
    """
    config.validate()
    x1 = as_vec(config.x1)
    run = SolverRun(x_curr=x1.copy(), x_prev=x1.copy())
    streams: list[MarkovOracle] = []

    robust = isinstance(config.schedule, RobustConstant)
    if robust:
        k = config.schedule.k
        run.horizon = k
        rng = substream_rng(config.seed, 104729)
        run.robust_index = int(2 + rng.integers(k - 1))  # uniform on {2,...,k}

    gate = _TraceGate(config.trace_stride)
    budget_samples = config.max_samples
    budget_iters = config.max_iters
    metrics = config.extra_metrics or {}
    tau_t = 1 if config.algorithm == "td" else config.tau

    def record(info):
        point = TracePoint(t=run.t, samples_consumed=run.samples_consumed,
                           gamma=info.gamma, lam=info.lam)
        if config.x_star is not None:
            point.error_to_star = bregman(run.x_curr, config.x_star)
        if config.exact is not None:
            point.residual = residual(run.x_curr, config.exact(run.x_curr),
                                      config.region)
        for name, fn in metrics.items():
            point.extra[name] = float(fn(run.x_curr))
        run.trace.append(point)

    last_info = None
    while True:
        t_next = run.t + 1
        if budget_iters is not None and t_next > budget_iters:
            break
        info = schedule_eval(config.schedule, t_next, config.params, config.tau)
        if config.force_batch is not None:
            m = config.force_batch
        elif info.batch_m is not None:
            m = info.batch_m
        else:
            m = config.batch.size_at(t_next)
        cost = m * tau_t
        if budget_samples is not None and run.samples_consumed + cost > budget_samples:
            break
        while len(streams) < m:
            streams.append(config.oracle_factory(len(streams)))
        active = streams[:m]

        region = config.region
        if info.region is not None:
            region = info.region.bind(x1.shape[0]) if isinstance(info.region, _WarmupBall) else info.region
        if info.epoch_boundary and info.epoch > run.epoch:
            run.g_prev = None  # extrapolation restarts with the epoch
        run.epoch, run.t_local = info.epoch, info.t_local

        if config.algorithm == "td":
            if m == 1:
                td_step(run, active[0], info.gamma, region, config.check_contraction)
            else:
                ctd_step(run, active, info.gamma, 1, region, config.check_contraction)
        elif config.algorithm == "ctd":
            ctd_step(run, active, info.gamma, config.tau, region, config.check_contraction)
        else:
            ftd_step(run, active, info.gamma, info.lam, config.tau, region,
                     config.check_contraction)

        last_info = info
        if robust and run.t == run.robust_index:
            run.robust_x = run.x_curr.copy()
        if gate.want(run.t):
            record(info)

    if last_info is not None and (not run.trace or run.trace[-1].t != run.t):
        record(last_info)
    return run


def robust_output(run: SolverRun, exact: Optional[Callable[[Vec], Vec]] = None,
                  oracle_factory: Optional[Callable[[int], MarkovOracle]] = None,
                  region: Optional[FeasibleRegion] = None,
                  batch: Optional[int] = None, tau: int = 1) -> tuple[Vec, float]:
    """Designated output of a robust run and its residual estimate.

    The output is the iterate captured at the uniformly drawn index. The
    residual uses the exact operator when available, otherwise a large-batch
    stochastic estimate (batch >= k + 1 fresh streams).
    """
    if run.horizon is None or run.robust_index is None:
        raise ConfigError("robust_output requires a run produced with robust_constant")
    if run.horizon < 2:
        raise ConfigError("robust output needs a horizon k >= 2")
    if run.robust_x is None:
        raise ConfigError("run ended before the designated output index; raise the budget")
    region = region if region is not None else WholeSpace()
    x_out = run.robust_x
    if exact is not None:
        return x_out, residual(x_out, exact(x_out), region)
    if oracle_factory is None:
        raise ConfigError("robust_output needs the exact operator or an oracle factory")
    m = batch if batch is not None else run.horizon + 1
    if m < run.horizon + 1:
        raise ConfigError("stochastic residual estimate needs batch >= k + 1")
    streams = [oracle_factory(i) for i in range(m)]
    g = batch_operator(x_out, streams, tau)
    return x_out, residual(x_out, g, region)
