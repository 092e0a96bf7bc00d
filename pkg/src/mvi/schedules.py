"""Stepsize policies: one variant per published rule, evaluated as pure functions.

Every variant maps (t, problem constants, tau) to the tuple
(gamma_t, theta_t, lambda_t, region override, batch override, epoch boundary).
Diminishing and index-resetting variants share the quadratic weight
theta_t = (t + t0)(t + t0 + 1) with gamma_t = 2 / (mu (t0 + t - 1)); constant
variants use geometric weights with a q*log(k)/(mu*k) cap. t0 and epoch
lengths are rounded up to integers; warmup cutoffs ceil(t0^2) use the
unrounded t0.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Ball, FeasibleRegion, ProblemParams


class ConfigError(ValueError):
    """Inconsistent or incomplete solver/schedule configuration."""


RESTART_FACTOR = 2.0 * math.sqrt(2.0) - 1.0


@dataclass(frozen=True)
class StepInfo:
    gamma: float
    theta: float
    lam: float
    region: Optional[FeasibleRegion] = None  # None: use the problem region
    batch_m: Optional[int] = None            # None: use the run's batch spec
    epoch_boundary: bool = False
    epoch: int = 1
    t_local: int = 1


def _ceil(x: float) -> int:
    return int(math.ceil(x - 1e-9))


def _require_mu(p: ProblemParams, variant: str) -> None:
    if not p.mu > 0:
        raise ConfigError(f"{variant} requires mu > 0")


def _check_t(t: int) -> None:
    if t < 1:
        raise ConfigError("iteration index t starts at 1")


def _diminishing(t_local: int, t0: int, mu: float, with_extrapolation: bool) -> tuple[float, float, float]:
    gamma = 2.0 / (mu * (t0 + t_local - 1))
    theta = float(t_local + t0) * (t_local + t0 + 1)
    if not with_extrapolation or t_local == 1:
        lam = 0.0
    else:
        # algebraically reduced theta_{t-1} gamma_{t-1} / (theta_t gamma_t)
        a = t_local + t0 - 1
        lam = (a * a) / float((a - 1) * (a + 2))
    return gamma, theta, lam


def _q_branch(k: int, q: float, mu: float) -> float:
    if k < 2:
        return math.inf
    return q * math.log(k) / (mu * k)


def _log_clamped(arg: float) -> float:
    return math.log(max(arg, 1.0))


class StepSchedule:
    """Base class; concrete variants are frozen dataclasses below."""

    algorithm = "td"
    name = "base"

    def eval(self, t: int, params: ProblemParams, tau: int) -> StepInfo:  # pragma: no cover
        raise NotImplementedError


def schedule_eval(schedule: StepSchedule, t: int, params: ProblemParams, tau: int) -> StepInfo:
    """Pure evaluation of a stepsize policy at global iteration t."""
    return schedule.eval(t, params, tau)


# ---------------------------------------------------------------------------
# TD family
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TdDiminishing(StepSchedule):
    algorithm = "td"
    name = "td_diminishing"
    t0_override: Optional[float] = None

    def t0(self, params: ProblemParams, tau: int) -> int:
        _require_mu(params, self.name)
        if self.t0_override is not None:
            return _ceil(self.t0_override)
        raw = (tau + 1) * (184.0 * params.lip_bar ** 2 + 16.0 * params.varsigma ** 2) / (3.0 * params.mu ** 2)
        return _ceil(raw)

    def eval(self, t, params, tau):
        _check_t(t)
        gamma, theta, _ = _diminishing(t, self.t0(params, tau), params.mu, False)
        return StepInfo(gamma=gamma, theta=theta, lam=0.0, t_local=t)


@dataclass(frozen=True)
class TdConstant(StepSchedule):
    algorithm = "td"
    name = "td_constant"
    k: int = 0
    v1: float = 1.0

    def _gamma(self, params: ProblemParams, tau: int) -> float:
        _require_mu(params, self.name)
        if self.k < 1:
            raise ConfigError("td_constant requires the horizon k >= 1")
        mu, lb, vs = params.mu, params.lip_bar, params.varsigma
        g1 = 3.0 * mu / ((tau + 1) * (92.0 * lb ** 2 + 8.0 * vs ** 2))
        noise = (tau + 1) * (4.0 * params.sigma ** 2 + 3.0 * params.f_star_norm ** 2)
        if noise <= 0.0 or self.k < 2:
            return g1
        m_const = self._m_const(params, tau, g1)
        q = 2.0 * (1.0 + _log_clamped(2.0 * mu ** 2 * m_const * self.v1 / noise) / math.log(self.k))
        return min(g1, _q_branch(self.k, q, mu))

    def _m_const(self, params: ProblemParams, tau: int, gamma: float) -> float:
        # transient amplification constant; conservative surrogate 1 when the
        # mixing constants are unknown (it only shifts a logarithmic term)
        if params.c_mix is None or params.rho_mix is None:
            return 1.0
        th = 1.0 + params.mu * gamma
        geo = sum((th * params.rho_mix) ** j for j in range(tau))
        return 1.0 + 2.0 * gamma * params.c_mix * geo \
            + 4.0 * params.lip_bar ** 2 * (th ** (tau + 1) - 1.0) / params.mu ** 2

    def eval(self, t, params, tau):
        _check_t(t)
        gamma = self._gamma(params, tau)
        theta = (1.0 + params.mu * gamma) ** t
        return StepInfo(gamma=gamma, theta=theta, lam=0.0, t_local=t)


# ---------------------------------------------------------------------------
# CTD family
# ---------------------------------------------------------------------------

def _ctd_t0(params: ProblemParams) -> int:
    raw = max(8.0 * params.lip ** 2 / params.mu ** 2,
              16.0 * params.varsigma ** 2 / params.mu ** 2)
    return _ceil(raw)


@dataclass(frozen=True)
class CtdDiminishing(StepSchedule):
    algorithm = "ctd"
    name = "ctd_diminishing"
    t0_override: Optional[float] = None

    def t0(self, params: ProblemParams) -> int:
        _require_mu(params, self.name)
        return _ceil(self.t0_override) if self.t0_override is not None else _ctd_t0(params)

    def eval(self, t, params, tau):
        _check_t(t)
        gamma, theta, _ = _diminishing(t, self.t0(params), params.mu, False)
        return StepInfo(gamma=gamma, theta=theta, lam=0.0, t_local=t)


@dataclass(frozen=True)
class CtdConstant(StepSchedule):
    algorithm = "ctd"
    name = "ctd_constant"
    k: int = 0
    v1: float = 1.0

    def _gamma(self, params: ProblemParams) -> float:
        _require_mu(params, self.name)
        if self.k < 1:
            raise ConfigError("ctd_constant requires the horizon k >= 1")
        mu = params.mu
        branches = [mu / (6.0 * params.lip ** 2)]
        if params.varsigma > 0:
            branches.append(mu / (8.0 * params.varsigma ** 2))
        if params.sigma > 0 and self.k >= 2:
            q = 2.0 * (1.0 + _log_clamped(mu ** 2 * self.v1 / params.sigma ** 2) / math.log(self.k))
            branches.append(_q_branch(self.k, q, mu))
        return min(branches)

    def eval(self, t, params, tau):
        _check_t(t)
        gamma = self._gamma(params)
        theta = (1.0 + params.mu * gamma) ** t
        return StepInfo(gamma=gamma, theta=theta, lam=0.0, t_local=t)


_EPOCH_CACHE: dict = {}


def _epoch_split(t: int, schedule, params) -> tuple[int, int, bool]:
    """Map a global index to (epoch, local index, boundary flag).

    Cumulative epoch boundaries are memoized per (schedule, params) pair;
    both are frozen value objects, so the cache is sound.
    """
    key = (schedule, params)
    ends = _EPOCH_CACHE.get(key)
    if ends is None:
        ends = _EPOCH_CACHE[key] = [0]
    while t > ends[-1]:
        s = len(ends)
        ks = schedule.epoch_length(s, params)
        if ks < 1:
            raise ConfigError("epoch length must be >= 1")
        ends.append(ends[-1] + ks)
    s = bisect_left(ends, t, lo=1)
    t_local = t - ends[s - 1]
    return s, t_local, t_local == 1


@dataclass(frozen=True)
class CtdRestart(StepSchedule):
    algorithm = "ctd"
    name = "ctd_restart"
    v1: float = 1.0
    t0_override: Optional[float] = None

    def t0(self, params: ProblemParams) -> int:
        _require_mu(params, self.name)
        return _ceil(self.t0_override) if self.t0_override is not None else _ctd_t0(params)

    def epoch_length(self, s: int, params: ProblemParams) -> int:
        t0 = self.t0(params)
        noise = 3.0 * 2.0 ** (s + 2) * params.sigma ** 2 / (params.mu ** 2 * self.v1)
        return _ceil(max(RESTART_FACTOR * t0 + 4.0, noise))

    def eval(self, t, params, tau):
        _check_t(t)
        epoch, t_local, boundary = _epoch_split(t, self, params)
        gamma, theta, _ = _diminishing(t_local, self.t0(params), params.mu, False)
        return StepInfo(gamma=gamma, theta=theta, lam=0.0,
                        epoch_boundary=boundary, epoch=epoch, t_local=t_local)


# ---------------------------------------------------------------------------
# FTD family
# ---------------------------------------------------------------------------

def _ftd_noise(params: ProblemParams, variant: str) -> float:
    """sigma^2 + varsigma^2 * D_X^2, requiring the diameter only when it matters."""
    if params.varsigma <= 0:
        return params.sigma ** 2
    if params.diam is None:
        raise ConfigError(f"{variant} requires the region diameter 'diam' when varsigma > 0")
    return params.sigma ** 2 + params.varsigma ** 2 * params.diam ** 2


@dataclass(frozen=True)
class FtdDiminishing(StepSchedule):
    algorithm = "ftd"
    name = "ftd_diminishing"
    t0_override: Optional[float] = None

    def t0(self, params: ProblemParams) -> int:
        _require_mu(params, self.name)
        if self.t0_override is not None:
            return _ceil(self.t0_override)
        return _ceil(8.0 * params.lip / params.mu)

    def eval(self, t, params, tau):
        _check_t(t)
        gamma, theta, lam = _diminishing(t, self.t0(params), params.mu, True)
        return StepInfo(gamma=gamma, theta=theta, lam=lam, t_local=t)


@dataclass(frozen=True)
class FtdConstant(StepSchedule):
    algorithm = "ftd"
    name = "ftd_constant"
    k: int = 0
    v1: float = 1.0

    def _gamma(self, params: ProblemParams) -> float:
        _require_mu(params, self.name)
        if self.k < 1:
            raise ConfigError("ftd_constant requires the horizon k >= 1")
        mu = params.mu
        g1 = 1.0 / (4.0 * params.lip)
        noise = _ftd_noise(params, self.name)
        if noise <= 0.0 or self.k < 2:
            return g1
        q = 1.5 * (1.0 + _log_clamped(mu ** 2 * self.v1 / noise) / math.log(self.k))
        return min(g1, _q_branch(self.k, q, mu))

    def eval(self, t, params, tau):
        _check_t(t)
        gamma = self._gamma(params)
        theta = (4.0 * params.mu * gamma / 3.0 + 1.0) ** t
        lam = 3.0 / (4.0 * params.mu * gamma + 3.0)
        if t == 1:
            lam = 0.0
        return StepInfo(gamma=gamma, theta=theta, lam=lam, t_local=t)


@dataclass(frozen=True)
class FtdRestart(StepSchedule):
    algorithm = "ftd"
    name = "ftd_restart"
    v1: float = 1.0
    t0_override: Optional[float] = None

    def t0(self, params: ProblemParams) -> int:
        _require_mu(params, self.name)
        if self.t0_override is not None:
            return _ceil(self.t0_override)
        return _ceil(8.0 * params.lip / params.mu)

    def epoch_length(self, s: int, params: ProblemParams) -> int:
        t0 = self.t0(params)
        noise = 5.0 * 2.0 ** (s + 4) * _ftd_noise(params, self.name) / (params.mu ** 2 * self.v1)
        return _ceil(max(RESTART_FACTOR * t0 + 4.0, noise))

    def eval(self, t, params, tau):
        _check_t(t)
        epoch, t_local, boundary = _epoch_split(t, self, params)
        gamma, theta, lam = _diminishing(t_local, self.t0(params), params.mu, True)
        return StepInfo(gamma=gamma, theta=theta, lam=lam,
                        epoch_boundary=boundary, epoch=epoch, t_local=t_local)


@dataclass(frozen=True)
class FtdProjectedWarmup(StepSchedule):
    """Diminishing FTD that projects onto a ball of radius G for ceil(t0^2) steps."""

    algorithm = "ftd"
    name = "ftd_projected_warmup"

    def _t0_raw(self, params: ProblemParams) -> float:
        _require_mu(params, self.name)
        return max(8.0 * params.lip / params.mu, 11.0 * params.varsigma / params.mu)

    def eval(self, t, params, tau):
        _check_t(t)
        t0_raw = self._t0_raw(params)
        gamma, theta, lam = _diminishing(t, _ceil(t0_raw), params.mu, True)
        region = None
        if t <= _ceil(t0_raw ** 2):
            if params.ball_g is None:
                raise ConfigError("ftd_projected_warmup requires the solution bound 'ball_g'")
            region = _WarmupBall(params.ball_g)
        return StepInfo(gamma=gamma, theta=theta, lam=lam, region=region, t_local=t)


class _WarmupBall:
    """Origin-centered ball built lazily once the iterate dimension is known."""

    def __init__(self, radius: float):
        self.radius = radius
        self._ball: Optional[Ball] = None

    def bind(self, dim: int) -> Ball:
        if self._ball is None or self._ball.center.shape[0] != dim:
            self._ball = Ball(center=np.zeros(dim), radius=self.radius)
        return self._ball


@dataclass(frozen=True)
class FtdBatchWarmup(StepSchedule):
    """Diminishing FTD that averages ceil(varsigma/mu) streams for ceil(t0^2) steps."""

    algorithm = "ftd"
    name = "ftd_batch_warmup"

    def _t0_raw(self, params: ProblemParams) -> float:
        _require_mu(params, self.name)
        return max(8.0 * params.lip / params.mu, 60.0 * params.varsigma / params.mu)

    def eval(self, t, params, tau):
        _check_t(t)
        t0_raw = self._t0_raw(params)
        gamma, theta, lam = _diminishing(t, _ceil(t0_raw), params.mu, True)
        m = max(1, _ceil(params.varsigma / params.mu)) if t <= _ceil(t0_raw ** 2) else 1
        return StepInfo(gamma=gamma, theta=theta, lam=lam, batch_m=m, t_local=t)


@dataclass(frozen=True)
class RobustConstant(StepSchedule):
    """Constant-step extrapolated run for mu ~ 0 with batch m = k + 1.

    theta = lambda = 1; the designated output is a uniformly drawn iterate.
    """

    algorithm = "ftd"
    name = "robust_constant"
    k: int = 0

    def gamma(self, params: ProblemParams) -> float:
        if self.k < 2:
            raise ConfigError("robust_constant requires a horizon k >= 2")
        g = 1.0 / (4.0 * params.lip)
        if params.varsigma > 0:
            g = min(g, 1.0 / (8.0 * math.sqrt(2.0) * params.varsigma))
        return g

    def eval(self, t, params, tau):
        _check_t(t)
        lam = 0.0 if t == 1 else 1.0
        return StepInfo(gamma=self.gamma(params), theta=1.0, lam=lam,
                        batch_m=self.k + 1, t_local=t)


SCHEDULE_ALIASES = {
    "td-1": "td_diminishing",
    "td-2": "td_constant",
    "ctd-1": "ctd_diminishing",
    "ctd-2": "ctd_constant",
    "ctd-3": "ctd_restart",
    "ftd-1": "ftd_diminishing",
    "ftd-2": "ftd_constant",
    "ftd-3": "ftd_restart",
    "ftd-4": "robust_constant",
}

_VARIANTS = {
    "td_diminishing": TdDiminishing,
    "td_constant": TdConstant,
    "ctd_diminishing": CtdDiminishing,
    "ctd_constant": CtdConstant,
    "ctd_restart": CtdRestart,
    "ftd_diminishing": FtdDiminishing,
    "ftd_constant": FtdConstant,
    "ftd_restart": FtdRestart,
    "ftd_projected_warmup": FtdProjectedWarmup,
    "ftd_batch_warmup": FtdBatchWarmup,
    "robust_constant": RobustConstant,
}


def make_schedule(name: str, **kwargs) -> StepSchedule:
    """Build a schedule by canonical name or numbered alias."""
    canonical = SCHEDULE_ALIASES.get(name, name).replace("-", "_")
    cls = _VARIANTS.get(canonical)
    if cls is None:
        raise ConfigError(f"unknown schedule variant {name!r}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad arguments for schedule {canonical}: {exc}") from None
