"""Markovian sampling infrastructure.

A MarkovOracle owns a single chain: ``step()`` advances one transition and
returns the emitted sample, ``skip(tau)`` advances tau transitions and returns
the last sample only, and ``evaluate(x, sample)`` applies the stochastic
operator. Oracles are single-owner mutable state; distinct oracles may run on
distinct workers. Substreams for mini-batching are seeded from a master seed
through numpy SeedSequence spawning, which is the splittable counter-based
contract the reproducibility requirements assume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .geometry import Vec


class MixingError(ValueError):
    """Bad mixing parameters or a schedule that needs an explicit tau."""


@dataclass(frozen=True)
class MixingParams:
    """Geometric bias constants: conditional bias decays like c_mix * rho_mix^tau."""

    c_mix: float
    rho_mix: float

    def __post_init__(self):
        if not self.c_mix > 0:
            raise MixingError("c_mix must be > 0")
        if not (0.0 < self.rho_mix < 1.0):
            raise MixingError("rho_mix must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class BatchSpec:
    """Number of independent streams per update, possibly time-varying.

    schedule:
      "constant"          m streams always
      "warmup_then_one"   m streams for t <= cutoff_iters, then 1
      "horizon"           m = k + 1 streams, fixed for the whole run
    """

    m: int = 1
    schedule: str = "constant"
    cutoff_iters: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise MixingError("batch size m must be >= 1")
        if self.schedule not in ("constant", "warmup_then_one", "horizon"):
            raise MixingError(f"unknown batch schedule {self.schedule!r}")
        if self.cutoff_iters < 0:
            raise MixingError("cutoff_iters must be >= 0")

    def size_at(self, t: int) -> int:
        if self.schedule == "warmup_then_one" and t > self.cutoff_iters:
            return 1
        return self.m


class MarkovOracle:
    """Seeded stream of samples with a stochastic operator evaluation.

    Subclasses supply ``_step()``; ``skip`` defaults to repeated stepping but
    may be overridden with a law-identical shortcut (finite chains do).
    """

    def __init__(self, eval_fn: Callable[[Vec, Any], Vec], rng: np.random.Generator):
        self.eval_fn = eval_fn
        self.rng = rng
        self.transitions = 0  # chain transitions consumed so far

    def _step(self):  # pragma: no cover - abstract
        raise NotImplementedError

    def step(self):
        """Advance the chain one transition; return the emitted sample."""
        self.transitions += 1
        return self._step()

    def skip(self, tau: int):
        """Advance tau transitions; return only the last sample."""
        if tau < 1:
            raise MixingError("tau must be >= 1")
        sample = None
        for _ in range(tau):
            sample = self.step()
        return sample

    def evaluate(self, x: Vec, sample) -> Vec:
        return self.eval_fn(x, sample)


class FunctionOracle(MarkovOracle):
    """Generic oracle driven by a user step function state -> (state, sample)."""

    def __init__(self, step_fn, eval_fn, state, rng: np.random.Generator):
        super().__init__(eval_fn, rng)
        self.step_fn = step_fn
        self.state = state

    def _step(self):
        self.state, sample = self.step_fn(self.state, self.rng)
        return sample


class FiniteChainOracle(MarkovOracle):
    """Oracle over a finite-state chain with pair-conditional rewards.

    Samples are (s, s_next, r) with r the expected reward given the pair.
    ``skip(tau)`` draws the intermediate state directly from the cached
    (tau-1)-step kernel power and then performs one real transition, which has
    the same law as tau single steps and costs two uniform draws.
    """

    def __init__(self, trans: np.ndarray, reward_pair: np.ndarray, start: int,
                 eval_fn, rng: np.random.Generator):
        super().__init__(eval_fn, rng)
        self.trans = trans
        self.reward_pair = reward_pair
        self.state = int(start)
        self._cum = np.cumsum(trans, axis=1)
        self._cum[:, -1] = 1.0
        self._cum_pow: dict[int, np.ndarray] = {1: self._cum}

    def _cum_power(self, j: int) -> np.ndarray:
        cum = self._cum_pow.get(j)
        if cum is None:
            pj = np.linalg.matrix_power(self.trans, j)
            cum = np.cumsum(pj, axis=1)
            cum[:, -1] = 1.0
            self._cum_pow[j] = cum
        return cum

    def _draw(self, cum_row: np.ndarray) -> int:
        return int(np.searchsorted(cum_row, self.rng.random(), side="right"))

    def _step(self):
        s = self.state
        s_next = self._draw(self._cum[s])
        self.state = s_next
        return (s, s_next, self.reward_pair[s, s_next])

    def skip(self, tau: int):
        if tau < 1:
            raise MixingError("tau must be >= 1")
        if tau > 1:
            self.state = self._draw(self._cum_power(tau - 1)[self.state])
        self.transitions += tau
        s = self.state
        s_next = self._draw(self._cum[s])
        self.state = s_next
        return (s, s_next, self.reward_pair[s, s_next])


def substream_rng(seed: int, stream_index: int = 0) -> np.random.Generator:
    """Independent generator for (master seed, stream index)."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(stream_index))))


def spawn_streams(factory: Callable[[int], MarkovOracle], m: int) -> list[MarkovOracle]:
    """m independent oracles; the factory receives the stream index."""
    if m < 1:
        raise MixingError("need at least one stream")
    return [factory(i) for i in range(m)]


def tau_lower_bound(mu: float, params: MixingParams) -> int:
    """Minimal skip length making the geometric bias negligible next to mu.

    ceil((log(1/mu) + log(9*c_mix)) / log(1/rho_mix)), clamped to >= 1.
    """
    if mu <= 0:
        raise MixingError("robust mode requires explicit tau (mu = 0 has no lower-bound formula)")
    if mu > 1:
        raise MixingError("tau lower bound is defined for mu in (0, 1]")
    num = math.log(1.0 / mu) + math.log(9.0 * params.c_mix)
    den = math.log(1.0 / params.rho_mix)
    return max(1, math.ceil(num / den))


def robust_tau(gamma: float, params: MixingParams, k: int) -> int:
    """Skip length for robust constant-step runs: rho^tau <= 1/(16*gamma*C*(k+1))."""
    arg = 16.0 * gamma * params.c_mix * (k + 1)
    if arg <= 1.0:
        return 1
    return max(1, math.ceil(math.log(arg) / math.log(1.0 / params.rho_mix)))


def skip_collect(oracle: MarkovOracle, tau: int):
    """Advance the chain tau transitions without updating; return the last sample."""
    return oracle.skip(tau)


def batch_operator(x: Vec, oracles: Sequence[MarkovOracle], tau: int) -> Vec:
    """Mean stochastic operator value over independent streams.

    Each stream is advanced tau transitions and only its last sample is used;
    summation order is fixed by stream index.
    """
    if len(oracles) == 0:
        raise MixingError("batch_operator needs at least one oracle")
    if len(oracles) == 1:
        return oracles[0].evaluate(x, oracles[0].skip(tau))
    acc = np.array(oracles[0].evaluate(x, oracles[0].skip(tau)), dtype=float, copy=True)
    for oracle in oracles[1:]:
        acc += oracle.evaluate(x, oracle.skip(tau))
    return acc / len(oracles)


def probe_bias_decay(oracle_factory: Callable[[int], MarkovOracle],
                     exact: Callable[[Vec], Vec], x: Vec,
                     taus: Sequence[int], trials: int = 1000,
                     return_vectors: bool = False):
    """Empirical conditional-bias norms ||F(x) - E[F~(x, xi_{t+tau})]|| per tau.

    Each trial builds a fresh oracle from the factory (which fixes the
    conditioning state), advances tau raw transitions, then evaluates the
    operator on one more transition, so the evaluated sample's source state is
    exactly tau steps from the start. Diagnostic; advances step-by-step on
    purpose so it stays independent of any jump-sampling shortcut. With
    return_vectors the full bias vectors are returned instead of norms.
    """
    if trials < 1:
        raise MixingError("trials must be >= 1")
    fx = exact(x)
    out = []
    for tau in taus:
        if tau < 0:
            raise MixingError("tau must be >= 0")
        acc = np.zeros_like(fx)
        for i in range(trials):
            oracle = oracle_factory(i)
            for _ in range(tau):
                oracle.step()
            acc += oracle.evaluate(x, oracle.step())
        bias = fx - acc / trials
        out.append((int(tau), bias if return_vectors else float(np.linalg.norm(bias))))
    return out


def fit_mixing(bias_pairs: Sequence[tuple[int, float]], x: Vec, x_star: Vec) -> MixingParams:
    """Least-squares log-linear fit of bias norms against tau.

    Returns rho_mix = exp(slope) and c_mix scaled by ||x - x_star|| so that
    c_mix * rho^tau bounds the observed normalized bias. Offered as a rough
    estimate only; never applied automatically.
    """
    pts = [(t, b) for t, b in bias_pairs if b > 0]
    if len(pts) < 2:
        raise MixingError("need at least two positive bias values to fit")
    ts = np.array([t for t, _ in pts], dtype=float)
    logs = np.log([b for _, b in pts])
    slope, intercept = np.polyfit(ts, logs, 1)
    rho = float(np.exp(slope))
    rho = min(max(rho, 1e-12), 1.0 - 1e-12)
    scale = float(np.linalg.norm(np.asarray(x, float) - np.asarray(x_star, float)))
    if scale <= 0:
        raise MixingError("x and x_star coincide; bias carries no scale information")
    return MixingParams(c_mix=max(float(np.exp(intercept)) / scale, 1e-12), rho_mix=rho)
