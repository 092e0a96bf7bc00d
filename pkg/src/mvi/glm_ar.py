"""Signal estimation with AR(1) regressors feeding a generalized linear model.

The regressor chain is eta_{t+1} = B eta_t + eps_t with a stable B and
truncated-Gaussian innovations (finite support; 6-sigma rejection keeps the
moment distortion below 1e-8). Labels satisfy E[y | eta] = f(eta^T x*). The
stochastic operator is eta f(eta^T x) - eta y; for the identity link the mean
operator is linear, F(x) = X (x - x*), with X the stationary covariance from
the discrete Lyapunov equation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .chains import FunctionOracle, MarkovOracle, substream_rng
from .geometry import Ball, OperatorPair, Vec, as_vec

LINKS: dict[str, Callable[[float], float]] = {
    "identity": lambda s: s,
    "ramp": lambda s: max(s, 0.0),
}

_TRUNC = 6.0


class GlmSetupError(ValueError):
    """Unstable regressor matrix, bad covariance, or failed monotonicity check."""


@dataclass(frozen=True)
class ArGlmProblem:
    b_mat: np.ndarray
    noise_cov: np.ndarray
    x_star: Vec
    link: str = "identity"
    label_noise_sd: float = 0.0

    def __post_init__(self):
        b = np.asarray(self.b_mat, dtype=float)
        q = np.asarray(self.noise_cov, dtype=float)
        xs = as_vec(self.x_star)
        n = xs.shape[0]
        if b.shape != (n, n) or q.shape != (n, n):
            raise GlmSetupError("b_mat and noise_cov must be square and match x_star")
        if np.max(np.abs(np.linalg.eigvals(b))) >= 1.0:
            raise GlmSetupError("regressor matrix must have spectral radius < 1")
        try:
            chol = np.linalg.cholesky(q)
        except np.linalg.LinAlgError:
            raise GlmSetupError("noise covariance must be symmetric positive definite") from None
        if self.link not in LINKS:
            raise GlmSetupError(f"unknown link {self.link!r}; shipped: {sorted(LINKS)}")
        if self.label_noise_sd < 0:
            raise GlmSetupError("label_noise_sd must be >= 0")
        object.__setattr__(self, "b_mat", b)
        object.__setattr__(self, "noise_cov", q)
        object.__setattr__(self, "x_star", xs)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.x_star.shape[0]

    def link_fn(self) -> Callable[[float], float]:
        return LINKS[self.link]

    def stationary_cov(self) -> np.ndarray:
        """Fixed point of the covariance recursion X = B X B^T + Q."""
        return solve_discrete_lyapunov(self.b_mat, self.noise_cov)

    def exact_identity(self) -> Callable[[Vec], Vec]:
        """Mean operator for the identity link: F(x) = X (x - x*)."""
        if self.link != "identity":
            raise GlmSetupError("closed-form mean operator exists only for the identity link")
        cov = self.stationary_cov()
        x_star = self.x_star
        return lambda x: cov @ (np.asarray(x, float) - x_star)

    def operator_pair(self) -> OperatorPair:
        exact = self.exact_identity() if self.link == "identity" else None
        return OperatorPair(stochastic=lambda x, s: glm_operator(self, x, s),
                            exact=exact)


def _truncated_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    z = rng.standard_normal(size)
    while np.any(np.abs(z) > _TRUNC):
        bad = np.abs(z) > _TRUNC
        z[bad] = rng.standard_normal(int(bad.sum()))
    return z


def ar_step(problem: ArGlmProblem, state: Vec, rng: np.random.Generator):
    """Advance the regressor chain; emit the new (eta, y) observation."""
    eps = problem._chol @ _truncated_normal(rng, problem.dim)
    eta = problem.b_mat @ state + eps
    y = problem.link_fn()(float(eta @ problem.x_star))
    if problem.label_noise_sd > 0:
        y += problem.label_noise_sd * float(_truncated_normal(rng, 1)[0])
    return eta, (eta, y)


def glm_operator(problem: ArGlmProblem, x: Vec, sample) -> Vec:
    """Stochastic operator eta f(eta^T x) - eta y."""
    eta, y = sample
    return eta * (problem.link_fn()(float(eta @ x)) - y)


def glm_oracle(problem: ArGlmProblem, seed: int, stream: int = 0,
               start: Optional[Vec] = None) -> MarkovOracle:
    """Seeded oracle over the regressor chain, started at eta = 0 by default."""
    rng = substream_rng(seed, stream)
    state = np.zeros(problem.dim) if start is None else as_vec(start, problem.dim)

    def step_fn(st, gen):
        return ar_step(problem, st, gen)

    def eval_fn(x, sample):
        return glm_operator(problem, x, sample)

    return FunctionOracle(step_fn, eval_fn, state, rng)


def verify_monotone_on_ball(problem: ArGlmProblem, radius: float,
                            n_points: int = 64, n_samples: int = 4000,
                            seed: int = 0, min_modulus: float = 0.0) -> float:
    """Empirical generalized-monotonicity modulus on a ball around x*.

    Estimates <F(x), x - x*> / ||x - x*||^2 at random points with a
    Monte-Carlo mean operator (shared stationary sample across points) and
    returns the minimum ratio. Raises when the estimate does not exceed
    min_modulus: nonlinear links guarantee useful moduli only locally.
    """
    rng = substream_rng(seed, 73)
    oracle = glm_oracle(problem, seed=seed, stream=91)
    for _ in range(200):  # discard the burn-in of the eta chain
        oracle.step()
    etas = []
    for _ in range(n_samples):
        eta, _y = oracle.step()
        etas.append(eta)
    etas = np.array(etas)
    f_link = problem.link_fn()

    def mean_op(x):
        inner_x = etas @ x
        inner_s = etas @ problem.x_star
        fx = np.fromiter((f_link(v) for v in inner_x), float, len(inner_x))
        fs = np.fromiter((f_link(v) for v in inner_s), float, len(inner_s))
        return (etas * (fx - fs)[:, None]).mean(axis=0)

    worst = np.inf
    for _ in range(n_points):
        u = rng.standard_normal(problem.dim)
        u *= radius * rng.random() ** 0.5 / np.linalg.norm(u)
        x = problem.x_star + u
        ratio = float(mean_op(x) @ u) / float(u @ u)
        worst = min(worst, ratio)
    if not worst > min_modulus:
        raise GlmSetupError(
            f"empirical monotonicity failed on Ball(x*, {radius}): min ratio {worst:.3e} "
            f"<= required {min_modulus:.3e}; shrink the region or switch links")
    return worst


def make_ramp_region(problem: ArGlmProblem, radius: float, **kwargs) -> Ball:
    """Feasible ball for the ramp link, validated for monotonicity at setup."""
    verify_monotone_on_ball(problem, radius, **kwargs)
    return Ball(center=problem.x_star.copy(), radius=radius)
