"""Euclidean geometry layer: feasible regions, prox/projection steps, residuals.

Everything here is a pure function over immutable value objects, safe to share
across workers. The prox distance is fixed to the Euclidean half-squared norm;
regions are the whole space or a ball (the only two any stepsize policy uses).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Vec = np.ndarray

# Boundary/feasibility slack for ball membership tests, relative to the radius.
_BALL_TOL = 1e-9


class GeometryError(ValueError):
    """Dimension mismatch, non-finite input, or infeasible point."""


def as_vec(x, dim: Optional[int] = None) -> Vec:
    """Validate and return a finite 1-D float64 vector."""
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise GeometryError(f"expected a 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise GeometryError(f"dimension mismatch: expected {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise GeometryError("non-finite component in vector")
    return v


@dataclass(frozen=True)
class WholeSpace:
    """Unconstrained region."""

    def project(self, y: Vec) -> Vec:
        return y

    def contains(self, x: Vec) -> bool:
        return True


@dataclass(frozen=True)
class Ball:
    """Closed Euclidean ball {x : ||x - center|| <= radius}."""

    center: Vec
    radius: float

    def __post_init__(self):
        c = as_vec(self.center)
        object.__setattr__(self, "center", c)
        if not self.radius > 0:
            raise GeometryError(f"ball radius must be > 0, got {self.radius}")

    def project(self, y: Vec) -> Vec:
        d = y - self.center
        n = float(np.linalg.norm(d))
        if n <= self.radius:
            return y
        return self.center + (self.radius / n) * d

    def contains(self, x: Vec) -> bool:
        return float(np.linalg.norm(x - self.center)) <= self.radius * (1.0 + _BALL_TOL)


FeasibleRegion = WholeSpace | Ball


@dataclass(frozen=True)
class ProblemParams:
    """Problem constants consumed by every stepsize policy.

    mu          generalized monotonicity modulus (>= 0; 0 only for robust mode)
    lip         Lipschitz constant L of the mean operator
    lip_bar     max of L and the pointwise stochastic constant (TD only)
    sigma       constant variance term
    varsigma    state-dependent noise coefficient
    c_mix       geometric bias constant C (optional)
    rho_mix     geometric bias rate in (0, 1) (optional)
    diam        feasible-region diameter bound (optional)
    ball_g      a-priori bound on ||x*|| for projected warmup (optional)
    f_star_norm ||F(x*)||; 0 for policy evaluation
    """

    mu: float
    lip: float
    lip_bar: Optional[float] = None
    sigma: float = 0.0
    varsigma: float = 0.0
    c_mix: Optional[float] = None
    rho_mix: Optional[float] = None
    diam: Optional[float] = None
    ball_g: Optional[float] = None
    f_star_norm: float = 0.0

    def __post_init__(self):
        if self.mu < 0:
            raise GeometryError("mu must be >= 0")
        if not self.lip > 0:
            raise GeometryError("lip must be > 0")
        if self.lip_bar is None:
            object.__setattr__(self, "lip_bar", self.lip)
        if self.mu > self.lip * (1 + 1e-12):
            raise GeometryError(f"mu={self.mu} exceeds lip={self.lip}")
        if self.sigma < 0 or self.varsigma < 0 or self.f_star_norm < 0:
            raise GeometryError("noise constants must be >= 0")
        if self.rho_mix is not None and not (0.0 < self.rho_mix < 1.0):
            raise GeometryError("rho_mix must lie strictly inside (0, 1)")
        if self.c_mix is not None and not self.c_mix > 0:
            raise GeometryError("c_mix must be > 0")

    def with_lip(self, lip: float) -> "ProblemParams":
        """Return a copy with an overridden Lipschitz constant (tuning hook).

        Both lip and lip_bar are replaced; nothing else changes.
        """
        from dataclasses import replace

        if lip < self.mu:
            raise GeometryError(f"lip override {lip} is below mu={self.mu}")
        return replace(self, lip=lip, lip_bar=lip)


@dataclass(frozen=True)
class OperatorPair:
    """Mean operator (optional) plus its stochastic one-sample evaluation."""

    stochastic: Callable[[Vec, object], Vec]
    exact: Optional[Callable[[Vec], Vec]] = None


def prox_step(x: Vec, g: Vec, gamma: float, region: FeasibleRegion) -> Vec:
    """One projected step: the region-projection of x - gamma*g.

    With the Euclidean prox distance this is exactly the argmin of
    gamma*<g, .> + 0.5*||x - .||^2 over the region.
    """
    x = as_vec(x)
    g = as_vec(g, dim=x.shape[0])
    if not gamma >= 0:
        raise GeometryError(f"gamma must be >= 0, got {gamma}")
    return region.project(x - gamma * g)


def bregman(x: Vec, y: Vec) -> float:
    """Half squared Euclidean distance 0.5*||x - y||^2."""
    x = as_vec(x)
    y = as_vec(y, dim=x.shape[0])
    d = x - y
    return 0.5 * float(d @ d)


def residual(x: Vec, fx: Vec, region: FeasibleRegion) -> float:
    """Distance of fx to the negative normal cone of the region at x.

    Whole space: plain norm ||fx||. Ball, x strictly interior: ||fx||.
    Ball, x on the boundary: the normal cone is the outward radial ray, so the
    negative-radial component of fx is absorbed when that shrinks the norm and
    only the tangential part remains.
    """
    x = as_vec(x)
    fx = as_vec(fx, dim=x.shape[0])
    if isinstance(region, WholeSpace):
        return float(np.linalg.norm(fx))
    r = float(np.linalg.norm(x - region.center))
    if r > region.radius * (1.0 + _BALL_TOL):
        raise GeometryError("residual evaluated at a point outside the region")
    if r < region.radius * (1.0 - _BALL_TOL):
        return float(np.linalg.norm(fx))
    u = (x - region.center) / r
    radial = float(fx @ u)
    if radial >= 0:
        # fx has no component along the inward ray to cancel
        return float(np.linalg.norm(fx))
    tangential = fx - radial * u
    return float(np.linalg.norm(tangential))
