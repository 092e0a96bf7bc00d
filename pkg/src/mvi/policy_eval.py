"""Policy evaluation compiled to a strongly monotone variational inequality.

A finite MDP plus a stationary policy induces a single-ergodic-class chain
(P, R, pi). With a full-column-rank feature map Phi the value-estimation
problem becomes the root-finding VI for
    F(theta) = Phi^T M (Phi theta - R - beta P Phi theta),   M = diag(pi),
whose modulus is mu = lambda_min(Phi^T M Phi) (1 - beta). The one-sample
operator is the TD(0) semi-gradient on a transition (s, s', r).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chains import FiniteChainOracle, substream_rng
from .geometry import OperatorPair, Vec, as_vec


class MdpError(ValueError):
    """Malformed MDP, policy, feature map, or a chain without a single ergodic class."""


@dataclass(frozen=True)
class FiniteMdp:
    """Finite MDP with transition tensor trans[i, j, a] and rewards reward[i, j, a]."""

    n_states: int
    n_actions: int
    trans: np.ndarray
    reward: np.ndarray
    beta: float

    def __post_init__(self):
        t = np.asarray(self.trans, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        shape = (self.n_states, self.n_states, self.n_actions)
        if t.shape != shape or r.shape != shape:
            raise MdpError(f"trans/reward must have shape {shape}")
        if np.any(t < -1e-15):
            raise MdpError("negative transition probability")
        sums = t.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-12):
            raise MdpError("transition rows must sum to 1 for every (state, action)")
        if not (0.0 < self.beta < 1.0):
            raise MdpError("discount beta must lie in (0, 1)")
        object.__setattr__(self, "trans", t)
        object.__setattr__(self, "reward", r)


@dataclass(frozen=True)
class Policy:
    """Stationary randomized policy nu[s, a]."""

    nu: np.ndarray

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float)
        if nu.ndim != 2:
            raise MdpError("policy matrix must be 2-D")
        if np.any(nu < -1e-15) or not np.allclose(nu.sum(axis=1), 1.0, atol=1e-12):
            raise MdpError("policy rows must be distributions")
        object.__setattr__(self, "nu", nu)


@dataclass(frozen=True)
class InducedChain:
    """Chain induced by a policy, with pair-conditional expected rewards."""

    P: np.ndarray
    R: np.ndarray
    pi: np.ndarray
    reward_pair: np.ndarray


def stationary_distribution(P: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Stationary law of a row-stochastic matrix with a single ergodic class.

    Direct left-null-space solve for n <= 2000, power iteration above.
    Raises MdpError when the eigenvalue 1 is not simple or the solution is
    not strictly positive.
    """
    n = P.shape[0]
    eigvals = np.linalg.eigvals(P.T)
    n_unit = int(np.sum(np.abs(eigvals - 1.0) < 1e-8))
    if n_unit != 1:
        raise MdpError("chain not uniformly ergodic: eigenvalue 1 is not simple")
    if n <= 2000:
        a = np.vstack([P.T - np.eye(n), np.ones((1, n))])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    else:
        pi = np.full(n, 1.0 / n)
        for _ in range(100000):
            nxt = pi @ P
            if np.max(np.abs(nxt - pi)) < tol:
                pi = nxt
                break
            pi = nxt
        pi = pi / pi.sum()
    if np.any(pi <= 1e-14):
        raise MdpError("chain not uniformly ergodic: a state has zero stationary mass")
    if np.max(np.abs(pi @ P - pi)) > 1e-10:
        raise MdpError("stationary distribution solve failed to converge")
    return pi


def induce_chain(mdp: FiniteMdp, policy: Policy) -> InducedChain:
    """Compile (MDP, policy) into (P, R, pi) plus pair-conditional rewards."""
    if policy.nu.shape != (mdp.n_states, mdp.n_actions):
        raise MdpError("policy shape does not match the MDP")
    P = np.einsum("ia,ija->ij", policy.nu, mdp.trans)
    flow = np.einsum("ia,ija->ij", policy.nu, mdp.trans * mdp.reward)
    R = flow.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        reward_pair = np.where(P > 0, flow / np.where(P > 0, P, 1.0), 0.0)
    pi = stationary_distribution(P)
    return InducedChain(P=P, R=R, pi=pi, reward_pair=reward_pair)


def exact_value(chain: InducedChain, beta: float) -> Vec:
    """Solve the fixed-point linear system (I - beta P) V = R."""
    if not (0.0 < beta < 1.0):
        raise MdpError("discount beta must lie in (0, 1)")
    n = chain.P.shape[0]
    v = np.linalg.solve(np.eye(n) - beta * chain.P, chain.R)
    resid = np.linalg.norm((np.eye(n) - beta * chain.P) @ v - chain.R)
    if resid > 1e-10 * max(1.0, np.linalg.norm(chain.R)):
        raise MdpError(f"value solve residual {resid:.3e} too large")
    return v


@dataclass(frozen=True)
class PolicyEvalVi:
    """Compiled VI: operator matrices, exact solution, and problem constants.

    mean_mat is Phi^T M (I - beta P) Phi and mean_vec is Phi^T M R, so the
    exact operator is F(theta) = mean_mat @ theta - mean_vec.
    """

    chain: InducedChain
    phi: np.ndarray
    beta: float
    sigma_mat: np.ndarray
    mean_mat: np.ndarray
    mean_vec: np.ndarray
    theta_star: Vec
    mu: float
    lip: float
    lip_bar: float
    v_exact: Vec

    @property
    def dim(self) -> int:
        return self.phi.shape[1]

    def exact(self, theta: Vec) -> Vec:
        return self.mean_mat @ theta - self.mean_vec

    def operator_pair(self) -> OperatorPair:
        return OperatorPair(
            stochastic=lambda theta, sample: stochastic_operator(self, theta, sample),
            exact=self.exact)


def compile_vi(chain: InducedChain, phi: np.ndarray, beta: float) -> PolicyEvalVi:
    """Compile a chain and feature matrix into the policy-evaluation VI."""
    phi = np.asarray(phi, dtype=float)
    n = chain.P.shape[0]
    if phi.ndim != 2 or phi.shape[0] != n:
        raise MdpError(f"feature matrix must be ({n}, d)")
    svals = np.linalg.svd(phi, compute_uv=False)
    if svals[-1] <= 1e-8:
        raise MdpError("feature matrix is rank deficient (smallest singular value <= 1e-8)")
    m_diag = chain.pi
    sigma_mat = phi.T @ (m_diag[:, None] * phi)
    mean_mat = phi.T @ (m_diag[:, None] * (phi - beta * (chain.P @ phi)))
    mean_vec = phi.T @ (m_diag * chain.R)
    theta_star = np.linalg.solve(mean_mat, mean_vec)
    mu = float(np.linalg.eigvalsh(sigma_mat)[0] * (1.0 - beta))
    lip = float(np.linalg.svd(mean_mat, compute_uv=False)[0])
    lip_bar = max(lip, _pointwise_lipschitz(chain, phi, beta))
    v = exact_value(chain, beta)
    return PolicyEvalVi(chain=chain, phi=phi, beta=beta, sigma_mat=sigma_mat,
                        mean_mat=mean_mat, mean_vec=mean_vec, theta_star=theta_star,
                        mu=mu, lip=lip, lip_bar=lip_bar, v_exact=v)


def _pointwise_lipschitz(chain: InducedChain, phi: np.ndarray, beta: float) -> float:
    """Uniform-in-sample constant: max over reachable (s, s') of the rank-one slope."""
    norms_phi = np.linalg.norm(phi, axis=1)
    best = 0.0
    rows, cols = np.nonzero(chain.P > 0)
    for s, s2 in zip(rows, cols):
        best = max(best, norms_phi[s] * float(np.linalg.norm(phi[s] - beta * phi[s2])))
    return best


def stochastic_operator(vi: PolicyEvalVi, theta: Vec, transition) -> Vec:
    """TD(0) semi-gradient at one transition (s, s_next, r)."""
    s, s_next, r = transition
    n = vi.phi.shape[0]
    if not (0 <= s < n and 0 <= s_next < n):
        raise MdpError(f"state index out of range: {transition!r}")
    td_err = float(vi.phi[s] @ theta - r - vi.beta * (vi.phi[s_next] @ theta))
    return td_err * vi.phi[s]


def bellman_residual(vi: PolicyEvalVi, theta: Vec) -> float:
    """Norm of the mean operator ||F(theta)|| (whole-space residual)."""
    return float(np.linalg.norm(vi.exact(as_vec(theta, vi.dim))))


def weighted_error(vi: PolicyEvalVi, theta: Vec) -> float:
    """Stationary-weighted relative value error ||Phi theta - V||_D / ||V||_D."""
    w = vi.chain.pi
    denom = float(np.sqrt(w @ (vi.v_exact ** 2)))
    if denom <= 0:
        raise MdpError("degenerate zero value function under the weighted norm")
    diff = vi.phi @ as_vec(theta, vi.dim) - vi.v_exact
    return float(np.sqrt(w @ (diff ** 2))) / denom


def conditional_bias_exact(vi: PolicyEvalVi, theta: Vec, s_now: int, tau: int) -> Vec:
    """Closed-form conditional bias of the operator tau steps ahead of s_now.

    Phi^T (M - M_tau(s)) (I - beta P) Phi (theta - theta*), where M_tau(s) is
    the diagonal of the tau-step distribution started at s. Exact-features
    case only (Phi theta* must represent the value function).
    """
    if tau < 0:
        raise MdpError("tau must be >= 0")
    n = vi.phi.shape[0]
    row = np.zeros(n)
    row[s_now] = 1.0
    for _ in range(tau):
        row = row @ vi.chain.P
    m_diff = vi.chain.pi - row
    core = (vi.phi - vi.beta * (vi.chain.P @ vi.phi)) @ (as_vec(theta, vi.dim) - vi.theta_star)
    return vi.phi.T @ (m_diff * core)


def chain_oracle(vi: PolicyEvalVi, seed: int, stream: int = 0,
                 start: Optional[int] = None) -> FiniteChainOracle:
    """Seeded transition-stream oracle evaluating the TD(0) semi-gradient.

    The start state defaults to a draw from the stationary distribution, so
    independent streams are stationary from the first sample.
    """
    rng = substream_rng(seed, stream)
    if start is None:
        start = int(rng.choice(vi.chain.P.shape[0], p=vi.chain.pi))
    phi, beta = vi.phi, vi.beta

    def eval_fn(x, sample):
        s, s_next, r = sample
        td_err = float(phi[s] @ x - r - beta * (phi[s_next] @ x))
        return td_err * phi[s]

    return FiniteChainOracle(vi.chain.P, vi.chain.reward_pair, start, eval_fn, rng)


def stationary_variance(vi: PolicyEvalVi, theta: Vec) -> float:
    """Exact E_pi ||F~(theta, xi) - F(theta)||^2 by transition enumeration."""
    theta = as_vec(theta, vi.dim)
    f_mean = vi.exact(theta)
    total = 0.0
    rows, cols = np.nonzero(vi.chain.P > 0)
    weights = vi.chain.pi[rows] * vi.chain.P[rows, cols]
    for s, s2, w in zip(rows, cols, weights):
        g = stochastic_operator(vi, theta, (s, s2, vi.chain.reward_pair[s, s2]))
        d = g - f_mean
        total += w * float(d @ d)
    return total


def estimate_noise(vi: PolicyEvalVi, n_dirs: int = 8, scale: float = 1.0,
                   seed: int = 0) -> tuple[float, float]:
    """Rough (sigma, varsigma) for the compiled instance.

    The variance at theta* gives sigma^2/2; displaced points give the
    state-dependent coefficient. Users may override both.
    """
    base = stationary_variance(vi, vi.theta_star)
    sigma = float(np.sqrt(2.0 * base))
    rng = substream_rng(seed, 997)
    worst = 0.0
    for _ in range(n_dirs):
        u = rng.standard_normal(vi.dim)
        u *= scale / np.linalg.norm(u)
        var = stationary_variance(vi, vi.theta_star + u)
        worst = max(worst, 2.0 * max(var - base, 0.0) / (scale ** 2))
    return sigma, float(np.sqrt(worst))


# ---------------------------------------------------------------------------
# Plain-text MDP interchange format
# ---------------------------------------------------------------------------

def dump_mdp_text(mdp: FiniteMdp, path: str) -> None:
    """Write the sparse triple format: header 'n m beta', rows 'i j a p r'."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{mdp.n_states} {mdp.n_actions} {mdp.beta!r}\n")
        idx_i, idx_j, idx_a = np.nonzero(mdp.trans > 0)
        for i, j, a in zip(idx_i, idx_j, idx_a):
            p = float(mdp.trans[i, j, a])
            r = float(mdp.reward[i, j, a])
            fh.write(f"{i} {j} {a} {p!r} {r!r}\n")


def load_mdp_text(path: str) -> FiniteMdp:
    """Read the sparse triple format written by dump_mdp_text."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise MdpError("bad MDP header; expected 'n m beta'")
        n, m, beta = int(header[0]), int(header[1]), float(header[2])
        trans = np.zeros((n, n, m))
        reward = np.zeros((n, n, m))
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 5:
                raise MdpError(f"bad MDP triple on line {lineno}")
            i, j, a = int(parts[0]), int(parts[1]), int(parts[2])
            trans[i, j, a] = float(parts[3])
            reward[i, j, a] = float(parts[4])
    return FiniteMdp(n_states=n, n_actions=m, trans=trans, reward=reward, beta=beta)


def write_value_csv(v: Vec, path: str) -> None:
    """Export an exact value function as CSV rows (state, value)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("state,value\n")
        for s, val in enumerate(v):
            fh.write(f"{s},{float(val)!r}\n")
