"""2D Grid-World scenario generator.

A width x height grid with one goal cell and a set of trap cells. Four
actions (up/down/left/right); moving off the grid stays in place. The agent
picks, with probability p_toward, uniformly among directions that strictly
decrease the Manhattan distance to the goal, and with the remaining
probability uniformly among all four. Rewards attach to *entering* the goal
or a trap. Entering the goal teleports to a uniformly random cell on the next
transition, which keeps the chain in a single ergodic class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .chains import substream_rng
from .policy_eval import FiniteMdp, InducedChain, MdpError, Policy

Cell = tuple[int, int]

# (dx, dy) per action: up, down, left, right
_MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))


@dataclass(frozen=True)
class GridSpec:
    """Scenario description; goal and traps derive from the seed when omitted."""

    width: int = 20
    height: int = 20
    beta: float = 0.9
    seed: int = 0
    n_traps: int = 30
    reward_goal: float = 1.0
    reward_trap: float = -0.2
    p_toward: float = 0.95
    goal: Optional[Cell] = None
    traps: Optional[frozenset[Cell]] = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.width * self.height < 2:
            raise MdpError("grid needs at least two cells")
        if not (0.0 < self.p_toward <= 1.0):
            raise MdpError("p_toward must lie in (0, 1]")
        if self.n_traps < 0 or self.n_traps > self.width * self.height - 1:
            raise MdpError("too many traps for the grid")
        if self.traps is not None:
            object.__setattr__(self, "traps", frozenset(tuple(c) for c in self.traps))
        if self.goal is not None:
            object.__setattr__(self, "goal", tuple(self.goal))

    @property
    def n_states(self) -> int:
        return self.width * self.height

    def cell_index(self, cell: Cell) -> int:
        x, y = cell
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise MdpError(f"cell {cell} out of bounds")
        return y * self.width + x

    def resolve_layout(self) -> tuple[Cell, frozenset[Cell]]:
        """Goal and trap placement, drawn from the scenario seed when omitted."""
        rng = substream_rng(self.seed, 0)
        cells = [(x, y) for y in range(self.height) for x in range(self.width)]
        goal = self.goal
        if goal is None:
            goal = cells[int(rng.integers(len(cells)))]
        else:
            self.cell_index(goal)
        traps = self.traps
        if traps is None:
            others = [c for c in cells if c != goal]
            picks = rng.choice(len(others), size=self.n_traps, replace=False)
            traps = frozenset(others[int(i)] for i in picks)
        else:
            for c in traps:
                self.cell_index(c)
        if goal in traps:
            raise MdpError("goal cell may not be a trap")
        return goal, traps


def build(spec: GridSpec) -> tuple[FiniteMdp, Policy]:
    """Assemble the MDP and the goal-seeking policy for a scenario."""
    goal, traps = spec.resolve_layout()
    n, w, h = spec.n_states, spec.width, spec.height
    goal_idx = spec.cell_index(goal)

    enter_reward = np.zeros(n)
    enter_reward[goal_idx] = spec.reward_goal
    for c in traps:
        enter_reward[spec.cell_index(c)] = spec.reward_trap

    trans = np.zeros((n, n, 4))
    reward = np.zeros((n, n, 4))
    nu = np.zeros((n, 4))
    uniform_random = (1.0 - spec.p_toward) / 4.0

    for y in range(h):
        for x in range(w):
            s = y * w + x
            dist = abs(x - goal[0]) + abs(y - goal[1])
            improving = []
            dests = []
            for a, (dx, dy) in enumerate(_MOVES):
                nx, ny = x + dx, y + dy
                if not (0 <= nx < w and 0 <= ny < h):
                    nx, ny = x, y  # off-grid moves stay in place
                dests.append(ny * w + nx)
                if abs(nx - goal[0]) + abs(ny - goal[1]) < dist:
                    improving.append(a)
            if improving:
                nu[s] = uniform_random
                nu[s, improving] += spec.p_toward / len(improving)
            else:
                nu[s] = 0.25  # at the goal every direction ties
            if s == goal_idx:
                # teleport: the next state is uniform regardless of the action
                trans[s, :, :] = 1.0 / n
                reward[s, :, :] = enter_reward[:, None]
            else:
                for a, d in enumerate(dests):
                    trans[s, d, a] += 1.0
                    reward[s, d, a] = enter_reward[d]

    mdp = FiniteMdp(n_states=n, n_actions=4, trans=trans, reward=reward, beta=spec.beta)
    return mdp, Policy(nu=nu)


def sample_trajectory(chain: InducedChain, start: int, steps: int,
                      seed: int) -> Iterator[tuple[int, int, float]]:
    """Lazily yield (s, s_next, r) transitions of the induced chain."""
    n = chain.P.shape[0]
    if not (0 <= start < n):
        raise MdpError(f"start state {start} out of range")
    cum = np.cumsum(chain.P, axis=1)
    cum[:, -1] = 1.0
    rng = substream_rng(seed, 0)
    s = int(start)
    for _ in range(steps):
        s_next = int(np.searchsorted(cum[s], rng.random(), side="right"))
        yield (s, s_next, float(chain.reward_pair[s, s_next]))
        s = s_next


def random_projection_features(n_states: int, dim: int, seed: int) -> np.ndarray:
    """Orthonormalized Gaussian feature matrix for inexact-feature studies."""
    if not (1 <= dim <= n_states):
        raise MdpError("feature dimension must lie in [1, n_states]")
    rng = substream_rng(seed, 1)
    g = rng.standard_normal((n_states, dim))
    q, _ = np.linalg.qr(g)
    return q[:, :dim]
