"""Small built-in environments.

``ChainMdp`` is a deterministic left/right chain with an exact value-iteration
oracle.  ``ShapedMountainCar`` is the classic mountain-car task with a dense
reward: -2 per step, +100 on reaching the goal, plus the car's normalized
mechanical energy.
"""

from __future__ import annotations

import math
import re
from typing import Optional

import numpy as np


class EnvError(RuntimeError):
    pass


class ChainMdp:
    """Deterministic chain of ``n_states``; action 0 moves left, 1 moves right.

    Moving off either end keeps the agent in place.  Entering ``terminal``
    ends the episode.  ``rewards[s, a]`` is paid for taking ``a`` in ``s``.
    By default only the step into the rightmost (terminal) state pays 1.
    """

    n_actions = 2
    state_dim = 1

    def __init__(
        self,
        n_states: int,
        gamma: float = 0.95,
        rewards: Optional[np.ndarray] = None,
        terminal: Optional[int] = -1,
        max_steps: Optional[int] = None,
    ):
        if n_states < 1:
            raise EnvError(f"n_states must be positive, got {n_states}")
        if not 0.0 <= gamma < 1.0:
            raise EnvError(f"gamma must be in [0, 1), got {gamma}")
        self.n_states = n_states
        self.gamma = gamma
        self.max_steps = max_steps
        self.steps = 0
        self.goal_reached = False
        if terminal is not None:
            terminal = terminal % n_states
            if n_states == 1:
                raise EnvError("a single-state chain cannot have a terminal state")
        self.terminal = terminal
        if rewards is None:
            rewards = np.zeros((n_states, 2))
            if terminal is not None:
                for s in range(n_states):
                    for a in range(2):
                        if self.next_state_of(s, a) == terminal and s != terminal:
                            rewards[s, a] = 1.0
        self.rewards = np.asarray(rewards, dtype=np.float64)
        if self.rewards.shape != (n_states, 2):
            raise EnvError(f"rewards must have shape ({n_states}, 2)")
        self.obs_low = np.array([0.0])
        self.obs_high = np.array([float(max(n_states - 1, 1))])
        self.state = 0
        self.done = False

    def next_state_of(self, s: int, a: int) -> int:
        return max(s - 1, 0) if a == 0 else min(s + 1, self.n_states - 1)

    def reset(self, seed=None) -> np.ndarray:
        self.state = 0
        self.done = False
        self.goal_reached = False
        self.steps = 0
        return np.array([0.0])

    def step(self, action: int):
        if self.done:
            raise EnvError("step() called on a finished episode; call reset()")
        if action not in (0, 1):
            raise EnvError(f"invalid action {action!r}")
        s = self.state
        s2 = self.next_state_of(s, action)
        reward = float(self.rewards[s, action])
        terminal = self.terminal is not None and s2 == self.terminal
        self.state = s2
        self.steps += 1
        self.goal_reached = terminal
        self.done = terminal or (self.max_steps is not None and self.steps >= self.max_steps)
        return np.array([float(s2)]), reward, terminal

    @property
    def truncated(self) -> bool:
        return self.done and not self.goal_reached


def value_iteration_oracle(mdp: ChainMdp, tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """Optimal Q table of a ChainMdp.

    Stops once successive iterates differ by less than ``tol * (1 - gamma) / gamma``
    in sup norm, which bounds the distance to the fixed point by ``tol``.
    Rows of the terminal state are zero.
    """
    n, g = mdp.n_states, mdp.gamma
    nxt = np.array([[mdp.next_state_of(s, a) for a in range(2)] for s in range(n)])
    cont = np.ones((n, 2))
    if mdp.terminal is not None:
        cont[nxt == mdp.terminal] = 0.0
    q = np.zeros((n, 2))
    threshold = tol * (1.0 - g) / g if g > 0 else math.inf
    for _ in range(max_iter):
        v = q.max(axis=1)
        q_new = mdp.rewards + g * cont * v[nxt]
        if mdp.terminal is not None:
            q_new[mdp.terminal] = 0.0
        diff = np.max(np.abs(q_new - q))
        q = q_new
        if diff < threshold or g == 0:
            break
    else:
        raise EnvError("value iteration did not converge")
    return q


def bellman_residual(mdp: ChainMdp, q: np.ndarray) -> float:
    residual = 0.0
    for s in range(mdp.n_states):
        if s == mdp.terminal:
            continue
        for a in range(2):
            s2 = mdp.next_state_of(s, a)
            boot = 0.0 if s2 == mdp.terminal else q[s2].max()
            residual = max(residual, abs(mdp.rewards[s, a] + mdp.gamma * boot - q[s, a]))
    return residual


class ShapedMountainCar:
    """Mountain car with a dense, energy-shaped reward.

    State is ``(position, velocity)``.  Actions: 0 push left, 1 no-op, 2 push
    right.  Episodes end at ``position >= 0.5`` (terminal) or after 200 steps
    (truncated).
    """

    min_position = -1.2
    max_position = 0.6
    max_speed = 0.07
    goal_position = 0.5
    force = 0.001
    gravity = 0.0025
    max_steps = 200
    step_reward = -2.0
    goal_reward = 100.0

    n_actions = 3
    state_dim = 2

    def __init__(self):
        self.obs_low = np.array([self.min_position, -self.max_speed])
        self.obs_high = np.array([self.max_position, self.max_speed])
        self.state = np.array([-0.5, 0.0])
        self.steps = 0
        self.done = True
        self.goal_reached = False

    @classmethod
    def normalized_energy(cls, position: float, velocity: float) -> float:
        """Mean of potential and kinetic energy, each scaled to [0, 1].

        Height follows the track profile ``sin(3x)``, which spans [-1, 1] over
        the position bounds; kinetic energy is ``v**2 / v_max**2``.
        """
        potential = 0.5 * (math.sin(3.0 * position) + 1.0)
        kinetic = (velocity / cls.max_speed) ** 2
        return 0.5 * (potential + kinetic)

    def reset(self, seed=None) -> np.ndarray:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.state = np.array([rng.uniform(-0.6, -0.4), 0.0])
        self.steps = 0
        self.done = False
        self.goal_reached = False
        return self.state.copy()

    @classmethod
    def dynamics(cls, position: float, velocity: float, action: int) -> tuple[float, float]:
        velocity = velocity + (action - 1) * cls.force - cls.gravity * math.cos(3.0 * position)
        velocity = min(max(velocity, -cls.max_speed), cls.max_speed)
        position = position + velocity
        position = min(max(position, cls.min_position), cls.max_position)
        if position == cls.min_position and velocity < 0:
            velocity = 0.0
        return position, velocity

    def step(self, action: int):
        if self.done:
            raise EnvError("step() called on a finished episode; call reset()")
        if action not in (0, 1, 2):
            raise EnvError(f"invalid action {action!r}")
        x, v = self.dynamics(float(self.state[0]), float(self.state[1]), int(action))
        self.state = np.array([x, v])
        self.steps += 1
        terminal = x >= self.goal_position
        reward = self.step_reward + self.normalized_energy(x, v)
        if terminal:
            reward += self.goal_reward
        self.goal_reached = terminal
        self.done = terminal or self.steps >= self.max_steps
        return self.state.copy(), reward, terminal

    @property
    def truncated(self) -> bool:
        return self.done and not self.goal_reached


_CHAIN_RE = re.compile(r"^chain-(\d+)$")


def make_env(env_id: str, gamma: float = 0.95):
    """Build an environment from its string id (``chain-N`` or ``mountaincar-shaped``)."""
    m = _CHAIN_RE.match(env_id)
    if m:
        n = int(m.group(1))
        if n < 2:
            raise EnvError(f"chain environments need at least 2 states, got {env_id!r}")
        return ChainMdp(n, gamma=gamma, max_steps=10 * n)
    if env_id == "mountaincar-shaped":
        return ShapedMountainCar()
    raise EnvError(f"unknown environment id {env_id!r}")


def validate_env_id(env_id: str) -> None:
    make_env(env_id)
