"""TD learners: a tabular Q table and a small numpy MLP Q-network.

Both consume a replay ``Batch`` plus one loss multiplier per sample and take a
gradient step on ``mean((m_j * delta_j) ** 2)`` with the multipliers held
constant.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .replay import Batch

log = logging.getLogger(__name__)

GRADIENT_FORMS = ("exact", "literal")


class LearnerError(ValueError):
    pass


@dataclass
class StepResult:
    loss: float
    td_errors: np.ndarray
    accepted: bool = True


def _check_weights(weights, n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise LearnerError(f"weights length {w.shape} does not match batch length {n}")
    return w


def loss_coefficients(delta: np.ndarray, weights: np.ndarray, form: str = "exact") -> np.ndarray:
    """dL/dq_j for L = mean((w * delta) ** 2) where delta = y - q.

    ``exact`` differentiates the weighted loss (w enters squared); ``literal``
    uses a single power of w.
    """
    n = delta.shape[0]
    if form == "exact":
        return (-2.0 / n) * (weights * weights * delta)
    if form == "literal":
        return (-2.0 / n) * (weights * delta)
    raise LearnerError(f"unknown gradient form {form!r}; expected one of {GRADIENT_FORMS}")


# --- tabular ---------------------------------------------------------------


class QTable:
    """Dense Q table over integer states.

    ``train_step`` descends half the weighted loss, so with unit weights and
    a single transition it is the textbook update ``Q += lr * delta``.
    """

    def __init__(self, n_states: int, n_actions: int, gamma: float, lr: float = 0.1):
        self.values = np.zeros((n_states, n_actions), dtype=np.float64)
        self.gamma = gamma
        self.lr = lr
        self.n_actions = n_actions

    def q_values(self, state) -> np.ndarray:
        return self.values[int(np.asarray(state).reshape(-1)[0])]

    def compute_td_errors(self, batch: Batch) -> np.ndarray:
        if len(batch) == 0:
            raise LearnerError("empty batch")
        s = batch.states[:, 0].astype(np.int64)
        s2 = batch.next_states[:, 0].astype(np.int64)
        boot = self.values[s2].max(axis=1) * (1.0 - batch.terminals)
        return batch.rewards + self.gamma * boot - self.values[s, batch.actions]

    def train_step(self, batch: Batch, weights=None, lr: Optional[float] = None) -> StepResult:
        n = len(batch)
        w = np.ones(n) if weights is None else _check_weights(weights, n)
        lr = self.lr if lr is None else lr
        delta = self.compute_td_errors(batch)
        loss = float(np.mean((w * delta) ** 2))
        update = (lr / n) * (w * w * delta)
        if not np.all(np.isfinite(update)):
            log.warning("rejected tabular step: non-finite update")
            return StepResult(loss, delta, accepted=False)
        s = batch.states[:, 0].astype(np.int64)
        np.add.at(self.values, (s, batch.actions), update)
        return StepResult(loss, delta)


# --- MLP Q-network ---------------------------------------------------------


class Adam:
    def __init__(self, size: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, grad: np.ndarray, lr: Optional[float] = None) -> np.ndarray:
        lr = self.lr if lr is None else lr
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return lr * m_hat / (np.sqrt(v_hat) + self.eps)


class MlpQNetwork:
    """Fully connected tanh network mapping a state to one Q value per action.

    All parameters live in one flat vector ``theta``; per-layer weights and
    biases are views into it.  Inputs are rescaled from ``[obs_low, obs_high]``
    to ``[-1, 1]``.  A separate flat copy ``theta_target`` supplies bootstrap
    targets and is refreshed by ``sync_target``.
    """

    def __init__(
        self,
        sizes: Sequence[int],
        gamma: float = 0.99,
        lr: float = 1e-3,
        optimizer: str = "sgd",
        gradient_form: str = "exact",
        obs_low=None,
        obs_high=None,
        rng: Optional[np.random.Generator] = None,
    ):
        if len(sizes) < 2:
            raise LearnerError("need at least input and output sizes")
        if gradient_form not in GRADIENT_FORMS:
            raise LearnerError(f"unknown gradient form {gradient_form!r}")
        if optimizer not in ("sgd", "adam"):
            raise LearnerError(f"unknown optimizer {optimizer!r}")
        self.sizes = [int(s) for s in sizes]
        self.gamma = gamma
        self.lr = lr
        self.gradient_form = gradient_form
        self.optimizer_name = optimizer
        self.n_actions = self.sizes[-1]
        d = self.sizes[0]
        low = np.full(d, -1.0) if obs_low is None else np.asarray(obs_low, dtype=np.float64)
        high = np.full(d, 1.0) if obs_high is None else np.asarray(obs_high, dtype=np.float64)
        self.obs_low, self.obs_high = low, high
        self._obs_scale = 2.0 / (high - low)
        self.shapes = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.shapes.append((fan_in, fan_out))
        self.n_params = sum(i * o + o for i, o in self.shapes)
        self.theta = np.zeros(self.n_params)
        rng = rng or np.random.default_rng(0)
        for W, b, (fan_in, _) in zip(*self._views(self.theta), self.shapes):
            bound = 1.0 / np.sqrt(fan_in)
            W[...] = rng.uniform(-bound, bound, size=W.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)
        self.theta_target = self.theta.copy()
        self.opt = Adam(self.n_params, lr) if optimizer == "adam" else None
        self.rejected_steps = 0
        self.train_steps = 0

    def _views(self, flat: np.ndarray):
        Ws, bs = [], []
        k = 0
        for fan_in, fan_out in self.shapes:
            Ws.append(flat[k : k + fan_in * fan_out].reshape(fan_in, fan_out))
            k += fan_in * fan_out
            bs.append(flat[k : k + fan_out])
            k += fan_out
        return Ws, bs

    def _input(self, states) -> np.ndarray:
        x = np.asarray(states, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise LearnerError(f"state dimension {x.shape[1]} does not match network input {self.sizes[0]}")
        return (x - self.obs_low) * self._obs_scale - 1.0

    def forward(self, states, theta: Optional[np.ndarray] = None):
        """Q values for a batch of states plus the activations needed for backprop."""
        Ws, bs = self._views(self.theta if theta is None else theta)
        h = self._input(states)
        acts = [h]
        for W, b in zip(Ws[:-1], bs[:-1]):
            h = np.tanh(h @ W + b)
            acts.append(h)
        return h @ Ws[-1] + bs[-1], acts

    def q_values(self, state) -> np.ndarray:
        return self.forward(state)[0][0]

    def targets(self, batch: Batch) -> np.ndarray:
        q_next, _ = self.forward(batch.next_states, self.theta_target)
        return batch.rewards + self.gamma * q_next.max(axis=1) * (1.0 - batch.terminals)

    def compute_td_errors(self, batch: Batch) -> np.ndarray:
        if len(batch) == 0:
            raise LearnerError("empty batch")
        q, _ = self.forward(batch.states)
        return self.targets(batch) - q[np.arange(len(batch)), batch.actions]

    def td_and_cache(self, batch: Batch):
        if len(batch) == 0:
            raise LearnerError("empty batch")
        q, acts = self.forward(batch.states)
        delta = self.targets(batch) - q[np.arange(len(batch)), batch.actions]
        return delta, (q, acts)

    def _backprop(self, acts, dq: np.ndarray) -> np.ndarray:
        Ws, _ = self._views(self.theta)
        grad = np.zeros(self.n_params)
        gWs, gbs = self._views(grad)
        d = dq
        for layer in range(len(Ws) - 1, -1, -1):
            h = acts[layer]
            gWs[layer][...] = h.T @ d
            gbs[layer][...] = d.sum(axis=0)
            if layer > 0:
                d = (d @ Ws[layer].T) * (1.0 - h * h)
        return grad

    def gradient(self, batch: Batch, weights=None, cache=None):
        """Gradient of the weighted loss w.r.t. ``theta`` with targets fixed."""
        n = len(batch)
        w = np.ones(n) if weights is None else _check_weights(weights, n)
        if cache is None:
            delta, (q, acts) = self.td_and_cache(batch)
        else:
            delta, (q, acts) = cache
        dq = np.zeros_like(q)
        dq[np.arange(n), batch.actions] = loss_coefficients(delta, w, self.gradient_form)
        wd = w * delta
        with np.errstate(invalid="ignore", over="ignore"):
            grad = self._backprop(acts, dq)
        return grad, float(np.mean(wd * wd)), delta

    def loss(self, batch: Batch, weights=None, theta: Optional[np.ndarray] = None) -> float:
        n = len(batch)
        w = np.ones(n) if weights is None else _check_weights(weights, n)
        q, _ = self.forward(batch.states, theta)
        delta = self.targets(batch) - q[np.arange(n), batch.actions]
        wd = w * delta
        return float(np.mean(wd * wd))

    def _apply(self, grad: np.ndarray, lr: Optional[float]) -> bool:
        if not np.all(np.isfinite(grad)):
            self.rejected_steps += 1
            log.warning("rejected step %d: non-finite gradient (%d rejected so far)", self.train_steps, self.rejected_steps)
            return False
        if self.opt is not None:
            self.theta -= self.opt.step(grad, lr)
        else:
            self.theta -= (self.lr if lr is None else lr) * grad
        self.train_steps += 1
        return True

    def train_step(self, batch: Batch, weights=None, lr: Optional[float] = None, cache=None) -> StepResult:
        grad, loss, delta = self.gradient(batch, weights, cache)
        return StepResult(loss, delta, self._apply(grad, lr))

    def sync_target(self) -> None:
        self.theta_target[...] = self.theta

    # checkpoints: flat little-endian float64 + JSON sidecar
    def save_checkpoint(self, prefix) -> tuple[Path, Path]:
        prefix = Path(prefix)
        bin_path = prefix.with_suffix(".bin")
        meta_path = prefix.with_suffix(".json")
        bin_path.write_bytes(self.theta.astype("<f8").tobytes())
        meta = {
            "format": "replay-weights-mlp",
            "version": 1,
            "dtype": "<f8",
            "sizes": self.sizes,
            "layers": [{"weight": [i, o], "bias": [o]} for i, o in self.shapes],
            "activation": "tanh",
            "n_params": self.n_params,
            "obs_low": self.obs_low.tolist(),
            "obs_high": self.obs_high.tolist(),
            "gamma": self.gamma,
        }
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return bin_path, meta_path

    @classmethod
    def load_checkpoint(cls, prefix, **kwargs) -> "MlpQNetwork":
        prefix = Path(prefix)
        meta = json.loads(prefix.with_suffix(".json").read_text())
        if meta.get("format") != "replay-weights-mlp" or meta.get("version") != 1:
            raise LearnerError("unrecognized checkpoint format")
        theta = np.frombuffer(prefix.with_suffix(".bin").read_bytes(), dtype="<f8").astype(np.float64)
        if theta.size != meta["n_params"]:
            raise LearnerError(f"checkpoint has {theta.size} parameters, sidecar says {meta['n_params']}")
        net = cls(meta["sizes"], gamma=meta["gamma"], obs_low=meta["obs_low"], obs_high=meta["obs_high"], **kwargs)
        net.theta[...] = theta
        net.sync_target()
        return net


def reference_mse_step(net: MlpQNetwork, batch: Batch, lr: Optional[float] = None) -> StepResult:
    """Plain unweighted MSE gradient step, written without any weighting path."""
    n = len(batch)
    delta, (q, acts) = net.td_and_cache(batch)
    dq = np.zeros_like(q)
    dq[np.arange(n), batch.actions] = (-2.0 / n) * delta
    grad = net._backprop(acts, dq)
    loss = float(np.mean(delta * delta))
    return StepResult(loss, delta, net._apply(grad, lr))


# --- exploration -----------------------------------------------------------


def act_epsilon_greedy(learner, state, epsilon: float, rng: np.random.Generator) -> int:
    """Random action with probability ``epsilon``, else the greedy one.

    Ties in Q go to the lowest action index.  Exactly one uniform draw is
    consumed per call, plus one integer draw when exploring.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise LearnerError(f"epsilon must be in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(learner.n_actions))
    return int(np.argmax(learner.q_values(state)))


def linear_epsilon(step: int, total_steps: int, start: float = 1.0, end: float = 0.05, fraction: float = 0.2) -> float:
    horizon = max(1, int(total_steps * fraction))
    frac = min(step / horizon, 1.0)
    return start + frac * (end - start)


# --- tabular Q-learning driver ---------------------------------------------


def run_tabular_q_learning(
    mdp,
    steps: int,
    seed: int = 0,
    batch_size: int = 1,
    lr0: float = 1.0,
    lr_decay: float = 1e-5,
    buffer_capacity: int = 10_000,
    weights_fn=None,
) -> QTable:
    """Off-policy Q-learning on a chain with a uniform random behaviour policy.

    Every environment step is stored in a uniform buffer and followed by one
    update on a sampled batch.  The learning rate decays as
    ``lr0 / (1 + lr_decay * t)``.  ``weights_fn`` maps TD errors to loss
    multipliers (unit weights when omitted).
    """
    from .replay import Transition, UniformBuffer

    rng = np.random.default_rng(seed)
    table = QTable(mdp.n_states, 2, mdp.gamma)
    buf = UniformBuffer(buffer_capacity, 1)
    state = mdp.reset()
    for t in range(steps):
        a = int(rng.integers(2))
        s2, r, term = mdp.step(a)
        buf.push(Transition(state, a, r, s2, term))
        state = mdp.reset() if mdp.done else s2
        n = min(batch_size, len(buf))
        batch = buf.sample(n, rng)
        w = None if weights_fn is None else weights_fn(table.compute_td_errors(batch))
        table.train_step(batch, w, lr=lr0 / (1.0 + lr_decay * t))
    return table
