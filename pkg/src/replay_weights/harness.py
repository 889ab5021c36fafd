"""Seeded experiment runner and the study drivers built on top of it.

A run is fully determined by ``(ExperimentConfig, seed)``.  Each seed derives
independent generators for network init, environment resets, exploration and
replay sampling, so arms that differ only in the loss weighting consume
identical random streams.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .envs import ChainMdp, EnvError, make_env
from .kernel import COMPENSATION_NORMS, NORMALIZATION_MODES, KernelConfig, KernelInputError, compute_weights
from .learner import MlpQNetwork, QTable, act_epsilon_greedy, linear_epsilon
from .replay import PerConfig, ReplayError, Transition, compose_per_pbwl, make_buffer

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
NOT_CONVERGED = "not converge"
LEARNERS = ("dqn", "tabular")
BUFFERS = ("uniform", "per")
CHECKPOINT_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "mountaincar-shaped"
    learner: str = "dqn"
    buffer: str = "uniform"
    kernel: Optional[KernelConfig] = field(default_factory=KernelConfig)
    per: PerConfig = field(default_factory=PerConfig)
    batch_size: int = 64
    episodes: int = 250
    seeds: tuple = tuple(range(10))
    eval_every: int = 1
    window: int = 10
    success_threshold: float = 0.9
    converge_patience: int = 5
    hidden: tuple = (64, 64)
    optimizer: str = "adam"
    lr: float = 1e-3
    gamma: float = 0.99
    gradient_form: str = "exact"
    buffer_capacity: int = 50_000
    warmup_steps: int = 1000
    train_every: int = 1
    target_sync: int = 200
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_fraction: float = 0.2
    trace_batches: int = 0
    trace_every: int = 1

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.eval_every < 1 or self.converge_patience < 1:
            raise ConfigError("eval_every and converge_patience must be >= 1")
        if self.learner not in LEARNERS:
            raise ConfigError(f"unknown learner {self.learner!r}; expected one of {LEARNERS}")
        if self.buffer not in BUFFERS:
            raise ConfigError(f"unknown buffer {self.buffer!r}; expected one of {BUFFERS}")
        if self.batch_size < 1 or self.episodes < 1:
            raise ConfigError("batch_size and episodes must be positive")
        if self.trace_every < 1:
            raise ConfigError("trace_every must be >= 1")
        try:
            env = make_env(self.env, gamma=min(self.gamma, 0.999))
        except EnvError as exc:
            raise ConfigError(str(exc)) from None
        if self.learner == "tabular" and not isinstance(env, ChainMdp):
            raise ConfigError("the tabular learner needs a chain environment")

    def to_dict(self) -> dict:
        d = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if isinstance(value, KernelConfig):
                value = value.to_dict()
            elif isinstance(value, PerConfig):
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            d[name] = value
        return {"version": CONFIG_VERSION, **d}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        version = data.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version!r}")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "kernel" in data and data["kernel"] is not None:
                data["kernel"] = KernelConfig.from_dict(data["kernel"])
            if "per" in data:
                data["per"] = PerConfig.from_dict(data["per"])
        except (KernelInputError, ReplayError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        for key in ("seeds", "hidden"):
            if key in data:
                data[key] = tuple(int(x) for x in data[key])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(data)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


@dataclass
class RunRecord:
    seed: int
    fingerprint: str
    returns: list
    successes: list
    smoothed_returns: list
    smoothed_success: list
    convergence_episode: Optional[int]
    train_steps: int
    rejected_steps: int
    wall_clock: float = 0.0
    traces: list = field(default_factory=list)

    def to_json(self) -> str:
        """Canonical serialization; excludes wall-clock time."""
        d = asdict(self)
        d.pop("wall_clock")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))


# --- curve utilities -------------------------------------------------------


def moving_average(values: Sequence[float], window: int) -> list[float]:
    """Trailing mean over ``min(window, i + 1)`` points."""
    if window < 1:
        raise ConfigError("window must be >= 1")
    out = []
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out.append(math.fsum(values[lo : i + 1]) / (i + 1 - lo))
    return out


def convergence_episode(smoothed: Sequence[float], threshold: float, patience: int, eval_every: int = 1) -> Optional[int]:
    """First 1-based episode at which the smoothed metric reaches ``threshold``
    and stays there for ``patience`` consecutive evaluations.
    """
    points = list(range(eval_every - 1, len(smoothed), eval_every))
    streak = 0
    for k, i in enumerate(points):
        if smoothed[i] >= threshold:
            streak += 1
            if streak >= patience:
                return points[k - patience + 1] + 1
        else:
            streak = 0
    return None


def reduction_rate(off, on) -> Optional[float]:
    """Percentage reduction from ``off`` to ``on``; None when either is missing."""
    if off is None or on is None or off == 0:
        return None
    return (off - on) / off * 100.0


def checkpoint_indices(episodes: int) -> list[int]:
    return [max(0, math.ceil(f * episodes) - 1) for f in CHECKPOINT_FRACTIONS]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, fingerprint: str, header: Sequence[str], rows) -> None:
    lines = [f"# config_fingerprint={fingerprint}", ",".join(header)]
    lines.extend(",".join(_fmt(v) if not isinstance(v, str) else v for v in row) for row in rows)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_json(path: Path, data) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(json.dumps(data, indent=2, sort_keys=True) + "\n")


# --- single run ------------------------------------------------------------


def _build_learner(config: ExperimentConfig, env, rng: np.random.Generator):
    if config.learner == "tabular":
        return QTable(env.n_states, env.n_actions, config.gamma, lr=config.lr)
    sizes = [env.state_dim, *config.hidden, env.n_actions]
    return MlpQNetwork(
        sizes,
        gamma=config.gamma,
        lr=config.lr,
        optimizer=config.optimizer,
        gradient_form=config.gradient_form,
        obs_low=env.obs_low,
        obs_high=env.obs_high,
        rng=rng,
    )


def run_seed(config: ExperimentConfig, seed: int) -> RunRecord:
    """Train one agent and record per-episode returns and goal success."""
    start = time.perf_counter()
    init_ss, env_ss, act_ss, sample_ss = np.random.SeedSequence(int(seed)).spawn(4)
    init_rng = np.random.default_rng(init_ss)
    env_rng = np.random.default_rng(env_ss)
    act_rng = np.random.default_rng(act_ss)
    sample_rng = np.random.default_rng(sample_ss)

    env = make_env(config.env, gamma=min(config.gamma, 0.999))
    learner = _build_learner(config, env, init_rng)
    buffer = make_buffer(config.buffer, config.buffer_capacity, env.state_dim, config.per)
    max_steps = getattr(env, "max_steps", None) or 200
    total_steps = config.episodes * max_steps
    is_dqn = isinstance(learner, MlpQNetwork)

    returns, successes, traces = [], [], []
    global_step = 0
    train_steps = 0
    for _ in range(config.episodes):
        state = env.reset(env_rng)
        ep_return = 0.0
        while not env.done:
            eps = linear_epsilon(global_step, total_steps, config.epsilon_start, config.epsilon_end, config.epsilon_fraction)
            action = act_epsilon_greedy(learner, state, eps, act_rng)
            next_state, reward, terminal = env.step(action)
            buffer.push(Transition(state, action, reward, next_state, terminal))
            ep_return += reward
            state = next_state
            global_step += 1
            if len(buffer) < max(config.warmup_steps, config.batch_size) or global_step % config.train_every:
                continue
            if config.buffer == "per":
                batch = buffer.sample(config.batch_size, sample_rng, beta=config.per.beta_at(train_steps))
            else:
                batch = buffer.sample(config.batch_size, sample_rng)
            if is_dqn:
                cache = learner.td_and_cache(batch)
                delta = cache[0]
            else:
                delta, cache = learner.compute_td_errors(batch), None
            wv = compute_weights(delta, config.kernel) if config.kernel is not None else None
            omega = wv.omega if wv is not None else np.ones(len(batch))
            multipliers = compose_per_pbwl(batch.is_weights, omega)
            if is_dqn:
                learner.train_step(batch, multipliers, cache=cache)
            else:
                learner.train_step(batch, multipliers)
            if config.buffer == "per":
                buffer.update_priorities(batch.indices, delta, batch.generations)
            if len(traces) < config.trace_batches and train_steps % config.trace_every == 0:
                traces.append(
                    {
                        "train_step": train_steps,
                        "indices": batch.indices.tolist(),
                        "td_errors": delta.tolist(),
                        "is_weights": batch.is_weights.tolist(),
                        "omega": omega.tolist(),
                        "multipliers": multipliers.tolist(),
                        "kernel": wv.trace() if wv is not None else None,
                    }
                )
            train_steps += 1
            if is_dqn and train_steps % config.target_sync == 0:
                learner.sync_target()
        returns.append(ep_return)
        successes.append(1.0 if env.goal_reached else 0.0)

    smoothed_success = moving_average(successes, config.window)
    return RunRecord(
        seed=int(seed),
        fingerprint=config.fingerprint(),
        returns=returns,
        successes=successes,
        smoothed_returns=moving_average(returns, config.window),
        smoothed_success=smoothed_success,
        convergence_episode=convergence_episode(
            smoothed_success, config.success_threshold, config.converge_patience, config.eval_every
        ),
        train_steps=train_steps,
        rejected_steps=getattr(learner, "rejected_steps", 0),
        wall_clock=time.perf_counter() - start,
        traces=traces,
    )


def _run_task(task):
    config, seed = task
    return run_seed(config, seed)


def run_many(tasks: Sequence[tuple], jobs: int = 1) -> list[RunRecord]:
    """Run ``(config, seed)`` tasks; results come back in task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_task, tasks))


# --- outputs ---------------------------------------------------------------


def _summary(config: ExperimentConfig, records: Sequence[RunRecord]) -> dict:
    conv = [r.convergence_episode for r in records]
    hit = [c for c in conv if c is not None]
    last = [r.smoothed_success[-1] for r in records]
    return {
        "config": config.to_dict(),
        "config_fingerprint": config.fingerprint(),
        "seeds": [r.seed for r in records],
        "convergence_episode": {str(r.seed): r.convergence_episode for r in records},
        "n_converged": len(hit),
        "median_convergence_episode": statistics.median(hit) if hit else NOT_CONVERGED,
        "mean_convergence_episode": statistics.fmean(hit) if hit else NOT_CONVERGED,
        "final_smoothed_success": {str(r.seed): r.smoothed_success[-1] for r in records},
        "mean_final_smoothed_success": statistics.fmean(last),
        "mean_return": statistics.fmean(statistics.fmean(r.returns) for r in records),
        "rejected_steps": sum(r.rejected_steps for r in records),
    }


def mean_curve(records: Sequence[RunRecord], attr: str) -> list[float]:
    cols = zip(*(getattr(r, attr) for r in records))
    return [math.fsum(c) / len(records) for c in cols]


def write_run_outputs(config: ExperimentConfig, records: Sequence[RunRecord], out: Path) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    fp = config.fingerprint()
    header = ["episode", "return", "smoothed_return", "success", "smoothed_success"]
    for r in records:
        rows = zip(range(1, len(r.returns) + 1), r.returns, r.smoothed_returns, r.successes, r.smoothed_success)
        write_csv(out / f"seed_{r.seed}.csv", fp, header, rows)
    rows = zip(
        range(1, config.episodes + 1),
        mean_curve(records, "returns"),
        mean_curve(records, "smoothed_returns"),
        mean_curve(records, "smoothed_success"),
    )
    write_csv(out / "mean.csv", fp, ["episode", "mean_return", "mean_smoothed_return", "mean_smoothed_success"], rows)
    summary = _summary(config, records)
    write_json(out / "summary.json", summary)
    if any(r.traces for r in records):
        write_json(out / "traces.json", {"config_fingerprint": fp, "runs": {str(r.seed): r.traces for r in records}})
    # wall clock is the only non-deterministic output and lives in its own file
    write_json(out / "timings.json", {"config_fingerprint": fp, "wall_clock_s": {str(r.seed): r.wall_clock for r in records}})
    return summary


def run_experiment(config: ExperimentConfig, out: Optional[Path] = None, jobs: int = 1) -> list[RunRecord]:
    records = run_many([(config, s) for s in sorted(config.seeds)], jobs)
    if out is not None:
        write_run_outputs(config, records, out)
    return records


# --- ablation grid ---------------------------------------------------------


def ablation_cells() -> list[KernelConfig]:
    """The 12 kernel configurations, in table order."""
    return [
        KernelConfig(normalization_mode=mode, softmax_enabled=soft, compensation_norm=norm)
        for mode, soft, norm in itertools.product(NORMALIZATION_MODES, (True, False), COMPENSATION_NORMS)
    ]


def _mean_pstd(xs: Sequence[float]) -> tuple[float, float]:
    return statistics.fmean(xs), statistics.pstdev(xs)


def format_ablation_table(rows: Sequence[dict]) -> str:
    head = ["Normalization", "Softmax", "Norm"] + [f"{int(f * 100)}% budget" for f in CHECKPOINT_FRACTIONS]
    body = []
    for r in rows:
        cells = [f"{m:.2f}±{s:.2f}" for m, s in zip(r["mean"], r["std"])]
        norm = r["norm"] + (" *" if r["default"] else "")
        body.append([r["normalization"].capitalize(), "On" if r["softmax"] else "Off", norm] + cells)
    widths = [max(len(x[i]) for x in [head] + body) for i in range(len(head))]
    fmt = lambda row: " | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
    lines = [fmt(head), "-+-".join("-" * w for w in widths)] + [fmt(b) for b in body]
    lines.append("* full method (default configuration)")
    return "\n".join(lines) + "\n"


def ablation_grid(base: ExperimentConfig, out: Optional[Path] = None, jobs: int = 1) -> dict:
    """Run every kernel configuration and report smoothed success at 4 checkpoints."""
    cells = ablation_cells()
    configs = [base.with_(kernel=k) for k in cells]
    tasks = [(c, s) for c in configs for s in sorted(base.seeds)]
    records = run_many(tasks, jobs)
    n = len(base.seeds)
    idx = checkpoint_indices(base.episodes)
    rows = []
    for k, (cell, cfg) in enumerate(zip(cells, configs)):
        recs = records[k * n : (k + 1) * n]
        if out is not None:
            write_run_outputs(cfg, recs, Path(out) / cell.label.replace("/", "_"))
        stats = [_mean_pstd([r.smoothed_success[i] for r in recs]) for i in idx]
        rows.append(
            {
                "normalization": cell.normalization_mode,
                "softmax": cell.softmax_enabled,
                "norm": cell.compensation_norm,
                "default": cell.is_default,
                "fingerprint": cfg.fingerprint(),
                "mean": [m for m, _ in stats],
                "std": [s for _, s in stats],
                "records": recs,
            }
        )
    table = format_ablation_table(rows)
    if out is not None:
        out = Path(out)
        header = ["normalization", "softmax", "norm", "default", "config_fingerprint"]
        for f in CHECKPOINT_FRACTIONS:
            header += [f"mean_{int(f * 100)}", f"std_{int(f * 100)}"]
        csv_rows = []
        for r in rows:
            vals = [x for pair in zip(r["mean"], r["std"]) for x in pair]
            csv_rows.append([r["normalization"], "on" if r["softmax"] else "off", r["norm"], r["default"], r["fingerprint"], *vals])
        write_csv(out / "ablation.csv", base.fingerprint(), header, csv_rows)
        (out / "ablation.txt").write_text(f"# config_fingerprint={base.fingerprint()}\n" + table)
    return {"rows": rows, "table": table, "checkpoints": [i + 1 for i in idx]}


# --- batch-size study ------------------------------------------------------


def _mean_convergence(records: Sequence[RunRecord]):
    hit = [r.convergence_episode for r in records if r.convergence_episode is not None]
    mean = statistics.fmean(hit) if hit else None
    return mean, len(records) - len(hit)


def format_batch_table(rows: Sequence[dict]) -> str:
    head = ["Batch size", "w/o PBWL", "w/ PBWL", "Reduction Rate (%)"]
    body = []
    for r in rows:
        def show(v, missed):
            s = NOT_CONVERGED if v is None else f"{v:.1f}"
            return s + (f" [{missed}]" if missed and v is not None else "")
        rate = "-" if r["reduction_rate"] is None else f"{r['reduction_rate']:.1f} %"
        body.append([str(r["batch_size"]), show(r["off"], r["off_missed"]), show(r["on"], r["on_missed"]), rate])
    widths = [max(len(x[i]) for x in [head] + body) for i in range(len(head))]
    fmt = lambda row: " | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
    lines = [fmt(head), "-+-".join("-" * w for w in widths)] + [fmt(b) for b in body]
    lines.append("[k] = k seeds never converged and are excluded from the mean")
    return "\n".join(lines) + "\n"


def batch_size_study(
    base: ExperimentConfig, sizes: Sequence[int] = (128, 256, 512), out: Optional[Path] = None, jobs: int = 1
) -> dict:
    """Mean convergence episode with and without PBWL for each batch size."""
    if not sizes:
        raise ConfigError("sizes must be nonempty")
    kernel = base.kernel or KernelConfig()
    configs = []
    for n in sizes:
        configs.append(base.with_(batch_size=int(n), kernel=None))
        configs.append(base.with_(batch_size=int(n), kernel=kernel))
    seeds = sorted(base.seeds)
    records = run_many([(c, s) for c in configs for s in seeds], jobs)
    k = len(seeds)
    rows = []
    for i, n in enumerate(sizes):
        off_recs = records[(2 * i) * k : (2 * i + 1) * k]
        on_recs = records[(2 * i + 1) * k : (2 * i + 2) * k]
        if out is not None:
            write_run_outputs(configs[2 * i], off_recs, Path(out) / f"batch_{n}_off")
            write_run_outputs(configs[2 * i + 1], on_recs, Path(out) / f"batch_{n}_on")
        off, off_missed = _mean_convergence(off_recs)
        on, on_missed = _mean_convergence(on_recs)
        rows.append(
            {
                "batch_size": int(n),
                "off": off,
                "on": on,
                "off_missed": off_missed,
                "on_missed": on_missed,
                "reduction_rate": reduction_rate(off, on),
                "records_off": off_recs,
                "records_on": on_recs,
            }
        )
    table = format_batch_table(rows)
    if out is not None:
        out = Path(out)
        csv_rows = [
            [
                r["batch_size"],
                NOT_CONVERGED if r["off"] is None else r["off"],
                NOT_CONVERGED if r["on"] is None else r["on"],
                r["off_missed"],
                r["on_missed"],
                "-" if r["reduction_rate"] is None else r["reduction_rate"],
            ]
            for r in rows
        ]
        write_csv(
            out / "batch_study.csv",
            base.fingerprint(),
            ["batch_size", "convergence_off", "convergence_on", "not_converged_off", "not_converged_on", "reduction_rate_pct"],
            csv_rows,
        )
        (out / "batch_study.txt").write_text(f"# config_fingerprint={base.fingerprint()}\n" + table)
    return {"rows": rows, "table": table}


# --- PER composition study -------------------------------------------------

PER_ARMS = ("baseline", "pbwl", "per", "per+pbwl")


def per_arm_configs(base: ExperimentConfig) -> dict[str, ExperimentConfig]:
    kernel = base.kernel or KernelConfig()
    return {
        "baseline": base.with_(buffer="uniform", kernel=None),
        "pbwl": base.with_(buffer="uniform", kernel=kernel),
        "per": base.with_(buffer="per", kernel=None),
        "per+pbwl": base.with_(buffer="per", kernel=kernel),
    }


def check_degenerate_per(base: ExperimentConfig, seed: int, episodes: int = 3) -> bool:
    """A PER arm with alpha=0, beta=0 and root draws must replay the baseline exactly."""
    short = base.with_(episodes=episodes, trace_batches=10**9, kernel=None, warmup_steps=min(base.warmup_steps, 100))
    degenerate = PerConfig(alpha=0.0, beta_start=0.0, beta_end=0.0, stratified=False)
    a = run_seed(short.with_(buffer="uniform"), seed)
    b = run_seed(short.with_(buffer="per", per=degenerate), seed)
    same_batches = [t["indices"] for t in a.traces] == [t["indices"] for t in b.traces]
    return bool(a.traces) and same_batches and a.returns == b.returns and a.successes == b.successes


def check_multiplier_products(record: RunRecord, kernel: KernelConfig) -> bool:
    """Logged PER+PBWL multipliers equal IS weights times the kernel's weights."""
    if not record.traces:
        return False
    for t in record.traces:
        omega = compute_weights(t["td_errors"], kernel).omega
        expected = np.asarray(t["is_weights"]) * omega
        if expected.tolist() != t["multipliers"]:
            return False
    return True


def per_composition_study(base: ExperimentConfig, out: Optional[Path] = None, jobs: int = 1) -> dict:
    arms = per_arm_configs(base)
    seeds = sorted(base.seeds)
    tasks = []
    for name, cfg in arms.items():
        if name == "per+pbwl":
            cfg = cfg.with_(trace_batches=max(cfg.trace_batches, 5), trace_every=max(cfg.trace_every, 500))
            arms[name] = cfg
        tasks.extend((cfg, s) for s in seeds)
    records = run_many(tasks, jobs)
    k = len(seeds)
    by_arm = {name: records[i * k : (i + 1) * k] for i, name in enumerate(arms)}
    checks = {
        "degenerate_per_equals_baseline": check_degenerate_per(base, seeds[0]),
        "multiplier_product": all(check_multiplier_products(r, arms["per+pbwl"].kernel) for r in by_arm["per+pbwl"]),
    }
    summary = {}
    base_sum = _summary(arms["baseline"], by_arm["baseline"])
    for name in arms:
        s = _summary(arms[name], by_arm[name])
        summary[name] = {
            "config_fingerprint": s["config_fingerprint"],
            "n_converged": s["n_converged"],
            "median_convergence_episode": s["median_convergence_episode"],
            "mean_final_smoothed_success": s["mean_final_smoothed_success"],
            "mean_return": s["mean_return"],
            "delta_mean_return_vs_baseline": s["mean_return"] - base_sum["mean_return"],
            "delta_final_success_vs_baseline": s["mean_final_smoothed_success"] - base_sum["mean_final_smoothed_success"],
        }
    if out is not None:
        out = Path(out)
        for name, cfg in arms.items():
            write_run_outputs(cfg, by_arm[name], out / name.replace("+", "_"))
        header = ["episode"]
        cols = []
        for name in arms:
            header += [f"{name}_mean_smoothed_return", f"{name}_mean_smoothed_success"]
            cols += [mean_curve(by_arm[name], "smoothed_returns"), mean_curve(by_arm[name], "smoothed_success")]
        rows = [[e + 1, *(c[e] for c in cols)] for e in range(base.episodes)]
        write_csv(out / "per_study.csv", base.fingerprint(), header, rows)
        write_json(out / "per_study_summary.json", {"config_fingerprint": base.fingerprint(), "arms": summary, "checks": checks})
    return {"arms": by_arm, "summary": summary, "checks": checks}
