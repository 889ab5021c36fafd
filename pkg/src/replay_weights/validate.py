"""Randomized property suite for the weighting kernel.

Used by the ``validate-kernel`` CLI verb.  Each check returns a
``CheckResult``; the suite passes only if every check does.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .kernel import (
    KernelConfig,
    compensate,
    combined_normalize,
    compute_weights,
    gaussian_density,
    gaussian_raw_priority,
    positive_preferential,
    softmax_weights,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    checked: int
    detail: str = ""


GENERATORS = ("normal", "uniform", "neg-skewed")


def random_batch(rng: np.random.Generator, kind: str) -> np.ndarray:
    n = int(rng.integers(2, 513))
    scale = float(rng.uniform(0.01, 10.0))
    if kind == "normal":
        return rng.normal(0.0, scale, n)
    if kind == "uniform":
        return rng.uniform(-scale, scale, n)
    # long left tail: most errors near zero, a few strongly negative
    return -rng.gamma(0.5, scale, n) + rng.normal(0.0, 0.01 * scale, n)


def _batches(seed: int, count: int):
    rng = np.random.default_rng(seed)
    for i in range(count):
        yield rng, random_batch(rng, GENERATORS[i % len(GENERATORS)])


def check_offset_invariance(seed: int, count: int) -> CheckResult:
    worst = 0.0
    for rng, d in _batches(seed, count):
        g = gaussian_raw_priority(positive_preferential(combined_normalize(d)))
        a = float(rng.uniform(-100.0, 100.0))
        worst = max(worst, float(np.max(np.abs(softmax_weights(g + a) - softmax_weights(g)))))
    return CheckResult("softmax offset invariance (|A| <= 100)", worst <= 1e-12, count, f"max abs diff {worst:.3e}")


def check_simplex_and_positive(seed: int, count: int) -> CheckResult:
    worst, min_omega = 0.0, np.inf
    for _, d in _batches(seed, count):
        wv = compute_weights(d)
        worst = max(worst, abs(float(np.sum(wv.p)) - 1.0))
        min_omega = min(min_omega, float(wv.omega.min()))
    ok = worst <= 1e-12 and min_omega > 0.0
    return CheckResult("sum p = 1 and omega > 0", ok, count, f"max |sum p - 1| {worst:.3e}, min omega {min_omega:.3e}")


def check_l1_identity(seed: int, count: int) -> CheckResult:
    worst = 0.0
    for _, d in _batches(seed, count):
        omega = compute_weights(d).omega
        lhs, rhs = np.sum(np.abs(omega * d)), np.sum(np.abs(d))
        worst = max(worst, abs(lhs - rhs) / rhs)
    return CheckResult("L1 compensation identity", worst <= 1e-9, count, f"max rel diff {worst:.3e}")


def check_uncompensated_loss_drop(seed: int, count: int) -> CheckResult:
    failures = 0
    for _, d in _batches(seed, count):
        p = compute_weights(d).p
        if np.all(d == 0) or np.max(p) >= 1.0:
            continue
        if not np.mean((p * d) ** 2) < np.mean(d * d):
            failures += 1
    return CheckResult("uncompensated weights lower the loss", failures == 0, count, f"{failures} violations")


def check_positive_side_preferred(seed: int, count: int, per_batch: int = 50) -> CheckResult:
    failures, checked = 0, 0
    for rng, d in _batches(seed, count):
        sigma = float(np.std(positive_preferential(combined_normalize(d))))
        if sigma <= 0:
            continue
        a = rng.uniform(0.05, 3.0, per_batch)
        pos = gaussian_density(positive_preferential(a), sigma)
        neg = gaussian_density(positive_preferential(-a), sigma)
        failures += int(np.sum(~(pos > neg)))
        checked += per_batch
    return CheckResult("raw priority of +a exceeds -a", failures == 0, checked, f"{failures} violations")


def check_peak_at_center(seed: int, count: int) -> CheckResult:
    failures = 0
    for _, d in _batches(seed, count):
        wv = compute_weights(d)
        peak = np.abs(wv.delta_m) == np.abs(wv.delta_m).min()
        if not np.all(wv.omega[peak] == wv.omega.max()):
            failures += 1
    return CheckResult("argmax omega = argmin |delta_m|", failures == 0, count, f"{failures} violations")


def check_degenerate_batches() -> CheckResult:
    cases = [np.zeros(7), np.full(5, 3.25), np.full(4, -2.0), np.array([4.2]), np.array([0.0])]
    configs = [KernelConfig(normalization_mode=m, compensation_norm=c) for m in ("combined", "mean", "median") for c in ("L1", "L2")]
    failures = 0
    with np.errstate(all="raise"):
        for d in cases:
            for cfg in configs:
                try:
                    omega = compute_weights(d, cfg).omega
                except FloatingPointError:
                    failures += 1
                    continue
                if not np.array_equal(omega, np.ones_like(d)):
                    failures += 1
        try:
            ok_zero = np.array_equal(compensate(np.full(3, 1 / 3), np.zeros(3)), np.ones(3))
        except FloatingPointError:
            ok_zero = False
    failures += 0 if ok_zero else 1
    return CheckResult("degenerate batches give unit weights", failures == 0, len(cases) * len(configs) + 1, f"{failures} violations")


def run_property_suite(seed: int = 0, count: int = 1000) -> list[CheckResult]:
    return [
        check_offset_invariance(seed, count),
        check_simplex_and_positive(seed + 1, count),
        check_l1_identity(seed + 2, count),
        check_uncompensated_loss_drop(seed + 3, count),
        check_positive_side_preferred(seed + 4, count),
        check_peak_at_center(seed + 5, count),
        check_degenerate_batches(),
    ]


def format_results(results: list[CheckResult], elapsed: float) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.name.ljust(width)}  n={r.checked:<6d} {r.detail}" for r in results]
    verdict = "all checks passed" if all(r.passed for r in results) else "property suite FAILED"
    lines.append(f"{verdict} in {elapsed:.2f} s")
    return "\n".join(lines)


def main_suite(seed: int = 0, count: int = 1000) -> tuple[bool, str]:
    start = time.perf_counter()
    results = run_property_suite(seed, count)
    text = format_results(results, time.perf_counter() - start)
    return all(r.passed for r in results), text
