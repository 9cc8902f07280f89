"""Worst-case search engine: momentum Frank-Wolfe over the two-level uncertainty set.

Within each instance, the engine ascends the expected shifted loss E[DL'] with
sampled gradients and a linear maximization oracle over the chi-square ball
(gradmax), stepping 1/iterations per round so the final point is a convex
combination of feasible vertices. Across instances, a single gradmax over the
estimated per-instance losses picks the worst mixture, and the reported value
adds the +1 correction that converts shifted losses back to expected decision
loss.

Randomness is counter-based: every (seed, stream, instance, iteration) tuple
owns an independent generator, and samples are drawn vectorized in fixed order
within it, so worker scheduling can never change results.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Cohort, InstancePool
from .errors import ConfigError
from .losses import (DrawnProblem, FairnessGini, LossSpec, PoolData, TopK,
                     batch_shifted_loss, loss_spec_to_dict, parse_loss_spec)
from .predictors import Predictor, predict_pool
from .uncertainty import (HierarchicalShift, UncertaintyBudget, gradmax,
                          offset_to_distribution, shift_from_dict, shift_to_dict,
                          uniform_center)

_STREAM_GRAD = 0
_STREAM_LAMBDA = 1
_STREAM_EVAL = 2
_STREAM_SAMPLE = 3

_TOPK_LIKE = (TopK, FairnessGini)  # specs whose k must fit in a draw


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for a (seed, *keys) counter tuple."""
    if seed < 0:
        raise ValueError(f"seed must be >= 0, got {seed}")
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


@dataclass(frozen=True)
class FwParams:
    """Search hyperparameters. Defaults follow the reference configuration:
    15 iterations, momentum 0.7, 35000 gradient samples and 4000 loss samples."""

    iterations: int = 15
    num_samples: int = 35000
    num_samples2: int = 4000
    momentum: float = 0.7
    draw_size: int | None = None  # None: draw pool-size individuals per problem
    seed: int = 0
    literal_sign: bool = False  # flip the gradient inside the linear oracle (descends)

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.num_samples < 1 or self.num_samples2 < 1:
            raise ConfigError("num_samples and num_samples2 must be >= 1")
        if not 0.0 < self.momentum <= 1.0:
            raise ConfigError(f"momentum must lie in (0, 1], got {self.momentum}")
        if self.draw_size is not None and self.draw_size < 1:
            raise ConfigError(f"draw_size must be >= 1, got {self.draw_size}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


class LossCache:
    """Shifted-loss evaluation with multiset deduplication.

    Decision losses are permutation-invariant, so rows are sorted and cached by
    the resulting byte key; repeated multisets across iterations are free.
    """

    def __init__(self, pd: PoolData, spec: LossSpec):
        self.pd = pd
        self.spec = spec
        self._store: dict[bytes, float] = {}

    def shifted(self, idx: np.ndarray) -> np.ndarray:
        idx = np.sort(np.asarray(idx, dtype=np.int64), axis=1)
        uniq, inverse = np.unique(idx, axis=0, return_inverse=True)
        vals = np.empty(uniq.shape[0])
        missing = []
        for r in range(uniq.shape[0]):
            key = uniq[r].tobytes()
            got = self._store.get(key)
            if got is None:
                missing.append(r)
            else:
                vals[r] = got
        if missing:
            rows = uniq[np.array(missing, dtype=np.int64)]
            fresh = batch_shifted_loss(self.spec, self.pd, rows)
            for pos, r in enumerate(missing):
                self._store[uniq[r].tobytes()] = float(fresh[pos])
                vals[r] = fresh[pos]
        return vals[inverse.ravel()]


def sample_problem(pool: InstancePool, predictor: Predictor, q: np.ndarray,
                   draw_size: int, rng: np.random.Generator) -> DrawnProblem:
    """Draw one problem of draw_size individuals from pool with weights q."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (len(pool),) or np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("q must be a probability vector over the pool")
    scores = predict_pool(predictor, pool)
    idx = rng.choice(len(pool), size=draw_size, p=q / q.sum())
    return DrawnProblem(pool=pool, indices=idx, predictions=scores[idx], labels=pool.labels[idx])


def _row_counts(idx: np.ndarray, m: int) -> np.ndarray:
    counts = np.zeros((idx.shape[0], m), dtype=np.float64)
    rows = np.repeat(np.arange(idx.shape[0]), idx.shape[1])
    np.add.at(counts, (rows, idx.ravel()), 1.0)
    return counts


def _gradient_batch(cache: LossCache, q: np.ndarray, num_samples: int, draw_size: int,
                    rng: np.random.Generator, center: bool = False
                    ) -> tuple[np.ndarray, float]:
    """Score-function estimate of dE[DL']/dq plus the batch mean of DL'.

    With center=True the batch mean of DL' is subtracted before weighting
    (a control-variate baseline). That shifts every coordinate by the same
    baseline * draw_size, and a constant shift never changes the maximizer of
    <v, q> over the ball-restricted simplex, while the variance contributed by
    the common-mode part of DL' drops out. Losses that sit near a constant
    (Nash welfare especially) are unrecoverable at practical sample sizes
    without it.
    """
    m = q.shape[0]
    idx = rng.choice(m, size=(num_samples, draw_size), p=q)
    dl = cache.shifted(idx)
    counts = _row_counts(idx, m)
    inv_q = np.where(q > 0, 1.0 / np.maximum(q, 1e-300), 0.0)
    mean_dl = float(dl.mean())
    weights = dl - mean_dl if center else dl
    grad = (weights[:, None] * counts).mean(axis=0) * inv_q
    return grad, mean_dl


def estimate_gradient(pool: InstancePool, predictor: Predictor, spec: LossSpec,
                      q: np.ndarray, num_samples: int, draw_size: int,
                      rng: np.random.Generator | int) -> np.ndarray:
    """Unbiased Monte Carlo estimate of the gradient of E[DL'] at q.

    Coordinate a averages DL' * count(a) / q_a over sampled problems; a
    coordinate with q_a = 0 is never drawn and its estimate is the 0 limit.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (len(pool),) or np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("q must be a probability vector over the pool")
    if isinstance(rng, (int, np.integer)):
        rng = substream(int(rng), _STREAM_SAMPLE)
    scores = predict_pool(predictor, pool)
    cache = LossCache(PoolData.from_pool(pool, scores), spec)
    grad, _ = _gradient_batch(cache, q / q.sum(), num_samples, draw_size, rng)
    return grad


@dataclass
class InstanceTrace:
    """Per-iteration diagnostics for one instance's inner search."""

    objective: list[float] = field(default_factory=list)  # expected decision loss estimate
    grad_norm: list[float] = field(default_factory=list)
    divergence: list[float] = field(default_factory=list)


def _fw_inner_arrays(pd: PoolData, spec: LossSpec, rho_ind: float, params: FwParams,
                     instance_index: int, cache: LossCache | None = None
                     ) -> tuple[np.ndarray, InstanceTrace]:
    m = pd.size
    n = params.draw_size or m
    center = uniform_center(m)
    cache = cache or LossCache(pd, spec)
    w = np.zeros(m)
    v = np.zeros(m)
    trace = InstanceTrace()
    sign = -1.0 if params.literal_sign else 1.0
    for it in range(params.iterations):
        q = np.maximum(w + center, 0.0)
        q = q / q.sum()
        rng = substream(params.seed, _STREAM_GRAD, instance_index, it)
        grad, mean_dl = _gradient_batch(cache, q, params.num_samples, n, rng, center=True)
        v = params.momentum * (sign * grad) + (1.0 - params.momentum) * v
        target = gradmax(v, center, rho_ind)
        w = w + (target - center) / params.iterations
        trace.objective.append(mean_dl + 1.0)
        trace.grad_norm.append(float(np.linalg.norm(grad)))
        trace.divergence.append(float(((q - center) ** 2 / center).sum()))
    return w, trace


def fw_inner(pool: InstancePool, predictor: Predictor, spec: LossSpec,
             budget: UncertaintyBudget, params: FwParams,
             instance_index: int = 0) -> tuple[np.ndarray, InstanceTrace]:
    """Within-instance search; returns the converged offset and its trace.

    Every intermediate offset is feasible: each step mixes 1/iterations of a
    gradmax output (a ball point) into the current convex combination. The
    trace objective is the expected decision loss estimate at each iterate.
    """
    scores = predict_pool(predictor, pool)
    pd = PoolData.from_pool(pool, scores)
    return _fw_inner_arrays(pd, spec, budget.rho_ind, params, instance_index)


def _instance_loss_arrays(cache: LossCache, w: np.ndarray, params: FwParams,
                          instance_index: int) -> float:
    q = offset_to_distribution(w)
    q = q / q.sum()
    n = params.draw_size or q.shape[0]
    rng = substream(params.seed, _STREAM_LAMBDA, instance_index, 0)
    idx = rng.choice(q.shape[0], size=(params.num_samples2, n), p=q)
    return float(cache.shifted(idx).mean())


def estimate_instance_loss(pool: InstancePool, predictor: Predictor, spec: LossSpec,
                           w: np.ndarray, params: FwParams, instance_index: int = 0) -> float:
    """Monte Carlo mean of DL' under the converged within-instance offset."""
    scores = predict_pool(predictor, pool)
    pd = PoolData.from_pool(pool, scores)
    return _instance_loss_arrays(LossCache(pd, spec), w, params, instance_index)


def fw_outer(instance_losses: np.ndarray, rho_xi: float) -> np.ndarray:
    """Across-instance offset: one exact linear maximization over the xi ball."""
    lam = np.asarray(instance_losses, dtype=np.float64)
    k = lam.shape[0]
    return gradmax(lam, uniform_center(k), rho_xi) - 1.0 / k


@dataclass(eq=False)
class WorstCaseReport:
    """Converged shift, per-instance losses, worst-case value, and diagnostics."""

    shift: HierarchicalShift
    instance_losses: np.ndarray
    value: float
    budget: UncertaintyBudget
    params: FwParams
    spec: LossSpec
    instance_ids: list[str]
    traces: list[InstanceTrace]


def _instance_worker(payload):
    (pd, spec, rho_ind, params, j, instance_id) = payload
    try:
        cache = LossCache(pd, spec)
        w, trace = _fw_inner_arrays(pd, spec, rho_ind, params, j, cache=cache)
        lam = _instance_loss_arrays(cache, w, params, j)
    except Exception as exc:
        raise type(exc)(f"instance {instance_id!r}: {exc}") from exc
    return w, trace, lam


def find_worst_case(cohort: Cohort, predictor: Predictor, spec: LossSpec,
                    budget: UncertaintyBudget, params: FwParams,
                    workers: int | None = None) -> WorstCaseReport:
    """Run the full two-level search over a cohort.

    The reported value is <induced instance distribution, instance losses> + 1,
    the worst-case expected decision loss. Instances may run in parallel;
    results are reduced in instance order and are identical for any worker count.
    """
    if spec.task != cohort.task:
        raise ConfigError(f"loss {spec.kind!r} applies to {spec.task} cohorts, not {cohort.task}")
    n = params.draw_size
    if n is not None and isinstance(spec, _TOPK_LIKE) and spec.k > n:
        raise ConfigError(f"k={spec.k} exceeds draw_size={n}")

    payloads = []
    for j, pool in enumerate(cohort.pools):
        scores = predict_pool(predictor, pool)
        payloads.append((PoolData.from_pool(pool, scores), spec, budget.rho_ind, params, j,
                         cohort.instance_ids[j]))

    if workers and workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool_exec:
            results = list(pool_exec.map(_instance_worker, payloads))
    else:
        results = [_instance_worker(p) for p in payloads]

    within = tuple(r[0] for r in results)
    traces = [r[1] for r in results]
    lam = np.array([r[2] for r in results])
    across = fw_outer(lam, budget.rho_xi)
    shift = HierarchicalShift(across=across, within=within)
    value = float(offset_to_distribution(across) @ lam + 1.0)
    return WorstCaseReport(shift=shift, instance_losses=lam, value=value, budget=budget,
                           params=params, spec=spec, instance_ids=cohort.instance_ids,
                           traces=traces)


def report_to_dict(report: WorstCaseReport, cohort_path: str | None = None,
                   predictor_path: str | None = None) -> dict:
    return {
        "value": report.value,
        "instance_losses": report.instance_losses.tolist(),
        "shift": shift_to_dict(report.shift, report.instance_ids, report.budget),
        "loss": loss_spec_to_dict(report.spec),
        "params": {
            "iterations": report.params.iterations,
            "num_samples": report.params.num_samples,
            "num_samples2": report.params.num_samples2,
            "momentum": report.params.momentum,
            "draw_size": report.params.draw_size,
            "seed": report.params.seed,
            "literal_sign": report.params.literal_sign,
        },
        "traces": [
            {"objective": t.objective, "grad_norm": t.grad_norm, "divergence": t.divergence}
            for t in report.traces
        ],
        "inputs": {"cohort": cohort_path, "predictor": predictor_path},
    }


def save_report(report: WorstCaseReport, path: str, cohort_path: str | None = None,
                predictor_path: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report, cohort_path, predictor_path), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_report(path: str) -> dict:
    """Reports are consumed as dicts; the shift round-trips via shift_from_dict."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    shift, ids, budget = shift_from_dict(raw["shift"])
    raw["shift_obj"] = shift
    raw["instance_ids_order"] = ids
    raw["budget_obj"] = budget
    raw["loss_obj"] = parse_loss_spec(raw["loss"])
    return raw
