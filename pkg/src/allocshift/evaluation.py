"""Cross-metric evaluation of converged shifts and oracle-ratio curves.

evaluate_shift plays a shift forward: instances are drawn from the induced
across-instance distribution, problems from each induced within-instance
distribution, and the average decision loss (not the shifted variant) comes
back with a Monte Carlo standard error over the instance draws.

cross_metric_matrix arranges those numbers the way the headline comparison
does: row = metric whose worst case produced the shift, column = metric the
shift is evaluated on. diagonal_normalize rescales each column by its diagonal
entry, flipping to diagonal/value for cross-entropy columns whose losses are
negative (closer to zero is worse).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Cohort
from .engine import (FwParams, LossCache, WorstCaseReport, _fw_inner_arrays,
                     find_worst_case, substream)
from .errors import ConfigError, DataError, NumericalError
from .losses import LossSpec, PoolData
from .oracle import enumerate_problems, exact_objective, oracle_maximize
from .predictors import Predictor, predict_pool
from .uncertainty import (HierarchicalShift, UncertaintyBudget, is_feasible,
                          offset_to_distribution)

_STREAM_EVAL = 2  # engine reserves 0 (gradients), 1 (lambda), 3 (ad hoc sampling)


def _check_shift_shapes(cohort: Cohort, shift: HierarchicalShift) -> None:
    k = len(cohort.pools)
    if shift.across.shape != (k,):
        raise DataError(f"shift covers {shift.across.shape[0]} instances, cohort has {k}")
    for j, pool in enumerate(cohort.pools):
        if shift.within[j].shape != (len(pool),):
            raise DataError(
                f"instance {pool.instance_id!r}: shift offset has {shift.within[j].shape[0]} "
                f"coordinates, pool has {len(pool)}")


def evaluate_shift_stats(cohort: Cohort, predictor: Predictor, spec: LossSpec,
                         shift: HierarchicalShift, num_instance_draws: int = 200,
                         num_problem_draws: int = 4000, draw_size: int | None = None,
                         seed: int = 0, budget: UncertaintyBudget | None = None
                         ) -> tuple[float, float]:
    """Mean and standard error of the decision loss under a shift.

    One outer draw picks an instance from the induced across-instance
    distribution and averages the loss of num_problem_draws problems from that
    instance's induced distribution; the standard error is taken over the outer
    draws. Deterministic for a given seed regardless of scheduling, because
    every instance owns its own counter-keyed stream.
    """
    if spec.task != cohort.task:
        raise ConfigError(f"loss {spec.kind!r} applies to {spec.task} cohorts, not {cohort.task}")
    if num_instance_draws < 1 or num_problem_draws < 1:
        raise ConfigError("draw counts must be >= 1")
    _check_shift_shapes(cohort, shift)
    if budget is not None:
        ok, why = is_feasible(shift, budget)
        if not ok:
            raise DataError(f"shift violates the stated budget: {why}")

    k = len(cohort.pools)
    q_xi = offset_to_distribution(shift.across)
    rng = substream(seed, _STREAM_EVAL, 0)
    picks = rng.choice(k, size=num_instance_draws, p=q_xi / q_xi.sum())

    outer_means = np.empty(num_instance_draws)
    for j, pool in enumerate(cohort.pools):
        where = np.nonzero(picks == j)[0]
        if where.size == 0:
            continue
        q = offset_to_distribution(shift.within[j])
        q = q / q.sum()
        n = draw_size or len(pool)
        cache = LossCache(PoolData.from_pool(pool, predict_pool(predictor, pool)), spec)
        rng_j = substream(seed, _STREAM_EVAL, 1 + j)
        idx = rng_j.choice(len(pool), size=(where.size * num_problem_draws, n), p=q)
        dl = cache.shifted(idx).reshape(where.size, num_problem_draws) + 1.0
        outer_means[where] = dl.mean(axis=1)

    mean = float(outer_means.mean())
    if num_instance_draws == 1:
        return mean, 0.0
    return mean, float(outer_means.std(ddof=1) / np.sqrt(num_instance_draws))


def evaluate_shift(cohort: Cohort, predictor: Predictor, spec: LossSpec,
                   shift: HierarchicalShift, num_instance_draws: int = 200,
                   num_problem_draws: int = 4000, draw_size: int | None = None,
                   seed: int = 0, budget: UncertaintyBudget | None = None) -> float:
    """Expected decision loss under a shift; see evaluate_shift_stats."""
    return evaluate_shift_stats(cohort, predictor, spec, shift, num_instance_draws,
                                num_problem_draws, draw_size, seed, budget)[0]


@dataclass(eq=False)
class CrossMetricMatrix:
    """Row metric drives the shift, column metric scores it."""

    row_metrics: list[str]
    col_metrics: list[str]
    col_kinds: list[str]
    values: np.ndarray
    stderr: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        r, c = len(self.row_metrics), len(self.col_metrics)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.stderr = np.asarray(self.stderr, dtype=np.float64)
        if self.values.shape != (r, c) or self.stderr.shape != (r, c):
            raise ValueError(f"matrix shape {self.values.shape} does not match {r} x {c} labels")
        if len(self.col_kinds) != c:
            raise ValueError("col_kinds must align with col_metrics")


def metric_names(specs: list[LossSpec]) -> list[str]:
    """Kind names, suffixed on repeats so duplicate specs stay distinguishable."""
    names, seen = [], {}
    for spec in specs:
        seen[spec.kind] = seen.get(spec.kind, 0) + 1
        names.append(spec.kind if seen[spec.kind] == 1 else f"{spec.kind}#{seen[spec.kind]}")
    return names


def matrix_from_shifts(cohort: Cohort, predictor: Predictor, row_names: list[str],
                       shifts: list[HierarchicalShift], col_specs: list[LossSpec],
                       num_instance_draws: int = 200, num_problem_draws: int = 4000,
                       draw_size: int | None = None, seed: int = 0) -> CrossMetricMatrix:
    """Evaluate pre-computed shifts (one per row) on every column metric."""
    if len(row_names) != len(shifts):
        raise ConfigError("one row name per shift required")
    col_names = metric_names(col_specs)
    values = np.empty((len(shifts), len(col_specs)))
    stderr = np.empty_like(values)
    for r, shift in enumerate(shifts):
        for c, spec in enumerate(col_specs):
            values[r, c], stderr[r, c] = evaluate_shift_stats(
                cohort, predictor, spec, shift, num_instance_draws, num_problem_draws,
                draw_size, seed)
    return CrossMetricMatrix(row_metrics=list(row_names), col_metrics=col_names,
                             col_kinds=[s.kind for s in col_specs], values=values,
                             stderr=stderr)


def cross_metric_matrix(cohort: Cohort, predictor: Predictor, specs: list[LossSpec],
                        budget: UncertaintyBudget, params: FwParams,
                        num_instance_draws: int = 200, num_problem_draws: int = 4000,
                        workers: int | None = None
                        ) -> tuple[CrossMetricMatrix, list[WorstCaseReport]]:
    """Worst-case shift per metric, then the full rows-by-columns evaluation."""
    if not specs:
        raise ConfigError("at least one metric required")
    for spec in specs:
        if spec.task != cohort.task:
            raise ConfigError(
                f"loss {spec.kind!r} applies to {spec.task} cohorts, not {cohort.task}")
    reports = [find_worst_case(cohort, predictor, spec, budget, params, workers=workers)
               for spec in specs]
    matrix = matrix_from_shifts(cohort, predictor, metric_names(specs),
                                [rep.shift for rep in reports], specs,
                                num_instance_draws, num_problem_draws,
                                params.draw_size, params.seed)
    return matrix, reports


def diagonal_normalize(matrix: CrossMetricMatrix) -> CrossMetricMatrix:
    """Divide each column by its diagonal entry; cross-entropy columns divide
    the diagonal by the entry instead, since their losses are negative."""
    if matrix.normalized:
        raise ConfigError("matrix is already normalized")
    r, c = matrix.values.shape
    if r != c or matrix.row_metrics != matrix.col_metrics:
        raise ConfigError("diagonal normalization needs matching row and column metrics")
    values = np.empty_like(matrix.values)
    stderr = np.empty_like(matrix.stderr)
    for j in range(c):
        diag = matrix.values[j, j]
        if diag == 0.0:
            raise NumericalError(f"zero diagonal in column {matrix.col_metrics[j]!r}")
        if matrix.col_kinds[j] == "cross_entropy":
            for i in range(r):
                entry = matrix.values[i, j]
                if entry == 0.0:
                    raise NumericalError(
                        f"zero entry at ({matrix.row_metrics[i]!r}, {matrix.col_metrics[j]!r}) "
                        "in a cross-entropy column")
                values[i, j] = diag / entry
                stderr[i, j] = abs(values[i, j]) * (matrix.stderr[i, j] / abs(entry))
        else:
            values[:, j] = matrix.values[:, j] / diag
            stderr[:, j] = matrix.stderr[:, j] / abs(diag)
        values[j, j] = 1.0
    return CrossMetricMatrix(row_metrics=list(matrix.row_metrics),
                             col_metrics=list(matrix.col_metrics),
                             col_kinds=list(matrix.col_kinds),
                             values=values, stderr=stderr, normalized=True)


@dataclass(eq=False)
class OracleRatioCurve:
    """Per-pool achieved-over-optimal ratios along a gradient-sample grid."""

    grid: list[int]
    instance_ids: list[str]
    ratios: np.ndarray  # (pools, grid points)

    def __post_init__(self):
        self.ratios = np.asarray(self.ratios, dtype=np.float64)
        if self.ratios.shape != (len(self.instance_ids), len(self.grid)):
            raise ValueError("ratio matrix must be pools x grid points")

    @property
    def mean(self) -> np.ndarray:
        return self.ratios.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        if self.ratios.shape[0] < 2:
            return np.zeros(len(self.grid))
        return self.ratios.std(axis=0, ddof=1) / np.sqrt(self.ratios.shape[0])


def _value_ratio(achieved: float, optimal: float) -> float:
    # negative-valued metrics flip: the optimum is the value nearest zero
    if optimal > 0.0:
        return achieved / optimal
    if optimal < 0.0:
        return optimal / achieved
    raise NumericalError("oracle value is exactly zero; ratio undefined")


def oracle_ratio_curve(cohort: Cohort, predictor: Predictor, spec: LossSpec,
                       budget: UncertaintyBudget, grid: list[int], seed: int = 0,
                       params: FwParams | None = None,
                       oracle_restarts: int = 20) -> OracleRatioCurve:
    """Search quality against the exact oracle as gradient samples grow.

    Per pool and grid point, the inner search runs with that many gradient
    samples; its converged distribution is scored exactly by the enumeration
    oracle and divided by the oracle maximum. The oracle ascends from the
    search outputs too, so every ratio is at most 1 up to float noise.
    """
    if spec.task != cohort.task:
        raise ConfigError(f"loss {spec.kind!r} applies to {spec.task} cohorts, not {cohort.task}")
    grid = [int(g) for g in grid]
    if not grid or any(g < 1 for g in grid):
        raise ConfigError("sample grid must be non-empty positive integers")
    if sorted(grid) != grid:
        raise ConfigError("sample grid must be increasing")
    base = params or FwParams()

    ratios = np.empty((len(cohort.pools), len(grid)))
    for j, pool in enumerate(cohort.pools):
        pd = PoolData.from_pool(pool, predict_pool(predictor, pool))
        n = base.draw_size or len(pool)
        enum = enumerate_problems(pool, predictor, spec, n)
        cache = LossCache(pd, spec)
        achieved = []
        for g in grid:
            p_g = replace(base, num_samples=g, seed=seed)
            w, _ = _fw_inner_arrays(pd, spec, budget.rho_ind, p_g, j, cache=cache)
            q = offset_to_distribution(w)
            achieved.append((q, exact_objective(enum, q) + 1.0))
        _, best = oracle_maximize(enum, budget.rho_ind, restarts=oracle_restarts,
                                  seed=seed, extra_starts=[q for q, _ in achieved])
        optimal = best + 1.0
        for gi, (_, vfw) in enumerate(achieved):
            ratios[j, gi] = _value_ratio(vfw, optimal)
    return OracleRatioCurve(grid=grid, instance_ids=cohort.instance_ids, ratios=ratios)
