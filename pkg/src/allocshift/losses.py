"""Decision losses: how much a downstream allocation decays when it trusts predictions.

Each variant maps a drawn problem (n individuals sampled with replacement from a
pool) to a decision loss DL <= 1. Regret-style variants live in [0, 1]; the
cross-entropy variant is always negative by construction. shifted_loss subtracts
1 so every variant is <= 0, which is what the search engine optimizes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .data import BINARY, REGRESSION, InstancePool
from .errors import ConfigError

_EPS = 1e-12
_MAX_ENUM_ITEMS = 20


# --- loss specifications -------------------------------------------------

@dataclass(frozen=True)
class TopK:
    """Regret of selecting k individuals by predicted score, normalized by k."""

    k: int
    kind = "top_k"
    task = BINARY

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"top_k requires k >= 1, got {self.k}")


@dataclass(frozen=True)
class Knapsack:
    """Budgeted-selection regret, normalized by max(best true value, 1).

    budget=None resolves per pool to half the cost of a typical problem:
    max(1, round(0.5 * draw_size * mean pool cost)). use_costs=False replaces
    costs with 1 each, making top-k the equal-cost special case.
    """

    budget: int | None = None
    use_costs: bool = True
    kind = "knapsack"
    task = BINARY

    def __post_init__(self):
        if self.budget is not None and self.budget < 0:
            raise ValueError(f"knapsack budget must be >= 0, got {self.budget}")


@dataclass(frozen=True)
class FairnessGini:
    """Gini index of per-group true-positive rates of the top-k decision.

    Groups with no positive member are excluded; fewer than two remaining
    groups yield DL = 0.
    """

    k: int
    kind = "fairness_gini"
    task = BINARY

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"fairness_gini requires k >= 1, got {self.k}")


@dataclass(frozen=True)
class NashWelfare:
    """Relative regret of a water-filling budget split, clipped to [0, 1].

    Allocations maximize sum(log((income + grant) / floor)); floor=None
    resolves to the minimum observed true income in the pool.
    """

    budget: float
    floor: float | None = None
    kind = "nash_welfare"
    task = REGRESSION

    def __post_init__(self):
        if self.budget <= 0:
            raise ValueError(f"nash_welfare budget must be > 0, got {self.budget}")
        if self.floor is not None and self.floor <= 0:
            raise ValueError(f"nash_welfare floor must be > 0, got {self.floor}")


@dataclass(frozen=True)
class MisclassRate:
    """Fraction of drawn individuals whose thresholded score disagrees with the label."""

    threshold: float = 0.5
    kind = "misclass_rate"
    task = BINARY

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")


@dataclass(frozen=True)
class CrossEntropy:
    """-1 / max(mean cross-entropy, eps); always negative, larger = worse predictions."""

    eps: float = 1e-12
    kind = "cross_entropy"
    task = BINARY

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")


@dataclass(frozen=True)
class Mse:
    """min(1, log2(max(MSE, eps)) / scale); compresses unbounded squared error to <= 1."""

    scale: float = 10.0
    eps: float = 1e-12
    kind = "mse"
    task = REGRESSION

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")


LossSpec = TopK | Knapsack | FairnessGini | NashWelfare | MisclassRate | CrossEntropy | Mse

_KINDS = {cls.kind: cls for cls in (TopK, Knapsack, FairnessGini, NashWelfare, MisclassRate, CrossEntropy, Mse)}


def loss_spec_to_dict(spec: LossSpec) -> dict:
    out = {"kind": spec.kind}
    for name in spec.__dataclass_fields__:
        out[name] = getattr(spec, name)
    return out


def parse_loss_spec(source: dict | str) -> LossSpec:
    """Parse a loss spec from a dict, a JSON string, or a JSON file path."""
    if isinstance(source, str):
        text = source.strip()
        if not text.startswith("{"):
            with open(source, "r", encoding="utf-8") as fh:
                text = fh.read()
        try:
            source = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"loss spec is not valid JSON: {exc}") from exc
    if not isinstance(source, dict) or "kind" not in source:
        raise ConfigError("loss spec must be an object with a 'kind' key")
    kind = source["kind"]
    if kind not in _KINDS:
        raise ConfigError(f"unknown loss kind {kind!r}; choose from {sorted(_KINDS)}")
    kwargs = {k: v for k, v in source.items() if k != "kind"}
    try:
        return _KINDS[kind](**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad parameters for loss {kind!r}: {exc}") from exc


# --- drawn problems -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DrawnProblem:
    """One sampled problem: indices into a pool plus the gathered scores/labels."""

    pool: InstancePool
    indices: np.ndarray
    predictions: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "predictions", np.asarray(self.predictions, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.float64))
        if self.indices.size == 0:
            raise ValueError("a drawn problem needs at least one individual")
        if not (self.indices.shape == self.predictions.shape == self.labels.shape):
            raise ValueError("indices, predictions, and labels must have matching shapes")


@dataclass(frozen=True, eq=False)
class PoolData:
    """Pool-level arrays the batch evaluators index into."""

    scores: np.ndarray
    labels: np.ndarray
    costs: np.ndarray
    groups: np.ndarray

    @staticmethod
    def from_pool(pool: InstancePool, scores: np.ndarray) -> "PoolData":
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (len(pool),):
            raise ValueError(f"scores must have shape ({len(pool)},), got {scores.shape}")
        return PoolData(scores=scores, labels=pool.labels, costs=pool.costs, groups=pool.groups)

    @property
    def size(self) -> int:
        return self.scores.shape[0]

    @property
    def min_label(self) -> float:
        return float(self.labels.min())


# --- exact solvers --------------------------------------------------------

def solve_topk(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, ties broken toward the smaller index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= k <= scores.shape[0]:
        raise ValueError(f"k must lie in [1, {scores.shape[0]}], got {k}")
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def solve_knapsack(values: np.ndarray, costs: np.ndarray, budget: int) -> np.ndarray:
    """Exact 0/1 knapsack via dynamic programming over integer capacities.

    Among optimal subsets, returns the lexicographically smallest index set
    (compared as sorted index tuples).
    """
    values = np.asarray(values, dtype=np.float64)
    costs_arr = np.asarray(costs)
    if np.any(costs_arr < 0):
        raise ValueError("knapsack costs must be non-negative")
    if not np.all(costs_arr == np.rint(costs_arr)):
        raise ValueError("knapsack costs must be integers")
    costs_int = np.rint(costs_arr).astype(np.int64)
    budget = int(budget)
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    n = values.shape[0]

    # best[i][b]: max value using items i.. with capacity b
    best = np.zeros((n + 1, budget + 1))
    for i in range(n - 1, -1, -1):
        best[i] = best[i + 1]
        c = costs_int[i]
        if c <= budget:
            take = values[i] + best[i + 1, : budget - c + 1]
            best[i, c:] = np.maximum(best[i + 1, c:], take)
    opt = best[0, budget]

    tol = 1e-9 * max(1.0, abs(opt))
    chosen = []
    acc = 0.0
    cap = budget
    for i in range(n):
        if acc >= opt - tol:
            break  # the prefix is already optimal; extensions are lex-larger
        if costs_int[i] <= cap and acc + values[i] + best[i + 1, cap - costs_int[i]] >= opt - tol:
            chosen.append(i)
            acc += values[i]
            cap -= costs_int[i]
    return np.array(chosen, dtype=np.int64)


def allocate_waterfill(incomes: np.ndarray, budget: float) -> np.ndarray:
    """Split a budget to equalize income + grant from the bottom up.

    Maximizes sum(log(income_i + z_i)) over z >= 0, sum(z) = budget; the
    optimum raises the poorest to a common water level.
    """
    incomes = np.asarray(incomes, dtype=np.float64)
    if np.any(incomes <= 0):
        raise ValueError("waterfill incomes must be strictly positive")
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    return _waterfill_batch(incomes[None, :], float(budget))[0]


def _waterfill_batch(incomes: np.ndarray, budget: float) -> np.ndarray:
    s = np.sort(incomes, axis=1)
    csum = np.cumsum(s, axis=1)
    counts = np.arange(1, incomes.shape[1] + 1, dtype=np.float64)
    levels = (budget + csum) / counts  # water level if the t poorest get topped up
    nxt = np.concatenate([s[:, 1:], np.full((s.shape[0], 1), np.inf)], axis=1)
    ok = levels <= nxt
    first = np.argmax(ok, axis=1)
    level = np.take_along_axis(levels, first[:, None], axis=1)
    return np.maximum(level - incomes, 0.0)


def gini(values: np.ndarray) -> float:
    """Mean absolute difference over twice the mean: sum|v_a - v_b| / (2 g^2 vbar)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("gini requires at least one value")
    if np.any(values < 0):
        raise ValueError("gini requires non-negative values")
    vbar = values.mean()
    if vbar == 0:
        return 0.0
    g = values.shape[0]
    return float(np.abs(values[:, None] - values[None, :]).sum() / (2.0 * g * g * vbar))


# --- subset enumeration (shared by batch knapsack) -------------------------

@lru_cache(maxsize=None)
def _lex_masks(n: int) -> np.ndarray:
    """All subsets of range(n) as 0/1 rows, ordered by lexicographic index tuples.

    np.argmax over this ordering returns the lexicographically smallest
    optimum, matching solve_knapsack's tie-break.
    """
    rows = []

    def rec(prefix, start):
        mask = np.zeros(n, dtype=np.float64)
        mask[prefix] = 1.0
        rows.append(mask)
        for i in range(start, n):
            rec(prefix + [i], i + 1)

    rec([], 0)
    return np.stack(rows)


def _resolve_budget(spec: Knapsack, pd: PoolData, n: int) -> int:
    if spec.budget is not None:
        return int(spec.budget)
    mean_cost = float(pd.costs.mean()) if spec.use_costs else 1.0
    return max(1, int(round(0.5 * n * mean_cost)))


def _resolve_floor(spec: NashWelfare, pd: PoolData) -> float:
    return spec.floor if spec.floor is not None else pd.min_label


# --- batch evaluation -----------------------------------------------------

def batch_decision_loss(spec: LossSpec, pd: PoolData, idx: np.ndarray) -> np.ndarray:
    """Decision loss for each row of idx, an (S, n) matrix of pool indices."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[1] == 0:
        raise ValueError(f"idx must be a 2-d (S, n) matrix, got shape {idx.shape}")
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= pd.size:
        raise ValueError("idx contains out-of-range pool indices")

    if isinstance(spec, TopK):
        return _dl_topk(pd, idx, spec.k)
    if isinstance(spec, Knapsack):
        return _dl_knapsack(pd, idx, spec)
    if isinstance(spec, FairnessGini):
        return _dl_fairness(pd, idx, spec.k)
    if isinstance(spec, NashWelfare):
        return _dl_nash(pd, idx, spec)
    if isinstance(spec, MisclassRate):
        scores = pd.scores[idx]
        labels = pd.labels[idx]
        return ((scores >= spec.threshold) != (labels == 1.0)).mean(axis=1)
    if isinstance(spec, CrossEntropy):
        s = np.clip(pd.scores[idx], 1e-15, 1 - 1e-15)
        y = pd.labels[idx]
        ce = -(y * np.log(s) + (1 - y) * np.log(1 - s)).mean(axis=1)
        return -1.0 / np.maximum(ce, spec.eps)
    if isinstance(spec, Mse):
        mse = ((pd.scores[idx] - pd.labels[idx]) ** 2).mean(axis=1)
        return np.minimum(1.0, np.log2(np.maximum(mse, spec.eps)) / spec.scale)
    raise ValueError(f"unknown loss spec {spec!r}")


def _topk_selection(scores: np.ndarray, k: int) -> np.ndarray:
    if k > scores.shape[1]:
        raise ValueError(f"k={k} exceeds problem size {scores.shape[1]}")
    order = np.argsort(-scores, axis=1, kind="stable")
    sel = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(sel, order[:, :k], True, axis=1)
    return sel


def _dl_topk(pd: PoolData, idx: np.ndarray, k: int) -> np.ndarray:
    labels = pd.labels[idx]
    sel = _topk_selection(pd.scores[idx], k)
    f_pred = (labels * sel).sum(axis=1)
    f_opt = np.minimum(float(k), labels.sum(axis=1))
    return (f_opt - f_pred) / k


def _dl_knapsack(pd: PoolData, idx: np.ndarray, spec: Knapsack) -> np.ndarray:
    n = idx.shape[1]
    budget = _resolve_budget(spec, pd, n)
    scores = pd.scores[idx]
    labels = pd.labels[idx]
    if spec.use_costs:
        costs = np.rint(pd.costs).astype(np.int64)[idx].astype(np.float64)
    else:
        costs = np.ones_like(scores)

    if n > _MAX_ENUM_ITEMS:
        dl = np.empty(idx.shape[0])
        for s in range(idx.shape[0]):
            sel_p = solve_knapsack(scores[s], costs[s], budget)
            sel_t = solve_knapsack(labels[s], costs[s], budget)
            f_pred = labels[s][sel_p].sum()
            f_opt = labels[s][sel_t].sum()
            dl[s] = (f_opt - f_pred) / max(f_opt, 1.0)
        return dl

    masks = _lex_masks(n)
    total_cost = costs @ masks.T
    feasible = total_cost <= budget + 1e-9
    pred_value = np.where(feasible, scores @ masks.T, -np.inf)
    true_value = labels @ masks.T
    best_pred = np.argmax(pred_value, axis=1)
    best_true = np.argmax(np.where(feasible, true_value, -np.inf), axis=1)
    f_pred = np.take_along_axis(true_value, best_pred[:, None], axis=1)[:, 0]
    f_opt = np.take_along_axis(true_value, best_true[:, None], axis=1)[:, 0]
    return (f_opt - f_pred) / np.maximum(f_opt, 1.0)


def _dl_fairness(pd: PoolData, idx: np.ndarray, k: int) -> np.ndarray:
    labels = pd.labels[idx]
    groups = pd.groups[idx]
    sel = _topk_selection(pd.scores[idx], k)
    n_groups = int(pd.groups.max()) + 1

    tprs = np.zeros((idx.shape[0], n_groups))
    valid = np.zeros((idx.shape[0], n_groups), dtype=bool)
    for g in range(n_groups):
        pos = (groups == g) & (labels == 1.0)
        npos = pos.sum(axis=1)
        tp = (pos & sel).sum(axis=1)
        has = npos > 0
        tprs[:, g] = np.where(has, tp / np.maximum(npos, 1), 0.0)
        valid[:, g] = has

    nvalid = valid.sum(axis=1)
    vbar = (tprs * valid).sum(axis=1) / np.maximum(nvalid, 1)
    acc = np.zeros(idx.shape[0])
    for a in range(n_groups):
        for b in range(n_groups):
            both = valid[:, a] & valid[:, b]
            acc += both * np.abs(tprs[:, a] - tprs[:, b])
    denom = 2.0 * nvalid.astype(np.float64) ** 2 * vbar
    out = np.where((nvalid >= 2) & (vbar > 0), acc / np.where(denom > 0, denom, 1.0), 0.0)
    return out


def _dl_nash(pd: PoolData, idx: np.ndarray, spec: NashWelfare) -> np.ndarray:
    y = pd.labels[idx]
    s = pd.scores[idx]
    if np.any(y <= 0):
        raise ValueError("nash_welfare requires strictly positive true incomes")
    if np.any(s <= 0):
        raise ValueError("nash_welfare requires strictly positive predicted incomes")
    floor = _resolve_floor(spec, pd)
    z_pred = _waterfill_batch(s, spec.budget)
    z_opt = _waterfill_batch(y, spec.budget)
    f_pred = np.log((y + z_pred) / floor).sum(axis=1)
    f_opt = np.log((y + z_opt) / floor).sum(axis=1)
    return np.clip(1.0 - f_pred / np.maximum(f_opt, _EPS), 0.0, 1.0)


def batch_shifted_loss(spec: LossSpec, pd: PoolData, idx: np.ndarray) -> np.ndarray:
    """batch_decision_loss minus 1; every entry is <= 0."""
    return batch_decision_loss(spec, pd, idx) - 1.0


# --- scalar entry points ----------------------------------------------------

def decision_loss(spec: LossSpec, problem: DrawnProblem) -> float:
    """Decision loss of one drawn problem; invariant under permuting its individuals."""
    pool = problem.pool
    pd = PoolData(
        scores=problem.predictions,
        labels=problem.labels,
        costs=pool.costs[problem.indices],
        groups=pool.groups[problem.indices],
    )
    row = np.arange(problem.indices.shape[0], dtype=np.int64)[None, :]
    if isinstance(spec, Knapsack) and spec.budget is None:
        # resolve against the pool, not the drawn costs, so the budget is stable
        pool_pd = PoolData(scores=problem.predictions, labels=problem.labels,
                           costs=pool.costs, groups=pool.groups)
        spec = Knapsack(budget=_resolve_budget(spec, pool_pd, problem.indices.shape[0]),
                        use_costs=spec.use_costs)
    if isinstance(spec, NashWelfare) and spec.floor is None:
        spec = NashWelfare(budget=spec.budget, floor=float(pool.labels.min()))
    return float(batch_decision_loss(spec, pd, row)[0])


def shifted_loss(spec: LossSpec, problem: DrawnProblem) -> float:
    """decision_loss - 1; the quantity the search engine maximizes in expectation."""
    return decision_loss(spec, problem) - 1.0
