"""Predictors scoring individuals: logistic, small MLP with categorical embeddings, lookup table.

Training is deterministic given (cohort, config, seed): full-batch gradient
descent with a backtracking step, so the recorded loss never increases.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .data import BINARY, REGRESSION, Cohort, IndividualRecord, InstancePool
from .errors import ConfigError, DataError

_SIGMOID_CLIP = 1e-15


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class TrainConfig:
    """Hyperparameters shared by both trainable kinds."""

    learning_rate: float = 0.5
    epochs: int = 300
    hidden: tuple[int, ...] = (16, 16)
    embed_dim: int = 4
    init_scale: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be >= 1, got {self.embed_dim}")


@dataclass
class LogisticPredictor:
    """sigmoid(w . x + b + sum of per-code categorical weights); binary task only."""

    weights: np.ndarray
    bias: float
    cat_weights: list[np.ndarray] = field(default_factory=list)
    train_losses: list[float] = field(default_factory=list)

    kind = "logistic"
    task = BINARY

    def score_matrix(self, numeric: np.ndarray, categorical: np.ndarray) -> np.ndarray:
        z = numeric @ self.weights + self.bias
        for f, table in enumerate(self.cat_weights):
            codes = categorical[:, f]
            if codes.max(initial=-1) >= len(table):
                raise DataError(f"categorical feature {f} has unseen code {int(codes.max())}")
            z = z + table[codes]
        return _sigmoid(z)


@dataclass
class MlpPredictor:
    """Fully connected ReLU network; embeds categorical codes, outputs one score.

    Binary task applies a sigmoid to the output; regression returns it raw.
    """

    task: str
    layers: list[tuple[np.ndarray, np.ndarray]]  # (W with shape (out, in), b)
    embeddings: list[np.ndarray] = field(default_factory=list)  # (levels, embed_dim) each
    train_losses: list[float] = field(default_factory=list)

    kind = "mlp"

    def _inputs(self, numeric: np.ndarray, categorical: np.ndarray) -> np.ndarray:
        parts = [numeric]
        for f, table in enumerate(self.embeddings):
            codes = categorical[:, f]
            if codes.max(initial=-1) >= table.shape[0]:
                raise DataError(f"categorical feature {f} has unseen code {int(codes.max())}")
            parts.append(table[codes])
        return np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]

    def score_matrix(self, numeric: np.ndarray, categorical: np.ndarray) -> np.ndarray:
        h = self._inputs(numeric, categorical)
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = h @ w.T + b
            if i < last:
                h = np.maximum(h, 0.0)
        out = h[:, 0]
        return _sigmoid(out) if self.task == BINARY else out


@dataclass
class TablePredictor:
    """Fixed id -> score lookup; the escape hatch for hand-built experiments."""

    scores: dict[str, float]
    task: str = BINARY

    kind = "table"

    def score_matrix(self, numeric, categorical):  # pragma: no cover - table needs ids
        raise DataError("table predictors score by id; use predict/predict_pool")


Predictor = LogisticPredictor | MlpPredictor | TablePredictor


def predict(predictor: Predictor, record: IndividualRecord) -> float:
    """Score one individual."""
    if isinstance(predictor, TablePredictor):
        if record.id not in predictor.scores:
            raise DataError(f"table predictor has no score for id {record.id!r}")
        return float(predictor.scores[record.id])
    return float(predictor.score_matrix(record.numeric[None, :], record.categorical[None, :])[0])


def predict_pool(predictor: Predictor, pool: InstancePool) -> np.ndarray:
    """Score every individual in a pool once; downstream code reuses this array."""
    if isinstance(predictor, TablePredictor):
        missing = [ind.id for ind in pool.individuals if ind.id not in predictor.scores]
        if missing:
            raise DataError(f"table predictor has no score for id {missing[0]!r}")
        return np.array([predictor.scores[ind.id] for ind in pool.individuals], dtype=np.float64)
    return predictor.score_matrix(pool.numeric, pool.categorical)


def _cohort_matrices(cohort: Cohort):
    numeric = np.concatenate([p.numeric for p in cohort.pools], axis=0)
    if cohort.categorical_names:
        categorical = np.concatenate([p.categorical for p in cohort.pools], axis=0)
    else:
        categorical = np.zeros((numeric.shape[0], 0), dtype=np.int64)
    labels = np.concatenate([p.labels for p in cohort.pools])
    return numeric, categorical, labels


def _loss_and_grad_out(out: np.ndarray, labels: np.ndarray, task: str):
    n = out.shape[0]
    if task == BINARY:
        p = np.clip(_sigmoid(out), _SIGMOID_CLIP, 1 - _SIGMOID_CLIP)
        loss = float(-np.mean(labels * np.log(p) + (1 - labels) * np.log(1 - p)))
        return loss, (p - labels) / n
    diff = out - labels
    return float(np.mean(diff**2)), 2.0 * diff / n


def train(cohort: Cohort, kind: str, config: TrainConfig | None = None, seed: int = 0) -> Predictor:
    """Train a predictor on every individual in the cohort.

    Logistic pairs with binary labels (cross-entropy); mlp uses cross-entropy on
    binary cohorts and mean squared error on regression cohorts. The step is
    backtracked whenever it would increase the loss, so the recorded epoch
    losses are non-increasing.
    """
    config = config or TrainConfig()
    if kind == "table":
        raise ConfigError("table predictors are loaded from files, not trained")
    if kind == "logistic" and cohort.task != BINARY:
        raise ConfigError("logistic predictors require a binary cohort")
    if kind not in ("logistic", "mlp"):
        raise ConfigError(f"unknown predictor kind {kind!r}")

    numeric, categorical, labels = _cohort_matrices(cohort)
    levels = [len(codes) for codes in cohort.categorical_codes]
    rng = np.random.default_rng(seed)

    if kind == "logistic":
        return _train_logistic(numeric, categorical, labels, levels, config)
    return _train_mlp(numeric, categorical, labels, levels, cohort.task, config, rng)


def _train_logistic(numeric, categorical, labels, levels, config) -> LogisticPredictor:
    d = numeric.shape[1]
    w = np.zeros(d)
    b = 0.0
    cat_w = [np.zeros(n) for n in levels]
    lr = config.learning_rate
    losses = []

    def forward():
        z = numeric @ w + b
        for f, table in enumerate(cat_w):
            z = z + table[categorical[:, f]]
        return z

    loss, dout = _loss_and_grad_out(forward(), labels, BINARY)
    for _ in range(config.epochs):
        losses.append(loss)
        gw = numeric.T @ dout
        gb = float(dout.sum())
        gcat = []
        for f, table in enumerate(cat_w):
            g = np.zeros_like(table)
            np.add.at(g, categorical[:, f], dout)
            gcat.append(g)
        while True:
            w2 = w - lr * gw
            b2 = b - lr * gb
            cat2 = [t - lr * g for t, g in zip(cat_w, gcat)]
            z2 = numeric @ w2 + b2
            for f, table in enumerate(cat2):
                z2 = z2 + table[categorical[:, f]]
            loss2, dout2 = _loss_and_grad_out(z2, labels, BINARY)
            if loss2 <= loss + 1e-12 or lr < 1e-15:
                break
            lr *= 0.5
        w, b, cat_w, loss, dout = w2, b2, cat2, loss2, dout2
        lr *= 1.05
    return LogisticPredictor(weights=w, bias=b, cat_weights=cat_w, train_losses=losses)


def _train_mlp(numeric, categorical, labels, levels, task, config, rng) -> MlpPredictor:
    d_in = numeric.shape[1] + config.embed_dim * len(levels)
    sizes = [d_in, *config.hidden, 1]
    layers = [
        (rng.normal(size=(sizes[i + 1], sizes[i])) * config.init_scale, np.zeros(sizes[i + 1]))
        for i in range(len(sizes) - 1)
    ]
    embeddings = [rng.normal(size=(n, config.embed_dim)) * config.init_scale for n in levels]
    lr = config.learning_rate
    losses = []

    def forward(lay, emb):
        parts = [numeric]
        for f, table in enumerate(emb):
            parts.append(table[categorical[:, f]])
        h = np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]
        acts = [h]
        last = len(lay) - 1
        for i, (w, b) in enumerate(lay):
            h = h @ w.T + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return acts

    def backward(lay, acts, dout):
        grads = []
        delta = dout[:, None]  # (n, 1) at the output layer
        for i in range(len(lay) - 1, -1, -1):
            w, _ = lay[i]
            gw = delta.T @ acts[i]
            gb = delta.sum(axis=0)
            grads.append((gw, gb))
            if i > 0:
                delta = (delta @ w) * (acts[i] > 0)
        grads.reverse()
        demb = []
        offset = numeric.shape[1]
        for f, table in enumerate(embeddings):
            g = np.zeros_like(table)
            cols = delta[:, offset:offset + table.shape[1]]
            np.add.at(g, categorical[:, f], cols)
            demb.append(g)
            offset += table.shape[1]
        return grads, demb

    acts = forward(layers, embeddings)
    loss, dout = _loss_and_grad_out(acts[-1][:, 0], labels, task)
    for _ in range(config.epochs):
        losses.append(loss)
        grads, demb = backward(layers, acts, dout)
        while True:
            lay2 = [(w - lr * gw, b - lr * gb) for (w, b), (gw, gb) in zip(layers, grads)]
            emb2 = [t - lr * g for t, g in zip(embeddings, demb)]
            acts2 = forward(lay2, emb2)
            loss2, dout2 = _loss_and_grad_out(acts2[-1][:, 0], labels, task)
            if loss2 <= loss + 1e-12 or lr < 1e-15:
                break
            lr *= 0.5
        layers, embeddings, acts, loss, dout = lay2, emb2, acts2, loss2, dout2
        lr *= 1.05
    return MlpPredictor(task=task, layers=layers, embeddings=embeddings, train_losses=losses)


def save_predictor(predictor: Predictor, path: str) -> None:
    """Write a predictor to JSON; floats round-trip exactly."""
    if isinstance(predictor, LogisticPredictor):
        payload = {
            "kind": "logistic",
            "task": predictor.task,
            "weights": predictor.weights.tolist(),
            "bias": predictor.bias,
            "cat_weights": [t.tolist() for t in predictor.cat_weights],
        }
    elif isinstance(predictor, MlpPredictor):
        payload = {
            "kind": "mlp",
            "task": predictor.task,
            "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in predictor.layers],
            "embeddings": [t.tolist() for t in predictor.embeddings],
        }
    elif isinstance(predictor, TablePredictor):
        payload = {"kind": "table", "task": predictor.task, "scores": predictor.scores}
    else:
        raise ValueError(f"cannot save predictor of type {type(predictor).__name__}")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_predictor(path: str) -> Predictor:
    """Inverse of save_predictor."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    kind = raw.get("kind")
    if kind == "logistic":
        return LogisticPredictor(
            weights=np.array(raw["weights"], dtype=np.float64),
            bias=float(raw["bias"]),
            cat_weights=[np.array(t, dtype=np.float64) for t in raw["cat_weights"]],
        )
    if kind == "mlp":
        return MlpPredictor(
            task=raw["task"],
            layers=[(np.array(l["w"], dtype=np.float64), np.array(l["b"], dtype=np.float64))
                    for l in raw["layers"]],
            embeddings=[np.array(t, dtype=np.float64) for t in raw["embeddings"]],
        )
    if kind == "table":
        return TablePredictor(scores={str(k): float(v) for k, v in raw["scores"].items()},
                              task=raw.get("task", BINARY))
    raise DataError(f"predictor file {path!r} has unknown kind {kind!r}")


def load_table_predictions(path: str, task: str = BINARY, delimiter: str = ",") -> TablePredictor:
    """Build a table predictor from a two-column (id, score) delimited file.

    A first row whose second field is not numeric is treated as a header.
    """
    scores: dict[str, float] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path!r} is empty")
    start = 0
    try:
        float(rows[0][1])
    except (ValueError, IndexError):
        start = 1
    for offset, row in enumerate(rows[start:]):
        rownum = offset + start + 1
        if len(row) < 2:
            raise DataError(f"row {rownum}: expected two columns (id, score)")
        try:
            scores[row[0].strip()] = float(row[1])
        except ValueError:
            raise DataError(f"row {rownum}: score {row[1]!r} is not numeric") from None
    return TablePredictor(scores=scores, task=task)
