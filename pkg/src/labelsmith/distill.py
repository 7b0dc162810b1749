"""Export pseudolabeled training sets and train a small distilled MLP.

The distilled model is intentionally tiny: two hidden layers of 32 ReLU
units and a softmax head, trained with Adam on (possibly soft) cross
entropy. Text records are featurized by signed feature hashing of word
unigrams; score records use their concept scores directly. Everything is
plain numpy, deterministic given a seed, and backed by a finite-difference
gradient check.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DatasetError, LabelsmithError, PseudoLabel, Record

logger = logging.getLogger("labelsmith.distill")

HIDDEN = (32, 32)


class DistillError(LabelsmithError):
    """Bad inputs to export or training."""


@dataclass(frozen=True)
class FeatureSpec:
    """How records become vectors.

    ``hashed``: lowercased word unigrams, signed-hashed into ``dims``
    buckets, L2-normalized. ``scores``: the record's concept scores in a
    fixed concept order (dims = number of concepts). The hashing seed is
    part of the spec so train and eval always agree."""

    mode: str
    dims: int = 4096
    lowercase: bool = True
    token_pattern: str = r"[a-z0-9']+"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("hashed", "scores"):
            raise DistillError(f"feature mode must be 'hashed' or 'scores', got {self.mode!r}")
        if self.dims < 2:
            raise DistillError("feature dims must be at least 2")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "dims": self.dims,
            "lowercase": self.lowercase,
            "token_pattern": self.token_pattern,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureSpec":
        return cls(**doc)


def _hash_token(token: str, seed: int) -> int:
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=8, key=seed.to_bytes(8, "little", signed=False)
    ).digest()
    return int.from_bytes(digest, "little")


def featurize(
    records: Sequence[Record], spec: FeatureSpec, concepts: Sequence[str] | None = None
) -> np.ndarray:
    """(n, dims) float64 feature matrix for the given records."""
    if spec.mode == "scores":
        first = next((r for r in records if r.scores is not None), None)
        if first is None:
            raise DistillError("scores featurization needs scores-modality records")
        order = tuple(concepts) if concepts is not None else tuple(sorted(first.scores))
        out = np.empty((len(records), len(order)))
        for i, rec in enumerate(records):
            if rec.scores is None:
                raise DistillError(f"record {rec.id!r} has no scores")
            try:
                out[i] = [rec.scores[c] for c in order]
            except KeyError as exc:
                raise DistillError(f"record {rec.id!r} is missing concept {exc.args[0]!r}") from exc
        return out
    token_re = re.compile(spec.token_pattern)
    out = np.zeros((len(records), spec.dims))
    for i, rec in enumerate(records):
        if rec.text is None:
            raise DistillError(f"record {rec.id!r} has no text; hashed features need text")
        text = rec.text.lower() if spec.lowercase else rec.text
        for token in token_re.findall(text):
            h = _hash_token(token, spec.seed)
            sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
            out[i, h % spec.dims] += sign
        norm = np.linalg.norm(out[i])
        if norm > 0:
            out[i] /= norm
    return out


@dataclass(frozen=True)
class ExportReport:
    path: Path
    n_written: int
    n_dropped_uncovered: int


def export_training_set(
    records: Sequence[Record],
    pseudolabels: Sequence[PseudoLabel],
    path: str | Path,
    *,
    use_probabilistic: bool = False,
    drop_uncovered: bool = True,
) -> ExportReport:
    """Write a JSONL training set joining records with their pseudolabels.

    Rows carry the record payload plus either the hard label or the full
    posterior. Uncovered records are dropped by default; the count of
    dropped rows comes back in the report."""
    by_id = {p.record_id: p for p in pseudolabels}
    missing = [r.id for r in records if r.id not in by_id]
    if missing:
        raise DistillError(f"no pseudolabel for record {missing[0]!r}")
    extra = set(by_id) - {r.id for r in records}
    if extra:
        raise DistillError(f"pseudolabel for unknown record {sorted(extra)[0]!r}")
    path = Path(path)
    written = dropped = 0
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            lab = by_id[rec.id]
            if drop_uncovered and not lab.covered:
                dropped += 1
                continue
            row: dict = {"id": rec.id}
            if rec.text is not None:
                row["text"] = rec.text
            else:
                row["scores"] = rec.scores
            if use_probabilistic:
                row["posterior"] = list(lab.posterior)
            else:
                row["label"] = lab.hard
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            written += 1
    return ExportReport(path=path, n_written=written, n_dropped_uncovered=dropped)


def load_training_set(path: str | Path) -> tuple[list[Record], np.ndarray]:
    """Read an exported training set. Returns records plus targets: an (n,)
    int array for hard labels or an (n, K) float array for posteriors."""
    records: list[Record] = []
    targets: list = []
    soft = None
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            records.append(
                Record(id=str(row["id"]), text=row.get("text"), scores=row.get("scores"))
            )
            if "posterior" in row:
                row_soft = True
                targets.append([float(x) for x in row["posterior"]])
            elif "label" in row:
                row_soft = False
                targets.append(int(row["label"]))
            else:
                raise DatasetError(f"line {lineno}: row has neither label nor posterior")
            if soft is None:
                soft = row_soft
            elif soft != row_soft:
                raise DatasetError(f"line {lineno}: mixed hard and soft labels")
    if not records:
        raise DatasetError("training set is empty")
    return records, np.asarray(targets, dtype=float if soft else np.int64)


@dataclass
class MLPModel:
    """Fixed-architecture classifier: dims -> 32 -> 32 -> K, ReLU inside,
    softmax out. Weights are float64; ``sizes`` pins the shape."""

    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Softmax probabilities plus per-layer activations (for backprop)."""
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for layer, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if layer == last else np.maximum(z, 0.0)
            acts.append(h)
        logits = acts[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        probs = expz / expz.sum(axis=1, keepdims=True)
        return probs, acts

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MLPModel":
        return cls(
            sizes=tuple(doc["sizes"]),
            weights=[np.asarray(w, dtype=float) for w in doc["weights"]],
            biases=[np.asarray(b, dtype=float) for b in doc["biases"]],
        )


def init_mlp(dims: int, K: int, seed: int, hidden: tuple[int, ...] = HIDDEN) -> MLPModel:
    """He-initialized hidden layers; the output layer starts at zero so the
    initial softmax is uniform and the starting loss is exactly ln K. Same
    seed, same bits."""
    rng = np.random.default_rng(seed)
    sizes = (dims, *hidden, K)
    weights, biases = [], []
    last = len(sizes) - 2
    for layer, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        if layer == last:
            weights.append(np.zeros((fan_in, fan_out)))
        else:
            weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPModel(sizes=sizes, weights=weights, biases=biases)


def _as_soft(targets: np.ndarray, K: int) -> np.ndarray:
    """Hard labels become one-hot rows; soft targets pass through. One code
    path downstream, so hard and one-hot training are identical."""
    targets = np.asarray(targets)
    if targets.ndim == 1:
        out = np.zeros((len(targets), K))
        out[np.arange(len(targets)), targets.astype(int)] = 1.0
        return out
    if targets.shape[1] != K:
        raise DistillError(f"soft targets have {targets.shape[1]} columns, expected {K}")
    return targets.astype(float)


def cross_entropy(model: MLPModel, X: np.ndarray, T: np.ndarray) -> float:
    """Mean soft cross-entropy, computed from logits for stability.
    Hard label vectors are accepted and treated as one-hot."""
    T = _as_soft(T, model.sizes[-1])
    _, acts = model.forward(X)
    logits = acts[-1]
    logz = logits.max(axis=1, keepdims=True)
    logsumexp = logz + np.log(np.exp(logits - logz).sum(axis=1, keepdims=True))
    return float(-np.sum(T * (logits - logsumexp)) / len(X))


def gradients(
    model: MLPModel, X: np.ndarray, T: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Analytic gradients of the mean cross-entropy for one batch."""
    T = _as_soft(T, model.sizes[-1])
    probs, acts = model.forward(X)
    B = len(X)
    delta = (probs - T) / B
    grads_w = [np.empty(0)] * len(model.weights)
    grads_b = [np.empty(0)] * len(model.biases)
    for layer in range(len(model.weights) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ model.weights[layer].T) * (acts[layer] > 0)
    return grads_w, grads_b


def gradient_check(
    model: MLPModel,
    X: np.ndarray,
    T: np.ndarray,
    *,
    h: float = 1e-5,
    n_samples: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients
    over a random sample of parameters."""
    if len(X) == 0:
        raise DistillError("gradient check needs a non-empty batch")
    T = _as_soft(T, model.sizes[-1])
    grads_w, grads_b = gradients(model, X, T)
    params = [(w, g) for w, g in zip(model.weights, grads_w)]
    params += [(b, g) for b, g in zip(model.biases, grads_b)]
    rng = np.random.default_rng(seed)
    total = sum(p.size for p, _ in params)
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    offsets = np.cumsum([0] + [p.size for p, _ in params])
    worst = 0.0
    for flat_idx in picks:
        which = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        param, grad = params[which]
        local = int(flat_idx - offsets[which])
        idx = np.unravel_index(local, param.shape)
        keep = param[idx]
        param[idx] = keep + h
        up = cross_entropy(model, X, T)
        param[idx] = keep - h
        down = cross_entropy(model, X, T)
        param[idx] = keep
        numeric = (up - down) / (2 * h)
        analytic = grad[idx]
        denom = max(abs(numeric) + abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


@dataclass(frozen=True)
class Hyper:
    epochs: int = 100
    lr: float = 1e-3
    batch: int = 32
    seed: int = 0


@dataclass
class TrainMetrics:
    initial_loss: float
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)

    def save_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "train_accuracy", "val_accuracy"])
            writer.writerow([0, f"{self.initial_loss:.10f}", "", ""])
            for epoch, loss in enumerate(self.train_loss, start=1):
                val = (
                    f"{self.val_accuracy[epoch - 1]:.10f}"
                    if epoch - 1 < len(self.val_accuracy)
                    else ""
                )
                writer.writerow(
                    [epoch, f"{loss:.10f}", f"{self.train_accuracy[epoch - 1]:.10f}", val]
                )
        return path


def train_mlp(
    X: np.ndarray,
    targets: np.ndarray,
    K: int,
    hyper: Hyper = Hyper(),
    X_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
    hidden: tuple[int, ...] = HIDDEN,
) -> tuple[MLPModel, TrainMetrics]:
    """Adam on (soft) cross-entropy. Deterministic: the seed fixes the
    initialization and every shuffle, so two runs agree bitwise."""
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        raise DistillError("training set is empty")
    T = _as_soft(targets, K)
    hard = np.argmax(T, axis=1)
    if len(np.unique(hard)) < 2:
        logger.warning(
            "training data has a single class (%d); the model will be a constant predictor",
            int(hard[0]),
        )
    model = init_mlp(X.shape[1], K, hyper.seed, hidden)
    metrics = TrainMetrics(initial_loss=cross_entropy(model, X, T))
    rng = np.random.default_rng(hyper.seed + 1)
    m_w = [np.zeros_like(w) for w in model.weights]
    v_w = [np.zeros_like(w) for w in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    for _ in range(hyper.epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), hyper.batch):
            batch = order[start : start + hyper.batch]
            grads_w, grads_b = gradients(model, X[batch], T[batch])
            step += 1
            correction = np.sqrt(1 - beta2**step) / (1 - beta1**step)
            for i in range(len(model.weights)):
                m_w[i] = beta1 * m_w[i] + (1 - beta1) * grads_w[i]
                v_w[i] = beta2 * v_w[i] + (1 - beta2) * grads_w[i] ** 2
                model.weights[i] -= hyper.lr * correction * m_w[i] / (np.sqrt(v_w[i]) + eps)
                m_b[i] = beta1 * m_b[i] + (1 - beta1) * grads_b[i]
                v_b[i] = beta2 * v_b[i] + (1 - beta2) * grads_b[i] ** 2
                model.biases[i] -= hyper.lr * correction * m_b[i] / (np.sqrt(v_b[i]) + eps)
        metrics.train_loss.append(cross_entropy(model, X, T))
        metrics.train_accuracy.append(float((model.predict(X) == hard).mean()))
        if X_val is not None and y_val is not None:
            metrics.val_accuracy.append(float((model.predict(X_val) == np.asarray(y_val)).mean()))
    return model, metrics


def save_model(
    path: str | Path,
    model: MLPModel,
    feature_spec: FeatureSpec | None = None,
    class_names: Sequence[str] | None = None,
    concepts: Sequence[str] | None = None,
) -> Path:
    doc = {"model": model.to_dict()}
    if feature_spec is not None:
        doc["features"] = feature_spec.to_dict()
    if class_names is not None:
        doc["classes"] = list(class_names)
    if concepts is not None:
        doc["concepts"] = list(concepts)
    path = Path(path)
    path.write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")
    return path


def load_model(path: str | Path) -> tuple[MLPModel, FeatureSpec | None, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    model = MLPModel.from_dict(doc["model"])
    spec = FeatureSpec.from_dict(doc["features"]) if doc.get("features") else None
    meta = {"classes": doc.get("classes"), "concepts": doc.get("concepts")}
    return model, spec, meta
