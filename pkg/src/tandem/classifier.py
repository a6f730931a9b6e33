"""Sufficiency classifier: a small ReLU MLP with a logistic output.

The network is trained with binary cross-entropy and Adam on z-scored
feature vectors.  Per-stage decision thresholds are picked by grid search
and applied with a strict comparison, ``decide(s, tau) = 1[s > tau]``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import (
    ClassifierMissingError,
    DimensionMismatchError,
    EmptyDataError,
    EmptyStageError,
    SingleClassDataError,
)
from .uncertainty import N_FEATURES, FeatureVector

logger = logging.getLogger(__name__)

MODEL_SCHEMA_VERSION = 1
UNIFIED = "*"


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_params(dims: Sequence[int], rng: np.random.Generator):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return weights, biases


def forward_logits(weights, biases, X, dropout: float = 0.0, rng=None, cache: list | None = None):
    """Output logits of shape ``(m,)``; hidden layers use ReLU and inverted dropout."""
    a = X
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = a @ W + b
        if i == last:
            if cache is not None:
                cache.append((a, None, None))
            return z[:, 0]
        h = np.maximum(z, 0.0)
        mask = None
        if dropout > 0.0:
            mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
            h = h * mask
        if cache is not None:
            cache.append((a, z, mask))
        a = h
    raise ValueError("network has no layers")


def bce_with_logits(z, y) -> float:
    # mean of softplus(z) - y*z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def loss_and_grads(weights, biases, X, y, dropout: float = 0.0, rng=None):
    """Mean binary cross-entropy and its gradients by backpropagation."""
    cache: list = []
    z = forward_logits(weights, biases, X, dropout, rng, cache)
    loss = bce_with_logits(z, y)
    delta = ((sigmoid(z) - y) / len(y))[:, None]
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        a_in = cache[i][0]
        gw[i] = a_in.T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            _, z_prev, mask_prev = cache[i - 1]
            back = delta @ weights[i].T
            if mask_prev is not None:
                back = back * mask_prev
            delta = back * (z_prev > 0)
    return loss, gw, gb


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def stratified_split(y, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Train/validation index arrays, stratified by label."""
    idx = np.arange(len(y))
    if val_fraction <= 0:
        return idx, idx[:0]
    train, val = train_test_split(idx, test_size=val_fraction, stratify=y, random_state=seed)
    return np.sort(train), np.sort(val)


class SufficiencyClassifier(ClassifierMixin, BaseEstimator):
    """MLP predicting whether the current guidance suffices for a correct intern answer.

    Training keeps the snapshot with the best validation accuracy and stops
    after ``patience`` epochs without improvement.
    """

    def __init__(
        self,
        hidden_layer_sizes=(64, 32),
        learning_rate=1e-4,
        max_epochs=3,
        dropout=0.3,
        batch_size=64,
        val_fraction=0.3,
        random_state=42,
        patience=1,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.dropout = dropout
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.random_state = random_state
        self.patience = patience

    def fit(self, X, y):
        if len(X) == 0:
            raise EmptyDataError("no training examples")
        X, y = check_X_y(X, y, dtype=float)
        y = y.astype(float)
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("labels must be 0 or 1")
        if len(np.unique(y)) < 2:
            raise SingleClassDataError("training data contains a single class")
        train_idx, val_idx = stratified_split(y, self.val_fraction, self.random_state)
        rng = np.random.default_rng(self.random_state)

        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        self.mean_ = X[train_idx].mean(axis=0)
        scale = X[train_idx].std(axis=0)
        self.scale_ = np.where(scale > 0, scale, 1.0)
        Xn = (X - self.mean_) / self.scale_
        Xtr, ytr = Xn[train_idx], y[train_idx]
        Xval, yval = Xn[val_idx], y[val_idx]

        dims = [X.shape[1], *self.hidden_layer_sizes, 1]
        weights, biases = init_params(dims, rng)
        opt = Adam(weights + biases, self.learning_rate)
        best = None
        stale = 0
        self.history_ = []
        for epoch in range(1, self.max_epochs + 1):
            order = rng.permutation(len(ytr))
            losses = []
            for start in range(0, len(order), self.batch_size):
                batch = order[start : start + self.batch_size]
                loss, gw, gb = loss_and_grads(
                    weights, biases, Xtr[batch], ytr[batch], self.dropout, rng
                )
                opt.step(weights + biases, gw + gb)
                losses.append(loss)
            eval_X, eval_y = (Xval, yval) if len(yval) else (Xtr, ytr)
            acc = float(np.mean((sigmoid(forward_logits(weights, biases, eval_X)) > 0.5) == eval_y))
            self.history_.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_accuracy": acc})
            logger.debug("epoch %d loss %.4f val_acc %.4f", epoch, np.mean(losses), acc)
            if best is None or acc > best[0]:
                best = (acc, epoch, [w.copy() for w in weights], [b.copy() for b in biases])
                stale = 0
            else:
                stale += 1
                if self.patience is not None and stale >= self.patience:
                    break
        self.best_val_accuracy_, self.best_epoch_, self.coefs_, self.intercepts_ = best
        return self

    @property
    def layer_dims(self) -> list[int]:
        check_is_fitted(self, "coefs_")
        return [self.coefs_[0].shape[0]] + [w.shape[1] for w in self.coefs_]

    def _normalized(self, X) -> np.ndarray:
        check_is_fitted(self, ["coefs_", "mean_", "scale_"])
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatchError(
                f"model expects {self.n_features_in_} features, got {X.shape[1]}"
            )
        return (X - self.mean_) / self.scale_

    def sufficiency_score(self, X) -> np.ndarray:
        return sigmoid(forward_logits(self.coefs_, self.intercepts_, self._normalized(X)))

    def decision_function(self, X) -> np.ndarray:
        return forward_logits(self.coefs_, self.intercepts_, self._normalized(X))

    def predict_proba(self, X) -> np.ndarray:
        s = self.sufficiency_score(X)
        return np.column_stack([1.0 - s, s])

    def predict(self, X) -> np.ndarray:
        return (self.sufficiency_score(X) > 0.5).astype(int)

    def to_dict(self) -> dict:
        check_is_fitted(self, "coefs_")
        return {
            "layer_dims": self.layer_dims,
            "weights": [w.tolist() for w in self.coefs_],
            "biases": [b.tolist() for b in self.intercepts_],
            "feature_mean": self.mean_.tolist(),
            "feature_scale": self.scale_.tolist(),
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SufficiencyClassifier":
        params = dict(d.get("params", {}))
        if "hidden_layer_sizes" in params:
            params["hidden_layer_sizes"] = tuple(params["hidden_layer_sizes"])
        clf = cls.from_weights(d["weights"], d["biases"], d["feature_mean"], d["feature_scale"], **params)
        if clf.layer_dims != list(d["layer_dims"]):
            raise DimensionMismatchError(f"layer_dims {d['layer_dims']} disagree with weight shapes")
        return clf

    @classmethod
    def from_weights(cls, weights, biases, mean=None, scale=None, **params) -> "SufficiencyClassifier":
        """Build a fitted classifier from explicit parameters (``weights[l]`` is fan_in x fan_out)."""
        clf = cls(**params)
        clf.coefs_ = [np.asarray(w, dtype=float) for w in weights]
        clf.intercepts_ = [np.asarray(b, dtype=float).reshape(-1) for b in biases]
        for a, b in zip(clf.coefs_, clf.coefs_[1:]):
            if a.shape[1] != b.shape[0]:
                raise DimensionMismatchError("consecutive weight matrices do not chain")
        n_in = clf.coefs_[0].shape[0]
        clf.n_features_in_ = n_in
        clf.mean_ = np.zeros(n_in) if mean is None else np.asarray(mean, dtype=float)
        clf.scale_ = np.ones(n_in) if scale is None else np.asarray(scale, dtype=float)
        clf.classes_ = np.array([0, 1])
        return clf


def forward(model: SufficiencyClassifier, f: FeatureVector | Sequence[float]) -> float:
    """Sufficiency score of one feature vector."""
    x = f.to_array() if isinstance(f, FeatureVector) else np.asarray(f, dtype=float)
    if x.ndim != 1 or x.size != getattr(model, "n_features_in_", x.size):
        raise DimensionMismatchError(f"feature vector has shape {x.shape}")
    return float(model.predict_proba(x[None, :])[0, 1])


def decide(s: float, tau: float) -> int:
    return int(s > tau)


# -- thresholds --------------------------------------------------------------


def threshold_grid(lo: float = 0.05, hi: float = 0.95, step: float = 0.05) -> list[float]:
    if step <= 0 or hi < lo:
        raise ValueError(f"bad grid {lo}:{hi}:{step}")
    n = int(round((hi - lo) / step))
    return [round(lo + k * step, 10) for k in range(n + 1)]


def accuracy_objective(decisions: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(decisions == labels))


def f1_objective(decisions: np.ndarray, labels: np.ndarray) -> float:
    tp = float(np.sum((decisions == 1) & (labels == 1)))
    fp = float(np.sum((decisions == 1) & (labels == 0)))
    fn = float(np.sum((decisions == 0) & (labels == 1)))
    return 2 * tp / (2 * tp + fp + fn) if tp else 0.0


OBJECTIVES: dict[str, Callable[[np.ndarray, np.ndarray], float]] = {
    "accuracy": accuracy_objective,
    "f1": f1_objective,
}


@dataclass
class ThresholdSet:
    tau: dict[int, float]
    router: float | None = None

    def __getitem__(self, stage: int) -> float:
        return self.tau[stage]

    def to_dict(self) -> dict:
        d = {"tau": {str(k): v for k, v in sorted(self.tau.items())}}
        if self.router is not None:
            d["router"] = self.router
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdSet":
        tau = d["tau"]
        if isinstance(tau, list):
            tau = dict(enumerate(tau))
        return cls({int(k): float(v) for k, v in tau.items()}, d.get("router"))

    @classmethod
    def constant(cls, value: float, stages: Iterable[int] = range(4)) -> "ThresholdSet":
        return cls({t: value for t in stages}, value)


def tune_stage(
    pairs: Sequence[tuple[float, int]],
    grid: Sequence[float],
    objective: Callable = accuracy_objective,
) -> float:
    if len(pairs) == 0:
        raise EmptyStageError("no scored examples for this stage")
    s = np.array([p[0] for p in pairs], dtype=float)
    labels = np.array([p[1] for p in pairs], dtype=int)
    best_tau, best_val = None, -np.inf
    for tau in grid:
        val = objective((s > tau).astype(int), labels)
        if val > best_val:
            best_tau, best_val = tau, val
    return best_tau


def tune_thresholds(
    scored: Mapping[int, Sequence[tuple[float, int]]],
    lo: float = 0.05,
    hi: float = 0.95,
    step: float = 0.05,
    objective: str | Callable = "accuracy",
    router_stage: int | None = 0,
) -> ThresholdSet:
    """Per stage, the grid value maximizing ``objective``; ties go to the smallest value."""
    fn = OBJECTIVES[objective] if isinstance(objective, str) else objective
    grid = threshold_grid(lo, hi, step)
    tau = {int(t): tune_stage(pairs, grid, fn) for t, pairs in sorted(scored.items())}
    router = tau.get(router_stage) if router_stage is not None else None
    return ThresholdSet(tau, router)


# -- labeled data and model bank ----------------------------------------------


@dataclass(frozen=True)
class LabeledExample:
    features: FeatureVector
    label: int
    stage: int
    question_id: str
    subject: str = ""

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass
class SufficiencyModel:
    classifier: SufficiencyClassifier
    thresholds: ThresholdSet | None = None
    group: str = UNIFIED

    def score(self, f: FeatureVector) -> float:
        return forward(self.classifier, f)


@dataclass
class ModelBank:
    """One sufficiency model per grouping key, or a single unified model under ``"*"``."""

    grouping: str = "unified"
    models: dict[str, SufficiencyModel] = field(default_factory=dict)

    def key_for(self, subject: str) -> str:
        return subject if self.grouping == "per_subject" else UNIFIED

    def for_subject(self, subject: str) -> SufficiencyModel:
        model = self.models.get(self.key_for(subject)) or self.models.get(UNIFIED)
        if model is None:
            raise ClassifierMissingError(f"no sufficiency model for group {subject!r}")
        return model

    def to_dict(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "grouping": self.grouping,
            "groups": {
                key: {
                    **m.classifier.to_dict(),
                    "group": key,
                    "thresholds": m.thresholds.to_dict() if m.thresholds else None,
                }
                for key, m in sorted(self.models.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBank":
        if d.get("schema_version") != MODEL_SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema version {d.get('schema_version')!r}")
        models = {}
        for key, g in d["groups"].items():
            th = ThresholdSet.from_dict(g["thresholds"]) if g.get("thresholds") else None
            models[key] = SufficiencyModel(SufficiencyClassifier.from_dict(g), th, key)
        return cls(d["grouping"], models)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ModelBank":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def single(cls, classifier, thresholds=None) -> "ModelBank":
        return cls("unified", {UNIFIED: SufficiencyModel(classifier, thresholds)})


def group_examples(examples: Iterable[LabeledExample], grouping: str) -> dict[str, list[LabeledExample]]:
    groups: dict[str, list[LabeledExample]] = {}
    for ex in examples:
        key = ex.subject if grouping == "per_subject" else UNIFIED
        groups.setdefault(key, []).append(ex)
    return groups


def examples_to_xy(examples: Sequence[LabeledExample]) -> tuple[np.ndarray, np.ndarray]:
    if not examples:
        return np.empty((0, N_FEATURES)), np.empty(0, dtype=int)
    X = np.vstack([ex.features.to_array() for ex in examples])
    y = np.array([ex.label for ex in examples], dtype=int)
    return X, y


def train_bank(
    examples: Sequence[LabeledExample], grouping: str = "unified", **hyper
) -> ModelBank:
    if not examples:
        raise EmptyDataError("no labeled examples")
    bank = ModelBank(grouping)
    for key, group in sorted(group_examples(examples, grouping).items()):
        X, y = examples_to_xy(group)
        clf = SufficiencyClassifier(**hyper).fit(X, y)
        logger.info("group %s: %d examples, best val acc %.4f", key, len(y), clf.best_val_accuracy_)
        bank.models[key] = SufficiencyModel(clf, None, key)
    return bank


def tune_bank(
    bank: ModelBank,
    examples: Sequence[LabeledExample],
    lo: float = 0.05,
    hi: float = 0.95,
    step: float = 0.05,
    split: str = "train",
    objective: str | Callable = "accuracy",
) -> ModelBank:
    """Tune thresholds in place on the classifier's own train (or validation) split."""
    for key, group in group_examples(examples, bank.grouping).items():
        model = bank.models.get(key)
        if model is None:
            raise ClassifierMissingError(f"no classifier trained for group {key!r}")
        clf = model.classifier
        X, y = examples_to_xy(group)
        train_idx, val_idx = stratified_split(y, clf.val_fraction, clf.random_state)
        idx = {"train": train_idx, "validation": val_idx, "all": np.arange(len(y))}[split]
        s = clf.sufficiency_score(X[idx])
        scored: dict[int, list[tuple[float, int]]] = {}
        for i, score in zip(idx, s):
            scored.setdefault(group[i].stage, []).append((float(score), int(y[i])))
        model.thresholds = tune_thresholds(scored, lo, hi, step, objective)
    return bank
