"""Classifier zoo with majority-class downsampling and JSON model artifacts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .models import MLP, AdaBoost, Forest, LinearSVM, LogisticRegression, logistic_grad, logistic_loss

MODEL_VERSION = "lifeevents-classifier/1"

DEFAULTS = {
    "logistic_regression": {"C": 1.0, "max_iter": 100},
    "linear_svm": {"C": 1.0, "epochs": 100},
    "random_forest": {"n_trees": 100, "max_depth": 10, "max_features": "sqrt", "min_samples_split": 2},
    "extra_trees": {"n_trees": 100, "max_depth": 10, "max_features": "sqrt", "min_samples_split": 2},
    "adaboost": {"n_estimators": 100, "learning_rate": 1.0},
    "mlp": {"n_layers": 3, "width": None, "epochs": 200, "batch_size": 200, "lr": 1e-3, "l2": 1e-4},
}
KINDS = tuple(DEFAULTS)


def _build(kind: str, params: dict):
    if kind == "logistic_regression":
        return LogisticRegression(**params)
    if kind == "linear_svm":
        return LinearSVM(**params)
    if kind in ("random_forest", "extra_trees"):
        return Forest(extra=kind == "extra_trees", **params)
    if kind == "adaboost":
        return AdaBoost(**params)
    return MLP(**params)


@dataclass
class ClassifierSpec:
    kind: str = "random_forest"
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEFAULTS:
            raise ValueError(f"unknown classifier kind {self.kind!r}; choose from {KINDS}")
        unknown = set(self.params) - set(DEFAULTS[self.kind])
        if unknown:
            raise ValueError(f"unknown {self.kind} parameters {sorted(unknown)}")
        self.params = {**DEFAULTS[self.kind], **self.params}
        for k, v in self.params.items():
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v <= 0:
                raise ValueError(f"{self.kind}.{k} must be positive, got {v}")

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed}

    @classmethod
    def from_dict(cls, obj):
        return cls(obj.get("kind", "random_forest"), dict(obj.get("params", {})), int(obj.get("seed", 0)))


@dataclass
class TrainedModel:
    spec: ClassifierSpec
    n_features: int
    learner: object

    def to_dict(self):
        return {"version": MODEL_VERSION, "spec": self.spec.to_dict(), "n_features": self.n_features,
                "parameters": self.learner.to_params()}

    @classmethod
    def from_dict(cls, obj):
        if obj.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported classifier version {obj.get('version')!r}")
        spec = ClassifierSpec.from_dict(obj["spec"])
        proto = type(_build(spec.kind, spec.params))
        params = dict(spec.params)
        if spec.kind in ("random_forest", "extra_trees"):
            params["extra"] = spec.kind == "extra_trees"
        return cls(spec, int(obj["n_features"]), proto.from_params(obj["parameters"], **params))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _check_xy(X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if not np.isfinite(X).all():
        bad = np.argwhere(~np.isfinite(X))[0]
        raise ValueError(f"non-finite feature value at row {bad[0]}, column {bad[1]}")
    if y is None:
        return X
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise ValueError("y must have one label per row")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return X, y.astype(float)


def downsample_majority(X, y, seed) -> tuple[np.ndarray, np.ndarray]:
    """Drop majority-class rows at random until both classes have equal counts.

    Kept rows stay in their original order.
    """
    X = np.asarray(X)
    y = np.asarray(y)
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("downsampling needs both classes present")
    minority, majority = (pos, neg) if pos.size <= neg.size else (neg, pos)
    rng = np.random.default_rng(seed)
    keep = np.sort(np.concatenate([minority, rng.choice(majority, size=minority.size, replace=False)]))
    return X[keep], y[keep]


def train(spec: ClassifierSpec, X, y) -> TrainedModel:
    X, y = _check_xy(X, y)
    if np.unique(y).size < 2:
        raise ValueError("training labels must contain both classes")
    learner = _build(spec.kind, spec.params)
    learner.fit(X, y, np.random.default_rng(spec.seed))
    return TrainedModel(spec, X.shape[1], learner)


def predict_scores(model: TrainedModel, X) -> np.ndarray:
    X = _check_xy(X)
    if X.shape[1] != model.n_features:
        raise ValueError(f"model expects {model.n_features} features, got {X.shape[1]}")
    return np.clip(model.learner.decision(X), 0.0, 1.0)


__all__ = ["ClassifierSpec", "TrainedModel", "KINDS", "DEFAULTS", "downsample_majority", "train",
           "predict_scores", "logistic_loss", "logistic_grad"]
