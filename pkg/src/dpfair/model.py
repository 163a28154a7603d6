"""Logistic regression scoring and per-example cross-entropy gradients."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class LogisticModel:
    """Weights ``w`` (length d) and bias ``b``; predicts 1 iff p >= threshold."""

    weights: np.ndarray
    bias: float = 0.0
    threshold: float = 0.5
    schema_hash: str = field(default="", compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")
        if not 0 < self.threshold < 1:
            raise ValueError("decision threshold must lie in (0, 1)")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, d: int, **kw) -> "LogisticModel":
        return cls(np.zeros(d), 0.0, **kw)

    @property
    def params(self) -> np.ndarray:
        """Flat (d+1)-vector (weights..., bias)."""
        return np.append(self.weights, self.bias)

    def with_params(self, theta: np.ndarray) -> "LogisticModel":
        return LogisticModel(theta[:-1].copy(), float(theta[-1]), self.threshold, self.schema_hash)

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.d:
            raise ValueError(f"expected {self.d} features, got {X.shape[-1]}")
        return X

    def margin(self, X) -> np.ndarray | float:
        X = self._check(X)
        return X @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray | float:
        """sigmoid(w.x + b) for one vector or a batch of rows."""
        p = expit(self.margin(X))
        return float(p) if np.ndim(p) == 0 else p

    def predict(self, X) -> np.ndarray | int:
        p = np.asarray(self.predict_proba(X))
        out = (p >= self.threshold).astype(np.int8)
        return int(out) if out.ndim == 0 else out

    __call__ = predict

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "threshold": self.threshold,
            "d": self.d,
            "schema_hash": self.schema_hash,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "LogisticModel":
        m = cls(np.asarray(obj["weights"], dtype=float), obj["bias"], obj.get("threshold", 0.5),
                obj.get("schema_hash", ""))
        if "d" in obj and obj["d"] != m.d:
            raise ValueError(f"serialized d={obj['d']} does not match {m.d} weights")
        return m


def schema_hash(feature_names) -> str:
    return hashlib.sha256(json.dumps(list(feature_names)).encode()).hexdigest()[:16]


def per_sample_gradients(model: LogisticModel, X, y) -> np.ndarray:
    """Binary cross-entropy gradients, one row ``(p_i - y_i) * (x_i, 1)`` per example.

    Returns an ``(n, d+1)`` array; the last column is the bias gradient.
    """
    X = model._check(np.atleast_2d(X))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if y.shape[0] != X.shape[0]:
        raise ValueError("batch features and labels differ in length")
    resid = expit(X @ model.weights + model.bias) - y
    return np.hstack([X * resid[:, None], resid[:, None]])


def bce_loss(model: LogisticModel, X, y) -> float:
    """Mean binary cross-entropy, computed stably from the margin."""
    z = model.margin(np.atleast_2d(X))
    y = np.asarray(y, dtype=float)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))
