"""Minimal differentiable classifiers and their local optimizers.

Two architectures are supported, both operating on flat float64 parameter
vectors so that a model is a single array that can be transmitted, averaged,
and checkpointed:

* ``softmax`` -- multinomial logistic regression. Canonical layout:
  ``[W (feature_dim x num_classes, row-major), b (num_classes)]``.
* ``mlp`` -- one ReLU hidden layer. Canonical layout:
  ``[W1 (feature_dim x hidden_dim), b1 (hidden_dim),
  W2 (hidden_dim x num_classes), b2 (num_classes)]``.

All functions are pure: they never mutate their inputs and hold no global
state, so they are safe to call from multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, NumericError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

INIT_SCALE = 0.05  # weights start uniform in [-INIT_SCALE, INIT_SCALE)
PROB_FLOOR = 1e-12  # clamp inside log() so cross-entropy stays finite


@dataclass(frozen=True)
class ModelArch:
    """Architecture descriptor; fully determines the parameter layout."""

    kind: str  # "softmax" | "mlp"
    feature_dim: int
    num_classes: int
    hidden_dim: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("softmax", "mlp"):
            raise ConfigurationError(f"model kind: expected 'softmax' or 'mlp', got {self.kind!r}")
        if self.feature_dim < 1:
            raise ConfigurationError("feature_dim: must be >= 1")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes: must be >= 2")
        if self.kind == "mlp" and self.hidden_dim < 1:
            raise ConfigurationError("hidden_dim: must be >= 1 for mlp models")

    @property
    def num_params(self) -> int:
        if self.kind == "softmax":
            return (self.feature_dim + 1) * self.num_classes
        return (self.feature_dim + 1) * self.hidden_dim + (self.hidden_dim + 1) * self.num_classes

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "feature_dim": self.feature_dim,
            "num_classes": self.num_classes,
            "hidden_dim": self.hidden_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelArch":
        return cls(
            kind=d["kind"],
            feature_dim=int(d["feature_dim"]),
            num_classes=int(d["num_classes"]),
            hidden_dim=int(d.get("hidden_dim", 0)),
        )


@dataclass(frozen=True)
class OptimizerState:
    """State carried between steps of a local optimizer.

    Adam moment accumulators are reset whenever a client starts a new local
    update; only weights travel between rounds.
    """

    kind: str  # "sgd" | "adam"
    learning_rate: float
    m: np.ndarray | None = None  # first moment (adam)
    v: np.ndarray | None = None  # second moment (adam)
    t: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("sgd", "adam"):
            raise ConfigurationError(f"optimizer: expected 'sgd' or 'adam', got {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate: must be > 0")


def init_optimizer(kind: str, learning_rate: float, num_params: int) -> OptimizerState:
    """Fresh optimizer state for a parameter vector of the given length."""
    if kind == "adam":
        return OptimizerState(
            kind=kind,
            learning_rate=learning_rate,
            m=np.zeros(num_params),
            v=np.zeros(num_params),
        )
    return OptimizerState(kind=kind, learning_rate=learning_rate)


def init_params(arch: ModelArch, seed) -> np.ndarray:
    """Deterministic initial weights, uniform in [-0.05, 0.05)."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=arch.num_params)


def _views(arch: ModelArch, params: np.ndarray) -> tuple[np.ndarray, ...]:
    """Reshape the flat vector into per-layer views (no copies)."""
    if params.shape != (arch.num_params,):
        raise ConfigurationError(
            f"parameter vector: expected length {arch.num_params}, got {params.shape}"
        )
    d, n, h = arch.feature_dim, arch.num_classes, arch.hidden_dim
    if arch.kind == "softmax":
        w = params[: d * n].reshape(d, n)
        b = params[d * n :]
        return w, b
    o1 = d * h
    o2 = o1 + h
    o3 = o2 + h * n
    return (
        params[:o1].reshape(d, h),
        params[o1:o2],
        params[o2:o3].reshape(h, n),
        params[o3:],
    )


def _check_features(arch: ModelArch, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != arch.feature_dim:
        raise ConfigurationError(
            f"features: expected shape (n, {arch.feature_dim}), got {features.shape}"
        )
    return features


def _logits(arch: ModelArch, params: np.ndarray, features: np.ndarray):
    """Return logits plus the hidden activations needed for backprop."""
    if arch.kind == "softmax":
        w, b = _views(arch, params)
        return features @ w + b, None
    w1, b1, w2, b2 = _views(arch, params)
    hidden = np.maximum(features @ w1 + b1, 0.0)
    return hidden @ w2 + b2, hidden


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(arch: ModelArch, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Class-probability matrix; each row sums to 1."""
    features = _check_features(arch, features)
    logits, _ = _logits(arch, params, features)
    return _softmax(logits)


def predict(arch: ModelArch, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Predicted class ids; argmax ties resolve to the lowest class id."""
    return np.argmax(forward(arch, params, features), axis=1)


def loss_and_grad(
    arch: ModelArch,
    params: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy and its analytic gradient.

    The gradient has the same flat layout as ``params``. Raises
    ``NumericError`` naming the first offending index if a non-finite value
    appears in the logits or the gradient.
    """
    features = _check_features(arch, features)
    labels = np.asarray(labels, dtype=np.int64)
    n = features.shape[0]
    if n == 0:
        raise ConfigurationError("batch: must contain at least one sample")
    if labels.shape != (n,):
        raise ConfigurationError(f"labels: expected shape ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= arch.num_classes:
        raise ConfigurationError(f"labels: class ids must lie in [0, {arch.num_classes})")

    logits, hidden = _logits(arch, params, features)
    if not np.all(np.isfinite(logits)):
        idx = int(np.flatnonzero(~np.isfinite(logits))[0])
        raise NumericError(f"non-finite logit at flat index {idx}")

    probs = _softmax(logits)
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))

    # dL/dlogits for mean cross-entropy: (softmax - onehot) / n
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    grad = np.empty_like(params)
    if arch.kind == "softmax":
        d, c = arch.feature_dim, arch.num_classes
        grad[: d * c] = (features.T @ dlogits).ravel()
        grad[d * c :] = dlogits.sum(axis=0)
    else:
        w1, b1, w2, b2 = _views(arch, params)
        d, h, c = arch.feature_dim, arch.hidden_dim, arch.num_classes
        dhidden = (dlogits @ w2.T) * (hidden > 0)
        o1, o2, o3 = d * h, d * h + h, d * h + h + h * c
        grad[:o1] = (features.T @ dhidden).ravel()
        grad[o1:o2] = dhidden.sum(axis=0)
        grad[o2:o3] = (hidden.T @ dlogits).ravel()
        grad[o3:] = dlogits.sum(axis=0)

    if not np.all(np.isfinite(grad)):
        idx = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NumericError(f"non-finite gradient at flat index {idx}")
    return loss, grad


def optimizer_step(
    params: np.ndarray,
    grad: np.ndarray,
    state: OptimizerState,
) -> tuple[np.ndarray, OptimizerState]:
    """One update. SGD is exactly ``params - lr * grad``; Adam is the
    standard bias-corrected moment update."""
    if grad.shape != params.shape:
        raise ConfigurationError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    if state.kind == "sgd":
        return params - state.learning_rate * grad, state

    t = state.t + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grad * grad
    m_hat = m / (1.0 - ADAM_BETA1**t)
    v_hat = v / (1.0 - ADAM_BETA2**t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new_params, replace(state, m=m, v=v, t=t)


def top1_accuracy(
    arch: ModelArch,
    params: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
) -> float:
    """Fraction of samples whose argmax prediction equals the label."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ConfigurationError("dataset: must contain at least one sample")
    return float(np.mean(predict(arch, params, features) == labels))


def mean_loss(
    arch: ModelArch,
    params: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
) -> float:
    """Mean cross-entropy without the gradient (evaluation helper)."""
    features = _check_features(arch, features)
    labels = np.asarray(labels, dtype=np.int64)
    logits, _ = _logits(arch, params, features)
    probs = _softmax(logits)
    picked = probs[np.arange(features.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))
