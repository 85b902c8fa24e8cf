"""Two-hidden-layer MLP over patch features, trained from scratch.

Architecture: input (512 per magnification) -> 4096 ReLU -> 4096 ReLU -> 2
softmax. Inverted dropout on both hidden activations during training,
mini-batch SGD with classical momentum, cross-entropy loss, early stopping on
validation loss with best-epoch weight restoration. Everything is plain NumPy
so gradients can be checked against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .util import derive_seed

HIDDEN_DIM = 4096
OUTPUT_DIM = 2
FEATURE_DIM = 512
MONO_LEARNING_RATE = 0.0001
MULTI_LEARNING_RATE = 0.001
CONVERGENCE_LOSS = 1e-8


@dataclass
class ClassifierParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        for name in ("W1", "b1", "W2", "b2", "W3", "b3"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.W1.shape[1] != self.b1.shape[0] or self.W2.shape[0] != self.b1.shape[0]:
            raise ValueError("layer 1/2 dimensions disagree")
        if self.W2.shape[1] != self.b2.shape[0] or self.W3.shape[0] != self.b2.shape[0]:
            raise ValueError("layer 2/3 dimensions disagree")
        if self.W3.shape[1] != self.b3.shape[0]:
            raise ValueError("output dimensions disagree")
        for name in ("W1", "b1", "W2", "b2", "W3", "b3"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in {name}")

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(
            self.W1.copy(), self.b1.copy(), self.W2.copy(),
            self.b2.copy(), self.W3.copy(), self.b3.copy(),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "W1": self.W1, "b1": self.b1, "W2": self.W2,
            "b2": self.b2, "W3": self.W3, "b3": self.b3,
        }


@dataclass
class TrainConfig:
    learning_rate: float = MONO_LEARNING_RATE
    momentum: float = 0.9
    dropout_rate: float = 0.5
    max_epochs: int = 20
    patience: int = 3
    min_delta: float = 1e-4
    batch_size: int = 32
    seed: int = 0
    augmentation_enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("max_epochs, patience, and batch_size must be >= 1")

    @classmethod
    def for_scales(cls, m_count: int, **overrides) -> "TrainConfig":
        """Mono-scale models train at 0.0001, di/tri-scale at 0.001."""
        rate = MONO_LEARNING_RATE if m_count == 1 else MULTI_LEARNING_RATE
        overrides.setdefault("learning_rate", rate)
        return cls(**overrides)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    stop_reason: str = "max_epochs"  # converged | early_stopped | max_epochs


def init_params(layer_dims: tuple[int, int, int, int], seed: int) -> ClassifierParams:
    """Weights ~ N(0, 1/fan_in), biases zero; any consistent layer sizes."""
    rng = np.random.default_rng(seed)
    d0, d1, d2, d3 = layer_dims
    return ClassifierParams(
        W1=rng.standard_normal((d0, d1)) / np.sqrt(d0),
        b1=np.zeros(d1),
        W2=rng.standard_normal((d1, d2)) / np.sqrt(d1),
        b2=np.zeros(d2),
        W3=rng.standard_normal((d2, d3)) / np.sqrt(d2),
        b3=np.zeros(d3),
    )


def init_classifier(m_count: int, seed: int) -> ClassifierParams:
    if m_count not in (1, 2, 3):
        raise ValueError("m_count must be 1, 2, or 3")
    return init_params(
        (FEATURE_DIM * m_count, HIDDEN_DIM, HIDDEN_DIM, OUTPUT_DIM), seed
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def forward(
    params: ClassifierParams,
    x: np.ndarray,
    mode: str = "eval",
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
):
    """Probabilities plus the cache needed for the backward pass.

    Dropout is the inverted form: masks scale surviving activations by
    1/keep so eval mode needs no rescaling.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.input_dim:
        raise ValueError(f"expected input dim {params.input_dim}, got {x.shape[1]}")

    def dropout(h):
        if mode != "train" or dropout_rate == 0.0:
            return h, None
        keep = 1.0 - dropout_rate
        mask = (rng.random(h.shape) >= dropout_rate) / keep
        return h * mask, mask

    z1 = x @ params.W1 + params.b1
    a1, mask1 = dropout(np.maximum(z1, 0.0))
    z2 = a1 @ params.W2 + params.b2
    a2, mask2 = dropout(np.maximum(z2, 0.0))
    logits = a2 @ params.W3 + params.b3
    probs = _softmax(logits)
    cache = (x, z1, a1, mask1, z2, a2, mask2, logits, probs)
    return probs, cache


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood, computed from logits for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(labels)), labels]
    return float(np.mean(log_z - picked))


def backward(params: ClassifierParams, cache, labels: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the mean cross-entropy w.r.t. every parameter group."""
    x, z1, a1, mask1, z2, a2, mask2, _, probs = cache
    n = len(labels)
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grads = {
        "W3": a2.T @ dlogits,
        "b3": dlogits.sum(axis=0),
    }
    da2 = dlogits @ params.W3.T
    if mask2 is not None:
        da2 = da2 * mask2
    dz2 = da2 * (z2 > 0.0)
    grads["W2"] = a1.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    da1 = dz2 @ params.W2.T
    if mask1 is not None:
        da1 = da1 * mask1
    dz1 = da1 * (z1 > 0.0)
    grads["W1"] = x.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return grads


def predict_patch(params: ClassifierParams, feature) -> int:
    """Hard label from eval-mode probabilities; exact ties go to 1 (bad)."""
    values = np.asarray(getattr(feature, "values", feature), dtype=np.float64)
    probs, _ = forward(params, values.reshape(1, -1))
    return int(probs[0, 1] >= probs[0, 0])


def predict_batch(params: ClassifierParams, features: np.ndarray) -> np.ndarray:
    if len(features) == 0:
        return np.zeros(0, dtype=np.int64)
    probs, _ = forward(params, features)
    return (probs[:, 1] >= probs[:, 0]).astype(np.int64)


class StaticFeatureSource:
    """Fixed feature matrix; every epoch sees the same values."""

    def __init__(self, features: np.ndarray, labels: np.ndarray):
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels disagree in length")
        self.augmented = False

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def features_for_epoch(self, epoch: int) -> np.ndarray:
        return self.features


def train(
    params: ClassifierParams,
    train_source,
    val_source,
    cfg: TrainConfig,
) -> tuple[ClassifierParams, TrainHistory]:
    """Mini-batch SGD with classical momentum: v <- mu*v - lr*grad, p <- p + v.

    Sources expose `labels` and `features_for_epoch(epoch)`; an augmenting
    source re-embeds freshly augmented patches each epoch, a static source
    returns its matrix unchanged. Early stopping fires after `patience`
    consecutive epochs without a validation-loss improvement of at least
    `min_delta`; the returned parameters come from the epoch with the lowest
    validation loss (earliest epoch on ties).
    """
    if len(train_source.labels) == 0 or len(val_source.labels) == 0:
        raise ValueError("train and validation sets must be non-empty")
    params = params.copy()
    velocity = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    dropout_rng = np.random.default_rng(derive_seed(cfg.seed, "dropout"))
    train_labels = np.asarray(train_source.labels, dtype=np.int64)
    val_labels = np.asarray(val_source.labels, dtype=np.int64)
    val_features = np.asarray(val_source.features_for_epoch(0), dtype=np.float64)

    history = TrainHistory()
    best_val = np.inf  # best-epoch restoration: strict minimum, earliest wins
    best_params = params.copy()
    stop_ref = np.inf  # early-stopping reference, moves only on real improvement
    since_improvement = 0

    for epoch in range(cfg.max_epochs):
        features = np.asarray(train_source.features_for_epoch(epoch), dtype=np.float64)
        order = shuffle_rng.permutation(len(train_labels))
        loss_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x, y = features[idx], train_labels[idx]
            _, cache = forward(params, x, "train", cfg.dropout_rate, dropout_rng)
            batch_loss = cross_entropy(cache[7], y)
            if not np.isfinite(batch_loss):
                raise FloatingPointError(
                    f"non-finite training loss {batch_loss} at epoch {epoch}"
                )
            grads = backward(params, cache, y)
            arrays = params.arrays()
            for name, grad in grads.items():
                velocity[name] = cfg.momentum * velocity[name] - cfg.learning_rate * grad
                arrays[name] += velocity[name]
            loss_sum += batch_loss * len(idx)
        train_loss = loss_sum / len(order)

        val_probs, val_cache = forward(params, val_features)
        val_loss = cross_entropy(val_cache[7], val_labels)
        if not np.isfinite(val_loss):
            raise FloatingPointError(f"non-finite validation loss at epoch {epoch}")
        val_pred = (val_probs[:, 1] >= val_probs[:, 0]).astype(np.int64)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.val_accuracy.append(float(np.mean(val_pred == val_labels)))
        history.stopped_epoch = epoch

        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()

        if train_loss < CONVERGENCE_LOSS:
            history.stop_reason = "converged"
            break
        if val_loss < stop_ref - cfg.min_delta:
            stop_ref = val_loss
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= cfg.patience:
                history.stop_reason = "early_stopped"
                break
    else:
        history.stop_reason = "max_epochs"

    return best_params, history


CHECKPOINT_VERSION = 1


def save_checkpoint(params: ClassifierParams, cfg: TrainConfig, path) -> Path:
    """Versioned npz of all parameter arrays plus the training config."""
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(path.suffix + ".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        path,
        version=np.int64(CHECKPOINT_VERSION),
        config=np.str_(json.dumps(asdict(cfg), sort_keys=True)),
        **params.arrays(),
    )
    return path


def load_checkpoint(path) -> tuple[ClassifierParams, TrainConfig]:
    with np.load(Path(path)) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        cfg = TrainConfig(**json.loads(str(data["config"])))
        params = ClassifierParams(
            W1=data["W1"], b1=data["b1"], W2=data["W2"],
            b2=data["b2"], W3=data["W3"], b3=data["b3"],
        )
    return params, cfg
