"""Reference classifiers trained from scratch with numpy.

Two model kinds stand in for "any classifier":

* ``softmax``: multinomial logistic regression on the flattened window.
* ``mlp``: one ReLU hidden layer followed by a softmax output.

Both expose the same black-box surface (:func:`predict_proba`), which is all the
augmentation, voting and explanation code relies on.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BadConfig, BadLabel, DivergedLoss, EmptyDataset, NonFinite, ShapeMismatch
from .types import Dataset, Window, _ArrayEq, _frozen_array

log = logging.getLogger(__name__)

MODEL_KINDS = ("softmax", "mlp")
PROB_FLOOR = 1e-12
_MAX_LOSS = -math.log(PROB_FLOOR)

# Adam defaults
BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


# --------------------------------------------------------------------------
# model container
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReferenceModel(_ArrayEq):
    """Frozen weights of a reference classifier.

    ``weights`` is ``(W, b)`` for ``softmax`` with ``W`` of shape ``[K, C*T]``,
    and ``(W1, b1, W2, b2)`` for ``mlp`` with ``W1: [H, C*T]``, ``W2: [K, H]``.
    """

    kind: str
    weights: Tuple[np.ndarray, ...]
    input_shape: Tuple[int, int]

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise BadConfig(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "weights", tuple(_frozen_array(w) for w in self.weights))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        _check_weight_shapes(self.kind, self.weights, self.input_shape)
        if not all(np.all(np.isfinite(w)) for w in self.weights):
            raise NonFinite("model weights must be finite")

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_inputs(self) -> int:
        return self.input_shape[0] * self.input_shape[1]

    def logits(self, x: np.ndarray) -> np.ndarray:
        return _logits(self.kind, self.weights, self._flatten(x))

    def predict_proba_array(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities for a batch ``[N, C, T]``."""
        return softmax(self.logits(x))

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        return _loss_and_grads(self.kind, self.weights, self._flatten(x), np.asarray(y), grads=False)[0]

    def _flatten(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-2:] != self.input_shape:
            raise ShapeMismatch(f"model expects windows of shape {self.input_shape}, got {x.shape[-2:]}")
        return x.reshape(-1, self.n_inputs)


def _check_weight_shapes(kind, weights, input_shape):
    d = input_shape[0] * input_shape[1]
    if kind == "softmax":
        ok = len(weights) == 2 and weights[0].ndim == 2 and weights[0].shape[1] == d \
            and weights[1].shape == (weights[0].shape[0],)
    else:
        ok = len(weights) == 4 and weights[0].ndim == 2 and weights[0].shape[1] == d \
            and weights[1].shape == (weights[0].shape[0],) and weights[2].ndim == 2 \
            and weights[2].shape[1] == weights[0].shape[0] and weights[3].shape == (weights[2].shape[0],)
    if not ok:
        raise ShapeMismatch(f"weight shapes {[w.shape for w in weights]} do not fit a {kind} model "
                            f"on inputs {input_shape}")
    if weights[-1].shape[0] < 2:
        raise ShapeMismatch("a classifier needs K >= 2 outputs")


def init_model(kind: str, input_shape, n_classes: int, rng: np.random.Generator,
               hidden: int = 128) -> ReferenceModel:
    """Zero weights for ``softmax``; He-scaled Gaussian hidden layer for ``mlp``."""
    d = int(input_shape[0]) * int(input_shape[1])
    if kind == "softmax":
        weights = (np.zeros((n_classes, d)), np.zeros(n_classes))
    elif kind == "mlp":
        w1 = rng.standard_normal((hidden, d)) * math.sqrt(2.0 / d)
        w2 = rng.standard_normal((n_classes, hidden)) * math.sqrt(1.0 / hidden)
        weights = (w1, np.zeros(hidden), w2, np.zeros(n_classes))
    else:
        raise BadConfig(f"unknown model kind {kind!r}")
    return ReferenceModel(kind, weights, input_shape)


# --------------------------------------------------------------------------
# maths
# --------------------------------------------------------------------------


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _logits(kind, weights, x):
    if kind == "softmax":
        w, b = weights
        return x @ w.T + b
    w1, b1, w2, b2 = weights
    return np.maximum(x @ w1.T + b1, 0.0) @ w2.T + b2


def _loss_and_grads(kind, weights, x, y, grads=True):
    """Mean clamped cross-entropy over the batch and, optionally, its gradient."""
    n = x.shape[0]
    if kind == "softmax":
        w, b = weights
        hidden = None
        z = x @ w.T + b
    else:
        w1, b1, w2, b2 = weights
        pre = x @ w1.T + b1
        hidden = np.maximum(pre, 0.0)
        z = hidden @ w2.T + b2
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    per_sample = log_norm - z[np.arange(n), y]
    clamped = per_sample > _MAX_LOSS
    loss = float(np.where(clamped, _MAX_LOSS, per_sample).mean())
    if not grads:
        return loss, None
    dz = np.exp(z - log_norm[:, None])
    dz[np.arange(n), y] -= 1.0
    dz[clamped] = 0.0
    dz /= n
    if kind == "softmax":
        return loss, (dz.T @ x, dz.sum(axis=0))
    dh = (dz @ w2) * (pre > 0)
    return loss, (dh.T @ x, dh.sum(axis=0), dz.T @ hidden, dz.sum(axis=0))


def predict_proba(m: ReferenceModel, w) -> np.ndarray:
    """Probability vector for one window (a :class:`Window` or a ``[C, T]`` array)."""
    values = w.values if isinstance(w, Window) else np.asarray(w, dtype=np.float64)
    if values.shape != m.input_shape:
        raise ShapeMismatch(f"model expects {m.input_shape}, got {values.shape}")
    return m.predict_proba_array(values[None])[0]


def cross_entropy(probs, label: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not (0 <= int(label) < probs.size) or int(label) != label:
        raise BadLabel(f"label {label!r} outside [0, {probs.size})")
    return float(-math.log(max(float(probs[int(label)]), PROB_FLOOR)))


# --------------------------------------------------------------------------
# learning-rate schedule
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and stopping settings.

    ``patience`` defaults to ``cawr_period``. ``schedule`` is ``"cawr"`` (cosine
    annealing with warm restarts) or ``"constant"`` (``lr0`` throughout).
    """

    lr0: float = 1e-3
    batch: int = 256
    max_epochs: int = 500
    cawr_period: int = 50
    cawr_mult: int = 2
    lr_min: float = 1e-5
    patience: Optional[int] = None
    seed: int = 0
    schedule: str = "cawr"

    def __post_init__(self):
        if self.patience is None:
            object.__setattr__(self, "patience", self.cawr_period)
        for name in ("lr0", "batch", "max_epochs", "cawr_period", "cawr_mult", "patience"):
            if not getattr(self, name) > 0:
                raise BadConfig(f"{name} must be positive, got {getattr(self, name)!r}")
        if not 0 <= self.lr_min <= self.lr0:
            raise BadConfig("lr_min must lie in [0, lr0]")
        if self.schedule not in ("cawr", "constant"):
            raise BadConfig(f"unknown schedule {self.schedule!r}")


def cosine_annealing(t_cur: float, period: float, lr0: float, lr_min: float) -> float:
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t_cur / period))


def cawr_position(epoch: int, period: int, mult: int) -> Tuple[int, int]:
    """``(epochs since last restart, current period)`` at ``epoch``."""
    if epoch < 0:
        raise BadConfig("epoch must be >= 0")
    if mult == 1:
        return epoch % period, period
    t = epoch
    while t >= period:
        t -= period
        period *= mult
    return t, period


def cawr_lr(epoch: int, cfg: TrainConfig) -> float:
    t_cur, period = cawr_position(epoch, cfg.cawr_period, cfg.cawr_mult)
    return cosine_annealing(t_cur, period, cfg.lr0, cfg.lr_min)


def scheduled_lr(epoch: int, cfg: TrainConfig) -> float:
    return cawr_lr(epoch, cfg) if cfg.schedule == "cawr" else cfg.lr0


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    best_val_loss: float
    early_stop: bool = False


@dataclass
class TrainingLog:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    COLUMNS = ("epoch", "lr", "train_loss", "val_loss", "best_val_loss", "early_stop")

    @property
    def stopped_early(self) -> bool:
        return bool(self.records) and self.records[-1].early_stop

    def to_text(self) -> str:
        lines = ["\t".join(self.COLUMNS)]
        for r in self.records:
            lines.append(f"{r.epoch}\t{r.lr!r}\t{r.train_loss!r}\t{r.val_loss!r}\t"
                         f"{r.best_val_loss!r}\t{int(r.early_stop)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainingLog":
        rows = [line.split("\t") for line in text.strip().splitlines()[1:]]
        records = [EpochRecord(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]),
                               bool(int(r[5]))) for r in rows]
        best = min(range(len(records)), key=lambda i: (records[i].val_loss, i)) if records else -1
        return cls(records, records[best].epoch if records else -1)


Augmenter = Callable[[int, np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


def fit(train: Dataset, val: Dataset, cfg: TrainConfig, augmenter: Optional[Augmenter] = None,
        kind: str = "mlp", hidden: int = 128) -> Tuple[ReferenceModel, TrainingLog]:
    """Minibatch Adam on cross-entropy with per-epoch learning rate and early stopping.

    ``augmenter(epoch, X, y)`` (if given) returns that epoch's training pool.
    Training stops once the validation loss has not improved for
    ``cfg.patience`` epochs; the weights from the best validation epoch are returned.
    """
    if len(train) == 0 or len(val) == 0:
        raise EmptyDataset("fit needs nonempty train and validation sets")
    if train.values.shape[1:] != val.values.shape[1:] or train.n_classes != val.n_classes:
        raise ShapeMismatch("train and validation sets must share window shape and classes")
    rng = np.random.default_rng(cfg.seed)
    input_shape = train.values.shape[1:]
    model = init_model(kind, input_shape, train.n_classes, rng, hidden)
    weights = [np.array(w) for w in model.weights]
    m1 = [np.zeros_like(w) for w in weights]
    m2 = [np.zeros_like(w) for w in weights]
    d = model.n_inputs
    x_val = val.values.reshape(len(val), d)
    y_val = val.labels

    history = TrainingLog()
    best_loss, best_weights = math.inf, [w.copy() for w in weights]
    step = 0
    for epoch in range(cfg.max_epochs):
        lr = scheduled_lr(epoch, cfg)
        x, y = train.values, train.labels
        if augmenter is not None:
            x, y = augmenter(epoch, x, y)
        x = np.asarray(x, dtype=np.float64).reshape(len(x), d)
        y = np.asarray(y)
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch):
            idx = order[start : start + cfg.batch]
            loss, grads = _loss_and_grads(kind, weights, x[idx], y[idx])
            total += loss * len(idx)
            step += 1
            c1 = 1.0 - BETA1**step
            c2 = 1.0 - BETA2**step
            for w, g, a, b in zip(weights, grads, m1, m2):
                a *= BETA1
                a += (1.0 - BETA1) * g
                b *= BETA2
                b += (1.0 - BETA2) * g * g
                w -= lr * (a / c1) / (np.sqrt(b / c2) + ADAM_EPS)
        train_loss = total / len(x)
        val_loss = _loss_and_grads(kind, weights, x_val, y_val, grads=False)[0]
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise DivergedLoss(f"non-finite loss at epoch {epoch}")
        if val_loss < best_loss:
            best_loss, history.best_epoch = val_loss, epoch
            best_weights = [w.copy() for w in weights]
        stop = epoch - history.best_epoch >= cfg.patience
        history.records.append(EpochRecord(epoch, lr, train_loss, val_loss, best_loss, stop))
        if stop:
            log.debug("early stop at epoch %d (best %d)", epoch, history.best_epoch)
            break
    return ReferenceModel(kind, best_weights, input_shape), history


# --------------------------------------------------------------------------
# gradient verification
# --------------------------------------------------------------------------


def gradient_check(m: ReferenceModel, x: np.ndarray, y: Sequence[int], epsilon: float = 1e-5,
                   n_coords: int = 100, rng: Optional[np.random.Generator] = None) -> float:
    """Largest relative gap between backprop and central differences.

    Compares on ``n_coords`` weight coordinates drawn at random (all of them if
    the model has fewer). For ``mlp``, a coordinate whose +/-epsilon nudge flips
    any ReLU on/off is replaced by another draw, since the loss has a kink there.
    """
    x = m._flatten(x)
    y = np.asarray(y)
    if x.shape[0] == 0:
        raise EmptyDataset("gradient_check needs a nonempty batch")
    rng = np.random.default_rng(0) if rng is None else rng
    weights = [np.array(w) for w in m.weights]
    _, grads = _loss_and_grads(m.kind, weights, x, y)
    sizes = [w.size for w in weights]
    offsets = np.cumsum([0] + sizes)
    candidates = rng.permutation(offsets[-1])

    def relu_pattern():
        return (x @ weights[0].T + weights[1]) > 0

    base_pattern = relu_pattern() if m.kind == "mlp" else None
    worst, checked = 0.0, 0
    for flat in candidates:
        if checked >= n_coords:
            break
        t = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(int(flat - offsets[t]), weights[t].shape)
        original = weights[t][idx]
        weights[t][idx] = original + epsilon
        plus = _loss_and_grads(m.kind, weights, x, y, grads=False)[0]
        kink = m.kind == "mlp" and t < 2 and np.any(relu_pattern() != base_pattern)
        weights[t][idx] = original - epsilon
        minus = _loss_and_grads(m.kind, weights, x, y, grads=False)[0]
        kink = kink or (m.kind == "mlp" and t < 2 and np.any(relu_pattern() != base_pattern))
        weights[t][idx] = original
        if kink:
            continue
        g_fd = (plus - minus) / (2.0 * epsilon)
        g_a = float(grads[t][idx])
        worst = max(worst, abs(g_a - g_fd) / max(abs(g_a) + abs(g_fd), 1e-8))
        checked += 1
    return worst
