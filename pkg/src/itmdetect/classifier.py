"""Two-layer MLP head: forward pass, manual backprop, AdamW training.

The head maps a misalignment vector to two logits (real, fake).  Softmax
probabilities are thresholded at 0.5 on the fake side, ties counting as
fake.  The loss is binary cross-entropy on the fake probability, summed
(not averaged) over the mini-batch; since AdamW's update direction is
invariant to gradient scale, the sum/mean choice does not change training
behavior, only the reported loss magnitude.

Everything here is deterministic given the seed: initialization, epoch
shuffling, and the optimizer state all derive from numpy Generators.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyBatch,
    EmptyDataset,
    FormatError,
    NonFiniteLoss,
)
from .representation import Misalignment

REAL, FAKE = 0, 1

# Floor for log arguments in the BCE loss; prevents -inf on confident mistakes.
LOG_FLOOR = 1e-12

_ARTIFACT_MAGIC = b"ITMC"
_ARTIFACT_VERSION = 1
_ARTIFACT_HEADER = struct.Struct("<4sHII")
# Refuse to allocate for absurd headers (a corrupt file, not a real model).
_MAX_DIM = 1 << 24


@dataclass
class MlpHead:
    """Parameters of the two-layer classifier.

    W1: (hidden_dim, input_dim), b1: (hidden_dim,),
    W2: (2, hidden_dim), b2: (2,).  The output layer always has two units.
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        h, d = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape != (2, h) or self.b2.shape != (2,):
            raise ValueError("inconsistent parameter shapes")
        for p in (self.W1, self.b1, self.W2, self.b2):
            if not np.all(np.isfinite(p)):
                raise ValueError("non-finite parameter")

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]


@dataclass
class HeadGradients:
    """Gradient of a batch loss, with the same shapes as MlpHead."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    weight_decay: float = 1e-3
    batch_size: int = 64
    hidden_dim: int = 256
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")


@dataclass(frozen=True)
class Prediction:
    prob_real: float
    prob_fake: float
    label: int  # REAL or FAKE


def init_head(input_dim: int, hidden_dim: int, seed: int) -> MlpHead:
    """Seeded uniform initialization, +-sqrt(6/(fan_in+fan_out)) per layer, zero biases."""
    if input_dim < 1 or hidden_dim < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (input_dim + hidden_dim))
    lim2 = np.sqrt(6.0 / (hidden_dim + 2))
    return MlpHead(
        W1=rng.uniform(-lim1, lim1, size=(hidden_dim, input_dim)),
        b1=np.zeros(hidden_dim),
        W2=rng.uniform(-lim2, lim2, size=(2, hidden_dim)),
        b2=np.zeros(2),
    )


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_batch(head: MlpHead, X: np.ndarray):
    """Returns (pre-activation, hidden, probabilities) for a (n, input_dim) batch."""
    pre = X @ head.W1.T + head.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ head.W2.T + head.b2
    return pre, hidden, _softmax_rows(logits)


def _stack_pairs(pairs: Sequence[tuple[Misalignment, int]], input_dim: int):
    for d, _ in pairs:
        if d.dim != input_dim:
            raise DimensionMismatch(f"input dim {d.dim} does not match expected {input_dim}")
    X = np.stack([d.values for d, _ in pairs])
    y = np.array([int(label) for _, label in pairs], dtype=np.int64)
    if not np.all((y == REAL) | (y == FAKE)):
        raise ValueError("labels must be 0 (real) or 1 (fake)")
    return X, y


def _batch_arrays(head: MlpHead, batch: Sequence[tuple[Misalignment, int]]):
    if not batch:
        raise EmptyBatch("batch is empty")
    return _stack_pairs(batch, head.input_dim)


def _loss_from_probs(probs: np.ndarray, y: np.ndarray) -> float:
    p_fake = probs[:, FAKE]
    pos = np.log(np.maximum(p_fake, LOG_FLOOR))
    neg = np.log(np.maximum(1.0 - p_fake, LOG_FLOOR))
    return float(-(np.where(y == FAKE, pos, neg)).sum())


def _grads_from_forward(X, y, hidden, pre, probs, W2) -> HeadGradients:
    # BCE on the fake probability of a 2-way softmax is exactly 2-class
    # cross-entropy, so dL/dlogits = probs - onehot(y), summed over the batch.
    delta = probs.copy()
    delta[np.arange(len(y)), y] -= 1.0
    gW2 = delta.T @ hidden
    gb2 = delta.sum(axis=0)
    dh = (delta @ W2) * (pre > 0.0)
    gW1 = dh.T @ X
    gb1 = dh.sum(axis=0)
    return HeadGradients(W1=gW1, b1=gb1, W2=gW2, b2=gb2)


def forward(head: MlpHead, d: Misalignment) -> Prediction:
    """relu(W1 d + b1) -> logits -> stable softmax -> Prediction."""
    if d.dim != head.input_dim:
        raise DimensionMismatch(f"input dim {d.dim} does not match head input_dim {head.input_dim}")
    _, _, probs = _forward_batch(head, d.values[None, :])
    p_real, p_fake = float(probs[0, REAL]), float(probs[0, FAKE])
    return Prediction(prob_real=p_real, prob_fake=p_fake, label=FAKE if p_fake >= 0.5 else REAL)


def predict(head: MlpHead, d: Misalignment) -> Prediction:
    """Forward pass thresholded at 0.5 on prob_fake; ties classify as fake."""
    return forward(head, d)


def batch_loss(head: MlpHead, batch: Sequence[tuple[Misalignment, int]]) -> float:
    """Summed binary cross-entropy over the batch."""
    X, y = _batch_arrays(head, batch)
    _, _, probs = _forward_batch(head, X)
    return _loss_from_probs(probs, y)


def gradients(head: MlpHead, batch: Sequence[tuple[Misalignment, int]]) -> HeadGradients:
    """Exact analytic gradient of batch_loss with respect to every parameter."""
    X, y = _batch_arrays(head, batch)
    pre, hidden, probs = _forward_batch(head, X)
    return _grads_from_forward(X, y, hidden, pre, probs, head.W2)


class _AdamW:
    """Decoupled weight decay: the decay term is applied to the parameter
    directly, never folded into the moment estimates."""

    def __init__(self, shapes, lr, betas, eps, weight_decay):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params, grads, decay_mask):
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for i, (p, g, decay) in enumerate(zip(params, grads, decay_mask)):
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if decay and self.wd != 0.0:
                p -= self.lr * self.wd * p


def train(
    dataset: Sequence[tuple[Misalignment, int]],
    cfg: TrainConfig,
    epoch_losses: list[float] | None = None,
) -> MlpHead:
    """Train a fresh head on (misalignment, label) pairs.

    Each epoch shuffles with the seeded generator and walks mini-batches of
    cfg.batch_size (last batch may be short).  Weight decay applies to W1
    and W2 only.  If epoch_losses is given, the full-dataset loss after each
    epoch is appended to it.
    """
    if not dataset:
        raise EmptyDataset("training dataset is empty")
    input_dim = dataset[0][0].dim
    X, y = _stack_pairs(dataset, input_dim)
    head = init_head(input_dim, cfg.hidden_dim, cfg.seed)
    shuffle_rng = np.random.default_rng((cfg.seed, 1))
    params = [head.W1, head.b1, head.W2, head.b2]
    decay_mask = [True, False, True, False]
    opt = _AdamW([p.shape for p in params], cfg.learning_rate, cfg.betas, cfg.eps, cfg.weight_decay)

    n = len(dataset)
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            Xb, yb = X[idx], y[idx]
            pre, hidden, probs = _forward_batch(head, Xb)
            loss = _loss_from_probs(probs, yb)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at step {opt.t + 1}")
            g = _grads_from_forward(Xb, yb, hidden, pre, probs, head.W2)
            opt.step(params, [g.W1, g.b1, g.W2, g.b2], decay_mask)
        if epoch_losses is not None:
            _, _, probs = _forward_batch(head, X)
            epoch_losses.append(_loss_from_probs(probs, y))
    return head


def save_head(head: MlpHead, path) -> None:
    """Write the little-endian model artifact (magic ITMC, version 1)."""
    header = _ARTIFACT_HEADER.pack(_ARTIFACT_MAGIC, _ARTIFACT_VERSION, head.input_dim, head.hidden_dim)
    with open(path, "wb") as fh:
        fh.write(header)
        for p in (head.W1, head.b1, head.W2, head.b2):
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_head(path) -> MlpHead:
    """Read a model artifact, rejecting bad magic/version and size mismatches."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _ARTIFACT_HEADER.size:
        raise FormatError("model artifact too short for header")
    magic, version, input_dim, hidden_dim = _ARTIFACT_HEADER.unpack_from(blob)
    if magic != _ARTIFACT_MAGIC:
        raise FormatError(f"bad model magic {magic!r}")
    if version != _ARTIFACT_VERSION:
        raise FormatError(f"unsupported model version {version}")
    if not (1 <= input_dim <= _MAX_DIM and 1 <= hidden_dim <= _MAX_DIM):
        raise FormatError(f"implausible dimensions {input_dim}x{hidden_dim}")
    counts = [hidden_dim * input_dim, hidden_dim, 2 * hidden_dim, 2]
    expected = _ARTIFACT_HEADER.size + 8 * sum(counts)
    if len(blob) != expected:
        raise FormatError(f"model payload is {len(blob)} bytes, expected {expected}")
    offset = _ARTIFACT_HEADER.size
    parts = []
    for count in counts:
        parts.append(np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(np.float64))
        offset += 8 * count
    return MlpHead(
        W1=parts[0].reshape(hidden_dim, input_dim),
        b1=parts[1],
        W2=parts[2].reshape(2, hidden_dim),
        b2=parts[3],
    )
