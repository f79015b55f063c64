"""Detection metrics and a linear softmax probe.

The probe is a multinomial logistic regression on raw pixels trained by
full-batch gradient descent from zero weights. It stands in for a DNN victim
when measuring how much a poisoned training set hurts clean-test accuracy.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .imagecore import LabeledDataset


def compute_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores share their average rank."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined unless both labels are present")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class DetectionReport:
    tp: int
    tn: int
    fp: int
    fn: int
    acc: float  # percent
    auc: float

    @classmethod
    def from_scores(cls, scores, labels, theta: float = 0.0) -> "DetectionReport":
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels).astype(np.int64)
        pred = (scores >= theta).astype(np.int64)
        tp = int(np.sum((pred == 1) & (labels == 1)))
        tn = int(np.sum((pred == 0) & (labels == 0)))
        fp = int(np.sum((pred == 1) & (labels == 0)))
        fn = int(np.sum((pred == 0) & (labels == 1)))
        acc = 100.0 * (tp + tn) / max(tp + tn + fp + fn, 1)
        return cls(tp, tn, fp, fn, acc, compute_auc(scores, labels))

    @property
    def error_rate(self) -> float:
        return 100.0 * (self.fp + self.fn) / max(self.tp + self.tn + self.fp + self.fn, 1)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def scores_csv(scores, labels) -> str:
    lines = ["score,label"]
    lines += [f"{float(s)!r},{int(l)}" for s, l in zip(scores, labels)]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- #
# linear probe


@dataclass
class ProbeModel:
    weights: np.ndarray  # (classes, C*H*W)
    biases: np.ndarray  # (classes,)
    image_shape: tuple
    epochs: int = 0
    final_loss: float = float("nan")
    losses: list = field(default_factory=list, repr=False)

    def logits(self, images: np.ndarray) -> np.ndarray:
        x = images.reshape(images.shape[0], -1).astype(np.float64)
        return x @ self.weights.T + self.biases

    def predict(self, images: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(images), axis=1)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(p: np.ndarray, onehot: np.ndarray) -> float:
    return float(-np.mean(np.log(np.maximum((p * onehot).sum(axis=1), 1e-300))))


def train_probe(train: LabeledDataset, epochs: int = 100, lr: float = 0.5, seed=None) -> ProbeModel:
    """Full-batch gradient descent on mean cross-entropy, starting from zeros.

    ``seed`` is accepted for interface symmetry; with zero initialisation and
    full batches the result is deterministic without it.
    """
    c = train.class_count
    if c < 2:
        raise ValueError("the probe needs at least two classes")
    n = len(train)
    x = train.images.reshape(n, -1).astype(np.float64)
    onehot = np.eye(c)[train.labels]
    W = np.zeros((c, x.shape[1]))
    b = np.zeros(c)
    losses = []
    for _ in range(epochs):
        p = _softmax(x @ W.T + b)
        losses.append(_cross_entropy(p, onehot))
        g = (p - onehot) / n
        W -= lr * (g.T @ x)
        b -= lr * g.sum(axis=0)
    final = _cross_entropy(_softmax(x @ W.T + b), onehot)
    losses.append(final)
    return ProbeModel(W, b, train.image_shape, epochs, final, losses)


def eval_probe(model: ProbeModel, test: LabeledDataset) -> float:
    if tuple(test.image_shape) != tuple(model.image_shape):
        raise ValueError(f"probe expects images of shape {model.image_shape}, got {test.image_shape}")
    if test.labels.size and test.labels.max() >= model.weights.shape[0]:
        raise ValueError("test labels exceed the probe's class count")
    return float(np.mean(model.predict(test.images) == test.labels))
