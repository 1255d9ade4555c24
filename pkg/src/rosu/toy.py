"""Blobs classification toy: data splits, pretraining and the retrain-from-scratch reference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objectives import Mlp, MlpObjective, make_blobs

CLASSWISE = "classwise"
RANDOM = "random"
RANDOM_FORGET_FRACTION = 0.10


@dataclass(frozen=True)
class BlobsTask:
    net: Mlp
    train: MlpObjective
    test: MlpObjective
    forget_idx: np.ndarray
    retain_idx: np.ndarray

    @property
    def forget(self) -> MlpObjective:
        return self.train.subset(self.forget_idx)

    @property
    def retain(self) -> MlpObjective:
        return self.train.subset(self.retain_idx)


def make_blobs_task(protocol: str, seed: int, hidden: int = 32, forget_class: int = 0) -> BlobsTask:
    """Train/test blobs plus a forget split.

    ``classwise`` forgets every training point of ``forget_class``;
    ``random`` forgets a seeded 10% sample.
    """
    data = make_blobs(seed)
    test = make_blobs(seed + 1, n_per_class=100)
    net = Mlp((2, hidden, 4))
    train = MlpObjective(net, data.inputs, data.labels)
    n = train.n
    if protocol == CLASSWISE:
        forget_mask = data.labels == forget_class
    elif protocol == RANDOM:
        rng = np.random.default_rng([seed, 17])
        chosen = rng.choice(n, size=int(round(RANDOM_FORGET_FRACTION * n)), replace=False)
        forget_mask = np.zeros(n, dtype=bool)
        forget_mask[chosen] = True
    else:
        raise ValueError(f"unknown forgetting protocol {protocol!r}")
    return BlobsTask(net, train, MlpObjective(net, test.inputs, test.labels),
                     np.flatnonzero(forget_mask), np.flatnonzero(~forget_mask))


def train_gd(obj: MlpObjective, seed: int, steps: int = 2000, lr: float = 0.5) -> np.ndarray:
    """Full-batch gradient descent from a seeded initialization."""
    w = obj.net.init_params(np.random.default_rng([seed, 3]))
    for _ in range(steps):
        w = w - lr * obj.grad(w)
    return w


def accuracies(task: BlobsTask, w) -> dict[str, float]:
    return {
        "retain_acc": task.retain.accuracy(w),
        "forget_acc": task.forget.accuracy(w),
        "test_acc": task.test.accuracy(w),
    }
