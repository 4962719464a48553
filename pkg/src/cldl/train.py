"""Minibatch momentum-SGD training of the collaborative objective.

The run is deterministic in (config, data): shuffling, initialization, and
the update order all derive from the run seed, and all math is float64 on a
single thread.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .backprop import all_weight_tensors, backward, forward_tape
from .loss import batch_loss_terms, weight_norm_sq
from .inference import infer_labels
from .tensor_ops import RngState


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite; carries the metrics gathered
    before the failing epoch."""

    def __init__(self, epoch, metrics):
        super().__init__(f"non-finite loss in epoch {epoch}; last good epoch {epoch - 1}")
        self.epoch = epoch
        self.metrics = metrics


@dataclass(frozen=True)
class TrainConfig:
    rate: float
    epochs: int
    batch_size: int = 64
    momentum: float = 0.9
    schedule: str = "constant"        # or "step"
    drop_factor: float = 0.1
    drop_epochs: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.schedule not in ("constant", "step"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class EpochMetrics:
    epoch: int
    total_loss: float
    per_head_loss: np.ndarray       # (M,) mean ell_m over the epoch
    acc_train: np.ndarray           # (M,) per-head argmax accuracy on train
    acc_val: np.ndarray             # (M,) per-head accuracy on the val split
    acc_val_combined: float         # collaborative-inference accuracy on val
    mean_t: np.ndarray              # (M,) mean modulation per head
    seconds: float


def sgd_step(weights, grads, velocity, rate, momentum):
    """In-place momentum update: v <- mu*v - rate*g; w <- w + v."""
    for w, g, v in zip(weights, grads, velocity):
        v *= momentum
        v -= rate * g
        w += v


def _epoch_rate(cfg, epoch):
    if cfg.schedule == "constant":
        return cfg.rate
    drops = sum(1 for e in cfg.drop_epochs if epoch >= e)
    return cfg.rate * cfg.drop_factor ** drops


def evaluate(net, heads, dataset, loss_cfg, batch_size=256):
    """(per-head accuracies, combined accuracy) on a dataset."""
    m = len(heads)
    head_correct = np.zeros(m)
    combined = 0.0
    n = len(dataset)
    for lo in range(0, n, batch_size):
        xs = dataset.samples[lo:lo + batch_size]
        ys = dataset.labels[lo:lo + batch_size]
        cache = forward_tape(net, heads, xs)
        head_correct += (cache.scores.argmax(axis=2) + 1 == ys[:, None]).sum(axis=0)
        combined += np.sum(infer_labels(cache.scores, loss_cfg) == ys)
    return head_correct / n, combined / n


def train(net, heads, train_ds, cfg, loss_cfg, val_ds=None, on_epoch=None):
    """Run the training loop; weights are updated in place.

    Returns the list of EpochMetrics. on_epoch, if given, is called with
    each EpochMetrics as it is produced (the CLI streams these to CSV).
    """
    weights = all_weight_tensors(net, heads)
    velocity = [np.zeros_like(w) for w in weights]
    rng = RngState(cfg.seed).generator()
    m = len(heads)
    n = len(train_ds)
    metrics = []
    for epoch in range(1, cfg.epochs + 1):
        start = time.monotonic()
        rate = _epoch_rate(cfg, epoch)
        order = rng.permutation(n)
        loss_sum = 0.0
        ell_sum = np.zeros(m)
        t_sum = np.zeros(m)
        train_correct = np.zeros(m)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            xs = train_ds.samples[idx]
            ys = train_ds.labels[idx]
            cache = forward_tape(net, heads, xs)
            t, c = batch_loss_terms(cache.scores, ys, loss_cfg)
            ell = t * c
            batch_loss = float(np.asarray(loss_cfg.lam) @ ell.mean(axis=0))
            if loss_cfg.alpha:
                batch_loss += loss_cfg.alpha * weight_norm_sq(weights)
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(epoch, metrics)
            b = len(idx)
            loss_sum += batch_loss * b
            ell_sum += ell.sum(axis=0)
            t_sum += t.sum(axis=0)
            train_correct += (cache.scores.argmax(axis=2) + 1 == ys[:, None]).sum(axis=0)
            grads = backward(net, heads, cache, ys, loss_cfg, t_bar=t)
            sgd_step(weights, list(grads.flat()), velocity, rate, cfg.momentum)
        if val_ds is not None and len(val_ds):
            acc_val, acc_combined = evaluate(net, heads, val_ds, loss_cfg)
        else:
            acc_val, acc_combined = np.full(m, np.nan), float("nan")
        em = EpochMetrics(
            epoch=epoch,
            total_loss=loss_sum / n,
            per_head_loss=ell_sum / n,
            acc_train=train_correct / n,
            acc_val=acc_val,
            acc_val_combined=acc_combined,
            mean_t=t_sum / n,
            seconds=time.monotonic() - start,
        )
        metrics.append(em)
        if on_epoch:
            on_epoch(em)
    return metrics
