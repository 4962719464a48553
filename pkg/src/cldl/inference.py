"""Collaborative prediction: per-candidate-label objective minimization,
top-k ranking, the head-assignment posterior, and specialization reporting.

A trained model's score matrix (M heads x K classes) is enough to score
every candidate label: D(y) = sum_m lam_m * T_m(y) * C_m(y), where T and C
are re-evaluated with y as the hypothetical true class. The weight-decay
term is constant in y and never enters D. Ties break to the lowest label
index, then the lowest head index.
"""

from dataclasses import dataclass

import numpy as np

from .loss import clamp_probs, modulation_from_true_scores
from .network import forward


@dataclass
class PredictionRecord:
    label: int                 # argmin_y D(y), 1-based
    objective: np.ndarray      # (K,) D(y) per candidate label
    head_scores: np.ndarray    # (M,) P_m(label) at the chosen label
    winning_head: int          # argmax_m P_m(label), 1-based
    posterior: np.ndarray      # (M,) assignment posterior over heads


def candidate_objectives(scores, cfg):
    """D(y) for every candidate label; scores (M, K) or (B, M, K) -> (K,) or (B, K)."""
    p = np.asarray(scores, dtype=np.float64)
    single = p.ndim == 2
    if single:
        p = p[None]
    b, m, k = p.shape
    pc = clamp_probs(p, cfg.eps)
    c = -np.log(pc)
    # treat the class axis as a batch of candidate labels for the T machinery
    t = modulation_from_true_scores(
        np.transpose(pc, (0, 2, 1)).reshape(b * k, m), cfg.mode, cfg.eps
    ).reshape(b, k, m).transpose(0, 2, 1)
    lam = np.asarray(cfg.lam, dtype=np.float64)
    d = np.einsum("m,bmk->bk", lam, t * c)
    return d[0] if single else d


def infer_labels(scores, cfg):
    """Batched argmin of D(y); scores (B, M, K) -> labels (B,), 1-based."""
    d = candidate_objectives(scores, cfg)
    return np.argmin(d, axis=-1) + 1


def assignment_posterior(scores, y, eps=1e-12):
    """Distribution over heads for a sample labeled y, proportional to each
    head's leave-one-out modulation value T_m(y)."""
    p = clamp_probs(np.asarray(scores, dtype=np.float64)[:, int(y) - 1], eps)
    t = modulation_from_true_scores(p, "cldl", eps)
    return t / t.sum()


def infer(scores, cfg):
    """Predict one sample's label from its (M, K) score matrix."""
    d = candidate_objectives(scores, cfg)
    label = int(np.argmin(d)) + 1
    head_scores = np.asarray(scores, dtype=np.float64)[:, label - 1]
    winning = int(np.argmax(head_scores)) + 1
    return PredictionRecord(label, d, head_scores, winning, assignment_posterior(scores, label, cfg.eps))


def top_k(scores, cfg, k):
    """The k best labels ordered by ascending D(y), ties by label index."""
    d = candidate_objectives(scores, cfg)
    if not 1 <= k <= d.shape[-1]:
        raise ValueError(f"k must lie in [1, {d.shape[-1]}], got {k}")
    order = np.argsort(d, kind="stable")
    return [int(i) + 1 for i in order[:k]]


@dataclass
class SpecializationReport:
    winners: np.ndarray        # (N,) winning head per sample, 1-based
    per_head_accuracy: np.ndarray   # (M,) argmax accuracy of each head
    combined_accuracy: float        # accuracy of collaborative inference
    histogram: np.ndarray      # (K, M) winner counts per true class


def specialization_report(dataset, net, heads, cfg, batch_size=256):
    """Which head is most confident on each sample's true class, plus
    per-head and combined accuracies and a per-class winner histogram."""
    n = len(dataset.labels)
    m = len(heads)
    k = dataset.num_classes
    winners = np.empty(n, dtype=np.intp)
    head_correct = np.zeros(m)
    combined_correct = 0.0
    hist = np.zeros((k, m), dtype=np.intp)
    for lo in range(0, n, batch_size):
        xs = dataset.samples[lo:lo + batch_size]
        ys = dataset.labels[lo:lo + batch_size]
        _, scores = forward(net, heads, xs)
        p_true = scores[np.arange(len(ys)), :, ys - 1]
        win = np.argmax(p_true, axis=1)  # first max wins ties (lowest head)
        winners[lo:lo + len(ys)] = win + 1
        head_correct += (scores.argmax(axis=2) + 1 == ys[:, None]).sum(axis=0)
        combined_correct += np.sum(infer_labels(scores, cfg) == ys)
        np.add.at(hist, (ys - 1, win), 1)
    return SpecializationReport(
        winners, head_correct / n, combined_correct / n, hist
    )
