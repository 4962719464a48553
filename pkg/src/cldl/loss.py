"""Collaborative loss: modulation, confidence, per-head and total objectives.

Each head m carries a loss ell_m = T_m * C_m. C_m is the cross-entropy
confidence term -log P_m(y). T_m is a modulation weight built from the
companion heads' scores on the true class:

  cldl        T_m = prod_{t != m} (1 - P_t(y)) ** (1 / (M - 1))
  cldl-minus  T_m = prod_{t < m}  (1 - P_t(y)) ** (1 / (m - 1)),  T_1 = 1
  dsn-star    T_m = 1  (plain deep supervision)
  single      T_m = 1, with a single head only

An empty product is 1, which also covers M = 1 in cldl mode. All
probabilities are clamped to [eps, 1 - eps] before logs and (1 - p) terms.
"""

from dataclasses import dataclass

import numpy as np

MODES = ("cldl", "cldl-minus", "dsn-star", "single")


@dataclass(frozen=True)
class LossConfig:
    mode: str = "cldl"
    lam: tuple = (0.3, 0.3, 1.0)
    alpha: float = 0.0
    eps: float = 1e-12

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if any(l <= 0 for l in self.lam):
            raise ValueError(f"head weights must be positive, got {self.lam}")
        if self.mode == "single" and len(self.lam) != 1:
            raise ValueError("single mode requires exactly one head")
        if self.alpha < 0:
            raise ValueError("weight-decay coefficient must be nonnegative")


@dataclass
class LossBreakdown:
    t: np.ndarray           # (M,) modulation per head
    c: np.ndarray           # (M,) confidence per head
    per_head: np.ndarray    # (M,) ell_m = t_m * c_m
    data_term: float        # sum_m lam_m * ell_m
    decay_term: float       # alpha * sum of squared weights
    total: float


def clamp_probs(p, eps=1e-12):
    """Clamp probabilities into [eps, 1 - eps]."""
    return np.clip(p, eps, 1.0 - eps)


def true_class_scores(scores, y):
    """P_m(y) for every head: scores (M, K) or (B, M, K), y label or (B,)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 2:
        return scores[:, int(y) - 1]
    y = np.asarray(y, dtype=np.intp)
    return scores[np.arange(scores.shape[0]), :, y - 1]


def modulation_from_true_scores(p_true, mode, eps=1e-12):
    """T vector(s) from per-head true-class scores p_true (M,) or (B, M)."""
    p = clamp_probs(np.asarray(p_true, dtype=np.float64), eps)
    single = p.ndim == 1
    if single:
        p = p[None]
    b, m = p.shape
    if mode in ("dsn-star", "single") or m == 1:
        t = np.ones((b, m))
    elif mode == "cldl":
        logs = np.log1p(-p)
        t = np.exp((logs.sum(axis=1, keepdims=True) - logs) / (m - 1))
    elif mode == "cldl-minus":
        logs = np.log1p(-p)
        csum = np.concatenate([np.zeros((b, 1)), np.cumsum(logs, axis=1)[:, :-1]], axis=1)
        denom = np.maximum(np.arange(m), 1)
        t = np.exp(csum / denom)
        t[:, 0] = 1.0
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return t[0] if single else t


def compute_T(m, scores, y, mode, eps=1e-12):
    """Modulation term of head m (1-based) for one sample."""
    return float(modulation_from_true_scores(true_class_scores(scores, y), mode, eps)[m - 1])


def compute_C(m, scores, y, eps=1e-12):
    """Confidence term of head m: -log of its clamped true-class score."""
    return float(-np.log(clamp_probs(true_class_scores(scores, y)[m - 1], eps)))


def per_head_loss(m, scores, y, mode, eps=1e-12):
    """(T, C, ell) for head m on one sample; ell = T * C exactly."""
    t = compute_T(m, scores, y, mode, eps)
    c = compute_C(m, scores, y, eps)
    return t, c, t * c


def weight_norm_sq(weight_tensors):
    """Squared L2 norm summed over an iterable of weight arrays."""
    return float(sum(np.sum(w * w) for w in weight_tensors))


def total_objective(per_head_losses, lam, alpha, weight_tensors):
    """Weighted data term plus weight decay: sum_m lam_m ell_m + alpha * ||W||^2."""
    per_head_losses = np.asarray(per_head_losses, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != per_head_losses.shape:
        raise ValueError(f"lambda length {lam.shape} does not match heads {per_head_losses.shape}")
    return float(lam @ per_head_losses + alpha * weight_norm_sq(weight_tensors))


def loss_breakdown(scores, y, cfg, weight_tensors=()):
    """Full per-head breakdown and total for one sample's score matrix."""
    p_true = true_class_scores(scores, y)
    t = modulation_from_true_scores(p_true, cfg.mode, cfg.eps)
    c = -np.log(clamp_probs(p_true, cfg.eps))
    ell = t * c
    lam = np.asarray(cfg.lam, dtype=np.float64)
    data = float(lam @ ell)
    decay = cfg.alpha * weight_norm_sq(weight_tensors)
    return LossBreakdown(t, c, ell, data, decay, data + decay)


def batch_loss_terms(scores, y, cfg):
    """(T, C) arrays of shape (B, M) for a batched score matrix."""
    p_true = true_class_scores(scores, y)
    t = modulation_from_true_scores(p_true, cfg.mode, cfg.eps)
    c = -np.log(clamp_probs(p_true, cfg.eps))
    return t, c
