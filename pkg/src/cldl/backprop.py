"""Analytic gradients with the modulation term frozen, plus a finite-difference
verifier.

During backpropagation every T_m is treated as a constant of the current
scores (its derivative w.r.t. any weight is taken as zero). The gradients
therefore equal the true gradient of the "frozen" objective

    sum_m lam_m * Tbar_m * C_m(weights) + alpha * ||W||^2

at the linearization point, which is what finite_diff_check verifies. The
raw objective (T re-evaluated under perturbation) deliberately does NOT
match; raw_objective_gap documents that difference.
"""

import numpy as np

from .loss import batch_loss_terms, clamp_probs, weight_norm_sq
from .network import run_layers, run_layers_backward, _as_batch


class StaleCacheError(RuntimeError):
    """Raised when a tape does not match the forward pass it claims to record."""


class GradientCheckError(RuntimeError):
    """Raised when a perturbed objective evaluates to a non-finite value."""


class TapeCache:
    """All activations of one forward pass, body and heads, for one batch."""

    def __init__(self, body_acts, body_caches, head_acts, head_caches, scores):
        self.body_acts = body_acts
        self.body_caches = body_caches
        self.head_acts = head_acts      # list per head
        self.head_caches = head_caches  # list per head
        self.scores = scores            # (B, M, K)

    @property
    def batch_size(self):
        return self.scores.shape[0]


class GradientSet:
    """Gradients congruent with the body and head weight tensors."""

    def __init__(self, body, heads):
        self.body = body    # list of ndarrays
        self.heads = heads  # list of lists of ndarrays

    def flat(self):
        for g in self.body:
            yield g
        for hs in self.heads:
            yield from hs


def forward_tape(net, heads, x):
    """Forward pass that records every activation needed for backward."""
    xb, _ = _as_batch(x, net.input_shape)
    body_acts, body_caches = run_layers(net, xb)
    head_acts, head_caches, rows = [], [], []
    for h in heads:
        acts, caches = run_layers(h.net, body_acts[net.block_end(h.attach) + 1])
        head_acts.append(acts)
        head_caches.append(caches)
        rows.append(acts[-1])
    scores = np.stack(rows, axis=1)
    return TapeCache(body_acts, body_caches, head_acts, head_caches, scores)


def all_weight_tensors(net, heads):
    ws = list(net.weights)
    for h in heads:
        ws.extend(h.net.weights)
    return ws


def backward(net, heads, cache, y, cfg, t_bar=None):
    """Gradient of the frozen objective for one minibatch.

    y holds 1-based labels, one per sample. t_bar optionally overrides the
    per-sample modulation values (shape (B, M)); by default they are frozen
    at the tape's scores. The data term is averaged over the batch; weight
    decay 2*alpha*W is added once.
    """
    y = np.atleast_1d(np.asarray(y, dtype=np.intp))
    b, m, k = cache.scores.shape
    if y.shape[0] != b or len(cache.body_acts) != len(net.specs) + 1 or len(heads) != m:
        raise StaleCacheError(
            f"tape does not match this call: batch {b}, labels {y.shape[0]}, heads {len(heads)}/{m}"
        )
    if t_bar is None:
        t_bar, _ = batch_loss_terms(cache.scores, y, cfg)
    t_bar = np.asarray(t_bar, dtype=np.float64)
    lam = np.asarray(cfg.lam, dtype=np.float64)

    rows = np.arange(b)
    tap_deltas = {}
    head_grads = []
    for j, h in enumerate(heads):
        p = cache.scores[:, j, :]
        p_y = p[rows, y - 1]
        q = clamp_probs(p_y, cfg.eps)
        interior = (p_y > cfg.eps) & (p_y < 1.0 - cfg.eps)
        g_p = np.zeros((b, k))
        g_p[rows, y - 1] = -lam[j] * t_bar[:, j] * interior / (b * q)
        grads, dx = run_layers_backward(h.net, cache.head_caches[j], g_p)
        head_grads.append(grads)
        idx = net.block_end(h.attach) + 1
        tap_deltas[idx] = tap_deltas.get(idx, 0) + dx

    top = np.zeros_like(cache.body_acts[-1])
    body_grads, _ = run_layers_backward(net, cache.body_caches, top, tap_deltas)

    if cfg.alpha:
        body_grads = [g + 2.0 * cfg.alpha * w for g, w in zip(body_grads, net.weights)]
        head_grads = [
            [g + 2.0 * cfg.alpha * w for g, w in zip(gs, h.net.weights)]
            for gs, h in zip(head_grads, heads)
        ]
    return GradientSet(body_grads, head_grads)


def frozen_objective(net, heads, x, y, cfg, t_bar):
    """Objective with externally fixed per-sample modulation values t_bar."""
    y = np.atleast_1d(np.asarray(y, dtype=np.intp))
    cache = forward_tape(net, heads, x)
    _, c = batch_loss_terms(cache.scores, y, cfg)
    lam = np.asarray(cfg.lam, dtype=np.float64)
    data = float(np.mean((np.asarray(t_bar) * c) @ lam))
    return data + cfg.alpha * weight_norm_sq(all_weight_tensors(net, heads))


def live_objective(net, heads, x, y, cfg):
    """Objective with T re-evaluated from the current weights (not what
    backward() differentiates; kept for the documentation diagnostic)."""
    y = np.atleast_1d(np.asarray(y, dtype=np.intp))
    cache = forward_tape(net, heads, x)
    t, c = batch_loss_terms(cache.scores, y, cfg)
    lam = np.asarray(cfg.lam, dtype=np.float64)
    data = float(np.mean((t * c) @ lam))
    return data + cfg.alpha * weight_norm_sq(all_weight_tensors(net, heads))


def _rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def finite_diff_check(net, heads, x, y, cfg, delta=1e-5, trials=100, rng=None, frozen=True):
    """Max relative error between analytic gradients and central differences.

    Random weight coordinates are perturbed by +-delta and the frozen
    objective (T fixed at the unperturbed point) is differenced. With
    frozen=False the live objective is used instead, which is expected to
    disagree; that variant exists only as a diagnostic.
    """
    rng = rng or np.random.default_rng(0)
    y = np.atleast_1d(np.asarray(y, dtype=np.intp))
    cache = forward_tape(net, heads, x)
    t_bar, _ = batch_loss_terms(cache.scores, y, cfg)
    grads = backward(net, heads, cache, y, cfg)

    if frozen:
        objective = lambda: frozen_objective(net, heads, x, y, cfg, t_bar)
    else:
        objective = lambda: live_objective(net, heads, x, y, cfg)

    tensors = all_weight_tensors(net, heads)
    gradients = list(grads.flat())
    worst = 0.0
    for _ in range(trials):
        ti = int(rng.integers(len(tensors)))
        w = tensors[ti]
        ci = int(rng.integers(w.size))
        old = w.flat[ci]
        w.flat[ci] = old + delta
        f_plus = objective()
        w.flat[ci] = old - delta
        f_minus = objective()
        w.flat[ci] = old
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise GradientCheckError(
                f"non-finite objective while perturbing tensor {ti}, coordinate {ci}"
            )
        numeric = (f_plus - f_minus) / (2.0 * delta)
        worst = max(worst, _rel_err(gradients[ti].flat[ci], numeric))
    return worst


def raw_objective_gap(net, heads, x, y, cfg, delta=1e-5, trials=50, rng=None):
    """Diagnostic: finite differences of the raw objective (T not frozen)
    versus the detached-T analytic gradient. A large value here is the
    expected behavior, not a failure."""
    return finite_diff_check(net, heads, x, y, cfg, delta, trials, rng, frozen=False)
