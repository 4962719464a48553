import math

import numpy as np
import pytest

from cldl.inference import (
    assignment_posterior,
    candidate_objectives,
    infer,
    infer_labels,
    specialization_report,
    top_k,
)
from cldl.loss import LossConfig


def random_scores(rng, m, k):
    z = rng.normal(size=(m, k)) * 2
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def brute_force_objective(scores, cfg):
    """Independent evaluation of D(y) for each candidate label."""
    m, k = scores.shape
    eps = cfg.eps
    d = np.zeros(k)
    for y in range(1, k + 1):
        total = 0.0
        for i in range(m):
            p = np.clip(scores[:, y - 1], eps, 1 - eps)
            c = -math.log(p[i])
            if cfg.mode in ("dsn-star", "single") or m == 1:
                t = 1.0
            elif cfg.mode == "cldl":
                t = math.prod((1 - p[j]) ** (1 / (m - 1)) for j in range(m) if j != i)
            else:  # cldl-minus
                t = math.prod((1 - p[j]) ** (1 / max(i, 1)) for j in range(i)) if i else 1.0
            total += cfg.lam[i] * t * c
        d[y - 1] = total
    return d


class TestInfer:
    def test_single_head_is_argmax(self):
        rng = np.random.default_rng(0)
        cfg = LossConfig(mode="single", lam=(1.0,))
        for _ in range(1000):
            scores = random_scores(rng, 1, int(rng.integers(2, 8)))
            rec = infer(scores, cfg)
            assert rec.label == int(np.argmax(scores[0])) + 1

    def test_unanimous_heads(self):
        scores = np.array([[0.95, 0.03, 0.02], [0.92, 0.05, 0.03], [0.97, 0.02, 0.01]])
        cfg = LossConfig(mode="cldl", lam=(0.3, 0.3, 1.0))
        assert infer(scores, cfg).label == 1

    def test_worked_two_head_example(self):
        scores = np.array([[0.6, 0.3, 0.1], [0.2, 0.7, 0.1]])
        cfg = LossConfig(mode="cldl", lam=(1.0, 1.0))
        d = brute_force_objective(scores, cfg)
        rec = infer(scores, cfg)
        assert np.allclose(rec.objective, d, atol=1e-12)
        assert rec.label == int(np.argmin(d)) + 1

    def test_brute_force_all_modes(self):
        rng = np.random.default_rng(1)
        for mode in ("cldl", "cldl-minus", "dsn-star"):
            for _ in range(50):
                m, k = 3, 4
                scores = random_scores(rng, m, k)
                cfg = LossConfig(mode=mode, lam=(0.5, 0.8, 1.0))
                assert np.allclose(
                    candidate_objectives(scores, cfg), brute_force_objective(scores, cfg),
                    atol=1e-12,
                )

    def test_decay_never_enters(self):
        rng = np.random.default_rng(2)
        scores = random_scores(rng, 3, 4)
        a = LossConfig(mode="cldl", lam=(0.3, 0.3, 1.0), alpha=0.0)
        b = LossConfig(mode="cldl", lam=(0.3, 0.3, 1.0), alpha=123.0)
        assert np.array_equal(candidate_objectives(scores, a), candidate_objectives(scores, b))

    def test_batched_matches_single(self):
        rng = np.random.default_rng(3)
        batch = np.stack([random_scores(rng, 3, 5) for _ in range(10)])
        cfg = LossConfig(mode="cldl", lam=(0.3, 0.3, 1.0))
        labels = infer_labels(batch, cfg)
        for i in range(10):
            assert labels[i] == infer(batch[i], cfg).label


class TestTopK:
    def test_full_permutation(self):
        rng = np.random.default_rng(4)
        scores = random_scores(rng, 3, 6)
        cfg = LossConfig(mode="cldl", lam=(0.3, 0.3, 1.0))
        assert sorted(top_k(scores, cfg, 6)) == list(range(1, 7))

    def test_k1_matches_infer(self):
        rng = np.random.default_rng(5)
        cfg = LossConfig(mode="cldl", lam=(0.3, 0.3, 1.0))
        for _ in range(100):
            scores = random_scores(rng, 3, 5)
            assert top_k(scores, cfg, 1)[0] == infer(scores, cfg).label

    def test_ordering_matches_brute_force(self):
        rng = np.random.default_rng(6)
        scores = random_scores(rng, 2, 3)
        cfg = LossConfig(mode="cldl", lam=(1.0, 1.0))
        d = brute_force_objective(scores, cfg)
        assert top_k(scores, cfg, 2) == list(np.argsort(d, kind="stable")[:2] + 1)

    def test_k_out_of_range(self):
        scores = np.full((2, 3), 1 / 3)
        cfg = LossConfig(mode="cldl", lam=(1.0, 1.0))
        with pytest.raises(ValueError):
            top_k(scores, cfg, 4)


class TestAssignmentPosterior:
    def test_worked_example(self):
        # P(y) = (0.9, 0.5): T = (0.5, 0.1) -> (5/6, 1/6)
        scores = np.array([[0.9, 0.1], [0.5, 0.5]])
        post = assignment_posterior(scores, 1)
        assert np.allclose(post, [5 / 6, 1 / 6], atol=1e-12)

    def test_equal_scores_uniform(self):
        scores = np.full((4, 3), 1 / 3)
        assert np.allclose(assignment_posterior(scores, 2), 0.25)

    def test_confident_companion_suppresses_others(self):
        scores = np.array([[1.0, 0.0], [0.5, 0.5], [0.6, 0.4]])
        post = assignment_posterior(scores, 1)
        assert post[1] < 1e-5 and post[2] < 1e-5
        assert post[0] > 0.999

    def test_ordering_matches_modulation(self):
        rng = np.random.default_rng(7)
        from cldl.loss import modulation_from_true_scores

        for _ in range(100):
            scores = random_scores(rng, 4, 3)
            y = int(rng.integers(1, 4))
            post = assignment_posterior(scores, y)
            t = modulation_from_true_scores(np.clip(scores[:, y - 1], 1e-12, 1 - 1e-12), "cldl")
            assert abs(post.sum() - 1.0) < 1e-12
            assert np.array_equal(np.argsort(post), np.argsort(t))


class TestSpecializationReport:
    def test_zero_weight_model_ties_to_head_one(self):
        from cldl.data import LabeledDataset
        from cldl.network import (
            PlacementConfig, build_heads, build_network, dense, flatten,
            mlp_head_specs, relu_layer,
        )
        from cldl.tensor_ops import RngState

        specs = [flatten(), dense(6), relu_layer(), dense(4), relu_layer(), dense(3)]
        net = build_network(specs, (2,), RngState(0))
        heads = build_heads(net, PlacementConfig(3, 0.8),
                            lambda s: mlp_head_specs(3, 4), RngState(1))
        for w in net.weights:
            w[...] = 0.0
        for h in heads:
            for w in h.net.weights:
                w[...] = 0.0
        ds = LabeledDataset(np.random.default_rng(2).normal(size=(20, 2)),
                            np.random.default_rng(3).integers(1, 4, size=20).astype(np.intp), 3)
        cfg = LossConfig(mode="cldl", lam=(0.3, 0.3, 1.0))
        rep = specialization_report(ds, net, heads, cfg)
        assert np.all(rep.winners == 1)
        assert rep.histogram[:, 1:].sum() == 0

    def test_single_head_all_won_by_head_one(self):
        from cldl.data import LabeledDataset
        from cldl.network import PlacementConfig, build_heads, build_network, dense, flatten, mlp_head_specs
        from cldl.tensor_ops import RngState

        net = build_network([flatten(), dense(3)], (2,), RngState(4))
        heads = build_heads(net, PlacementConfig(1), lambda s: mlp_head_specs(3, 4), RngState(5))
        ds = LabeledDataset(np.random.default_rng(6).normal(size=(15, 2)),
                            np.random.default_rng(7).integers(1, 4, size=15).astype(np.intp), 3)
        rep = specialization_report(ds, net, heads, LossConfig(mode="single", lam=(1.0,)))
        assert np.all(rep.winners == 1)
