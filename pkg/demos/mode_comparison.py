"""Compare the four training modes on the tiered synthetic dataset.

Trains the same small body under each collaboration variant:

  cldl        full mutual modulation between heads
  cldl-minus  cascade modulation (earlier heads only, no feedback)
  dsn-star    plain deep supervision, no modulation
  single      one head at the top, ordinary cross-entropy

and prints combined-inference validation accuracy per mode and seed.
Equivalent to `cldl compare --config configs/synthetic-ablation.json`
but inline, so each step is visible.

Run:  python demos/mode_comparison.py
"""

import numpy as np

from cldl import (
    LossConfig,
    PlacementConfig,
    RngState,
    SynthSpec,
    TrainConfig,
    build_heads,
    build_network,
    dense,
    evaluate,
    flatten,
    generate_synthetic,
    mlp_head_specs,
    relu_layer,
    train,
)

TIERS = ("linear", "linear", "radial", "xor-like")
MODES = ("cldl", "cldl-minus", "dsn-star", "single")


def build(seed, mode, k):
    specs = [flatten(), dense(24), relu_layer(), dense(16), relu_layer(), dense(k)]
    net = build_network(specs, (2,), RngState(seed))
    m = 1 if mode == "single" else 3
    heads = build_heads(net, PlacementConfig(heads=m, gamma=0.8),
                        lambda shape: mlp_head_specs(k, 12), RngState(seed + 1))
    lam = (1.0,) if mode == "single" else (1.0, 1.0, 1.0)
    return net, heads, LossConfig(mode=mode, lam=lam, alpha=1e-4)


def main():
    k = len(TIERS)
    results = {mode: [] for mode in MODES}
    for seed in (1, 2, 3):
        train_ds = generate_synthetic(SynthSpec(TIERS, per_class=60, sigma=0.25, seed=seed))
        val_ds = generate_synthetic(
            SynthSpec(TIERS, per_class=30, sigma=0.25, seed=seed + 1), split="val")
        for mode in MODES:
            net, heads, loss_cfg = build(seed, mode, k)
            cfg = TrainConfig(rate=0.03, epochs=40, batch_size=16, momentum=0.9, seed=seed)
            train(net, heads, train_ds, cfg, loss_cfg)
            _, combined = evaluate(net, heads, val_ds, loss_cfg)
            results[mode].append(float(combined))
            print(f"seed {seed} {mode:>10}: combined val accuracy {combined:.3f}")
    print("\nmean combined accuracy over seeds:")
    for mode in MODES:
        print(f"  {mode:>10}: {np.mean(results[mode]):.3f}")
    print("\nexpected trend: cldl >= cldl-minus >= dsn-star, with the single")
    print("head close behind on this small problem; collaboration matters")
    print("more as sample complexity spreads across tiers.")


if __name__ == "__main__":
    main()
