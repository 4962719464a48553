"""Train the collaborative engine on real images end to end.

Uses scikit-learn's bundled 8x8 digits so the demo runs offline; the same
code drives full MNIST through `cldl train --config configs/mnist-mlp.json`
once the IDX files are placed under data/mnist/ (see README).

Run:  python demos/digits_training.py
"""

import numpy as np
from sklearn.datasets import load_digits

from cldl import (
    LabeledDataset,
    LossConfig,
    PlacementConfig,
    RngState,
    TrainConfig,
    build_heads,
    build_network,
    dense,
    evaluate,
    flatten,
    mlp_head_specs,
    preprocess_mean_subtract,
    relu_layer,
    train,
)


def main():
    d = load_digits()
    x = d.data / 16.0
    y = d.target.astype(np.intp) + 1  # labels are 1-based internally
    train_ds = LabeledDataset(x[:1500], y[:1500], 10)
    val_ds = LabeledDataset(x[1500:], y[1500:], 10, "val")
    train_ds, val_ds, _ = preprocess_mean_subtract(train_ds, val_ds)

    specs = [flatten(), dense(64), relu_layer(), dense(32), relu_layer(), dense(10)]
    net = build_network(specs, (64,), RngState(0))
    heads = build_heads(net, PlacementConfig(heads=3, gamma=0.8),
                        lambda shape: mlp_head_specs(10, 24), RngState(1))
    print(f"3 heads attached at weight layers {[h.attach for h in heads]}")

    loss_cfg = LossConfig(mode="cldl", lam=(0.3, 0.3, 1.0), alpha=1e-4)
    metrics = train(net, heads, train_ds,
                    TrainConfig(rate=0.1, epochs=10, batch_size=64, momentum=0.9, seed=2),
                    loss_cfg, val_ds=val_ds)
    for em in metrics:
        accs = " ".join(f"{a:.3f}" for a in em.acc_val)
        print(f"epoch {em.epoch:2d}: loss {em.total_loss:.4f}  "
              f"val per-head [{accs}]  combined {em.acc_val_combined:.3f}")

    acc_heads, combined = evaluate(net, heads, val_ds, loss_cfg)
    print(f"\nfinal combined validation accuracy: {combined:.4f}")
    print("note how the combined (collaborative) decision tracks or beats the")
    print("best individual head from early epochs on.")


if __name__ == "__main__":
    main()
