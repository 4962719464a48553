"""Command-line surface.

Subcommands: train, eval, gradcheck, compare, inspect, synth. Every result
artifact is flat CSV; files are written atomically (temp then rename).

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical divergence.

With --threads 1 (the default, bit-exact mode) reruns of the same config
produce byte-identical metrics.csv and checkpoints; to keep that guarantee
the per-epoch seconds column is recorded as 0.0 in this mode (the same
convention as SOURCE_DATE_EPOCH in reproducible builds). Pass --threads
with a value above 1 to record wall-clock timings instead; no extra worker
threads are spawned beyond numpy's own BLAS pool either way.
"""

import argparse
import csv
import io
import os
import sys

import numpy as np

from . import config as cfgmod
from .backprop import finite_diff_check, forward_tape
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError
from .data import (
    DataFormatError,
    SynthSpec,
    generate_synthetic,
    load_idx,
    preprocess_mean_subtract,
    save_idx,
)
from .inference import infer_labels, specialization_report
from .loss import LossConfig
from .network import BuildError, PlacementError, build_heads, build_network
from .tensor_ops import RngState
from .train import TrainingDiverged, evaluate, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _atomic_write(path, data):
    tmp = f"{path}.tmp"
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode, newline="" if mode == "w" else None) as f:
        f.write(data)
    os.replace(tmp, path)


def _load_datasets(cfg):
    data = cfg["data"]
    seed = cfg["seed"]
    if data["kind"] == "idx":
        train_ds = load_idx(data["train_images"], data["train_labels"], split="train")
        val_ds = None
        if "val_images" in data:
            val_ds = load_idx(
                data["val_images"], data["val_labels"],
                num_classes=train_ds.num_classes, split="val",
            )
        if data.get("mean_subtract", False):
            if val_ds is None:
                train_ds, _ = preprocess_mean_subtract(train_ds)
            else:
                train_ds, val_ds, _ = preprocess_mean_subtract(train_ds, val_ds)
        return train_ds, val_ds
    tiers = tuple(data["tiers"])
    train_ds = generate_synthetic(
        SynthSpec(tiers, data.get("per_class", 100), data.get("noise", 0.25), seed)
    )
    val_ds = None
    n_val = data.get("val_per_class", 0)
    if n_val:
        val_ds = generate_synthetic(
            SynthSpec(tiers, n_val, data.get("noise", 0.25), seed + 1), split="val"
        )
    return train_ds, val_ds


def _build_model(cfg, num_classes, seed, mode=None, single=False):
    specs = cfgmod.layer_specs_from_config(cfg["network"]["layers"])
    rng = RngState(seed).generator()
    net = build_network(specs, tuple(cfg["network"]["input_shape"]), rng)
    if single:
        placement = cfgmod.placement_from_config({"heads": 1})
        loss_cfg = LossConfig(
            mode="single",
            lam=(1.0,),
            alpha=cfg["loss"].get("alpha", 0.0),
            eps=cfg["loss"].get("epsilon", 1e-12),
        )
    else:
        placement = cfgmod.placement_from_config(cfg["placement"])
        loss_cfg = cfgmod.loss_config_from_config(cfg["loss"], placement.heads)
        if mode is not None:
            loss_cfg = LossConfig(mode=mode, lam=loss_cfg.lam, alpha=loss_cfg.alpha, eps=loss_cfg.eps)
    heads = build_heads(
        net, placement, cfgmod.head_specs_fn_from_config(cfg["head"], num_classes), rng
    )
    return net, heads, loss_cfg


def _check_input_shape(cfg, ds):
    want = tuple(cfg["network"]["input_shape"])
    got = ds.samples.shape[1:]
    if want != got:
        raise ConfigError(f"network input_shape {list(want)} does not match data samples {list(got)}")


def _fmt(v):
    if isinstance(v, float):
        return "nan" if np.isnan(v) else f"{v:.10g}"
    return str(v)


def _metrics_csv(metric_rows, m, deterministic_time):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    hdr = (
        ["epoch", "total_loss"]
        + [f"loss_h{i}" for i in range(1, m + 1)]
        + [f"acc_train_h{i}" for i in range(1, m + 1)]
        + [f"acc_val_h{i}" for i in range(1, m + 1)]
        + ["acc_val_combined"]
        + [f"meanT_h{i}" for i in range(1, m + 1)]
        + ["seconds"]
    )
    w.writerow(hdr)
    for em in metric_rows:
        secs = 0.0 if deterministic_time else em.seconds
        row = (
            [em.epoch, em.total_loss]
            + list(em.per_head_loss)
            + list(em.acc_train)
            + list(em.acc_val)
            + [em.acc_val_combined]
            + list(em.mean_t)
            + [secs]
        )
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _out_dir(args, cfg):
    out = args.out or cfg.get("out_dir", "runs/run")
    os.makedirs(out, exist_ok=True)
    return out


def cmd_train(args, cfg):
    train_ds, val_ds = _load_datasets(cfg)
    _check_input_shape(cfg, train_ds)
    seed = cfg["seed"]
    net, heads, loss_cfg = _build_model(cfg, train_ds.num_classes, seed)
    train_cfg = cfgmod.train_config_from_config(cfg["trainer"], seed)
    out = _out_dir(args, cfg)
    m = len(heads)
    deterministic = args.threads == 1
    metrics = []
    diverged = None
    try:
        metrics = train(net, heads, train_ds, train_cfg, loss_cfg, val_ds)
    except TrainingDiverged as e:
        metrics = e.metrics
        diverged = e
    _atomic_write(os.path.join(out, "metrics.csv"), _metrics_csv(metrics, m, deterministic))
    save_checkpoint(os.path.join(out, "checkpoint.cldl"), net, heads, seed)
    if diverged is not None:
        print(f"error: {diverged}; partial metrics kept in {out}/metrics.csv", file=sys.stderr)
        return EXIT_DIVERGED
    if metrics:
        last = metrics[-1]
        print(
            f"epoch {last.epoch}: loss {last.total_loss:.4f}, "
            f"combined val acc {last.acc_val_combined:.4f}"
        )
    print(f"wrote {out}/metrics.csv and {out}/checkpoint.cldl")
    return EXIT_OK


def _scores_csv(net, heads, loss_cfg, ds, batch_size=256):
    m = len(heads)
    k = ds.num_classes
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["sample", "label", "pred"]
        + [f"p_h{i}_c{c}" for i in range(1, m + 1) for c in range(1, k + 1)]
    )
    for lo in range(0, len(ds), batch_size):
        xs = ds.samples[lo:lo + batch_size]
        ys = ds.labels[lo:lo + batch_size]
        scores = forward_tape(net, heads, xs).scores
        preds = infer_labels(scores, loss_cfg)
        for i in range(len(ys)):
            w.writerow(
                [lo + i, int(ys[i]), int(preds[i])]
                + [_fmt(float(v)) for v in scores[i].reshape(-1)]
            )
    return buf.getvalue()


def cmd_eval(args, cfg):
    train_ds, val_ds = _load_datasets(cfg)
    _check_input_shape(cfg, train_ds)
    ds = val_ds if val_ds is not None else train_ds
    net, heads, loss_cfg = _build_model(cfg, train_ds.num_classes, cfg["seed"])
    out = _out_dir(args, cfg)
    ckpt = args.checkpoint or os.path.join(out, "checkpoint.cldl")
    load_checkpoint(ckpt, net, heads)
    acc_heads, acc_combined = evaluate(net, heads, ds, loss_cfg)
    _atomic_write(os.path.join(out, "scores.csv"), _scores_csv(net, heads, loss_cfg, ds))
    for i, a in enumerate(acc_heads, start=1):
        print(f"head {i} accuracy: {a:.4f}")
    print(f"combined accuracy: {acc_combined:.4f}")
    print(f"wrote {out}/scores.csv")
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    train_ds, _ = _load_datasets(cfg)
    _check_input_shape(cfg, train_ds)
    net, heads, loss_cfg = _build_model(cfg, train_ds.num_classes, cfg["seed"])
    xs = train_ds.samples[: args.batch]
    ys = train_ds.labels[: args.batch]
    rng = RngState(cfg["seed"]).generator()
    err = finite_diff_check(net, heads, xs, ys, loss_cfg, args.delta, args.trials, rng)
    out = _out_dir(args, cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["delta", "trials", "max_rel_err"])
    w.writerow([_fmt(args.delta), args.trials, _fmt(err)])
    _atomic_write(os.path.join(out, "gradcheck.csv"), buf.getvalue())
    print(f"max relative gradient error over {args.trials} coordinates: {err:.3e}")
    return EXIT_OK


COMPARE_MODES = ("cldl", "cldl-minus", "dsn-star", "single")


def cmd_compare(args, cfg):
    seeds = cfg.get("compare_seeds") or [cfg["seed"]]
    m_all = cfg["placement"]["heads"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["mode", "seed"]
        + [f"acc_val_h{i}" for i in range(1, m_all + 1)]
        + ["acc_val_combined"]
    )
    combined = {mode: [] for mode in COMPARE_MODES}
    for seed in seeds:
        run_cfg = dict(cfg)
        run_cfg["seed"] = seed
        train_ds, val_ds = _load_datasets(run_cfg)
        _check_input_shape(cfg, train_ds)
        eval_ds = val_ds if val_ds is not None else train_ds
        for mode in COMPARE_MODES:
            net, heads, loss_cfg = _build_model(
                run_cfg, train_ds.num_classes, seed,
                mode=mode, single=(mode == "single"),
            )
            train_cfg = cfgmod.train_config_from_config(cfg["trainer"], seed)
            train(net, heads, train_ds, train_cfg, loss_cfg, val_ds=None)
            acc_heads, acc_comb = evaluate(net, heads, eval_ds, loss_cfg)
            cells = [_fmt(float(a)) for a in acc_heads]
            cells += [""] * (m_all - len(cells))
            w.writerow([mode, seed] + cells + [_fmt(float(acc_comb))])
            combined[mode].append(float(acc_comb))
            print(f"seed {seed} {mode:>10}: combined acc {acc_comb:.4f}")
    for mode in COMPARE_MODES:
        w.writerow(
            [mode, "mean"] + [""] * m_all + [_fmt(float(np.mean(combined[mode])))]
        )
    out = _out_dir(args, cfg)
    _atomic_write(os.path.join(out, "comparison.csv"), buf.getvalue())
    print(f"wrote {out}/comparison.csv")
    return EXIT_OK


def cmd_inspect(args, cfg):
    train_ds, val_ds = _load_datasets(cfg)
    _check_input_shape(cfg, train_ds)
    ds = val_ds if val_ds is not None else train_ds
    net, heads, loss_cfg = _build_model(cfg, train_ds.num_classes, cfg["seed"])
    out = _out_dir(args, cfg)
    ckpt = args.checkpoint or os.path.join(out, "checkpoint.cldl")
    load_checkpoint(ckpt, net, heads)
    report = specialization_report(ds, net, heads, loss_cfg)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample", "label", "winning_head"])
    for i, (y, win) in enumerate(zip(ds.labels, report.winners)):
        w.writerow([i, int(y), int(win)])
    _atomic_write(os.path.join(out, "specialization.csv"), buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class"] + [f"wins_h{i}" for i in range(1, len(heads) + 1)])
    for c in range(ds.num_classes):
        w.writerow([c + 1] + list(report.histogram[c]))
    _atomic_write(os.path.join(out, "specialization_histogram.csv"), buf.getvalue())

    for i, a in enumerate(report.per_head_accuracy, start=1):
        print(f"head {i} accuracy: {a:.4f}")
    print(f"combined accuracy: {report.combined_accuracy:.4f}")
    print(f"wrote {out}/specialization.csv and {out}/specialization_histogram.csv")
    return EXIT_OK


def cmd_synth(args, cfg):
    if cfg["data"]["kind"] != "synthetic":
        raise ConfigError("synth requires a config with data.kind == 'synthetic'")
    train_ds, val_ds = _load_datasets(cfg)
    out = _out_dir(args, cfg)
    save_idx(train_ds, os.path.join(out, "synth-train-images.idx"),
             os.path.join(out, "synth-train-labels.idx"))
    written = ["synth-train-images.idx", "synth-train-labels.idx"]
    if val_ds is not None:
        save_idx(val_ds, os.path.join(out, "synth-val-images.idx"),
                 os.path.join(out, "synth-val-labels.idx"))
        written += ["synth-val-images.idx", "synth-val-labels.idx"]
    print(f"wrote {', '.join(os.path.join(out, f) for f in written)}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="cldl", description="Collaborative multi-head training engine")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in [
        ("train", cmd_train), ("eval", cmd_eval), ("gradcheck", cmd_gradcheck),
        ("compare", cmd_compare), ("inspect", cmd_inspect), ("synth", cmd_synth),
    ]:
        sp = sub.add_parser(name)
        sp.set_defaults(fn=fn)
        sp.add_argument("--config", required=True, help="run config JSON")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--threads", type=int, default=1,
                        help="1 (default) = bit-exact mode with deterministic timing column")
        sp.add_argument("--out", default=None, help="output directory (overrides config)")
        if name in ("eval", "inspect"):
            sp.add_argument("--checkpoint", default=None, help="checkpoint path")
        if name == "gradcheck":
            sp.add_argument("--delta", type=float, default=1e-5)
            sp.add_argument("--trials", type=int, default=100)
            sp.add_argument("--batch", type=int, default=8)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        return args.fn(args, cfg)
    except (DataFormatError, CheckpointError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, BuildError, PlacementError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as e:
        print(f"divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
