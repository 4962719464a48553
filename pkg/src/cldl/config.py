"""Run configuration: JSON schema, validation, and object construction.

A run config is a single JSON document validated against RUN_CONFIG_SCHEMA
before anything is built; unknown keys are rejected everywhere.
"""

import json

import jsonschema

from . import network as nw
from .loss import LossConfig, MODES
from .train import TrainConfig

_LAYER_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": list(nw.LAYER_KINDS)},
        "units": {"type": "integer", "minimum": 1},
        "filters": {"type": "integer", "minimum": 1},
        "kernel": {
            "type": "array",
            "items": {"type": "integer", "minimum": 1},
            "minItems": 2,
            "maxItems": 2,
        },
        "stride": {"type": "integer", "minimum": 1},
        "padding": {"enum": ["valid", "same"]},
        "init": {"enum": ["xavier", "gaussian"]},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "network": {
            "type": "object",
            "properties": {
                "input_shape": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 1,
                    "maxItems": 3,
                },
                "layers": {"type": "array", "items": _LAYER_SCHEMA, "minItems": 1},
            },
            "required": ["input_shape", "layers"],
            "additionalProperties": False,
        },
        "head": {
            "type": "object",
            "properties": {
                "type": {"enum": ["mlp", "nin"]},
                "hidden": {"type": "integer", "minimum": 1},
            },
            "required": ["type"],
            "additionalProperties": False,
        },
        "placement": {
            "type": "object",
            "properties": {
                "heads": {"type": "integer", "minimum": 1},
                "gamma": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "indices": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                },
            },
            "required": ["heads"],
            "additionalProperties": False,
        },
        "loss": {
            "type": "object",
            "properties": {
                "mode": {"enum": list(MODES)},
                "lambda": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 1,
                },
                "alpha": {"type": "number", "minimum": 0},
                "epsilon": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
            },
            "required": ["mode"],
            "additionalProperties": False,
        },
        "trainer": {
            "type": "object",
            "properties": {
                "rate": {"type": "number", "minimum": 0},
                "epochs": {"type": "integer", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "schedule": {"enum": ["constant", "step"]},
                "drop_factor": {"type": "number", "exclusiveMinimum": 0},
                "drop_epochs": {"type": "array", "items": {"type": "integer", "minimum": 1}},
            },
            "required": ["rate", "epochs"],
            "additionalProperties": False,
        },
        "data": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["idx", "synthetic"]},
                "train_images": {"type": "string"},
                "train_labels": {"type": "string"},
                "val_images": {"type": "string"},
                "val_labels": {"type": "string"},
                "mean_subtract": {"type": "boolean"},
                "tiers": {
                    "type": "array",
                    "items": {"enum": ["linear", "radial", "xor-like"]},
                    "minItems": 2,
                },
                "per_class": {"type": "integer", "minimum": 1},
                "val_per_class": {"type": "integer", "minimum": 0},
                "noise": {"type": "number", "minimum": 0},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "seed": {"type": "integer", "minimum": 0},
        "compare_seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "out_dir": {"type": "string"},
    },
    "required": ["network", "head", "placement", "loss", "trainer", "data", "seed"],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """Raised for schema violations or inconsistent config contents."""


def validate_config(cfg):
    try:
        jsonschema.validate(cfg, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config field {path}: {e.message}") from e
    data = cfg["data"]
    if data["kind"] == "idx":
        missing = [k for k in ("train_images", "train_labels") if k not in data]
        if missing:
            raise ConfigError(f"config field data: idx datasets need {missing}")
    else:
        if "tiers" not in data:
            raise ConfigError("config field data: synthetic datasets need 'tiers'")
    return cfg


def parse_config(text):
    return validate_config(json.loads(text))


def serialize_config(cfg):
    """Canonical JSON form; parse(serialize(cfg)) round-trips exactly."""
    return json.dumps(cfg, indent=2, sort_keys=True)


def load_config(path):
    with open(path) as f:
        return parse_config(f.read())


def layer_specs_from_config(layers):
    specs = []
    for i, d in enumerate(layers):
        kw = dict(d)
        kind = kw.pop("kind")
        if "kernel" in kw:
            kw["kernel"] = tuple(kw["kernel"])
        try:
            if kind == "dense":
                specs.append(nw.dense(kw.pop("units"), **kw))
            elif kind == "conv":
                specs.append(nw.conv(kw.pop("filters"), kw.pop("kernel"), **kw))
            elif kind == "relu":
                specs.append(nw.relu_layer())
            elif kind == "maxpool":
                specs.append(nw.maxpool(kw.pop("kernel"), kw.pop("stride", None)))
            elif kind == "global-avg-pool":
                specs.append(nw.global_avg_pool_layer())
            elif kind == "flatten":
                specs.append(nw.flatten())
            elif kind == "softmax":
                specs.append(nw.softmax_layer())
        except (KeyError, TypeError, nw.BuildError) as e:
            raise ConfigError(f"layer {i} ({kind}): {e}") from e
        if kw and kind in ("relu", "flatten", "global-avg-pool", "softmax"):
            raise ConfigError(f"layer {i} ({kind}): unexpected fields {sorted(kw)}")
    return specs


def head_specs_fn_from_config(head_cfg, num_classes):
    if head_cfg["type"] == "nin":
        return lambda shape: nw.nin_head_specs(num_classes)
    hidden = head_cfg.get("hidden", 32)
    return lambda shape: nw.mlp_head_specs(num_classes, hidden)


def placement_from_config(pl):
    return nw.PlacementConfig(
        heads=pl["heads"],
        gamma=pl.get("gamma", 0.8),
        explicit=tuple(pl["indices"]) if "indices" in pl else None,
    )


def loss_config_from_config(lc, num_heads):
    lam = lc.get("lambda")
    if lam is None:
        lam = [1.0] * num_heads
    if len(lam) != num_heads:
        raise ConfigError(f"lambda length {len(lam)} does not match head count {num_heads}")
    try:
        return LossConfig(
            mode=lc["mode"],
            lam=tuple(lam),
            alpha=lc.get("alpha", 0.0),
            eps=lc.get("epsilon", 1e-12),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def train_config_from_config(tc, seed):
    return TrainConfig(
        rate=tc["rate"],
        epochs=tc["epochs"],
        batch_size=tc.get("batch_size", 64),
        momentum=tc.get("momentum", 0.9),
        schedule=tc.get("schedule", "constant"),
        drop_factor=tc.get("drop_factor", 0.1),
        drop_epochs=tuple(tc.get("drop_epochs", ())),
        seed=seed,
    )
