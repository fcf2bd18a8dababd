"""Flat key-value run configuration with schema validation.

A run is described by one flat JSON document; command-line overrides
(--set key=value, then --seed/--out) win over the file, which wins over
defaults. Every key is validated against the schema before any command
does work, and unknown keys are rejected outright. Each command writes
the fully resolved document next to its outputs as an audit trail.
"""

import json
from dataclasses import dataclass

from .attack import ATTACK_KINDS, STRATEGIES, AttackConfig
from .dataio import SYNTHETIC_KINDS
from .errors import ConfigError
from .zoo import KINDS as ARCH_KINDS


@dataclass(frozen=True)
class _Field:
    kind: str
    default: object
    choices: tuple = None
    help: str = ""


SCHEMA = {
    "seed": _Field("int", 0, help="master seed; every stream in a run derives from it"),
    "out": _Field("str", "out", help="output directory; all artifacts land beneath it"),
    "dataset": _Field(
        "str", "rings", choices=SYNTHETIC_KINDS + ("idx",), help="dataset source"
    ),
    "dataset_count": _Field("int", 2000, help="synthetic training images"),
    "dataset_test_count": _Field("int", 600, help="synthetic held-out images"),
    "dataset_side": _Field("int", 16, help="synthetic image side length"),
    "dataset_classes": _Field("int", 4, help="synthetic class count"),
    "dataset_noise": _Field("float", 0.04, help="synthetic pixel noise level"),
    "idx_train_images": _Field("str", "", help="IDX image file for training"),
    "idx_train_labels": _Field("str", "", help="IDX label file for training"),
    "idx_test_images": _Field("str", "", help="IDX image file for evaluation"),
    "idx_test_labels": _Field("str", "", help="IDX label file for evaluation"),
    "models": _Field(
        "list_str",
        ["lin0:softmax_linear:104", "mlp0:mlp:202", "cnn0:small_cnn:303"],
        help="model specs name:architecture:seed",
    ),
    "mlp_hidden": _Field("list_int", [64, 48], help="hidden layer widths for mlp models"),
    "cnn_channels": _Field("list_int", [8, 16], help="conv channel counts for small_cnn models"),
    "epochs": _Field("int", 60, help="training epochs"),
    "learning_rate": _Field("float", 0.4, help="initial gradient-descent step size"),
    "batch_size": _Field("int", 64, help="training mini-batch size"),
    "label_smoothing": _Field("float", 0.25, help="uniform mass mixed into training targets"),
    "checkpoint_dir": _Field("str", "", help="checkpoint directory; default <out>/checkpoints"),
    "attack": _Field("str", "anda", choices=ATTACK_KINDS, help="attack kind"),
    "strategy": _Field("str", "S1", choices=STRATEGIES, help="final iterate (S1) or samples (S2)"),
    "epsilon": _Field("float", 16.0, help="perturbation budget on the 0..255 scale"),
    "steps": _Field("int", 10, help="ascent iterations"),
    "step_size": _Field("float_or_null", 14.0, help="per-step size; null means epsilon/steps"),
    "aug_count": _Field("int", 25, help="translated views per step (square number)"),
    "augmax": _Field("float", 0.3, help="maximum translation offset, fraction of half-size"),
    "ensemble_k": _Field("int", 5, help="ensemble components for the mixture attack"),
    "init_radius": _Field("float", 0.5, help="uniform restart radius on the 0..255 scale"),
    "sample_count": _Field("int", 20, help="posterior draws per input for strategy S2"),
    "accumulate": _Field("bool", True, help="step with the all-history running mean"),
    "include_identity": _Field("bool", False, help="append the untranslated view to the grid"),
    "source": _Field("str", "", help="source model name for the attack command"),
    "attack_inputs": _Field("int", 200, help="how many test inputs to attack"),
    "archive": _Field("str", "", help="adversary archive path; default under <out>/archives"),
    "archives": _Field("list_str", [], help="eval inputs, name=path pairs"),
    "targets": _Field(
        "list_str", [], help="eval targets, name or name=path; default all trained models"
    ),
    "correct_only": _Field("bool", False, help="score only inputs the target gets right clean"),
    "sweep_axis": _Field(
        "str",
        "",
        choices=("", "augmentation", "accumulation", "n", "augmax", "K"),
        help="ablation axis",
    ),
    "sweep_values": _Field("list_num", [], help="sweep points for the n/augmax/K axes"),
}


def default_config():
    cfg = {}
    for key, spec in SCHEMA.items():
        cfg[key] = list(spec.default) if isinstance(spec.default, list) else spec.default
    return cfg


def _check_type(key, value, spec):
    if spec.kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key} needs an integer, got {value!r}")
    elif spec.kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key} needs a number, got {value!r}")
        value = float(value)
    elif spec.kind == "float_or_null":
        if value is not None:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"config key {key} needs a number or null, got {value!r}")
            value = float(value)
    elif spec.kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key} needs true or false, got {value!r}")
    elif spec.kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"config key {key} needs a string, got {value!r}")
    elif spec.kind == "list_str":
        if not isinstance(value, list) or any(not isinstance(v, str) for v in value):
            raise ConfigError(f"config key {key} needs a list of strings, got {value!r}")
        value = list(value)
    elif spec.kind == "list_int":
        if not isinstance(value, list) or any(
            isinstance(v, bool) or not isinstance(v, int) for v in value
        ):
            raise ConfigError(f"config key {key} needs a list of integers, got {value!r}")
        value = list(value)
    elif spec.kind == "list_num":
        if not isinstance(value, list) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in value
        ):
            raise ConfigError(f"config key {key} needs a list of numbers, got {value!r}")
        value = list(value)
    else:
        raise ConfigError(f"unknown schema kind {spec.kind} for {key}")
    if spec.choices is not None and value not in spec.choices:
        raise ConfigError(f"config key {key} must be one of {spec.choices}, got {value!r}")
    return value


def apply_value(cfg, key, value):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    cfg[key] = _check_type(key, value, SCHEMA[key])


def load_config_file(path):
    """Parse one flat JSON config document, rejecting unknown keys."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return document


def parse_set_value(text):
    """Parse a --set value: JSON when it parses, bare string otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve(config_path=None, set_pairs=(), seed=None, out=None):
    """Merge defaults, config file, --set overrides, then --seed/--out."""
    cfg = default_config()
    if config_path:
        for key, value in load_config_file(config_path).items():
            apply_value(cfg, key, value)
    for pair in set_pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        apply_value(cfg, key.strip(), parse_set_value(raw))
    if seed is not None:
        apply_value(cfg, "seed", seed)
    if out is not None:
        apply_value(cfg, "out", out)
    return cfg


def parse_model_spec(text):
    """Split a name:architecture:seed model spec."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"model spec must be name:architecture:seed, got {text!r}")
    name, kind, seed_text = (p.strip() for p in parts)
    if not name:
        raise ConfigError(f"model spec {text!r} has an empty name")
    if kind not in ARCH_KINDS:
        raise ConfigError(f"model spec {text!r}: architecture must be one of {ARCH_KINDS}")
    try:
        seed = int(seed_text)
    except ValueError as exc:
        raise ConfigError(f"model spec {text!r}: seed must be an integer") from exc
    return name, kind, seed


def parse_model_specs(cfg):
    specs = [parse_model_spec(text) for text in cfg["models"]]
    if not specs:
        raise ConfigError("config declares no models")
    names = [name for name, _, _ in specs]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate model names in {names}")
    return specs


def parse_named_path(text, key):
    """Split a name=path pair used by the archives/targets lists."""
    if "=" not in text:
        raise ConfigError(f"config key {key} expects name=path entries, got {text!r}")
    name, _, path = text.partition("=")
    name, path = name.strip(), path.strip()
    if not name or not path:
        raise ConfigError(f"config key {key} entry {text!r} has an empty name or path")
    return name, path


def attack_config_from(cfg):
    """Build the validated attack parameter set from a resolved run config."""
    return AttackConfig(
        epsilon=cfg["epsilon"],
        steps=cfg["steps"],
        step_size=cfg["step_size"],
        aug_count=cfg["aug_count"],
        augmax=cfg["augmax"],
        ensemble_k=cfg["ensemble_k"],
        init_radius=cfg["init_radius"],
        sample_count=cfg["sample_count"],
        strategy=cfg["strategy"],
        seed=cfg["seed"],
        accumulate=cfg["accumulate"],
        include_identity=cfg["include_identity"],
    )


def write_snapshot(cfg, path):
    with open(path, "w", encoding="utf-8", newline="") as handle:
        json.dump(cfg, handle, indent=2, sort_keys=True)
        handle.write("\n")
