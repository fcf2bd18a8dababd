"""Experiment command line: train, attack, eval, ablate.

Each subcommand reads one flat config (file + --set overrides), validates
it fully before touching the filesystem, writes a resolved-config
snapshot next to its outputs, and emits deterministic artifacts: binary
checkpoints and adversary archives, delimited reports, and rendered PNG
figures alongside them. Exit codes: 0 success, 2 config error, 3
data/model error, 4 output-invariant violation.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as runconfig
from . import dataio, evaluate, figures, zoo
from .attack import attack_batch, validate_attack_request
from .errors import AndaError, ConfigError, DataError
from .rng import child_seed


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="anda",
        description="Craft and evaluate transferable adversarial examples on small classifiers.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("train", "train the declared classifiers and write checkpoints"),
        ("attack", "craft an adversary archive from one source model"),
        ("eval", "score adversary archives against target models"),
        ("ablate", "sweep one attack axis and report per-cell rates"),
    ):
        sub = commands.add_parser(name, help=text)
        sub.add_argument("--config", help="flat JSON config file")
        sub.add_argument("--seed", type=int, help="override the master seed")
        sub.add_argument("--out", help="override the output directory")
        sub.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (JSON value or bare string); repeatable",
        )
    return parser


def _load_datasets(cfg):
    """Resolve the train/test datasets declared by the config."""
    if cfg["dataset"] == "idx":
        for key in ("idx_train_images", "idx_train_labels", "idx_test_images", "idx_test_labels"):
            if not cfg[key]:
                raise ConfigError(f"dataset=idx needs config key {key}")
        train = dataio.load_idx_dataset(
            cfg["idx_train_images"], cfg["idx_train_labels"], cfg["dataset_classes"], name="train"
        )
        test = dataio.load_idx_dataset(
            cfg["idx_test_images"], cfg["idx_test_labels"], cfg["dataset_classes"], name="test"
        )
    else:
        train = dataio.generate_synthetic(
            cfg["dataset"],
            cfg["dataset_count"],
            cfg["dataset_side"],
            cfg["dataset_classes"],
            seed=child_seed(cfg["seed"], "dataset", "train"),
            noise=cfg["dataset_noise"],
            name="train",
        )
        test = dataio.generate_synthetic(
            cfg["dataset"],
            cfg["dataset_test_count"],
            cfg["dataset_side"],
            cfg["dataset_classes"],
            seed=child_seed(cfg["seed"], "dataset", "test"),
            noise=cfg["dataset_noise"],
            name="test",
        )
    if train.images.shape[1:] != test.images.shape[1:]:
        raise DataError(
            f"train images {train.images.shape[1:]} and test images "
            f"{test.images.shape[1:]} disagree in shape"
        )
    return train, test


def _architecture(cfg, kind, dataset):
    return zoo.Architecture(
        kind=kind,
        input_shape=dataset.images.shape[1:],
        classes=dataset.classes,
        hidden=tuple(cfg["mlp_hidden"]),
        channels=tuple(cfg["cnn_channels"]),
    )


def _checkpoint_dir(cfg):
    return cfg["checkpoint_dir"] or os.path.join(cfg["out"], "checkpoints")


def _checkpoint_path(cfg, name):
    return os.path.join(_checkpoint_dir(cfg), f"{name}.ckpt")


def _load_named_checkpoint(cfg, name, path=None):
    path = path or _checkpoint_path(cfg, name)
    if not os.path.exists(path):
        raise DataError(f"checkpoint for model {name!r} not found at {path}")
    return zoo.load_checkpoint(path)


def _snapshot(cfg, command):
    runconfig.write_snapshot(cfg, os.path.join(cfg["out"], f"{command}_config.json"))


def cmd_train(cfg):
    """Train every declared model; write checkpoints, a log, and curves."""
    specs = runconfig.parse_model_specs(cfg)
    train, test = _load_datasets(cfg)
    plans = [(name, _architecture(cfg, kind, train), seed) for name, kind, seed in specs]

    os.makedirs(_checkpoint_dir(cfg), exist_ok=True)
    _snapshot(cfg, "train")
    log_lines = ["model,epoch,mean_loss,train_accuracy"]
    histories = []
    for name, arch, seed in plans:
        checkpoint = zoo.train_classifier(
            train,
            arch,
            epochs=cfg["epochs"],
            learning_rate=cfg["learning_rate"],
            seed=seed,
            batch_size=cfg["batch_size"],
            test_dataset=test,
            label_smoothing=cfg["label_smoothing"],
        )
        zoo.save_checkpoint(checkpoint, _checkpoint_path(cfg, name))
        history = checkpoint.metadata["history"]
        histories.append((name, history))
        for row in history:
            log_lines.append(
                f"{name},{row['epoch']},{row['mean_loss']:.6f},{row['train_accuracy']:.4f}"
            )
        print(
            f"trained {name} ({arch.kind}): "
            f"train {checkpoint.metadata['final_train_accuracy']:.3f}, "
            f"test {checkpoint.metadata['final_test_accuracy']:.3f}"
        )
    log_path = os.path.join(cfg["out"], "training_log.csv")
    with open(log_path, "w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(log_lines) + "\n")
    figures.training_curves(histories, os.path.join(cfg["out"], "training_curves.png"))
    print(f"wrote {log_path}")
    return 0


def _default_archive_path(cfg):
    name = f"{cfg['attack']}_{cfg['strategy']}_{cfg['source']}.andapert"
    return os.path.join(cfg["out"], "archives", name)


def cmd_attack(cfg):
    """Craft adversaries from one source checkpoint into an archive."""
    attack_cfg = runconfig.attack_config_from(cfg)
    validate_attack_request(cfg["attack"], attack_cfg)
    source = cfg["source"]
    if not source:
        raise ConfigError("attack needs config key source (a trained model name)")
    if cfg["attack_inputs"] < 1:
        raise ConfigError(f"attack_inputs must be positive, got {cfg['attack_inputs']}")

    checkpoint = _load_named_checkpoint(cfg, source)
    _, test = _load_datasets(cfg)
    if checkpoint.arch.input_shape != test.images.shape[1:]:
        raise DataError(
            f"checkpoint expects images shaped {checkpoint.arch.input_shape}, "
            f"dataset provides {test.images.shape[1:]}"
        )
    if cfg["attack_inputs"] > test.count:
        raise DataError(
            f"attack_inputs={cfg['attack_inputs']} but the test split holds {test.count} images"
        )
    subset = test.subset(np.arange(cfg["attack_inputs"]))

    archive_path = cfg["archive"] or _default_archive_path(cfg)
    os.makedirs(cfg["out"], exist_ok=True)
    os.makedirs(os.path.dirname(archive_path) or ".", exist_ok=True)
    _snapshot(cfg, "attack")

    batch = attack_batch(
        checkpoint, subset.images, subset.labels, cfg["attack"], attack_cfg, source=source
    )
    dataio.write_adversary_archive(batch, archive_path)
    per_input = (
        f"{attack_cfg.sample_count} samples + final iterate"
        if attack_cfg.strategy == "S2"
        else "1 adversary"
    )
    print(f"wrote {archive_path} ({batch.count} inputs, {per_input} per input)")
    return 0


def _named_targets(cfg):
    """Resolve eval targets: explicit name[=path] entries or all models."""
    entries = cfg["targets"]
    if not entries:
        entries = [name for name, _, _ in runconfig.parse_model_specs(cfg)]
    named = []
    for entry in entries:
        if "=" in entry:
            name, path = runconfig.parse_named_path(entry, "targets")
        else:
            name, path = entry.strip(), None
            if not name:
                raise ConfigError("config key targets has an empty entry")
        named.append((name, _load_named_checkpoint(cfg, name, path)))
    if len({name for name, _ in named}) != len(named):
        raise ConfigError(f"duplicate target names in {entries}")
    return named


def cmd_eval(cfg):
    """Score archives against targets: transfer matrix, histograms, samples."""
    if not cfg["archives"]:
        raise ConfigError("eval needs config key archives (name=path entries)")
    named_paths = [runconfig.parse_named_path(entry, "archives") for entry in cfg["archives"]]
    if len({name for name, _ in named_paths}) != len(named_paths):
        raise ConfigError(f"duplicate archive names in {cfg['archives']}")
    batches = []
    for name, path in named_paths:
        if not os.path.exists(path):
            raise DataError(f"adversary archive {name!r} not found at {path}")
        batches.append((name, dataio.read_adversary_archive(path)))
    targets = _named_targets(cfg)
    for archive_name, batch in batches:
        for target_name, checkpoint in targets:
            if batch.originals.shape[1:] != checkpoint.arch.input_shape:
                raise DataError(
                    f"archive {archive_name!r} holds images shaped {batch.originals.shape[1:]} "
                    f"but target {target_name!r} expects {checkpoint.arch.input_shape}"
                )

    os.makedirs(cfg["out"], exist_ok=True)
    _snapshot(cfg, "eval")

    report = evaluate.transfer_from_batches(batches, targets, correct_only=cfg["correct_only"])
    provenance = {
        "seed": cfg["seed"],
        "correct_only": cfg["correct_only"],
        "archives": {
            name: {"attack": batch.attack, "config": batch.config.to_dict()}
            for name, batch in batches
        },
    }
    evaluate.write_transfer_csv(report, os.path.join(cfg["out"], "transfer.csv"))
    evaluate.write_transfer_json(
        report, os.path.join(cfg["out"], "transfer.json"), provenance=provenance
    )
    figures.transfer_heatmap(report, os.path.join(cfg["out"], "transfer_heatmap.png"))

    target_models = [checkpoint for _, checkpoint in targets]
    for name, batch in batches:
        histogram = evaluate.fool_count_histogram(
            batch.primary_adversaries(), batch.labels, target_models
        )
        evaluate.write_histogram_csv(
            histogram, os.path.join(cfg["out"], f"histogram_{name}.csv")
        )
        figures.fool_histogram_figure(
            histogram,
            os.path.join(cfg["out"], f"histogram_{name}.png"),
            title=f"Models fooled per adversary ({name})",
        )
        if batch.config.strategy == "S2":
            rows = evaluate.sampled_asr_from_batch(batch, targets)
            evaluate.write_sampled_csv(rows, os.path.join(cfg["out"], f"sampled_{name}.csv"))
            figures.sampled_comparison_figure(
                rows,
                os.path.join(cfg["out"], f"sampled_{name}.png"),
                title=f"Final iterate vs sampled adversaries ({name})",
            )
    print(f"wrote {os.path.join(cfg['out'], 'transfer.csv')} and companions")
    return 0


def _sweep_variants(cfg, base):
    """Expand the sweep axis into (value label, attack kind, config) triples."""
    axis = cfg["sweep_axis"]
    if not axis:
        raise ConfigError("ablate needs config key sweep_axis")
    kind = cfg["attack"]
    if axis == "augmentation":
        return [
            ("off", kind, replace(base, aug_count=1, augmax=0.0)),
            ("on", kind, base),
        ]
    if axis == "accumulation":
        return [
            ("off", kind, replace(base, accumulate=False)),
            ("on", kind, base),
        ]
    values = cfg["sweep_values"]
    if not values:
        raise ConfigError(f"sweep_axis={axis} needs config key sweep_values")
    variants = []
    for value in values:
        if axis == "n":
            variants.append((value, kind, replace(base, aug_count=int(value))))
        elif axis == "augmax":
            variants.append((value, kind, replace(base, augmax=float(value))))
        else:
            variants.append((value, "multianda", replace(base, ensemble_k=int(value))))
    return variants


def cmd_ablate(cfg):
    """Sweep one attack axis; one CSV row per (value, source, target)."""
    base = runconfig.attack_config_from(cfg)
    variants = _sweep_variants(cfg, base)
    for _, kind, variant in variants:
        validate_attack_request(kind, variant)
    specs = runconfig.parse_model_specs(cfg)
    source_names = [cfg["source"]] if cfg["source"] else [name for name, _, _ in specs]
    sources = [(name, _load_named_checkpoint(cfg, name)) for name in source_names]
    targets = _named_targets(cfg)
    _, test = _load_datasets(cfg)
    if cfg["attack_inputs"] < 1:
        raise ConfigError(f"attack_inputs must be positive, got {cfg['attack_inputs']}")
    if cfg["attack_inputs"] > test.count:
        raise DataError(
            f"attack_inputs={cfg['attack_inputs']} but the test split holds {test.count} images"
        )
    subset = test.subset(np.arange(cfg["attack_inputs"]))

    os.makedirs(cfg["out"], exist_ok=True)
    _snapshot(cfg, "ablate")

    axis = cfg["sweep_axis"]
    rows = []
    for value, kind, variant in variants:
        named_batches = []
        for name, checkpoint in sources:
            named_batches.append(
                (name, attack_batch(checkpoint, subset.images, subset.labels, kind, variant))
            )
        report = evaluate.transfer_from_batches(
            named_batches, targets, correct_only=cfg["correct_only"]
        )
        for i, source in enumerate(report.sources):
            for j, target in enumerate(report.targets):
                rows.append(
                    {
                        "axis": axis,
                        "value": value,
                        "source": source,
                        "target": target,
                        "asr": float(report.asr[i, j]),
                        "numerator": int(report.numerators[i, j]),
                        "denominator": int(report.denominators[i, j]),
                    }
                )
    csv_path = os.path.join(cfg["out"], f"ablation_{axis}.csv")
    evaluate.write_ablation_csv(rows, csv_path)
    figures.ablation_figure(rows, os.path.join(cfg["out"], f"ablation_{axis}.png"))
    print(f"wrote {csv_path}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = runconfig.resolve(args.config, args.set, args.seed, args.out)
        return _COMMANDS[args.command](cfg)
    except AndaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
