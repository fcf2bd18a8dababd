"""Shared fixtures: tiny unit-test models plus the full demo pipeline.

The pipeline fixtures run the real CLI (train -> attacks -> eval) once per
session into a temp directory; the end-to-end tests read its artifacts.
"""

import json
import os

import numpy as np
import pytest

from anda import dataio, zoo
from anda.cli import main as cli_main

PIPELINE_SEED = 7
MODEL_NAMES = ("lin0", "mlp0", "cnn0")
ATTACK_KINDS = ("bim", "anda", "multianda")
S2_RUNS = (("anda", "lin0"), ("anda", "mlp0"), ("anda", "cnn0"), ("multianda", "lin0"))
ARCHIVE_NAMES = tuple(
    [f"{kind}_S1_{source}" for kind in ATTACK_KINDS for source in MODEL_NAMES]
    + [f"{kind}_S2_{source}" for kind, source in S2_RUNS]
)


def run_cli(argv):
    rc = cli_main([str(a) for a in argv])
    assert rc == 0, f"cli {argv} exited {rc}"


@pytest.fixture(scope="session")
def tiny_dataset():
    return dataio.generate_synthetic("rings", 120, 8, 3, seed=11, noise=0.05)


@pytest.fixture(scope="session")
def tiny_test_dataset():
    return dataio.generate_synthetic("rings", 40, 8, 3, seed=12, noise=0.05)


@pytest.fixture(scope="session")
def tiny_arch():
    return zoo.Architecture(
        kind="mlp", input_shape=(1, 8, 8), classes=3, hidden=(12,), channels=(2, 4)
    )


@pytest.fixture(scope="session")
def tiny_model(tiny_dataset, tiny_arch):
    return zoo.train_classifier(tiny_dataset, tiny_arch, epochs=6, learning_rate=0.4, seed=5)


@pytest.fixture(scope="session")
def tiny_cnn(tiny_dataset):
    arch = zoo.Architecture(
        kind="small_cnn", input_shape=(1, 8, 8), classes=3, hidden=(12,), channels=(2, 4)
    )
    return zoo.train_classifier(tiny_dataset, arch, epochs=4, learning_rate=0.3, seed=6)


@pytest.fixture(scope="session")
def tiny_linear(tiny_dataset):
    arch = zoo.Architecture(
        kind="softmax_linear", input_shape=(1, 8, 8), classes=3, hidden=(12,), channels=(2, 4)
    )
    return zoo.train_classifier(tiny_dataset, arch, epochs=6, learning_rate=0.4, seed=4)


def run_pipeline(out, ablations=False):
    """Train the zoo, craft every archive, and score them, all via the CLI."""
    seed = str(PIPELINE_SEED)
    run_cli(["train", "--seed", seed, "--out", out])
    entries = []
    for kind in ATTACK_KINDS:
        for source in MODEL_NAMES:
            run_cli(
                [
                    "attack",
                    "--seed",
                    seed,
                    "--out",
                    out,
                    "--set",
                    f"attack={kind}",
                    "--set",
                    f"source={source}",
                ]
            )
            entries.append(f"{kind}_S1_{source}={out}/archives/{kind}_S1_{source}.andapert")
    for kind, source in S2_RUNS:
        run_cli(
            [
                "attack",
                "--seed",
                seed,
                "--out",
                out,
                "--set",
                f"attack={kind}",
                "--set",
                "strategy=S2",
                "--set",
                f"source={source}",
            ]
        )
        entries.append(f"{kind}_S2_{source}={out}/archives/{kind}_S2_{source}.andapert")
    run_cli(["eval", "--seed", seed, "--out", out, "--set", "archives=" + json.dumps(entries)])
    if ablations:
        for axis in ("augmentation", "accumulation"):
            run_cli(["ablate", "--seed", seed, "--out", out, "--set", f"sweep_axis={axis}"])
    return out


class PipelineRun:
    def __init__(self, root):
        self.root = root
        with open(os.path.join(root, "transfer.json"), encoding="utf-8") as handle:
            self.transfer = json.load(handle)

    def path(self, *parts):
        return os.path.join(self.root, *parts)

    def archive(self, kind, strategy, source):
        return self.path("archives", f"{kind}_{strategy}_{source}.andapert")

    def asr(self, row_name, target):
        i = self.transfer["sources"].index(row_name)
        j = self.transfer["targets"].index(target)
        return self.transfer["asr"][i][j]

    def mean_blackbox(self, kind, strategy="S1"):
        cells = [
            self.asr(f"{kind}_{strategy}_{source}", target)
            for source in MODEL_NAMES
            for target in MODEL_NAMES
            if source != target
        ]
        return float(np.mean(cells))

    def sampled_rows(self, source):
        rows = {}
        path = self.path(f"sampled_anda_S2_{source}.csv")
        with open(path, encoding="utf-8") as handle:
            header = handle.readline().strip().split(",")
            for line in handle:
                cells = line.strip().split(",")
                rows[cells[0]] = dict(zip(header[1:], cells[1:]))
        return rows

    def ablation_mean_blackbox(self, axis, value):
        cells = []
        with open(self.path(f"ablation_{axis}.csv"), encoding="utf-8") as handle:
            header = handle.readline().strip().split(",")
            for line in handle:
                row = dict(zip(header, line.strip().split(",")))
                if row["value"] == value and row["source"] != row["target"]:
                    cells.append(float(row["asr_percent"]))
        assert cells, f"no off-diagonal rows for {axis}={value}"
        return float(np.mean(cells))


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("pipeline"))
    return PipelineRun(run_pipeline(out, ablations=True))


@pytest.fixture(scope="session")
def pipeline_rerun(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("pipeline_rerun"))
    return PipelineRun(run_pipeline(out))
