"""Attack evaluation: success rates, source-by-target transfer matrices,
fool-count histograms, and sampled-adversary comparisons.

Reports are emitted as delimited text (CSV matrices with white-box cells
starred) and JSON with full provenance. Success rate counts
misclassification over all inputs by default; an optional flag restricts
to inputs the target classifies correctly when clean.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from . import zoo
from .attack import (
    MixturePosterior,
    attack_batch,
    craft_from_sample,
    multianda_sample,
    sample_perturbation,
    sample_stream,
)
from .errors import ConfigError, DataError
from .rng import child_seed


def _as_pairs(models, what):
    pairs = list(models)
    if not pairs:
        raise DataError(f"need at least one {what} model")
    return pairs


def attack_success_rate(adversaries, labels, target):
    """Fraction of adversaries the target model misclassifies."""
    adversaries = np.asarray(adversaries, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if adversaries.shape[0] != labels.shape[0]:
        raise DataError(
            f"{adversaries.shape[0]} adversaries but {labels.shape[0]} labels"
        )
    if labels.size == 0:
        raise DataError("cannot score an empty adversary batch")
    predictions = zoo.predict_batch(target, adversaries)
    return float(np.mean(predictions != labels))


@dataclass(frozen=True)
class TransferReport:
    """Source-by-target success-rate matrix with per-cell counts."""

    sources: tuple
    targets: tuple
    asr: np.ndarray
    numerators: np.ndarray
    denominators: np.ndarray
    whitebox: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "targets", tuple(self.targets))
        shape = (len(self.sources), len(self.targets))
        for name in ("asr", "numerators", "denominators", "whitebox"):
            value = np.asarray(getattr(self, name))
            if value.shape != shape:
                raise DataError(f"{name} must be shaped {shape}, got {value.shape}")
            object.__setattr__(self, name, value)
        if np.any(self.denominators <= 0):
            raise DataError("every transfer cell needs a positive denominator")
        if not np.allclose(self.asr * self.denominators, self.numerators):
            raise DataError("asr cells must equal numerator/denominator")

    def cell(self, source, target):
        return float(self.asr[self.sources.index(source), self.targets.index(target)])

    def to_dict(self):
        return {
            "sources": list(self.sources),
            "targets": list(self.targets),
            "asr": [[float(v) for v in row] for row in self.asr],
            "numerators": [[int(v) for v in row] for row in self.numerators],
            "denominators": [[int(v) for v in row] for row in self.denominators],
            "whitebox": [[bool(v) for v in row] for row in self.whitebox],
        }


def transfer_from_batches(named_batches, targets, correct_only=False):
    """Evaluate already-crafted adversary batches against target models."""
    named_batches = _as_pairs(named_batches, "source")
    targets = _as_pairs(targets, "target")
    source_names = tuple(name for name, _ in named_batches)
    target_names = tuple(name for name, _ in targets)
    shape = (len(named_batches), len(targets))
    asr = np.zeros(shape)
    numerators = np.zeros(shape, dtype=np.int64)
    denominators = np.zeros(shape, dtype=np.int64)
    whitebox = np.zeros(shape, dtype=bool)
    for j, (target_name, model) in enumerate(targets):
        graph = model.graph() if isinstance(model, zoo.Checkpoint) else model
        for i, (source_name, batch) in enumerate(named_batches):
            if batch.count == 0:
                raise DataError(f"source {source_name} produced an empty batch")
            fooled = zoo.predict_batch(graph, batch.primary_adversaries()) != batch.labels
            if correct_only:
                clean = zoo.predict_batch(graph, batch.originals) == batch.labels
                if not clean.any():
                    raise DataError(
                        f"target {target_name} classifies no clean inputs correctly; "
                        "cannot compute the correct-only rate"
                    )
                numerators[i, j] = int(fooled[clean].sum())
                denominators[i, j] = int(clean.sum())
            else:
                numerators[i, j] = int(fooled.sum())
                denominators[i, j] = batch.count
            asr[i, j] = numerators[i, j] / denominators[i, j]
            attacked = getattr(batch, "source", "") or source_name
            whitebox[i, j] = attacked == target_name
    return TransferReport(
        sources=source_names,
        targets=target_names,
        asr=asr,
        numerators=numerators,
        denominators=denominators,
        whitebox=whitebox,
    )


def transfer_matrix(sources, targets, dataset, attack_kind, config, correct_only=False):
    """Craft adversaries once per source, then score every target."""
    sources = _as_pairs(sources, "source")
    named_batches = []
    for name, model in sources:
        batch = attack_batch(model, dataset.images, dataset.labels, attack_kind, config)
        named_batches.append((name, batch))
    return transfer_from_batches(named_batches, targets, correct_only=correct_only)


@dataclass(frozen=True)
class FoolHistogram:
    """buckets[k] counts adversaries misclassified by exactly k models."""

    buckets: tuple

    def __post_init__(self):
        object.__setattr__(self, "buckets", tuple(int(b) for b in self.buckets))

    @property
    def total(self):
        return sum(self.buckets)


def fool_count_histogram(adversaries, labels, models):
    """Bucket adversaries by how many of the models they fool (0..len)."""
    adversaries = np.asarray(adversaries, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if adversaries.shape[0] != labels.shape[0]:
        raise DataError(
            f"{adversaries.shape[0]} adversaries but {labels.shape[0]} labels"
        )
    models = list(models)
    counts = np.zeros(labels.shape[0], dtype=np.int64)
    for model in models:
        counts += zoo.predict_batch(model, adversaries) != labels
    buckets = np.bincount(counts, minlength=len(models) + 1)
    return FoolHistogram(buckets=tuple(int(b) for b in buckets))


def sampled_asr(posteriors, originals, labels, s1_adversaries, config, targets, sample_count=None):
    """Per-target rates for posterior-sampled adversaries.

    Draws sample_count fresh perturbations per input from its posterior
    (or mixture), crafts them from the stored anchor, and reports for
    each target: the one-per-input final-iterate rate, the pooled
    sampled rate, and the sampled rate restricted to inputs whose final
    iterate already fools that target. Sampling is deterministic: input
    i at draw m always uses the same derived stream.
    """
    posteriors = list(posteriors)
    originals = np.asarray(originals, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    s1_adversaries = np.asarray(s1_adversaries, dtype=np.float64)
    if not posteriors:
        raise DataError("no posteriors to sample from")
    if not (len(posteriors) == originals.shape[0] == labels.shape[0] == s1_adversaries.shape[0]):
        raise DataError(
            f"posterior/original/label/adversary counts disagree: "
            f"{len(posteriors)}, {originals.shape[0]}, {labels.shape[0]}, {s1_adversaries.shape[0]}"
        )
    draws = config.sample_count if sample_count is None else int(sample_count)
    if draws < 1:
        raise ConfigError(f"sample count must be at least 1, got {draws}")
    samples = np.empty((len(posteriors), draws) + originals.shape[1:])
    for i, posterior in enumerate(posteriors):
        per_input = replace(config, seed=child_seed(config.seed, "input", i))
        for m in range(draws):
            if isinstance(posterior, MixturePosterior):
                samples[i, m] = multianda_sample(posterior, m, originals[i], per_input)
            else:
                rng = sample_stream(per_input.seed, 0, m)
                delta = sample_perturbation(posterior, rng)
                samples[i, m] = craft_from_sample(posterior, delta, originals[i], per_input)
    return _sampled_rows(samples, s1_adversaries, labels, targets)


def sampled_asr_from_batch(batch, targets):
    """Sampled-rate rows computed from a stored sampled-strategy batch."""
    if batch.config.strategy != "S2" or batch.s1_adversaries is None:
        raise DataError("sampled rates need a batch crafted with strategy S2")
    if batch.adversaries.ndim != batch.originals.ndim + 1:
        raise DataError(
            f"expected stacked samples per input, got shape {batch.adversaries.shape}"
        )
    return _sampled_rows(batch.adversaries, batch.s1_adversaries, batch.labels, targets)


def _sampled_rows(samples, s1_adversaries, labels, targets):
    targets = _as_pairs(targets, "target")
    n, draws = samples.shape[0], samples.shape[1]
    flat = samples.reshape((n * draws,) + samples.shape[2:])
    repeated = np.repeat(labels, draws)
    rows = []
    for name, model in targets:
        graph = model.graph() if isinstance(model, zoo.Checkpoint) else model
        s1_fooled = zoo.predict_batch(graph, s1_adversaries) != labels
        sample_fooled = (zoo.predict_batch(graph, flat) != repeated).reshape(n, draws)
        row = {
            "target": name,
            "s1_asr": float(np.mean(s1_fooled)),
            "sampled_asr": float(np.mean(sample_fooled)),
            "conditioned_count": int(s1_fooled.sum()),
        }
        if s1_fooled.any():
            row["conditioned_sampled_asr"] = float(np.mean(sample_fooled[s1_fooled]))
            row["conditioned_s1_asr"] = 1.0
        else:
            row["conditioned_sampled_asr"] = None
            row["conditioned_s1_asr"] = None
        rows.append(row)
    return rows


def _percent(value):
    return f"{100.0 * value:.1f}"


def write_transfer_csv(report, path):
    """Matrix CSV: header of target names, percent cells, white-box starred."""
    lines = ["source," + ",".join(report.targets)]
    for i, source in enumerate(report.sources):
        cells = []
        for j in range(len(report.targets)):
            star = "*" if report.whitebox[i, j] else ""
            cells.append(_percent(report.asr[i, j]) + star)
        lines.append(source + "," + ",".join(cells))
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(lines) + "\n")


def write_transfer_json(report, path, provenance=None):
    """Full-provenance JSON companion to the matrix CSV."""
    payload = report.to_dict()
    if provenance:
        payload["provenance"] = provenance
    with open(path, "w", encoding="utf-8", newline="") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def write_histogram_csv(histogram, path):
    lines = ["fooled_models,count"]
    for k, count in enumerate(histogram.buckets):
        lines.append(f"{k},{count}")
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(lines) + "\n")


def write_sampled_csv(rows, path):
    """Per-target sampled-rate CSV; blank cells when nothing conditions."""
    lines = [
        "target,s1_asr_percent,sampled_asr_percent,"
        "conditioned_sampled_asr_percent,conditioned_s1_asr_percent,conditioned_count"
    ]
    for row in rows:
        cond_sampled = (
            "" if row["conditioned_sampled_asr"] is None else _percent(row["conditioned_sampled_asr"])
        )
        cond_s1 = "" if row["conditioned_s1_asr"] is None else _percent(row["conditioned_s1_asr"])
        lines.append(
            f"{row['target']},{_percent(row['s1_asr'])},{_percent(row['sampled_asr'])},"
            f"{cond_sampled},{cond_s1},{row['conditioned_count']}"
        )
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(lines) + "\n")


def write_ablation_csv(rows, path):
    """Sweep CSV: one row per (axis value, source, target) cell."""
    lines = ["axis,value,source,target,asr_percent,numerator,denominator"]
    for row in rows:
        lines.append(
            f"{row['axis']},{row['value']},{row['source']},{row['target']},"
            f"{_percent(row['asr'])},{row['numerator']},{row['denominator']}"
        )
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(lines) + "\n")
