"""Dataset loading and adversary archive serialization.

Supports IDX image/label files (the classic big-endian format), two
synthetic dataset generators for self-contained experiments, and a
bit-exact binary archive for crafted adversaries (magic ANDAPERT) whose
reader re-validates the perturbation-ball invariant.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .attack import ATTACK_KINDS, STRATEGIES, AdversaryBatch, AttackConfig
from .errors import ConfigError, DataError
from .rng import stream

SYNTHETIC_KINDS = ("gauss_blobs", "rings")

_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801
_ARCHIVE_MAGIC = b"ANDAPERT"
_ARCHIVE_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    """Images in [0, 1] shaped (count, channels, height, width) plus labels."""

    images: np.ndarray
    labels: np.ndarray
    classes: int
    name: str = "dataset"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DataError(f"images must be (count, channels, height, width), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError(
                f"labels shape {self.labels.shape} does not match image count {self.images.shape[0]}"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DataError("images must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise DataError(
                f"labels must lie in [0, {self.classes}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def count(self):
        return int(self.images.shape[0])

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            images=self.images[indices],
            labels=self.labels[indices],
            classes=self.classes,
            name=self.name,
            provenance=dict(self.provenance),
        )


def read_idx_images(path):
    """Parse an IDX image file into float64 [0, 1] arrays (count, 1, h, w)."""
    with open(path, "rb") as handle:
        raw = handle.read()
    if len(raw) < 16:
        raise DataError(f"{path}: truncated IDX image header")
    magic, count, rows, cols = struct.unpack(">iiii", raw[:16])
    if magic != _IDX_IMAGE_MAGIC:
        raise DataError(f"{path}: bad IDX image magic 0x{magic:08x}")
    expected = count * rows * cols
    if len(raw) - 16 != expected:
        raise DataError(f"{path}: IDX payload is {len(raw) - 16} bytes, expected {expected}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    return pixels.reshape(count, 1, rows, cols).astype(np.float64) / 255.0


def read_idx_labels(path):
    """Parse an IDX label file into an int64 vector."""
    with open(path, "rb") as handle:
        raw = handle.read()
    if len(raw) < 8:
        raise DataError(f"{path}: truncated IDX label header")
    magic, count = struct.unpack(">ii", raw[:8])
    if magic != _IDX_LABEL_MAGIC:
        raise DataError(f"{path}: bad IDX label magic 0x{magic:08x}")
    if len(raw) - 8 != count:
        raise DataError(f"{path}: IDX payload is {len(raw) - 8} bytes, expected {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def load_idx_dataset(image_path, label_path, classes, name="idx"):
    images = read_idx_images(image_path)
    labels = read_idx_labels(label_path)
    if images.shape[0] != labels.shape[0]:
        raise DataError(
            f"image count {images.shape[0]} does not match label count {labels.shape[0]}"
        )
    return Dataset(
        images=images,
        labels=labels,
        classes=classes,
        name=name,
        provenance={"kind": "idx", "images": str(image_path), "labels": str(label_path)},
    )


def generate_synthetic(kind, count, side, classes, seed, noise=0.06, name=None):
    """Deterministic synthetic grayscale datasets.

    gauss_blobs places one Gaussian bump per class at a class-specific
    angle around the image center; rings draws per-class circles of
    class-specific radius. Both add pixel noise and clip to [0, 1].
    """
    if kind not in SYNTHETIC_KINDS:
        raise ConfigError(f"synthetic kind must be one of {SYNTHETIC_KINDS}, got {kind!r}")
    if count < 1 or side < 4 or classes < 2:
        raise ConfigError(
            f"need count >= 1, side >= 4, classes >= 2, got ({count}, {side}, {classes})"
        )
    if noise < 0:
        raise ConfigError(f"noise must be non-negative, got {noise}")
    rng = stream(seed, "synthetic", kind)
    labels = rng.permutation(np.arange(count) % classes).astype(np.int64)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    center = (side - 1) / 2.0
    images = np.zeros((count, 1, side, side))
    for i in range(count):
        c = labels[i]
        r = rng.uniform()
        if kind == "gauss_blobs":
            angle = 2.0 * np.pi * c / classes + rng.uniform(-0.25, 0.25)
            radius = side / 3.2
            cy = center + radius * np.sin(angle)
            cx = center + radius * np.cos(angle)
            sigma = (side / 7.0) * (0.9 + 0.2 * r)
            amp = 0.7 + 0.3 * rng.uniform()
            images[i, 0] = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
        else:
            # class is carried by ring brightness normalized for radius, so
            # total ink is a position-invariant class feature every
            # architecture can read; radius and center are nuisance
            # variables, which keeps translated views of an input inside
            # the data distribution
            half = side / 2.0
            ref = 0.30 * half
            ring_r = (0.20 + 0.15 * r) * half
            width = 1.3 + 0.2 * rng.uniform()
            cy = center + rng.uniform(-2.0, 2.0)
            cx = center + rng.uniform(-2.0, 2.0)
            dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
            amp = (0.14 + 0.075 * c) * (ref / ring_r) * (1.0 + 0.06 * rng.uniform(-1, 1))
            ring = amp * np.exp(-((dist - ring_r) ** 2) / (2.0 * width**2))
            # class-independent distractor arc with random brightness:
            # clutter that adds ink noise, so total brightness alone does
            # not settle the class and margins stay moderate
            arc_r = (0.30 + 0.30 * rng.uniform()) * half
            arc_cy = center + rng.uniform(-2.0, 2.0)
            arc_cx = center + rng.uniform(-2.0, 2.0)
            arc_dist = np.sqrt((yy - arc_cy) ** 2 + (xx - arc_cx) ** 2)
            theta = np.arctan2(yy - arc_cy, xx - arc_cx)
            phase = rng.uniform(-np.pi, np.pi)
            lobe = np.exp(2.0 * (np.cos(theta - phase) - 1.0))
            arc_amp = 0.4 * (0.14 + 0.075 * (classes - 1) * rng.uniform()) * (ref / arc_r)
            arc = arc_amp * lobe * np.exp(-((arc_dist - arc_r) ** 2) / (2.0 * width**2))
            images[i, 0] = 0.08 + ring + arc
    if noise > 0:
        images = images + noise * rng.standard_normal(images.shape)
    images = np.clip(images, 0.0, 1.0)
    return Dataset(
        images=images,
        labels=labels,
        classes=classes,
        name=name or f"{kind}{side}",
        provenance={
            "kind": kind,
            "count": count,
            "side": side,
            "classes": classes,
            "seed": int(seed),
            "noise": noise,
        },
    )


def _write_tensor(handle, array):
    array = np.ascontiguousarray(array, dtype=np.float64)
    handle.write(struct.pack("<B", array.ndim))
    for dim in array.shape:
        handle.write(struct.pack("<I", dim))
    handle.write(array.astype("<f8").tobytes())


def _read_tensor(raw, offset, path):
    if offset >= len(raw):
        raise DataError(f"{path}: truncated archive (missing tensor record)")
    rank = raw[offset]
    offset += 1
    if offset + 4 * rank > len(raw):
        raise DataError(f"{path}: truncated archive (tensor dims)")
    dims = struct.unpack_from(f"<{rank}I", raw, offset) if rank else ()
    offset += 4 * rank
    size = int(np.prod(dims)) if rank else 1
    nbytes = size * 8
    if offset + nbytes > len(raw):
        raise DataError(f"{path}: truncated archive (tensor payload)")
    array = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(dims)
    return array.astype(np.float64), offset + nbytes


def write_adversary_archive(batch, path):
    """Write an adversary batch to a bit-exact binary archive.

    Validates the perturbation-ball and pixel-range invariants before
    any bytes are written, so a violating batch never reaches disk.
    """
    batch.validate()
    tensors = [("originals", batch.originals), ("adversaries", batch.adversaries)]
    if batch.s1_adversaries is not None:
        tensors.append(("s1_adversaries", batch.s1_adversaries))
    header = {
        "version": _ARCHIVE_VERSION,
        "attack": batch.attack,
        "source": batch.source,
        "strategy": batch.config.strategy,
        "labels": [int(v) for v in batch.labels],
        "config": batch.config.to_dict(),
        "tensors": [name for name, _ in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(_ARCHIVE_MAGIC)
        handle.write(struct.pack("<B", _ARCHIVE_VERSION))
        handle.write(struct.pack("<I", len(blob)))
        handle.write(blob)
        for _, array in tensors:
            _write_tensor(handle, array)


def read_adversary_archive(path):
    """Read an adversary archive, re-checking the ball invariant.

    A tampered file whose perturbations exceed the stored budget raises
    InvariantViolation; malformed bytes raise DataError.
    """
    with open(path, "rb") as handle:
        raw = handle.read()
    if len(raw) < len(_ARCHIVE_MAGIC) + 5 or raw[: len(_ARCHIVE_MAGIC)] != _ARCHIVE_MAGIC:
        raise DataError(f"{path}: not an adversary archive (bad magic)")
    offset = len(_ARCHIVE_MAGIC)
    version = raw[offset]
    offset += 1
    if version != _ARCHIVE_VERSION:
        raise DataError(f"{path}: unsupported archive version {version}")
    (blob_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if offset + blob_len > len(raw):
        raise DataError(f"{path}: truncated archive header")
    try:
        header = json.loads(raw[offset : offset + blob_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable archive header: {exc}") from exc
    offset += blob_len
    try:
        attack = header["attack"]
        labels = np.asarray(header["labels"], dtype=np.int64)
        config = AttackConfig.from_dict(header["config"])
        tensor_names = list(header["tensors"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: incomplete archive header: {exc}") from exc
    if attack not in ATTACK_KINDS:
        raise DataError(f"{path}: unknown attack kind {attack!r}")
    if header.get("strategy") not in STRATEGIES:
        raise DataError(f"{path}: unknown strategy {header.get('strategy')!r}")
    arrays = {}
    for tensor_name in tensor_names:
        arrays[tensor_name], offset = _read_tensor(raw, offset, path)
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes after tensor records")
    if "originals" not in arrays or "adversaries" not in arrays:
        raise DataError(f"{path}: archive is missing originals or adversaries tensors")
    count = arrays["originals"].shape[0] if arrays["originals"].ndim else 0
    for tensor_name, array in arrays.items():
        if array.ndim == 0 or array.shape[0] != count:
            raise DataError(
                f"{path}: tensor {tensor_name} holds {array.shape} entries, expected {count}"
            )
    if labels.shape != (count,):
        raise DataError(f"{path}: {labels.shape[0]} labels for {count} inputs")
    batch = AdversaryBatch(
        originals=arrays["originals"],
        adversaries=arrays["adversaries"],
        labels=labels,
        config=config,
        attack=attack,
        s1_adversaries=arrays.get("s1_adversaries"),
        source=str(header.get("source", "")),
    )
    batch.validate()
    return batch
