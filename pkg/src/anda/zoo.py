"""Desk-scale classifiers: architectures, deterministic training,
prediction, and bit-exact checkpoint serialization.

Three architecture families (a softmax linear model, a relu MLP, and a
small convolutional net) provide the white-box sources and black-box
transfer targets. Training is plain mini-batch gradient descent on mean
cross-entropy, bit-deterministic for a fixed seed.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import grad
from .errors import ConfigError, DataError, ModelError, TrainingError
from .rng import stream

KINDS = ("softmax_linear", "mlp", "small_cnn")

_MAGIC = b"ANDAMODL"
_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    """Architecture descriptor: kind, input shape, classes, width plans."""

    kind: str
    input_shape: tuple
    classes: int
    hidden: tuple = (48,)
    channels: tuple = (6, 12)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"architecture kind must be one of {KINDS}, got {self.kind!r}")
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(s) for s in self.hidden))
        object.__setattr__(self, "channels", tuple(int(s) for s in self.channels))
        if len(self.input_shape) != 3 or any(s < 1 for s in self.input_shape):
            raise ConfigError(f"input_shape must be (channels, height, width), got {self.input_shape}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.kind == "mlp" and (not self.hidden or any(h < 1 for h in self.hidden)):
            raise ConfigError(f"mlp needs positive hidden sizes, got {self.hidden}")
        if self.kind == "small_cnn":
            if not self.channels or any(c < 1 for c in self.channels):
                raise ConfigError(f"small_cnn needs positive channel counts, got {self.channels}")
            shrink = 2 ** len(self.channels)
            if self.input_shape[1] % shrink or self.input_shape[2] % shrink:
                raise ConfigError(
                    f"small_cnn with {len(self.channels)} pooling stages needs sides divisible "
                    f"by {shrink}, got {self.input_shape}"
                )


def _layer_plan(arch):
    """Ordered (name, shape, fan_in) for every weight tensor of the model."""
    c, h, w = arch.input_shape
    flat = c * h * w
    plan = []
    if arch.kind == "softmax_linear":
        plan.append(("w_out", (arch.classes, flat), flat))
        plan.append(("b_out", (arch.classes,), flat))
    elif arch.kind == "mlp":
        previous = flat
        for j, width in enumerate(arch.hidden):
            plan.append((f"w{j}", (width, previous), previous))
            plan.append((f"b{j}", (width,), previous))
            previous = width
        plan.append(("w_out", (arch.classes, previous), previous))
        plan.append(("b_out", (arch.classes,), previous))
    else:
        previous, side_h, side_w = c, h, w
        for j, filters in enumerate(arch.channels):
            fan = previous * 9
            plan.append((f"conv{j}", (filters, previous, 3, 3), fan))
            plan.append((f"cbias{j}", (filters,), fan))
            previous = filters
            side_h //= 2
            side_w //= 2
        flat = previous * side_h * side_w
        plan.append(("w_out", (arch.classes, flat), flat))
        plan.append(("b_out", (arch.classes,), flat))
    return plan


def weight_count(arch):
    return int(sum(np.prod(shape) for _, shape, _ in _layer_plan(arch)))


def init_weights(arch, seed):
    """Uniform fan-in-scaled initialization, deterministic per seed."""
    rng = stream(seed, "init")
    parts = []
    for _, shape, fan_in in _layer_plan(arch):
        bound = 1.0 / np.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size=int(np.prod(shape))))
    return np.concatenate(parts)


def build_graph(arch, weights):
    """Wire the architecture into an op graph around the given flat weights."""
    weights = np.asarray(weights, dtype=np.float64)
    expected = weight_count(arch)
    if weights.shape != (expected,):
        raise ModelError(f"expected {expected} weights for {arch.kind}, got shape {weights.shape}")
    graph = grad.Graph(arch.input_shape)
    offset = 0
    slots = {}
    for name, shape, _ in _layer_plan(arch):
        size = int(np.prod(shape))
        slots[name] = graph.add_weight(weights[offset : offset + size].reshape(shape), name)
        offset += size
    node = graph.input_index
    if arch.kind == "softmax_linear":
        node = graph.add_flatten(node)
        node = graph.add_matmul(node, slots["w_out"])
        node = graph.add_bias(node, slots["b_out"])
    elif arch.kind == "mlp":
        node = graph.add_flatten(node)
        for j in range(len(arch.hidden)):
            node = graph.add_matmul(node, slots[f"w{j}"])
            node = graph.add_bias(node, slots[f"b{j}"])
            node = graph.add_relu(node)
        node = graph.add_matmul(node, slots["w_out"])
        node = graph.add_bias(node, slots["b_out"])
    else:
        for j in range(len(arch.channels)):
            node = graph.add_conv2d(node, slots[f"conv{j}"])
            node = graph.add_bias(node, slots[f"cbias{j}"])
            node = graph.add_relu(node)
            node = graph.add_avgpool(node, 2)
        node = graph.add_flatten(node)
        node = graph.add_matmul(node, slots["w_out"])
        node = graph.add_bias(node, slots["b_out"])
    return graph


@dataclass(frozen=True)
class Checkpoint:
    """Architecture, flat weights, and training metadata."""

    arch: Architecture
    weights: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = weight_count(self.arch)
        if self.weights.shape != (expected,):
            raise ModelError(
                f"checkpoint weight count {self.weights.shape} does not match the architecture "
                f"(expected {expected})"
            )

    def graph(self):
        return build_graph(self.arch, self.weights)


def _resolve_graph(model):
    return model.graph() if isinstance(model, Checkpoint) else model


def predict_batch(model, images, chunk=512):
    """Argmax class per image (ties go to the lowest class index)."""
    graph = _resolve_graph(model)
    images = np.asarray(images, dtype=np.float64)
    out = []
    for start in range(0, images.shape[0], chunk):
        logits = grad.forward_batch(graph, images[start : start + chunk])
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def predict(model, x):
    """Predicted class index for one input."""
    return int(predict_batch(model, np.asarray(x, dtype=np.float64)[None])[0])


def accuracy(model, images, labels):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DataError("cannot score an empty dataset")
    return float(np.mean(predict_batch(model, images) == labels))


def train_classifier(
    dataset,
    arch,
    epochs,
    learning_rate,
    seed,
    batch_size=64,
    test_dataset=None,
    label_smoothing=0.0,
):
    """Mini-batch gradient descent on mean cross-entropy.

    Deterministic for a fixed seed (init and shuffling use derived
    streams). label_smoothing caps how confident the fitted model can
    get, which keeps loss gradients comparable in size across inputs.
    Raises TrainingError if the loss or the weights stop being finite.
    The returned checkpoint's metadata carries the final train and test
    accuracies plus a per-epoch history.
    """
    images = np.asarray(dataset.images, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    if images.shape[0] == 0:
        raise DataError("training dataset is empty")
    if labels.min() < 0 or labels.max() >= arch.classes:
        raise DataError(
            f"labels must lie in [0, {arch.classes}), got range [{labels.min()}, {labels.max()}]"
        )
    if epochs < 0:
        raise ConfigError(f"epochs must be non-negative, got {epochs}")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")

    weights = init_weights(arch, seed)
    shuffle = stream(seed, "shuffle")
    history = []
    for epoch in range(epochs):
        # step decay by thirds keeps late epochs from undoing convergence
        rate = learning_rate * 0.5 ** (epoch * 3 // max(epochs, 1))
        order = shuffle.permutation(images.shape[0])
        batch_losses = []
        for start in range(0, images.shape[0], batch_size):
            take = order[start : start + batch_size]
            graph = build_graph(arch, weights)
            loss, grads = grad.parameter_gradients(
                graph, images[take], labels[take], label_smoothing=label_smoothing
            )
            if not np.isfinite(loss):
                raise TrainingError(f"training diverged at epoch {epoch}: loss is {loss}")
            flat = np.concatenate([g.reshape(-1) for g in grads])
            weights = weights - rate * flat
            if not np.all(np.isfinite(weights)):
                raise TrainingError(f"training diverged at epoch {epoch}: non-finite weights")
            batch_losses.append(loss)
        snapshot = build_graph(arch, weights)
        history.append(
            {
                "epoch": epoch,
                "mean_loss": float(np.mean(batch_losses)),
                "train_accuracy": accuracy(snapshot, images, labels),
            }
        )

    final_graph = build_graph(arch, weights)
    metadata = {
        "seed": int(seed),
        "epochs": int(epochs),
        "learning_rate": float(learning_rate),
        "batch_size": int(batch_size),
        "label_smoothing": float(label_smoothing),
        "final_train_accuracy": accuracy(final_graph, images, labels),
        "final_test_accuracy": (
            accuracy(final_graph, test_dataset.images, test_dataset.labels)
            if test_dataset is not None
            else None
        ),
        "history": history,
    }
    return Checkpoint(arch=arch, weights=weights, metadata=metadata)


def save_checkpoint(checkpoint, path):
    """Write the bit-exact checkpoint file (magic ANDAMODL, little-endian)."""
    header = {
        "kind": checkpoint.arch.kind,
        "input_shape": list(checkpoint.arch.input_shape),
        "classes": checkpoint.arch.classes,
        "hidden": list(checkpoint.arch.hidden),
        "channels": list(checkpoint.arch.channels),
        "metadata": checkpoint.metadata,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(_MAGIC)
        handle.write(struct.pack("<B", _VERSION))
        handle.write(struct.pack("<I", len(blob)))
        handle.write(blob)
        handle.write(struct.pack("<Q", checkpoint.weights.size))
        handle.write(checkpoint.weights.astype("<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint, rejecting malformed bytes with structured errors."""
    with open(path, "rb") as handle:
        raw = handle.read()
    if len(raw) < len(_MAGIC) + 5 or raw[: len(_MAGIC)] != _MAGIC:
        raise DataError(f"{path}: not a model checkpoint (bad magic)")
    offset = len(_MAGIC)
    version = raw[offset]
    offset += 1
    if version != _VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if offset + blob_len > len(raw):
        raise DataError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(raw[offset : offset + blob_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable checkpoint header: {exc}") from exc
    offset += blob_len
    if offset + 8 > len(raw):
        raise DataError(f"{path}: truncated checkpoint (missing weight count)")
    (count,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    expected_bytes = count * 8
    if len(raw) - offset != expected_bytes:
        raise DataError(
            f"{path}: weight payload is {len(raw) - offset} bytes, expected {expected_bytes}"
        )
    try:
        arch = Architecture(
            kind=header["kind"],
            input_shape=tuple(header["input_shape"]),
            classes=int(header["classes"]),
            hidden=tuple(header.get("hidden", ())) or (48,),
            channels=tuple(header.get("channels", ())) or (6, 12),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: incomplete checkpoint header: {exc}") from exc
    if count != weight_count(arch):
        raise DataError(
            f"{path}: weight count {count} does not match the declared architecture "
            f"({weight_count(arch)} expected)"
        )
    weights = np.frombuffer(raw[offset:], dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(weights)):
        raise DataError(f"{path}: checkpoint weights contain non-finite values")
    return Checkpoint(arch=arch, weights=weights, metadata=header.get("metadata", {}))
