"""Classifier training, prediction, and checkpoint round trips."""

import numpy as np
import pytest

from anda import dataio, grad, zoo
from anda.errors import ConfigError, DataError, ModelError, TrainingError


def _logit_graph(logits):
    graph = grad.Graph((1,))
    w = graph.add_weight(np.asarray(logits, dtype=np.float64).reshape(-1, 1), name="w")
    graph.add_matmul(graph.input_index, w)
    return graph


def test_linear_model_separates_gaussian_blobs():
    train = dataio.generate_synthetic("gauss_blobs", 240, 6, 2, seed=21)
    test = dataio.generate_synthetic("gauss_blobs", 120, 6, 2, seed=22)
    arch = zoo.Architecture(kind="softmax_linear", input_shape=(1, 6, 6), classes=2)
    checkpoint = zoo.train_classifier(train, arch, epochs=12, learning_rate=0.5, seed=1)
    assert checkpoint.metadata["final_train_accuracy"] >= 0.99
    assert zoo.accuracy(checkpoint, test.images, test.labels) >= 0.95


def test_zero_epochs_returns_initialization(tiny_dataset, tiny_arch):
    checkpoint = zoo.train_classifier(tiny_dataset, tiny_arch, epochs=0, learning_rate=0.4, seed=5)
    assert np.array_equal(checkpoint.weights, zoo.init_weights(tiny_arch, seed=5))
    assert checkpoint.metadata["history"] == []


def test_training_is_bit_deterministic(tiny_dataset, tiny_arch):
    first = zoo.train_classifier(tiny_dataset, tiny_arch, epochs=2, learning_rate=0.4, seed=8)
    second = zoo.train_classifier(tiny_dataset, tiny_arch, epochs=2, learning_rate=0.4, seed=8)
    assert first.weights.tobytes() == second.weights.tobytes()
    other = zoo.train_classifier(tiny_dataset, tiny_arch, epochs=2, learning_rate=0.4, seed=9)
    assert first.weights.tobytes() != other.weights.tobytes()


def test_predict_takes_argmax():
    graph = _logit_graph([0.2, 0.9, 0.1])
    assert zoo.predict(graph, np.array([1.0])) == 1


def test_predict_breaks_ties_toward_lowest_class():
    graph = _logit_graph([0.5, 0.5, 0.1])
    assert zoo.predict(graph, np.array([1.0])) == 0


def test_predict_invariant_to_constant_logit_shift(tiny_model, tiny_test_dataset):
    images = tiny_test_dataset.images[:10]
    base = zoo.predict_batch(tiny_model, images)
    shifted_graph = tiny_model.graph()
    node = shifted_graph.output_index
    bias = shifted_graph.add_weight(np.full(tiny_model.arch.classes, 7.5), name="shift")
    shifted_graph.add_bias(node, bias)
    assert np.array_equal(zoo.predict_batch(shifted_graph, images), base)


def test_predict_batch_chunking_matches_single_predictions(tiny_model, tiny_test_dataset):
    images = tiny_test_dataset.images[:7]
    chunked = zoo.predict_batch(tiny_model, images, chunk=3)
    singles = np.array([zoo.predict(tiny_model, x) for x in images])
    assert np.array_equal(chunked, singles)


def test_accuracy_matches_prediction_mean(tiny_model, tiny_test_dataset):
    predictions = zoo.predict_batch(tiny_model, tiny_test_dataset.images)
    expected = float(np.mean(predictions == tiny_test_dataset.labels))
    assert zoo.accuracy(tiny_model, tiny_test_dataset.images, tiny_test_dataset.labels) == expected


def test_checkpoint_round_trip_is_bitwise(tmp_path, tiny_model):
    path = str(tmp_path / "model.ckpt")
    zoo.save_checkpoint(tiny_model, path)
    loaded = zoo.load_checkpoint(path)
    assert loaded.arch == tiny_model.arch
    assert loaded.weights.tobytes() == tiny_model.weights.tobytes()
    assert loaded.metadata == tiny_model.metadata
    # a second save of the loaded checkpoint reproduces the file bytes
    again = str(tmp_path / "again.ckpt")
    zoo.save_checkpoint(loaded, again)
    with open(path, "rb") as a, open(again, "rb") as b:
        assert a.read() == b.read()


def test_checkpoint_reader_rejects_bad_magic(tmp_path, tiny_model):
    path = str(tmp_path / "model.ckpt")
    zoo.save_checkpoint(tiny_model, path)
    with open(path, "rb") as handle:
        raw = bytearray(handle.read())
    raw[0] ^= 0xFF
    with open(path, "wb") as handle:
        handle.write(raw)
    with pytest.raises(DataError):
        zoo.load_checkpoint(path)


def test_checkpoint_reader_rejects_truncation(tmp_path, tiny_model):
    path = str(tmp_path / "model.ckpt")
    zoo.save_checkpoint(tiny_model, path)
    with open(path, "rb") as handle:
        raw = handle.read()
    with open(path, "wb") as handle:
        handle.write(raw[:-16])
    with pytest.raises(DataError):
        zoo.load_checkpoint(path)


def test_training_divergence_raises(tiny_dataset, tiny_arch):
    with pytest.raises(TrainingError):
        zoo.train_classifier(tiny_dataset, tiny_arch, epochs=3, learning_rate=1e200, seed=0)


def test_weight_count_matches_init_for_every_kind():
    for kind in zoo.KINDS:
        arch = zoo.Architecture(
            kind=kind, input_shape=(1, 8, 8), classes=4, hidden=(6, 5), channels=(2, 3)
        )
        weights = zoo.init_weights(arch, seed=1)
        assert weights.shape == (zoo.weight_count(arch),)
        graph = zoo.build_graph(arch, weights)
        assert graph.output_shape == (4,)


def test_architecture_validation():
    with pytest.raises(ConfigError):
        zoo.Architecture(kind="resnet", input_shape=(1, 8, 8), classes=3)
    with pytest.raises(ConfigError):
        zoo.Architecture(kind="mlp", input_shape=(1, 8, 8), classes=1)
    with pytest.raises(ConfigError):
        zoo.Architecture(kind="mlp", input_shape=(8, 8), classes=3)
    with pytest.raises(ConfigError):
        zoo.Architecture(kind="mlp", input_shape=(1, 8, 8), classes=3, hidden=())
    with pytest.raises(ConfigError):
        # two pooling stages cannot divide a 6-pixel side twice
        zoo.Architecture(kind="small_cnn", input_shape=(1, 6, 6), classes=3, channels=(2, 3))


def test_training_metadata_fields(tiny_model, tiny_arch):
    meta = tiny_model.metadata
    assert meta["seed"] == 5
    assert meta["epochs"] == 6
    assert len(meta["history"]) == 6
    assert 0.0 <= meta["final_train_accuracy"] <= 1.0
    assert meta["final_test_accuracy"] is None
    for row in meta["history"]:
        assert set(row) >= {"epoch", "mean_loss", "train_accuracy"}


def test_checkpoint_weight_count_validated(tiny_arch):
    with pytest.raises(ModelError):
        zoo.Checkpoint(arch=tiny_arch, weights=np.zeros(3))
