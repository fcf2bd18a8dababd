"""Success rates, transfer matrices, histograms, and report writers."""

import json

import numpy as np
import pytest

from anda import evaluate, grad, zoo
from anda.attack import (
    AdversaryBatch,
    AttackConfig,
    PerturbationPosterior,
    attack_batch,
    clip_to_ball,
)
from anda.errors import ConfigError, DataError


def _scalar_model(weights, bias):
    """Two-class model over a single scalar input."""
    graph = grad.Graph((1,))
    w = graph.add_weight(np.asarray(weights, dtype=np.float64).reshape(2, 1), name="w")
    node = graph.add_matmul(graph.input_index, w)
    b = graph.add_weight(np.asarray(bias, dtype=np.float64), name="b")
    graph.add_bias(node, b)
    return graph


# predicts 1 below 0.25, 0 at or above
def _low_detector():
    return _scalar_model([2.0, 0.0], [0.0, 0.5])


# predicts 1 for any positive input
def _always_one():
    return _scalar_model([0.0, 1.0], [0.0, 0.0])


def _zero_step_config():
    return AttackConfig(epsilon=255.0, steps=1, step_size=127.5, aug_count=1, augmax=0.0, seed=0)


def test_attack_success_rate_extremes():
    model = _low_detector()
    assert evaluate.attack_success_rate([[0.9]], [0], model) == 0.0
    assert evaluate.attack_success_rate([[0.9]], [1], model) == 1.0


def test_attack_success_rate_fraction():
    model = _low_detector()
    adversaries = [[0.1], [0.1], [0.1], [0.9], [0.9], [0.9], [0.9], [0.9]]
    labels = [1, 0, 0, 0, 0, 0, 0, 1]
    # fooled: rows 1, 2 (predict 1, label 0) and row 7 (predict 0, label 1)
    assert evaluate.attack_success_rate(adversaries, labels, model) == 3.0 / 8.0


def test_attack_success_rate_validation():
    model = _low_detector()
    with pytest.raises(DataError):
        evaluate.attack_success_rate([[0.1], [0.2]], [0], model)
    with pytest.raises(DataError):
        evaluate.attack_success_rate(np.zeros((0, 1)), [], model)


def _identity_batch(originals, labels, source):
    return AdversaryBatch(
        originals=np.asarray(originals, dtype=np.float64),
        adversaries=np.asarray(originals, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
        config=_zero_step_config(),
        attack="bim",
        source=source,
    )


def test_transfer_matches_clean_misclassification():
    originals = [[0.1], [0.3], [0.6], [0.9]]
    labels = [1, 1, 0, 0]
    batches = [
        ("a", _identity_batch(originals, labels, "a")),
        ("b", _identity_batch(originals, labels, "b")),
    ]
    targets = [("a", _low_detector()), ("b", _always_one())]
    report = evaluate.transfer_from_batches(batches, targets)
    # unperturbed adversaries score exactly the clean misclassification rate
    for name, model in targets:
        clean = float(np.mean(zoo.predict_batch(model, np.asarray(originals)) != labels))
        assert report.cell("a", name) == clean
        assert report.cell("b", name) == clean
    assert np.all(report.denominators == 4)
    assert np.array_equal(report.whitebox, np.eye(2, dtype=bool))


def test_transfer_whitebox_falls_back_to_row_name():
    originals = [[0.9]]
    batches = [("a", _identity_batch(originals, [0], "")), ("b", _identity_batch(originals, [0], ""))]
    targets = [("a", _low_detector()), ("b", _always_one())]
    report = evaluate.transfer_from_batches(batches, targets)
    assert np.array_equal(report.whitebox, np.eye(2, dtype=bool))


def test_transfer_correct_only_denominators():
    originals = [[0.1], [0.3], [0.6], [0.9]]
    labels = [1, 1, 0, 0]
    batches = [("a", _identity_batch(originals, labels, "a"))]
    targets = [("low", _low_detector()), ("one", _always_one())]
    report = evaluate.transfer_from_batches(batches, targets, correct_only=True)
    # low detector is correct on 3 clean inputs, always-one on 2
    assert report.denominators[0, 0] == 3
    assert report.denominators[0, 1] == 2
    # identity adversaries cannot fool a target that was correct
    assert np.all(report.numerators == 0)
    assert np.all(report.asr == 0.0)


def test_transfer_rejects_empty_batches():
    empty = AdversaryBatch(
        originals=np.zeros((0, 1)),
        adversaries=np.zeros((0, 1)),
        labels=np.zeros(0, dtype=np.int64),
        config=_zero_step_config(),
        attack="bim",
    )
    with pytest.raises(DataError):
        evaluate.transfer_from_batches([("a", empty)], [("t", _low_detector())])
    with pytest.raises(DataError):
        evaluate.transfer_from_batches([], [("t", _low_detector())])


def test_transfer_report_validation():
    ok = dict(
        sources=("a",),
        targets=("t",),
        asr=np.array([[0.5]]),
        numerators=np.array([[1]]),
        denominators=np.array([[2]]),
        whitebox=np.array([[False]]),
    )
    evaluate.TransferReport(**ok)
    with pytest.raises(DataError):
        evaluate.TransferReport(**{**ok, "asr": np.array([[0.6]])})
    with pytest.raises(DataError):
        evaluate.TransferReport(**{**ok, "denominators": np.array([[0]]), "numerators": np.array([[0]])})
    with pytest.raises(DataError):
        evaluate.TransferReport(**{**ok, "asr": np.array([[0.5, 0.5]])})


def test_transfer_report_serializes_to_plain_json():
    report = evaluate.TransferReport(
        sources=("a",),
        targets=("t", "u"),
        asr=np.array([[0.5, 0.25]]),
        numerators=np.array([[2, 1]]),
        denominators=np.array([[4, 4]]),
        whitebox=np.array([[True, False]]),
    )
    payload = json.loads(json.dumps(report.to_dict()))
    assert payload["asr"] == [[0.5, 0.25]]
    assert payload["whitebox"] == [[True, False]]
    assert report.cell("a", "u") == 0.25


def test_fool_histogram_single_model_all_fooled():
    adversaries = [[0.1], [0.1], [0.1]]
    hist = evaluate.fool_count_histogram(adversaries, [0, 0, 0], [_low_detector()])
    assert hist.buckets == (0, 3)
    assert hist.total == 3


def test_fool_histogram_no_models():
    hist = evaluate.fool_count_histogram([[0.1], [0.9]], [0, 0], [])
    assert hist.buckets == (2,)


def test_fool_histogram_two_models_enumerated():
    # always-zero model: both logits constant, ties resolve to class 0
    always_zero = _scalar_model([0.0, 0.0], [0.0, 0.0])
    low = _low_detector()
    adversaries = [[0.9], [0.1], [0.9]]
    labels = [0, 0, 1]
    # 0.9/label 0: both correct; 0.1/label 0: low says 1; 0.9/label 1: both say 0
    hist = evaluate.fool_count_histogram(adversaries, labels, [low, always_zero])
    assert hist.buckets == (1, 1, 1)
    assert hist.total == 3


def test_fool_histogram_dropping_a_model_never_raises_counts():
    rng = np.random.default_rng(0)
    adversaries = rng.uniform(0.0, 1.0, size=(30, 1))
    labels = rng.integers(0, 2, size=30)
    both = evaluate.fool_count_histogram(adversaries, labels, [_low_detector(), _always_one()])
    one = evaluate.fool_count_histogram(adversaries, labels, [_low_detector()])
    assert both.total == one.total == 30
    # the never-fooled bucket can only grow when a model is removed
    assert one.buckets[0] >= both.buckets[0]


def _zero_deviation_posterior(mean, anchor, count=3):
    mean = np.asarray(mean, dtype=np.float64)
    return PerturbationPosterior(
        mean=mean,
        deviations=np.zeros((mean.shape[0], count)),
        count=count,
        anchor=np.asarray(anchor, dtype=np.float64),
    )


def test_sampled_asr_zero_deviation_matches_final_iterates():
    config = _zero_step_config()
    originals = np.array([[0.5], [0.5], [0.5]])
    labels = np.array([0, 0, 1])
    posteriors = [
        _zero_deviation_posterior([2.0], [0.6]),
        _zero_deviation_posterior([-2.0], [0.6]),
        _zero_deviation_posterior([1.0], [0.4]),
    ]
    s1 = np.stack(
        [
            clip_to_ball(
                p.anchor + config.alpha01 * np.sign(p.mean).reshape(p.anchor.shape),
                originals[i],
                config.eps01,
            )
            for i, p in enumerate(posteriors)
        ]
    )
    targets = [("low", _low_detector()), ("one", _always_one())]
    rows = evaluate.sampled_asr(posteriors, originals, labels, s1, config, targets, sample_count=5)
    for row in rows:
        # zero deviations collapse every draw onto the final iterate
        assert row["sampled_asr"] == row["s1_asr"]
        if row["conditioned_count"]:
            assert row["conditioned_sampled_asr"] == 1.0
            assert row["conditioned_s1_asr"] == 1.0
    assert rows[0]["s1_asr"] == 2.0 / 3.0
    assert rows[0]["conditioned_count"] == 2


def test_sampled_asr_unconditioned_when_nothing_fools():
    config = _zero_step_config()
    posterior = _zero_deviation_posterior([2.0], [0.6])
    s1 = clip_to_ball(posterior.anchor + 0.5, np.array([0.5]), config.eps01)[None]
    rows = evaluate.sampled_asr(
        [posterior], np.array([[0.5]]), np.array([0]), s1, config, [("low", _low_detector())],
        sample_count=2,
    )
    assert rows[0]["conditioned_sampled_asr"] is None
    assert rows[0]["conditioned_s1_asr"] is None
    assert rows[0]["conditioned_count"] == 0


def test_sampled_asr_is_deterministic():
    rng = np.random.default_rng(5)
    config = _zero_step_config()
    posteriors = [
        PerturbationPosterior(
            mean=rng.standard_normal(4),
            deviations=rng.standard_normal((4, 6)),
            count=6,
            anchor=rng.uniform(0.3, 0.7, size=4),
        )
        for _ in range(3)
    ]
    originals = rng.uniform(0.3, 0.7, size=(3, 4))
    labels = np.array([0, 1, 0])
    s1 = originals.copy()
    graph = grad.Graph((4,))
    w = graph.add_weight(rng.standard_normal((2, 4)), name="w")
    graph.add_matmul(graph.input_index, w)
    first = evaluate.sampled_asr(posteriors, originals, labels, s1, config, [("t", graph)], 4)
    second = evaluate.sampled_asr(posteriors, originals, labels, s1, config, [("t", graph)], 4)
    assert first == second


def test_sampled_asr_validation():
    config = _zero_step_config()
    posterior = _zero_deviation_posterior([1.0], [0.5])
    with pytest.raises(DataError):
        evaluate.sampled_asr([], np.zeros((0, 1)), [], np.zeros((0, 1)), config, [("t", _low_detector())])
    with pytest.raises(DataError):
        evaluate.sampled_asr(
            [posterior], np.zeros((2, 1)), [0, 0], np.zeros((2, 1)), config, [("t", _low_detector())]
        )
    with pytest.raises(ConfigError):
        evaluate.sampled_asr(
            [posterior], np.full((1, 1), 0.5), [0], np.full((1, 1), 0.5), config,
            [("t", _low_detector())], sample_count=0,
        )


def test_sampled_rows_from_batch_match_recomputation(tiny_model, tiny_dataset):
    config = AttackConfig(
        epsilon=16.0, steps=2, aug_count=4, augmax=0.2, strategy="S2", sample_count=3, seed=3
    )
    images = tiny_dataset.images[:4]
    labels = tiny_dataset.labels[:4]
    batch = attack_batch(tiny_model, images, labels, "anda", config, source="self")
    rows = evaluate.sampled_asr_from_batch(batch, [("self", tiny_model)])
    s1_fooled = zoo.predict_batch(tiny_model, batch.s1_adversaries) != labels
    flat = batch.adversaries.reshape((12,) + batch.originals.shape[1:])
    fooled = (zoo.predict_batch(tiny_model, flat) != np.repeat(labels, 3)).reshape(4, 3)
    assert rows[0]["s1_asr"] == float(np.mean(s1_fooled))
    assert rows[0]["sampled_asr"] == float(np.mean(fooled))
    assert rows[0]["conditioned_count"] == int(s1_fooled.sum())
    if s1_fooled.any():
        assert rows[0]["conditioned_sampled_asr"] == float(np.mean(fooled[s1_fooled]))


def test_sampled_rows_reject_final_iterate_batches(tiny_model, tiny_dataset):
    config = AttackConfig(epsilon=16.0, steps=1, aug_count=1, augmax=0.0, seed=0)
    batch = attack_batch(tiny_model, tiny_dataset.images[:2], tiny_dataset.labels[:2], "bim", config)
    with pytest.raises(DataError):
        evaluate.sampled_asr_from_batch(batch, [("t", tiny_model)])


def test_transfer_csv_format(tmp_path):
    report = evaluate.TransferReport(
        sources=("a", "b"),
        targets=("a", "b"),
        asr=np.array([[0.25, 0.5], [0.25, 0.5]]),
        numerators=np.array([[1, 2], [1, 2]]),
        denominators=np.array([[4, 4], [4, 4]]),
        whitebox=np.eye(2, dtype=bool),
    )
    path = tmp_path / "transfer.csv"
    evaluate.write_transfer_csv(report, str(path))
    assert path.read_text(encoding="utf-8") == "source,a,b\na,25.0*,50.0\nb,25.0,50.0*\n"


def test_transfer_json_includes_provenance(tmp_path):
    report = evaluate.TransferReport(
        sources=("a",),
        targets=("t",),
        asr=np.array([[0.5]]),
        numerators=np.array([[2]]),
        denominators=np.array([[4]]),
        whitebox=np.array([[False]]),
    )
    path = tmp_path / "transfer.json"
    evaluate.write_transfer_json(report, str(path), provenance={"seed": 7})
    payload = json.loads(path.read_text(encoding="utf-8"))
    assert payload["asr"] == [[0.5]]
    assert payload["provenance"] == {"seed": 7}


def test_histogram_csv_format(tmp_path):
    path = tmp_path / "hist.csv"
    evaluate.write_histogram_csv(evaluate.FoolHistogram((2, 0, 1)), str(path))
    assert path.read_text(encoding="utf-8") == "fooled_models,count\n0,2\n1,0\n2,1\n"


def test_sampled_csv_format(tmp_path):
    rows = [
        {
            "target": "t",
            "s1_asr": 0.5,
            "sampled_asr": 0.42,
            "conditioned_sampled_asr": 0.9,
            "conditioned_s1_asr": 1.0,
            "conditioned_count": 5,
        },
        {
            "target": "u",
            "s1_asr": 0.0,
            "sampled_asr": 0.1,
            "conditioned_sampled_asr": None,
            "conditioned_s1_asr": None,
            "conditioned_count": 0,
        },
    ]
    path = tmp_path / "sampled.csv"
    evaluate.write_sampled_csv(rows, str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == (
        "target,s1_asr_percent,sampled_asr_percent,"
        "conditioned_sampled_asr_percent,conditioned_s1_asr_percent,conditioned_count"
    )
    assert lines[1] == "t,50.0,42.0,90.0,100.0,5"
    assert lines[2] == "u,0.0,10.0,,,0"


def test_ablation_csv_format(tmp_path):
    rows = [
        {
            "axis": "n",
            "value": "9",
            "source": "lin0",
            "target": "mlp0",
            "asr": 1.0 / 3.0,
            "numerator": 1,
            "denominator": 3,
        }
    ]
    path = tmp_path / "ablation.csv"
    evaluate.write_ablation_csv(rows, str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "axis,value,source,target,asr_percent,numerator,denominator"
    assert lines[1] == "n,9,lin0,mlp0,33.3,1,3"
