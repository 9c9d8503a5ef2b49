import math

import numpy as np
import pytest
import torch

from core.acoustic_model import build_model
from core.config import ModelConfig
from core.evaluation import (
    EvalReport, compare_runs, eval_set_digest, evaluate_frame_accuracy, format_relative,
    infer_posteriors, weighted_class_delta,
)
from core.exceptions import ComparisonError, EvalInputError, ShapeError
from core.features import FeatureMatrix, Utterance, output_frame_count

CFG = ModelConfig(num_blocks=1, model_dim=16, num_heads=2, ffn_dim=32, num_classes=32,
                  max_rel_dist=4, input_dim=16, init_std=0.1)


def random_features(uid, num_frames, rng, dim=16):
    return Utterance(uid, FeatureMatrix(rng.standard_normal((num_frames, dim))))


def random_labelled(uid, num_frames, rng, num_classes=32):
    utterance = random_features(uid, num_frames, rng)
    return Utterance(uid, utterance.features, rng.integers(num_classes, size=output_frame_count(num_frames)))


@pytest.fixture
def model():
    return build_model(CFG, seed=0)


@pytest.fixture
def eval_set():
    rng = np.random.default_rng(3)
    return [random_labelled(f"E{i:03d}", int(rng.integers(9, 30)), rng) for i in range(12)]


def report(correct, frames, digest="e" * 16):
    correct, frames = list(correct), list(frames)
    return EvalReport(
        frame_accuracy=sum(correct) / sum(frames), num_frames=sum(frames), num_correct=sum(correct),
        per_class_correct=correct, per_class_frames=frames, eval_digest=digest,
    )


def test_labels_equal_to_argmax_score_one(model, eval_set):
    perfect = [
        Utterance(u.id, u.features, infer_posteriors(model, u).argmax(axis=-1)) for u in eval_set
    ]
    result = evaluate_frame_accuracy(model, perfect)
    assert result.frame_accuracy == 1.0
    assert result.num_frames == sum(u.num_output_frames for u in eval_set)
    assert result.num_utterances == len(eval_set)


def test_accuracy_ignores_utterance_order(model, eval_set):
    forward = evaluate_frame_accuracy(model, eval_set)
    backward = evaluate_frame_accuracy(model, list(reversed(eval_set)))
    assert forward == backward
    assert eval_set_digest(eval_set) == eval_set_digest(eval_set[::-1])


def test_eval_digest_tracks_labels(eval_set):
    changed = list(eval_set)
    first = changed[0]
    changed[0] = Utterance(first.id, first.features, (first.labels + 1) % 32)
    assert eval_set_digest(changed) != eval_set_digest(eval_set)


def test_unlabelled_eval_input_is_rejected(model, eval_set):
    with pytest.raises(EvalInputError):
        evaluate_frame_accuracy(model, eval_set + [eval_set[0].unlabelled()])


def test_feature_dim_mismatch_is_rejected(model):
    with pytest.raises(ShapeError):
        infer_posteriors(model, random_features("X", 12, np.random.default_rng(0), dim=8))


def test_inference_ignores_contrastive_heads(model, eval_set):
    before = [infer_posteriors(model, u) for u in eval_set]
    with torch.no_grad():
        for name, parameter in model.named_parameters():
            if name not in model.inference_parameter_names():
                parameter.zero_()
    after = [infer_posteriors(model, u) for u in eval_set]
    assert all(np.array_equal(a, b) for a, b in zip(before, after))


def test_zero_projection_gives_uniform_posteriors(model, eval_set):
    with torch.no_grad():
        model.projection.weight.zero_()
        model.projection.bias.zero_()
    posteriors = infer_posteriors(model, eval_set[0])
    np.testing.assert_allclose(posteriors, np.full_like(posteriors, 1 / 32), rtol=1e-6)


def test_inference_is_repeatable(model, eval_set):
    first = infer_posteriors(model, eval_set[1])
    second = infer_posteriors(model, eval_set[1])
    assert np.array_equal(first, second)
    np.testing.assert_allclose(first.sum(axis=-1), 1.0, rtol=1e-5)


def test_random_labels_score_near_chance(model):
    rng = np.random.default_rng(11)
    utterances = [random_labelled(f"R{i:03d}", 241, rng) for i in range(100)]
    result = evaluate_frame_accuracy(model, utterances)
    assert result.num_frames >= 10_000
    chance = 1 / 32
    sigma = math.sqrt(chance * (1 - chance) / result.num_frames)
    assert abs(result.frame_accuracy - chance) <= 3 * sigma


def test_identical_reports_compare_to_zero():
    a = report([5, 3], [10, 10])
    comparison = compare_runs(a, a)
    assert comparison.absolute_delta == 0.0
    assert comparison.relative_delta == 0.0
    assert "relative delta: +0.00%" in comparison.format()


def test_relative_delta_is_taken_over_run_a():
    a = report([30, 20], [50, 50])
    b = report([32, 23], [50, 50])
    comparison = compare_runs(a, b)
    assert comparison.relative_delta == pytest.approx(0.10)
    assert comparison.format(2).splitlines()[-1] == "relative delta: +10.00%"
    assert comparison.per_class_deltas == pytest.approx([0.04, 0.06])


def test_per_class_deltas_weight_to_the_absolute_delta():
    a = report([4, 10, 0, 7], [8, 20, 3, 9])
    b = report([6, 9, 2, 7], [8, 20, 3, 9])
    comparison = compare_runs(a, b)
    assert weighted_class_delta(comparison, a) == pytest.approx(comparison.absolute_delta)


def test_zero_baseline_has_no_relative_delta():
    comparison = compare_runs(report([0, 0], [5, 5]), report([1, 0], [5, 5]))
    assert math.isnan(comparison.relative_delta)
    assert format_relative(comparison.relative_delta) == "n/a"


def test_different_eval_sets_cannot_be_compared():
    with pytest.raises(ComparisonError):
        compare_runs(report([1], [2], digest="a" * 16), report([1], [2], digest="b" * 16))


def test_report_survives_save_and_load(tmp_path):
    original = report([4, 0], [8, 0])
    original.checkpoint_id = "c" * 16
    path = original.save(tmp_path / "report.json")
    loaded = EvalReport.load(path)
    assert loaded == original
    assert loaded.per_class_accuracy == [0.5, None]


def test_garbage_report_is_rejected(tmp_path):
    path = tmp_path / "report.json"
    path.write_text('{"frame_accuracy": 1}', encoding="utf-8")
    with pytest.raises(EvalInputError):
        EvalReport.load(path)
