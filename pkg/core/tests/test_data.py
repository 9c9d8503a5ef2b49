import numpy as np
import pytest
import torch

from core.config import DataConfig
from core.data import (
    IGNORE_INDEX, BatchKind, BatchStream, SamplerConfig, apply_mask, collate, iterate_batches,
    limit_unlabelled, make_batches, plan_batch_masks, plan_masks, sample_batch_kind,
)
from core.exceptions import AlignmentError, ConfigurationError, ShapeError
from core.features import FeatureMatrix, Utterance, total_frames


def utterance(uid, num_frames, dim=4, labelled=True, fill=1.0):
    labels = np.zeros((num_frames - 3) // 2 + 1, dtype=np.int64) if labelled else None
    return Utterance(uid, FeatureMatrix(np.full((num_frames, dim), fill)), labels)


def test_masks_never_empty():
    for seed in range(200):
        plan = plan_masks(5, 0.0, 4, np.random.default_rng(seed))
        assert plan.num_masked == 1


def test_mask_spans_cover_following_frames():
    plan = plan_masks(20, 1.0, 3, np.random.default_rng(0))
    assert plan.mask.all()
    rng = np.random.default_rng(1)
    plan = plan_masks(1000, 0.05, 4, rng)
    starts = np.flatnonzero(np.diff(np.concatenate(([0], plan.mask.astype(int)))) == 1)
    assert all(plan.mask[s:s + 4].all() for s in starts if s + 4 <= 1000)


def test_mask_coverage_matches_span_expectation():
    p, span, n = 0.065, 10, 1000
    fractions = np.array([plan_masks(n, p, span, np.random.default_rng(seed)).mask.mean() for seed in range(200)])
    # A frame is covered unless none of the (up to) span starts before it fired.
    expected = np.mean([1.0 - (1.0 - p) ** min(i + 1, span) for i in range(n)])
    assert expected == pytest.approx(0.489, abs=0.01)
    assert abs(fractions.mean() - expected) < 4 * fractions.std() / np.sqrt(len(fractions))


def test_make_batches_splits_ten_into_four_four_two():
    utterances = [utterance(f"u{i}", 9) for i in range(10)]
    batches = make_batches(utterances, 4, np.random.default_rng(0))
    assert [b.size for b in batches] == [4, 4, 2]
    ids = [uid for b in batches for uid in b.utterance_ids]
    assert sorted(ids) == sorted(u.id for u in utterances)
    assert all(b.valid.all() for b in batches)


def test_make_batches_same_seed_same_composition():
    utterances = [utterance(f"u{i}", 7 + i) for i in range(10)]
    first = make_batches(utterances, 3, np.random.default_rng(5))
    second = make_batches(utterances, 3, np.random.default_rng(5))
    assert [b.utterance_ids for b in first] == [b.utterance_ids for b in second]


def test_make_batches_of_nothing_is_empty():
    assert make_batches([], 4, np.random.default_rng(0)) == []


def test_apply_mask_replaces_only_masked_frames():
    features = torch.arange(12, dtype=torch.float32).reshape(1, 3, 4)
    mask = torch.tensor([[False, True, False]])
    vector = torch.full((4,), -1.0)
    out = apply_mask(features, mask, vector)
    assert torch.equal(out[0, 1], vector)
    assert torch.equal(out[0, 0], features[0, 0])
    assert torch.equal(out[0, 2], features[0, 2])
    with pytest.raises(ShapeError):
        apply_mask(features, torch.zeros(1, 2, dtype=torch.bool), vector)


def test_collate_pads_and_marks_valid_frames():
    batch = collate([utterance("a", 5), utterance("b", 9)])
    assert batch.kind is BatchKind.LABELLED
    assert batch.features.shape == (2, 9, 4)
    assert batch.valid.sum(dim=1).tolist() == [5, 9]
    assert torch.all(batch.features[0, 5:] == 0)
    assert batch.labels.shape == (2, 4)
    assert batch.labels[0].tolist() == [0, 0, IGNORE_INDEX, IGNORE_INDEX]
    assert batch.output_lengths.tolist() == [2, 4]


def test_collate_mixed_is_unlabelled():
    batch = collate([utterance("a", 5), utterance("b", 7, labelled=False)])
    assert batch.kind is BatchKind.UNLABELLED
    assert batch.labels is None


def test_collate_rejects_misaligned_labels():
    bad = Utterance("a", FeatureMatrix(np.ones((9, 4))), np.zeros(3, dtype=np.int64))
    with pytest.raises(AlignmentError):
        collate([bad], BatchKind.LABELLED)


def test_sampler_fraction_within_three_sigma():
    cfg = SamplerConfig(p=0.5, seed=123)
    labelled = sum(sample_batch_kind(cfg, step) is BatchKind.LABELLED for step in range(1, 10001))
    assert abs(labelled / 10000 - 0.5) <= 0.015


@pytest.mark.parametrize("p,kind", [(0.0, BatchKind.UNLABELLED), (1.0, BatchKind.LABELLED)])
def test_sampler_degenerate_probabilities(p, kind):
    cfg = SamplerConfig(p=p, seed=9)
    assert all(sample_batch_kind(cfg, step) is kind for step in range(1, 2001))


def test_sampler_rejects_bad_probability():
    with pytest.raises(ConfigurationError):
        SamplerConfig(p=1.5)


def test_stream_requires_unlabelled_data_when_p_below_one():
    with pytest.raises(ConfigurationError):
        BatchStream([utterance("a", 5)], [], 2, SamplerConfig(p=0.5), 0)
    with pytest.raises(ConfigurationError):
        BatchStream([], [utterance("b", 5, labelled=False)], 2, SamplerConfig(p=0.5), 0)
    BatchStream([utterance("a", 5)], [], 2, SamplerConfig(p=1.0), 0)


def test_stream_cycles_through_every_utterance_each_epoch():
    labelled = [utterance(f"l{i}", 5 + i) for i in range(5)]
    stream = BatchStream(labelled, [], 2, SamplerConfig(p=1.0), 7)
    assert stream.batches_per_epoch(BatchKind.LABELLED) == 3
    epoch = [uid for i in range(3) for uid in stream.draw(BatchKind.LABELLED, i).utterance_ids]
    assert sorted(epoch) == sorted(u.id for u in labelled)


def test_schedule_counts_draws_per_kind():
    labelled = [utterance(f"l{i}", 5) for i in range(3)]
    unlabelled = [utterance(f"u{i}", 5, labelled=False) for i in range(3)]
    stream = BatchStream(labelled, unlabelled, 1, SamplerConfig(p=0.5, seed=4), 0)
    full = list(stream.schedule(1, 40))
    assert [step for step, _, _ in full] == list(range(1, 41))
    for kind in BatchKind:
        indices = [index for _, k, index in full if k is kind]
        assert indices == list(range(len(indices)))
    assert list(stream.schedule(21, 40)) == full[20:]


def test_batch_masks_give_every_utterance_two_masked_outputs():
    batch = collate([utterance("a", 5), utterance("b", 21)])
    masked = plan_batch_masks(batch, 0.0, 4, np.random.default_rng(0), min_positions=2)
    assert not (masked.mask & ~masked.valid).any()
    aligned = masked.mask[:, 1::2]
    assert aligned[0, :2].sum() == 2
    assert aligned[1, :10].sum() >= 2


def test_prefetch_does_not_change_batches():
    labelled = [utterance(f"l{i}", 7 + i, fill=float(i)) for i in range(6)]
    unlabelled = [utterance(f"u{i}", 9 + i, labelled=False, fill=float(-i)) for i in range(6)]
    cfg = DataConfig()

    def run(depth):
        stream = BatchStream(labelled, unlabelled, 2, SamplerConfig(p=0.5, seed=3), 11)
        return list(iterate_batches(stream, cfg, 5, 1, 30, prefetch_depth=depth))

    serial, prefetched = run(0), run(3)
    assert len(serial) == len(prefetched) == 30
    for (step_a, a), (step_b, b) in zip(serial, prefetched):
        assert step_a == step_b
        assert a.utterance_ids == b.utterance_ids
        assert torch.equal(a.mask, b.mask)


def test_beta_limit_respects_frame_budget():
    labelled = [utterance(f"l{i}", 11) for i in range(4)]
    unlabelled = [utterance(f"u{i}", 11, labelled=False) for i in range(40)]
    chosen = limit_unlabelled(labelled, unlabelled, 2.5, seed=0)
    assert total_frames(chosen) <= 2.5 * total_frames(labelled)
    assert len(chosen) == 10
    assert [u.id for u in chosen] == [u.id for u in limit_unlabelled(labelled, unlabelled, 2.5, seed=0)]
