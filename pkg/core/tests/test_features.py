import numpy as np
import pytest
import soundfile as sf

from core.config import FeatureConfig
from core.exceptions import TooShortError, UnsupportedEncodingError, WavFormatError
from core.features import (
    AudioBuffer, SyntheticCorpusSpec, beta_ratio, compute_lfb, energy_vad, extract_features,
    generate_synthetic_corpus, held_out_spec, mel_bin_centers, output_frame_count, read_wav,
    stack_and_subsample, target_frame_index, write_wav,
)


def test_one_second_gives_98_rows_49_frames_24_outputs(make_tone):
    rows = compute_lfb(make_tone(440.0))
    assert rows.shape == (98, 80)
    stacked = stack_and_subsample(rows)
    assert (stacked.num_frames, stacked.dim) == (49, 160)
    assert stacked.frame_hop_ms == 20.0
    assert output_frame_count(stacked.num_frames) == 24


def test_stacking_concatenates_adjacent_rows_and_drops_odd_tail():
    rows = np.arange(5 * 3, dtype=np.float64).reshape(5, 3)
    stacked = stack_and_subsample(rows).frames
    assert stacked.shape == (2, 6)
    np.testing.assert_array_equal(stacked[1], np.concatenate([rows[2], rows[3]]))


@pytest.mark.parametrize("frames,expected", [(2, 0), (3, 1), (4, 1), (5, 2), (49, 24)])
def test_output_frame_count(frames, expected):
    assert output_frame_count(frames) == expected


def test_target_frame_is_centre_of_kernel_span():
    assert [target_frame_index(t) for t in range(3)] == [1, 3, 5]


def test_one_kilohertz_tone_peaks_in_nearest_mel_bin(make_tone):
    centers = mel_bin_centers(16000, 80)
    rows = compute_lfb(make_tone(1000.0))
    assert rows.mean(axis=0).argmax() == np.abs(centers - 1000.0).argmin()


@pytest.mark.parametrize("index", [30, 50, 70])
def test_tone_at_bin_centre_peaks_in_that_bin(make_tone, index):
    center = mel_bin_centers(16000, 80)[index]
    rows = compute_lfb(make_tone(center))
    assert rows.mean(axis=0).argmax() == index


def test_silence_hits_the_floor():
    rows = compute_lfb(AudioBuffer(np.zeros(1600)))
    np.testing.assert_allclose(rows, np.log(1e-10))


def test_shorter_than_one_window_is_rejected():
    with pytest.raises(TooShortError):
        compute_lfb(AudioBuffer(np.zeros(399)))


def test_energy_vad_finds_the_tone(make_tone):
    speech = make_tone(800.0, seconds=0.5).samples
    silence = np.zeros(4800)
    audio = AudioBuffer(np.concatenate([silence, speech, silence]))
    assert energy_vad(audio) == [(4800, 12800)]


def test_energy_vad_drops_short_bursts(make_tone):
    burst = make_tone(800.0, seconds=0.05).samples
    audio = AudioBuffer(np.concatenate([np.zeros(4800), burst, np.zeros(4800)]))
    assert energy_vad(audio, min_segment_ms=100.0) == []


def test_energy_vad_on_silence_is_empty():
    assert energy_vad(AudioBuffer(np.zeros(16000))) == []


def test_vad_extraction_matches_segment_length(make_tone):
    cfg = FeatureConfig()
    speech = make_tone(800.0, seconds=0.5)
    padded = AudioBuffer(np.concatenate([np.zeros(4800), speech.samples, np.zeros(4800)]))
    with_vad = extract_features(padded, cfg, vad=True)
    assert with_vad.num_frames == extract_features(speech, cfg).num_frames
    assert with_vad.num_frames < extract_features(padded, cfg).num_frames


def test_wav_round_trip_is_within_one_quantisation_step(tmp_path, make_tone):
    audio = make_tone(300.0, seconds=0.1)
    path = tmp_path / "tone.wav"
    write_wav(path, audio)
    loaded = read_wav(path)
    assert loaded.sample_rate_hz == 16000
    np.testing.assert_allclose(loaded.samples, audio.samples, atol=1.0 / 32768)


def test_read_wav_rejects_other_encodings(tmp_path):
    path = tmp_path / "float.wav"
    sf.write(str(path), np.zeros(1600), 16000, subtype="FLOAT", format="WAV")
    with pytest.raises(UnsupportedEncodingError):
        read_wav(path)


def test_read_wav_rejects_stereo(tmp_path):
    path = tmp_path / "stereo.wav"
    sf.write(str(path), np.zeros((1600, 2)), 16000, subtype="PCM_16", format="WAV")
    with pytest.raises(UnsupportedEncodingError):
        read_wav(path)


def test_read_wav_rejects_garbage(tmp_path):
    path = tmp_path / "noise.wav"
    path.write_bytes(b"definitely not a riff header")
    with pytest.raises(WavFormatError):
        read_wav(path)


def test_synthetic_corpus_is_deterministic(small_spec):
    first, _ = generate_synthetic_corpus(small_spec)
    second, _ = generate_synthetic_corpus(small_spec)
    for a, b in zip(first, second):
        assert a.id == b.id
        np.testing.assert_array_equal(a.features.frames, b.features.frames)
        np.testing.assert_array_equal(a.labels, b.labels)


def test_synthetic_labels_align_with_model_output(small_corpus, small_spec):
    labelled, unlabelled = small_corpus
    assert len(labelled) == small_spec.utterances_labelled
    assert len(unlabelled) == small_spec.utterances_unlabelled
    for utterance in labelled:
        lo, hi = small_spec.frames_per_utterance
        assert lo <= len(utterance.labels) <= hi
        assert utterance.features.num_frames == 2 * len(utterance.labels) + 1
        assert len(utterance.labels) == utterance.num_output_frames
        assert utterance.labels.max() < small_spec.num_classes
    assert all(not u.is_labelled for u in unlabelled)


def test_beta_is_frame_ratio_for_equal_lengths():
    spec = SyntheticCorpusSpec(num_classes=4, utterances_labelled=4, utterances_unlabelled=20,
                               frames_per_utterance=(6, 6), seed=2)
    labelled, unlabelled = generate_synthetic_corpus(spec)
    assert beta_ratio(labelled, unlabelled) == 5.0
    assert beta_ratio(labelled, []) == 0.0


def test_held_out_set_does_not_reuse_training_utterances(small_spec, small_corpus):
    held_out, _ = generate_synthetic_corpus(held_out_spec(small_spec, 3))
    training_ids = {u.id for u in small_corpus[0]}
    assert len(held_out) == 3
    assert not training_ids & {u.id for u in held_out}


@pytest.mark.parametrize("num_samples", [560, 561, 719, 720, 1000, 4321, 16000, 16159, 16160])
def test_frame_counts_follow_window_and_hop(num_samples):
    audio = AudioBuffer(np.random.default_rng(num_samples).uniform(-1.0, 1.0, num_samples))
    rows = compute_lfb(audio)
    assert rows.shape == ((num_samples - 400) // 160 + 1, 80)
    stacked = stack_and_subsample(rows)
    assert stacked.num_frames == ((num_samples - 400) // 160 + 1) // 2
    assert np.isfinite(stacked.frames).all()


def test_energy_vad_finds_noise_between_silences():
    rng = np.random.default_rng(0)
    audio = AudioBuffer(np.concatenate([np.zeros(8000), rng.uniform(-0.5, 0.5, 16000), np.zeros(8000)]))
    [(start, end)] = energy_vad(audio)
    assert abs(start - 8000) <= 320 and abs(end - 24000) <= 320


def test_energy_vad_on_noise_alone_is_one_segment():
    audio = AudioBuffer(np.random.default_rng(1).uniform(-0.5, 0.5, 16000))
    assert energy_vad(audio) == [(0, 16000)]


@pytest.mark.parametrize("seed", range(5))
def test_energy_vad_segments_are_ordered_disjoint_and_long_enough(seed):
    rng = np.random.default_rng(seed)
    pieces = []
    for _ in range(8):
        length = int(rng.integers(200, 4000))
        pieces.append(rng.uniform(-0.5, 0.5, length) if rng.random() < 0.5 else np.zeros(length))
    audio = AudioBuffer(np.concatenate(pieces))
    segments = energy_vad(audio, min_segment_ms=100.0)
    for start, end in segments:
        assert 0 <= start < end <= len(audio)
        assert end - start >= 1600
    for (_, end), (start, _) in zip(segments, segments[1:]):
        assert end < start


def test_two_class_phones_are_separable_by_mean_spectrum():
    spec = SyntheticCorpusSpec(num_classes=2, utterances_labelled=20, utterances_unlabelled=0,
                               frames_per_utterance=(8, 8), frames_per_phone=(8, 8), seed=5)
    labelled, _ = generate_synthetic_corpus(spec)
    classes = np.array([u.labels[0] for u in labelled])
    assert all((u.labels == u.labels[0]).all() for u in labelled)
    assert set(classes.tolist()) == {0, 1}
    means = np.stack([u.features.frames.mean(axis=0) for u in labelled])
    centroids = np.stack([means[classes == c].mean(axis=0) for c in (0, 1)])
    distances = np.linalg.norm(means[:, None, :] - centroids[None, :, :], axis=-1)
    np.testing.assert_array_equal(distances.argmin(axis=1), classes)


def test_corpus_without_labelled_utterances():
    spec = SyntheticCorpusSpec(num_classes=4, utterances_labelled=0, utterances_unlabelled=3,
                               frames_per_utterance=(4, 6), frames_per_phone=(2, 3), seed=9)
    labelled, unlabelled = generate_synthetic_corpus(spec)
    assert labelled == []
    assert len(unlabelled) == 3
    assert not any(u.is_labelled for u in unlabelled)
