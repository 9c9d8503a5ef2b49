"""Audio ingestion and the log-mel feature pipeline.

raw PCM -> 80-dim log mel filterbank rows every 10 ms -> adjacent rows
concatenated and subsampled by 2 -> 160-dim frames every 20 ms.

Also holds the energy-based speech segmentation used before extraction
and the deterministic synthetic corpus used at desk scale.
"""

import functools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import librosa
import numpy as np
import soundfile as sf

from .exceptions import AlignmentError, TooShortError, UnsupportedEncodingError, WavFormatError

logger = logging.getLogger(__name__)

PCM16_SCALE = 32768.0

# Model-side subsampling: one convolution, kernel 3, stride 2.
SUBSAMPLE_KERNEL = 3
SUBSAMPLE_STRIDE = 2


def output_frame_count(num_input_frames):
    """Frames produced by the subsampling convolution for a feature matrix."""
    if num_input_frames < SUBSAMPLE_KERNEL:
        return 0
    return (num_input_frames - SUBSAMPLE_KERNEL) // SUBSAMPLE_STRIDE + 1


def target_frame_index(t):
    """Input frame aligned with output frame ``t`` (middle of its kernel span)."""
    return SUBSAMPLE_STRIDE * t + 1


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate_hz: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise UnsupportedEncodingError(f"expected mono samples, got shape {self.samples.shape}")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio samples must be finite")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate_hz

    def slice(self, start, end):
        return AudioBuffer(self.samples[start:end], self.sample_rate_hz)


@dataclass
class FeatureMatrix:
    frames: np.ndarray
    frame_hop_ms: float = 20.0

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise TooShortError(f"feature matrix needs at least one frame, got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("feature matrix contains non-finite values")

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


@dataclass
class Utterance:
    id: str
    features: FeatureMatrix
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def is_labelled(self):
        return self.labels is not None

    @property
    def num_output_frames(self):
        return output_frame_count(self.features.num_frames)

    def unlabelled(self):
        return Utterance(self.id, self.features, None)

    def check_labels(self, num_classes):
        if self.labels is None:
            return
        expected = self.num_output_frames
        if len(self.labels) != expected:
            raise AlignmentError(
                f"utterance {self.id}: {len(self.labels)} labels for {expected} output frames"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= num_classes):
            raise AlignmentError(f"utterance {self.id}: label outside [0, {num_classes})")


@dataclass
class SyntheticCorpusSpec:
    num_classes: int = 32
    utterances_labelled: int = 100
    utterances_unlabelled: int = 500
    # Utterance length and phone duration, both in model output frames (40 ms).
    frames_per_utterance: Tuple[int, int] = (24, 40)
    frames_per_phone: Tuple[int, int] = (2, 6)
    seed: int = 0
    sample_rate_hz: int = 16000
    noise_floor: float = 0.08

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.utterances_labelled < 0 or self.utterances_unlabelled < 0:
            raise ValueError("utterance counts must be >= 0")
        lo, hi = self.frames_per_utterance
        if not 2 <= lo <= hi:
            raise ValueError(f"frames_per_utterance must satisfy 2 <= lo <= hi, got {self.frames_per_utterance}")
        lo, hi = self.frames_per_phone
        if not 1 <= lo <= hi:
            raise ValueError(f"frames_per_phone must satisfy 1 <= lo <= hi, got {self.frames_per_phone}")


# WAV I/O

def read_wav(path):
    """Read a 16-bit PCM mono WAV file, scaling samples into [-1, 1)."""
    try:
        info = sf.info(str(path))
    except RuntimeError as exc:
        raise WavFormatError(f"{path}: not a readable WAV file ({exc})") from exc
    if info.format != "WAV":
        raise WavFormatError(f"{path}: container is {info.format}, expected WAV")
    if info.subtype != "PCM_16":
        raise UnsupportedEncodingError(f"{path}: encoding {info.subtype}, expected PCM_16")
    if info.channels != 1:
        raise UnsupportedEncodingError(f"{path}: {info.channels} channels, expected mono")
    pcm, sample_rate = sf.read(str(path), dtype="int16", always_2d=False)
    return AudioBuffer(pcm.astype(np.float64) / PCM16_SCALE, int(sample_rate))


def write_wav(path, audio):
    """Write ``audio`` as 16-bit PCM mono, the inverse of read_wav's scaling."""
    pcm = np.clip(np.round(audio.samples * PCM16_SCALE), -32768, 32767).astype(np.int16)
    sf.write(str(path), pcm, audio.sample_rate_hz, subtype="PCM_16", format="WAV")


# Log mel filterbank

@functools.lru_cache(maxsize=16)
def mel_filterbank(sample_rate_hz, n_fft, n_mels):
    # Unnormalised triangles on the Slaney mel scale, 0 Hz .. Nyquist.
    return librosa.filters.mel(
        sr=sample_rate_hz, n_fft=n_fft, n_mels=n_mels, fmin=0.0,
        fmax=sample_rate_hz / 2.0, htk=False, norm=None,
    )


def mel_bin_centers(sample_rate_hz, n_mels):
    """Center frequency (Hz) of every mel filter used by compute_lfb."""
    edges = librosa.mel_frequencies(n_mels + 2, fmin=0.0, fmax=sample_rate_hz / 2.0, htk=False)
    return edges[1:-1]


def window_samples(sample_rate_hz, ms):
    return int(round(sample_rate_hz * ms / 1000.0))


def compute_lfb(audio, n_mels=80, win_ms=25.0, hop_ms=10.0, n_fft=512, floor_epsilon=1e-10):
    """Log mel filterbank rows, one per ``hop_ms``, Hann window of ``win_ms``."""
    win = window_samples(audio.sample_rate_hz, win_ms)
    hop = window_samples(audio.sample_rate_hz, hop_ms)
    if len(audio) < win:
        raise TooShortError(f"{len(audio)} samples is shorter than one {win}-sample window")
    n_fft = max(n_fft, win)
    frames = librosa.util.frame(np.ascontiguousarray(audio.samples), frame_length=win, hop_length=hop, axis=0)
    window = librosa.filters.get_window("hann", win, fftbins=True)
    spectrum = np.fft.rfft(frames * window, n=n_fft, axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    mel = power @ mel_filterbank(audio.sample_rate_hz, n_fft, n_mels).T
    return np.log(mel + floor_epsilon)


def stack_and_subsample(rows, hop_ms=10.0):
    """Concatenate rows (2t, 2t+1) into one frame; a trailing odd row is dropped."""
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise TooShortError(f"need at least 2 rows to stack, got shape {rows.shape}")
    pairs = rows.shape[0] // 2
    stacked = rows[: 2 * pairs].reshape(pairs, 2 * rows.shape[1])
    return FeatureMatrix(stacked, frame_hop_ms=2 * hop_ms)


def extract_features(audio, cfg, vad=False):
    """Full pipeline for one buffer; with ``vad`` only speech segments are kept."""
    if vad:
        segments = energy_vad(audio, cfg.vad_threshold_db, cfg.vad_min_segment_ms)
        if not segments:
            raise TooShortError("no speech segment found")
        audio = AudioBuffer(
            np.concatenate([audio.samples[start:end] for start, end in segments]),
            audio.sample_rate_hz,
        )
    rows = compute_lfb(audio, cfg.n_mels, cfg.win_ms, cfg.hop_ms, cfg.n_fft, cfg.floor_epsilon)
    return stack_and_subsample(rows, cfg.hop_ms)


# Speech segmentation

def energy_vad(audio, threshold_db=-30.0, min_segment_ms=100.0, frame_ms=10.0):
    """Sample ranges ``[start, end)`` whose frame RMS is within ``threshold_db`` of the peak."""
    n = len(audio)
    frame = window_samples(audio.sample_rate_hz, frame_ms)
    if n == 0 or frame == 0:
        return []
    n_frames = -(-n // frame)
    squares = np.zeros(n_frames * frame)
    squares[:n] = audio.samples ** 2
    counts = np.full(n_frames, frame, dtype=np.float64)
    counts[-1] = n - (n_frames - 1) * frame
    rms = np.sqrt(squares.reshape(n_frames, frame).sum(axis=1) / counts)
    peak = rms.max()
    if peak <= 0.0:
        return []
    with np.errstate(divide="ignore"):
        level_db = 20.0 * np.log10(rms / peak)
    active = level_db > threshold_db

    min_samples = window_samples(audio.sample_rate_hz, min_segment_ms)
    segments = []
    # Run boundaries from the padded difference of the activity mask.
    edges = np.flatnonzero(np.diff(np.concatenate(([0], active.astype(np.int8), [0]))))
    for first, last in zip(edges[::2], edges[1::2]):
        start, end = int(first * frame), int(min(last * frame, n))
        if end - start >= min_samples:
            segments.append((start, end))
    return segments


# Synthetic corpus

_LABELLED, _UNLABELLED = 0, 1


def class_center_mels(num_classes, sample_rate_hz, low_hz=150.0, high_hz=6000.0):
    high_hz = min(high_hz, 0.45 * sample_rate_hz)
    return np.linspace(librosa.hz_to_mel(low_hz), librosa.hz_to_mel(high_hz), num_classes)


def _frame_center(t, hop, win):
    # Output frame t sits on stacked row 2t+1, i.e. raw rows 4t+2 and 4t+3.
    return (4 * t + 2) * hop + (win + hop) // 2


def _band_noise(rng, num_samples, sample_rate_hz, center_mel, width_mel, noise_floor):
    spectrum = np.fft.rfft(rng.standard_normal(num_samples))
    bin_mels = librosa.hz_to_mel(np.fft.rfftfreq(num_samples, d=1.0 / sample_rate_hz))
    envelope = noise_floor + np.exp(-0.5 * ((bin_mels - center_mel) / width_mel) ** 2)
    return np.fft.irfft(spectrum * envelope, n=num_samples)


def synthesize_utterance(spec, rng, utt_id, labelled=True, win_ms=25.0, hop_ms=10.0):
    """One utterance of band-emphasised noise "phones" plus its audio.

    Class c emits noise with a spectral bump at a class-specific mel
    position; neighbouring classes overlap, so frames are separable but
    not trivially.
    """
    sr = spec.sample_rate_hz
    win = window_samples(sr, win_ms)
    hop = window_samples(sr, hop_ms)
    num_out = int(rng.integers(spec.frames_per_utterance[0], spec.frames_per_utterance[1] + 1))
    # 2T+1 stacked frames give exactly T output frames; each stacked frame is 2 raw rows.
    num_raw = 2 * (2 * num_out + 1)
    num_samples = (num_raw - 1) * hop + win

    labels = np.empty(num_out, dtype=np.int64)
    phones = []
    t = 0
    while t < num_out:
        duration = min(int(rng.integers(spec.frames_per_phone[0], spec.frames_per_phone[1] + 1)), num_out - t)
        cls = int(rng.integers(spec.num_classes))
        labels[t:t + duration] = cls
        phones.append((cls, t, t + duration))
        t += duration

    centers = class_center_mels(spec.num_classes, sr)
    spacing = centers[1] - centers[0]
    samples = np.empty(num_samples)
    for cls, first, last in phones:
        # Phone edges sit halfway between consecutive output frame centres.
        start = 0 if first == 0 else _frame_center(first, hop, win) - 2 * hop
        end = num_samples if last == num_out else _frame_center(last, hop, win) - 2 * hop
        jitter = rng.uniform(-0.25, 0.25) * spacing
        gain = rng.uniform(0.3, 1.0)
        samples[start:end] = gain * _band_noise(
            rng, end - start, sr, centers[cls] + jitter, 1.5 * spacing, spec.noise_floor
        )

    samples += 0.1 * spec.noise_floor * rng.standard_normal(num_samples)
    samples *= 0.9 / max(np.abs(samples).max(), 1e-12)
    audio = AudioBuffer(samples, sr)
    features = stack_and_subsample(compute_lfb(audio, win_ms=win_ms, hop_ms=hop_ms), hop_ms)
    utterance = Utterance(utt_id, features, labels)
    utterance.check_labels(spec.num_classes)
    if not labelled:
        utterance = utterance.unlabelled()
    return utterance, audio


def generate_synthetic_corpus(spec):
    """(labelled, unlabelled) utterances; a pure function of ``spec``."""
    labelled = []
    for index in range(spec.utterances_labelled):
        rng = np.random.default_rng([spec.seed, _LABELLED, index])
        utterance, _ = synthesize_utterance(spec, rng, f"L{spec.seed}-{index:05d}", labelled=True)
        labelled.append(utterance)
    unlabelled = []
    for index in range(spec.utterances_unlabelled):
        rng = np.random.default_rng([spec.seed, _UNLABELLED, index])
        utterance, _ = synthesize_utterance(spec, rng, f"U{spec.seed}-{index:05d}", labelled=False)
        unlabelled.append(utterance)
    logger.info(
        "synthesised %d labelled and %d unlabelled utterances (C=%d, seed=%d)",
        len(labelled), len(unlabelled), spec.num_classes, spec.seed,
    )
    return labelled, unlabelled


def held_out_spec(spec, num_utterances):
    """Spec for an evaluation set disjoint from ``spec``'s training utterances."""
    return SyntheticCorpusSpec(
        num_classes=spec.num_classes,
        utterances_labelled=num_utterances,
        utterances_unlabelled=0,
        frames_per_utterance=spec.frames_per_utterance,
        frames_per_phone=spec.frames_per_phone,
        seed=spec.seed + 1_000_003,
        sample_rate_hz=spec.sample_rate_hz,
        noise_floor=spec.noise_floor,
    )


def total_frames(utterances: Sequence[Utterance]):
    return int(sum(u.features.num_frames for u in utterances))


def beta_ratio(labelled, unlabelled):
    """Unlabelled-to-labelled data ratio, measured in feature frames (hours)."""
    labelled_frames = total_frames(labelled)
    if labelled_frames == 0:
        return float("inf") if unlabelled else 0.0
    return total_frames(unlabelled) / labelled_frames
