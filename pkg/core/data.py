"""Batches, time masking and the labelled/unlabelled batch sampler.

Every random decision here comes from a counter-based stream,
``numpy.random.default_rng([seed, key, counter])``, so a batch or a mask is a
pure function of (seed, step). That keeps prefetching and resuming from
changing results.
"""

import enum
import logging
import queue
import threading
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np
import torch

from .exceptions import AlignmentError, ConfigurationError, ShapeError, TooShortError
from .features import output_frame_count, target_frame_index, total_frames

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100

# Stream keys keep the named RNG streams apart even when two seeds coincide.
SAMPLER_STREAM = 11
SHUFFLE_STREAM = 12
MASK_STREAM = 13
DISTRACTOR_STREAM = 14
BETA_STREAM = 15
DROPOUT_STREAM = 16


class BatchKind(str, enum.Enum):
    LABELLED = "labelled"
    UNLABELLED = "unlabelled"


def stream_rng(seed, stream, *counters):
    return np.random.default_rng([int(seed), int(stream), *[int(c) for c in counters]])


@dataclass
class MaskPlan:
    mask: np.ndarray
    mask_start_prob: float
    mask_span: int

    @property
    def num_masked(self):
        return int(self.mask.sum())


@dataclass
class SamplerConfig:
    p: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigurationError(f"p must be in [0, 1], got {self.p}")


@dataclass
class Batch:
    kind: BatchKind
    utterance_ids: List[str]
    features: torch.Tensor          # B x T' x D, zero padded
    valid: torch.Tensor             # B x T' bool, real input frames
    labels: Optional[torch.Tensor]  # B x T long, IGNORE_INDEX on padding
    mask: Optional[torch.Tensor] = None  # B x T' bool, masked and valid

    @property
    def size(self):
        return len(self.utterance_ids)

    @property
    def input_lengths(self):
        return self.valid.sum(dim=1)

    @property
    def output_lengths(self):
        return torch.tensor([output_frame_count(int(n)) for n in self.input_lengths], dtype=torch.long)

    def with_mask(self, mask):
        return replace(self, mask=mask & self.valid)


def plan_masks(num_frames, mask_start_prob, mask_span, rng):
    """Span masking: each frame starts a ``mask_span`` span with ``mask_start_prob``.

    At least one frame is always masked.
    """
    if num_frames < 1:
        raise TooShortError("cannot plan masks for an empty sequence")
    starts = rng.random(num_frames) < mask_start_prob
    mask = np.convolve(starts.astype(np.int64), np.ones(mask_span, dtype=np.int64))[:num_frames] > 0
    if not mask.any():
        mask[rng.integers(num_frames)] = True
    return MaskPlan(mask, mask_start_prob, mask_span)


def apply_mask(features, mask, mask_vector):
    """Replace masked frames with the shared learned vector; others pass through."""
    if mask.shape != features.shape[:-1]:
        raise ShapeError(f"mask shape {tuple(mask.shape)} does not match features {tuple(features.shape)}")
    if mask_vector.shape[-1] != features.shape[-1]:
        raise ShapeError(f"mask vector dim {mask_vector.shape[-1]} != feature dim {features.shape[-1]}")
    return torch.where(mask.unsqueeze(-1), mask_vector.to(features.dtype), features)


def collate(utterances, kind=None):
    """Pad ``utterances`` to the longest member.

    ``kind`` defaults to Labelled when every utterance carries labels.
    """
    if not utterances:
        raise ValueError("cannot collate an empty batch")
    if kind is None:
        kind = BatchKind.LABELLED if all(u.is_labelled for u in utterances) else BatchKind.UNLABELLED
    dim = utterances[0].features.dim
    lengths = [u.features.num_frames for u in utterances]
    for utterance in utterances:
        if utterance.features.dim != dim:
            raise ShapeError(f"utterance {utterance.id} has dim {utterance.features.dim}, expected {dim}")
        if utterance.num_output_frames < 1:
            raise TooShortError(f"utterance {utterance.id} is shorter than the subsampling kernel")
    max_len = max(lengths)
    features = torch.zeros(len(utterances), max_len, dim)
    valid = torch.zeros(len(utterances), max_len, dtype=torch.bool)
    for row, utterance in enumerate(utterances):
        features[row, :lengths[row]] = torch.from_numpy(utterance.features.frames)
        valid[row, :lengths[row]] = True

    labels = None
    if kind is BatchKind.LABELLED:
        max_out = output_frame_count(max_len)
        labels = torch.full((len(utterances), max_out), IGNORE_INDEX, dtype=torch.long)
        for row, utterance in enumerate(utterances):
            if utterance.labels is None:
                raise ConfigurationError(f"utterance {utterance.id} in a labelled batch has no labels")
            if len(utterance.labels) != utterance.num_output_frames:
                raise AlignmentError(
                    f"utterance {utterance.id}: {len(utterance.labels)} labels for "
                    f"{utterance.num_output_frames} output frames"
                )
            labels[row, :len(utterance.labels)] = torch.from_numpy(utterance.labels)
    return Batch(kind, [u.id for u in utterances], features, valid, labels)


def make_batches(utterances, batch_size, rng, kind=None):
    """Shuffle with ``rng`` and group into padded batches; the last may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not utterances:
        return []
    order = rng.permutation(len(utterances))
    return [
        collate([utterances[i] for i in order[start:start + batch_size]], kind)
        for start in range(0, len(order), batch_size)
    ]


def sample_batch_kind(cfg, step):
    """Labelled with probability ``p``; a pure function of (seed, step)."""
    if step < 0:
        raise ValueError("step must be >= 0")
    draw = stream_rng(cfg.seed, SAMPLER_STREAM, step).random()
    return BatchKind.LABELLED if draw < cfg.p else BatchKind.UNLABELLED


def plan_batch_masks(batch, mask_start_prob, mask_span, rng, min_positions=2):
    """Mask plans for every utterance of ``batch``.

    Besides the per-utterance floor of one masked frame, each utterance gets
    at least ``min_positions`` masked output frames (capped by its length) so
    distractors can always be drawn.
    """
    mask = torch.zeros_like(batch.valid)
    for row, length in enumerate(batch.input_lengths.tolist()):
        plan = plan_masks(length, mask_start_prob, mask_span, rng)
        frames = plan.mask.copy()
        num_out = output_frame_count(length)
        aligned = target_frame_index(np.arange(num_out))
        masked_out = frames[aligned]
        missing = min(min_positions, num_out) - int(masked_out.sum())
        if missing > 0:
            extra = rng.choice(np.flatnonzero(~masked_out), size=missing, replace=False)
            frames[aligned[extra]] = True
        mask[row, :length] = torch.from_numpy(frames)
    return batch.with_mask(mask)


def limit_unlabelled(labelled, unlabelled, beta, seed):
    """Random subset of ``unlabelled`` holding at most ``beta`` x the labelled frames."""
    budget = beta * total_frames(labelled)
    order = stream_rng(seed, BETA_STREAM).permutation(len(unlabelled))
    chosen, used = [], 0
    for index in order:
        frames = unlabelled[index].features.num_frames
        if used + frames > budget:
            break
        chosen.append(unlabelled[index])
        used += frames
    logger.info("beta limit %.3g keeps %d of %d unlabelled utterances", beta, len(chosen), len(unlabelled))
    return chosen


class BatchStream:
    """Step-indexed batches: labelled and unlabelled streams cycle independently.

    Draw ``i`` of a kind comes from epoch ``i // n`` of that kind, where each
    epoch is a fresh shuffle keyed by (data seed, kind, epoch).
    """

    def __init__(self, labelled, unlabelled, batch_size, sampler, data_seed):
        if sampler.p > 0 and not labelled:
            raise ConfigurationError("p > 0 but the labelled corpus is empty")
        if sampler.p < 1 and not unlabelled:
            raise ConfigurationError("p < 1 but the unlabelled corpus is empty")
        self.corpora = {BatchKind.LABELLED: list(labelled), BatchKind.UNLABELLED: list(unlabelled)}
        self.batch_size = batch_size
        self.sampler = sampler
        self.data_seed = data_seed
        self._epochs = {}
        self._lock = threading.Lock()

    def batches_per_epoch(self, kind):
        return -(-len(self.corpora[kind]) // self.batch_size)

    def _epoch(self, kind, epoch):
        with self._lock:
            key = (kind, epoch)
            if key not in self._epochs:
                # Only the current epoch of each kind is kept.
                self._epochs = {k: v for k, v in self._epochs.items() if k[0] is not kind}
                rng = stream_rng(self.data_seed, SHUFFLE_STREAM, kind is BatchKind.UNLABELLED, epoch)
                self._epochs[key] = make_batches(self.corpora[kind], self.batch_size, rng, kind)
            return self._epochs[key]

    def draw(self, kind, index):
        epoch, position = divmod(index, self.batches_per_epoch(kind))
        return self._epoch(kind, epoch)[position]

    def schedule(self, start_step, end_step):
        """(step, kind, draw index) for steps ``start_step..end_step`` inclusive."""
        counts = {BatchKind.LABELLED: 0, BatchKind.UNLABELLED: 0}
        for step in range(1, start_step):
            counts[sample_batch_kind(self.sampler, step)] += 1
        for step in range(start_step, end_step + 1):
            kind = sample_batch_kind(self.sampler, step)
            yield step, kind, counts[kind]
            counts[kind] += 1


def iterate_batches(stream, data_cfg, mask_seed, start_step, end_step, prefetch_depth=0):
    """Yield (step, masked batch) for ``start_step..end_step``.

    With ``prefetch_depth > 0`` a producer thread builds batches ahead of the
    consumer through a bounded queue; output is identical either way.
    """

    def build(step, kind, index):
        batch = stream.draw(kind, index)
        rng = stream_rng(mask_seed, MASK_STREAM, step)
        return step, plan_batch_masks(batch, data_cfg.mask_start_prob, data_cfg.mask_span, rng,
                                      data_cfg.min_masked_positions)

    schedule = stream.schedule(start_step, end_step)
    if prefetch_depth <= 0:
        for item in schedule:
            yield build(*item)
        return

    buffer = queue.Queue(maxsize=prefetch_depth)
    done = object()
    stop = threading.Event()

    def produce():
        try:
            for item in schedule:
                if stop.is_set():
                    return
                buffer.put(build(*item))
            buffer.put(done)
        except Exception as exc:
            buffer.put(exc)

    worker = threading.Thread(target=produce, name="batch-prefetch", daemon=True)
    worker.start()
    try:
        while True:
            item = buffer.get()
            if item is done:
                break
            if isinstance(item, Exception):
                raise item
            yield item
    finally:
        stop.set()
        # Unblock a producer waiting on a full queue.
        while worker.is_alive():
            try:
                buffer.get_nowait()
            except queue.Empty:
                worker.join(timeout=0.05)
