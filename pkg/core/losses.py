"""Frame cross-entropy, the masked contrastive loss and the joint objective.

The contrastive candidate set for a masked position t is its own target q_t
plus K distractors drawn from the other masked positions of the same
utterance. Every function is pure given its inputs and the rng it is handed.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import torch

from .data import IGNORE_INDEX, BatchKind
from .exceptions import ContractViolation, DegenerateDistractorError

logger = logging.getLogger(__name__)

POSTERIOR_FLOOR = 1e-12


class CrossEntropy(NamedTuple):
    loss: torch.Tensor
    num_frames: int
    clamp_count: int


class Contrastive(NamedTuple):
    loss: torch.Tensor
    num_positions: int
    skipped_utterances: int


@dataclass
class LossBreakdown:
    batch_kind: BatchKind
    l_ce: Optional[torch.Tensor]
    l_c: torch.Tensor
    combined: torch.Tensor
    num_ce_frames: int = 0
    num_contrastive_positions: int = 0
    clamp_count: int = 0

    def is_finite(self):
        return bool(torch.isfinite(self.combined))

    def as_record(self):
        return {
            "batch_kind": self.batch_kind.value,
            "l_ce": "NA" if self.l_ce is None else float(self.l_ce),
            "l_c": float(self.l_c),
            "combined": float(self.combined),
            "clamp_count": self.clamp_count,
        }


def cosine_sim(a, b, epsilon=1e-8):
    """Cosine similarity along the last axis with each norm floored at ``epsilon``."""
    a = torch.as_tensor(a, dtype=torch.float64) if not torch.is_tensor(a) else a
    b = torch.as_tensor(b, dtype=torch.float64) if not torch.is_tensor(b) else b
    norms = a.norm(dim=-1).clamp_min(epsilon) * b.norm(dim=-1).clamp_min(epsilon)
    return (a * b).sum(dim=-1) / norms


def cross_entropy_loss(posteriors, labels, valid=None, floor=POSTERIOR_FLOOR):
    """Mean of -log p[t, y_t] over every valid frame of the batch.

    Pooling frames across utterances weights each utterance by its length.
    Probabilities below ``floor`` are clamped and counted.
    """
    labels = torch.as_tensor(labels)
    keep = labels != IGNORE_INDEX
    if valid is not None:
        keep = keep & valid
    num_frames = int(keep.sum())
    if num_frames == 0:
        raise ContractViolation("cross-entropy needs at least one labelled frame")
    picked = posteriors.gather(-1, labels.clamp_min(0).unsqueeze(-1)).squeeze(-1)[keep]
    clamp_count = int((picked < floor).sum())
    if clamp_count:
        logger.debug("clamped %d posteriors below %g", clamp_count, floor)
    loss = -torch.log(picked.clamp_min(floor)).mean()
    return CrossEntropy(loss, num_frames, clamp_count)


def sample_distractors(positions, t, num_distractors, rng):
    """``num_distractors`` positions drawn uniformly from ``positions`` minus ``t``.

    Sampling is without replacement unless fewer candidates than requested
    exist.
    """
    candidates = np.asarray([p for p in positions if p != t], dtype=np.int64)
    if candidates.size == 0:
        raise DegenerateDistractorError(f"position {t} is the only masked position of its utterance")
    replace = candidates.size < num_distractors
    return rng.choice(candidates, size=num_distractors, replace=replace)


def contrastive_loss(contexts, targets, masked_positions, cfg, rng):
    """Mean contrastive loss over the masked valid positions of a batch.

    ``masked_positions`` is a B x T bool tensor. Utterances with a single
    masked position have nothing to contrast against and are skipped.
    """
    rows, times, candidates = [], [], []
    skipped = 0
    for row, mask in enumerate(masked_positions.cpu().numpy()):
        positions = np.flatnonzero(mask)
        if positions.size < 2:
            skipped += int(positions.size > 0)
            continue
        for t in positions:
            rows.append(row)
            times.append(t)
            candidates.append(np.concatenate(([t], sample_distractors(positions, t, cfg.num_distractors, rng))))
    if not rows:
        raise ContractViolation("no masked position has a distractor")

    rows = torch.as_tensor(rows, device=contexts.device)
    times = torch.as_tensor(np.asarray(times), device=contexts.device)
    candidates = torch.as_tensor(np.stack(candidates), device=contexts.device)
    c = contexts[rows, times].unsqueeze(1)           # n x 1 x d
    q = targets[rows.unsqueeze(1), candidates]       # n x (K+1) x d
    logits = cosine_sim(c, q, cfg.cosine_epsilon) / cfg.temperature
    scored = logits if cfg.include_positive else logits[:, 1:]
    per_position = torch.logsumexp(scored, dim=1) - logits[:, 0]
    return Contrastive(per_position.mean(), len(rows), skipped)


def joint_loss(batch_kind, l_ce, l_c, alpha):
    """alpha * l_ce + (1 - alpha) * l_c on labelled batches, l_c on unlabelled ones."""
    if not 0.0 <= alpha <= 1.0:
        raise ContractViolation(f"alpha must be in [0, 1], got {alpha}")
    if BatchKind(batch_kind) is BatchKind.LABELLED:
        if l_ce is None:
            raise ContractViolation("a labelled batch needs a cross-entropy term")
        return alpha * l_ce + (1.0 - alpha) * l_c
    if l_ce is not None:
        raise ContractViolation("an unlabelled batch has no cross-entropy term")
    return l_c


def compute_losses(output, batch, alpha, cfg, rng):
    """LossBreakdown for one forward pass over ``batch``.

    With alpha=1 the contrastive term of a labelled batch is still reported
    but kept out of the graph.
    """
    l_ce, num_frames, clamps = None, 0, 0
    if batch.kind is BatchKind.LABELLED:
        if batch.labels is None:
            raise ContractViolation("labelled batch without labels")
        l_ce, num_frames, clamps = cross_entropy_loss(output.posteriors, batch.labels, output.output_valid)

    if batch.kind is BatchKind.LABELLED and alpha == 1.0:
        with torch.no_grad():
            contrastive = contrastive_loss(output.contexts, output.targets, output.masked_positions, cfg, rng)
        combined = l_ce
    else:
        contrastive = contrastive_loss(output.contexts, output.targets, output.masked_positions, cfg, rng)
        combined = joint_loss(batch.kind, l_ce, contrastive.loss, alpha)

    return LossBreakdown(
        batch_kind=batch.kind,
        l_ce=l_ce,
        l_c=contrastive.loss,
        combined=combined,
        num_ce_frames=num_frames,
        num_contrastive_positions=contrastive.num_positions,
        clamp_count=clamps,
    )
