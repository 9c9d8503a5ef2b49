"""Unmasked inference, frame accuracy reports and run comparisons."""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List

import numpy as np
import torch

from .exceptions import ComparisonError, EvalInputError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class EvalReport:
    frame_accuracy: float
    num_frames: int
    num_correct: int
    per_class_correct: List[int]
    per_class_frames: List[int]
    checkpoint_id: str = ""
    config_digest: str = ""
    eval_digest: str = ""
    num_utterances: int = 0

    @property
    def num_classes(self):
        return len(self.per_class_frames)

    @property
    def per_class_accuracy(self):
        return [c / n if n else None for c, n in zip(self.per_class_correct, self.per_class_frames)]

    def to_dict(self):
        document = asdict(self)
        document["per_class_accuracy"] = self.per_class_accuracy
        return document

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, document):
        document = {k: v for k, v in document.items() if k != "per_class_accuracy"}
        return cls(**document)

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, ValueError, TypeError) as exc:
            raise EvalInputError(f"{path}: not an eval report ({exc})") from exc


@dataclass
class RunComparison:
    accuracy_a: float
    accuracy_b: float
    absolute_delta: float
    relative_delta: float
    per_class_deltas: List[float] = field(default_factory=list)
    eval_digest: str = ""

    def format(self, decimals=2):
        lines = [
            f"accuracy A: {self.accuracy_a:.{decimals + 2}f}",
            f"accuracy B: {self.accuracy_b:.{decimals + 2}f}",
            f"absolute delta: {self.absolute_delta:+.{decimals + 2}f}",
            f"relative delta: {format_relative(self.relative_delta, decimals)}",
        ]
        return "\n".join(lines)


def format_relative(value, decimals=2):
    if value is None or np.isnan(value):
        return "n/a"
    return f"{100 * value:+.{decimals}f}%"


def infer_posteriors(model, utterance):
    """T x C posteriors for one utterance, without masking."""
    frames = utterance.features.frames
    if frames.shape[1] != model.cfg.input_dim:
        raise ShapeError(f"utterance {utterance.id}: feature dim {frames.shape[1]} != {model.cfg.input_dim}")
    features = torch.from_numpy(frames).unsqueeze(0)
    valid = torch.ones(features.shape[:2], dtype=torch.bool)
    model.eval()
    posteriors, _ = model.posteriors(features, valid)
    return posteriors[0].cpu().numpy()


def eval_set_digest(utterances):
    """Order-independent hash of the eval features and labels."""
    digest = hashlib.sha256()
    for utterance in sorted(utterances, key=lambda u: u.id):
        digest.update(utterance.id.encode("utf-8"))
        digest.update(np.ascontiguousarray(utterance.features.frames, dtype="<f4").tobytes())
        if utterance.labels is not None:
            digest.update(np.ascontiguousarray(utterance.labels, dtype="<i8").tobytes())
    return digest.hexdigest()[:16]


def evaluate_frame_accuracy(model, utterances, checkpoint_id="", config_digest=""):
    """Frame-level argmax accuracy of ``model`` over labelled ``utterances``."""
    num_classes = model.cfg.num_classes
    correct = np.zeros(num_classes, dtype=np.int64)
    frames = np.zeros(num_classes, dtype=np.int64)
    for utterance in utterances:
        if not utterance.is_labelled:
            raise EvalInputError(f"utterance {utterance.id} has no labels")
        utterance.check_labels(num_classes)
        predicted = infer_posteriors(model, utterance).argmax(axis=-1)
        labels = utterance.labels
        frames += np.bincount(labels, minlength=num_classes)
        correct += np.bincount(labels[predicted == labels], minlength=num_classes)

    num_frames = int(frames.sum())
    if num_frames == 0:
        raise EvalInputError("eval set has no labelled frames")
    num_correct = int(correct.sum())
    report = EvalReport(
        frame_accuracy=num_correct / num_frames,
        num_frames=num_frames,
        num_correct=num_correct,
        per_class_correct=correct.tolist(),
        per_class_frames=frames.tolist(),
        checkpoint_id=checkpoint_id,
        config_digest=config_digest,
        eval_digest=eval_set_digest(utterances),
        num_utterances=len(utterances),
    )
    logger.info("frame accuracy %.4f over %d frames (%s)", report.frame_accuracy, num_frames, report.eval_digest)
    return report


def compare_runs(report_a, report_b):
    """Deltas of B relative to A on the same eval set.

    Per-class deltas are per-class accuracy differences; weighted by class
    frequency they sum to the absolute delta.
    """
    if report_a.eval_digest != report_b.eval_digest:
        raise ComparisonError(f"eval sets differ: {report_a.eval_digest} vs {report_b.eval_digest}")
    absolute = report_b.frame_accuracy - report_a.frame_accuracy
    relative = absolute / report_a.frame_accuracy if report_a.frame_accuracy > 0 else float("nan")
    per_class = [
        (cb - ca) / n if n else 0.0
        for ca, cb, n in zip(report_a.per_class_correct, report_b.per_class_correct, report_a.per_class_frames)
    ]
    return RunComparison(
        accuracy_a=report_a.frame_accuracy,
        accuracy_b=report_b.frame_accuracy,
        absolute_delta=absolute,
        relative_delta=relative,
        per_class_deltas=per_class,
        eval_digest=report_a.eval_digest,
    )


def weighted_class_delta(comparison, report):
    """Sum of per-class deltas weighted by class frequency in ``report``."""
    total = report.num_frames
    return sum(d * n / total for d, n in zip(comparison.per_class_deltas, report.per_class_frames))
