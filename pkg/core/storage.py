"""On-disk formats for features, labels, manifests and corpus directories.

Feature file (WFT1): magic b"WFT1", little-endian u32 frame count, u32 dim,
then frame_count*dim little-endian float32 values, row-major.

Manifest: UTF-8, one record per line,
``<utterance-id>\\t<feature-or-wav-path>[\\t<label-path>]``; relative paths
are resolved against the manifest's directory. Label files hold
whitespace-separated class indices.
"""

import csv
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .exceptions import FeatureFormatError, ManifestError
from .features import FeatureMatrix, Utterance

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"WFT1"
_FEATURE_HEADER = struct.Struct("<4sII")


@dataclass
class ManifestRecord:
    utterance_id: str
    path: Path
    label_path: Optional[Path] = None


def write_features(path, matrix):
    frames = np.ascontiguousarray(matrix.frames, dtype="<f4")
    with open(path, "wb") as handle:
        handle.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, frames.shape[0], frames.shape[1]))
        handle.write(frames.tobytes())


def read_features(path, frame_hop_ms=20.0):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FeatureFormatError(f"{path}: cannot read feature file ({exc})") from exc
    if len(blob) < _FEATURE_HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header")
    magic, num_frames, dim = _FEATURE_HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    expected = _FEATURE_HEADER.size + 4 * num_frames * dim
    if len(blob) != expected:
        raise FeatureFormatError(f"{path}: {len(blob)} bytes, expected {expected}")
    frames = np.frombuffer(blob, dtype="<f4", offset=_FEATURE_HEADER.size).reshape(num_frames, dim)
    try:
        return FeatureMatrix(frames.astype(np.float32), frame_hop_ms=frame_hop_ms)
    except ValueError as exc:
        raise FeatureFormatError(f"{path}: {exc}") from exc


def write_labels(path, labels):
    Path(path).write_text(" ".join(str(int(label)) for label in labels) + "\n", encoding="utf-8")


def read_labels(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ManifestError(f"{path}: cannot read label file ({exc})") from exc
    try:
        return np.array([int(token) for token in text.split()], dtype=np.int64)
    except ValueError as exc:
        raise ManifestError(f"{path}: labels must be integers ({exc})") from exc


def read_manifest(path):
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest {path} does not exist")
    try:
        frame = pd.read_csv(
            path, sep="\t", header=None, names=["utterance_id", "path", "label_path"],
            dtype=str, quoting=csv.QUOTE_NONE, keep_default_na=False, encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        return []
    except pd.errors.ParserError as exc:
        raise ManifestError(f"{path}: {exc}") from exc

    records = []
    for row in frame.itertuples(index=False):
        if not row.utterance_id or not isinstance(row.path, str) or not row.path:
            raise ManifestError(f"{path}: record {row.utterance_id!r} has no path")
        label = row.label_path if isinstance(row.label_path, str) and row.label_path else None
        records.append(ManifestRecord(
            row.utterance_id,
            _resolve(path.parent, row.path),
            _resolve(path.parent, label) if label else None,
        ))
    return records


def write_manifest(path, records):
    path = Path(path)
    lines = []
    for record in records:
        fields = [record.utterance_id, _relative(path.parent, record.path)]
        if record.label_path is not None:
            fields.append(_relative(path.parent, record.label_path))
        lines.append("\t".join(fields))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def write_corpus(out_dir, name, utterances):
    """Write feature/label files for ``utterances`` and a ``<name>.tsv`` manifest."""
    out_dir = Path(out_dir)
    feature_dir = out_dir / "features"
    label_dir = out_dir / "labels"
    feature_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for utterance in utterances:
        feature_path = feature_dir / f"{utterance.id}.wft"
        write_features(feature_path, utterance.features)
        label_path = None
        if utterance.labels is not None:
            label_dir.mkdir(parents=True, exist_ok=True)
            label_path = label_dir / f"{utterance.id}.lab"
            write_labels(label_path, utterance.labels)
        records.append(ManifestRecord(utterance.id, feature_path, label_path))
    manifest = out_dir / f"{name}.tsv"
    write_manifest(manifest, records)
    logger.info("wrote %d utterances to %s", len(records), manifest)
    return manifest


def load_corpus(manifest, with_labels=True):
    """Utterances listed in a feature manifest, in manifest order."""
    utterances = []
    for record in read_manifest(manifest):
        features = read_features(record.path)
        labels = read_labels(record.label_path) if with_labels and record.label_path else None
        utterances.append(Utterance(record.utterance_id, features, labels))
    return utterances


def write_sidecar(path, document):
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_sidecar(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ManifestError(f"{path}: unreadable sidecar ({exc})") from exc


def _resolve(base, value):
    candidate = Path(value)
    return candidate if candidate.is_absolute() else base / candidate


def _relative(base, value):
    value = Path(value)
    try:
        return value.resolve().relative_to(base.resolve()).as_posix()
    except ValueError:
        return str(value)
