"""Run orchestration shared by the train, eval, compare and sweep commands.

Loads corpora, checks artifact digests, runs the trainer or the evaluator and
keeps the run registry current.
"""

import logging
from pathlib import Path

from django.db import connection

from .acoustic_model import build_model
from .checkpoint import load_checkpoint, load_parameters
from .config import RunConfig
from .evaluation import EvalReport, evaluate_frame_accuracy
from .exceptions import CheckpointError, ConfigurationError
from .models import EvaluationRecord, TrainingRun
from .storage import load_corpus, read_sidecar, write_sidecar
from .trainer import train

logger = logging.getLogger(__name__)

EXTRACT_SIDECAR = "extract.json"


def check_feature_provenance(manifest, config):
    """Reject features extracted under a different [features] section."""
    sidecar = Path(manifest).parent / EXTRACT_SIDECAR
    if not sidecar.exists():
        return
    extracted = read_sidecar(sidecar).get("config", {}).get("features")
    if extracted is not None and extracted != config.to_dict()["features"]:
        raise ConfigurationError(
            f"{manifest} was extracted with a different [features] config "
            f"({read_sidecar(sidecar).get('config_digest')})"
        )


def load_corpora(config, labelled_manifests, unlabelled_manifests):
    """Concatenate every labelled and unlabelled manifest, in order."""
    labelled, unlabelled = [], []
    for manifest in labelled_manifests:
        check_feature_provenance(manifest, config)
        labelled.extend(load_corpus(manifest, with_labels=True))
    for manifest in unlabelled_manifests:
        check_feature_provenance(manifest, config)
        unlabelled.extend(load_corpus(manifest, with_labels=False))
    logger.info("loaded %d labelled and %d unlabelled utterances", len(labelled), len(unlabelled))
    return labelled, unlabelled


def run_kind(config):
    return 'BASELINE' if config.train.p == 1.0 and config.train.alpha == 1.0 else 'WAVFT'


def run_training(config, labelled, unlabelled, out_dir, init=None, resume=None, record=True):
    """Train, echo the effective config next to the checkpoints and record the run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_sidecar(out_dir / "config.json", {"config": config.to_dict(), "config_digest": config.digest})

    run = None
    if record:
        run = TrainingRun.objects.create(
            output_dir=str(out_dir),
            kind=run_kind(config),
            preset=config.preset,
            config_digest=config.digest,
            config=config.to_dict(),
            alpha=config.train.alpha,
            p=config.train.p,
            beta=config.data.beta_limit,
            seed_data=config.train.seeds.data,
            total_steps=config.train.total_steps,
        )
    try:
        result = train(config, labelled, unlabelled, init=init, resume=resume, out_dir=out_dir)
    except Exception as e:
        if run is not None:
            run.mark_failed(e)
        raise

    if run is not None:
        run.beta = result.realized_beta
        last = result.metrics[-1].combined if result.metrics else None
        run.mark_completed(result.state.step, result.final_checkpoint, last)
    return result, run


def load_model(checkpoint):
    """Model described by a checkpoint's embedded config, with its parameters."""
    if not hasattr(checkpoint, "params"):
        checkpoint = load_checkpoint(checkpoint)
    try:
        config = RunConfig.from_dict(checkpoint.metadata["config"]).validate()
    except KeyError as exc:
        raise CheckpointError("checkpoint metadata has no config") from exc
    model = build_model(config.model)
    load_parameters(model, checkpoint)
    model.eval()
    return model, config, checkpoint


def evaluate_checkpoint(path, utterances, record=True, training_run=None, manifest=None):
    """EvalReport for the checkpoint at ``path``; optionally stored in the registry.

    When ``manifest`` is given its extraction config must match the checkpoint's.
    """
    model, config, checkpoint = load_model(load_checkpoint(path))
    if manifest is not None:
        check_feature_provenance(manifest, config)
    report = evaluate_frame_accuracy(model, utterances, checkpoint.checkpoint_id, checkpoint.config_digest)
    if record:
        if training_run is None:
            training_run = TrainingRun.objects.filter(final_checkpoint=str(path)).first()
        EvaluationRecord.objects.update_or_create(
            checkpoint_id=report.checkpoint_id,
            eval_digest=report.eval_digest,
            defaults={
                "training_run": training_run,
                "checkpoint_path": str(path),
                "config_digest": report.config_digest,
                "frame_accuracy": report.frame_accuracy,
                "num_frames": report.num_frames,
                "per_class_accuracy": report.per_class_accuracy,
            },
        )
    return report


def load_report(path, utterances=None, record=False, manifest=None):
    """An EvalReport from a saved report (.json) or by evaluating a checkpoint."""
    path = Path(path)
    if path.suffix == ".json":
        return EvalReport.load(path)
    if utterances is None:
        raise ConfigurationError(f"{path}: evaluating a checkpoint needs an eval manifest")
    return evaluate_checkpoint(path, utterances, record=record, manifest=manifest)


def release_connection():
    """Close this thread's database connection once a worker is done."""
    connection.close()
