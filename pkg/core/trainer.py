"""The finetuning loop.

Each step draws a batch kind with probability p, takes the next batch of that
kind, plans its time masks, runs the model and optimizes

    labelled:   alpha * L_ce + (1 - alpha) * L_c
    unlabelled: L_c

with Adam under a linear warmup / linear decay learning rate. Steps are
numbered from 1 and the update at step s uses ``lr_at_step(s)``.
"""

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import torch

from .acoustic_model import build_model
from .checkpoint import load_checkpoint, load_parameters, restore_optimizer, save_checkpoint
from .data import (
    DISTRACTOR_STREAM, DROPOUT_STREAM, BatchKind, BatchStream, SamplerConfig,
    iterate_batches, limit_unlabelled, stream_rng,
)
from .exceptions import AlignmentError, CheckpointError, ConfigurationError, NonFiniteGradientError, NumericalError
from .features import beta_ratio
from .losses import compute_losses

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
METRICS_FILE = "metrics.jsonl"
FINAL_CHECKPOINT = "final.wftc"


def lr_at_step(step, total_steps, peak_lr, warmup_fraction):
    """Linear warmup to ``peak_lr`` over round(warmup_fraction * total) steps, then linear decay to 0.

    The warmup length is clamped to [1, total - 1]; the final step is always 0.
    """
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step == total_steps:
        return 0.0
    warmup = min(max(round(warmup_fraction * total_steps), 1), max(total_steps - 1, 1))
    if step <= warmup:
        return peak_lr * step / warmup
    return peak_lr * (total_steps - step) / (total_steps - warmup)


def checkpoint_name(step):
    return f"step-{step:06d}.wftc"


@dataclass
class TrainState:
    model: torch.nn.Module
    optimizer: torch.optim.Optimizer
    step: int = 0

    @classmethod
    def fresh(cls, model):
        optimizer = torch.optim.Adam(model.parameters(), lr=0.0, betas=ADAM_BETAS, eps=ADAM_EPS, foreach=False)
        return cls(model, optimizer)

    def moments(self, name):
        parameter = dict(self.model.named_parameters())[name]
        state = self.optimizer.state.get(parameter, {})
        return state.get("exp_avg"), state.get("exp_avg_sq")


@dataclass
class StepMetrics:
    step: int
    batch_kind: str
    l_ce: object
    l_c: float
    combined: float
    lr: float
    clamp_count: int
    wall_ms: float

    def to_json(self):
        return json.dumps(self.__dict__, sort_keys=False)


@dataclass
class TrainResult:
    state: TrainState
    metrics: List[StepMetrics] = field(default_factory=list)
    realized_beta: float = 0.0
    final_checkpoint: Optional[Path] = None
    checkpoints: List[Path] = field(default_factory=list)


def check_gradients_finite(gradients):
    for name, grad in gradients.items():
        if not torch.isfinite(grad).all():
            raise NonFiniteGradientError(f"non-finite gradient in {name}")


def adam_step(state, gradients, lr):
    """One Adam update with bias correction at learning rate ``lr``.

    ``gradients`` maps parameter names to tensors; parameters without an entry
    get a zero gradient so every moment advances on the same step count.
    """
    check_gradients_finite(gradients)
    for name, parameter in state.model.named_parameters():
        grad = gradients.get(name)
        if grad is None:
            grad = torch.zeros_like(parameter)
        elif grad.shape != parameter.shape:
            raise ConfigurationError(f"gradient for {name} has shape {tuple(grad.shape)}, expected {tuple(parameter.shape)}")
        parameter.grad = grad.detach().to(parameter.dtype)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.step()
    state.step += 1
    return state


def clip_gradients(gradients, max_norm):
    total = torch.linalg.vector_norm(torch.stack([torch.linalg.vector_norm(g) for g in gradients.values()]))
    scale = min(1.0, max_norm / (float(total) + 1e-6))
    if scale < 1.0:
        gradients = {name: g * scale for name, g in gradients.items()}
    return gradients


def prepare_corpora(config, labelled, unlabelled):
    """Validate corpora against ``config`` and apply the beta limit."""
    model_cfg = config.model
    for utterance in list(labelled) + list(unlabelled):
        if utterance.features.dim != model_cfg.input_dim:
            raise ConfigurationError(
                f"utterance {utterance.id} has {utterance.features.dim}-dim features, "
                f"model expects {model_cfg.input_dim}"
            )
    for utterance in labelled:
        if not utterance.is_labelled:
            raise ConfigurationError(f"utterance {utterance.id} in the labelled corpus has no labels")
        try:
            utterance.check_labels(model_cfg.num_classes)
        except AlignmentError as exc:
            raise ConfigurationError(str(exc)) from exc
    unlabelled = [u.unlabelled() for u in unlabelled]
    if config.data.beta_limit is not None:
        unlabelled = limit_unlabelled(labelled, unlabelled, config.data.beta_limit, config.train.seeds.data)
    return list(labelled), unlabelled


def _initial_state(config, init, resume):
    model = build_model(config.model, seed=config.train.seeds.init)
    state = TrainState.fresh(model)
    if resume is not None:
        checkpoint = load_checkpoint(resume) if not hasattr(resume, "params") else resume
        if checkpoint.config_digest != config.digest:
            raise ConfigurationError(
                f"checkpoint config {checkpoint.config_digest} does not match run config {config.digest}"
            )
        load_parameters(model, checkpoint)
        restore_optimizer(model, state.optimizer, checkpoint)
        state.step = checkpoint.step
        logger.info("resuming from step %d", state.step)
    elif init is not None:
        if isinstance(init, torch.nn.Module):
            model.load_state_dict(init.state_dict())
        else:
            checkpoint = load_checkpoint(init) if not hasattr(init, "params") else init
            try:
                load_parameters(model, checkpoint)
            except CheckpointError as exc:
                raise ConfigurationError(f"seed model does not fit the configured architecture: {exc}") from exc
        logger.info("initialised parameters from seed model")
    return state


def _read_metrics(path, up_to_step):
    if not path.exists():
        return []
    kept = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip() and json.loads(line)["step"] <= up_to_step:
            kept.append(line)
    return kept


def train(config, labelled, unlabelled, init=None, resume=None, out_dir=None):
    """Finetune a model; returns the final TrainState and the per-step metrics.

    ``init`` seeds parameters only (a model, a Checkpoint or a path);
    ``resume`` continues a run exactly from a checkpoint written by this
    function with the same config. With ``out_dir`` set, metrics are streamed
    to ``metrics.jsonl`` and checkpoints are written every
    ``train.checkpoint_every`` steps plus once at the end.
    """
    cfg = config.train
    labelled, unlabelled = prepare_corpora(config, labelled, unlabelled)
    realized_beta = beta_ratio(labelled, unlabelled)
    sampler = SamplerConfig(p=cfg.p, seed=cfg.seeds.data)
    stream = BatchStream(labelled, unlabelled, cfg.batch_size, sampler, cfg.seeds.data)
    if cfg.alpha < 1.0 or cfg.p < 1.0:
        short = [u.id for u in labelled + unlabelled if u.num_output_frames < 2]
        if short:
            raise ConfigurationError(f"{len(short)} utterances have fewer than 2 output frames, e.g. {short[0]}")

    state = _initial_state(config, init, resume)
    model = state.model
    result = TrainResult(state, realized_beta=realized_beta)
    metadata = {"config": config.to_dict(), "config_digest": config.digest, "realized_beta": realized_beta}

    metrics_handle = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / METRICS_FILE
        kept = _read_metrics(metrics_path, state.step)
        metrics_path.write_text("".join(line + "\n" for line in kept), encoding="utf-8")
        metrics_handle = metrics_path.open("a", encoding="utf-8")

    logger.info(
        "training %s preset: alpha=%.3g p=%.3g beta=%.3g steps %d..%d (config %s)",
        config.preset, cfg.alpha, cfg.p, realized_beta, state.step + 1, cfg.total_steps, config.digest,
    )
    batches = iterate_batches(stream, config.data, cfg.seeds.mask, state.step + 1, cfg.total_steps,
                              config.data.prefetch_depth)
    try:
        for step, batch in batches:
            started = time.perf_counter()
            model.train()
            if config.model.dropout > 0:
                torch.manual_seed(int(stream_rng(cfg.seeds.init, DROPOUT_STREAM, step).integers(2**62)))
            output = model(batch)
            rng = stream_rng(cfg.seeds.distractor, DISTRACTOR_STREAM, step)
            losses = compute_losses(output, batch, cfg.alpha, cfg.contrastive, rng)
            if not losses.is_finite():
                raise NumericalError(f"step {step}: non-finite loss {float(losses.combined)}")

            model.zero_grad(set_to_none=True)
            losses.combined.backward()
            gradients = {
                name: p.grad if p.grad is not None else torch.zeros_like(p)
                for name, p in model.named_parameters()
            }
            try:
                check_gradients_finite(gradients)
            except NonFiniteGradientError:
                logger.error("step %d (%s batch): non-finite gradient, stopping", step, batch.kind.value)
                raise
            if cfg.grad_clip is not None:
                gradients = clip_gradients(gradients, cfg.grad_clip)
            lr = lr_at_step(step, cfg.total_steps, cfg.peak_lr, cfg.warmup_fraction)
            adam_step(state, gradients, lr)

            record = StepMetrics(step=step, lr=lr, wall_ms=round((time.perf_counter() - started) * 1000, 3),
                                 **losses.as_record())
            result.metrics.append(record)
            if metrics_handle is not None:
                metrics_handle.write(record.to_json() + "\n")
            if step % cfg.log_every == 0:
                logger.info("step %d %s combined=%.4f lr=%.3g", step, record.batch_kind, record.combined, lr)

            if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                metrics_handle.flush()
                result.checkpoints.append(
                    save_checkpoint(out_dir / checkpoint_name(step), model, state.optimizer, step, metadata)
                )
    finally:
        batches.close()
        if metrics_handle is not None:
            metrics_handle.close()

    if out_dir is not None:
        result.final_checkpoint = save_checkpoint(
            out_dir / FINAL_CHECKPOINT, model, state.optimizer, state.step, metadata
        )
    model.eval()
    return result


def kind_counts(metrics):
    counts = {kind.value: 0 for kind in BatchKind}
    for record in metrics:
        counts[record.batch_kind] += 1
    return counts
