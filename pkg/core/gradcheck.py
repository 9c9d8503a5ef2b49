"""Central-difference gradient checks for the acoustic model losses."""

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .data import DISTRACTOR_STREAM, stream_rng
from .losses import compute_losses

logger = logging.getLogger(__name__)


@dataclass
class GradientCheck:
    loss_name: str
    parameter: str
    relative_error: float
    analytic_norm: float
    numeric_norm: float


def relative_error(analytic, numeric, floor=1e-6):
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)


def loss_closure(model, batch, alpha, contrastive_cfg, seed=0):
    """Callable returning {"l_ce", "l_c", "combined"} for the current parameters.

    The distractor rng is rebuilt on each call so every evaluation contrasts
    against the same candidates.
    """

    def evaluate():
        rng = stream_rng(seed, DISTRACTOR_STREAM, 0)
        breakdown = compute_losses(model(batch), batch, alpha, contrastive_cfg, rng)
        values = {"l_c": breakdown.l_c, "combined": breakdown.combined}
        if breakdown.l_ce is not None:
            values["l_ce"] = breakdown.l_ce
        return values

    return evaluate


def numeric_gradients(evaluate, parameter, h=1e-5):
    """Central differences of every scalar returned by ``evaluate`` w.r.t. ``parameter``."""
    flat = parameter.data.view(-1)
    grads = {}
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + h
            plus = {k: v.item() for k, v in evaluate().items()}
            flat[i] = original - h
            minus = {k: v.item() for k, v in evaluate().items()}
            flat[i] = original
            for name in plus:
                grads.setdefault(name, np.zeros(flat.numel()))[i] = (plus[name] - minus[name]) / (2 * h)
    return {name: g.reshape(parameter.shape) for name, g in grads.items()}


def analytic_gradients(model, evaluate):
    values = evaluate()
    parameters = dict(model.named_parameters())
    grads = {}
    for loss_name, value in values.items():
        found = torch.autograd.grad(value, list(parameters.values()), retain_graph=True, allow_unused=True)
        grads[loss_name] = {
            name: (np.zeros(tuple(p.shape)) if g is None else g.detach().cpu().numpy())
            for (name, p), g in zip(parameters.items(), found)
        }
    return grads


def check_gradients(model, batch, alpha, contrastive_cfg, h=1e-5, seed=0):
    """Compare autograd against central differences for every parameter.

    The model should be in float64 and in eval mode (no dropout).
    """
    evaluate = loss_closure(model, batch, alpha, contrastive_cfg, seed)
    analytic = analytic_gradients(model, evaluate)
    results = []
    for name, parameter in model.named_parameters():
        numeric = numeric_gradients(evaluate, parameter, h)
        for loss_name, grad in numeric.items():
            expected = analytic[loss_name][name]
            results.append(GradientCheck(
                loss_name, name, relative_error(expected, grad),
                float(np.linalg.norm(expected)), float(np.linalg.norm(grad)),
            ))
    worst = max(results, key=lambda r: r.relative_error)
    logger.info("worst gradient mismatch %.3g (%s on %s)", worst.relative_error, worst.loss_name, worst.parameter)
    return results
