"""The convTransformer acoustic model.

masked 160-dim frames -> stride-2 convolutional subsampling -> N convTransformer
blocks (relative-position self-attention, depthwise convolution, FFN) ->
  * projection + softmax: posteriors over the C frame classes
  * FFN context head: context vectors c_t
and, from the unmasked input frames aligned with each output frame, a linear
target transform producing q_t (no quantizer).
"""

import logging
import math
import threading
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .data import apply_mask
from .exceptions import AlignmentError, ConfigurationError, ShapeError, TooShortError
from .features import SUBSAMPLE_KERNEL, SUBSAMPLE_STRIDE, output_frame_count

logger = logging.getLogger(__name__)

# fork_rng swaps the process-wide generator; concurrent builds must not interleave.
_INIT_LOCK = threading.Lock()


@dataclass
class ForwardOutput:
    posteriors: torch.Tensor       # B x T x C, rows sum to 1
    contexts: torch.Tensor         # B x T x context_dim
    targets: torch.Tensor          # B x T x context_dim
    output_valid: torch.Tensor     # B x T bool
    masked_positions: torch.Tensor  # B x T bool, masked and valid

    def masked_valid_positions(self):
        return [tuple(pair) for pair in self.masked_positions.nonzero().tolist()]


class SubsampleConv(nn.Module):
    """One 1-D convolution over time, kernel 3, stride 2, then GELU."""

    def __init__(self, input_dim, model_dim, kernel=SUBSAMPLE_KERNEL, stride=SUBSAMPLE_STRIDE):
        super().__init__()
        if stride != SUBSAMPLE_STRIDE:
            raise ConfigurationError(f"subsampling stride is fixed at {SUBSAMPLE_STRIDE}, got {stride}")
        self.conv = nn.Conv1d(input_dim, model_dim, kernel_size=kernel, stride=stride)

    def forward(self, x):
        if x.shape[1] < self.conv.kernel_size[0]:
            raise TooShortError(f"{x.shape[1]} input frames, need at least {self.conv.kernel_size[0]}")
        return F.gelu(self.conv(x.transpose(1, 2))).transpose(1, 2)


class RelativePositionBias(nn.Module):
    """Learned scalar logit per head and clipped offset t - s."""

    def __init__(self, num_heads, max_rel_dist):
        super().__init__()
        self.max_rel_dist = max_rel_dist
        self.table = nn.Parameter(torch.zeros(num_heads, 2 * max_rel_dist + 1))

    def offsets(self, length, device=None):
        positions = torch.arange(length, device=device)
        distance = positions[:, None] - positions[None, :]
        return distance.clamp(-self.max_rel_dist, self.max_rel_dist) + self.max_rel_dist

    def forward(self, length):
        return self.table[:, self.offsets(length, self.table.device)]  # H x T x T


class RelPosSelfAttention(nn.Module):
    def __init__(self, model_dim, num_heads, max_rel_dist, dropout=0.0):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = model_dim // num_heads
        self.qkv = nn.Linear(model_dim, 3 * model_dim)
        self.out = nn.Linear(model_dim, model_dim)
        self.rel_pos = RelativePositionBias(num_heads, max_rel_dist)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x):
        batch, length, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        shape = (batch, length, self.num_heads, self.head_dim)
        return (t.reshape(shape).transpose(1, 2) for t in (q, k, v))

    def _attend(self, x, valid):
        q, k, v = self._split(x)
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim) + self.rel_pos(x.shape[1])
        logits = logits.masked_fill(~valid[:, None, None, :], float("-inf"))
        return torch.softmax(logits, dim=-1), v

    def weights(self, x, valid):
        """Attention weights B x H x T x T; padded keys get zero weight."""
        return self._attend(x, valid)[0]

    def forward(self, x, valid):
        batch, length, dim = x.shape
        weights, v = self._attend(x, valid)
        weights = self.dropout(weights)
        context = (weights @ v).transpose(1, 2).reshape(batch, length, dim)
        return self.out(context)


class ConvModule(nn.Module):
    """Pre-norm depthwise convolution (kernel 3), pointwise mix, GELU."""

    def __init__(self, model_dim, kernel, dropout=0.0):
        super().__init__()
        self.norm = nn.LayerNorm(model_dim)
        self.depthwise = nn.Conv1d(model_dim, model_dim, kernel_size=kernel, padding=kernel // 2, groups=model_dim)
        self.pointwise = nn.Conv1d(model_dim, model_dim, kernel_size=1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, valid):
        # Padding enters the convolution as zeros, same as the sequence edge.
        h = self.norm(x).masked_fill(~valid.unsqueeze(-1), 0.0).transpose(1, 2)
        h = F.gelu(self.pointwise(self.depthwise(h))).transpose(1, 2)
        return self.dropout(h)


class FeedForward(nn.Module):
    def __init__(self, model_dim, ffn_dim, dropout=0.0):
        super().__init__()
        self.norm = nn.LayerNorm(model_dim)
        self.inner = nn.Linear(model_dim, ffn_dim)
        self.outer = nn.Linear(ffn_dim, model_dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        h = self.dropout(F.gelu(self.inner(self.norm(x))))
        return self.dropout(self.outer(h))


class ConvTransformerBlock(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.attn_norm = nn.LayerNorm(cfg.model_dim)
        self.attn = RelPosSelfAttention(cfg.model_dim, cfg.num_heads, cfg.max_rel_dist, cfg.dropout)
        self.conv = ConvModule(cfg.model_dim, cfg.conv_kernel, cfg.dropout)
        self.ffn = FeedForward(cfg.model_dim, cfg.ffn_dim, cfg.dropout)

    def forward(self, x, valid):
        x = x + self.attn(self.attn_norm(x), valid)
        x = x + self.conv(x, valid)
        return x + self.ffn(x)


class AcousticModel(nn.Module):
    def __init__(self, cfg, seed=None):
        super().__init__()
        if cfg.model_dim % cfg.num_heads:
            raise ConfigurationError(f"model_dim={cfg.model_dim} not divisible by num_heads={cfg.num_heads}")
        self.cfg = cfg
        context_dim = cfg.effective_context_dim
        self.mask_embedding = nn.Parameter(torch.zeros(cfg.input_dim))
        self.subsample = SubsampleConv(cfg.input_dim, cfg.model_dim, cfg.conv_kernel, cfg.subsample_stride)
        self.blocks = nn.ModuleList(ConvTransformerBlock(cfg) for _ in range(cfg.num_blocks))
        self.final_norm = nn.LayerNorm(cfg.model_dim)
        self.projection = nn.Linear(cfg.model_dim, cfg.num_classes)
        self.context_head = nn.Sequential(
            nn.Linear(cfg.model_dim, cfg.model_dim),
            nn.GELU(),
            nn.Linear(cfg.model_dim, context_dim),
        )
        self.target_transform = nn.Linear(cfg.input_dim, context_dim)
        if seed is not None:
            with _INIT_LOCK, torch.random.fork_rng(devices=[]):
                torch.manual_seed(seed)
                self.reset_parameters()
        else:
            self.reset_parameters()

    def reset_parameters(self):
        std = self.cfg.init_std
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Conv1d)):
                nn.init.trunc_normal_(module.weight, std=std, a=-2 * std, b=2 * std)
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        nn.init.trunc_normal_(self.mask_embedding, std=std, a=-2 * std, b=2 * std)

    def output_valid(self, valid):
        lengths = [output_frame_count(int(n)) for n in valid.sum(dim=1)]
        length = output_frame_count(valid.shape[1])
        return torch.arange(length, device=valid.device)[None, :] < torch.tensor(lengths, device=valid.device)[:, None]

    def encode(self, features, valid, mask=None):
        """Trunk output z_t (B x T x model_dim) and its validity mask."""
        if features.shape[-1] != self.cfg.input_dim:
            raise ShapeError(f"feature dim {features.shape[-1]} != model input dim {self.cfg.input_dim}")
        x = features if mask is None else apply_mask(features, mask, self.mask_embedding)
        x = self.subsample(x)
        out_valid = self.output_valid(valid)
        for block in self.blocks:
            x = block(x, out_valid)
        return self.final_norm(x), out_valid

    def forward(self, batch, apply_masking=True):
        mask = batch.mask if apply_masking else None
        features = batch.features.to(self.mask_embedding.dtype)
        z, out_valid = self.encode(features, batch.valid, mask)
        length = z.shape[1]
        if batch.labels is not None and batch.labels.shape[1] != length:
            raise AlignmentError(f"labels have {batch.labels.shape[1]} frames, model output has {length}")

        posteriors = torch.softmax(self.projection(z), dim=-1)
        contexts = self.context_head(z)
        # Targets come from the unmasked input frame 2t+1 aligned with output t.
        aligned = features[:, 1::SUBSAMPLE_STRIDE][:, :length]
        targets = self.target_transform(aligned)

        if mask is None:
            masked = torch.zeros_like(out_valid)
        else:
            masked = mask[:, 1::SUBSAMPLE_STRIDE][:, :length] & out_valid
        return ForwardOutput(posteriors, contexts, targets, out_valid, masked)

    @torch.no_grad()
    def posteriors(self, features, valid):
        """Inference path: trunk and projection only, no masking."""
        z, out_valid = self.encode(features.to(self.mask_embedding.dtype), valid)
        return torch.softmax(self.projection(z), dim=-1), out_valid

    def inference_parameter_names(self):
        skipped = ("mask_embedding", "context_head.", "target_transform.")
        return [name for name, _ in self.named_parameters() if not name.startswith(skipped)]


def count_parameters(model):
    return sum(p.numel() for p in model.parameters())


def expected_parameter_count(cfg):
    """Closed-form parameter count for a ModelConfig."""
    d, d_in, h, f, k = cfg.model_dim, cfg.input_dim, cfg.num_heads, cfg.ffn_dim, cfg.conv_kernel
    context_dim = cfg.effective_context_dim
    layer_norm = 2 * d
    attention = layer_norm + (d * 3 * d + 3 * d) + (d * d + d) + h * (2 * cfg.max_rel_dist + 1)
    conv = layer_norm + (d * k + d) + (d * d + d)
    ffn = layer_norm + (d * f + f) + (f * d + d)
    return (
        d_in
        + (d_in * d * k + d)
        + cfg.num_blocks * (attention + conv + ffn)
        + layer_norm
        + (d * cfg.num_classes + cfg.num_classes)
        + (d * d + d) + (d * context_dim + context_dim)
        + (d_in * context_dim + context_dim)
    )


def build_model(cfg, seed=0, dtype=torch.float32):
    model = AcousticModel(cfg, seed=seed).to(dtype)
    logger.debug("built acoustic model with %d parameters", count_parameters(model))
    return model
