"""Run configuration: sections, presets, file loading, overrides and hashing.

A run is described by one RunConfig with the sections [features], [data],
[model], [train] and [eval]. The effective config is built in layers:
preset defaults, then a TOML (or echoed JSON) file, then ``section.key=value``
overrides. Unknown keys are rejected and every value is checked with Django's
validators so the commands fail before any compute.
"""

import copy
import dataclasses
import hashlib
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
import typing
from typing import Optional

from django.core.exceptions import ValidationError
from django.core.validators import MaxValueValidator, MinValueValidator

SECTIONS = ("features", "data", "model", "train", "eval")
PRESETS = ("paper", "desk")
ALPHA_GRID = (0.05, 0.25, 0.5, 0.75, 1.0)
BETA_GRID = (0.1, 0.5, 1.0, 5.0)
RUNTIME_ONLY_KEYS = ("data.prefetch_depth", "train.log_every")


@dataclass
class FeatureConfig:
    sample_rate_hz: int = 16000
    n_mels: int = 80
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512
    floor_epsilon: float = 1e-10
    vad_threshold_db: float = -30.0
    vad_min_segment_ms: float = 100.0

    def validate(self, errors):
        _check(errors, "features.sample_rate_hz", self.sample_rate_hz, MinValueValidator(1))
        _check(errors, "features.n_mels", self.n_mels, MinValueValidator(1))
        _check(errors, "features.win_ms", self.win_ms, MinValueValidator(1e-3))
        _check(errors, "features.hop_ms", self.hop_ms, MinValueValidator(1e-3))
        _check(errors, "features.floor_epsilon", self.floor_epsilon, MinValueValidator(1e-30))
        _check(errors, "features.vad_threshold_db", self.vad_threshold_db, MaxValueValidator(0.0))
        _check(errors, "features.vad_min_segment_ms", self.vad_min_segment_ms, MinValueValidator(0.0))
        win_samples = int(round(self.sample_rate_hz * self.win_ms / 1000.0))
        if self.n_fft < win_samples:
            errors.setdefault("features.n_fft", []).append(
                f"n_fft={self.n_fft} is shorter than the {win_samples}-sample window"
            )


@dataclass
class DataConfig:
    mask_start_prob: float = 0.065
    mask_span: int = 4
    min_masked_positions: int = 2
    beta_limit: Optional[float] = None
    prefetch_depth: int = 2

    def validate(self, errors):
        _check(errors, "data.mask_start_prob", self.mask_start_prob,
               MinValueValidator(0.0), MaxValueValidator(1.0))
        _check(errors, "data.mask_span", self.mask_span, MinValueValidator(1))
        _check(errors, "data.min_masked_positions", self.min_masked_positions, MinValueValidator(1))
        if self.beta_limit is not None:
            _check(errors, "data.beta_limit", self.beta_limit, MinValueValidator(0.0))
        _check(errors, "data.prefetch_depth", self.prefetch_depth, MinValueValidator(0))


@dataclass
class ModelConfig:
    num_blocks: int = 2
    model_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    conv_kernel: int = 3
    subsample_stride: int = 2
    num_classes: int = 32
    context_dim: Optional[int] = None
    max_rel_dist: int = 16
    input_dim: int = 160
    dropout: float = 0.0
    init_std: float = 0.02

    @property
    def effective_context_dim(self):
        return self.context_dim if self.context_dim is not None else max(1, self.model_dim // 2)

    def validate(self, errors):
        for name in ("num_blocks", "model_dim", "num_heads", "ffn_dim", "conv_kernel",
                     "max_rel_dist", "input_dim"):
            _check(errors, f"model.{name}", getattr(self, name), MinValueValidator(1))
        _check(errors, "model.num_classes", self.num_classes, MinValueValidator(2))
        if self.context_dim is not None:
            _check(errors, "model.context_dim", self.context_dim, MinValueValidator(1))
        _check(errors, "model.dropout", self.dropout, MinValueValidator(0.0), MaxValueValidator(0.9))
        _check(errors, "model.init_std", self.init_std, MinValueValidator(0.0))
        if self.num_heads >= 1 and self.model_dim % self.num_heads:
            errors.setdefault("model.model_dim", []).append(
                f"model_dim={self.model_dim} is not divisible by num_heads={self.num_heads}"
            )
        if self.subsample_stride != 2:
            errors.setdefault("model.subsample_stride", []).append(
                "the subsampling convolution has a fixed stride of 2"
            )
        if self.conv_kernel != 3:
            errors.setdefault("model.conv_kernel", []).append(
                "the subsampling and depthwise convolutions use kernel 3"
            )


@dataclass
class ContrastiveConfig:
    temperature: float = 0.1
    num_distractors: int = 10
    cosine_epsilon: float = 1e-8
    include_positive: bool = True

    def validate(self, errors):
        _check(errors, "train.contrastive.temperature", self.temperature, MinValueValidator(1e-6))
        _check(errors, "train.contrastive.num_distractors", self.num_distractors, MinValueValidator(1))
        _check(errors, "train.contrastive.cosine_epsilon", self.cosine_epsilon, MinValueValidator(1e-30))


@dataclass
class SeedConfig:
    """Named RNG streams: data order, masking, distractors, init/dropout."""
    data: int = 0
    mask: int = 1
    distractor: int = 2
    init: int = 3


@dataclass
class TrainConfig:
    alpha: float = 0.5
    p: float = 0.5
    total_steps: int = 600
    peak_lr: float = 1e-3
    warmup_fraction: float = 0.1
    batch_size: int = 8
    checkpoint_every: int = 200
    log_every: int = 50
    grad_clip: Optional[float] = None
    seeds: SeedConfig = field(default_factory=SeedConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)

    def validate(self, errors):
        _check(errors, "train.alpha", self.alpha, MinValueValidator(0.0), MaxValueValidator(1.0))
        _check(errors, "train.p", self.p, MinValueValidator(0.0), MaxValueValidator(1.0))
        _check(errors, "train.total_steps", self.total_steps, MinValueValidator(1))
        _check(errors, "train.batch_size", self.batch_size, MinValueValidator(1))
        _check(errors, "train.checkpoint_every", self.checkpoint_every, MinValueValidator(0))
        _check(errors, "train.log_every", self.log_every, MinValueValidator(1))
        if not self.peak_lr > 0:
            errors.setdefault("train.peak_lr", []).append("peak_lr must be > 0")
        if not 0 < self.warmup_fraction < 1:
            errors.setdefault("train.warmup_fraction", []).append("warmup_fraction must be in (0, 1)")
        if self.grad_clip is not None and not self.grad_clip > 0:
            errors.setdefault("train.grad_clip", []).append("grad_clip must be > 0 when set")
        self.contrastive.validate(errors)


@dataclass
class EvalConfig:
    decimals: int = 2
    per_class: bool = True

    def validate(self, errors):
        _check(errors, "eval.decimals", self.decimals, MinValueValidator(0), MaxValueValidator(8))


@dataclass
class RunConfig:
    preset: str = "desk"
    features: FeatureConfig = field(default_factory=FeatureConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        errors = _type_errors(self, "")
        if errors:
            raise ValidationError(errors)
        if self.preset not in PRESETS:
            errors["preset"] = [f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}"]
        for section in SECTIONS:
            getattr(self, section).validate(errors)
        if errors:
            raise ValidationError(errors)
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def digest(self):
        """Content hash of the effective config, embedded in every artifact.

        RUNTIME_ONLY_KEYS do not affect results and are left out.
        """
        document = self.to_dict()
        for key in RUNTIME_ONLY_KEYS:
            section, name = key.split(".")
            document[section].pop(name)
        return config_digest(document)

    @classmethod
    def from_dict(cls, document):
        document = copy.deepcopy(document)
        preset = document.pop("preset", "desk")
        merged = _merge(preset_dict(preset), document)
        return _build(cls, merged, "")


def config_digest(document):
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def preset_dict(name):
    """Default values of a preset as a plain nested dict."""
    if name not in PRESETS:
        raise ValidationError({"preset": [f"unknown preset {name!r}; choose from {', '.join(PRESETS)}"]})
    base = dataclasses.asdict(RunConfig())
    base["preset"] = name
    if name == "paper":
        base["model"].update(num_blocks=18, model_dim=624, num_heads=8, ffn_dim=2048,
                             num_classes=6000, context_dim=312, max_rel_dist=64)
        base["data"].update(mask_span=10)
        base["train"].update(total_steps=100000, batch_size=32, checkpoint_every=5000, log_every=500)
        base["train"]["contrastive"].update(num_distractors=100)
    return base


def load_config(path=None, preset=None, overrides=(), flags=None):
    """Build and validate the effective RunConfig.

    ``overrides`` are ``section.key=value`` strings; ``flags`` maps dotted keys
    to already-typed values (the dedicated command-line flags) and is applied
    last.
    """
    document = {}
    if path is not None:
        document = read_config_file(path)
    if preset is not None:
        document["preset"] = preset
    for item in overrides:
        key, value = parse_override(item)
        _set_dotted(document, key, value)
    for key, value in (flags or {}).items():
        if value is not None:
            _set_dotted(document, key, value)
    return RunConfig.from_dict(document).validate()


def read_config_file(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ValidationError({"config": [f"{path}: cannot read config file ({exc})"]}) from exc
    try:
        document = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ValidationError({"config": [f"{path}: {exc}"]}) from exc
    if not isinstance(document, dict):
        raise ValidationError({"config": [f"{path}: top level must be a table"]})
    return document


def parse_override(item):
    if "=" not in item:
        raise ValidationError({"override": [f"expected section.key=value, got {item!r}"]})
    key, raw = item.split("=", 1)
    key = key.strip()
    raw = raw.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    if raw.lower() in ("none", "null"):
        value = None
    return key, value


def _set_dotted(document, key, value):
    parts = key.split(".")
    node = document
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ValidationError({key: ["cannot override inside a scalar value"]})
    node[parts[-1]] = value


def _merge(base, update):
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def _build(cls, values, prefix):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ValidationError({f"{prefix}{name}": ["unknown key"] for name in unknown})
    kwargs = {}
    for name, value in values.items():
        default = known[name].default_factory() if known[name].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            if not isinstance(value, dict):
                raise ValidationError({f"{prefix}{name}": ["expected a table"]})
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        else:
            kwargs[name] = value
    return cls(**kwargs)


_EXPECTED_TYPES = {
    int: ((int,), "an integer"),
    float: ((int, float), "a number"),
    bool: ((bool,), "true or false"),
    str: ((str,), "a string"),
}


def _type_errors(section, prefix):
    """Values whose type does not match the field annotation, keyed by dotted name."""
    errors = {}
    hints = typing.get_type_hints(type(section))
    for f in dataclasses.fields(section):
        value = getattr(section, f.name)
        if dataclasses.is_dataclass(value):
            errors.update(_type_errors(value, f"{prefix}{f.name}."))
            continue
        hint = hints[f.name]
        args = typing.get_args(hint)
        if type(None) in args:
            if value is None:
                continue
            hint = next(arg for arg in args if arg is not type(None))
        accepted, description = _EXPECTED_TYPES[hint]
        if (isinstance(value, bool) and hint is not bool) or not isinstance(value, accepted):
            errors[f"{prefix}{f.name}"] = [f"expected {description}, got {value!r}"]
    return errors


def _check(errors, name, value, *validators):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.setdefault(name, []).append(f"expected a number, got {value!r}")
        return
    for validator in validators:
        try:
            validator(value)
        except ValidationError as exc:
            errors.setdefault(name, []).extend(exc.messages)
