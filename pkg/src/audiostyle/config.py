"""Configuration types and the strict JSON run-config parser.

Every config is a frozen pydantic model with ``extra="forbid"`` so a typo in
a key is a hard error instead of a silently ignored setting.
"""

from __future__ import annotations

import json
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

LAYER_PREFIX = "block"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, strict=True)


class StftConfig(_Strict):
    sample_rate: int = Field(16000, gt=0)
    frame_len: int = Field(480, gt=0)
    hop: int = Field(160, gt=0)
    fft_size: int = Field(512, gt=0)
    window: Literal["periodic-hann"] = "periodic-hann"
    clip_len: int = Field(41120, gt=0)

    @model_validator(mode="after")
    def _check(self) -> StftConfig:
        if self.frame_len % self.hop:
            raise ValueError("hop must divide frame_len")
        if self.fft_size < self.frame_len:
            raise ValueError("fft_size must be >= frame_len")
        if self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two")
        if self.clip_len < self.frame_len:
            raise ValueError("clip_len must be >= frame_len")
        return self

    @property
    def num_frames(self) -> int:
        return 1 + (self.clip_len - self.frame_len) // self.hop

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1


class ConvBlock(_Strict):
    out_channels: int = Field(gt=0)
    kernel: Literal[3] = 3
    pool: bool = True


class Head(_Strict):
    hidden_units: int = Field(128, gt=0)
    num_classes: int = Field(4, ge=2)


def _default_blocks() -> tuple[ConvBlock, ...]:
    return tuple(ConvBlock(out_channels=c) for c in (16, 32, 64, 64))


class NetworkSpec(_Strict):
    conv_blocks: tuple[ConvBlock, ...] = Field(default_factory=_default_blocks, min_length=1)
    head: Head = Head()

    @property
    def layer_ids(self) -> tuple[str, ...]:
        return tuple(f"{LAYER_PREFIX}{i + 1}" for i in range(len(self.conv_blocks)))


class Archetype(_Strict):
    """Recipe for one synthetic instrument class."""

    name: str
    num_partials: int = Field(ge=1)
    partial_decay_exponent: float = Field(ge=0)
    vibrato_depth: float = Field(0.0, ge=0)
    attack_ms: float = Field(10.0, ge=0)
    decay_s: float = Field(1.0, gt=0)
    noise_floor: float = Field(1e-4, ge=0)
    formants_hz: tuple[float, ...] = ()


def _default_archetypes() -> tuple[Archetype, ...]:
    return (
        Archetype(name="tuning-fork", num_partials=1, partial_decay_exponent=0.0,
                  attack_ms=5.0, decay_s=3.0, noise_floor=1e-4),
        Archetype(name="violin", num_partials=12, partial_decay_exponent=1.0,
                  vibrato_depth=0.01, attack_ms=120.0, decay_s=8.0, noise_floor=1e-3),
        Archetype(name="harp", num_partials=8, partial_decay_exponent=1.5,
                  attack_ms=2.0, decay_s=0.5, noise_floor=1e-4),
        Archetype(name="voice", num_partials=16, partial_decay_exponent=0.5,
                  vibrato_depth=0.02, attack_ms=60.0, decay_s=5.0, noise_floor=3e-3,
                  formants_hz=(700.0, 1200.0, 2600.0)),
    )


class SynthCorpusConfig(_Strict):
    num_classes: int = Field(4, ge=2)
    clips_per_class: int = Field(64, ge=2)
    seed: int = 0
    archetypes: tuple[Archetype, ...] = Field(default_factory=_default_archetypes)
    f0_range_hz: tuple[float, float] = (110.0, 880.0)

    @model_validator(mode="after")
    def _check(self) -> SynthCorpusConfig:
        if len(self.archetypes) < self.num_classes:
            raise ValueError(f"need {self.num_classes} archetypes, got {len(self.archetypes)}")
        recipes = [a.model_dump(exclude={"name"}) for a in self.archetypes[: self.num_classes]]
        for i in range(len(recipes)):
            for j in range(i):
                if recipes[i] == recipes[j]:
                    raise ValueError(f"archetypes {j} and {i} are identical")
        lo, hi = self.f0_range_hz
        if not 0 < lo <= hi:
            raise ValueError("f0_range_hz must satisfy 0 < low <= high")
        return self


class AdamConfig(_Strict):
    learning_rate: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    epochs: int = Field(30, ge=1)
    batch_size: int = Field(8, ge=1)
    clip_norm: float | None = Field(10.0, gt=0)
    target_accuracy: float | None = Field(None, gt=0, le=1)


class LossWeights(_Strict):
    alpha: float = Field(1.0, ge=0)
    beta: float = Field(10.0, ge=0)
    gamma: float = Field(10.0, ge=0)
    delta: float = Field(1000.0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> LossWeights:
        if not any((self.alpha, self.beta, self.gamma, self.delta)):
            raise ValueError("at least one loss weight must be positive")
        return self


class InitConfig(_Strict):
    kind: Literal["gaussian"] = "gaussian"
    seed: int = 0


class TransferConfig(_Strict):
    weights: LossWeights = LossWeights()
    content_layers: tuple[str, ...] = ("block3",)
    style_layers: tuple[str, ...] = ("block1", "block2", "block3")
    steps: int = Field(1000, ge=1)
    adam: AdamConfig = AdamConfig(learning_rate=0.1)
    init: InitConfig = InitConfig()
    griffin_lim_iters: int = Field(100, ge=1)
    phase_seed: int = 0
    epsilon: float = Field(1e-6, gt=0)

    @field_validator("content_layers", "style_layers")
    @classmethod
    def _layers(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        for name in v:
            if not (name.startswith(LAYER_PREFIX) and name[len(LAYER_PREFIX):].isdigit()):
                raise ValueError(f"bad layer id {name!r}")
        return v


class Paths(_Strict):
    checkpoint: str = "checkpoint.astc"
    output_dir: str = "out"


class Seeds(_Strict):
    corpus: int = 0
    train: int = 0
    transfer: int = 0
    phase: int = 0


class RunConfig(_Strict):
    stft: StftConfig = StftConfig()
    network: NetworkSpec = NetworkSpec()
    corpus: SynthCorpusConfig = SynthCorpusConfig()
    training: AdamConfig = AdamConfig()
    transfer: TransferConfig = TransferConfig()
    paths: Paths = Paths()
    seeds: Seeds = Seeds()

    @model_validator(mode="after")
    def _check(self) -> RunConfig:
        if self.corpus.num_classes != self.network.head.num_classes:
            raise ValueError("corpus.num_classes must equal network.head.num_classes")
        known = set(self.network.layer_ids)
        for field in ("content_layers", "style_layers"):
            for name in getattr(self.transfer, field):
                if name not in known:
                    raise ValueError(f"transfer.{field}: layer {name!r} is not in the network")
        return self


_SEED_ROUTES = (
    ("corpus", ("corpus", "seed")),
    ("transfer", ("transfer", "init", "seed")),
    ("phase", ("transfer", "phase_seed")),
)


def _route_seeds(doc: dict) -> None:
    """Copy the top-level ``seeds`` block into the sub-configs that consume them."""
    seeds = doc.get("seeds", {})
    if not isinstance(seeds, dict):
        return
    for key, path in _SEED_ROUTES:
        node = doc
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                return
        leaf = path[-1]
        if leaf in node:
            raise ConfigError(f"{'.'.join(path)}: set via seeds.{key} instead")
        if key in seeds:
            node[leaf] = seeds[key]


def _format_validation(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = e["msg"]
        if e["type"] == "extra_forbidden":
            msg = "unknown key"
        parts.append(f"{loc}: {msg}")
    return "; ".join(parts)


def parse_config(text: str) -> RunConfig:
    """Parse a JSON run config; omitted keys take their defaults."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"line {e.lineno} col {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected a JSON object")
    try:
        _route_seeds(doc)
        return RunConfig.model_validate_json(json.dumps(doc))
    except ValidationError as e:
        raise ConfigError(_format_validation(e)) from None


def serialize_config(cfg: RunConfig) -> str:
    doc = cfg.model_dump(mode="json")
    # routed seeds are emitted only in the seeds block
    del doc["corpus"]["seed"]
    del doc["transfer"]["init"]["seed"]
    del doc["transfer"]["phase_seed"]
    return json.dumps(doc, indent=2, sort_keys=True)


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
