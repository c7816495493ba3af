"""Model and run configuration.

Config files are plain text, one ``section.field=value`` per line, ``#``
comments allowed.  CLI override arguments use the same syntax.
``model.preset=micro|desk|paper`` loads a whole model preset before any
explicit ``model.*`` field is applied.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .errors import ConfigError


@dataclass
class ModelConfig:
    image_size: int = 64
    image_channels: int = 1
    n: int = 4                 # context half-width, in sampled steps
    m: int = 1                 # predicted half-width
    stride: int = 3            # temporal sampling stride, in source frames
    ch1: int = 8
    ch2: int = 16
    ch_feat: int = 16
    heads: int = 4
    blocks: int = 2            # encoder depth N; each decoder mirrors it
    ffn_hidden: int = 32
    attn_kernel: int = 3
    bridge_kernel: int = 3
    bridge_mode: str = "convlstm"      # convlstm | residual | none
    direction_mode: str = "bi"         # bi | forward_only | backward_only
    eta: float = 0.75                  # forward weight in prediction fusion
    lam: float = 1.0                   # weight of the local MAE term
    window_size: int = 11
    window_sigma: float = 1.5
    positional_encoding: str = "none"  # none | channel

    # -- derived ---------------------------------------------------------

    @property
    def d_head(self) -> int:
        return self.ch_feat // self.heads

    @property
    def feat_hw(self) -> int:
        return self.image_size // 4

    @property
    def clip_len(self) -> int:
        return 2 * self.n + 1

    @property
    def margin(self) -> int:
        return self.n * self.stride

    @property
    def num_targets(self) -> int:
        return 2 * self.m + 1

    @property
    def context_len(self) -> int:
        return 2 * (self.n - self.m)

    def validate(self) -> "ModelConfig":
        if self.image_size < 8 or self.image_size % 4:
            raise ConfigError(f"image_size must be a multiple of 4 and >= 8, got {self.image_size}")
        if self.image_channels < 1:
            raise ConfigError("image_channels must be >= 1")
        if not (self.n > self.m >= 1):
            raise ConfigError(f"need n > m >= 1, got n={self.n} m={self.m}")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if min(self.ch1, self.ch2, self.ch_feat) < 1:
            raise ConfigError("channel widths must be >= 1")
        if self.heads < 1 or self.ch_feat % self.heads:
            raise ConfigError(f"heads must divide ch_feat, got {self.heads} vs {self.ch_feat}")
        if self.blocks < 1:
            raise ConfigError("blocks must be >= 1")
        if self.ffn_hidden < 1:
            raise ConfigError("ffn_hidden must be >= 1")
        for name in ("attn_kernel", "bridge_kernel", "window_size"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"{name} must be odd and >= 1, got {k}")
        if self.window_size > self.image_size:
            raise ConfigError("window_size cannot exceed image_size")
        if self.window_sigma <= 0:
            raise ConfigError("window_sigma must be positive")
        if self.bridge_mode not in ("convlstm", "residual", "none"):
            raise ConfigError(f"unknown bridge_mode {self.bridge_mode!r}")
        if self.direction_mode not in ("bi", "forward_only", "backward_only"):
            raise ConfigError(f"unknown direction_mode {self.direction_mode!r}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must lie in [0, 1], got {self.eta}")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if self.positional_encoding not in ("none", "channel"):
            raise ConfigError(f"unknown positional_encoding {self.positional_encoding!r}")
        return self


def micro_model() -> ModelConfig:
    """Smallest legal model; used for 64-bit gradient verification."""
    return ModelConfig(image_size=8, ch1=2, ch2=4, ch_feat=8, heads=2, blocks=2,
                       ffn_hidden=8, window_size=3)


def desk_model() -> ModelConfig:
    """CPU-friendly scale for end-to-end runs on synthetic data."""
    return ModelConfig()


def paper_model() -> ModelConfig:
    """Full-scale preset: 256px frames, 8 heads, 5 encoder blocks."""
    return ModelConfig(image_size=256, ch1=16, ch2=32, ch_feat=64, heads=8,
                       blocks=5, ffn_hidden=320, bridge_kernel=5)


_MODEL_PRESETS = {"micro": micro_model, "desk": desk_model, "paper": paper_model}


@dataclass
class DataConfig:
    root: str = ""
    score_norm: str = "per_video"   # per_video | global


@dataclass
class TrainConfig:
    out_dir: str = "run"
    batch_size: int = 4
    lr: float = 1e-3
    max_epochs: int = 60
    plateau_patience: int = 3
    lr_decay: float = 0.5
    early_stop_patience: int = 9
    val_fraction: float = 0.1
    seed: int = 0
    prefetch: int = 4
    clip_hop: int = 1


@dataclass
class InferConfig:
    checkpoint: str = ""
    out_dir: str = "scores_out"
    batch_size: int = 8
    maps: bool = True
    pgm: bool = False


@dataclass
class EvalConfig:
    scores: str = ""
    out: str = ""
    rbdc: bool = False
    tbdc: bool = False
    alpha: float = 0.1
    beta: float = 0.1
    thresholds: int = 50
    min_area: int = 9
    region_match: str = "iou"       # iou | gt_coverage


@dataclass
class SynthConfig:
    train_videos: int = 8
    test_videos: int = 4
    train_frames: int = 300
    test_frames: int = 300
    image_size: int = 64
    sprites: int = 2
    speed_min: float = 0.5
    speed_max: float = 1.5
    sprite_size: int = 8
    anomalies: str = "speed_jump,direction_reversal,novel_shape,off_path"
    windows_per_video: int = 2
    window_len: int = 40
    seed: int = 7


@dataclass
class BenchConfig:
    checkpoint: str = ""
    frames: int = 200
    warmup: int = 10
    runs: int = 1


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def validate(self) -> "RunConfig":
        self.model.validate()
        if self.train.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if not 0.0 <= self.train.val_fraction < 1.0:
            raise ConfigError("train.val_fraction must lie in [0, 1)")
        if not 0.0 < self.train.lr_decay <= 1.0:
            raise ConfigError("train.lr_decay must lie in (0, 1]")
        if self.train.prefetch < 1:
            raise ConfigError("train.prefetch must be >= 1")
        if self.data.score_norm not in ("per_video", "global"):
            raise ConfigError(f"unknown score_norm {self.data.score_norm!r}")
        if self.eval.region_match not in ("iou", "gt_coverage"):
            raise ConfigError(f"unknown region_match {self.eval.region_match!r}")
        if self.eval.thresholds < 2:
            raise ConfigError("eval.thresholds must be >= 2")
        if not (0 < self.eval.alpha <= 1 and 0 < self.eval.beta <= 1):
            raise ConfigError("eval.alpha and eval.beta must lie in (0, 1]")
        return self


def _parse_value(raw: str, target_type, key: str):
    raw = raw.strip()
    if target_type is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse {raw!r} as bool for {key}")
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"cannot parse {raw!r} for {key}: {e}") from e
    return raw


def _apply_pair(cfg: RunConfig, key: str, value: str):
    if "." not in key:
        raise ConfigError(f"config key {key!r} must look like section.field")
    section, _, name = key.partition(".")
    if section == "model" and name == "preset":
        maker = _MODEL_PRESETS.get(value.strip())
        if maker is None:
            raise ConfigError(f"unknown model preset {value.strip()!r}")
        cfg.model = maker()
        return
    target = getattr(cfg, section, None)
    if target is None or not dataclasses.is_dataclass(target):
        raise ConfigError(f"unknown config section {section!r}")
    for f in fields(target):
        if f.name == name:
            setattr(target, name, _parse_value(value, type(getattr(target, name)), key))
            return
    raise ConfigError(f"unknown config key {key!r}")


def parse_pairs(text: str) -> list[tuple[str, str]]:
    pairs = []
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        pairs.append((key.strip(), value.strip()))
    return pairs


def _override_pairs(overrides: list[str] | None) -> list[tuple[str, str]]:
    pairs = []
    for arg in overrides or []:
        if "=" not in arg:
            raise ConfigError(f"override {arg!r} must look like key=value")
        key, _, value = arg.partition("=")
        pairs.append((key.strip(), value.strip()))
    return pairs


def _build_config(pairs: list[tuple[str, str]]) -> RunConfig:
    cfg = RunConfig()
    # presets first so explicit fields win regardless of line order
    for key, value in pairs:
        if key == "model.preset":
            _apply_pair(cfg, key, value)
    for key, value in pairs:
        if key != "model.preset":
            _apply_pair(cfg, key, value)
    return cfg.validate()


def load_config(path: str | None, overrides: list[str] | None = None) -> RunConfig:
    """Config from an optional file plus key=value override arguments."""
    pairs = []
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        pairs.extend(parse_pairs(text))
    pairs.extend(_override_pairs(overrides))
    return _build_config(pairs)
