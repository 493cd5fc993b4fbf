"""Dataclass configs: model geometry, dataset recipes, training runs.

Presets pin every architectural number so runs are reproducible from a seed.
The paper-scale preset produces 3x16x48x48 videos with a 512x1x3x3 video
feature tensor and 512x3x3 frame feature tensor; the desk preset is a
CPU-sized 1x8x16x16 variant with the same topology.
"""

import hashlib
from dataclasses import dataclass, fields

from tgansc.errors import InputError, ShapeError


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: tuple
    stride: tuple
    pad: tuple


def _conv_out(extent, k, s, p):
    if k > extent + 2 * p:
        raise ShapeError(f"kernel {k} exceeds padded extent {extent + 2 * p}")
    return (extent + 2 * p - k) // s + 1


def _convt_out(extent, k, s, p):
    out = (extent - 1) * s - 2 * p + k
    if out < 1:
        raise ShapeError(f"transposed conv output extent {out} is nonpositive")
    return out


@dataclass(frozen=True)
class ModelConfig:
    name: str
    channels: int
    frames: int
    height: int
    width: int
    noise_dim: int
    sent_dim: int
    fused_sent_dim: int
    gen_seed_channels: int
    gen_seed_shape: tuple
    gen_layers: tuple
    disc_video_layers: tuple
    disc_frame_layers: tuple
    cond_dim: int
    head_channels: int
    leak: float = 0.2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.99

    @property
    def video_shape(self):
        return (self.channels, self.frames, self.height, self.width)

    @property
    def frame_shape(self):
        return (self.channels, self.height, self.width)

    @property
    def latent_dim(self):
        return self.noise_dim + self.fused_sent_dim

    def generator_output_shape(self):
        ch = self.gen_seed_channels
        sp = list(self.gen_seed_shape)
        for layer in self.gen_layers:
            sp = [_convt_out(sp[i], layer.kernel[i], layer.stride[i], layer.pad[i]) for i in range(3)]
            ch = layer.out_channels
        return (ch, *sp)

    def video_feature_shape(self):
        ch = self.channels
        sp = [self.frames, self.height, self.width]
        for layer in self.disc_video_layers:
            sp = [_conv_out(sp[i], layer.kernel[i], layer.stride[i], layer.pad[i]) for i in range(3)]
            ch = layer.out_channels
        return (ch, *sp)

    def frame_feature_shape(self):
        ch = self.channels
        sp = [self.height, self.width]
        for layer in self.disc_frame_layers:
            sp = [_conv_out(sp[i], layer.kernel[i], layer.stride[i], layer.pad[i]) for i in range(2)]
            ch = layer.out_channels
        return (ch, *sp)

    def validate(self):
        got = self.generator_output_shape()
        if got != self.video_shape:
            raise ShapeError(f"{self.name}: generator stack yields {got}, video shape is {self.video_shape}")
        mv = self.video_feature_shape()
        mf = self.frame_feature_shape()
        if mv[0] != mf[0] or mv[2:] != mf[1:]:
            raise ShapeError(f"{self.name}: video feature {mv} and frame feature {mf} disagree")
        return self


def _c3(out, k, s, p):
    k = k if isinstance(k, tuple) else (k,) * 3
    s = s if isinstance(s, tuple) else (s,) * 3
    p = p if isinstance(p, tuple) else (p,) * 3
    return ConvSpec(out, k, s, p)


def _c2(out, k, s, p):
    k = k if isinstance(k, tuple) else (k,) * 2
    s = s if isinstance(s, tuple) else (s,) * 2
    p = p if isinstance(p, tuple) else (p,) * 2
    return ConvSpec(out, k, s, p)


def paper_model():
    """Full-scale geometry: 3x16x48x48 videos, feature tensors 512x1x3x3 / 512x3x3.

    The last generator layer uses a temporal kernel of 3 (not 4) so that
    stride 1 with pad 1 preserves the 16-frame extent exactly.
    """
    return ModelConfig(
        name="paper",
        channels=3, frames=16, height=48, width=48,
        noise_dim=100, sent_dim=256, fused_sent_dim=256,
        gen_seed_channels=512, gen_seed_shape=(2, 3, 3),
        gen_layers=(
            _c3(256, 4, 2, 1),
            _c3(128, 4, 2, 1),
            _c3(64, 4, 2, 1),
            _c3(3, (3, 4, 4), (1, 2, 2), 1),
        ),
        disc_video_layers=(
            _c3(64, 4, 2, 1),
            _c3(128, 4, 2, 1),
            _c3(256, 4, 2, 1),
            _c3(512, 4, 2, 1),
        ),
        disc_frame_layers=(
            _c2(64, 4, 2, 1),
            _c2(128, 4, 2, 1),
            _c2(256, 4, 2, 1),
            _c2(512, 4, 2, 1),
        ),
        cond_dim=128,
        head_channels=512,
    ).validate()


def desk_model():
    """CPU-trainable geometry: 1x8x16x16 videos."""
    return ModelConfig(
        name="desk",
        channels=1, frames=8, height=16, width=16,
        noise_dim=100, sent_dim=256, fused_sent_dim=256,
        gen_seed_channels=64, gen_seed_shape=(2, 2, 2),
        gen_layers=(
            _c3(32, 4, 2, 1),
            _c3(16, 4, 2, 1),
            _c3(1, (3, 4, 4), (1, 2, 2), 1),
        ),
        disc_video_layers=(
            _c3(16, 4, 2, 1),
            _c3(32, 4, 2, 1),
            _c3(64, 4, 2, 1),
        ),
        disc_frame_layers=(
            _c2(16, 4, 2, 1),
            _c2(32, 4, 2, 1),
            _c2(64, 4, 2, 1),
        ),
        cond_dim=32,
        head_channels=64,
    ).validate()


def micro_model():
    """Tiny geometry for gradient checks and fast tests; text dims shrunk too."""
    return ModelConfig(
        name="micro",
        channels=1, frames=4, height=8, width=8,
        noise_dim=5, sent_dim=8, fused_sent_dim=8,
        gen_seed_channels=8, gen_seed_shape=(1, 2, 2),
        gen_layers=(
            _c3(4, 4, 2, 1),
            _c3(1, 4, 2, 1),
        ),
        disc_video_layers=(
            _c3(4, 4, 2, 1),
            _c3(8, 4, 2, 1),
        ),
        disc_frame_layers=(
            _c2(4, 4, 2, 1),
            _c2(8, 4, 2, 1),
        ),
        cond_dim=4,
        head_channels=8,
    ).validate()


MODEL_PRESETS = {"paper": paper_model, "desk": desk_model, "micro": micro_model}


@dataclass(frozen=True)
class DatasetConfig:
    preset: str
    frame_size: int
    frames: int
    channels: int
    sprite_size: int
    digit_classes: tuple
    digits_per_video: int
    speed: int
    count: int
    seed: int

    def validate(self):
        if self.sprite_size > self.frame_size:
            raise InputError(
                f"sprite {self.sprite_size} does not fit frame {self.frame_size}"
            )
        if self.digits_per_video not in (1, 2):
            raise InputError("digits_per_video must be 1 or 2")
        if not self.digit_classes:
            raise InputError("digit_classes must be nonempty")
        return self


def sbmg_desk(seed=0, count=512):
    return DatasetConfig(
        preset="sbmg-desk", frame_size=16, frames=8, channels=1, sprite_size=12,
        digit_classes=(0, 1, 3), digits_per_video=1, speed=2, count=count, seed=seed,
    ).validate()


def sbmg_paper(seed=0, count=12000):
    return DatasetConfig(
        preset="sbmg-paper", frame_size=48, frames=16, channels=3, sprite_size=28,
        digit_classes=tuple(range(10)), digits_per_video=1, speed=2, count=count, seed=seed,
    ).validate()


def tbmg_desk(seed=0, count=512):
    return DatasetConfig(
        preset="tbmg-desk", frame_size=16, frames=8, channels=1, sprite_size=8,
        digit_classes=(0, 1, 3), digits_per_video=2, speed=2, count=count, seed=seed,
    ).validate()


def tbmg_paper(seed=0, count=12000):
    return DatasetConfig(
        preset="tbmg-paper", frame_size=48, frames=16, channels=3, sprite_size=20,
        digit_classes=tuple(range(10)), digits_per_video=2, speed=2, count=count, seed=seed,
    ).validate()


DATASET_PRESETS = {
    "sbmg-desk": sbmg_desk,
    "sbmg-paper": sbmg_paper,
    "tbmg-desk": tbmg_desk,
    "tbmg-paper": tbmg_paper,
}


@dataclass(frozen=True)
class TrainConfig:
    scheme: str = "tgans-c-a"
    batch_size: int = 64
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_iterations: int = 2000
    seed: int = 0
    checkpoint_interval: int = 500
    dataset_path: str = ""
    encoder_path: str = ""
    model_preset: str = "desk"
    probe_count: int = 8

    def validate(self):
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be > 0")
        if self.max_iterations < 0:
            raise InputError("max_iterations must be >= 0")
        if self.model_preset not in MODEL_PRESETS:
            raise InputError(f"unknown model preset {self.model_preset!r}")
        return self


_TRAIN_KEY_TYPES = {
    "scheme": str,
    "batch_size": int,
    "learning_rate": float,
    "beta1": float,
    "beta2": float,
    "epsilon": float,
    "max_iterations": int,
    "seed": int,
    "checkpoint_interval": int,
    "dataset_path": str,
    "encoder_path": str,
    "model_preset": str,
    "probe_count": int,
}


def parse_kv_text(text, path="<config>"):
    """Line-oriented ``key = value`` parser; '#' starts a comment line."""
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        items[key.strip()] = value.strip()
    return items


def train_config_from_items(items, overrides=None):
    merged = dict(items)
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    kwargs = {}
    for key, value in merged.items():
        if key not in _TRAIN_KEY_TYPES:
            raise InputError(f"unknown training config key {key!r}")
        caster = _TRAIN_KEY_TYPES[key]
        kwargs[key] = value if isinstance(value, caster) else caster(value)
    return TrainConfig(**kwargs).validate()


def train_config_items(cfg):
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def config_hash(cfg):
    text = "\n".join(f"{k} = {v}" for k, v in sorted(train_config_items(cfg).items()))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def desk_train_config(**kw):
    """Training preset matched to the desk dataset/model on a 2-core CPU."""
    base = dict(
        scheme="tgans-c-a", batch_size=8, learning_rate=2e-4,
        max_iterations=2000, checkpoint_interval=500, model_preset="desk",
    )
    base.update(kw)
    return TrainConfig(**base).validate()
