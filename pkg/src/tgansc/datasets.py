"""Synthetic bouncing-digit video datasets and video import/export.

A sample is a short grayscale (or RGB-replicated) clip of one or two digit
sprites translating along an axis with elastic reflection at the borders,
captioned by a fixed template. Everything derives from integer seeds:
(dataset seed, sample index) -> per-sample seed -> digit choice, motion,
start position, direction.

Pixel convention: sprites live in [0, 1]; training videos in [-1, 1].
"""

import os
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np
from PIL import Image, ImageSequence

from tgansc.engine.rng import make_rng, sample_seed
from tgansc.engine.tensor_io import load_tensor, read_manifest, save_tensor, write_manifest
from tgansc.errors import FormatError, InputError
from tgansc.gifio import write_gif


class Motion(Enum):
    UP_DOWN = "up-down"
    LEFT_RIGHT = "left-right"

    @property
    def phrase(self):
        return "up and down" if self is Motion.UP_DOWN else "left and right"


# -- sprites -------------------------------------------------------------------

# Seven-segment digit glyphs on a 28x28 canvas. Each segment is an axis-aligned
# rectangle (row0, row1, col0, col1), inclusive-exclusive, value 1.0.
_SEGMENTS = {
    "A": (3, 6, 5, 23),
    "B": (4, 14, 20, 23),
    "C": (14, 24, 20, 23),
    "D": (22, 25, 5, 23),
    "E": (14, 24, 5, 8),
    "F": (4, 14, 5, 8),
    "G": (12, 15, 5, 23),
}

_DIGIT_SEGMENTS = {
    0: "ABCDEF",
    1: "BC",
    2: "ABGED",
    3: "ABGCD",
    4: "FGBC",
    5: "AFGCD",
    6: "AFGECD",
    7: "ABC",
    8: "ABCDEFG",
    9: "ABCDFG",
}


def builtin_sprites():
    """Deterministic 28x28 glyphs for digits 0-9, one sprite per class."""
    out = {}
    for digit, segs in _DIGIT_SEGMENTS.items():
        canvas = np.zeros((28, 28), dtype=np.float32)
        for name in segs:
            r0, r1, c0, c1 = _SEGMENTS[name]
            canvas[r0:r1, c0:c1] = 1.0
        out[digit] = [canvas]
    return out


def load_sprites_idx(images_path, labels_path):
    """Parse IDX image/label files into a digit -> sprite-list map in [0, 1]."""
    with open(images_path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise FormatError(f"{images_path}: truncated header at byte {len(blob)}")
    magic, count, rows, cols = struct.unpack_from(">IIII", blob, 0)
    if magic != 2051:
        raise FormatError(f"{images_path}: bad magic {magic} at byte 0 (want 2051)")
    need = 16 + count * rows * cols
    if len(blob) < need:
        raise FormatError(f"{images_path}: truncated pixel data at byte {len(blob)} (want {need})")
    images = np.frombuffer(blob, dtype=np.uint8, offset=16, count=count * rows * cols)
    images = images.reshape(count, rows, cols).astype(np.float32) / 255.0

    with open(labels_path, "rb") as fh:
        lblob = fh.read()
    if len(lblob) < 8:
        raise FormatError(f"{labels_path}: truncated header at byte {len(lblob)}")
    lmagic, lcount = struct.unpack_from(">II", lblob, 0)
    if lmagic != 2049:
        raise FormatError(f"{labels_path}: bad magic {lmagic} at byte 0 (want 2049)")
    if lcount != count:
        raise FormatError(
            f"{labels_path}: {lcount} labels for {count} images (byte 4)"
        )
    if len(lblob) < 8 + lcount:
        raise FormatError(f"{labels_path}: truncated labels at byte {len(lblob)}")
    labels = np.frombuffer(lblob, dtype=np.uint8, offset=8, count=lcount)

    out = {}
    for img, label in zip(images, labels):
        out.setdefault(int(label), []).append(img)
    return out


def resize_sprite(sprite, size):
    """Box-average resample to size x size; stays in [0, 1] and deterministic."""
    src = sprite.shape[0]
    if sprite.shape[0] != sprite.shape[1]:
        raise InputError(f"sprites must be square, got {sprite.shape}")
    if src == size:
        return sprite.astype(np.float32)

    def axis_weights():
        w = np.zeros((size, src), dtype=np.float64)
        scale = src / size
        for i in range(size):
            lo, hi = i * scale, (i + 1) * scale
            for k in range(int(np.floor(lo)), int(np.ceil(hi))):
                w[i, k] = min(hi, k + 1) - max(lo, k)
        return w / scale

    w = axis_weights()
    return (w @ sprite.astype(np.float64) @ w.T).astype(np.float32)


# -- bouncing clips ------------------------------------------------------------


@dataclass(frozen=True)
class BouncingSpec:
    frame_size: int
    frames: int
    channels: int
    sprite_size: int
    digit_classes: tuple
    motions: tuple
    speed: int
    seed: int

    def validate(self):
        if self.sprite_size > self.frame_size:
            raise InputError(
                f"sprite {self.sprite_size} larger than frame {self.frame_size}"
            )
        if len(self.digit_classes) not in (1, 2) or len(self.motions) != len(self.digit_classes):
            raise InputError("need one motion per digit, with 1 or 2 digits")
        if self.frames < 1 or self.speed < 0:
            raise InputError("frames must be >= 1 and speed >= 0")
        return self


@dataclass
class CaptionedVideo:
    video: np.ndarray  # (c, l, h, w) in [-1, 1]
    caption: str
    spec: BouncingSpec


def caption_for(spec):
    """Template caption for a spec; deterministic."""
    parts = [(d, m.phrase) for d, m in zip(spec.digit_classes, spec.motions)]
    if len(parts) == 1:
        d, phrase = parts[0]
        return f"digit {d} is moving {phrase}"
    (d1, p1), (d2, p2) = parts
    return f"digit {d1} is {p1} and digit {d2} is {p2}"


def bounce_positions(start, speed, steps, margin, direction=1):
    """Positions of an elastically reflected point, closed triangle-wave form."""
    if margin < 0:
        raise InputError(f"negative travel margin {margin}")
    if margin == 0:
        return np.zeros(steps, dtype=np.int64)
    u = start + direction * speed * np.arange(steps, dtype=np.int64)
    m = np.mod(u, 2 * margin)
    return np.where(m <= margin, m, 2 * margin - m)


def generate_bouncing(spec, sprites):
    """One captioned clip from a spec and a sprite bank."""
    spec.validate()
    for d in spec.digit_classes:
        if d not in sprites or not sprites[d]:
            raise InputError(f"no sprites available for digit class {d}")
    rng = make_rng(spec.seed)
    margin = spec.frame_size - spec.sprite_size
    canvas = np.zeros((spec.frames, spec.frame_size, spec.frame_size), dtype=np.float32)
    for d, motion in zip(spec.digit_classes, spec.motions):
        bank = sprites[d]
        sprite = bank[int(rng.integers(len(bank)))]
        if sprite.shape[0] != spec.sprite_size:
            sprite = resize_sprite(sprite, spec.sprite_size)
        start_row = int(rng.integers(margin + 1))
        start_col = int(rng.integers(margin + 1))
        direction = 1 if rng.integers(2) == 0 else -1
        if motion is Motion.UP_DOWN:
            rows = bounce_positions(start_row, spec.speed, spec.frames, margin, direction)
            cols = np.full(spec.frames, start_col, dtype=np.int64)
        else:
            rows = np.full(spec.frames, start_row, dtype=np.int64)
            cols = bounce_positions(start_col, spec.speed, spec.frames, margin, direction)
        for t in range(spec.frames):
            r, c = int(rows[t]), int(cols[t])
            region = canvas[t, r:r + spec.sprite_size, c:c + spec.sprite_size]
            np.maximum(region, sprite, out=region)
    video = canvas * 2.0 - 1.0
    video = np.repeat(video[None, :, :, :], spec.channels, axis=0)
    return CaptionedVideo(video=video, caption=caption_for(spec), spec=spec)


def build_dataset(cfg, sprites=None):
    """All samples for a DatasetConfig; per-sample streams are independent."""
    cfg.validate()
    if sprites is None:
        sprites = builtin_sprites()
    sized = {
        d: [resize_sprite(s, cfg.sprite_size) for s in bank] for d, bank in sprites.items()
    }
    samples = []
    for i in range(cfg.count):
        rng = make_rng(sample_seed(cfg.seed, i))
        classes = tuple(int(rng.choice(cfg.digit_classes)) for _ in range(cfg.digits_per_video))
        motions = tuple(
            Motion.UP_DOWN if rng.integers(2) == 0 else Motion.LEFT_RIGHT
            for _ in range(cfg.digits_per_video)
        )
        spec = BouncingSpec(
            frame_size=cfg.frame_size, frames=cfg.frames, channels=cfg.channels,
            sprite_size=cfg.sprite_size, digit_classes=classes, motions=motions,
            speed=cfg.speed, seed=int(rng.integers(2 ** 62)),
        )
        samples.append(generate_bouncing(spec, sized))
    return samples


# -- video import/export -------------------------------------------------------


def _quantize(video):
    q = np.clip(np.rint((video + 1.0) * 127.5), 0, 255).astype(np.uint8)
    return q


def _dequantize(q):
    return (q.astype(np.float32) / 127.5) - 1.0


def export_video(video, path, fmt=None):
    """Write a video tensor as raw container, animated GIF, or PGM/PPM frames.

    Formats: 'raw' (.tgct, bit-exact), 'gif' (GIF89a; exact 256-level gray for
    1-channel videos, per-frame adaptive palette for RGB), 'pnm' (directory of
    P5/P6 frames). Image formats quantize to 8 bits, within 1/127 per scalar
    (gray GIF and pnm; RGB GIFs with more than 256 distinct colors lose more).
    """
    video = np.asarray(video.data if hasattr(video, "data") else video, dtype=np.float32)
    if video.ndim != 4:
        raise InputError(f"expected (c, l, h, w) video, got shape {video.shape}")
    fmt = fmt or _infer_format(path)
    if fmt == "raw":
        save_tensor(path, video)
        return
    c, l, h, w = video.shape
    if fmt == "gif":
        q = _quantize(video)
        if c == 1:
            write_gif(path, [q[0, t] for t in range(l)])
        else:
            frames, palettes = [], []
            for t in range(l):
                im = Image.fromarray(np.moveaxis(q[:3, t], 0, -1), mode="RGB")
                pim = im.convert("P", palette=Image.Palette.ADAPTIVE, colors=256)
                frames.append(np.asarray(pim, dtype=np.uint8))
                pal = pim.getpalette() or []
                pal = (pal + [0] * 768)[:768]
                palettes.append(bytes(pal))
            write_gif(path, frames, palettes=palettes)
    elif fmt == "pnm":
        os.makedirs(path, exist_ok=True)
        q = _quantize(video)
        for t in range(l):
            if c == 1:
                fname = os.path.join(path, f"frame_{t:04d}.pgm")
                with open(fname, "wb") as fh:
                    fh.write(f"P5\n{w} {h}\n255\n".encode())
                    fh.write(q[0, t].tobytes())
            else:
                fname = os.path.join(path, f"frame_{t:04d}.ppm")
                with open(fname, "wb") as fh:
                    fh.write(f"P6\n{w} {h}\n255\n".encode())
                    fh.write(np.moveaxis(q[:3, t], 0, -1).tobytes())
    else:
        raise InputError(f"unknown video format {fmt!r}")


def _infer_format(path):
    if str(path).endswith(".tgct"):
        return "raw"
    if str(path).endswith(".gif"):
        return "gif"
    return "pnm"


def import_video(path, fmt=None):
    """Inverse of export_video; image formats return the quantized values."""
    fmt = fmt or _infer_format(path)
    if fmt == "raw":
        return load_tensor(path)
    if fmt == "gif":
        frames = []
        with Image.open(path) as im:
            if im.format != "GIF":
                raise FormatError(f"{path}: not a GIF file")
            for frame in ImageSequence.Iterator(im):
                frames.append(np.asarray(frame.convert("RGB"), dtype=np.uint8))
        stack = np.stack(frames)  # (l, h, w, 3)
        gray = np.array_equal(stack[..., 0], stack[..., 1]) and np.array_equal(
            stack[..., 0], stack[..., 2]
        )
        if gray:
            return _dequantize(stack[..., 0][None, :, :, :])
        return _dequantize(np.moveaxis(stack, -1, 0))
    if fmt == "pnm":
        frames = []
        for fname in sorted(os.listdir(path)):
            if not (fname.endswith(".pgm") or fname.endswith(".ppm")):
                continue
            frames.append(_read_pnm(os.path.join(path, fname)))
        if not frames:
            raise FormatError(f"{path}: no frame files found")
        stack = np.stack(frames)
        if stack.ndim == 3:
            return _dequantize(stack[None, :, :, :])
        return _dequantize(np.moveaxis(stack, -1, 0))
    raise InputError(f"unknown video format {fmt!r}")


def _read_pnm(path):
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic not in (b"P5", b"P6"):
            raise FormatError(f"{path}: unsupported PNM magic {magic!r} at byte 0")
        dims = fh.readline().split()
        maxval = fh.readline().strip()
        if maxval != b"255":
            raise FormatError(f"{path}: only maxval 255 supported, got {maxval!r}")
        w, h = int(dims[0]), int(dims[1])
        channels = 1 if magic == b"P5" else 3
        data = fh.read(w * h * channels)
        if len(data) != w * h * channels:
            raise FormatError(f"{path}: truncated pixel data")
        arr = np.frombuffer(data, dtype=np.uint8)
        return arr.reshape((h, w) if channels == 1 else (h, w, 3))


# -- dataset on disk -----------------------------------------------------------


class CaptionedDataset:
    """Loaded dataset with caption bookkeeping for triplet assembly."""

    def __init__(self, videos, captions):
        if len(videos) != len(captions):
            raise InputError("one caption per video is required")
        self.videos = videos
        self.captions = list(captions)
        self.caption_to_indices = {}
        for i, cap in enumerate(self.captions):
            self.caption_to_indices.setdefault(cap, []).append(i)
        self.distinct_captions = sorted(self.caption_to_indices)
        self._mismatch_cache = {}

    def __len__(self):
        return len(self.videos)

    def video_shape(self):
        return self.videos[0].shape

    def mismatched_indices(self, caption):
        """Indices of samples whose caption differs (normalized inequality)."""
        if caption not in self._mismatch_cache:
            idxs = [i for i, c in enumerate(self.captions) if c != caption]
            self._mismatch_cache[caption] = np.asarray(idxs, dtype=np.int64)
        return self._mismatch_cache[caption]


def save_dataset(samples, out_dir, dataset_cfg=None):
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for i, sample in enumerate(samples):
        fname = f"sample_{i:05d}.gif"
        export_video(sample.video, os.path.join(out_dir, fname), fmt="gif")
        lines.append(f"{fname}\t{sample.caption}")
    with open(os.path.join(out_dir, "manifest.tsv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    if dataset_cfg is not None:
        items = {f"dataset.{k}": getattr(dataset_cfg, k) for k in (
            "preset", "frame_size", "frames", "channels", "sprite_size",
            "digit_classes", "digits_per_video", "speed", "count", "seed")}
        write_manifest(os.path.join(out_dir, "dataset_manifest.txt"), items)


def load_dataset(path):
    manifest = os.path.join(path, "manifest.tsv")
    if not os.path.exists(manifest):
        raise InputError(f"{path}: missing manifest.tsv")
    channels = None
    cfg_file = os.path.join(path, "dataset_manifest.txt")
    if os.path.exists(cfg_file):
        channels = int(read_manifest(cfg_file).get("dataset.channels", 0)) or None
    videos, captions = [], []
    with open(manifest, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise FormatError(f"{manifest}:{lineno}: expected '<file>\\t<caption>'")
            fname, caption = line.split("\t", 1)
            video = import_video(os.path.join(path, fname))
            if channels and video.shape[0] == 1 and channels > 1:
                video = np.repeat(video, channels, axis=0)  # gray GIFs of RGB-replicated data
            videos.append(video)
            captions.append(caption)
    return CaptionedDataset(videos, captions)


def dataset_from_samples(samples):
    return CaptionedDataset([s.video for s in samples], [s.caption for s in samples])
