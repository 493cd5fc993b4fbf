"""The three critics: whole-video, per-frame, and frame-to-frame motion.

Each one reduces its input to a compact feature tensor with a strided conv
stack, tiles a rectified projection of the caption vector over the feature
grid, concatenates along channels, and classifies with a 1x1(x1) conv
followed by a full-extent conv and a sigmoid. The frame and motion critics
share one frame-feature extractor; a motion tensor is literally the
difference of consecutive frame feature tensors.
"""

import numpy as np

from tgansc.engine import nn
from tgansc.engine import tensor as T
from tgansc.engine.rng import make_rng
from tgansc.errors import ShapeError


def _as_batch(x, rank):
    x = x if isinstance(x, T.Tensor) else T.Tensor(x)
    if x.ndim == rank:
        return T.reshape(x, (1, *x.shape)), True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"expected rank {rank} or {rank + 1} input, got shape {x.shape}")


def _as_sent_batch(s, batch):
    s = s if isinstance(s, T.Tensor) else T.Tensor(s)
    if s.ndim == 1:
        s = T.reshape(s, (1, -1))
    if s.shape[0] == 1 and batch > 1:
        s = T.broadcast_to(s, (batch, s.shape[1]))
    if s.shape[0] != batch:
        raise ShapeError(f"caption batch {s.shape} does not match input batch {batch}")
    return s


class _ConvStack3d:
    def __init__(self, in_ch, specs, leak, bn_eps, bn_momentum, rng, name):
        self.leak = leak
        self.convs = []
        self.norms = []  # None for the first layer, DCGAN-style
        for i, spec in enumerate(specs):
            self.convs.append(
                nn.Conv3d(in_ch, spec.out_channels, spec.kernel, spec.stride, spec.pad,
                          rng, bias=(i == 0), name=f"{name}.conv{i}")
            )
            self.norms.append(
                None if i == 0 else nn.BatchNorm(spec.out_channels, eps=bn_eps,
                                                 momentum=bn_momentum, name=f"{name}.norm{i}")
            )
            in_ch = spec.out_channels

    def __call__(self, x, training):
        for conv, norm in zip(self.convs, self.norms):
            x = conv(x)
            if norm is not None:
                x = norm(x, training)
            x = T.leaky_relu(x, self.leak)
        return x

    def params(self):
        dicts = [c.params() for c in self.convs] + [n.params() for n in self.norms if n]
        return nn.merge_params(*dicts)

    def state_arrays(self):
        out = {}
        for n in self.norms:
            if n:
                out.update(n.state_arrays())
        return out


class _ConvStack2d(_ConvStack3d):
    def __init__(self, in_ch, specs, leak, bn_eps, bn_momentum, rng, name):
        self.leak = leak
        self.convs = []
        self.norms = []
        for i, spec in enumerate(specs):
            self.convs.append(
                nn.Conv2d(in_ch, spec.out_channels, spec.kernel, spec.stride, spec.pad,
                          rng, bias=(i == 0), name=f"{name}.conv{i}")
            )
            self.norms.append(
                None if i == 0 else nn.BatchNorm(spec.out_channels, eps=bn_eps,
                                                 momentum=bn_momentum, name=f"{name}.norm{i}")
            )
            in_ch = spec.out_channels


class _CondHead:
    """Caption-conditioned classifier over a feature tensor.

    phi(S) uses ReLU so the tiled condition tensor is nonnegative; the mixing
    conv keeps the critic's leaky rectification.
    """

    def __init__(self, feat_shape, sent_dim, cond_dim, mid_channels, leak, rng, name):
        self.feat_shape = feat_shape  # (C, *spatial)
        self.leak = leak
        self.rank = len(feat_shape) - 1
        self.phi = nn.Linear(sent_dim, cond_dim, rng, name=f"{name}.phi")
        spatial_one = (1,) * self.rank
        conv_cls = nn.Conv3d if self.rank == 3 else nn.Conv2d
        self.mix = conv_cls(feat_shape[0] + cond_dim, mid_channels, spatial_one, spatial_one,
                            (0,) * self.rank, rng, name=f"{name}.mix")
        self.decide = conv_cls(mid_channels, 1, feat_shape[1:], spatial_one,
                               (0,) * self.rank, rng, name=f"{name}.decide")

    def __call__(self, feats, s):
        batch = feats.shape[0]
        if feats.shape[1:] != self.feat_shape:
            raise ShapeError(f"feature shape {feats.shape[1:]} does not match head {self.feat_shape}")
        cond = T.relu(self.phi(s))
        cond = T.reshape(cond, (batch, -1) + (1,) * self.rank)
        cond = T.broadcast_to(cond, (batch, cond.shape[1], *self.feat_shape[1:]))
        x = T.concat([feats, cond], axis=1)
        x = T.leaky_relu(self.mix(x), self.leak)
        logits = self.decide(x)
        return T.sigmoid(T.reshape(logits, (batch,)))

    def params(self):
        return nn.merge_params(self.phi.params(), self.mix.params(), self.decide.params())


class VideoDiscriminator:
    """P(real and caption-matched | video, caption)."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.stack = _ConvStack3d(cfg.channels, cfg.disc_video_layers, cfg.leak,
                                  cfg.bn_eps, cfg.bn_momentum, rng, "d0")
        self.head = _CondHead(cfg.video_feature_shape(), cfg.sent_dim, cfg.cond_dim,
                              cfg.head_channels, cfg.leak, rng, "d0.head")

    def features(self, v, training=False):
        vb, _ = _as_batch(v, 4)
        return self.stack(vb, training)

    def __call__(self, v, s, training=False):
        vb, single = _as_batch(v, 4)
        if vb.shape[1:] != self.cfg.video_shape:
            raise ShapeError(f"video shape {vb.shape[1:]} does not match config {self.cfg.video_shape}")
        sb = _as_sent_batch(s, vb.shape[0])
        probs = self.head(self.stack(vb, training), sb)
        return probs[0] if single else probs

    def params(self):
        return nn.merge_params(self.stack.params(), self.head.params())

    def state_arrays(self):
        return self.stack.state_arrays()


class FrameFeatureExtractor:
    """2D conv stack shared by the frame and motion critics."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.stack = _ConvStack2d(cfg.channels, cfg.disc_frame_layers, cfg.leak,
                                  cfg.bn_eps, cfg.bn_momentum, rng, "df")

    def __call__(self, frames, training=False):
        fb, single = _as_batch(frames, 3)
        if fb.shape[1:] != self.cfg.frame_shape:
            raise ShapeError(f"frame shape {fb.shape[1:]} does not match config {self.cfg.frame_shape}")
        feats = self.stack(fb, training)
        return feats[0] if single else feats

    def video_frames(self, videos):
        """(B, c, l, h, w) -> (B*l, c, h, w) with the graph preserved."""
        vb, _ = _as_batch(videos, 4)
        b, c, l, h, w = vb.shape
        return T.reshape(T.transpose(vb, (0, 2, 1, 3, 4)), (b * l, c, h, w))

    def params(self):
        return self.stack.params()

    def state_arrays(self):
        return self.stack.state_arrays()


class FrameDiscriminator:
    """P(real and caption-matched | frame, caption); features come from the shared extractor."""

    def __init__(self, cfg, extractor, rng):
        self.cfg = cfg
        self.extractor = extractor
        self.head = _CondHead(cfg.frame_feature_shape(), cfg.sent_dim, cfg.cond_dim,
                              cfg.head_channels, cfg.leak, rng, "d1.head")

    def __call__(self, f, s, training=False):
        fb, single = _as_batch(f, 3)
        sb = _as_sent_batch(s, fb.shape[0])
        probs = self.head(self.extractor(fb, training), sb)
        return probs[0] if single else probs

    def score_features(self, feats, s):
        return self.head(feats, _as_sent_batch(s, feats.shape[0]))

    def params(self):
        return self.head.params()


class MotionDiscriminator:
    """P(real and caption-matched | motion tensor, caption); head mirrors the frame critic."""

    def __init__(self, cfg, extractor, rng):
        self.cfg = cfg
        self.extractor = extractor
        self.head = _CondHead(cfg.frame_feature_shape(), cfg.sent_dim, cfg.cond_dim,
                              cfg.head_channels, cfg.leak, rng, "d2.head")

    def motion_features(self, f_cur, f_prev, training=False):
        """Motion tensor of two frames: feature(f_cur) - feature(f_prev)."""
        fc, single = _as_batch(f_cur, 3)
        fp, _ = _as_batch(f_prev, 3)
        if fc.shape != fp.shape:
            raise ShapeError(f"frame shapes differ: {fc.shape} vs {fp.shape}")
        m = self.extractor(fc, training) - self.extractor(fp, training)
        return m[0] if single else m

    def __call__(self, m, s, training=False):
        mb, single = _as_batch(m, 3)
        if mb.shape[1:] != self.cfg.frame_feature_shape():
            raise ShapeError(
                f"motion tensor shape {mb.shape[1:]} does not match config {self.cfg.frame_feature_shape()}"
            )
        probs = self.head(mb, _as_sent_batch(s, mb.shape[0]))
        return probs[0] if single else probs

    def params(self):
        return self.head.params()


class DiscriminatorSet:
    """D0 + shared frame extractor + D1 + D2 behind one parameter table."""

    def __init__(self, model_cfg, seed=0):
        rng = make_rng(seed)
        self.cfg = model_cfg
        self.video = VideoDiscriminator(model_cfg, rng)
        self.frame_features = FrameFeatureExtractor(model_cfg, rng)
        self.frame = FrameDiscriminator(model_cfg, self.frame_features, rng)
        self.motion = MotionDiscriminator(model_cfg, self.frame_features, rng)

    def params(self):
        return nn.merge_params(
            self.video.params(), self.frame_features.params(),
            self.frame.params(), self.motion.params(),
        )

    def state_arrays(self):
        return {**self.video.state_arrays(), **self.frame_features.state_arrays()}


def video_disc(v, s, d0, training=False):
    return d0(v, s, training=training)


def frame_disc(f, s, d1, training=False):
    return d1(f, s, training=training)


def motion_features(f_cur, f_prev, d2, training=False):
    return d2.motion_features(f_cur, f_prev, training=training)


def motion_disc(m, s, d2, training=False):
    return d2(m, s, training=training)
