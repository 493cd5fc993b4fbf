"""Video synthesis: latent fusion followed by a 3D transposed-conv stack.

The noise vector is concatenated with a learned linear transform of the
sentence vector; the fused latent is projected to a small seed tensor and
upsampled by strided transposed convolutions (norm + ReLU between layers,
tanh at the output so every pixel lands in [-1, 1]).
"""

import numpy as np

from tgansc.engine import nn
from tgansc.engine import tensor as T
from tgansc.engine.rng import make_rng
from tgansc.errors import ShapeError


def fuse_latent(z, s, w_s):
    """p = [z ; W_s^T s], noise first; accepts single vectors or batches."""
    z = z if isinstance(z, T.Tensor) else T.Tensor(z)
    s = s if isinstance(s, T.Tensor) else T.Tensor(s)
    w_s = w_s if isinstance(w_s, T.Tensor) else T.Tensor(w_s)
    single = z.ndim == 1
    if single:
        z = T.reshape(z, (1, -1))
    if s.ndim == 1:
        s = T.reshape(s, (1, -1))
    if s.shape[1] != w_s.shape[0]:
        raise ShapeError(f"sentence dim {s.shape} does not match fusion matrix {w_s.shape}")
    if z.shape[0] != s.shape[0]:
        raise ShapeError(f"batch mismatch: z {z.shape} vs s {s.shape}")
    fused = T.concat([z, T.matmul(s, w_s)], axis=1)
    return T.reshape(fused, (-1,)) if single else fused


class Generator:
    def __init__(self, model_cfg, seed=0):
        cfg = model_cfg
        self.cfg = cfg
        rng = make_rng(seed)
        self.w_s = nn.Linear(cfg.sent_dim, cfg.fused_sent_dim, rng, bias=False, name="g.fuse")
        seed_units = cfg.gen_seed_channels * int(np.prod(cfg.gen_seed_shape))
        self.proj = nn.Linear(cfg.latent_dim, seed_units, rng, name="g.proj")
        self.seed_norm = nn.BatchNorm(cfg.gen_seed_channels, eps=cfg.bn_eps,
                                      momentum=cfg.bn_momentum, name="g.norm0")
        self.layers = []
        self.norms = []
        in_ch = cfg.gen_seed_channels
        for i, spec in enumerate(cfg.gen_layers):
            last = i == len(cfg.gen_layers) - 1
            self.layers.append(
                nn.ConvTranspose3d(in_ch, spec.out_channels, spec.kernel, spec.stride,
                                   spec.pad, rng, bias=last, name=f"g.deconv{i}")
            )
            if not last:
                self.norms.append(
                    nn.BatchNorm(spec.out_channels, eps=cfg.bn_eps,
                                 momentum=cfg.bn_momentum, name=f"g.norm{i + 1}")
                )
            in_ch = spec.out_channels

    def params(self):
        dicts = [self.w_s.params(), self.proj.params(), self.seed_norm.params()]
        dicts += [l.params() for l in self.layers]
        dicts += [n.params() for n in self.norms]
        return nn.merge_params(*dicts)

    def state_arrays(self):
        out = dict(self.seed_norm.state_arrays())
        for n in self.norms:
            out.update(n.state_arrays())
        return out

    def fuse(self, z, s):
        return fuse_latent(z, s, self.w_s.weight)

    def synthesize(self, p, training=False):
        """Fused latent batch (B, latent_dim) -> video batch (B, c, l, h, w)."""
        p = p if isinstance(p, T.Tensor) else T.Tensor(p)
        single = p.ndim == 1
        if single:
            p = T.reshape(p, (1, -1))
        if p.shape[1] != self.cfg.latent_dim:
            raise ShapeError(f"latent width {p.shape} does not match config {self.cfg.latent_dim}")
        x = self.proj(p)
        x = T.reshape(x, (p.shape[0], self.cfg.gen_seed_channels, *self.cfg.gen_seed_shape))
        x = T.relu(self.seed_norm(x, training))
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(self.norms[i](x, training))
        x = T.tanh(x)
        return T.reshape(x, x.shape[1:]) if single else x

    def __call__(self, z, s, training=False):
        return self.synthesize(self.fuse(z, s), training=training)


def generate_video(p, generator, training=False):
    return generator.synthesize(p, training=training)
