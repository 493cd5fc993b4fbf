"""Adversarial training loop: triplet assembly, alternating updates, checkpoints.

Per iteration: sample (caption, real video) pairs, draw fresh noise, generate
the synthetic videos, pick mismatched real videos, then one Adam update of
the critics followed by one Adam update of the generator. All randomness
flows through a single PCG64 stream whose state is checkpointed, so resuming
a checkpoint replays the exact trajectory of an uninterrupted run.
"""

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from tgansc import config as cfgmod
from tgansc import losses
from tgansc.datasets import export_video
from tgansc.discriminators import DiscriminatorSet
from tgansc.engine import tensor as T
from tgansc.engine.optim import Adam
from tgansc.engine.rng import make_rng, restore_rng, rng_state_items, sample_seed
from tgansc.engine.tensor_io import (
    load_tensor_dict,
    read_manifest,
    save_tensor_dict,
    write_manifest,
)
from tgansc.errors import ContractError, InputError, TrainingDiverged
from tgansc.generator import Generator
from tgansc.text import TextEncoder, Vocabulary, tokenize

METRICS_HEADER = "iter,loss_d,loss_g,l_v,l_f,l_t"

_G_SEED_SALT = 0x67656E
_D_SEED_SALT = 0x646973
_PROBE_SEED_SALT = 0x70726F


@dataclass
class StepReport:
    iteration: int
    loss_d: float
    loss_g: float
    l_v: float
    l_f: float
    l_t: float
    grad_norm_d: float
    grad_norm_g: float
    clamped_scores: int


def encoder_cache(encoder, captions):
    """Frozen-encoder sentence vectors, one per distinct caption text."""
    distinct = sorted(set(captions))
    return encoder.encode_texts(distinct)


def assemble_triplets(pair_indices, dataset, sentences, generator, rng, training=True):
    """Build the triplet batch for one iteration.

    ``sentences`` maps caption text to its vector. Returns the TripletBatch
    (synthetic videos keep their generator graph) plus the drawn noise.
    """
    if len(dataset.distinct_captions) < 2:
        raise InputError("triplet assembly needs at least two distinct captions")
    captions = [dataset.captions[i] for i in pair_indices]
    z = rng.standard_normal((len(pair_indices), generator.cfg.noise_dim)).astype(np.float32)
    neg_indices = []
    for cap in captions:
        pool = dataset.mismatched_indices(cap)
        neg_indices.append(int(pool[int(rng.integers(len(pool)))]))
    sent = np.stack([sentences[c] for c in captions]).astype(np.float32)
    syn = generator(z, sent, training=training)
    real_pos = np.stack([dataset.videos[i] for i in pair_indices]).astype(np.float32)
    real_neg = np.stack([dataset.videos[i] for i in neg_indices]).astype(np.float32)
    batch = losses.TripletBatch(syn, real_pos, real_neg, sent, captions=captions)
    batch.neg_captions = [dataset.captions[i] for i in neg_indices]
    return batch, z


def train_step(batch, scheme, discs, generator, opt_d, opt_g, iteration=0, check_roles=False):
    """One critic update then one generator update on an assembled batch."""
    if len(batch) == 0:
        raise InputError("empty triplet batch")
    diag = losses.LossDiagnostics()

    opt_d.zero_grad()
    opt_g.zero_grad()
    d_loss, d_comp = losses.discriminator_objective(
        batch, discs, scheme, training=True, diag=diag, return_components=True
    )
    T.backward(d_loss)
    if check_roles:
        leaked = [n for n, p in opt_g.params.items() if p.grad is not None]
        if leaked:
            raise ContractError(f"critic loss leaked gradients into generator params: {leaked[:3]}")
    grad_d = opt_d.grad_norm()
    opt_d.step()

    opt_d.zero_grad()
    opt_g.zero_grad()
    # critic parameters are constants for the generator update: freezing them
    # makes that structural and skips their gradient work entirely
    for p in opt_d.params.values():
        p.requires_grad = False
    try:
        g_loss, g_comp = losses.generator_objective(
            batch, discs, scheme, training=True, diag=diag, return_components=True
        )
        T.backward(g_loss)
    finally:
        for p in opt_d.params.values():
            p.requires_grad = True
    grad_g = opt_g.grad_norm()
    opt_g.step()

    n = len(batch)
    scheme = losses.Scheme.parse(scheme) if isinstance(scheme, str) else scheme
    if scheme is losses.Scheme.COHERENCE_CONSTRAINT:
        l_t = g_comp["coherence"] or 0.0
    else:
        l_t = d_comp["l_t"]
    report = StepReport(
        iteration=iteration,
        loss_d=float(d_loss.data) / n,
        loss_g=float(g_loss.data) / n,
        l_v=d_comp["l_v"],
        l_f=d_comp["l_f"],
        l_t=l_t,
        grad_norm_d=grad_d,
        grad_norm_g=grad_g,
        clamped_scores=diag.clamped,
    )
    if not all(np.isfinite(v) for v in (report.loss_d, report.loss_g)):
        raise TrainingDiverged(
            f"non-finite loss at iteration {iteration}",
            dump=_divergence_dump(report, discs, generator),
        )
    return report


def _divergence_dump(report, discs, generator):
    dump = {"iteration": report.iteration, "loss_d": report.loss_d, "loss_g": report.loss_g}
    for name, p in {**discs.params(), **generator.params()}.items():
        if not np.all(np.isfinite(p.data)):
            dump[f"param.{name}"] = f"min={p.data.min()} max={p.data.max()}"
    return dump


def _encoder_digest(encoder):
    h = hashlib.sha256()
    for name in sorted(encoder.params()):
        h.update(encoder.params()[name].data.tobytes())
    return h.hexdigest()


class Trainer:
    """Owns models, optimizers, the rng stream, and checkpoint plumbing."""

    def __init__(self, train_cfg, dataset, encoder, out_dir):
        train_cfg.validate()
        if not encoder.frozen:
            raise InputError("text encoder must be pretrained and frozen before adversarial training")
        self.cfg = train_cfg
        self.model_cfg = cfgmod.MODEL_PRESETS[train_cfg.model_preset]()
        self.dataset = dataset
        if dataset.video_shape() != self.model_cfg.video_shape:
            raise InputError(
                f"dataset videos {dataset.video_shape()} do not match model {self.model_cfg.video_shape}"
            )
        self.encoder = encoder
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)

        self.generator = Generator(self.model_cfg, seed=sample_seed(train_cfg.seed, _G_SEED_SALT))
        self.discs = DiscriminatorSet(self.model_cfg, seed=sample_seed(train_cfg.seed, _D_SEED_SALT))
        opt_kw = dict(
            learning_rate=train_cfg.learning_rate, beta1=train_cfg.beta1,
            beta2=train_cfg.beta2, epsilon=train_cfg.epsilon,
        )
        self.opt_g = Adam(self.generator.params(), **opt_kw)
        self.opt_d = Adam(self.discs.params(), **opt_kw)
        self.rng = make_rng(train_cfg.seed)
        self.iteration = 0
        self.sentences = encoder_cache(encoder, dataset.captions)
        self.scheme = losses.Scheme.parse(train_cfg.scheme)
        self._encoder_digest = _encoder_digest(encoder)
        self.probes = self._draw_probes()

    def _draw_probes(self):
        """Fixed (noise, caption) probe pairs, independent of the training stream."""
        rng = make_rng(sample_seed(self.cfg.seed, _PROBE_SEED_SALT))
        caps = self.dataset.distinct_captions
        out = []
        for _ in range(self.cfg.probe_count):
            z = rng.standard_normal(self.model_cfg.noise_dim).astype(np.float32)
            out.append((z, caps[int(rng.integers(len(caps)))]))
        return out

    def step(self):
        self.iteration += 1
        idx = self.rng.integers(0, len(self.dataset), size=self.cfg.batch_size)
        batch, _ = assemble_triplets(
            idx.tolist(), self.dataset, self.sentences, self.generator, self.rng
        )
        return train_step(
            batch, self.scheme, self.discs, self.generator, self.opt_d, self.opt_g,
            iteration=self.iteration, check_roles=(self.iteration == 1),
        )

    # -- checkpointing ----------------------------------------------------

    def checkpoint_dir(self, iteration):
        return os.path.join(self.out_dir, "checkpoints", f"iter_{iteration:06d}")

    def save_checkpoint(self, path=None):
        path = path or self.checkpoint_dir(self.iteration)
        os.makedirs(path, exist_ok=True)
        save_tensor_dict(os.path.join(path, "params"), {
            **self.generator.params(), **self.discs.params(),
        })
        save_tensor_dict(os.path.join(path, "optim"), {
            **{f"g.{k}": v for k, v in self.opt_g.state_arrays().items()},
            **{f"d.{k}": v for k, v in self.opt_d.state_arrays().items()},
        })
        save_tensor_dict(os.path.join(path, "state"), {
            **self.generator.state_arrays(), **self.discs.state_arrays(),
        })
        items = {
            "iteration": self.iteration,
            "config_hash": cfgmod.config_hash(self.cfg),
            "encoder_digest": self._encoder_digest,
            "optim.steps.g": next(iter(self.opt_g.step_counts().values()), 0),
            "optim.steps.d": next(iter(self.opt_d.step_counts().values()), 0),
        }
        items.update({f"config.{k}": v for k, v in cfgmod.train_config_items(self.cfg).items()})
        items.update(rng_state_items(self.rng))
        write_manifest(os.path.join(path, "manifest.txt"), items)
        return path

    def load_checkpoint(self, path):
        manifest = read_manifest(os.path.join(path, "manifest.txt"))
        if manifest["config_hash"] != cfgmod.config_hash(self.cfg):
            raise InputError(
                f"checkpoint config hash {manifest['config_hash']} does not match this run"
            )
        params = load_tensor_dict(os.path.join(path, "params"))
        for name, p in {**self.generator.params(), **self.discs.params()}.items():
            p.data[...] = params[name]
        optim = load_tensor_dict(os.path.join(path, "optim"))
        steps_g = int(manifest["optim.steps.g"])
        steps_d = int(manifest["optim.steps.d"])
        self.opt_g.load_state(
            {k[2:]: v for k, v in optim.items() if k.startswith("g.")},
            {name: steps_g for name in self.opt_g.states},
        )
        self.opt_d.load_state(
            {k[2:]: v for k, v in optim.items() if k.startswith("d.")},
            {name: steps_d for name in self.opt_d.states},
        )
        state = load_tensor_dict(os.path.join(path, "state"))
        for name, arr in {**self.generator.state_arrays(), **self.discs.state_arrays()}.items():
            arr[...] = state[name]
        self.rng = restore_rng(manifest)
        self.iteration = int(manifest["iteration"])

    def _emit_probe_grid(self, iteration):
        videos = []
        for z, cap in self.probes:
            sent = self.sentences.get(cap)
            if sent is None:
                sent = self.encoder.encode(tokenize(cap, self.encoder.vocab))
            v = self.generator(z[None, :], sent[None, :], training=False)
            videos.append(v.data[0])
        if not videos:
            return
        grid = np.concatenate(videos, axis=3)  # side by side along width
        out = os.path.join(self.out_dir, f"probe_{iteration:06d}.gif")
        export_video(grid, out, fmt="gif")

    def train(self):
        """Run to max_iterations, writing metrics rows and periodic checkpoints."""
        if self.encoder.frozen is False or _encoder_digest(self.encoder) != self._encoder_digest:
            raise ContractError("encoder parameters changed since trainer construction")
        metrics_path = os.path.join(self.out_dir, "metrics.csv")
        fresh = self.iteration == 0
        mode = "w" if fresh else "a"
        reports = []
        with open(metrics_path, mode, encoding="utf-8") as fh:
            if fresh:
                fh.write(METRICS_HEADER + "\n")
                self.save_checkpoint()
                self._emit_probe_grid(0)
            while self.iteration < self.cfg.max_iterations:
                report = self.step()
                reports.append(report)
                fh.write(
                    f"{report.iteration},{report.loss_d:.6f},{report.loss_g:.6f},"
                    f"{report.l_v:.6f},{report.l_f:.6f},{report.l_t:.6f}\n"
                )
                fh.flush()
                at_interval = (
                    self.cfg.checkpoint_interval > 0
                    and self.iteration % self.cfg.checkpoint_interval == 0
                )
                if at_interval or self.iteration == self.cfg.max_iterations:
                    self.save_checkpoint()
                    self._emit_probe_grid(self.iteration)
        if _encoder_digest(self.encoder) != self._encoder_digest:
            raise ContractError("encoder parameters changed during adversarial training")
        return self.save_checkpoint(os.path.join(self.out_dir, "checkpoints", "final")), reports


def train(train_cfg, dataset, encoder, out_dir):
    trainer = Trainer(train_cfg, dataset, encoder, out_dir)
    final_path, reports = trainer.train()
    return trainer, final_path, reports


def resume(checkpoint_path, train_cfg, dataset, encoder, out_dir):
    trainer = Trainer(train_cfg, dataset, encoder, out_dir)
    trainer.load_checkpoint(checkpoint_path)
    final_path, reports = trainer.train()
    return trainer, final_path, reports


# -- inference-side loading ------------------------------------------------


def save_encoder(encoder, out_dir, extra_items=None):
    os.makedirs(out_dir, exist_ok=True)
    encoder.vocab.save(os.path.join(out_dir, "vocab.txt"))
    save_tensor_dict(os.path.join(out_dir, "params"), encoder.params())
    items = {
        "hidden_dim": encoder.hidden_dim,
        "vocab_size": encoder.vocab.size,
        "frozen": encoder.frozen,
    }
    if extra_items:
        items.update(extra_items)
    write_manifest(os.path.join(out_dir, "manifest.txt"), items)


def load_encoder(path):
    if not os.path.isdir(path):
        raise InputError(f"encoder checkpoint {path!r} not found")
    manifest = read_manifest(os.path.join(path, "manifest.txt"))
    vocab = Vocabulary.load(os.path.join(path, "vocab.txt"))
    encoder = TextEncoder(vocab, hidden_dim=int(manifest["hidden_dim"]))
    params = load_tensor_dict(os.path.join(path, "params"))
    for name, p in encoder.params().items():
        p.data[...] = params[name]
    encoder.freeze()
    return encoder


def load_generator(checkpoint_path):
    manifest = read_manifest(os.path.join(checkpoint_path, "manifest.txt"))
    model_cfg = cfgmod.MODEL_PRESETS[manifest["config.model_preset"]]()
    gen = Generator(model_cfg, seed=0)
    params = load_tensor_dict(os.path.join(checkpoint_path, "params"))
    for name, p in gen.params().items():
        p.data[...] = params[name]
    state = load_tensor_dict(os.path.join(checkpoint_path, "state"))
    for name, arr in gen.state_arrays().items():
        arr[...] = state[name]
    return gen


def load_discriminators(checkpoint_path):
    manifest = read_manifest(os.path.join(checkpoint_path, "manifest.txt"))
    model_cfg = cfgmod.MODEL_PRESETS[manifest["config.model_preset"]]()
    discs = DiscriminatorSet(model_cfg, seed=0)
    params = load_tensor_dict(os.path.join(checkpoint_path, "params"))
    for name, p in discs.params().items():
        p.data[...] = params[name]
    state = load_tensor_dict(os.path.join(checkpoint_path, "state"))
    for name, arr in discs.state_arrays().items():
        arr[...] = state[name]
    return discs


def generate_from_caption(caption_text, checkpoint_path, encoder_path, seed=0):
    """Caption text to video through saved checkpoints; deterministic per seed."""
    import warnings

    encoder = load_encoder(encoder_path)
    gen = load_generator(checkpoint_path)
    caption = tokenize(caption_text, encoder.vocab)
    from tgansc.text import UNK

    if all(t == UNK for t in caption.tokens):
        warnings.warn(f"caption {caption_text!r} contains only unknown tokens")
    sent = encoder.encode(caption)
    z = make_rng(seed).standard_normal(gen.cfg.noise_dim).astype(np.float32)
    video = gen(z[None, :], sent[None, :], training=False)
    return video.data[0]
