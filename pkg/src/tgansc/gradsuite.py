"""Named finite-difference checks over every differentiable op and loss.

Elementary ops get exhaustive coordinate checks on small random instances;
the composed training losses run through micro-sized networks in float64
with a random subsample of coordinates per instance (fresh sample each
instance, so coverage accumulates across the 20 required repetitions).
"""

from dataclasses import dataclass

import numpy as np

from tgansc import losses
from tgansc.config import micro_model
from tgansc.discriminators import DiscriminatorSet
from tgansc.engine import conv as C
from tgansc.engine import nn
from tgansc.engine import tensor as T
from tgansc.engine.gradcheck import STEP, TOL, check_gradients, relative_error
from tgansc.engine.rng import make_rng
from tgansc.generator import Generator

DEFAULT_INSTANCES = 20


@dataclass
class SuiteResult:
    name: str
    instances: int
    max_err: float
    passed: bool


def _module_to_float64(*modules):
    for m in modules:
        for p in m.params().values():
            p.data = p.data.astype(np.float64)


def check_params_gradients(loss_fn, params, rng, coords_per_tensor=3, step=STEP, tol=TOL):
    """Finite differences on module-held parameters, sampled coordinates.

    ``loss_fn()`` rebuilds the forward pass reading the module parameters in
    place; params is a name -> Tensor mapping. Returns the worst error.
    """
    for p in params.values():
        p.zero_grad()
        p.requires_grad = True
    out = loss_fn()
    T.backward(out)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        k = min(coords_per_tensor, flat.size)
        coords = rng.choice(flat.size, size=k, replace=False)
        analytic = np.zeros(k)
        if p.grad is not None:
            analytic = p.grad.reshape(-1)[coords]
        numeric = np.zeros(k)
        for j, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + step
            hi = float(loss_fn().data.reshape(-1)[0])
            flat[c] = orig - step
            lo = float(loss_fn().data.reshape(-1)[0])
            flat[c] = orig
            numeric[j] = (hi - lo) / (2.0 * step)
        err = relative_error(analytic, numeric)
        worst = max(worst, err)
        if err > tol:
            raise AssertionError(f"{name}: gradient error {err:.3e} > {tol:.1e}")
    return worst


# -- elementary op checks -------------------------------------------------------


def _op_checks(rng):
    n = lambda *s: rng.normal(size=s)
    pos = lambda *s: rng.uniform(0.5, 2.0, size=s)
    away = lambda *s: rng.normal(size=s) + np.where(rng.normal(size=s) > 0, 0.3, -0.3)

    def lstm_chain(wx, wh, b, x1, x2, x3):
        cell = nn.LSTMCell.__new__(nn.LSTMCell)
        cell.name, cell.hidden_dim = "t", 3
        cell.w_x, cell.w_h, cell.bias = wx, wh, b
        hs = cell.run([x1, x2, x3], 2, dtype=np.float64)
        return T.tensor_sum(hs[-1] * hs[-1])

    return {
        "add": ([n(3, 4), n(3, 4)], lambda a, b: T.tensor_sum(T.tanh(a + b))),
        "add_broadcast": ([n(3, 4), n(4)], lambda a, b: T.tensor_sum(T.tanh(a + b))),
        "mul": ([n(3, 4), n(3, 4)], lambda a, b: T.tensor_sum(T.sigmoid(a * b))),
        "div": ([n(3, 4), pos(3, 4)], lambda a, b: T.tensor_sum(T.tanh(T.div(a, b)))),
        "neg_sub": ([n(5), n(5)], lambda a, b: T.tensor_sum(T.tanh(a - b) * -1.0)),
        "exp": ([n(3, 3)], lambda a: T.tensor_sum(T.exp(a * 0.5))),
        "log": ([pos(3, 3)], lambda a: T.tensor_sum(T.log(a))),
        "sqrt": ([pos(4)], lambda a: T.tensor_sum(T.sqrt(a))),
        "clamp": ([away(4, 4)], lambda a: T.tensor_sum(T.clamp(a, -1.5, 1.5) * a)),
        "relu": ([away(4, 4)], lambda a: T.tensor_sum(T.relu(a) * a)),
        "leaky_relu": ([away(4, 4)], lambda a: T.tensor_sum(T.leaky_relu(a, 0.2) * a)),
        "sigmoid": ([n(4, 4)], lambda a: T.tensor_sum(T.sigmoid(a) * a)),
        "tanh": ([n(4, 4)], lambda a: T.tensor_sum(T.tanh(a) * a)),
        "sum_axis": ([n(2, 3, 4)], lambda a: T.tensor_sum(T.tanh(T.tensor_sum(a, axis=(0, 2))))),
        "mean_axis": ([n(2, 3, 4)], lambda a: T.tensor_sum(T.tanh(T.mean(a, axis=1)))),
        "reshape_transpose": (
            [n(2, 3, 4)],
            lambda a: T.tensor_sum(T.tanh(T.reshape(T.transpose(a, (2, 0, 1)), (4, 6)))),
        ),
        "concat": ([n(2, 3), n(2, 2)], lambda a, b: T.tensor_sum(T.tanh(T.concat([a, b], axis=1)))),
        "slice": ([n(4, 6)], lambda a: T.tensor_sum(T.tanh(a[1:3, ::2]))),
        "take_rows": ([n(5, 3)], lambda a: T.tensor_sum(T.tanh(a[np.array([0, 2, 2, 4])]))),
        "broadcast_to": ([n(1, 4)], lambda a: T.tensor_sum(T.tanh(T.broadcast_to(a, (3, 4))))),
        "matmul": ([n(3, 4), n(4, 2)], lambda a, b: T.tensor_sum(T.tanh(T.matmul(a, b)))),
        "linear": ([n(3, 4), n(4, 2), n(2)], lambda x, w, b: T.tensor_sum(T.tanh(T.linear(x, w, b)))),
        "conv2d": (
            [n(2, 2, 5, 6), n(3, 2, 3, 3)],
            lambda x, k: T.tensor_sum(T.tanh(C.conv2d(x, k, stride=2, pad=1))),
        ),
        "conv3d": (
            [n(2, 2, 3, 4, 4), n(3, 2, 2, 3, 3)],
            lambda x, k: T.tensor_sum(T.tanh(C.conv3d(x, k, stride=(1, 2, 2), pad=1))),
        ),
        "conv3d_transposed": (
            [n(2, 3, 2, 2, 2), n(3, 2, 2, 4, 4)],
            lambda x, k: T.tensor_sum(T.tanh(C.conv3d_transposed(x, k, stride=2, pad=1))),
        ),
        "batch_norm": (
            [n(4, 3, 2, 2), rng.uniform(0.5, 1.5, size=3), n(3)],
            lambda x, g, b: T.tensor_sum(T.tanh(nn.batch_norm(x, g, b, eps=1e-3, channel_axis=1))),
        ),
        "lstm_cell": (
            [n(3, 12) * 0.4, n(3, 12) * 0.4, n(12) * 0.1, n(2, 3), n(2, 3), n(2, 3)],
            lstm_chain,
        ),
        "cross_entropy": (
            [n(4, 5)],
            lambda a: T.mean(T.cross_entropy_logits(a, np.array([0, 2, 4, 1]))),
        ),
    }


# -- composed loss checks --------------------------------------------------------


def _micro_parts(seed):
    cfg = micro_model()
    gen = Generator(cfg, seed=seed)
    discs = DiscriminatorSet(cfg, seed=seed + 1)
    _module_to_float64(gen, discs)
    return cfg, gen, discs


def _random_batch(cfg, rng, b=2):
    vid = lambda: rng.normal(size=(b, *cfg.video_shape)) * 0.5
    sent = rng.normal(size=(b, cfg.sent_dim))
    return (
        vid().astype(np.float64),
        vid().astype(np.float64),
        vid().astype(np.float64),
        sent.astype(np.float64),
    )


def _loss_checks(seed_base):
    def video_loss(instance, rng):
        cfg, _, discs = _micro_parts(seed_base + instance)
        syn, pos, neg, sent = _random_batch(cfg, rng)
        syn_t, pos_t, neg_t = T.Tensor(syn, requires_grad=True), T.Tensor(pos, requires_grad=True), T.Tensor(neg, requires_grad=True)
        params = {**discs.video.params(), "in.syn": syn_t, "in.pos": pos_t, "in.neg": neg_t}

        def fn():
            tb = losses.TripletBatch(syn_t, pos_t, neg_t, sent)
            return T.tensor_sum(losses.video_matching_loss(tb, discs.video, training=True))

        return fn, params

    def frame_loss(instance, rng):
        cfg, _, discs = _micro_parts(seed_base + instance)
        syn, pos, neg, sent = _random_batch(cfg, rng)
        pos_t = T.Tensor(pos, requires_grad=True)
        params = {**discs.frame_features.params(), **discs.frame.params(), "in.pos": pos_t}

        def fn():
            tb = losses.TripletBatch(syn, pos_t, neg, sent)
            return T.tensor_sum(losses.frame_matching_loss(tb, discs.frame, training=True))

        return fn, params

    def coherence_loss(instance, rng):
        cfg, _, discs = _micro_parts(seed_base + instance)
        syn, _, _, _ = _random_batch(cfg, rng)
        syn_t = T.Tensor(syn, requires_grad=True)
        params = {**discs.frame_features.params(), "in.syn": syn_t}

        def fn():
            return T.tensor_sum(
                losses.coherence_constraint_loss(syn_t, discs.frame_features, training=True)
            )

        return fn, params

    def motion_loss(instance, rng):
        cfg, _, discs = _micro_parts(seed_base + instance)
        syn, pos, neg, sent = _random_batch(cfg, rng)
        syn_t = T.Tensor(syn, requires_grad=True)
        params = {**discs.frame_features.params(), **discs.motion.params(), "in.syn": syn_t}

        def fn():
            tb = losses.TripletBatch(syn_t, pos, neg, sent)
            return T.tensor_sum(losses.coherence_adversarial_loss(tb, discs.motion, training=True))

        return fn, params

    def d_objective(scheme):
        def check(instance, rng):
            cfg, _, discs = _micro_parts(seed_base + instance)
            syn, pos, neg, sent = _random_batch(cfg, rng)
            pos_t = T.Tensor(pos, requires_grad=True)
            params = {**discs.params(), "in.pos": pos_t}

            def fn():
                tb = losses.TripletBatch(syn, pos_t, neg, sent)
                return losses.discriminator_objective(tb, discs, scheme, training=True)

            return fn, params

        return check

    def g_objective(scheme):
        def check(instance, rng):
            cfg, gen, discs = _micro_parts(seed_base + instance)
            _, pos, neg, sent = _random_batch(cfg, rng)
            z = rng.normal(size=(2, cfg.noise_dim))
            z_t = T.Tensor(z, requires_grad=True)
            params = {**gen.params(), "in.z": z_t}

            def fn():
                syn = gen.synthesize(gen.fuse(z_t, T.Tensor(sent)), training=True)
                tb = losses.TripletBatch(syn, pos, neg, sent)
                return losses.generator_objective(tb, discs, scheme, training=True)

            return fn, params

        return check

    return {
        "loss_video_matching": video_loss,
        "loss_frame_matching": frame_loss,
        "loss_coherence_constraint": coherence_loss,
        "loss_coherence_adversarial": motion_loss,
        "objective_d_video_frame": d_objective(losses.Scheme.VIDEO_FRAME),
        "objective_d_adversarial": d_objective(losses.Scheme.COHERENCE_ADVERSARIAL),
        "objective_g_constraint": g_objective(losses.Scheme.COHERENCE_CONSTRAINT),
        "objective_g_adversarial": g_objective(losses.Scheme.COHERENCE_ADVERSARIAL),
    }


def run_suite(instances=DEFAULT_INSTANCES, seed=0, tol=TOL, coords_per_tensor=3):
    """Run every check ``instances`` times; returns a list of SuiteResult."""
    results = []
    master = make_rng(seed)
    for name, spec in _op_checks(np.random.default_rng(seed)).items():
        worst = 0.0
        ok = True
        for i in range(instances):
            rng = np.random.default_rng(seed * 1000 + i)
            arrays, builder = _op_checks(rng)[name]
            try:
                worst = max(worst, check_gradients(builder, arrays, tol=tol, max_coords=80, rng=rng))
            except AssertionError:
                ok = False
                worst = np.inf
                break
        results.append(SuiteResult(name, instances, worst, ok))
    for name, factory in _loss_checks(int(master.integers(1 << 20))).items():
        worst = 0.0
        ok = True
        for i in range(instances):
            rng = np.random.default_rng(seed * 2000 + i)
            fn, params = factory(i, rng)
            try:
                worst = max(
                    worst,
                    check_params_gradients(fn, params, rng, coords_per_tensor=coords_per_tensor, tol=tol),
                )
            except AssertionError:
                ok = False
                worst = np.inf
                break
        results.append(SuiteResult(name, instances, worst, ok))
    return results
