"""Seeded randomness.

All stochastic behavior in the package flows through numpy's PCG64 bit
generator wrapped in ``numpy.random.Generator``. PCG64 is a published,
fully specified algorithm, so a (seed, draw-order) pair pins every run.
State round-trips losslessly through text manifests for checkpoint resume.
"""

import numpy as np

from tgansc.engine.tensor import Tensor
from tgansc.errors import InputError


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(int(seed)))


def sample_seed(base_seed, index):
    """Per-sample stream: xor of the dataset seed and the sample index."""
    return int(base_seed) ^ int(index)


def init_normal(rng, shape, mean=0.0, stddev=0.02, requires_grad=False, dtype=np.float32):
    """Seeded zero-ish-centered normal init; the network weight initializer."""
    if stddev <= 0:
        raise InputError(f"init_normal requires stddev > 0, got {stddev}")
    data = rng.normal(loc=mean, scale=stddev, size=shape).astype(dtype)
    return Tensor(data, requires_grad=requires_grad)


def rng_state_items(rng):
    """PCG64 state as manifest-friendly string key/values."""
    st = rng.bit_generator.state
    return {
        "rng.algo": st["bit_generator"],
        "rng.state": hex(st["state"]["state"]),
        "rng.inc": hex(st["state"]["inc"]),
        "rng.has_uint32": str(st["has_uint32"]),
        "rng.uinteger": str(st["uinteger"]),
    }


def restore_rng(items):
    if items.get("rng.algo") != "PCG64":
        raise InputError(f"unsupported rng algorithm {items.get('rng.algo')!r}")
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(items["rng.state"], 16), "inc": int(items["rng.inc"], 16)},
        "has_uint32": int(items["rng.has_uint32"]),
        "uinteger": int(items["rng.uinteger"]),
    }
    return np.random.Generator(bg)
