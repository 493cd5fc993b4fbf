"""Dense tensors with reverse-mode autodiff, conv ops, Adam, RNG, and IO."""

from tgansc.engine.tensor import (
    Tensor,
    backward,
    broadcast_to,
    clamp,
    concat,
    cross_entropy_logits,
    exp,
    leaky_relu,
    linear,
    log,
    matmul,
    mean,
    relu,
    sigmoid,
    sqrt,
    tanh,
    tensor_sum,
    zero_grads,
)
from tgansc.engine.conv import conv2d, conv3d, conv3d_transposed
from tgansc.engine.optim import Adam, AdamState, adam_step
from tgansc.engine.rng import init_normal, make_rng, rng_state_items, restore_rng, sample_seed
from tgansc.engine.tensor_io import (
    load_tensor,
    load_tensor_dict,
    read_manifest,
    save_tensor,
    save_tensor_dict,
    write_manifest,
)

__all__ = [
    "Adam",
    "AdamState",
    "Tensor",
    "adam_step",
    "backward",
    "broadcast_to",
    "clamp",
    "concat",
    "conv2d",
    "conv3d",
    "conv3d_transposed",
    "cross_entropy_logits",
    "exp",
    "init_normal",
    "leaky_relu",
    "linear",
    "load_tensor",
    "load_tensor_dict",
    "log",
    "make_rng",
    "matmul",
    "mean",
    "read_manifest",
    "relu",
    "restore_rng",
    "rng_state_items",
    "sample_seed",
    "save_tensor",
    "save_tensor_dict",
    "sigmoid",
    "sqrt",
    "tanh",
    "tensor_sum",
    "write_manifest",
    "zero_grads",
]
