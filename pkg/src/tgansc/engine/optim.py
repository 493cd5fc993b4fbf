"""Adam with bias correction, applied in place to leaf tensors."""

from dataclasses import dataclass, field

import numpy as np

from tgansc.engine.tensor import Tensor
from tgansc.errors import ShapeError


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_shape(cls, shape, dtype=np.float32, **hyper):
        return cls(np.zeros(shape, dtype=dtype), np.zeros(shape, dtype=dtype), **hyper)


def adam_step(param, grad, state):
    """One bias-corrected update of ``param`` (Tensor or ndarray) in place."""
    data = param.data if isinstance(param, Tensor) else param
    grad = np.asarray(grad)
    if grad.shape != data.shape or state.first_moment.shape != data.shape:
        raise ShapeError(
            f"adam_step shape mismatch: param {data.shape}, grad {grad.shape}, "
            f"moment {state.first_moment.shape}"
        )
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    state.first_moment *= b1
    state.first_moment += (1.0 - b1) * grad
    state.second_moment *= b2
    state.second_moment += (1.0 - b2) * (grad * grad)
    mhat = state.first_moment / (1.0 - b1 ** state.step_count)
    vhat = state.second_moment / (1.0 - b2 ** state.step_count)
    data -= (state.learning_rate * mhat / (np.sqrt(vhat) + state.epsilon)).astype(data.dtype)


class Adam:
    """Optimizer over an ordered mapping of named parameter tensors."""

    def __init__(self, params, learning_rate=2e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        if isinstance(params, dict):
            self.params = dict(params)
        else:
            self.params = {f"p{i}": p for i, p in enumerate(params)}
        self.states = {
            name: AdamState.for_shape(
                p.shape, dtype=p.dtype,
                learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon,
            )
            for name, p in self.params.items()
        }

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                grad = np.zeros_like(p.data)
            else:
                grad = p.grad
            adam_step(p, grad, self.states[name])

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def grad_norm(self):
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(np.sum(np.square(p.grad, dtype=np.float64)))
        return float(np.sqrt(total))

    def state_arrays(self):
        """Flat name -> array view of all optimizer state for checkpointing."""
        out = {}
        for name, st in self.states.items():
            out[f"{name}.m"] = st.first_moment
            out[f"{name}.v"] = st.second_moment
        return out

    def step_counts(self):
        return {name: st.step_count for name, st in self.states.items()}

    def load_state(self, arrays, step_counts):
        for name, st in self.states.items():
            st.first_moment[...] = arrays[f"{name}.m"]
            st.second_moment[...] = arrays[f"{name}.v"]
            st.step_count = int(step_counts[name])
