"""Central finite-difference verification of analytic gradients.

Checks run in float64 with step 1e-5. The error metric per coordinate is
|analytic - numeric| / max(|analytic|, |numeric|, 1), so near-zero gradients
are compared absolutely and large ones relatively.
"""

import numpy as np

from tgansc.engine.tensor import Tensor, backward

STEP = 1e-5
TOL = 1e-4


def numeric_gradient(fn, arrays, index, step=STEP, coords=None):
    """Central differences of ``fn(*arrays) -> float`` w.r.t. ``arrays[index]``."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[index]
    flat = target.reshape(-1)
    if coords is None:
        coords = range(flat.size)
    grad = np.zeros_like(flat)
    for c in coords:
        orig = flat[c]
        flat[c] = orig + step
        hi = fn(*base)
        flat[c] = orig - step
        lo = fn(*base)
        flat[c] = orig
        grad[c] = (hi - lo) / (2.0 * step)
    return grad.reshape(target.shape)


def relative_error(analytic, numeric, coords=None):
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if coords is not None:
        a = a[list(coords)]
        n = n[list(coords)]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(builder, arrays, wrt=None, step=STEP, tol=TOL, max_coords=None, rng=None):
    """Compare backward() against finite differences.

    ``builder(*tensors) -> scalar Tensor`` re-runs the forward pass; arrays
    are promoted to float64 leaves. Returns the worst relative error over the
    checked inputs. ``max_coords`` subsamples coordinates of large inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    if wrt is None:
        wrt = list(range(len(arrays)))
    tensors = [Tensor(a, requires_grad=(i in wrt)) for i, a in enumerate(arrays)]
    out = builder(*tensors)
    backward(out)

    def as_scalar(*arrs):
        ts = [Tensor(a) for a in arrs]
        return float(builder(*ts).data.reshape(-1)[0])

    worst = 0.0
    for i in wrt:
        size = arrays[i].size
        coords = None
        if max_coords is not None and size > max_coords:
            picker = rng if rng is not None else np.random.default_rng(0)
            coords = sorted(picker.choice(size, size=max_coords, replace=False).tolist())
        numeric = numeric_gradient(as_scalar, arrays, i, step=step, coords=coords)
        analytic = tensors[i].grad
        if analytic is None:
            analytic = np.zeros_like(arrays[i])
        err = relative_error(analytic, numeric, coords=coords)
        worst = max(worst, err)
        if err > tol:
            raise AssertionError(
                f"gradient mismatch on input {i}: relative error {err:.3e} > {tol:.1e}"
            )
    return worst
