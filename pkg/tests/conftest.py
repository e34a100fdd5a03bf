import numpy as np
import pytest

from srforge.rng import SeededRng
from srforge.tensor import GradTape, Tensor


def finite_difference_grad(f, arr: np.ndarray, indices, step: float = 1e-4) -> dict:
    """Central-difference gradient oracle, independent of the tape.

    ``f`` is a closure returning a float; ``arr`` is mutated in place around
    each probed index and restored. Returns {flat_index: derivative}.
    """
    flat = arr.reshape(-1)
    out = {}
    for i in indices:
        saved = flat[i]
        flat[i] = saved + step
        fp = f()
        flat[i] = saved - step
        fm = f()
        flat[i] = saved
        out[i] = (fp - fm) / (2.0 * step)
    return out


def max_rel_error(analytic: np.ndarray, fd: dict) -> float:
    flat = analytic.reshape(-1)
    worst = 0.0
    for i, d in fd.items():
        denom = max(abs(d), abs(flat[i]), 1e-8)
        worst = max(worst, abs(d - flat[i]) / denom)
    return worst


def check_op_gradients(build_loss, tensors, rng: SeededRng, samples_per_tensor: int = 6,
                       step: float = 1e-4) -> float:
    """Tape gradients of ``build_loss(tensors)`` vs finite differences.

    ``tensors`` are float64 leaf tensors with requires_grad set. Returns the
    max relative error across sampled coordinates of every tensor.
    """
    with GradTape() as tape:
        loss = build_loss()
        grads = tape.backward(loss)

    def scalar():
        return float(build_loss().data)

    worst = 0.0
    for t in tensors:
        n = t.data.size
        k = min(samples_per_tensor, n)
        idx = sorted({int(v * n) for v in rng.uniforms(k)} | {0, n - 1})
        fd = finite_difference_grad(scalar, t.data, idx, step)
        worst = max(worst, max_rel_error(grads.get(t), fd))
    return worst


@pytest.fixture
def rng64():
    return SeededRng(0xDECAF)


def rand_tensor(rng: SeededRng, shape, requires_grad=True, dtype=np.float64) -> Tensor:
    n = int(np.prod(shape))
    return Tensor(rng.normals(n).reshape(shape).astype(dtype), requires_grad=requires_grad)
