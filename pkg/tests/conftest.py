import os

# Pin BLAS to one thread before numpy is imported anywhere: keeps kernel
# results bitwise reproducible and matches the single-core runtime budgets.
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from syndiff import tensor as T  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def central_diff(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function, entry by entry (float64)."""
    x = x.astype(np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / denom)


def check_op_grad(op, shapes, rng, arg_index=0, rel_tol=1e-5, positive=False, **kwargs):
    """Gradient-check one op input against 64-bit central differences."""
    arrays = [rng.standard_normal(s) for s in shapes]
    if positive:
        arrays = [np.abs(a) + 0.5 for a in arrays]

    def loss_fn(x64):
        args = []
        for i, a in enumerate(arrays):
            args.append(T.Tensor(x64 if i == arg_index else a.astype(np.float64)))
        out = op(*args, **kwargs)
        return T.sum_(T.mul(out, out)).item()

    target = arrays[arg_index].astype(np.float64)
    fd = central_diff(loss_fn, target)

    args = [T.Tensor(a.astype(np.float64), requires_grad=(i == arg_index)) for i, a in enumerate(arrays)]
    out = op(*args, **kwargs)
    loss = T.sum_(T.mul(out, out))
    (g,) = T.grad(loss, [args[arg_index]])
    err = rel_err(g.data, fd)
    assert err < rel_tol, f"{op.__name__} arg {arg_index}: rel err {err:.3g}"
