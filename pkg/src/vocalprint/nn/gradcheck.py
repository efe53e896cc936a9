"""Central finite-difference gradients, used as an oracle for backward()."""

from __future__ import annotations

from typing import TYPE_CHECKING, Callable

import numpy as np

if TYPE_CHECKING:
    from .tensor import Tensor


def numerical_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = f()
        flat[i] = orig - eps
        minus = f()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / (|a| + 1e-8), elementwise."""
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)))


def check_gradients(forward: Callable[[], "Tensor"], leaves: dict, projection: np.ndarray | None = None,
                    eps: float = 1e-5, rng: np.random.Generator | None = None) -> dict[str, float]:
    """Relative error of backward() against central differences for every leaf.

    The scalar probed is sum(forward() * projection); a random projection
    (the default) exercises every output element with a distinct weight.
    """
    out = forward()
    if projection is None:
        projection = (rng or np.random.default_rng(0)).standard_normal(out.shape)
    for t in leaves.values():
        t.grad = None
    (out * projection).sum().backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy() for k, t in leaves.items()}

    def f():
        return float(np.sum(forward().data * projection))

    return {k: relative_error(analytic[k], numerical_gradient(f, t.data, eps)) for k, t in leaves.items()}
