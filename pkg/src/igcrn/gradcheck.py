"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], float], arr: np.ndarray, h: float = 1e-6,
                   indices: Sequence[tuple] | None = None) -> np.ndarray:
    """Estimate d fn / d arr by central differences, perturbing ``arr`` in place.

    With ``indices`` only those entries are estimated (others stay zero).
    """
    out = np.zeros_like(arr, dtype=np.float64)
    it = indices if indices is not None else list(np.ndindex(*arr.shape))
    for idx in it:
        orig = arr[idx]
        arr[idx] = orig + h
        fp = fn()
        arr[idx] = orig - h
        fm = fn()
        arr[idx] = orig
        out[idx] = (fp - fm) / (2 * h)
    return out


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max-norm relative error ``|a - b|_inf / max(|a|_inf, |b|_inf, tiny)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-6,
                    max_entries: int | None = None, rng: np.random.Generator | None = None
                    ) -> list[float]:
    """Compare analytic and numerical gradients of a scalar ``loss_fn``.

    ``loss_fn`` must rebuild the graph from the current ``tensors`` data on
    every call. Returns one relative error per tensor. ``max_entries`` caps
    how many randomly chosen entries per tensor are probed.
    """
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in tensors]

    def scalar():
        return float(loss_fn().data)

    errors = []
    for t, ga in zip(tensors, analytic):
        idx = None
        if max_entries is not None and t.size > max_entries:
            r = rng if rng is not None else np.random.default_rng(0)
            flat = r.choice(t.size, size=max_entries, replace=False)
            idx = [np.unravel_index(k, t.shape) for k in flat]
        gn = numerical_grad(scalar, t.data, h=h, indices=idx)
        if idx is not None:
            sel = tuple(np.array(idx).T)
            errors.append(rel_error(ga[sel], gn[sel]))
        else:
            errors.append(rel_error(ga, gn))
    return errors
