"""Central finite-difference gradient checking."""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, default_dtype


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error; zero when both vectors vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def default_eps(dtype) -> float:
    return 1e-3 if np.dtype(dtype) == np.float32 else 1e-6


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], *,
                    n_coords: int | None = 20, eps: float | None = None,
                    rng: np.random.Generator | None = None,
                    names: Sequence[str] | None = None, reference_dtype=None,
                    promote: Sequence[Tensor] = ()) -> dict[str, float]:
    """Compare tape gradients of ``fn()`` against central differences.

    ``fn`` must rebuild the scalar loss from the current contents of
    ``tensors``.  For each tensor up to ``n_coords`` coordinates are sampled
    (all of them when ``n_coords`` is None or the tensor is small).
    Returns the relative error per tensor.

    A tensor whose analytic and numeric gradients both sit below the
    rounding noise of the differenced loss (a few ulps over ``2h``) or of
    the backward pass (a few dozen ulps of the largest gradient) is
    reported as 0: its gradient is zero to measurement precision, e.g. a
    bias feeding straight into batch norm.

    With ``reference_dtype`` (e.g. float64 for a float32 graph) the
    differences are taken with ``tensors`` and ``promote`` up-cast to that
    dtype, so the finite-difference oracle is not limited by float32 rounding
    while the analytic route stays in the original precision.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.requires_grad = True
    with Tape() as tape:
        loss = fn()
    analytic = [g.copy() for g in tape.backward(loss, tensors)]
    # rounding noise of the backward pass itself, relative to the largest gradient
    scale = max((float(np.abs(g).max()) for g in analytic if g.size), default=0.0)
    a_noise = 64 * np.finfo(loss.dtype).eps * scale
    with _promoted(list(tensors) + list(promote), reference_dtype):
        return _numeric_errors(fn, tensors, analytic, n_coords, eps, rng, names, a_noise)


@contextmanager
def _promoted(tensors: Sequence[Tensor], dtype):
    if dtype is None:
        yield
        return
    saved = [t.data for t in tensors]
    try:
        for t in tensors:
            t.data = t.data.astype(dtype)
        with default_dtype(dtype):
            yield
    finally:
        for t, d in zip(tensors, saved):
            t.data = d


def _numeric_errors(fn, tensors, analytic, n_coords, eps, rng, names, a_noise=0.0) -> dict[str, float]:
    ulp = float(np.spacing(np.abs(fn().data)))

    names = list(names) if names is not None else [t.name or f"t{i}" for i, t in enumerate(tensors)]
    errors = {}
    for name, t, ga in zip(names, tensors, analytic):
        h = eps if eps is not None else default_eps(t.dtype)
        flat = t.data.reshape(-1)
        if n_coords is None or flat.size <= n_coords:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=n_coords, replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            hi, lo = flat.dtype.type(orig + h), flat.dtype.type(orig - h)
            flat[i] = hi
            up = float(fn().data)
            flat[i] = lo
            down = float(fn().data)
            flat[i] = orig
            # the representable step, not the requested one
            num[j] = (up - down) / (float(hi) - float(lo))
        a = ga.reshape(-1)[idx]
        floor = max(4.0 * ulp / (2 * h), a_noise) * np.sqrt(len(idx))
        if max(np.linalg.norm(a), np.linalg.norm(num)) <= floor:
            errors[name] = 0.0
        else:
            errors[name] = rel_error(a, num)
    return errors
