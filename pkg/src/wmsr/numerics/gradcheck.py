"""Central finite-difference checks for the tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def _eval(f, inputs) -> float:
    return float(f(*inputs).data)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """``||a - b|| / max(||a||, ||b||)``; zero when both vanish."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom < floor:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def _leaves(inputs) -> list:
    return [t if isinstance(t, Tensor) else Tensor(np.array(t, dtype=np.float64), requires_grad=True)
            for t in inputs]


def analytic_grads(f: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list:
    with Tape() as tape:
        loss = f(*inputs)
    return backward(tape, loss, list(inputs))


def numerical_grad(f: Callable[..., Tensor], inputs: Sequence[Tensor], index: int, eps: float = 1e-6):
    x = inputs[index].data
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = _eval(f, inputs)
        flat[i] = orig - eps
        fm = _eval(f, inputs)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def gradcheck(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-6) -> list:
    """Relative error between tape and finite-difference gradients, per input.

    Arrays are wrapped as float64 leaf tensors; tensors must already be
    float64 and marked ``requires_grad``. ``f`` must map the inputs to a
    scalar tensor.
    """
    inputs = _leaves(inputs)
    ana = analytic_grads(f, inputs)
    return [relative_error(ana[i], numerical_grad(f, inputs, i, eps)) for i in range(len(inputs))]


def directional_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    rng: np.random.Generator,
    eps: float = 1e-6,
    grads: list | None = None,
) -> list:
    """Compare ``<grad, v>`` with a central difference along a random ``v``.

    One direction per input; used where full element-wise checks of large
    parameter sets would take too long.
    """
    inputs = _leaves(inputs)
    ana = grads if grads is not None else analytic_grads(f, inputs)
    errs = []
    for t, g in zip(inputs, ana):
        v = rng.standard_normal(t.shape)
        orig = t.data.copy()
        t.data[...] = orig + eps * v
        fp = _eval(f, inputs)
        t.data[...] = orig - eps * v
        fm = _eval(f, inputs)
        t.data[...] = orig
        num = (fp - fm) / (2 * eps)
        a = float(np.sum(g * v))
        denom = max(abs(a), abs(num))
        errs.append(0.0 if denom < 1e-12 else abs(a - num) / denom)
    return errs
