"""Input-dependent (selective) state-space scans in 1-D and over four 2-D raster orders."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from ..numerics import Tensor, active_tape, as_tensor, exp, linear, make_op, reshape, softplus
from ..numerics.ops import ShapeError
from . import kernels
from ._scan_py import _psi

DIRECTIONS = ("row-fwd", "row-rev", "col-fwd", "col-rev")


def discretize(A, B, delta):
    """Zero-order-hold discretization: ``(exp(dA), (dA)^-1 (exp(dA) - 1) dB)``.

    Elementwise over broadcastable arrays (diagonal ``A``). A second-order
    series replaces the closed form when ``|delta * A| < 1e-4``.
    """
    A, B, delta = (np.asarray(v, dtype=np.float64) for v in (A, B, delta))
    if np.any(delta <= 0):
        raise ValueError("delta must be strictly positive")
    z = delta * A
    return np.exp(z), _psi(z, delta) * B


@dataclass(frozen=True)
class ScanOrder:
    """A traversal of the ``H*W`` positions of a grid and its inverse."""

    direction: str
    perm: np.ndarray
    inverse: np.ndarray

    @classmethod
    def make(cls, direction: str, h: int, w: int) -> "ScanOrder":
        idx = np.arange(h * w)
        if direction.startswith("row"):
            perm = idx
        elif direction.startswith("col"):
            perm = idx.reshape(h, w).T.ravel()
        else:
            raise ValueError(f"unknown scan direction {direction!r}")
        if direction.endswith("rev"):
            perm = perm[::-1]
        perm = np.ascontiguousarray(perm)
        inverse = np.empty_like(perm)
        inverse[perm] = idx
        return cls(direction, perm, inverse)

    def unfold(self, grid: np.ndarray) -> np.ndarray:
        """``(B, C, H, W)`` -> ``(B, L, C)`` in visiting order."""
        b, c = grid.shape[:2]
        return np.ascontiguousarray(grid.reshape(b, c, -1)[:, :, self.perm].transpose(0, 2, 1))

    def fold(self, seq: np.ndarray, h: int, w: int) -> np.ndarray:
        b, _, c = seq.shape
        out = np.empty((b, c, h * w), dtype=seq.dtype)
        out[:, :, self.perm] = seq.transpose(0, 2, 1)
        return out.reshape(b, c, h, w)


@dataclass
class SsmParams:
    """Parameters of one selective scan over ``d`` channels with state size ``n``.

    ``A = -exp(A_log)`` is diagonal per channel. ``B_t = W_B x_t``,
    ``C_t = W_C x_t`` and ``delta_t = softplus(W_dt_up W_dt_down x_t + b_dt)``.
    """

    A_log: Tensor
    D: Tensor
    W_B: Tensor
    W_C: Tensor
    W_dt_down: Tensor
    W_dt_up: Tensor
    b_dt: Tensor

    @property
    def d_inner(self) -> int:
        return self.A_log.shape[0]

    @property
    def d_state(self) -> int:
        return self.A_log.shape[1]

    def tensors(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]

    @staticmethod
    def dt_rank(d: int) -> int:
        return math.ceil(d / 16)

    @classmethod
    def init(cls, d: int, n: int, rng: np.random.Generator, dtype=np.float64,
             dt_min: float = 1e-3, dt_max: float = 1e-1) -> "SsmParams":
        r = cls.dt_rank(d)

        def xavier(fan_out, fan_in):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-bound, bound, size=(fan_out, fan_in))

        dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=d))
        b_dt = dt + np.log(-np.expm1(-dt))  # inverse softplus
        arrays = dict(
            A_log=np.log(np.tile(np.arange(1, n + 1, dtype=np.float64), (d, 1))),
            D=np.ones(d),
            W_B=xavier(n, d),
            W_C=xavier(n, d),
            W_dt_down=xavier(r, d),
            W_dt_up=xavier(d, r),
            b_dt=b_dt,
        )
        return cls(**{k: Tensor(v.astype(dtype), requires_grad=True, name=k) for k, v in arrays.items()})


def selective_scan(x, delta, A, B, C, D, backend: str | None = None) -> Tensor:
    """Run ``h_t = Abar_t h_{t-1} + Bbar_t x_t``, ``y_t = C_t . h_t + D x_t`` with ``h_0 = 0``.

    Shapes: ``x, delta`` are ``(Bt, L, d)``; ``B, C`` are ``(Bt, L, n)``;
    ``A`` is ``(G, d, n)`` and ``D`` is ``(G, d)``, where batch element ``b``
    uses parameter group ``b // (Bt // G)``. 2-D inputs are promoted with
    ``Bt = G = 1``.
    """
    x, delta, A, B, C, D = (as_tensor(t) for t in (x, delta, A, B, C, D))
    promote = x.ndim == 2
    if promote:
        x, delta, B, C = (_lift(t) for t in (x, delta, B, C))
        A, D = _lift(A), _lift(D)
    bt, L, d = x.shape
    g, _, n = A.shape
    if delta.shape != x.shape or B.shape != (bt, L, n) or C.shape != (bt, L, n):
        raise ShapeError(
            f"selective_scan: x {x.shape}, delta {delta.shape}, B {B.shape}, C {C.shape}, A {A.shape}"
        )
    if D.shape != (g, d) or A.shape[1] != d or bt % g:
        raise ShapeError(f"selective_scan: A {A.shape} / D {D.shape} incompatible with x {x.shape}")
    out = _scan_op(x, delta, A, B, C, D, backend)
    if promote:
        out = reshape(out, out.shape[1:])
    return out


def _lift(t: Tensor) -> Tensor:
    return reshape(t, (1,) + t.shape)


def _scan_op(x, delta, A, B, C, D, backend) -> Tensor:
    k = kernels.get(backend)
    dtype = np.result_type(x.dtype, delta.dtype, A.dtype, B.dtype, C.dtype, D.dtype)
    arrs = [np.ascontiguousarray(t.data, dtype=dtype) for t in (x, delta, A, B, C, D)]
    inputs = (x, delta, A, B, C, D)
    want_grad = active_tape() is not None and any(t.requires_grad for t in inputs)
    y, saved = k.scan_forward(*arrs, want_grad)

    def vjp(gy):
        grads = k.scan_backward(np.ascontiguousarray(gy, dtype=dtype), *arrs, saved)
        return tuple(gr.astype(t.dtype, copy=False) for gr, t in zip(grads, inputs))

    return make_op("selective_scan", y, inputs, vjp)


def _projections(x: Tensor, p: SsmParams):
    delta = softplus(linear(linear(x, p.W_dt_down), p.W_dt_up, p.b_dt))
    return delta, linear(x, p.W_B), linear(x, p.W_C), -exp(p.A_log)


def directional_scan(x, params: Sequence[SsmParams], directions: Sequence[str],
                     backend: str | None = None) -> Tensor:
    """Scan ``(B, d, H, W)`` along each direction and average the folded results."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"expected (B, C, H, W), got {x.shape}")
    if len(params) != len(directions):
        raise ValueError("need one parameter set per direction")
    b, d, h, w = x.shape
    for p in params:
        if p.d_inner != d:
            raise ShapeError(f"scan params have {p.d_inner} channels, input has {d}")
    orders = [ScanOrder.make(name, h, w) for name in directions]
    proj = [_projections(x, p) for p in params]
    deltas = [q[0] for q in proj]
    Bs = [q[1] for q in proj]
    Cs = [q[2] for q in proj]
    As = [q[3] for q in proj]
    Ds = [p.D for p in params]
    return _fold_scan_op(x, deltas, Bs, Cs, As, Ds, orders, backend)


def _fold_scan_op(x, deltas, Bs, Cs, As, Ds, orders, backend) -> Tensor:
    k = kernels.get(backend)
    inputs = [x, *deltas, *Bs, *Cs, *As, *Ds]
    dtype = np.result_type(*(t.dtype for t in inputs))
    nd = len(orders)
    b, d, h, w = x.shape

    def unfold_all(grids):
        return np.ascontiguousarray(
            np.concatenate([o.unfold(gr.data) for o, gr in zip(orders, grids)]), dtype=dtype
        )

    xs = unfold_all([x] * nd)
    ds = unfold_all(deltas)
    bs = unfold_all(Bs)
    cs = unfold_all(Cs)
    A_all = np.ascontiguousarray(np.stack([a.data for a in As]), dtype=dtype)
    D_all = np.ascontiguousarray(np.stack([v.data for v in Ds]), dtype=dtype)
    want_grad = active_tape() is not None and any(t.requires_grad for t in inputs)
    ys, saved = k.scan_forward(xs, ds, A_all, bs, cs, D_all, want_grad)
    out = np.zeros((b, d, h, w), dtype=dtype)
    for i, o in enumerate(orders):
        out += o.fold(ys[i * b:(i + 1) * b], h, w)
    out /= nd

    def vjp(g):
        gs = np.ascontiguousarray(
            np.concatenate([o.unfold(g) for o in orders]) / nd, dtype=dtype
        )
        gx, gd, gA, gB, gC, gD = k.scan_backward(gs, xs, ds, A_all, bs, cs, D_all, saved)

        def fold_all(seq):
            return [o.fold(seq[i * b:(i + 1) * b], h, w) for i, o in enumerate(orders)]

        gx_grid = np.sum(fold_all(gx), axis=0)
        grads = [gx_grid, *fold_all(gd), *fold_all(gB), *fold_all(gC), *list(gA), *list(gD)]
        return tuple(gr.astype(t.dtype, copy=False) for gr, t in zip(grads, inputs))

    return make_op("ssm_2d", out, inputs, vjp)


def selective_scan_1d(x, params: SsmParams, backend: str | None = None) -> Tensor:
    """Selective scan of a ``(L, C)`` or ``(B, L, C)`` sequence with its own projections."""
    x = as_tensor(x)
    squeeze = x.ndim == 2
    seq = reshape(x, (1,) + x.shape) if squeeze else x
    # a sequence is a 1 x L grid scanned row-forward
    y = _untranspose_lc(directional_scan(_transpose_lc(seq), [params], ["row-fwd"], backend))
    return reshape(y, x.shape) if squeeze else y


def _transpose_lc(t: Tensor) -> Tensor:
    # (B, L, C) -> (B, C, 1, L)
    b, L, c = t.shape
    out = t.data.transpose(0, 2, 1).reshape(b, c, 1, L)
    return make_op("to_grid", out, (t,), lambda g: (g.reshape(b, c, L).transpose(0, 2, 1),))


def _untranspose_lc(t: Tensor) -> Tensor:
    b, c, _, L = t.shape
    out = t.data.reshape(b, c, L).transpose(0, 2, 1)
    return make_op("from_grid", out, (t,), lambda g: (g.transpose(0, 2, 1).reshape(b, c, 1, L),))


def ssm_2d(x, params: Sequence[SsmParams], backend: str | None = None) -> Tensor:
    """Mean of the four raster-order selective scans (row/col, forward/reverse).

    ``params`` gives one :class:`SsmParams` per direction in the order of
    :data:`DIRECTIONS`.
    """
    if len(params) != 4:
        raise ValueError(f"ssm_2d needs 4 parameter sets, got {len(params)}")
    return directional_scan(x, params, DIRECTIONS, backend)
