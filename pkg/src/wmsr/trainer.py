"""Adam, the step-cosine learning-rate schedule, checkpoints and the training loop."""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from .data import PatchPair, stack
from .network import WMSR, ModelConfig, build
from .numerics import Tape, backward
from .objective import METRIC_HEADER, LossWeights, metric_row, psnr, ssim, total_loss


class NonFiniteError(FloatingPointError):
    """A loss or gradient became NaN/inf."""


# ------------------------------------------------------------------- Adam

@dataclass
class OptimState:
    """Adam moments (float64) and step counter."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params) -> "OptimState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params])


def adam_step(params, grads: Sequence[np.ndarray], state: OptimState, lr: float) -> None:
    """One bias-corrected Adam update, in place.

    Raises :class:`NonFiniteError` before touching anything if a gradient is
    not finite.
    """
    for p, g in zip(params, grads):
        if not np.all(np.isfinite(g)):
            name = getattr(p, "name", None) or "?"
            raise NonFiniteError(f"non-finite gradient for parameter {name!r} at step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)


def lr_schedule(epoch: int, base: float = 1e-3, period: int = 20) -> float:
    """Halve every ``period`` epochs, cosine from the segment start to half of it inside a segment.

    ``lr(e) = base * 2**-(e // period) * (0.75 + 0.25 * cos(pi * (e % period) / period))``
    """
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    seg, t = divmod(epoch, period)
    return base * 2.0 ** (-seg) * (0.75 + 0.25 * math.cos(math.pi * t / period))


# ------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"WMSRCKPT"
CKPT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    """Everything needed to rebuild a model and resume training.

    Binary layout (little-endian)::

        magic b"WMSRCKPT", u16 version
        u32 n, n bytes   config text (key = value lines)
        u8               fused flag
        u32              tensor count, then per tensor:
                         u16 name length, name, u8 dtype (0 f32, 1 f64), u8 ndim, u32 dims, data
        u8               optimizer present; if so u64 step, then m and v per tensor as f64
        u32 n, n bytes   JSON metadata (epoch, best PSNR, RNG state)
    """

    config: ModelConfig
    tensors: "dict[str, np.ndarray]"
    fused: bool = False
    optim: Optional[OptimState] = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: WMSR, optim: Optional[OptimState] = None, meta: Optional[dict] = None):
        tensors = {name: np.array(p.data) for name, p in model.named_parameters()}
        return cls(model.cfg, tensors, model.fused, optim, dict(meta or {}))

    def to_model(self, dtype=None) -> WMSR:
        """Rebuild the model; ``dtype`` overrides the configured compute precision."""
        model = build(self.config, dtype)
        if self.fused:
            model.fuse()
        model.load_state_dict(self.tensors)
        return model

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(CKPT_MAGIC + struct.pack("<H", CKPT_VERSION))
        _write_blob(buf, self.config.to_text().encode())
        buf.write(struct.pack("<B", int(self.fused)))
        buf.write(struct.pack("<I", len(self.tensors)))
        for name, arr in self.tensors.items():
            arr = np.asarray(arr)
            if arr.dtype not in _CODES:
                raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
            enc = name.encode()
            buf.write(struct.pack("<H", len(enc)) + enc)
            buf.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes())
        if self.optim is None:
            buf.write(b"\x00")
        else:
            buf.write(struct.pack("<BQ", 1, self.optim.step))
            for m, v in zip(self.optim.m, self.optim.v):
                buf.write(np.ascontiguousarray(m, dtype="<f8").tobytes())
                buf.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
        _write_blob(buf, json.dumps(self.meta, sort_keys=True).encode())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        buf = io.BytesIO(raw)
        if buf.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise CheckpointError("not a checkpoint: bad magic")
        (version,) = _unpack(buf, "<H")
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        config = ModelConfig.from_text(_read_blob(buf).decode())
        (fused,) = _unpack(buf, "<B")
        (count,) = _unpack(buf, "<I")
        tensors = {}
        for _ in range(count):
            (n,) = _unpack(buf, "<H")
            name = _read_exact(buf, n).decode()
            code, ndim = _unpack(buf, "<BB")
            if code not in _DTYPES:
                raise CheckpointError(f"{name}: unknown dtype code {code}")
            shape = _unpack(buf, f"<{ndim}I")
            dt = _DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(_read_exact(buf, size * dt.itemsize), dtype=dt).reshape(shape)
            tensors[name] = data.astype(dt.newbyteorder("="))
        (has_optim,) = _unpack(buf, "<B")
        optim = None
        if has_optim:
            (step,) = _unpack(buf, "<Q")
            ms, vs = [], []
            for arr in tensors.values():
                nbytes = arr.size * 8
                ms.append(np.frombuffer(_read_exact(buf, nbytes), "<f8").reshape(arr.shape).copy())
                vs.append(np.frombuffer(_read_exact(buf, nbytes), "<f8").reshape(arr.shape).copy())
            optim = OptimState(ms, vs, step)
        meta = json.loads(_read_blob(buf).decode())
        if buf.read(1):
            raise CheckpointError("trailing bytes after checkpoint")
        return cls(config, tensors, bool(fused), optim, meta)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def _read_exact(buf, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(data)}")
    return data


def _unpack(buf, fmt: str) -> tuple:
    return struct.unpack(fmt, _read_exact(buf, struct.calcsize(fmt)))


def _write_blob(buf, data: bytes) -> None:
    buf.write(struct.pack("<I", len(data)) + data)


def _read_blob(buf) -> bytes:
    (n,) = _unpack(buf, "<I")
    return _read_exact(buf, n)


# ------------------------------------------------------------------ loop

def evaluate(model: WMSR, pairs: Sequence[PatchPair], batch_size: int = 4) -> tuple:
    """Mean PSNR and SSIM of ``model`` over ``pairs`` (per-patch scores averaged)."""
    scores = []
    for i in range(0, len(pairs), batch_size):
        hr, lr = stack(pairs[i:i + batch_size])
        sr = np.clip(model(lr).data, 0.0, 1.0)
        for j in range(len(hr)):
            scores.append((psnr(sr[j], hr[j]), ssim(sr[j], hr[j])))
    if not scores:
        return float("nan"), float("nan")
    arr = np.asarray(scores)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())


@dataclass
class TrainResult:
    model: WMSR
    log: List[str]
    steps: int
    best: Optional[Checkpoint]
    train_psnr: float = float("nan")


def train(
    model: WMSR,
    train_pairs: Sequence[PatchPair],
    test_pairs: Sequence[PatchPair] = (),
    cfg: Optional[ModelConfig] = None,
    out_dir=None,
    max_steps: Optional[int] = None,
    eval_every: int = 1,
    eval_train: bool = False,
    stop_psnr: Optional[float] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> TrainResult:
    """Train with Adam on ``total_loss``; deterministic given ``cfg.seed``.

    Every ``eval_every`` epochs (and after the last one) the test split, and
    the train split when ``eval_train``, are scored and appended to the metric
    log. The best test-PSNR checkpoint is kept and written to ``out_dir``.
    Training stops after ``cfg.epochs`` epochs, ``max_steps`` steps, or once
    the train PSNR reaches ``stop_psnr`` (which implies ``eval_train``).
    """
    cfg = cfg or model.cfg
    weights = LossWeights(cfg.lambda_rec, cfg.lambda_freq)
    params = model.parameters()
    optim = OptimState.zeros(params)
    rng = np.random.default_rng(cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    eval_train = eval_train or stop_psnr is not None
    log = [METRIC_HEADER]
    best, best_psnr, train_psnr = None, -math.inf, float("nan")
    steps, epoch = 0, -1
    last_good = Checkpoint.from_model(model, meta={"epoch": 0, "step": 0})

    def emit(line):
        log.append(line)
        if progress is not None:
            progress(line)

    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg.lr, cfg.decay_every)
        order = rng.permutation(len(train_pairs))
        for i in range(0, len(order), cfg.batch_size):
            hr, lr_img = stack(train_pairs[j] for j in order[i:i + cfg.batch_size])
            with Tape() as tape:
                loss = total_loss(model(lr_img), hr, weights)
            if not np.isfinite(loss.data):
                _abort(out, last_good, f"non-finite loss at epoch {epoch} step {steps + 1}")
            grads = backward(tape, loss, params)
            try:
                adam_step(params, grads, optim, lr)
            except NonFiniteError as exc:
                _abort(out, last_good, str(exc))
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        done = (epoch == cfg.epochs - 1) or (max_steps is not None and steps >= max_steps)
        if (epoch + 1) % eval_every and not done:
            continue
        last_good = Checkpoint.from_model(model, meta={"epoch": epoch + 1, "step": steps})
        if eval_train:
            train_psnr, s = evaluate(model, train_pairs, cfg.batch_size)
            emit(metric_row(epoch + 1, "train", train_psnr, s))
        if test_pairs:
            p, s = evaluate(model, test_pairs, cfg.batch_size)
            emit(metric_row(epoch + 1, "test", p, s))
            if p > best_psnr:
                best_psnr = p
                best = Checkpoint.from_model(
                    model, optim, {"epoch": epoch + 1, "step": steps, "best_psnr": p,
                                   "rng": rng.bit_generator.state}
                )
                if out is not None:
                    best.save(out / "best.ckpt")
        if done or (stop_psnr is not None and train_psnr >= stop_psnr):
            break
    if out is not None:
        (out / "metrics.csv").write_text("\n".join(log) + "\n")
        Checkpoint.from_model(model, optim, {"epoch": epoch + 1, "step": steps,
                                             "rng": rng.bit_generator.state}).save(out / "last.ckpt")
    return TrainResult(model, log, steps, best, train_psnr)


def _abort(out, last_good: Checkpoint, message: str):
    if out is not None:
        last_good.save(out / "last_good.ckpt")
    raise NonFiniteError(message)
