"""Dense 2-D float64 tensors with a reverse-mode differentiation tape.

Every op takes and returns :class:`Tensor` objects holding a ``(rows, cols)``
``numpy`` array. When any input requires a gradient (and recording is on),
the op appends a record to the active :class:`Tape`; :func:`backward` replays
that tape in reverse and clears it.

There is no broadcasting. The one row-broadcast needed by affine layers is
the explicit :func:`add_row`.
"""

from __future__ import annotations

import contextlib
import math
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

MASK_LOGIT = -1e30


class ShapeError(ValueError):
    pass


class EmptyAttentionError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_touched")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got ndim={arr.ndim}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self.name = name
        self._touched = False

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = np.zeros_like(arr) if requires_grad else None
        t.name = None
        t._touched = False
        return t

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(rows: int, cols: int) -> Tensor:
    return Tensor._wrap(np.zeros((rows, cols)), False)


# ---------------------------------------------------------------------------
# tape


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    records: list[_Record] = field(default_factory=list)
    enabled: bool = True

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()


_local = threading.local()


def get_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    tape = get_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    tape = get_tape()
    needs = tape.enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, needs)
    if needs:
        tape.records.append(_Record(out, inputs, backward))
    return out


def custom_op(data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    """Record a user-defined op. ``backward(g)`` returns one gradient per input."""
    return _make(np.asarray(data, dtype=np.float64), tuple(inputs), backward)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(x) into ``x.grad`` for every taped input, then clear the tape."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    tape = get_tape()
    if not loss.requires_grad:
        tape.clear()
        return
    loss.grad += 1.0
    loss._touched = True
    try:
        for rec in reversed(tape.records):
            out = rec.out
            if not out._touched:
                continue
            grads = rec.backward(out.grad)
            for inp, g in zip(rec.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                inp.grad += g
                inp._touched = True
    finally:
        for rec in tape.records:
            rec.out._touched = False
            for inp in rec.inputs:
                inp._touched = False
        loss._touched = False
        tape.clear()


# ---------------------------------------------------------------------------
# elementwise and linear ops


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions {a.shape} x {b.shape} disagree")
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return _make(ad @ bd, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b), lambda g: (g / bd, -g * out / bd))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def add_row(x: Tensor, b: Tensor) -> Tensor:
    """Add the 1xN row ``b`` to every row of ``x``."""
    if b.shape[0] != 1 or b.shape[1] != x.shape[1]:
        raise ShapeError(f"add_row: bias {b.shape} does not fit rows of {x.shape}")
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0, keepdims=True)))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _make(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


def transpose(x: Tensor) -> Tensor:
    return _make(x.data.T.copy(), (x,), lambda g: (g.T,))


def reshape(x: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as ({rows}, {cols})")
    shp = x.shape
    return _make(x.data.reshape(rows, cols).copy(), (x,), lambda g: (g.reshape(shp),))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shp = x.shape
    return _make(np.array([[x.data.sum()]]), (x,), lambda g: (np.full(shp, g[0, 0]),))


def mean(x: Tensor) -> Tensor:
    shp = x.shape
    n = x.data.size
    return _make(np.array([[x.data.mean()]]), (x,), lambda g: (np.full(shp, g[0, 0] / n),))


def sum_cols(x: Tensor) -> Tensor:
    """Row sums, shape (rows, 1)."""
    n = x.shape[1]
    return _make(x.data.sum(axis=1, keepdims=True), (x,), lambda g: (np.repeat(g, n, axis=1),))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ {sorted(cols)}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=0), parts, bw)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {sorted(rows)}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=1), parts, bw)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    shp = x.shape

    def bw(g):
        full = np.zeros(shp)
        full[:, start:stop] = g
        return (full,)

    return _make(x.data[:, start:stop].copy(), (x,), bw)


def take_rows(x: Tensor, idx: Sequence[int]) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    shp = x.shape

    def bw(g):
        full = np.zeros(shp)
        np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), bw)


def scatter_rows(x: Tensor, idx: Sequence[int], total: int) -> Tensor:
    """Place the rows of ``x`` at positions ``idx`` of a zero (total x cols) tensor."""
    idx = np.asarray(idx, dtype=np.intp)
    if len(idx) != x.shape[0]:
        raise ShapeError(f"scatter_rows: {len(idx)} indices for {x.shape[0]} rows")
    out = np.zeros((total, x.shape[1]))
    out[idx] = x.data
    return _make(out, (x,), lambda g: (g[idx],))


def pick(x: Tensor, rows: Sequence[int], cols: Sequence[int]) -> Tensor:
    """Gather ``x[rows[i], cols[i]]`` into an (n, 1) column."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    shp = x.shape

    def bw(g):
        full = np.zeros(shp)
        np.add.at(full, (rows, cols), g[:, 0])
        return (full,)

    return _make(x.data[rows, cols].reshape(-1, 1), (x,), bw)


# ---------------------------------------------------------------------------
# softmax and attention


def softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _make(out, (x,), bw)


def log_softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, (x,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def scaled_dot_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: Sequence[bool] | np.ndarray | None = None,
    causal: bool = False,
) -> Tensor:
    """softmax(Q K^T / sqrt(d)) V with optional key mask (True = keep) and causal mask."""
    d = q.shape[1]
    if k.shape[1] != d or v.shape[1] != d:
        raise ShapeError(f"attention: feature dims differ q={q.shape} k={k.shape} v={v.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"attention: {k.shape[0]} keys but {v.shape[0]} values")
    n = k.shape[0]
    m = q.shape[0]
    keep = np.ones((m, n), dtype=bool)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n,):
            raise ShapeError(f"attention: mask length {mask.shape} for {n} keys")
        keep &= mask[None, :]
    if causal:
        keep &= np.tril(np.ones((m, n), dtype=bool), k=n - m)
    if not keep.any(axis=1).all():
        raise EmptyAttentionError("empty attention support")
    logits = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d))
    if not keep.all():
        logits = add(logits, Tensor._wrap(np.where(keep, 0.0, MASK_LOGIT), False))
    return matmul(softmax_rows(logits), v)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max over input coordinates of |analytic - central| / max(1, |central|)."""
    inputs = list(inputs)
    for t in inputs:
        t.zero_grad()
    get_tape().clear()
    backward(fn(*inputs))
    worst = 0.0
    with no_grad():
        for t in inputs:
            if not t.requires_grad:
                continue
            analytic = t.grad.copy()
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = fn(*inputs).item()
                flat[i] = orig - eps
                fm = fn(*inputs).item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * eps)
                err = abs(analytic.reshape(-1)[i] - num) / max(1.0, abs(num))
                worst = max(worst, err)
    for t in inputs:
        t.zero_grad()
    return worst


# ---------------------------------------------------------------------------
# parameters and checkpoints


class ParamStore:
    """Flat, ordered, name -> Tensor registry of trainable parameters."""

    def __init__(self) -> None:
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.data.copy()) for n, t in self._params.items())

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for n, t in self._params.items():
            arr = np.asarray(arrays[n], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"{n}: checkpoint shape {arr.shape} != {t.shape}")
            t.data[...] = arr


CKPT_MAGIC = b"LDCK"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(path, arrays: dict[str, np.ndarray], meta: bytes = b"") -> None:
    """Write ``magic | version | u32 meta_len | meta | u32 count | records``.

    Each record is ``u16 name_len | utf-8 name | u32 rows | u32 cols | rows*cols <f8``.
    """
    chunks = [CKPT_MAGIC, struct.pack("<B", CKPT_VERSION), struct.pack("<I", len(meta)), meta]
    chunks.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        if arr.ndim != 2:
            raise ShapeError(f"{name}: only 2-D arrays are checkpointed")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<II", *arr.shape))
        chunks.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_params(path) -> tuple["OrderedDict[str, np.ndarray]", bytes]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic header")
    try:
        (version,) = struct.unpack_from("<B", buf, 4)
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        pos = 5
        (meta_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        meta = buf[pos : pos + meta_len]
        pos += meta_len
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + nlen].decode("utf-8")
            pos += nlen
            rows, cols = struct.unpack_from("<II", buf, pos)
            pos += 8
            nbytes = 8 * rows * cols
            if pos + nbytes > len(buf):
                raise CheckpointError(f"{path}: truncated record {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).copy()
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return out, meta
