"""Dense float64 matrices with a reverse-mode differentiation tape.

Every public op takes and returns :class:`Matrix`. When any input lives on a
:class:`Tape`, the op records a vector-Jacobian closure there; ``Tape.backward``
replays the closures in reverse order and accumulates gradients per node.
Inputs that are not on a tape are constants and get no gradient.
"""
from __future__ import annotations

import math
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DegenerateBatchError, ShapeError

_Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_GELU_C = math.sqrt(2.0 / math.pi)


class Matrix:
    """Immutable 2-D float64 value, optionally a node on a tape."""

    __slots__ = ("value", "tape", "node")

    def __init__(self, value, tape: "Tape | None" = None, node: int = -1) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"Matrix needs 2 dimensions, got shape {arr.shape}")
        arr = arr.view()
        arr.flags.writeable = False
        self.value = arr
        self.tape = tape
        self.node = node

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    @property
    def data(self) -> tuple[float, ...]:
        return tuple(self.value.ravel().tolist())

    @property
    def tracked(self) -> bool:
        return self.node >= 0

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return np.array(self.value)

    def __matmul__(self, other: "Matrix") -> "Matrix":
        return matmul(self, other)

    def __add__(self, other: "Matrix") -> "Matrix":
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Matrix):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        flag = f" node={self.node}" if self.tracked else ""
        return f"Matrix({self.rows}x{self.cols}{flag})"


class Tape:
    """Records primitive ops in execution order; one tape per training step."""

    def __init__(self) -> None:
        self._ops: list[tuple[int, tuple[int, ...], _Backward]] = []
        self._count = 0
        self._leaves: dict[str, Matrix] = {}
        self._grads: dict[int, np.ndarray] = {}
        self._shapes: list[tuple[int, int]] = []

    def __len__(self) -> int:
        return len(self._ops)

    def _new_node(self, shape) -> int:
        node = self._count
        self._count += 1
        self._shapes.append(tuple(shape))
        return node

    def leaf(self, name: str, value) -> Matrix:
        """A named input whose gradient is wanted; the same name maps to one node."""

        if name in self._leaves:
            return self._leaves[name]
        arr = np.asarray(value, dtype=np.float64)
        m = Matrix(arr, self, self._new_node(arr.shape))
        self._leaves[name] = m
        return m

    def record(self, value: np.ndarray, inputs: Sequence[Matrix], backward: _Backward) -> Matrix:
        ids = tuple(m.node if m.tape is self else -1 for m in inputs)
        node = self._new_node(value.shape)
        self._ops.append((node, ids, backward))
        return Matrix(value, self, node)

    def backward(self, loss: Matrix) -> None:
        if loss.tape is not self or not loss.tracked:
            raise ShapeError("loss is not recorded on this tape")
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.node: np.ones((1, 1))}
        for out, ins, fn in reversed(self._ops):
            g = grads.pop(out, None)
            if g is None:
                continue
            for node, gi in zip(ins, fn(g)):
                if node < 0 or gi is None:
                    continue
                prev = grads.get(node)
                grads[node] = gi if prev is None else prev + gi
        self._grads = grads

    def grad(self, target: Matrix | str) -> np.ndarray:
        m = self._leaves[target] if isinstance(target, str) else target
        g = self._grads.get(m.node)
        if g is None:
            return np.zeros(m.shape)
        return g

    def leaf_grads(self) -> dict[str, np.ndarray]:
        return {name: self.grad(m) for name, m in self._leaves.items()}

    @property
    def leaves(self) -> dict[str, Matrix]:
        return dict(self._leaves)


def _tape_of(inputs: Sequence[Matrix]) -> Tape | None:
    tape = None
    for m in inputs:
        if m.tracked:
            if tape is not None and m.tape is not tape:
                raise ShapeError("inputs recorded on different tapes")
            tape = m.tape
    return tape


def _result(value: np.ndarray, inputs: Sequence[Matrix], backward: _Backward) -> Matrix:
    tape = _tape_of(inputs)
    if tape is None:
        return Matrix(value)
    return tape.record(value, inputs, backward)


def constant(value) -> Matrix:
    return Matrix(value)


# ---- primitives ----

def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.rows:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    av, bv = a.value, b.value

    def back(g):
        return (g @ bv.T if a.tracked else None, av.T @ g if b.tracked else None)

    return _result(av @ bv, (a, b), back)


def add(a: Matrix, b: Matrix) -> Matrix:
    """Elementwise sum; ``b`` may also be a 1 x cols row broadcast over rows."""

    if a.shape == b.shape:
        return _result(a.value + b.value, (a, b), lambda g: (g, g))
    if b.rows == 1 and b.cols == a.cols:
        return _result(
            a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True))
        )
    raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}")


def mul(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}")
    av, bv = a.value, b.value
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Matrix, s: float) -> Matrix:
    return _result(a.value * s, (a,), lambda g: (g * s,))


def transpose(a: Matrix) -> Matrix:
    return _result(a.value.T.copy(), (a,), lambda g: (g.T,))


def gelu(a: Matrix) -> Matrix:
    x = a.value
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    out = 0.5 * x * (1.0 + t)

    def back(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return _result(out, (a,), back)


def softmax_rows(m: Matrix, mask: np.ndarray | None = None) -> Matrix:
    """Row softmax with row-max subtraction; ``mask`` (bool) marks allowed entries."""

    x = m.value
    if x.size == 0:
        return _result(x.copy(), (m,), lambda g: (np.zeros_like(g),))
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    mx = x.max(axis=1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(x - mx)
    s = e.sum(axis=1, keepdims=True)
    p = e / np.where(s > 0, s, 1.0)

    def back(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _result(p, (m,), back)


def layer_norm(x: Matrix, gain: Matrix, bias: Matrix, eps: float = 1e-5) -> Matrix:
    xv = x.value
    mu = xv.mean(axis=1, keepdims=True) if xv.size else np.zeros((xv.shape[0], 1))
    xc = xv - mu
    var = (xc * xc).mean(axis=1, keepdims=True) if xv.size else np.zeros((xv.shape[0], 1))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv = gain.value
    out = xhat * gv + bias.value

    def back(g):
        dxhat = g * gv
        if xv.size:
            dx = inv * (
                dxhat
                - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            )
        else:
            dx = np.zeros_like(xv)
        return (
            dx,
            (g * xhat).sum(axis=0, keepdims=True),
            g.sum(axis=0, keepdims=True),
        )

    return _result(out, (x, gain, bias), back)


def concat_rows(parts: Sequence[Matrix]) -> Matrix:
    if not parts:
        raise ShapeError("concat_rows needs at least one matrix")
    cols = parts[0].cols
    for p in parts:
        if p.cols != cols:
            raise ShapeError(f"concat_rows column mismatch: {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.rows for p in parts])

    def back(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.value for p in parts], axis=0), parts, back)


def slice_rows(a: Matrix, start: int, stop: int) -> Matrix:
    if not 0 <= start <= stop <= a.rows:
        raise ShapeError(f"row slice {start}:{stop} outside {a.shape}")

    def back(g):
        full = np.zeros(a.shape)
        full[start:stop] = g
        return (full,)

    return _result(a.value[start:stop].copy(), (a,), back)


def concat_cols(parts: Sequence[Matrix]) -> Matrix:
    if not parts:
        raise ShapeError("concat_cols needs at least one matrix")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeError(f"concat_cols row mismatch: {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def back(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.value for p in parts], axis=1), parts, back)


def slice_cols(a: Matrix, start: int, stop: int) -> Matrix:
    if not 0 <= start <= stop <= a.cols:
        raise ShapeError(f"column slice {start}:{stop} outside {a.shape}")

    def back(g):
        full = np.zeros(a.shape)
        full[:, start:stop] = g
        return (full,)

    return _result(a.value[:, start:stop].copy(), (a,), back)


def gather_rows(table: Matrix, ids: Sequence[int]) -> Matrix:
    idx = np.asarray(ids, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= table.rows):
        raise ShapeError(f"row index out of range for table of {table.rows} rows")

    def back(g):
        full = np.zeros(table.shape)
        np.add.at(full, idx, g)
        return (full,)

    return _result(table.value[idx], (table,), back)


def cross_entropy(logits: Matrix, targets: Sequence[int], mask: Sequence[bool]) -> Matrix:
    """Mean negative log-likelihood over the masked-in rows (1x1 result)."""

    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    keep = np.asarray(mask, dtype=bool).reshape(-1)
    if not (len(t) == len(keep) == logits.rows):
        raise ShapeError(
            f"cross_entropy lengths differ: logits {logits.rows}, targets {len(t)}, mask {len(keep)}"
        )
    if t.size and (t.min() < 0 or t.max() >= logits.cols):
        raise ShapeError(f"target outside vocabulary of {logits.cols}")
    idx = np.flatnonzero(keep)
    n = idx.size
    if n == 0:
        raise DegenerateBatchError("every position is masked out")
    x = logits.value
    mx = x.max(axis=1, keepdims=True)
    lse = mx + np.log(np.exp(x - mx).sum(axis=1, keepdims=True))
    logp = x - lse
    loss = -logp[idx, t[idx]].sum() / n

    def back(g):
        full = np.zeros(x.shape)
        full[idx] = np.exp(logp[idx])
        full[idx, t[idx]] -= 1.0
        return (full * (g[0, 0] / n),)

    return _result(np.array([[loss]]), (logits,), back)


def mean(scalars: Sequence[Matrix]) -> Matrix:
    if not scalars:
        raise DegenerateBatchError("mean of no values")
    total = scalars[0]
    for s in scalars[1:]:
        total = add(total, s)
    return scale(total, 1.0 / len(scalars))


# ---- finite-difference checking ----

def grad_check(
    f: Callable,
    theta: np.ndarray | Mapping[str, np.ndarray],
    h: float = 1e-5,
    *,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-8,
    atol: float = 0.0,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``theta`` is one array (``f`` receives a Matrix) or a mapping of named
    arrays (``f`` receives a dict of Matrices). ``max_coords`` caps how many
    coordinates per array are checked, chosen with ``seed``. The relative error
    divides by max(|analytic|, |numeric|, ``floor``). Coordinates where both
    gradients are below ``atol`` are skipped.
    """

    named = isinstance(theta, Mapping)
    params = (
        {k: np.atleast_2d(np.asarray(v, dtype=np.float64)) for k, v in theta.items()}
        if named
        else {"theta": np.atleast_2d(np.asarray(theta, dtype=np.float64))}
    )

    def call(mats: dict[str, Matrix]) -> Matrix:
        return f(mats) if named else f(mats["theta"])

    tape = Tape()
    leaves = {k: tape.leaf(k, v) for k, v in params.items()}
    loss = call(leaves)
    if loss.tracked:
        tape.backward(loss)
    consts = {k: Matrix(v) for k, v in params.items()}
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, value in params.items():
        analytic = tape.grad(leaves[name]) if loss.tracked else np.zeros(value.shape)
        coords = list(np.ndindex(value.shape))
        if max_coords is not None and len(coords) > max_coords:
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        for idx in coords:
            plus = value.copy()
            plus[idx] += h
            minus = value.copy()
            minus[idx] -= h
            fp = call({**consts, name: Matrix(plus)}).item()
            fm = call({**consts, name: Matrix(minus)}).item()
            numeric = (fp - fm) / (2.0 * h)
            a = float(analytic[idx])
            if abs(a) < atol and abs(numeric) < atol:
                continue
            denom = max(abs(a), abs(numeric), floor)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


__all__ = [
    "Matrix",
    "Tape",
    "add",
    "concat_cols",
    "concat_rows",
    "constant",
    "cross_entropy",
    "gather_rows",
    "gelu",
    "grad_check",
    "layer_norm",
    "matmul",
    "mean",
    "mul",
    "scale",
    "slice_cols",
    "slice_rows",
    "softmax_rows",
    "transpose",
]
