"""Dense float64 tensors with reverse-mode gradients on an explicit tape.

Tensors are thin wrappers around C-contiguous numpy arrays of rank <= 3.
Operations run eagerly; when a :class:`Graph` is active (``with Graph() as g``)
each operation also records a backward closure on the graph's tape, and
``g.backward(loss)`` replays the tape in reverse to accumulate ``.grad``
buffers.  Without an active graph, operations are forward-only.

All operations are deterministic: identical inputs give bit-identical outputs.
"""

import numpy as np

from . import kernels

MAX_RANK = 3


class ShapeError(ValueError):
    """Operand shapes are incompatible; the message names both shapes."""


class DomainError(ValueError):
    """An input lies outside an operation's numeric domain (e.g. log of 0)."""


class DegenerateRowError(ValueError):
    """A softmax row has no unmasked positions."""


class ContractError(ValueError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class Tensor:
    __slots__ = ("data", "grad")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim:
            arr = np.ascontiguousarray(arr)  # ascontiguousarray would promote 0-d to 1-d
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum {MAX_RANK}")
        self.data = arr
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.shape != ():
            raise ContractError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Graph:
    """Operation tape for one forward pass; single-writer, one backward call."""

    _stack = []

    def __init__(self):
        self._tape = []

    def __enter__(self):
        Graph._stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        Graph._stack.pop()
        return False

    @staticmethod
    def current():
        return Graph._stack[-1] if Graph._stack else None

    def backward(self, loss):
        """Accumulate d(loss)/d(x) into .grad of every tensor on the tape."""
        if not isinstance(loss, Tensor) or loss.data.shape != ():
            raise ContractError("backward expects a scalar Tensor loss")
        _accum(loss, np.ones((), dtype=np.float64))
        for step in reversed(self._tape):
            step()


def backward(graph, loss):
    graph.backward(loss)


def _accum(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _record(out, push):
    """Put a backward closure on the active tape, if any.

    ``push`` receives the output gradient; it is skipped when the output never
    received one (the node was off the path to the loss).
    """
    g = Graph.current()
    if g is None:
        return

    def step():
        if out.grad is not None:
            push(out.grad)

    g._tape.append(step)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class ParamStore:
    """Named parameters, each with one persistent shape-identical grad buffer."""

    def __init__(self):
        self._params = {}

    def add(self, name, array):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(array, dtype=np.float64))
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for t in self._params.values():
            t.grad[...] = 0.0

    def state_dict(self):
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, state):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in state.items():
            t = self._params[name]
            if t.data.shape != arr.shape:
                raise ShapeError(f"parameter {name!r}: stored shape {arr.shape} vs model shape {t.data.shape}")
            t.data[...] = arr


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs two rank-2 tensors, got shapes {a.shape} and {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def push(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    _record(out, push)
    return out


def bmm(a, b):
    """Batched matmul over a shared leading axis: (h,m,k) @ (h,k,n)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 3 or b.data.ndim != 3 or a.data.shape[0] != b.data.shape[0] \
            or a.data.shape[2] != b.data.shape[1]:
        raise ShapeError(f"bmm shapes {a.shape} and {b.shape} are incompatible")
    out = Tensor(a.data @ b.data)

    def push(g):
        _accum(a, g @ b.data.transpose(0, 2, 1))
        _accum(b, a.data.transpose(0, 2, 1) @ g)

    _record(out, push)
    return out


def transpose_last2(x):
    x = _as_tensor(x)
    if x.data.ndim not in (2, 3):
        raise ShapeError(f"transpose_last2 needs rank 2 or 3, got shape {x.shape}")
    axes = (1, 0) if x.data.ndim == 2 else (0, 2, 1)
    out = Tensor(x.data.transpose(axes))

    def push(g):
        _accum(x, g.transpose(axes))

    _record(out, push)
    return out


# ---------------------------------------------------------------------------
# normalizations
# ---------------------------------------------------------------------------

def softmax_rows(x, mask=None):
    """Row softmax with max-subtraction; masked positions come out exactly 0."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs rank 2, got shape {x.shape}")
    if mask is None:
        m = np.ones(x.data.shape, dtype=bool)
    else:
        m = mask.data.astype(bool) if isinstance(mask, Tensor) else np.asarray(mask, dtype=bool)
        if m.shape != x.data.shape:
            raise ShapeError(f"mask shape {m.shape} does not match input shape {x.shape}")
    dead = ~m.any(axis=1)
    if dead.any():
        raise DegenerateRowError(f"fully masked softmax rows at indices {np.flatnonzero(dead).tolist()}")
    s = kernels.softmax_rows(x.data, m)
    out = Tensor(s)

    def push(g):
        _accum(x, kernels.softmax_rows_grad(s, g))

    _record(out, push)
    return out


def layer_norm(x, gain, bias, eps=1e-6):
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm needs a rank-2 input, got shape {x.shape}")
    d = x.data.shape[1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias shapes {gain.shape}/{bias.shape} do not match feature width ({d},)")
    y, xhat, rstd = kernels.layer_norm(x.data, gain.data, bias.data, eps)
    out = Tensor(y)

    def push(g):
        gx, ggain, gbias = kernels.layer_norm_grad(g, xhat, rstd, gain.data)
        _accum(x, gx)
        _accum(gain, ggain)
        _accum(bias, gbias)

    _record(out, push)
    return out


# ---------------------------------------------------------------------------
# elementwise family
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def push(g):
        _accum(a, g)
        _accum(b, g)

    _record(out, push)
    return out


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data - b.data)

    def push(g):
        _accum(a, g)
        _accum(b, -g)

    _record(out, push)
    return out


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)

    def push(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    _record(out, push)
    return out


def exp(x):
    x = _as_tensor(x)
    y = np.exp(x.data)
    out = Tensor(y)

    def push(g):
        _accum(x, g * y)

    _record(out, push)
    return out


def log(x):
    x = _as_tensor(x)
    if x.data.size and x.data.min() <= 0.0:
        raise DomainError(f"log requires strictly positive input, min entry is {x.data.min()}")
    out = Tensor(np.log(x.data))

    def push(g):
        _accum(x, g / x.data)

    _record(out, push)
    return out


def sqrt(x):
    x = _as_tensor(x)
    if x.data.size and x.data.min() <= 0.0:
        raise DomainError(f"sqrt requires strictly positive input, min entry is {x.data.min()}")
    y = np.sqrt(x.data)
    out = Tensor(y)

    def push(g):
        _accum(x, g / (2.0 * y))

    _record(out, push)
    return out


def scale(x, c):
    x = _as_tensor(x)
    c = float(c)
    out = Tensor(x.data * c)

    def push(g):
        _accum(x, g * c)

    _record(out, push)
    return out


_ELEMENTWISE = {}


def elementwise(kind, *args):
    """Dispatch one of the named elementwise operations: add/mul/exp/log/sqrt/scale."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(*args)


_ELEMENTWISE.update(add=add, mul=mul, exp=exp, log=log, sqrt=sqrt, scale=scale)


def clamp(x, lo, hi):
    """Clip to [lo, hi]; gradient passes through the closed interval only."""
    x = _as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    out = Tensor(np.clip(x.data, lo, hi))

    def push(g):
        _accum(x, g * inside)

    _record(out, push)
    return out


def relu(x):
    x = _as_tensor(x)
    pos = x.data > 0.0
    out = Tensor(np.where(pos, x.data, 0.0))

    def push(g):
        _accum(x, g * pos)

    _record(out, push)
    return out


def dropout(x, rate, rng):
    """Inverted dropout; identity when rate is 0."""
    x = _as_tensor(x)
    if rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * keep)

    def push(g):
        _accum(x, g * keep)

    _record(out, push)
    return out


# ---------------------------------------------------------------------------
# structure: concatenation, slicing, reshapes
# ---------------------------------------------------------------------------

def concat_rows(parts):
    """Stack parts along axis 0; returns (tensor, [(start, stop), ...])."""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_rows needs at least one part")
    trailing = {p.data.shape[1:] for p in parts}
    if len(trailing) != 1:
        raise ShapeError(f"concat_rows parts disagree on trailing shape: {sorted(trailing)}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    segments = []
    start = 0
    for p in parts:
        stop = start + p.data.shape[0]
        segments.append((start, stop))
        start = stop

    def push(g):
        for p, (lo, hi) in zip(parts, segments):
            _accum(p, g[lo:hi])

    _record(out, push)
    return out, segments


def slice_rows(x, start, stop):
    x = _as_tensor(x)
    n = x.data.shape[0]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice_rows range [{start}, {stop}) is invalid for {n} rows")
    out = Tensor(x.data[start:stop].copy())

    def push(g):
        buf = np.zeros_like(x.data)
        buf[start:stop] = g
        _accum(x, buf)

    _record(out, push)
    return out


def stack_cols(parts):
    """Stack rank-1 parts of equal length as the columns of a matrix."""
    parts = [_as_tensor(p) for p in parts]
    if not parts or any(p.data.ndim != 1 for p in parts):
        raise ShapeError("stack_cols needs one or more rank-1 tensors")
    lengths = {p.data.shape[0] for p in parts}
    if len(lengths) != 1:
        raise ShapeError(f"stack_cols parts disagree on length: {sorted(lengths)}")
    out = Tensor(np.stack([p.data for p in parts], axis=1))

    def push(g):
        for j, p in enumerate(parts):
            _accum(p, g[:, j])

    _record(out, push)
    return out


def get_col(x, j):
    x = _as_tensor(x)
    if x.data.ndim != 2 or not (0 <= j < x.data.shape[1]):
        raise ShapeError(f"get_col column {j} is invalid for shape {x.shape}")
    out = Tensor(x.data[:, j].copy())

    def push(g):
        buf = np.zeros_like(x.data)
        buf[:, j] = g
        _accum(x, buf)

    _record(out, push)
    return out


def reshape(x, shape):
    x = _as_tensor(x)
    out = Tensor(x.data.reshape(shape))

    def push(g):
        _accum(x, g.reshape(x.data.shape))

    _record(out, push)
    return out


def split_heads(x, n_heads):
    """(n, d) -> (h, n, d/h); head i holds the contiguous feature slice i."""
    x = _as_tensor(x)
    n, d = x.data.shape
    if d % n_heads:
        raise ShapeError(f"feature width {d} is not divisible by {n_heads} heads")
    dh = d // n_heads
    out = Tensor(x.data.reshape(n, n_heads, dh).transpose(1, 0, 2))

    def push(g):
        _accum(x, g.transpose(1, 0, 2).reshape(n, d))

    _record(out, push)
    return out


def merge_heads(x):
    """(h, n, dh) -> (n, h*dh); inverse of split_heads."""
    x = _as_tensor(x)
    h, n, dh = x.data.shape
    out = Tensor(x.data.transpose(1, 0, 2).reshape(n, h * dh))

    def push(g):
        _accum(x, g.reshape(n, h, dh).transpose(1, 0, 2))

    _record(out, push)
    return out


def tile_heads(x, n_heads):
    """(n, m) -> (h, n, m) by repetition; gradient sums over heads."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"tile_heads needs rank 2, got shape {x.shape}")
    out = Tensor(np.broadcast_to(x.data, (n_heads,) + x.data.shape).copy())

    def push(g):
        _accum(x, g.sum(axis=0))

    _record(out, push)
    return out


def add_rowvec(x, v):
    """Add a length-d vector to every row of an (m, d) matrix."""
    x, v = _as_tensor(x), _as_tensor(v)
    if x.data.ndim != 2 or v.data.shape != (x.data.shape[1],):
        raise ShapeError(f"add_rowvec shapes {x.shape} and {v.shape} are incompatible")
    out = Tensor(x.data + v.data[None, :])

    def push(g):
        _accum(x, g)
        _accum(v, g.sum(axis=0))

    _record(out, push)
    return out


def gather_rows(table, ids):
    """Row lookup table[ids]; gradients accumulate per occurrence."""
    table = _as_tensor(table)
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows needs rank-1 indices, got shape {idx.shape}")
    n = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"index out of range for table with {n} rows: {idx.tolist()}")
    out = Tensor(table.data[idx].copy())

    def push(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, idx, g)
        _accum(table, buf)

    _record(out, push)
    return out


# ---------------------------------------------------------------------------
# reductions and losses
# ---------------------------------------------------------------------------

def sum_all(x):
    x = _as_tensor(x)
    out = Tensor(x.data.sum())

    def push(g):
        _accum(x, np.full_like(x.data, float(g)))

    _record(out, push)
    return out


def row_sums(x):
    """Sum an (m, n) matrix over its last axis."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"row_sums needs rank 2, got shape {x.shape}")
    out = Tensor(x.data.sum(axis=1))

    def push(g):
        _accum(x, np.repeat(g[:, None], x.data.shape[1], axis=1))

    _record(out, push)
    return out


def mean_rows(x):
    """Mean of an (m, d) matrix over rows."""
    x = _as_tensor(x)
    if x.data.ndim != 2 or x.data.shape[0] == 0:
        raise ShapeError(f"mean_rows needs a non-empty rank-2 input, got shape {x.shape}")
    m = x.data.shape[0]
    out = Tensor(x.data.mean(axis=0))

    def push(g):
        _accum(x, np.repeat(g[None, :], m, axis=0) / m)

    _record(out, push)
    return out


def cross_entropy_logits(logits, target):
    """Negative log-softmax of ``logits`` at ``target``; scalar output."""
    logits = _as_tensor(logits)
    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy_logits needs rank 1, got shape {logits.shape}")
    k = logits.data.shape[0]
    if not (0 <= target < k):
        raise IndexError(f"target {target} out of range for {k} classes")
    z = logits.data
    zmax = z.max()
    lse = zmax + np.log(np.exp(z - zmax).sum())
    out = Tensor(lse - z[target])

    def push(g):
        p = np.exp(z - lse)
        p[target] -= 1.0
        _accum(logits, float(g) * p)

    _record(out, push)
    return out


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy of rank-1 logits against 0/1 targets."""
    logits = _as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if logits.data.shape != y.shape or logits.data.ndim != 1:
        raise ShapeError(f"bce_with_logits shapes differ: {logits.shape} vs {y.shape}")
    n = y.shape[0]
    if n == 0:
        return Tensor(0.0)
    z = logits.data
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(per.mean())

    def push(g):
        s = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))
        _accum(logits, float(g) * (s - y) / n)

    _record(out, push)
    return out
