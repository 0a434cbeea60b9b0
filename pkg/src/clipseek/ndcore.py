"""Minimal dense-tensor arithmetic with tape-based reverse-mode differentiation.

Just enough machinery for the fusion and policy networks: vectors/matrices
stored as float64 numpy arrays, a small fixed set of primitives, GRU/LSTM
cells built on top of them, and a named parameter set with an atomic
snapshot/apply protocol for parallel workers.
"""

from __future__ import annotations

import logging
import struct
import threading
from typing import Callable, Iterable

import numpy as np

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CSEEK-CKPT-1\n"


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an operation."""


class Tensor:
    """A dense array node on the autodiff tape.

    ``grad`` accumulates additively across backward passes; callers zero it
    explicitly (``zero_grad``) between optimization steps.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_grad_fns")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fns: tuple[Callable[[np.ndarray], np.ndarray], ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _node(values: np.ndarray, parents: Iterable[Tensor],
          grad_fns: Iterable[Callable]) -> Tensor:
    parents = tuple(parents)
    out = Tensor(values, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._grad_fns = tuple(grad_fns)
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return _node(a.values + b.values, (a, b), (lambda g: g, lambda g: g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    _check_same_shape("mul", a, b)
    av, bv = a.values, b.values
    return _node(av * bv, (a, b), (lambda g: g * bv, lambda g: g * av))


def negate(a: Tensor) -> Tensor:
    return _node(-a.values, (a,), (lambda g: -g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if av.ndim == 0 or bv.ndim == 0 or av.ndim > 2 or bv.ndim > 2:
        raise ShapeError(f"matmul: unsupported ranks {a.shape} and {b.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = av @ bv
    if av.ndim == 2 and bv.ndim == 2:
        fns = (lambda g: g @ bv.T, lambda g: av.T @ g)
    elif av.ndim == 2 and bv.ndim == 1:
        fns = (lambda g: np.outer(g, bv), lambda g: av.T @ g)
    elif av.ndim == 1 and bv.ndim == 2:
        fns = (lambda g: g @ bv.T, lambda g: np.outer(av, g))
    else:  # dot product of two vectors
        fns = (lambda g: g * bv, lambda g: g * av)
    return _node(out, (a, b), fns)


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.values))
    return _node(s, (a,), (lambda g: g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.values)
    return _node(t, (a,), (lambda g: g * (1.0 - t * t),))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    v = a.values
    shifted = v - np.max(v, axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=-1, keepdims=True)

    def grad_fn(g):
        return s * (g - np.sum(g * s, axis=-1, keepdims=True))

    return _node(s, (a,), (grad_fn,))


def log(a: Tensor) -> Tensor:
    av = a.values
    return _node(np.log(av), (a,), (lambda g: g / av,))


def mean(a: Tensor, axis: int = 0) -> Tensor:
    n = a.values.shape[axis]

    def grad_fn(g):
        return np.repeat(np.expand_dims(g / n, axis), n, axis=axis)

    return _node(np.mean(a.values, axis=axis), (a,), (grad_fn,))


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenation over the last axis (vectors only in practice)."""
    na = a.values.shape[-1]
    out = np.concatenate([a.values, b.values], axis=-1)
    return _node(out, (a, b),
                 (lambda g: g[..., :na], lambda g: g[..., na:]))


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, returned as a scalar tensor."""
    shape = a.values.shape

    def grad_fn(g):
        return np.full(shape, g, dtype=np.float64)

    return _node(np.sum(a.values), (a,), (grad_fn,))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (no gradient w.r.t. the constant)."""
    c = float(c)
    return _node(a.values * c, (a,), (lambda g: g * c,))


_PRIMITIVES: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax": softmax,
    "mean": mean,
    "concat": concat,
    "neg": negate,
    "log": log,
    "sum": tsum,
}


def primitive_forward(op_kind: str, *inputs: Tensor, **kwargs) -> Tensor:
    """Dispatch a primitive by name; see ``_PRIMITIVES`` for the op set."""
    try:
        fn = _PRIMITIVES[op_kind]
    except KeyError:
        raise ValueError(f"unknown primitive {op_kind!r}") from None
    return fn(*inputs, **kwargs)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def one_minus(a: Tensor) -> Tensor:
    ones = constant(np.ones_like(a.values))
    return add(ones, negate(a))


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dTensor into ``grad`` of every reachable tensor.

    Adjoints are computed in a per-call table and added to each tensor's
    ``grad`` at the end, so repeating the pass on an intact graph adds the
    same gradient again (exact doubling).
    """
    if loss.values.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.values.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    adjoint: dict[int, np.ndarray] = {id(loss): np.asarray(1.0)}
    for node in reversed(topo):
        g = adjoint.get(id(node))
        if g is None:
            continue
        for parent, fn in zip(node._parents, node._grad_fns):
            if not parent.requires_grad:
                continue
            contrib = fn(g)
            prev = adjoint.get(id(parent))
            adjoint[id(parent)] = contrib if prev is None else prev + contrib

    for node in topo:
        g = adjoint.get(id(node))
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.array(g, dtype=np.float64)
        else:
            node.grad = node.grad + g


# ---------------------------------------------------------------------------
# recurrent cells
# ---------------------------------------------------------------------------

def linear(W: Tensor, x: Tensor, b: Tensor) -> Tensor:
    return add(matmul(W, x), b)


def gru_cell(x_t: Tensor, h_prev: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Standard GRU update: h' = z*h + (1-z)*candidate.

    ``params`` keys: W_z, U_z, b_z, W_r, U_r, b_r, W_n, U_n, b_n.
    """
    z = sigmoid(add(linear(params["W_z"], x_t, params["b_z"]),
                    matmul(params["U_z"], h_prev)))
    r = sigmoid(add(linear(params["W_r"], x_t, params["b_r"]),
                    matmul(params["U_r"], h_prev)))
    n = tanh(add(linear(params["W_n"], x_t, params["b_n"]),
                 matmul(params["U_n"], mul(r, h_prev))))
    return add(mul(z, h_prev), mul(one_minus(z), n))


def lstm_cell(x_t: Tensor, h_prev: Tensor, c_prev: Tensor,
              params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Standard LSTM update with input/forget/output gates.

    ``params`` keys: W_i, U_i, b_i, W_f, U_f, b_f, W_o, U_o, b_o, W_g, U_g, b_g.
    """
    i = sigmoid(add(linear(params["W_i"], x_t, params["b_i"]),
                    matmul(params["U_i"], h_prev)))
    f = sigmoid(add(linear(params["W_f"], x_t, params["b_f"]),
                    matmul(params["U_f"], h_prev)))
    o = sigmoid(add(linear(params["W_o"], x_t, params["b_o"]),
                    matmul(params["U_o"], h_prev)))
    g = tanh(add(linear(params["W_g"], x_t, params["b_g"]),
                 matmul(params["U_g"], h_prev)))
    c_t = add(mul(f, c_prev), mul(i, g))
    h_t = mul(o, tanh(c_t))
    return h_t, c_t


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def init_matrix(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(cols)
    return rng.uniform(-bound, bound, size=(rows, cols))


class ParamSet:
    """Named parameter tensors with a version counter.

    The only object shared across workers. ``snapshot`` and
    ``apply_gradients`` are atomic; everything else assumes a single owner.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.version = 0
        self._lock = threading.Lock()

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(values, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def zero_grads(self) -> None:
        for _, t in self.items():
            t.zero_grad()

    def snapshot(self) -> "ParamSet":
        """Copy all values (and the version) under the lock."""
        with self._lock:
            out = ParamSet()
            for name in self.names():
                out.add(name, self._params[name].values.copy())
            out.version = self.version
            return out

    def apply_gradients(self, grads: dict[str, np.ndarray], lr: float) -> None:
        """p <- p - lr * g for each named gradient, atomically."""
        with self._lock:
            for name, g in grads.items():
                p = self._params[name]
                p.values = p.values - lr * g
            self.version += 1


def sgd_step(params: ParamSet, lr: float) -> None:
    """In-place SGD over gradients accumulated on the parameter tensors."""
    with params._lock:
        for name, p in params.items():
            if p.grad is None:
                logger.debug("sgd_step: no gradient for %s, skipping", name)
                continue
            p.values = p.values - lr * p.grad
        params.version += 1
    for _, p in params.items():
        p.zero_grad()


def save_checkpoint(params: ParamSet, path) -> None:
    """Binary layout: magic, u32 count, then per parameter
    u16 name length, name bytes, u8 ndim, u32 dims, float64 LE values."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        names = params.names()
        f.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode("utf-8")
            v = params[name].values
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", v.ndim))
            for d in v.shape:
                f.write(struct.pack("<I", d))
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> ParamSet:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        (count,) = struct.unpack("<I", f.read(4))
        out = ParamSet()
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            vals = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape)
            out.add(name, np.array(vals))
    return out
