"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Supports exactly what small actor/critic networks need: matmul, an
elementwise suite, softmax, gather/concat/narrow for assembling attention,
and reductions. The graph is define-by-run: every op that touches a tensor
requiring gradients records its inputs and a vector-Jacobian closure;
``backward`` on a scalar loss walks the recording once in reverse
topological order.

Broadcasting is limited to what the registered ops use (numpy rules in
``add``/``mul``/``sub``, with gradients summed back onto the smaller
operand). No GPU, no higher-order derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, StateError

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (fast inference path)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Dense float64 array plus an optional gradient accumulator.

    ``grad`` is populated by ``backward`` for every reachable tensor with
    ``requires_grad``; it accumulates across backward calls until
    ``zero_grad`` clears it.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_done")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents, vjp) -> Tensor:
    """Wrap an op result, recording the graph edge when gradients are live."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"add shapes incompatible: {a.shape} vs {b.shape}") from None

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise DimensionError(f"sub shapes incompatible: {a.shape} vs {b.shape}") from None

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul shapes incompatible: {a.shape} vs {b.shape}") from None

    def vjp(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _make(out, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0
    factor = np.where(mask, 1.0, slope)
    return _make(a.data * factor, (a,), lambda g: (g * factor,))


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def gather(a: Tensor, index) -> Tensor:
    """Select ``a[b, index[b]]`` per row of a 2-D tensor; returns shape (B,)."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"gather expects a 2-D tensor, got {a.shape}")
    idx = np.asarray(index, dtype=np.intp)
    if idx.ndim != 1 or idx.shape[0] != a.shape[0]:
        raise DimensionError(f"gather index shape {idx.shape} does not match rows of {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ContractError("gather index out of range")
    rows = np.arange(a.shape[0])
    out = a.data[rows, idx]

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[rows, idx] = g
        return (ga,)

    return _make(out, (a,), vjp)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of zero tensors")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat shapes incompatible: {[t.shape for t in tensors]}") from None
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tensors, vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` elements along ``axis``."""
    a = _as_tensor(a)
    if not (0 <= start and length >= 0 and start + length <= a.data.shape[axis]):
        raise DimensionError(
            f"narrow [{start}:{start + length}) out of bounds for axis {axis} of {a.shape}")
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[sl] = g
        return (ga,)

    return _make(a.data[sl], (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(out, (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    if count == 0:
        raise DimensionError("mean over an empty axis")
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted) along ``axis``."""
    a = _as_tensor(a)
    if a.data.shape == () or a.data.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis {axis} of shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _make(out, (a,), vjp)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    """log(softmax(a)) computed stably; exact gradient (I - softmax)."""
    a = _as_tensor(a)
    if a.data.shape == () or a.data.shape[axis] == 0:
        raise DimensionError(f"log_softmax over empty axis {axis} of shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), vjp)


# ---------------------------------------------------------------------------
# backward

def backward(loss: Tensor):
    """Populate ``grad`` on every requires-grad ancestor of a scalar loss.

    Raises ContractError for a non-scalar loss and StateError if the same
    graph output is differentiated twice (rebuild the graph to reset).
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._done:
        raise StateError("backward already ran on this graph output; rebuild the graph")
    loss._done = True
    if not loss.requires_grad:
        return

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        # topological order: g is fully accumulated once we get here
        node.grad = g if node.grad is None else node.grad + g
        if not node._parents:
            continue
        pgrads = node._vjp(g)
        for p, pg in zip(node._parents, pgrads):
            if not p.requires_grad or pg is None:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking

@dataclass
class GradCheckReport:
    """Per-coordinate comparison of analytic vs central-difference gradients."""

    max_rel_error: float
    rel_errors: list  # one array per checked tensor
    passed: bool
    tol: float

    def __str__(self):
        status = "ok" if self.passed else "FAIL"
        return f"grad_check {status}: max relative error {self.max_rel_error:.3e} (tol {self.tol:.1e})"


def grad_check(f, xs, eps: float = 1e-6, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f(xs)`` against central differences.

    ``xs`` is one tensor or a sequence; every entry is perturbed coordinate
    by coordinate. Relative error per coordinate is |a - n| scaled by
    max(1, |a|, |n|), so near-zero gradients are compared absolutely.
    """
    if isinstance(xs, Tensor):
        xs = [xs]
    xs = list(xs)
    for x in xs:
        x.requires_grad = True
        x.zero_grad()
    out = f(*xs)
    backward(out)
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in xs]

    rel_errors = []
    max_err = 0.0
    with no_grad():
        for x, a in zip(xs, analytic):
            flat = x.data.reshape(-1)
            aflat = a.reshape(-1)
            errs = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = float(f(*xs).data)
                flat[i] = orig - eps
                lo = float(f(*xs).data)
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * eps)
                errs[i] = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]), abs(numeric))
            rel_errors.append(errs.reshape(x.data.shape))
            if errs.size:
                max_err = max(max_err, float(errs.max()))
    return GradCheckReport(max_err, rel_errors, max_err < tol, tol)
