"""Minimal reverse-mode autodiff engine on 64-bit numpy arrays.

Define-by-run: every op builds a graph node; ``backward`` walks the graph in
reverse topological order and accumulates gradients. Only the shapes and
broadcasts the backbone actually needs are supported (1-D/2-D arrays, row/
column broadcasting for bias, gamma, and mean-field terms).
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit


class EngineError(Exception):
    pass


class DimensionError(EngineError):
    pass


# ---------------------------------------------------------------------------
# FLOP tracing (single inference pass accounting, see flops.py for the
# analytic counterpart). Conventions: matmul m x k x n costs 2mkn, elementwise
# ops cost one per output element, means cost one per input element, gathers
# and concats are free, layer_norm is charged 6 per element as one fused op.
# ---------------------------------------------------------------------------

class FlopCounter:
    def __init__(self):
        self.total = 0
        self._suspended = 0

    def add(self, n: int):
        if not self._suspended:
            self.total += int(n)


_active_flop_counter: FlopCounter | None = None


class count_flops:
    """Context manager that traces the FLOP cost of ops executed inside."""

    def __init__(self):
        self.counter = FlopCounter()

    def __enter__(self):
        global _active_flop_counter
        self._prev = _active_flop_counter
        _active_flop_counter = self.counter
        return self.counter

    def __exit__(self, *exc):
        global _active_flop_counter
        _active_flop_counter = self._prev
        return False


def _charge(n: int):
    if _active_flop_counter is not None:
        _active_flop_counter.add(n)


class _flop_override:
    """Suspend inner op charges and charge a single fused cost instead."""

    def __init__(self, cost: int):
        self.cost = cost

    def __enter__(self):
        if _active_flop_counter is not None:
            _active_flop_counter._suspended += 1

    def __exit__(self, *exc):
        if _active_flop_counter is not None:
            _active_flop_counter._suspended -= 1
            _active_flop_counter.add(self.cost)
        return False


# ---------------------------------------------------------------------------
# Tensor and graph plumbing
# ---------------------------------------------------------------------------

class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "name")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), grad_fn: Callable | None = None,
                 name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._grad_fn = grad_fn
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar used throughout the model code
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __pow__(self, c):
        return pow_const(self, c)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` along axes that were broadcast."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def backward(loss: Tensor):
    """Reverse-topological gradient accumulation from a scalar loss."""
    if loss.size != 1:
        raise EngineError(f"backward requires a scalar loss, got shape {loss.shape}")

    # iterative topo sort (post-order)
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._grad_fn is None or node.grad is None:
            continue
        node._grad_fn(node.grad)


class Tape:
    """Registry of trainable tensors for one model.

    The op graph itself is recorded implicitly on the tensors (define-by-run);
    the tape's job is to name parameters and guarantee that after ``backward``
    every one of them carries a gradient of its own shape.
    """

    def __init__(self):
        self.parameters: dict[str, Tensor] = {}

    def parameter(self, name: str, data) -> Tensor:
        if name in self.parameters:
            raise EngineError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self.parameters[name] = t
        return t

    def zero_grad(self):
        for p in self.parameters.values():
            p.grad = None

    def backward(self, loss: Tensor):
        backward(loss)
        for p in self.parameters.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, p in self.parameters.items():
            p.data = np.array(state[k], dtype=np.float64).reshape(p.data.shape)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data
    _charge(out_data.size)
    out = Tensor(out_data, parents=(a, b))

    def grad_fn(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.data.shape)
            a.grad = ga if a.grad is None else a.grad + ga
        if b.requires_grad:
            gb = _unbroadcast(g, b.data.shape)
            b.grad = gb if b.grad is None else b.grad + gb

    out._grad_fn = grad_fn
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data
    _charge(out_data.size)
    out = Tensor(out_data, parents=(a, b))

    def grad_fn(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.data.shape)
            a.grad = ga if a.grad is None else a.grad + ga
        if b.requires_grad:
            gb = _unbroadcast(-g, b.data.shape)
            b.grad = gb if b.grad is None else b.grad + gb

    out._grad_fn = grad_fn
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data
    _charge(out_data.size)
    out = Tensor(out_data, parents=(a, b))

    def grad_fn(g):
        if a.requires_grad:
            ga = _unbroadcast(g * b.data, a.data.shape)
            a.grad = ga if a.grad is None else a.grad + ga
        if b.requires_grad:
            gb = _unbroadcast(g * a.data, b.data.shape)
            b.grad = gb if b.grad is None else b.grad + gb

    out._grad_fn = grad_fn
    return out


def pow_const(a: Tensor, c: float) -> Tensor:
    out_data = a.data ** c
    _charge(out_data.size)
    out = Tensor(out_data, parents=(a,))

    def grad_fn(g):
        if a.requires_grad:
            ga = g * c * a.data ** (c - 1.0)
            a.grad = ga if a.grad is None else a.grad + ga

    out._grad_fn = grad_fn
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")
    m, k = a.data.shape
    n = b.data.shape[1]
    _charge(2 * m * k * n)
    out = Tensor(a.data @ b.data, parents=(a, b))

    def grad_fn(g):
        if a.requires_grad:
            ga = g @ b.data.T
            a.grad = ga if a.grad is None else a.grad + ga
        if b.requires_grad:
            gb = a.data.T @ g
            b.grad = gb if b.grad is None else b.grad + gb

    out._grad_fn = grad_fn
    return out


_kink_margin: list | None = None


class monitor_kinks:
    """Track the closest approach of any ReLU argument to its kink at 0;
    lets gradient checks reject samples too close to nondifferentiability."""

    def __enter__(self):
        global _kink_margin
        self._prev = _kink_margin
        _kink_margin = [np.inf]
        return self

    def __exit__(self, *exc):
        global _kink_margin
        self.margin = _kink_margin[0]
        _kink_margin = self._prev
        return False


def relu(a: Tensor) -> Tensor:
    if _kink_margin is not None and a.data.size:
        _kink_margin[0] = min(_kink_margin[0],
                              float(np.min(np.abs(a.data))))
    out_data = np.maximum(0.0, a.data)
    _charge(out_data.size)
    out = Tensor(out_data, parents=(a,))

    def grad_fn(g):
        if a.requires_grad:
            ga = g * (a.data > 0.0)  # subgradient at exactly 0 is 0
            a.grad = ga if a.grad is None else a.grad + ga

    out._grad_fn = grad_fn
    return out


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact erf form x * Phi(x), not the tanh approximation."""
    phi_cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    _charge(a.data.size)
    out = Tensor(a.data * phi_cdf, parents=(a,))

    def grad_fn(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
            ga = g * (phi_cdf + a.data * pdf)
            a.grad = ga if a.grad is None else a.grad + ga

    out._grad_fn = grad_fn
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)
    _charge(a.data.size)
    out = Tensor(s, parents=(a,))

    def grad_fn(g):
        if a.requires_grad:
            ga = g * s * (1.0 - s)
            a.grad = ga if a.grad is None else a.grad + ga

    out._grad_fn = grad_fn
    return out


def softplus(a: Tensor) -> Tensor:
    out_data = np.logaddexp(0.0, a.data)
    _charge(a.data.size)
    out = Tensor(out_data, parents=(a,))

    def grad_fn(g):
        if a.requires_grad:
            ga = g * expit(a.data)
            a.grad = ga if a.grad is None else a.grad + ga

    out._grad_fn = grad_fn
    return out


def mean_last_axis(a: Tensor) -> Tensor:
    d = a.data.shape[-1]
    if d < 1:
        raise DimensionError("mean_last_axis needs at least one element")
    _charge(a.data.size)
    out = Tensor(a.data.mean(axis=-1, keepdims=True), parents=(a,))

    def grad_fn(g):
        if a.requires_grad:
            ga = np.broadcast_to(g / d, a.data.shape).copy()
            a.grad = ga if a.grad is None else a.grad + ga

    out._grad_fn = grad_fn
    return out


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    _charge(n)
    out = Tensor(np.array(a.data.mean()), parents=(a,))

    def grad_fn(g):
        if a.requires_grad:
            ga = np.full_like(a.data, float(g) / n)
            a.grad = ga if a.grad is None else a.grad + ga

    out._grad_fn = grad_fn
    return out


def sum_all(a: Tensor) -> Tensor:
    _charge(a.data.size)
    out = Tensor(np.array(a.data.sum()), parents=(a,))

    def grad_fn(g):
        if a.requires_grad:
            ga = np.full_like(a.data, float(g))
            a.grad = ga if a.grad is None else a.grad + ga

    out._grad_fn = grad_fn
    return out


def concat_last_axis(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_last_axis needs at least one part")
    lead = parts[0].data.shape[:-1]
    for p in parts:
        if p.data.shape[:-1] != lead:
            raise DimensionError(
                f"concat leading-shape mismatch: {p.data.shape[:-1]} vs {lead}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=-1),
                 parents=tuple(parts))
    widths = [p.data.shape[-1] for p in parts]

    def grad_fn(g):
        off = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                gp = g[..., off:off + w]
                p.grad = gp.copy() if p.grad is None else p.grad + gp
            off += w

    out._grad_fn = grad_fn
    return out


def slice_last_axis(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[..., start:stop], parents=(a,))

    def grad_fn(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[..., start:stop] = g
            a.grad = ga if a.grad is None else a.grad + ga

    out._grad_fn = grad_fn
    return out


def gather_columns(a: Tensor, indices: Sequence[int]) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError("gather_columns expects a 2-D tensor")
    d_in = a.data.shape[1]
    idx = np.asarray(indices, dtype=np.intp)
    for i in indices:
        if not (0 <= int(i) < d_in):
            raise IndexError(f"gather_columns index {int(i)} out of range [0, {d_in})")
    # zero-FLOP gather: no charge
    out = Tensor(a.data[:, idx], parents=(a,))

    def grad_fn(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, (slice(None), idx), g)
            a.grad = ga if a.grad is None else a.grad + ga

    out._grad_fn = grad_fn
    return out


def element(a: Tensor, i: int) -> Tensor:
    """Scalar view of element i of a 1-D tensor (with scatter gradient)."""
    if a.data.ndim != 1:
        raise DimensionError("element expects a 1-D tensor")
    out = Tensor(np.array(a.data[i]), parents=(a,))

    def grad_fn(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[i] = float(g)
            a.grad = ga if a.grad is None else a.grad + ga

    out._grad_fn = grad_fn
    return out


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup table[ids]; gradient scatters additively back to rows."""
    ids = np.asarray(ids, dtype=np.intp)
    if ids.min(initial=0) < 0 or (ids.size and ids.max() >= table.data.shape[0]):
        raise IndexError("embedding id out of vocabulary range")
    out = Tensor(table.data[ids], parents=(table,))

    def grad_fn(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            table.grad = gt if table.grad is None else table.grad + gt

    out._grad_fn = grad_fn
    return out


# ---------------------------------------------------------------------------
# Composites
# ---------------------------------------------------------------------------

LAYER_NORM_EPS = 1e-5


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Standardize along the last axis, then affine. eps keeps the constant
    row case finite. Charged as one fused op of 6 FLOPs per element."""
    if eps <= 0:
        raise EngineError("layer_norm eps must be positive")
    with _flop_override(6 * x.data.size):
        mu = mean_last_axis(x)
        xc = sub(x, mu)
        var = mean_last_axis(mul(xc, xc))
        inv = pow_const(add(var, _as_tensor(eps)), -0.5)
        y = mul(xc, inv)
        return add(mul(y, scale), shift)


def sigmoid_bce(logits: Tensor, labels: Tensor) -> Tensor:
    """Mean binary cross-entropy in the stable log-sum-exp form:
    mean(softplus(z) - z*y)."""
    lab = labels.data
    if not np.all((lab == 0.0) | (lab == 1.0)):
        raise EngineError("sigmoid_bce labels must be 0 or 1")
    return mean_all(sub(softplus(logits), mul(logits, labels)))


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

def finite_diff_check(f: Callable[[], Tensor], wrt: Sequence[Tensor],
                      step: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must rebuild the graph from the current ``.data`` of the tensors in
    ``wrt`` on every call.
    """
    if step <= 0:
        raise EngineError("finite_diff_check step must be positive")
    for t in wrt:
        t.grad = None
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in wrt]

    worst = 0.0
    for t, a in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f().item()
            flat[i] = orig - step
            lo = f().item()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            denom = max(abs(numeric), abs(aflat[i]), 1e-8)
            worst = max(worst, abs(numeric - aflat[i]) / denom)
    return worst
