"""Dense f64 linear algebra with recorded reverse-mode gradients, plus Adam.

Matrices are float64 C-order (row-major) numpy arrays wrapped in `Tensor`
nodes.  Every op below records its inputs and a backward closure on the
output node; the resulting graph is the gradient tape, and `backward()`
replays the closures in reverse topological order.  Leaves constructed
with ``requires_grad=False`` (frozen parameters, constants) never have a
gradient array materialized, which is how the frozen-backbone contract is
enforced at the lowest level.

All computation is float64 and single-threaded numpy, so replaying a
forward pass from identical inputs is bitwise reproducible.  Seeded
initialization uses numpy's default PCG64 generator throughout the
package.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError


class Tensor:
    """A value in the computation graph.

    ``value`` is always a float64 ndarray.  Interior nodes get
    ``requires_grad=True`` automatically when any input requires a
    gradient, so gradient work is skipped entirely on subtrees with no
    trainable leaf.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backprop", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backprop = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.value.shape}, requires_grad={self.requires_grad})"


def _node(value, parents, backprop):
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backprop = backprop
    return out


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        # g may be a view into a larger buffer; own the memory
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def backward(loss: Tensor):
    """Run reverse-mode accumulation from a scalar loss node."""
    if loss.value.shape != ():
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.value.shape}")
    if not np.isfinite(loss.value):
        raise NumericError("loss is not finite")
    # Iterative topological sort; graphs can be a few thousand nodes deep.
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(topo):
        if node._backprop is not None and node.grad is not None:
            node._backprop(node.grad)


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; 2-D operands, or stacked 3-D with equal batch dims."""
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2 or av.ndim != bv.ndim:
        raise ShapeError(f"matmul needs equal-rank >=2-D operands, got {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[-2] or av.shape[:-2] != bv.shape[:-2]:
        raise ShapeError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")

    def backprop(g):
        if a.requires_grad:
            _accum(a, np.matmul(g, bv.swapaxes(-1, -2)))
        if b.requires_grad:
            _accum(b, np.matmul(av.swapaxes(-1, -2), g))

    return _node(np.matmul(av, bv), (a, b), backprop)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-D bias broadcast over leading axes."""
    av, bv = a.value, b.value
    if av.shape == bv.shape:
        def backprop(g):
            _accum(a, g)
            _accum(b, g)
    elif bv.ndim == 1 and av.ndim >= 2 and av.shape[-1] == bv.shape[0]:
        def backprop(g):
            _accum(a, g)
            _accum(b, g.reshape(-1, g.shape[-1]).sum(axis=0))
    else:
        raise ShapeError(f"add shape mismatch: {av.shape} + {bv.shape}")
    return _node(av + bv, (a, b), backprop)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"sub shape mismatch: {a.value.shape} - {b.value.shape}")

    def backprop(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(a.value - b.value, (a, b), backprop)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul shape mismatch: {a.value.shape} * {b.value.shape}")
    av, bv = a.value, b.value

    def backprop(g):
        if a.requires_grad:
            _accum(a, g * bv)
        if b.requires_grad:
            _accum(b, g * av)

    return _node(av * bv, (a, b), backprop)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backprop(g):
        _accum(a, g * c)

    return _node(a.value * c, (a,), backprop)


def add_const(a: Tensor, arr) -> Tensor:
    """Add a constant array (e.g. an additive attention mask); no grad to arr."""
    arr = np.asarray(arr, dtype=np.float64)

    def backprop(g):
        _accum(a, g)

    return _node(a.value + arr, (a,), backprop)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.value.ndim < 2:
        raise ShapeError("transpose needs a >=2-D tensor")

    def backprop(g):
        _accum(a, g.swapaxes(-1, -2))

    return _node(a.value.swapaxes(-1, -2), (a,), backprop)


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backprop(g):
        _accum(a, g.transpose(inv))

    return _node(a.value.transpose(axes), (a,), backprop)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    orig = a.value.shape

    def backprop(g):
        _accum(a, g.reshape(orig))

    return _node(a.value.reshape(shape), (a,), backprop)


def concat(parts, axis=0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of zero tensors")
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backprop(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(p, g[tuple(idx)])

    return _node(np.concatenate([p.value for p in parts], axis=axis), parts, backprop)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice along the second-to-last axis (rows of a matrix)."""
    if a.value.ndim < 2:
        raise ShapeError("slice_rows needs a >=2-D tensor")

    def backprop(g):
        if a.requires_grad:
            full = np.zeros_like(a.value)
            full[..., start:stop, :] = g
            _accum(a, full)

    return _node(a.value[..., start:stop, :], (a,), backprop)


def embed_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of an embedding table by integer id."""
    ids = np.asarray(ids, dtype=np.intp)
    if table.value.ndim != 2:
        raise ShapeError("embedding table must be 2-D")

    def backprop(g):
        if table.requires_grad:
            acc = np.zeros_like(table.value)
            np.add.at(acc, ids, g)
            _accum(table, acc)

    return _node(table.value[ids], (table,), backprop)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction.

    Rows may contain -inf entries (masked logits) as long as at least one
    entry per row is finite.
    """
    av = a.value
    if av.size == 0:
        raise ShapeError("softmax of an empty tensor")
    shifted = av - np.max(av, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def backprop(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        _accum(a, (g - dot) * y)

    return _node(y, (a,), backprop)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximation GELU (documented variant; deterministic via np.tanh)."""
    x = a.value
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def backprop(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dinner
        _accum(a, g * dy)

    return _node(y, (a,), backprop)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = a.value
    d = x.shape[-1]
    if gain.value.shape != (d,) or bias.value.shape != (d,):
        raise ShapeError("layer_norm gain/bias must match the last axis")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.value + bias.value

    def backprop(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, d).sum(axis=0))
        if a.requires_grad:
            gx = g * gain.value
            _accum(a, inv * (gx - gx.mean(axis=-1, keepdims=True)
                             - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return _node(y, (a, gain, bias), backprop)


def mean_all(a: Tensor) -> Tensor:
    n = a.value.size
    if n == 0:
        raise ShapeError("mean of an empty tensor")

    def backprop(g):
        _accum(a, np.full_like(a.value, g / n))

    return _node(np.float64(a.value.mean()), (a,), backprop)


def sum_all(a: Tensor) -> Tensor:
    def backprop(g):
        _accum(a, np.full_like(a.value, g))

    return _node(np.float64(a.value.sum()), (a,), backprop)


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """Bias-corrected Adam moments for one parameter.

    Defaults lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8.
    """

    def __init__(self, shape, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.m = np.zeros(shape, dtype=np.float64)
        self.v = np.zeros(shape, dtype=np.float64)
        self.t = 0
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Apply one bias-corrected Adam update to `param` in place."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ShapeError(
            f"adam_step shape mismatch: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad ** 2
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    param -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return param


# ---------------------------------------------------------------------------
# gradient verification


class GradCheckReport:
    """Worst relative error per parameter from a finite-difference sweep."""

    def __init__(self, per_param, tol):
        self.per_param = dict(per_param)
        self.tol = float(tol)
        self.max_rel_err = max(per_param.values()) if per_param else 0.0
        self.passed = self.max_rel_err < self.tol

    def __repr__(self):
        return f"GradCheckReport(max_rel_err={self.max_rel_err:.3e}, passed={self.passed})"


def grad_check(loss_fn, params, h=1e-5, tol=1e-4, sample_per_param=None, rng=None):
    """Compare reverse-mode gradients against central finite differences.

    `loss_fn()` must rebuild the forward graph from the current parameter
    values and return a scalar Tensor; `params` is a {name: Tensor} map of
    the trainable leaves (frozen parameters are simply not passed, so they
    never appear in the report).  `sample_per_param` limits the sweep to a
    seeded random subset of each parameter's entries; by default every
    scalar is checked.
    """
    if not 1e-6 <= h <= 1e-4:
        raise NumericError(f"step h={h} outside the supported [1e-6, 1e-4] range")
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.value):
        raise NumericError("loss is not finite")
    backward(loss)
    analytic = {
        name: (np.zeros_like(p.value) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }

    report = {}
    for name, p in params.items():
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if sample_per_param is not None and flat.size > sample_per_param:
            r = rng if rng is not None else np.random.default_rng(0)
            idx = r.choice(flat.size, size=sample_per_param, replace=False)
            idx.sort()
        worst = 0.0
        g_flat = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(loss_fn().value)
            flat[i] = orig - h
            f_minus = float(loss_fn().value)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            fd = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(g_flat[i]), abs(fd), 1e-8)
            worst = max(worst, abs(g_flat[i] - fd) / denom)
        report[name] = worst
    return GradCheckReport(report, tol)
