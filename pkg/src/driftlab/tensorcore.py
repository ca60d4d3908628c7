"""Dense float64 numerics with reverse-mode automatic differentiation.

The engine is deliberately small: enough to train small multilayer
perceptrons, to differentiate the slope-penalty term used by the dual
critic (which needs gradients of gradients), and to validate everything
against central finite differences.

Design notes
------------
* Every value is a ``numpy`` float64 array wrapped in a :class:`Tensor`
  node. A node remembers the parent nodes it was computed from together
  with one vector-Jacobian-product (vjp) closure per parent. The node
  graph in topological order is the tape: :func:`backward` walks it once
  in reverse, accumulating gradients per node.
* vjp closures are written in terms of Tensor operations, so a gradient
  is itself a differentiable graph. Passing ``build_graph=True`` to
  :func:`backward` therefore supports second derivatives, which the
  critic's slope penalty needs for its own training.
* Randomness comes from :class:`SplitMix64`, a counter-based 64-bit
  generator (algorithm documented on the class) so that golden fixtures
  do not depend on any library's RNG internals.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, NumericError

LEAKY_SLOPE = 0.01  # default leaky-ReLU slope


def _as_array(x):
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation.

    ``parents`` is a tuple of ``(parent, vjp)`` pairs where ``vjp`` maps
    the gradient flowing into this node to the gradient contribution for
    that parent. Leaf tensors (parameters, constants) have no parents.
    """

    __slots__ = ("value", "parents", "op", "name")

    def __init__(self, value, parents=(), op="leaf", name=None):
        self.value = _as_array(value)
        if not np.all(np.isfinite(self.value)):
            raise NumericError(f"non-finite values produced by op '{op}'")
        self.parents = tuple(parents)
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value)

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, expo):
        return power(self, expo)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def constant(x):
    return Tensor(x, op="const")


def parameter(x, name):
    return Tensor(np.array(x, dtype=np.float64, copy=True), op="param", name=name)


def stop_gradient(x):
    """Detach: same value, no parents."""
    x = as_tensor(x)
    return Tensor(x.value, op="stopgrad")


# ---------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------

def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    while grad.value.ndim > len(shape):
        grad = tsum(grad, axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and grad.value.shape[ax] != 1:
            grad = tsum(grad, axis=ax, keepdims=True)
    if grad.value.shape != shape:
        grad = reshape(grad, shape)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value + b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ),
        op="add",
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value - b.value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(mul(g, -1.0), b.value.shape)),
        ),
        op="sub",
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value * b.value,
        parents=(
            (a, lambda g: _unbroadcast(mul(g, b), a.value.shape)),
            (b, lambda g: _unbroadcast(mul(g, a), b.value.shape)),
        ),
        op="mul",
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(
        a.value / b.value,
        parents=(
            (a, lambda g: _unbroadcast(div(g, b), a.value.shape)),
            (b, lambda g: _unbroadcast(mul(mul(g, -1.0), div(out, b)), b.value.shape)),
        ),
        op="div",
    )
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul inner extents differ: {a.value.shape} vs {b.value.shape}"
        )
    return Tensor(
        a.value @ b.value,
        parents=(
            (a, lambda g: matmul(g, transpose(b))),
            (b, lambda g: matmul(transpose(a), g)),
        ),
        op="matmul",
    )


def transpose(a):
    a = as_tensor(a)
    return Tensor(a.value.T, parents=((a, lambda g: transpose(g)),), op="transpose")


def reshape(a, shape):
    a = as_tensor(a)
    orig = a.value.shape
    return Tensor(
        a.value.reshape(shape),
        parents=((a, lambda g: reshape(g, orig)),),
        op="reshape",
    )


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    orig = a.value.shape

    def vjp(g):
        if axis is None:
            return mul(g, constant(np.ones(orig)))
        gg = g
        if not keepdims:
            kshape = list(orig)
            kshape[axis] = 1
            gg = reshape(gg, tuple(kshape))
        return mul(gg, constant(np.ones(orig)))

    return Tensor(a.value.sum(axis=axis, keepdims=keepdims), parents=((a, vjp),), op="sum")


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return div(tsum(a, axis=axis, keepdims=keepdims), float(n))


def exp(a):
    a = as_tensor(a)
    out = Tensor(np.exp(a.value), parents=((a, lambda g: mul(g, out)),), op="exp")
    return out


def log(a):
    a = as_tensor(a)
    return Tensor(np.log(a.value), parents=((a, lambda g: div(g, a)),), op="log")


def sqrt(a):
    a = as_tensor(a)
    out = Tensor(np.sqrt(a.value), parents=((a, lambda g: div(g, mul(out, 2.0))),), op="sqrt")
    return out


def square(a):
    a = as_tensor(a)
    return Tensor(
        a.value * a.value,
        parents=((a, lambda g: mul(g, mul(a, 2.0))),),
        op="square",
    )


def power(a, expo):
    a = as_tensor(a)
    expo = float(expo)
    return Tensor(
        a.value ** expo,
        parents=((a, lambda g: mul(g, mul(power(a, expo - 1.0), expo))),),
        op="pow",
    )


def sigmoid(a):
    a = as_tensor(a)
    v = a.value
    sv = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    out = Tensor(sv, parents=((a, lambda g: mul(g, mul(out, sub(1.0, out)))),), op="sigmoid")
    return out


def softplus(a):
    """log(1 + e^x), computed without overflow."""
    a = as_tensor(a)
    v = a.value
    sv = np.where(v > 30.0, v, np.log1p(np.exp(np.minimum(v, 30.0))))
    return Tensor(sv, parents=((a, lambda g: mul(g, sigmoid(a))),), op="softplus")


def leaky_relu(a, slope=LEAKY_SLOPE):
    a = as_tensor(a)
    mask = constant(np.where(a.value > 0, 1.0, slope))
    return Tensor(
        np.where(a.value > 0, a.value, slope * a.value),
        parents=((a, lambda g: mul(g, mask)),),
        op="leaky_relu",
    )


def logsumexp(a, axis, keepdims=False):
    """Stable log-sum-exp along ``axis``.

    The row max is subtracted as a constant; the value and every
    derivative are unaffected by that choice of shift.
    """
    a = as_tensor(a)
    m = np.max(a.value, axis=axis, keepdims=True)
    shifted = sub(a, constant(m))
    s = log(tsum(exp(shifted), axis=axis, keepdims=True))
    out = add(s, constant(m))
    if not keepdims:
        newshape = list(a.value.shape)
        del newshape[axis]
        out = reshape(out, tuple(newshape))
    return out


def select_rows(a, indices):
    """Select rows of a 2-D tensor. Differentiable via a 0/1 matrix."""
    a = as_tensor(a)
    if a.value.ndim != 2:
        raise DimensionError("select_rows expects a 2-D tensor")
    indices = np.asarray(indices, dtype=int)
    sel = np.zeros((indices.size, a.value.shape[0]))
    sel[np.arange(indices.size), indices] = 1.0
    return matmul(constant(sel), a)


# ---------------------------------------------------------------------
# tape and backward pass
# ---------------------------------------------------------------------

def topo_order(root):
    """Nodes reachable from ``root`` in topological order (parents first)."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


class Tape:
    """Topologically ordered record of the primitives behind one output."""

    def __init__(self, root):
        self.root = root
        self.nodes = topo_order(root)

    def gradients(self, wrt, build_graph=False):
        return backward(self.root, wrt, build_graph=build_graph)


def backward(root, wrt, build_graph=False):
    """Gradients of a scalar ``root`` with respect to each tensor in ``wrt``.

    Returns numpy arrays by default; with ``build_graph=True`` returns
    Tensor nodes so the gradients can be differentiated again. Tensors
    not reachable from ``root`` get exact zeros.
    """
    if isinstance(root, Tape):
        root = root.root
    if root.value.size != 1:
        raise ContractError("backward seed must be scalar")
    grads = {id(root): constant(np.ones_like(root.value))}
    for node in reversed(topo_order(root)):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else add(prev, contrib)
    out = []
    for p in wrt:
        g = grads.get(id(p))
        if g is None:
            g = constant(np.zeros_like(p.value))
        out.append(g if build_graph else g.value)
    return out


def forward(net, x):
    """Run ``net`` on ``x`` and return (output, Tape)."""
    out = net.forward(x)
    return out, Tape(out)


# ---------------------------------------------------------------------
# counter-based RNG
# ---------------------------------------------------------------------

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class SplitMix64:
    """Counter-based 64-bit generator (SplitMix64).

    Output ``i`` for seed ``s`` is ``mix(s + (i+1) * 0x9E3779B97F4A7C15)``
    where ``mix(z)`` is::

        z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
        z ^= z >> 27;  z *= 0x94D049BB133111EB
        z ^= z >> 31

    all modulo 2^64. Uniform doubles take the top 53 bits:
    ``(z >> 11) * 2^-53`` in [0, 1). Normals pair uniforms through the
    Box-Muller transform. The counter advances by the number of raw
    64-bit words consumed, so any sequence can be reproduced from
    (seed, counter) alone.
    """

    def __init__(self, seed):
        self.seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self.counter = 0

    def _raw(self, n):
        with np.errstate(over="ignore"):
            idx = np.arange(1, n + 1, dtype=np.uint64) + np.uint64(self.counter)
            z = self.seed + idx * _GAMMA
            z ^= z >> np.uint64(30)
            z *= _MIX1
            z ^= z >> np.uint64(27)
            z *= _MIX2
            z ^= z >> np.uint64(31)
        self.counter += n
        return z

    def uniform(self, shape=()):
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return u.reshape(shape) if shape else float(u[0])

    def normal(self, shape=()):
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u1 = 1.0 - (self._raw(m) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u2 = (self._raw(m) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])[:n]
        return z.reshape(shape) if shape else float(z[0])

    def integers(self, lo, hi, shape=()):
        """Uniform integers in [lo, hi) by rejection-free modulo (desk-scale use)."""
        if hi <= lo:
            raise ContractError("integers needs hi > lo")
        n = int(np.prod(shape)) if shape else 1
        span = np.uint64(hi - lo)
        v = (self._raw(n) % span).astype(np.int64) + lo
        return v.reshape(shape) if shape else int(v[0])

    def permutation(self, n):
        """Fisher-Yates shuffle of range(n)."""
        perm = np.arange(n)
        if n < 2:
            return perm
        js = self._raw(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(js[n - 1 - i] % np.uint64(i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def spawn(self, salt):
        """Independent stream keyed by (seed, salt). Deterministic."""
        z = SplitMix64(int(self.seed) ^ (0x9E3779B97F4A7C15 * (salt + 1) & 0xFFFFFFFFFFFFFFFF))
        return z


# ---------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------

class Linear:
    """Affine layer x @ w + b with Glorot-uniform init."""

    def __init__(self, n_in, n_out, rng, name):
        bound = np.sqrt(6.0 / (n_in + n_out))
        w0 = (rng.uniform((n_in, n_out)) * 2.0 - 1.0) * bound
        self.w = parameter(w0, name=f"{name}.w")
        self.b = parameter(np.zeros(n_out), name=f"{name}.b")

    def apply(self, x):
        return add(matmul(x, self.w), self.b)


class MLP:
    """Perceptron with leaky-ReLU hidden layers.

    ``head`` selects the output transform: None for raw outputs
    (features, logits) or "sigmoid" for a [0, 1] bounded scalar head.
    """

    def __init__(self, sizes, rng, head=None, slope=LEAKY_SLOPE, name="mlp"):
        if len(sizes) < 2:
            raise ContractError("MLP needs at least input and output sizes")
        self.sizes = list(sizes)
        self.head = head
        self.slope = slope
        self.name = name
        self.layers = [
            Linear(sizes[i], sizes[i + 1], rng, name=f"{name}.layer{i}")
            for i in range(len(sizes) - 1)
        ]

    def forward(self, x):
        h = as_tensor(x)
        if h.value.ndim != 2 or h.value.shape[1] != self.sizes[0]:
            raise DimensionError(
                f"{self.name}: expected input width {self.sizes[0]}, got shape {h.value.shape}"
            )
        for i, layer in enumerate(self.layers):
            h = layer.apply(h)
            if i < len(self.layers) - 1:
                h = leaky_relu(h, self.slope)
        if self.head == "sigmoid":
            h = sigmoid(h)
        return h

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend([layer.w, layer.b])
        return out

    def weights(self):
        return [layer.w for layer in self.layers]

    def set_values(self, values):
        params = self.parameters()
        if len(values) != len(params):
            raise ContractError("parameter count mismatch")
        for p, v in zip(params, values):
            v = np.asarray(v, dtype=np.float64)
            if v.shape != p.value.shape:
                raise DimensionError(f"shape mismatch for {p.name}")
            p.value = v.copy()


# ---------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------

class OptimState:
    """Adam (default) or plain SGD state for a fixed parameter list."""

    def __init__(self, params, lr=1e-3, method="adam", beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.0):
        if method not in ("adam", "sgd"):
            raise ContractError(f"unknown optimizer {method!r}")
        self.params = list(params)
        self.lr = lr
        self.method = method
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]


def step(state, grads):
    """Apply one optimizer update in place. Returns the state."""
    if len(grads) != len(state.params):
        raise ContractError("gradient count mismatch")
    state.t += 1
    for i, (p, g) in enumerate(zip(state.params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.value.shape:
            raise DimensionError(f"gradient shape mismatch for {p.name or i}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {p.name or i}")
        if state.weight_decay:
            g = g + state.weight_decay * p.value
        if state.method == "sgd":
            p.value = p.value - state.lr * g
        else:
            state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
            state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
            mhat = state.m[i] / (1 - state.beta1 ** state.t)
            vhat = state.v[i] / (1 - state.beta2 ** state.t)
            p.value = p.value - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return state


# ---------------------------------------------------------------------
# finite-difference harness
# ---------------------------------------------------------------------

def finite_diff_check(loss_fn, params, eps=1e-5):
    """Max relative disagreement between backprop and central differences.

    ``loss_fn`` must rebuild the loss graph from the current parameter
    values on every call. The relative error for one entry is
    |analytic - central| / max(1, |central|); the max over all entries
    of all parameters is returned.
    """
    analytic = backward(loss_fn(), params)
    worst = 0.0
    for p, g in zip(params, analytic):
        flat_v = p.value.reshape(-1)
        flat_g = np.asarray(g).reshape(-1)
        for j in range(flat_v.size):
            keep = flat_v[j]
            flat_v[j] = keep + eps
            hi = float(loss_fn().value)
            flat_v[j] = keep - eps
            lo = float(loss_fn().value)
            flat_v[j] = keep
            central = (hi - lo) / (2 * eps)
            err = abs(flat_g[j] - central) / max(1.0, abs(central))
            worst = max(worst, err)
    return worst
