"""Reverse-mode tape with nestable forward-mode duals.

The engine records a computation graph on a `Tape` (an arena of `Value`
nodes created in topological order) and computes adjoints by a single
reverse sweep over the arena.  Node data is a Python float or a numpy
f64 array with elementwise semantics; dense layers enter the graph as
single `matmul` nodes so batched evaluation runs on BLAS.

Forward-mode directional derivatives are provided by `Dual`, whose
primal and tangent components are themselves tape nodes.  Duals nest,
which is how second and mixed input derivatives (u_xx, u_xt) are
obtained while everything stays differentiable with respect to any
leaf (network parameters included).
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError, UnsupportedOpError


def _as_data(x):
    if isinstance(x, (bool, int, float, np.floating, np.integer)):
        return float(x)
    a = np.asarray(x, dtype=np.float64)
    return a


class Value:
    """One node of the computation graph.

    Fields mirror the tape contract: an arena `id`, the node `data`, the
    producing `op` tag, parent nodes, and the local partial derivatives
    with respect to each parent (None for ops whose backward rule reads
    parent data directly, e.g. matmul).
    """

    __slots__ = ("tape", "id", "data", "op", "parents", "local_grads", "extra")

    def __init__(self, tape, id_, data, op, parents, local_grads, extra=None):
        self.tape = tape
        self.id = id_
        self.data = data
        self.op = op
        self.parents = parents
        self.local_grads = local_grads
        self.extra = extra

    @property
    def shape(self):
        return np.shape(self.data)

    def item(self):
        return float(np.asarray(self.data).reshape(()))

    def __repr__(self):
        return f"Value(id={self.id}, op={self.op!r}, shape={np.shape(self.data)})"

    # arithmetic delegates to the lifted ops so Value/Dual/const mix freely
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Arena of graph nodes plus the reverse sweep."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []

    def _node(self, data, op, parents=(), local_grads=(), extra=None):
        v = Value(self, len(self.nodes), data, op, parents, local_grads, extra)
        self.nodes.append(v)
        return v

    def leaf(self, data):
        """Record an input node (parameters, collocation coordinates)."""
        return self._node(_as_data(data), "leaf")

    def const(self, data):
        """Record a node that never receives an adjoint of interest."""
        return self._node(_as_data(data), "const")

    def backward(self, root, seed=1.0):
        """Reverse sweep from a scalar root.

        Returns a dict mapping node id to adjoint; leaves' entries are the
        partial derivatives of the root with respect to those leaves.  The
        adjoint state is rebuilt from scratch on every call, so repeated
        calls agree.
        """
        if root.tape is not self:
            raise ContractError("root was recorded on a different tape")
        if np.size(root.data) != 1:
            raise ContractError(
                f"backward needs a scalar root, got shape {np.shape(root.data)}"
            )
        adj = _AdjointBuffer(root.id + 1)
        adj[root.id] = seed * np.ones_like(root.data) if np.ndim(root.data) else float(seed)
        for nid in range(root.id, -1, -1):
            a = adj[nid]
            if a is None:
                continue
            node = self.nodes[nid]
            if node.op in ("leaf", "const"):
                continue
            rule = _BACKWARD.get(node.op)
            if rule is None:
                raise UnsupportedOpError(f"no derivative rule for op {node.op!r}")
            rule(node, a, adj)
        return {i: g for i, g in enumerate(adj) if g is not None}


class _AdjointBuffer(list):
    """Adjoint storage for one reverse sweep.

    `owned` marks buffers allocated by in-place scatter rules; everything
    else may alias another node's adjoint and must be copied before any
    mutation.
    """

    def __init__(self, n):
        super().__init__([None] * n)
        self.owned = set()


def _unbroadcast(g, shape):
    """Sum an adjoint down to the shape of the parent it flows into."""
    if shape == ():
        s = np.sum(g)
        return float(s)
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _accum(adj, parent, g):
    if parent.op == "const":
        return
    contrib = _unbroadcast(g, np.shape(parent.data))
    cur = adj[parent.id]
    adj[parent.id] = contrib if cur is None else cur + contrib


# ---------------------------------------------------------------------------
# backward rules, keyed by op tag


def _bw_elementwise(node, a, adj):
    for parent, lg in zip(node.parents, node.local_grads):
        if parent.op != "const":
            _accum(adj, parent, a * lg)


def _bw_matmul(node, a, adj):
    x, w = node.parents
    if x.op != "const":
        _accum(adj, x, a @ w.data.T)
    if w.op != "const":
        _accum(adj, w, x.data.T @ a)


def _bw_transpose(node, a, adj):
    _accum(adj, node.parents[0], np.asarray(a).T)


def _bw_reshape(node, a, adj):
    (parent,) = node.parents
    _accum(adj, parent, np.asarray(a).reshape(np.shape(parent.data)))


def _bw_sum(node, a, adj):
    (parent,) = node.parents
    axis, keepdims = node.extra
    pshape = np.shape(parent.data)
    if pshape == ():
        _accum(adj, parent, a)
        return
    g = np.asarray(a)
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    _accum(adj, parent, np.broadcast_to(g, pshape))


def _bw_cols(node, a, adj):
    (parent,) = node.parents
    j0, j1 = node.extra
    g = np.zeros_like(parent.data)
    g[:, j0:j1] = a
    _accum(adj, parent, g)


def _bw_rows(node, a, adj):
    (parent,) = node.parents
    if parent.op == "const":
        return
    i0, i1 = node.extra
    cur = adj[parent.id]
    if cur is None:
        cur = np.zeros_like(parent.data)
        adj[parent.id] = cur
        adj.owned.add(parent.id)
    elif parent.id not in adj.owned:
        cur = cur.copy()
        adj[parent.id] = cur
        adj.owned.add(parent.id)
    cur[i0:i1, :] += a


def _bw_vstack(node, a, adj):
    offsets = node.extra
    a = np.asarray(a)
    for parent, i0, i1 in zip(node.parents, offsets[:-1], offsets[1:]):
        _accum(adj, parent, a[i0:i1, :])


_JET_SECOND = {"xx": ("x", "x"), "xt": ("x", "t")}


def _jet_blocks(n, tags):
    return {tag: slice(i * n, (i + 1) * n) for i, tag in enumerate(tags)}


def _bw_jet_tanh(node, g, adj):
    Z, b = node.parents
    n, tags = node.extra
    Zd = Z.data
    bl = _jet_blocks(n, tags)
    A = node.data[bl["p"]]
    g = np.asarray(g)
    S = 1.0 - A * A
    Sp = A * S
    Sp *= -2.0
    dZ = np.empty_like(Zd)
    scratch = np.empty_like(A)
    # first-order blocks: dZ_d = g_d S; primal picks up g_d S' Z_d
    dZp = g[bl["p"]] * S
    for tag in tags[1:]:
        if tag not in _JET_SECOND:
            sl = bl[tag]
            np.multiply(g[sl], S, out=dZ[sl])
            np.multiply(g[sl], Sp, out=scratch)
            scratch *= Zd[sl]
            dZp += scratch
    # second-order blocks add their cross terms onto the first-order slots
    for tag in tags[1:]:
        if tag in _JET_SECOND:
            d1, d2 = _JET_SECOND[tag]
            sl = bl[tag]
            gt = g[sl]
            z1, z2 = Zd[bl[d1]], Zd[bl[d2]]
            np.multiply(gt, S, out=dZ[sl])
            gsp = gt * Sp
            np.multiply(gsp, z2, out=scratch)
            dZ[bl[d1]] += scratch
            np.multiply(gsp, z1, out=scratch)
            dZ[bl[d2]] += scratch
            # d/dZp of (S Z2 + S' Z1 Z2): S' Z2 + S'' Z1 Z2, S'' = (4A^2 - 2S) S
            np.multiply(gsp, Zd[sl], out=scratch)
            dZp += scratch
            spp = A * A
            spp *= 4.0
            spp -= 2.0 * S
            spp *= S
            np.multiply(gt, spp, out=scratch)
            scratch *= z1
            scratch *= z2
            dZp += scratch
    dZ[bl["p"]] = dZp
    _accum(adj, Z, dZ)
    _accum(adj, b, dZp.sum(axis=0, keepdims=True))


_BACKWARD = {
    "add": _bw_elementwise,
    "sub": _bw_elementwise,
    "mul": _bw_elementwise,
    "div": _bw_elementwise,
    "neg": _bw_elementwise,
    "pow": _bw_elementwise,
    "exp": _bw_elementwise,
    "log": _bw_elementwise,
    "tanh": _bw_elementwise,
    "sin": _bw_elementwise,
    "cos": _bw_elementwise,
    "relu": _bw_elementwise,
    "maxc": _bw_elementwise,
    "srelu": _bw_elementwise,
    "srelu_grad": _bw_elementwise,
    "scale": _bw_elementwise,
    "shift": _bw_elementwise,
    "matmul": _bw_matmul,
    "transpose": _bw_transpose,
    "reshape": _bw_reshape,
    "sum": _bw_sum,
    "cols": _bw_cols,
    "rows": _bw_rows,
    "vstack": _bw_vstack,
    "jet_tanh": _bw_jet_tanh,
}


def backward(root, seed=1.0):
    """Module-level alias for `root.tape.backward(root)`."""
    return root.tape.backward(root, seed)


# ---------------------------------------------------------------------------
# lifted operations: accept Dual | Value | number/ndarray


def _is_num(x):
    return isinstance(x, (bool, int, float, np.floating, np.integer, np.ndarray))


def raw(x):
    """Strip Dual/Value wrappers down to plain data."""
    while isinstance(x, Dual):
        x = x.primal
    if isinstance(x, Value):
        return x.data
    return x


def _binary(a, b, fv, fd):
    if isinstance(a, Dual) or isinstance(b, Dual):
        return fd(_to_dual(a), _to_dual(b))
    return fv(a, b)


def add(a, b):
    return _binary(a, b, _v_add, _d_add)


def sub(a, b):
    return _binary(a, b, _v_sub, _d_sub)


def mul(a, b):
    return _binary(a, b, _v_mul, _d_mul)


def div(a, b):
    return _binary(a, b, _v_div, _d_div)


def matmul(a, b):
    return _binary(a, b, _v_matmul, _d_matmul)


def neg(a):
    if isinstance(a, Dual):
        return Dual(neg(a.primal), None if a._t is None else neg(a._t))
    if isinstance(a, Value):
        return a.tape._node(-a.data, "neg", (a,), (-1.0,))
    return -a


def power(a, p):
    if not _is_num(p) or isinstance(p, np.ndarray):
        raise ContractError("power exponent must be a plain number")
    p = float(p)
    if isinstance(a, Dual):
        pr = power(a.primal, p)
        return Dual(pr, None if a._t is None else mul(a._t, mul(power(a.primal, p - 1.0), p)))
    if isinstance(a, Value):
        out = a.data**p
        return a.tape._node(out, "pow", (a,), (p * a.data ** (p - 1.0),))
    return a**p


def _unary(a, np_f, tag, local_f, tangent_scale):
    """Build a unary elementwise op.

    `local_f(x, out)` gives the derivative for the tape rule;
    `tangent_scale(primal_out, primal_in)` gives the factor (an expression)
    multiplying the tangent for the dual rule.
    """
    if isinstance(a, Dual):
        pr = _unary(a.primal, np_f, tag, local_f, tangent_scale)
        if a._t is None:
            return Dual(pr, None)
        return Dual(pr, mul(a._t, tangent_scale(pr, a.primal)))
    if isinstance(a, Value):
        out = np_f(a.data)
        return a.tape._node(out, tag, (a,), (local_f(a.data, out),))
    return np_f(a)


def exp(a):
    return _unary(a, np.exp, "exp", lambda x, out: out, lambda pr, pa: pr)


def log(a):
    return _unary(a, np.log, "log", lambda x, out: 1.0 / x, lambda pr, pa: div(1.0, pa))


def tanh(a):
    return _unary(
        a,
        np.tanh,
        "tanh",
        lambda x, out: 1.0 - out * out,
        lambda pr, pa: sub(1.0, mul(pr, pr)),
    )


def sin(a):
    return _unary(a, np.sin, "sin", lambda x, out: np.cos(x), lambda pr, pa: cos(pa))


def cos(a):
    return _unary(a, np.cos, "cos", lambda x, out: -np.sin(x), lambda pr, pa: neg(sin(pa)))


def relu(a):
    mask = lambda x: (np.asarray(x) > 0.0).astype(np.float64) if np.ndim(x) else float(x > 0.0)
    return _unary(
        a,
        lambda x: np.maximum(x, 0.0),
        "relu",
        lambda x, out: mask(x),
        lambda pr, pa: mask(raw(pa)),
    )


def maximum_const(a, c):
    c = float(c)
    mask = lambda x: (np.asarray(x) > c).astype(np.float64) if np.ndim(x) else float(x > c)
    return _unary(
        a,
        lambda x: np.maximum(x, c),
        "maxc",
        lambda x, out: mask(x),
        lambda pr, pa: mask(raw(pa)),
    )


def _srelu_np(x, d):
    x = np.asarray(x) if np.ndim(x) else x
    return np.where(x <= 0.0, 0.0, np.where(x < d, x * x / (2.0 * d), x - d / 2.0))


def _srelu_grad_np(x, d):
    return np.clip(np.asarray(x, dtype=np.float64) / d, 0.0, 1.0)


def smooth_relu(a, d):
    """C1 convex rectifier: 0 for x<=0, x^2/2d on (0,d), x-d/2 beyond."""
    d = float(d)
    return _unary(
        a,
        lambda x: _srelu_np(x, d),
        "srelu",
        lambda x, out: _srelu_grad_np(x, d),
        lambda pr, pa: smooth_relu_grad(pa, d),
    )


def smooth_relu_grad(a, d):
    """Derivative of `smooth_relu` as a graph op (second derivative a.e.)."""
    d = float(d)
    curv = lambda x: ((np.asarray(x) > 0.0) & (np.asarray(x) < d)).astype(np.float64) / d
    return _unary(
        a,
        lambda x: _srelu_grad_np(x, d),
        "srelu_grad",
        lambda x, out: curv(x),
        lambda pr, pa: curv(raw(pa)),
    )


def transpose(a):
    if isinstance(a, Dual):
        return Dual(transpose(a.primal), None if a._t is None else transpose(a._t))
    if isinstance(a, Value):
        return a.tape._node(np.asarray(a.data).T, "transpose", (a,), ())
    return np.asarray(a).T


def reshape(a, shape):
    if isinstance(a, Dual):
        return Dual(reshape(a.primal, shape), None if a._t is None else reshape(a._t, shape))
    if isinstance(a, Value):
        return a.tape._node(np.reshape(a.data, shape), "reshape", (a,), ())
    return np.reshape(a, shape)


def asum(a, axis=None, keepdims=False):
    if isinstance(a, Dual):
        return Dual(
            asum(a.primal, axis, keepdims),
            None if a._t is None else asum(a._t, axis, keepdims),
        )
    if isinstance(a, Value):
        out = np.sum(a.data, axis=axis, keepdims=keepdims)
        if axis is None and not keepdims:
            out = float(out)
        return a.tape._node(out, "sum", (a,), (), (axis, keepdims))
    return np.sum(a, axis=axis, keepdims=keepdims)


def amean(a, axis=None, keepdims=False):
    n = np.shape(raw(a))
    if axis is None:
        count = 1
        for s in n:
            count *= s
    else:
        count = n[axis]
    return mul(asum(a, axis, keepdims), 1.0 / count)


def cols(a, j0, j1):
    """Column slice [:, j0:j1] of a 2-D node."""
    if isinstance(a, Dual):
        return Dual(cols(a.primal, j0, j1), None if a._t is None else cols(a._t, j0, j1))
    if isinstance(a, Value):
        if np.ndim(a.data) != 2:
            raise ShapeError("cols expects a 2-D node")
        return a.tape._node(np.ascontiguousarray(a.data[:, j0:j1]), "cols", (a,), (), (j0, j1))
    return np.asarray(a)[:, j0:j1]


def rows(a, i0, i1):
    """Row slice [i0:i1, :] of a 2-D node."""
    if isinstance(a, Dual):
        return Dual(rows(a.primal, i0, i1), None if a._t is None else rows(a._t, i0, i1))
    if isinstance(a, Value):
        if np.ndim(a.data) != 2:
            raise ShapeError("rows expects a 2-D node")
        return a.tape._node(np.ascontiguousarray(a.data[i0:i1, :]), "rows", (a,), (), (i0, i1))
    return np.asarray(a)[i0:i1, :]


def jet_tanh(Z, b, n, tags):
    """Fused tanh layer for row-stacked derivative streams.

    Z holds len(tags) vertically stacked (n, w) blocks in tag order
    ("p" first); b is the (1, w) bias applied to the primal block before
    the activation.  Forward applies tanh to the primal and propagates
    first/second-order streams through the chain rule in one node, so a
    whole layer costs one matmul plus this op instead of a dozen
    elementwise tape nodes.  Value-only: this is the training hot path.
    """
    if not (isinstance(Z, Value) and isinstance(b, Value)):
        raise UnsupportedOpError("jet_tanh operates on tape Values")
    if np.ndim(Z.data) != 2 or Z.data.shape[0] != n * len(tags):
        raise ShapeError(f"stacked jet input must have {n * len(tags)} rows")
    for tag in tags:
        if tag in _JET_SECOND:
            d1, d2 = _JET_SECOND[tag]
            if d1 not in tags or d2 not in tags:
                raise ContractError(f"stream {tag!r} needs {d1!r} and {d2!r} present")
    bl = _jet_blocks(n, tags)
    Zd = Z.data
    out = np.empty_like(Zd)
    pre = Zd[bl["p"]] + b.data
    A = np.tanh(pre, out=pre)
    out[bl["p"]] = A
    S = 1.0 - A * A
    Sp = None
    scratch = None
    for tag in tags[1:]:
        sl = bl[tag]
        if tag in _JET_SECOND:
            d1, d2 = _JET_SECOND[tag]
            if Sp is None:
                Sp = A * S
                Sp *= -2.0
                scratch = np.empty_like(A)
            np.multiply(Zd[bl[d1]], Zd[bl[d2]], out=scratch)
            scratch *= Sp
            np.multiply(S, Zd[sl], out=out[sl])
            out[sl] += scratch
        else:
            np.multiply(S, Zd[sl], out=out[sl])
    return Z.tape._node(out, "jet_tanh", (Z, b), (), (n, tuple(tags)))


def vstack(parts):
    """Stack 2-D nodes along rows; the single BLAS-friendly concat the jets use."""
    if any(isinstance(p, Dual) for p in parts):
        ds = [_to_dual(p) for p in parts]
        tangents = [d._t for d in ds]
        if all(t is None for t in tangents):
            tan = None
        else:
            tan = vstack([t if t is not None else _zero_like(d.primal) for d, t in zip(ds, tangents)])
        return Dual(vstack([d.primal for d in ds]), tan)
    vals = [p for p in parts if isinstance(p, Value)]
    if not vals:
        return np.vstack([np.asarray(p) for p in parts])
    tape = vals[0].tape
    nodes = [p if isinstance(p, Value) else tape.const(p) for p in parts]
    for p in nodes:
        if np.ndim(p.data) != 2:
            raise ShapeError("vstack expects 2-D nodes")
    offsets = [0]
    for p in nodes:
        offsets.append(offsets[-1] + p.data.shape[0])
    data = np.vstack([p.data for p in nodes])
    return tape._node(data, "vstack", tuple(nodes), (), offsets)


# Value-Value / Value-const kernels ----------------------------------------


def _tape_of(a, b):
    if isinstance(a, Value):
        return a.tape
    return b.tape


def _v_add(a, b):
    if isinstance(a, Value) and isinstance(b, Value):
        return a.tape._node(a.data + b.data, "add", (a, b), (1.0, 1.0))
    if isinstance(b, Value):
        a, b = b, a
    if not isinstance(a, Value):
        return _as_data(a) + _as_data(b)
    return a.tape._node(a.data + _as_data(b), "shift", (a,), (1.0,))


def _v_sub(a, b):
    if isinstance(a, Value) and isinstance(b, Value):
        return a.tape._node(a.data - b.data, "sub", (a, b), (1.0, -1.0))
    if isinstance(a, Value):
        return a.tape._node(a.data - _as_data(b), "shift", (a,), (1.0,))
    if isinstance(b, Value):
        return b.tape._node(_as_data(a) - b.data, "shift", (b,), (-1.0,))
    return _as_data(a) - _as_data(b)


def _v_mul(a, b):
    if isinstance(a, Value) and isinstance(b, Value):
        return a.tape._node(a.data * b.data, "mul", (a, b), (b.data, a.data))
    if isinstance(b, Value):
        a, b = b, a
    if not isinstance(a, Value):
        return _as_data(a) * _as_data(b)
    c = _as_data(b)
    return a.tape._node(a.data * c, "scale", (a,), (c,))


def _v_div(a, b):
    if isinstance(a, Value) and isinstance(b, Value):
        inv = 1.0 / b.data
        return a.tape._node(a.data * inv, "div", (a, b), (inv, -a.data * inv * inv))
    if isinstance(a, Value):
        c = 1.0 / _as_data(b)
        return a.tape._node(a.data * c, "scale", (a,), (c,))
    if isinstance(b, Value):
        c = _as_data(a)
        inv = 1.0 / b.data
        return b.tape._node(c * inv, "div_r", (b,), (-c * inv * inv,))
    return _as_data(a) / _as_data(b)


_BACKWARD["div_r"] = _bw_elementwise


def _v_matmul(a, b):
    if not (isinstance(a, Value) or isinstance(b, Value)):
        return _as_data(a) @ _as_data(b)
    tape = _tape_of(a, b)
    if not isinstance(a, Value):
        a = tape.const(a)
    if not isinstance(b, Value):
        b = tape.const(b)
    if np.ndim(a.data) != 2 or np.ndim(b.data) != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    return tape._node(a.data @ b.data, "matmul", (a, b), ())


# ---------------------------------------------------------------------------
# forward-mode duals


class Dual:
    """Forward-mode pair (primal, tangent); components live on the tape.

    A None tangent is a structural zero, skipped by every rule; the public
    `tangent` property materializes it as a constant-zero node so the spec
    fields (primal: Value, tangent: Value) always read sensibly.
    """

    __slots__ = ("primal", "_t")

    def __init__(self, primal, tangent=None):
        self.primal = primal
        self._t = tangent

    @property
    def tangent(self):
        if self._t is None:
            return _zero_like(self.primal)
        return self._t

    def __repr__(self):
        return f"Dual(primal={self.primal!r}, tangent={'0' if self._t is None else self._t!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


def _zero_like(p):
    if isinstance(p, Dual):
        return Dual(_zero_like(p.primal), None)
    if isinstance(p, Value):
        z = np.zeros_like(p.data) if np.ndim(p.data) else 0.0
        return p.tape.const(z)
    return 0.0


def _to_dual(x):
    return x if isinstance(x, Dual) else Dual(x, None)


def _t_add(ta, tb):
    if ta is None:
        return tb
    if tb is None:
        return ta
    return add(ta, tb)


def _d_add(a, b):
    return Dual(add(a.primal, b.primal), _t_add(a._t, b._t))


def _d_sub(a, b):
    tb = None if b._t is None else neg(b._t)
    return Dual(sub(a.primal, b.primal), _t_add(a._t, tb))


def _d_mul(a, b):
    ta = None if a._t is None else mul(a._t, b.primal)
    tb = None if b._t is None else mul(b._t, a.primal)
    return Dual(mul(a.primal, b.primal), _t_add(ta, tb))


def _d_div(a, b):
    q = div(a.primal, b.primal)
    if a._t is None and b._t is None:
        return Dual(q, None)
    num = a._t
    if b._t is not None:
        num = _t_add(num, neg(mul(b._t, q)))
    return Dual(q, div(num, b.primal))


def _d_matmul(a, b):
    ta = None if a._t is None else matmul(a._t, b.primal)
    tb = None if b._t is None else matmul(a.primal, b._t)
    return Dual(matmul(a.primal, b.primal), _t_add(ta, tb))


# ---------------------------------------------------------------------------
# directional derivatives of scalar functions


def derivative(f, x, direction, order=1, direction2=None):
    """Exact directional derivative of a scalar function built from lifted ops.

    order 1 seeds a forward pass along `direction`; order 2 nests a second
    forward level along `direction2` (defaults to `direction`, giving the
    pure second directional derivative; pass a different vector for mixed
    partials such as u_xt).
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    d1 = np.atleast_1d(np.asarray(direction, dtype=np.float64))
    if x.shape != d1.shape:
        raise ShapeError("point and direction must have the same length")
    tape = Tape()
    if order == 1:
        args = [Dual(tape.leaf(xi), tape.const(di)) for xi, di in zip(x, d1)]
        out = f(*args)
        if not isinstance(out, Dual) or out._t is None:
            return 0.0
        return float(np.asarray(raw(out._t)).reshape(()))
    if order == 2:
        d2 = d1 if direction2 is None else np.atleast_1d(np.asarray(direction2, dtype=np.float64))
        if d2.shape != x.shape:
            raise ShapeError("second direction must match the point length")
        args = [
            Dual(
                Dual(tape.leaf(xi), tape.const(d1i)),
                Dual(tape.const(d2i), None),
            )
            for xi, d1i, d2i in zip(x, d1, d2)
        ]
        out = f(*args)
        if not isinstance(out, Dual) or out._t is None:
            return 0.0
        inner = out._t
        if not isinstance(inner, Dual) or inner._t is None:
            return 0.0
        return float(np.asarray(raw(inner._t)).reshape(()))
    raise ContractError(f"order must be 1 or 2, got {order!r}")


def grad_or_zero(grads, value):
    """Adjoint of `value` from a backward result, zero-filled when absent."""
    g = grads.get(value.id)
    if g is None:
        return np.zeros_like(value.data) if np.ndim(value.data) else 0.0
    return g
