"""Parameterized function families: PINN MLP, residual classifier, ICNN.

Parameters live as plain f64 arrays on the network object.  `bind`
registers them as leaves on a tape and returns the name->Value mapping
that the apply methods consume, so one network can be evaluated on many
tapes while the optimizer mutates the arrays between tapes.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .errors import ContractError, InvariantError, ShapeError


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class _ParamNet:
    """Shared parameter plumbing: ordered arrays, flatten, bind, checkpoints."""

    kind = "net"

    def __init__(self):
        self.params = {}
        self.order = []

    def _add(self, name, array):
        self.params[name] = np.asarray(array, dtype=np.float64)
        self.order.append(name)

    def bind(self, tape):
        return {name: tape.leaf(self.params[name]) for name in self.order}

    def flatten(self):
        return np.concatenate([self.params[n].ravel() for n in self.order])

    def load_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        pos = 0
        for n in self.order:
            a = self.params[n]
            self.params[n] = vec[pos : pos + a.size].reshape(a.shape).copy()
            pos += a.size
        if pos != vec.size:
            raise ShapeError(f"flat vector has {vec.size} entries, network needs {pos}")

    def grads_flat(self, grads, bound):
        out = []
        for n in self.order:
            leaf = bound[n]
            out.append(np.asarray(ad.grad_or_zero(grads, leaf)).ravel())
        return np.concatenate(out)

    def meta(self):
        raise NotImplementedError

    def save(self, path):
        doc = {
            "kind": self.kind,
            "version": 1,
            "meta": self.meta(),
            "arrays": {n: self.params[n].tolist() for n in self.order},
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)

    def _load_arrays(self, doc):
        for n in self.order:
            got = np.asarray(doc["arrays"][n], dtype=np.float64)
            if got.shape != self.params[n].shape:
                raise ShapeError(
                    f"checkpoint array {n!r} has shape {got.shape}, expected {self.params[n].shape}"
                )
            self.params[n] = got


class Mlp(_ParamNet):
    """Fully connected net, tanh hidden layers, identity output."""

    kind = "mlp"

    def __init__(self, widths, seed=0):
        super().__init__()
        if len(widths) < 2:
            raise ContractError("an MLP needs at least input and output widths")
        self.widths = [int(w) for w in widths]
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        for i, (fi, fo) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            self._add(f"W{i}", glorot(rng, fi, fo))
            self._add(f"b{i}", np.zeros((1, fo)))

    def meta(self):
        return {"widths": self.widths, "seed": self.seed}

    def apply(self, X, bound):
        if np.shape(ad.raw(X))[1] != self.widths[0]:
            raise ShapeError(
                f"input has {np.shape(ad.raw(X))[1]} features, first layer takes {self.widths[0]}"
            )
        h = X
        last = len(self.widths) - 2
        for i in range(last + 1):
            h = ad.add(ad.matmul(h, bound[f"W{i}"]), bound[f"b{i}"])
            if i < last:
                h = ad.tanh(h)
        return h

    def apply_np(self, X):
        X = np.asarray(X, dtype=np.float64)
        last = len(self.widths) - 2
        for i in range(last + 1):
            X = X @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i < last:
                X = np.tanh(X)
        return X

    def jet(self, bound, tape, X, tags):
        """Network value plus input-derivative streams in one stacked pass.

        tags is an ordered subset of ("p","x","t","xx","xt") starting with
        the primal; second-order tags need their first-order parents
        present.  Streams ride as stacked row blocks: each hidden layer is
        one matmul plus one fused tanh-jet node, which is what makes the
        derivative-hungry losses affordable.  Returns {tag: (N, out) Value}.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.widths[0]:
            raise ShapeError(f"jet input must be (N, {self.widths[0]})")
        if not tags or tags[0] != "p":
            raise ContractError("jet tags must start with the primal stream")
        seed_col = {"x": 0, "t": 1}
        seeds = []
        for tag in tags:
            if tag == "p":
                seeds.append(X)
            elif tag in seed_col:
                z = np.zeros_like(X)
                z[:, seed_col[tag]] = 1.0
                seeds.append(z)
            else:
                seeds.append(np.zeros_like(X))
        n = X.shape[0]
        H = tape.const(np.vstack(seeds))
        last = len(self.widths) - 2
        for i in range(last):
            H = ad.jet_tanh(ad.matmul(H, bound[f"W{i}"]), bound[f"b{i}"], n, tags)
        Z = ad.matmul(H, bound[f"W{last}"])
        out = {tag: ad.rows(Z, k * n, (k + 1) * n) for k, tag in enumerate(tags)}
        out["p"] = ad.add(out["p"], bound[f"b{last}"])
        return out


class ResidualNet(_ParamNet):
    """Residual blocks over state features with broadcast time input.

    Each block updates s <- s + tanh(s Ws + t Wt + b) W2, so zeroed block
    weights leave the state path an exact identity.  A final linear map
    turns terminal states into class logits.
    """

    kind = "residual"

    def __init__(self, state_dim, n_classes, blocks=4, width=128, seed=0):
        super().__init__()
        self.state_dim = int(state_dim)
        self.n_classes = int(n_classes)
        self.blocks = int(blocks)
        self.width = int(width)
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        n, w = self.state_dim, self.width
        for i in range(self.blocks):
            self._add(f"Ws{i}", glorot(rng, n, w))
            self._add(f"Wt{i}", glorot(rng, 1, w))
            self._add(f"b{i}", np.zeros((1, w)))
            self._add(f"W2{i}", glorot(rng, w, n))
        self._add("Wc", glorot(rng, n, self.n_classes))
        self._add("bc", np.zeros((1, self.n_classes)))

    def meta(self):
        return {
            "state_dim": self.state_dim,
            "n_classes": self.n_classes,
            "blocks": self.blocks,
            "width": self.width,
            "seed": self.seed,
        }

    def apply(self, u, t, bound):
        if np.shape(ad.raw(u))[1] != self.state_dim:
            raise ShapeError(
                f"state has {np.shape(ad.raw(u))[1]} features, expected {self.state_dim}"
            )
        s = u
        for i in range(self.blocks):
            pre = ad.add(
                ad.add(ad.matmul(s, bound[f"Ws{i}"]), ad.matmul(t, bound[f"Wt{i}"])),
                bound[f"b{i}"],
            )
            s = ad.add(s, ad.matmul(ad.tanh(pre), bound[f"W2{i}"]))
        return s

    def logits(self, s, bound):
        return ad.add(ad.matmul(s, bound["Wc"]), bound["bc"])

    def apply_np(self, u, t):
        s = np.asarray(u, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        for i in range(self.blocks):
            pre = s @ self.params[f"Ws{i}"] + t @ self.params[f"Wt{i}"] + self.params[f"b{i}"]
            s = s + np.tanh(pre) @ self.params[f"W2{i}"]
        return s

    def logits_np(self, s):
        return s @ self.params["Wc"] + self.params["bc"]


class Icnn(_ParamNet):
    """Two-layer input-convex scalar network with smooth-ReLU activation.

    g(u) = sigma_d(u W0 + b0) U1 + u W1 + b1, with U1 kept entrywise
    nonnegative so g is convex in u.
    """

    kind = "icnn"

    def __init__(self, input_dim, width=64, d=0.1, seed=0):
        super().__init__()
        self.input_dim = int(input_dim)
        self.width = int(width)
        self.d = float(d)
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self._add("W0", glorot(rng, self.input_dim, self.width))
        self._add("b0", np.zeros((1, self.width)))
        # nonneg init keeps the convexity invariant true from step zero
        self._add("U1", np.abs(glorot(rng, self.width, 1)))
        self._add("W1", glorot(rng, self.input_dim, 1))
        self._add("b1", np.zeros((1, 1)))

    def meta(self):
        return {
            "input_dim": self.input_dim,
            "width": self.width,
            "d": self.d,
            "seed": self.seed,
        }

    def check_nonneg(self):
        if np.any(self.params["U1"] < 0.0):
            raise InvariantError("ICNN hidden-path weights must stay nonnegative")

    def apply(self, u, bound):
        pre = ad.add(ad.matmul(u, bound["W0"]), bound["b0"])
        z = ad.smooth_relu(pre, self.d)
        return ad.add(
            ad.add(ad.matmul(z, bound["U1"]), ad.matmul(u, bound["W1"])), bound["b1"]
        )

    def apply_np(self, u):
        self.check_nonneg()
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        from .autodiff import _srelu_np

        z = _srelu_np(u @ self.params["W0"] + self.params["b0"], self.d)
        return z @ self.params["U1"] + u @ self.params["W1"] + self.params["b1"]


def clamp_icnn(net):
    """Project the hidden-path weights back to the nonnegative orthant."""
    net.params["U1"] = np.maximum(net.params["U1"], 0.0)
    return net


_KINDS = {"mlp": Mlp, "residual": ResidualNet, "icnn": Icnn}


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    cls = _KINDS.get(doc.get("kind"))
    if cls is None:
        raise ContractError(f"unknown checkpoint kind {doc.get('kind')!r}")
    net = cls(**doc["meta"])
    net._load_arrays(doc)
    return net
