"""Polynomial dynamics identification with a learned stability projection.

The classifier treats feature vectors as states of an autonomous system
du/dt = alpha Lambda(u), where Lambda is a fixed monomial basis and
alpha is fit in closed form (the residual is linear in alpha).  A
convex network provides a Lyapunov candidate

    V(u) = sigma_d(g(u) - g(0)) + eta ||u||^2,

and any learned field F is replaced by its projection onto the
halfspace {grad V . F <= -c V}, which makes the exponential-stability
inequality hold by construction rather than by training luck.

grad V is written out analytically as graph operations (not by an inner
backward pass), so losses that contain the projection stay twice
differentiable and train end to end.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConditioningError, ContractError, InvariantError, OptimError, ShapeError
from .networks import Icnn, clamp_icnn
from .optim import AdamState, adam_step

RIDGE_DEFAULT = 1e-6
# keeps 0/0 out of the projection at u = 0, where the numerator is 0 anyway
_GRAD_FLOOR = 1e-30


def _complete_exponents(n, p):
    table = []
    for total in range(p + 1):
        # reversed lexicographic within a degree puts u1 before u2, etc.
        degree = [
            e
            for e in itertools.product(range(total + 1), repeat=n)
            if sum(e) == total
        ]
        degree.sort(reverse=True)
        table.extend(degree)
    return table


def _diagonal_exponents(n, p):
    table = [(0,) * n]
    for i in range(n):
        for k in range(1, p + 1):
            e = [0] * n
            e[i] = k
            table.append(tuple(e))
    return table


@dataclass
class PolyBasis:
    """Monomial table over an n-dimensional state, constant term first."""

    n: int
    p: int
    mode: str
    exponents: list = field(repr=False)

    @classmethod
    def complete(cls, n, p):
        return cls(n, p, "complete", _complete_exponents(n, p))

    @classmethod
    def diagonal(cls, n, p):
        return cls(n, p, "diagonal", _diagonal_exponents(n, p))

    @classmethod
    def make(cls, n, p, mode):
        if mode not in ("complete", "diagonal"):
            raise ContractError(f"unknown basis mode {mode!r}")
        return cls.complete(n, p) if mode == "complete" else cls.diagonal(n, p)

    def __post_init__(self):
        if self.n < 1 or self.p < 0:
            raise ContractError("basis needs n >= 1 and p >= 0")
        if self.mode == "complete":
            expect = math.comb(self.p + self.n, self.p)
        else:
            expect = self.n * self.p + 1
        if len(self.exponents) != expect:
            raise ContractError(
                f"{self.mode} basis over n={self.n}, p={self.p} must have "
                f"{expect} terms, table has {len(self.exponents)}"
            )

    @property
    def M(self):
        return len(self.exponents)

    def eval_many(self, U):
        """Basis matrix (N, M) for a batch of states (N, n)."""
        U = np.atleast_2d(np.asarray(U, dtype=np.float64))
        if U.shape[1] != self.n:
            raise ShapeError(f"states have {U.shape[1]} features, basis expects {self.n}")
        cols = np.empty((U.shape[0], self.M))
        for m, e in enumerate(self.exponents):
            acc = np.ones(U.shape[0])
            for i, k in enumerate(e):
                if k:
                    acc = acc * U[:, i] ** k
            cols[:, m] = acc
        return cols

    def eval(self, u):
        return self.eval_many(np.asarray(u, dtype=np.float64).reshape(1, -1))[0]


def apply_alpha(alpha, U, basis):
    """alpha Lambda(U) as graph operations; U is a tape node (N, n)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (basis.n, basis.M):
        raise ShapeError(f"alpha has shape {alpha.shape}, expected {(basis.n, basis.M)}")
    if basis.mode == "diagonal":
        out = None
        for k in range(1, basis.p + 1):
            idx = [1 + i * basis.p + (k - 1) for i in range(basis.n)]
            term = ad.matmul(ad.power(U, float(k)) if k > 1 else U, alpha[:, idx].T)
            out = term if out is None else ad.add(out, term)
        const = alpha[:, 0].reshape(1, -1)
        return ad.add(out, const) if out is not None else ad.add(ad.mul(U, 0.0), const)
    # complete mode: explicit monomial products (small M by construction)
    n_rows = np.shape(ad.raw(U))[0]
    feats = [ad.cols(U, i, i + 1) for i in range(basis.n)]
    out = None
    for m, e in enumerate(basis.exponents):
        mono = None
        for i, k in enumerate(e):
            if k == 0:
                continue
            f = feats[i] if k == 1 else ad.power(feats[i], float(k))
            mono = f if mono is None else ad.mul(mono, f)
        coeff = alpha[:, m].reshape(1, -1)
        if mono is None:
            term = np.broadcast_to(coeff, (n_rows, basis.n)).copy()
            out = term if out is None else ad.add(out, term)
        else:
            out = ad.matmul(mono, coeff) if out is None else ad.add(out, ad.matmul(mono, coeff))
    return out


def solve_inverse(states, derivs, basis, ridge=RIDGE_DEFAULT):
    """Row-wise least squares fit of alpha to (states, derivatives).

    With ridge = 0 a rank-deficient design is refused instead of being
    silently regularized.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    derivs = np.atleast_2d(np.asarray(derivs, dtype=np.float64))
    if states.shape != derivs.shape:
        raise ShapeError(f"states {states.shape} and derivatives {derivs.shape} disagree")
    phi = basis.eval_many(states)
    if ridge == 0.0:
        sol, _, rank, _ = np.linalg.lstsq(phi, derivs, rcond=None)
        if rank < basis.M:
            raise ConditioningError(
                f"design matrix rank {rank} < {basis.M}; add ridge or more samples"
            )
        return sol.T
    normal = phi.T @ phi + ridge * np.eye(basis.M)
    return np.linalg.solve(normal, phi.T @ derivs).T


@dataclass
class StableDynamics:
    """Fitted field alpha Lambda plus the Lyapunov data used to project it."""

    alpha: np.ndarray
    basis: PolyBasis
    lyap: Icnn
    eta: float = 0.001
    c: float = 0.1

    def __post_init__(self):
        if self.eta <= 0.0:
            raise ContractError("eta must be positive")
        if self.c < 0.0:
            raise ContractError("stability rate c must be nonnegative")
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.shape != (self.basis.n, self.basis.M):
            raise ShapeError(
                f"alpha has shape {self.alpha.shape}, expected {(self.basis.n, self.basis.M)}"
            )

    @classmethod
    def fresh(cls, basis, icnn_width=64, eta=0.001, c=0.1, seed=0):
        return cls(
            alpha=np.zeros((basis.n, basis.M)),
            basis=basis,
            lyap=Icnn(basis.n, width=icnn_width, seed=seed),
            eta=eta,
            c=c,
        )


def _lyapunov_np(dyn, U):
    """Batched V and grad V without a tape; U is (N, n)."""
    lyap = dyn.lyap
    from .autodiff import _srelu_grad_np, _srelu_np

    W0, b0 = lyap.params["W0"], lyap.params["b0"]
    U1, W1 = lyap.params["U1"], lyap.params["W1"]
    d = lyap.d
    z = U @ W0 + b0
    g = _srelu_np(z, d) @ U1 + U @ W1 + lyap.params["b1"]
    g0 = _srelu_np(b0, d) @ U1 + lyap.params["b1"]
    hinge = g - g0
    v = _srelu_np(hinge, d) + dyn.eta * np.sum(U * U, axis=1, keepdims=True)
    grad_g = (_srelu_grad_np(z, d) * U1.T) @ W0.T + W1.T
    grad = _srelu_grad_np(hinge, d) * grad_g + 2.0 * dyn.eta * U
    return v, grad


def lyapunov_value(dyn, u):
    """V(u) and grad V(u) for a single state vector."""
    u = np.asarray(u, dtype=np.float64).reshape(1, -1)
    if u.shape[1] != dyn.basis.n:
        raise ShapeError(f"state has {u.shape[1]} features, expected {dyn.basis.n}")
    v, grad = _lyapunov_np(dyn, u)
    return float(v[0, 0]), grad[0]


def lyapunov_tape(dyn, U, bound):
    """Batched V and grad V as graph nodes; differentiates through both."""
    lyap = dyn.lyap
    d = lyap.d
    z = ad.add(ad.matmul(U, bound["W0"]), bound["b0"])
    g = ad.add(
        ad.add(ad.matmul(ad.smooth_relu(z, d), bound["U1"]), ad.matmul(U, bound["W1"])),
        bound["b1"],
    )
    g0 = ad.add(ad.matmul(ad.smooth_relu(bound["b0"], d), bound["U1"]), bound["b1"])
    hinge = ad.sub(g, g0)
    v = ad.add(
        ad.smooth_relu(hinge, d),
        ad.mul(ad.asum(ad.mul(U, U), axis=1, keepdims=True), dyn.eta),
    )
    grad_g = ad.add(
        ad.matmul(ad.mul(ad.smooth_relu_grad(z, d), ad.transpose(bound["U1"])), ad.transpose(bound["W0"])),
        ad.transpose(bound["W1"]),
    )
    grad = ad.add(ad.mul(ad.smooth_relu_grad(hinge, d), grad_g), ad.mul(U, 2.0 * dyn.eta))
    return v, grad


def project_dynamics(F, u, dyn):
    """Closest field satisfying grad V . F <= -c V at u; F if already inside."""
    F = np.asarray(F, dtype=np.float64).reshape(1, -1)
    u = np.asarray(u, dtype=np.float64).reshape(1, -1)
    v, grad = _lyapunov_np(dyn, u)
    phi = float(np.sum(grad * F)) + dyn.c * float(v[0, 0])
    if phi <= 0.0:
        return F[0].copy()
    denom = float(np.sum(grad * grad))
    if denom == 0.0:
        raise InvariantError("projection needed where grad V vanishes")
    return (F - grad * (phi / denom))[0]


def project_batch_np(F, U, dyn):
    """Vectorized projection for (N, n) batches, numpy only."""
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    v, grad = _lyapunov_np(dyn, U)
    phi = np.sum(grad * F, axis=1, keepdims=True) + dyn.c * v
    hinge = np.maximum(phi, 0.0)
    if np.any((hinge[:, 0] > 0.0) & (np.sum(grad * grad, axis=1) == 0.0)):
        raise InvariantError("projection needed where grad V vanishes")
    denom = np.sum(grad * grad, axis=1, keepdims=True) + _GRAD_FLOOR
    return F - grad * (hinge / denom)


def project_batch_tape(F, U, dyn, bound):
    """Projection as graph nodes, differentiable in every parameter."""
    v, grad = lyapunov_tape(dyn, U, bound)
    phi = ad.add(ad.asum(ad.mul(grad, F), axis=1, keepdims=True), ad.mul(v, dyn.c))
    hinge = ad.relu(phi)
    if np.any(
        (ad.raw(hinge)[:, 0] > 0.0) & (np.sum(ad.raw(grad) ** 2, axis=1) == 0.0)
    ):
        raise InvariantError("projection needed where grad V vanishes")
    denom = ad.add(ad.asum(ad.mul(grad, grad), axis=1, keepdims=True), _GRAD_FLOOR)
    return ad.sub(F, ad.mul(grad, ad.div(hinge, denom)))


def stability_violation(dyn, U, F):
    """max over the batch of grad V . F_proj + c V; <= 0 up to roundoff."""
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    proj = project_batch_np(F, U, dyn)
    v, grad = _lyapunov_np(dyn, U)
    lhs = np.sum(grad * proj, axis=1, keepdims=True) + dyn.c * v
    return float(np.max(lhs))


def _cross_entropy(logits, labels, n_classes):
    z = ad.raw(logits)
    shift = z.max(axis=1, keepdims=True)
    zs = ad.sub(logits, shift)
    denom = ad.matmul(ad.exp(zs), np.ones((n_classes, 1)))
    onehot = np.eye(n_classes)[np.asarray(labels, dtype=int)]
    picked = ad.matmul(ad.mul(zs, onehot), np.ones((n_classes, 1)))
    return ad.amean(ad.sub(ad.log(denom), picked))


def forward_losses(net, dyn, u0, labels, times, tape, bound_net, bound_lyap,
                   use_projected=True):
    """Equation, initial, and task residuals for one batch.

    times has one row of sample instants per example; the equation
    residual is averaged over every (example, instant) pair.  Returns
    (l_eqn, l_ini, l_task) as graph nodes.
    """
    u0 = np.atleast_2d(np.asarray(u0, dtype=np.float64))
    times = np.atleast_2d(np.asarray(times, dtype=np.float64))
    if times.shape[0] != u0.shape[0]:
        raise ShapeError(f"{times.shape[0]} time rows for {u0.shape[0]} examples")
    b, k = times.shape

    s0 = net.apply(tape.const(u0), tape.const(np.zeros((b, 1))), bound_net)
    l_ini = ad.amean(ad.power(ad.sub(s0, u0), 2.0))

    u_rep = np.repeat(u0, k, axis=0)
    t_col = times.reshape(-1, 1)
    t_dual = ad.Dual(tape.const(t_col), tape.const(np.ones_like(t_col)))
    out = net.apply(ad.Dual(tape.const(u_rep), None), t_dual, bound_net)
    state, deriv = out.primal, out.tangent
    if use_projected:
        fld = project_batch_tape(deriv, state, dyn, bound_lyap)
    else:
        fld = deriv
    l_eqn = ad.amean(ad.power(ad.sub(fld, apply_alpha(dyn.alpha, state, dyn.basis)), 2.0))

    s1 = net.apply(tape.const(u0), tape.const(np.ones((b, 1))), bound_net)
    logits = net.logits(s1, bound_net)
    l_task = _cross_entropy(logits, labels, net.n_classes)

    for name, node in (("l_eqn", l_eqn), ("l_ini", l_ini), ("l_task", l_task)):
        if not np.isfinite(ad.raw(node)):
            raise OptimError(
                f"{name} is not finite (batch of {b}, state range "
                f"[{u0.min():.3g}, {u0.max():.3g}])"
            )
    return l_eqn, l_ini, l_task


def pooled_states_and_derivs(net, u0, times):
    """Numpy jets (state, d state/dt) over all (example, instant) pairs."""
    u0 = np.atleast_2d(np.asarray(u0, dtype=np.float64))
    times = np.atleast_2d(np.asarray(times, dtype=np.float64))
    k = times.shape[1]
    u_rep = np.repeat(u0, k, axis=0)
    t_col = times.reshape(-1, 1)
    s = u_rep
    ds = np.zeros_like(s)
    for i in range(net.blocks):
        ws, wt = net.params[f"Ws{i}"], net.params[f"Wt{i}"]
        w2 = net.params[f"W2{i}"]
        pre = s @ ws + t_col @ wt + net.params[f"b{i}"]
        dpre = ds @ ws + np.ones_like(t_col) @ wt
        a = np.tanh(pre)
        s = s + a @ w2
        ds = ds + ((1.0 - a * a) * dpre) @ w2
    return s, ds


def predict_labels(net, u0):
    """Hard class decisions at the readout time t = 1."""
    s1 = net.apply_np(u0, np.ones((np.atleast_2d(u0).shape[0], 1)))
    logits = s1 @ net.params["Wc"] + net.params["bc"]
    return np.argmax(logits, axis=1)


def save_dynamics(dyn, path):
    """JSON checkpoint carrying alpha, the basis descriptor, and V's data."""
    import json

    doc = {
        "kind": "dynamics",
        "version": 1,
        "basis": {"n": dyn.basis.n, "p": dyn.basis.p, "mode": dyn.basis.mode},
        "alpha": dyn.alpha.tolist(),
        "eta": dyn.eta,
        "c": dyn.c,
        "lyap": {
            "meta": dyn.lyap.meta(),
            "arrays": {n: dyn.lyap.params[n].tolist() for n in dyn.lyap.order},
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_dynamics(path):
    import json

    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("kind") != "dynamics":
        raise ContractError(f"not a dynamics checkpoint: kind={doc.get('kind')!r}")
    basis = PolyBasis.make(**doc["basis"])
    lyap = Icnn(**doc["lyap"]["meta"])
    lyap._load_arrays(doc["lyap"])
    lyap.check_nonneg()
    return StableDynamics(
        alpha=np.asarray(doc["alpha"], dtype=np.float64),
        basis=basis,
        lyap=lyap,
        eta=doc["eta"],
        c=doc["c"],
    )


def alternate_train(net, dyn, u0s, labels, epochs, batch_size=128, adam_lr=1e-3,
                    lam=(1.0, 1.0, 1.0), times_per_example=8, ridge=RIDGE_DEFAULT,
                    seed=0, use_projected=True, invariant_points=64, anneal=True,
                    progress=None):
    """Alternating identification: refit alpha, then descend on theta.

    Per epoch, phase A recomputes alpha in closed form from the current
    network's sampled states and time derivatives; phase B runs Adam
    over the network and Lyapunov parameters with alpha frozen, keeping
    the convex network's hidden weights clamped nonnegative.  The step
    size follows a cosine schedule over the whole run unless anneal is
    False, which holds it constant.  Returns a history row per epoch:
    (epoch, ce, l_eqn, l_ini, acc, viol).
    """
    u0s = np.atleast_2d(np.asarray(u0s, dtype=np.float64))
    labels = np.asarray(labels, dtype=int)
    if u0s.shape[0] == 0:
        raise ContractError("training set is empty")
    if u0s.shape[0] != labels.shape[0]:
        raise ShapeError(f"{u0s.shape[0]} states for {labels.shape[0]} labels")
    n_data = u0s.shape[0]
    rng = np.random.default_rng(seed)

    check_u = rng.standard_normal((invariant_points, dyn.basis.n))
    check_f = rng.standard_normal((invariant_points, dyn.basis.n))

    steps_per_epoch = max(1, (n_data + batch_size - 1) // batch_size)
    theta = np.concatenate([net.flatten(), dyn.lyap.flatten()])
    split = net.flatten().size
    t_max = max(1, epochs * steps_per_epoch) if anneal else None
    adam = AdamState(lr=adam_lr, t_max=t_max)
    history = []

    def load(vec):
        net.load_flat(vec[:split])
        dyn.lyap.load_flat(vec[split:])
        clamp_icnn(dyn.lyap)

    for epoch in range(epochs):
        times = rng.uniform(0.0, 1.0, size=(n_data, times_per_example))
        states, derivs = pooled_states_and_derivs(net, u0s, times)
        dyn.alpha = solve_inverse(states, derivs, dyn.basis, ridge=ridge)

        order = rng.permutation(n_data)
        sums = np.zeros(3)
        for step in range(steps_per_epoch):
            pick = order[step * batch_size : (step + 1) * batch_size]
            if pick.size == 0:
                continue
            tape = ad.Tape()
            bound_net = net.bind(tape)
            bound_lyap = dyn.lyap.bind(tape)
            l_eqn, l_ini, l_task = forward_losses(
                net, dyn, u0s[pick], labels[pick], times[pick], tape,
                bound_net, bound_lyap, use_projected=use_projected,
            )
            total = ad.add(
                ad.add(ad.mul(l_eqn, lam[0]), ad.mul(l_ini, lam[1])),
                ad.mul(l_task, lam[2]),
            )
            adj = tape.backward(total)
            grad = np.concatenate(
                [net.grads_flat(adj, bound_net), dyn.lyap.grads_flat(adj, bound_lyap)]
            )
            theta = adam_step(adam, theta, grad)
            load(theta)
            sums += [float(ad.raw(l_eqn)), float(ad.raw(l_ini)), float(ad.raw(l_task))]

        acc = float(np.mean(predict_labels(net, u0s) == labels))
        viol = stability_violation(dyn, check_u, check_f)
        row = (
            epoch,
            sums[2] / steps_per_epoch,
            sums[0] / steps_per_epoch,
            sums[1] / steps_per_epoch,
            acc,
            viol,
        )
        history.append(row)
        if progress is not None:
            progress(row)
    return history
