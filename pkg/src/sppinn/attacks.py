"""White-box L-inf attacks (I-FGSM, PGD) and the robustness sweep.

Attacks operate in raw pixel space and differentiate the full decision
path: pixels -> pooling -> residual flow to t=1 -> logits -> cross
entropy.  Every emitted example is projected into the epsilon ball and
clipped to [0,1] after each step, so the constraints hold exactly
rather than within training tolerance.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, OptimError, ShapeError

FAMILIES = ("ifgsm", "pgd")

# radii used throughout the robustness tables, in [0,1] pixel units
EPS_GRID = (2 / 255, 4 / 255, 6 / 255, 8 / 255)


@dataclass
class AttackConfig:
    family: str
    epsilon: float
    steps: int = 10
    step_size: float = None
    random_start: bool = None
    clip_lo: float = 0.0
    clip_hi: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractError(f"unknown attack family {self.family!r}")
        if self.epsilon < 0.0:
            raise ContractError("epsilon must be nonnegative")
        if self.steps < 1:
            raise ContractError("need at least one attack step")
        if self.step_size is None:
            self.step_size = self.epsilon / 4.0 if self.epsilon > 0.0 else 1.0
        if self.step_size <= 0.0:
            raise ContractError("step size must be positive")
        if self.random_start is None:
            self.random_start = self.family == "pgd"


class PooledClassifier:
    """Pixel-space adapter around a trained residual classifier.

    `pool` maps flattened pixels to state features (see
    `data.pooling_matrix`); decisions are read at t = 1.
    """

    def __init__(self, net, pool):
        self.net = net
        self.pool = np.asarray(pool, dtype=np.float64)
        if self.pool.shape[1] != net.state_dim:
            raise ShapeError(
                f"pooling emits {self.pool.shape[1]} features, "
                f"network takes {net.state_dim}"
            )

    def states(self, x):
        return np.atleast_2d(np.asarray(x, dtype=np.float64)) @ self.pool

    def predict(self, x):
        u0 = self.states(x)
        s1 = self.net.apply_np(u0, np.ones((u0.shape[0], 1)))
        logits = s1 @ self.net.params["Wc"] + self.net.params["bc"]
        return np.argmax(logits, axis=1)

    def loss_grad(self, x, y):
        """Gradient of summed cross entropy with respect to the pixels."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.asarray(y, dtype=int)
        tape = ad.Tape()
        bound = self.net.bind(tape)
        leaf = tape.leaf(x)
        u0 = ad.matmul(leaf, self.pool)
        s1 = self.net.apply(u0, tape.const(np.ones((x.shape[0], 1))), bound)
        logits = self.net.logits(s1, bound)
        z = ad.raw(logits)
        shift = z.max(axis=1, keepdims=True)
        zs = ad.sub(logits, shift)
        k = self.net.n_classes
        denom = ad.matmul(ad.exp(zs), np.ones((k, 1)))
        picked = ad.matmul(ad.mul(zs, np.eye(k)[y]), np.ones((k, 1)))
        ce = ad.asum(ad.sub(ad.log(denom), picked))
        adj = tape.backward(ce)
        return adj[leaf.id]


def attack(model, x, y, cfg, rng=None):
    """Adversarial counterparts of x; exact ball and clip guarantees."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=int)
    if cfg.random_start and rng is None:
        rng = np.random.default_rng(0)
    if cfg.epsilon == 0.0:
        return x.copy()
    adv = x.copy()
    if cfg.random_start:
        adv = x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape)
        adv = np.clip(adv, cfg.clip_lo, cfg.clip_hi)
    for _ in range(cfg.steps):
        grad = model.loss_grad(adv, y)
        if not np.all(np.isfinite(grad)):
            raise OptimError("attack gradient is not finite")
        adv = adv + cfg.step_size * np.sign(grad)
        adv = x + np.clip(adv - x, -cfg.epsilon, cfg.epsilon)
        adv = np.clip(adv, cfg.clip_lo, cfg.clip_hi)
    return adv


def check_attack_constraints(x, adv, cfg, tol=1e-9):
    """Max violation of the ball and clip constraints (0 when clean)."""
    ball = np.max(np.abs(adv - x)) - cfg.epsilon
    lo = cfg.clip_lo - np.min(adv)
    hi = np.max(adv) - cfg.clip_hi
    worst = max(float(ball), float(lo), float(hi))
    return max(worst, 0.0)


def evaluate_robustness(model, x, y, configs, seed=0, batch_size=256):
    """Accuracy rows `(attack, epsilon, accuracy, n_samples, seed)`.

    The first row reports clean accuracy as family "clean", epsilon 0.
    Deterministic for a fixed seed: each config gets its own generator.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=int)
    n = x.shape[0]
    rows = [("clean", 0.0, float(np.mean(model.predict(x) == y)), n, seed)]
    for idx, cfg in enumerate(configs):
        rng = np.random.default_rng(seed * 100003 + idx)
        hits = 0
        for lo in range(0, n, batch_size):
            xb, yb = x[lo : lo + batch_size], y[lo : lo + batch_size]
            adv = attack(model, xb, yb, cfg, rng=rng)
            worst = check_attack_constraints(xb, adv, cfg)
            if worst > 1e-9:
                raise ContractError(f"attack left the feasible set by {worst:.3e}")
            hits += int(np.sum(model.predict(adv) == yb))
        rows.append((cfg.family, cfg.epsilon, hits / n, n, seed))
    return rows
