"""Flat-vector optimizers: bias-corrected Adam and limited-memory BFGS.

Both operate on 1-D f64 parameter vectors; networks move between their
array dict and the flat view via `flatten`/`load_flat`.  The L-BFGS line
search enforces strong Wolfe conditions and then refines the accepted
step by one secant pass toward a stationary point of the line function,
which makes the search exact on quadratics (and therefore equivalent to
conjugate gradients there).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OptimError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t_max: int | None = None  # cosine annealing horizon; None disables
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def current_lr(self):
        if self.t_max is None:
            return self.lr
        frac = min(self.step / self.t_max, 1.0)
        return self.lr * (1.0 + math.cos(math.pi * frac)) / 2.0


def adam_step(state, params, grads):
    """One Adam update; returns the new parameter vector."""
    grads = np.asarray(grads, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if grads.shape != params.shape:
        raise OptimError(f"gradient shape {grads.shape} != parameter shape {params.shape}")
    if not np.all(np.isfinite(grads)):
        bad = int(np.sum(~np.isfinite(grads)))
        raise OptimError(f"non-finite gradient at step {state.step} ({bad} entries)")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    lr = state.current_lr()
    state.step += 1
    t = state.step
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    mhat = state.m / (1.0 - state.beta1**t)
    vhat = state.v / (1.0 - state.beta2**t)
    return params - lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    gnorm: float
    n_iter: int
    converged: bool
    warning: str | None
    trace: list = field(default_factory=list)


def _interp_zoom(phi, a_lo, f_lo, g_lo, a_hi, f_hi, f0, dphi0, c1, c2, max_iter=30):
    """Shrink a bracketing interval until strong Wolfe holds (or give up)."""
    for _ in range(max_iter):
        # quadratic interpolation using (a_lo, f_lo, g_lo) and (a_hi, f_hi)
        denom = f_hi - f_lo - g_lo * (a_hi - a_lo)
        if denom != 0.0 and np.isfinite(denom):
            a = a_lo - 0.5 * g_lo * (a_hi - a_lo) ** 2 / denom
        else:
            a = 0.5 * (a_lo + a_hi)
        lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
        width = hi - lo
        if not (lo + 0.05 * width <= a <= hi - 0.05 * width):
            a = 0.5 * (a_lo + a_hi)
        f, g = phi(a)
        if f > f0 + c1 * a * dphi0 or f >= f_lo:
            a_hi, f_hi = a, f
        else:
            if abs(g) <= -c2 * dphi0:
                return a, f, g, True
            if g * (a_hi - a_lo) >= 0.0:
                a_hi, f_hi = a_lo, f_lo
            a_lo, f_lo, g_lo = a, f, g
        if abs(a_hi - a_lo) < 1e-16:
            break
    return a_lo, f_lo, g_lo, False


def _wolfe_search(phi, f0, dphi0, c1, c2, alpha0=1.0):
    """Strong-Wolfe line search (expand then zoom), plus a secant refinement.

    The refinement evaluates the secant estimate of the 1-D stationary
    point once and keeps it when it also satisfies strong Wolfe with a
    lower value; on a quadratic objective this lands on the exact line
    minimum.
    """
    a_prev, f_prev, g_prev = 0.0, f0, dphi0
    a = alpha0
    result = None
    for i in range(20):
        f, g = phi(a)
        if f > f0 + c1 * a * dphi0 or (i > 0 and f >= f_prev):
            result = _interp_zoom(phi, a_prev, f_prev, g_prev, a, f, f0, dphi0, c1, c2)
            break
        if abs(g) <= -c2 * dphi0:
            result = (a, f, g, True)
            break
        if g >= 0.0:
            result = _interp_zoom(phi, a, f, g, a_prev, f_prev, f0, dphi0, c1, c2)
            break
        a_prev, f_prev, g_prev = a, f, g
        a *= 2.0
    if result is None:
        return a_prev, f_prev, g_prev, a_prev > 0.0
    a, f, g, ok = result
    if ok and g != dphi0:
        a_ref = a - g * a / (g - dphi0)
        if np.isfinite(a_ref) and 0.0 < a_ref < 1e8 * max(a, 1.0):
            f_ref, g_ref = phi(a_ref)
            if (
                f_ref <= f
                and f_ref <= f0 + c1 * a_ref * dphi0
                and abs(g_ref) <= -c2 * dphi0
            ):
                return a_ref, f_ref, g_ref, True
    return a, f, g, ok


def lbfgs_minimize(
    fun,
    x0,
    max_iter=500,
    tol=1e-9,
    memory=50,
    c1=1e-4,
    c2=0.9,
    callback=None,
):
    """Minimize `fun(x) -> (value, grad)` from x0.

    Returns an LbfgsResult; `converged` means the gradient sup-norm
    reached `tol`.  A failed line search stops early with the best point
    found and a warning string, never an exception.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = fun(x)
    f = float(f)
    g = np.asarray(g, dtype=np.float64)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise OptimError("objective or gradient non-finite at the starting point")
    s_hist, y_hist, rho_hist = [], [], []
    warning = None
    trace = [(0, f, float(np.max(np.abs(g))))]
    n_iter = 0
    for k in range(max_iter):
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= tol:
            break
        # two-loop recursion for the search direction
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            gamma = np.dot(s_hist[-1], y_hist[-1]) / np.dot(y_hist[-1], y_hist[-1])
            q *= gamma
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * np.dot(y, q)
            q += (a - b) * s
        d = -q
        dphi0 = float(np.dot(g, d))
        if dphi0 >= 0.0:
            # fall back to steepest descent if curvature info went stale
            d = -g
            dphi0 = float(np.dot(g, d))
            s_hist, y_hist, rho_hist = [], [], []

        cache = {}

        def phi(a):
            if a in cache:
                return cache[a]
            fa, ga = fun(x + a * d)
            pair = (float(fa), float(np.dot(ga, d)))
            cache[a] = pair
            cache[("full", a)] = (float(fa), np.asarray(ga, dtype=np.float64))
            return pair

        a, fa, _, ok = _wolfe_search(phi, f, dphi0, c1, c2)
        if not ok or a <= 0.0 or not np.isfinite(fa):
            warning = f"line search failed at iteration {k}"
            break
        f_new, g_new = cache[("full", a)]
        x_new = x + a * d
        s = x_new - x
        y = g_new - g
        sy = float(np.dot(s, y))
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y) + 1e-300):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        n_iter = k + 1
        trace.append((n_iter, f, float(np.max(np.abs(g)))))
        if callback is not None:
            callback(n_iter, x, f, float(np.max(np.abs(g))))
    gnorm = float(np.max(np.abs(g)))
    return LbfgsResult(
        x=x,
        f=f,
        gnorm=gnorm,
        n_iter=n_iter,
        converged=gnorm <= tol,
        warning=warning,
        trace=trace,
    )
