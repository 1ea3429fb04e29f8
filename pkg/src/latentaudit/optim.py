"""First-order minimizers over flat parameter vectors.

``minimize`` drives a scalar objective built from tape ops: LBFGS (two-loop
recursion, backtracking Armijo line search), plain gradient descent ("sgd"),
and Adam. ``AdamState`` is the incremental variant used by the training loops,
which step on a new minibatch objective every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import NonFiniteError, Tensor, grad
from .rng import Rng

ARMIJO_C1 = 1e-4
MAX_HALVINGS = 30


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "lbfgs"  # lbfgs | sgd | adam
    max_iters: int = 100
    lbfgs_history: int = 10
    line_search: str = "backtracking-armijo"
    sgd_lr: float = 1.0
    adam_lr: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_tol: float = 1e-10

    def validate(self) -> None:
        if self.kind not in ("lbfgs", "sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lbfgs_history < 1:
            raise ValueError("lbfgs_history must be >= 1")
        if self.line_search != "backtracking-armijo":
            raise ValueError(f"unsupported line search {self.line_search!r}")
        if self.sgd_lr <= 0 or self.adam_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.max_iters < 0 or self.grad_tol < 0:
            raise ValueError("max_iters and grad_tol must be non-negative")


@dataclass
class MinimizeResult:
    x: Tensor
    trace: list[float]
    f0: float
    iterations: int
    stalled: bool = False

    @property
    def fmin(self) -> float:
        return self.trace[-1] if self.trace else self.f0


def minimize(
    objective: Callable[[Tensor], Tensor],
    x0: Tensor | np.ndarray,
    cfg: OptimizerConfig,
    rng: Rng | None = None,
) -> MinimizeResult:
    """Minimize a differentiable scalar objective from x0.

    The trace holds one objective value per accepted iterate. Stops at
    max_iters, at gradient inf-norm < grad_tol, or (LBFGS) when the line
    search stalls after 30 halvings; the stalled flag then marks that the
    returned point is merely best-so-far. ``rng`` is accepted for signature
    uniformity; all three methods here are deterministic.
    """
    cfg.validate()
    x = np.array(x0.data if isinstance(x0, Tensor) else x0, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("minimize: non-finite x0")
    if cfg.kind == "lbfgs":
        return _lbfgs(objective, x, cfg)
    return _fixed_step(objective, x, cfg)


def _value(objective, x: np.ndarray) -> float:
    return objective(Tensor(x)).item()


def _lbfgs(objective, x: np.ndarray, cfg: OptimizerConfig) -> MinimizeResult:
    f, g = grad(objective, x)
    f0 = f
    trace: list[float] = []
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    stalled = False
    it = 0
    while it < cfg.max_iters:
        if np.max(np.abs(g)) < cfg.grad_tol:
            break
        p = _two_loop_direction(g, s_hist, y_hist, rho_hist)
        dg = float(g @ p)
        if dg >= 0:  # not a descent direction; drop curvature memory
            s_hist.clear()
            y_hist.clear()
            rho_hist.clear()
            p = -g
            dg = -float(g @ g)
            if dg == 0.0:
                break
        step = 1.0
        accepted = False
        fn = f
        for _ in range(MAX_HALVINGS + 1):
            xn = x + step * p
            fn = _value(objective, xn)
            if fn <= f + ARMIJO_C1 * step * dg:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            stalled = True
            break
        fn2, gn = grad(objective, xn)
        s = xn - x
        y = gn - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > cfg.lbfgs_history:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x, f, g = xn, fn2, gn
        trace.append(f)
        it += 1
    return MinimizeResult(Tensor(x), trace, f0, it, stalled)


def _two_loop_direction(g, s_hist, y_hist, rho_hist) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)  # gamma scaling of the initial Hessian
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * float(y @ q)
        q += s * (a - b)
    return -q


def _fixed_step(objective, x: np.ndarray, cfg: OptimizerConfig) -> MinimizeResult:
    f0, g = grad(objective, x)
    trace: list[float] = []
    adam = AdamState(cfg.adam_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    it = 0
    while it < cfg.max_iters:
        if np.max(np.abs(g)) < cfg.grad_tol:
            break
        if cfg.kind == "sgd":
            x = x - cfg.sgd_lr * g
        else:
            x = x.copy()
            adam.step([x], [g])
        f, g = grad(objective, x)
        trace.append(f)
        it += 1
    return MinimizeResult(Tensor(x), trace, f0, it)


class AdamState:
    """In-place Adam over a list of parameter arrays (bias-corrected)."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
