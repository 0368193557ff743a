"""Derivative-free minimization over products of scaled simplices.

The feasible set is ``{x >= 0, sum of each commodity block = nu_c}``.  Local
search runs scipy's SLSQP with the block equalities as linear constraints
(``method="slsqp"``), Nelder-Mead on the projected objective
(``method="simplex"``), or a pairwise mass-exchange pattern search
(``method="exchange"``) whose moves stay feasible by construction.  Basin
hopping wraps any of them.

Objectives are plain callables ``f(x) -> float``.  An objective may also
provide ``exchange_search(x, totals, commodity, step, tol, max_evals) ->
LocalResult``; the exchange method then delegates to it (the
game objectives use this to run the search in compiled code).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

SLSQP_MAX_ITER = 300


@dataclass(frozen=True)
class OptimizerConfig:
    hop_count: int = 100
    hop_step: float = 0.1
    temperature: float = 1e-4
    local_tol: float = 1e-10
    local_max_evals: int = 50_000
    seed: int = 0
    method: str = "exchange"
    patience: int | None = None

    def __post_init__(self):
        for name in ("hop_step", "temperature", "local_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.hop_count < 0 or self.local_max_evals < 1:
            raise ValueError("hop_count must be >= 0 and local_max_evals >= 1")
        if self.method not in ("exchange", "simplex", "slsqp"):
            raise ValueError(f"unknown local method {self.method!r}")

    @classmethod
    def defaults(cls, nu: float = 1.0, **overrides) -> "OptimizerConfig":
        """Defaults with the hop step scaled to the demand ``nu``."""
        overrides.setdefault("hop_step", 0.1 * nu)
        return cls(**overrides)

    def with_seed(self, seed: int) -> "OptimizerConfig":
        return replace(self, seed=int(seed))


def _as_blocks(x, totals, commodity):
    x = np.asarray(x, dtype=float)
    totals = np.atleast_1d(np.asarray(totals, dtype=float))
    if commodity is None:
        commodity = np.zeros(len(x), dtype=np.int64)
    commodity = np.asarray(commodity)
    if np.any(totals <= 0):
        raise ValueError(f"block totals must be positive, got {totals}")
    if commodity.shape != x.shape or (len(x) and commodity.max() >= len(totals)):
        raise ValueError("block labels do not match x / totals")
    return x, totals, commodity


def project_simplex(v, z: float = 1.0) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{w >= 0, sum(w) = z}`` (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - z
    ind = np.arange(1, len(v) + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    w = np.maximum(v - theta, 0.0)
    # remove rounding drift so the block sum is exact to ~1 ulp
    s = w.sum()
    if s > 0 and s != z:
        k = int(np.argmax(w))
        w[k] = max(0.0, w[k] + (z - s))
    return w


def project_feasible(x, totals, commodity=None) -> np.ndarray:
    """Project each commodity block onto its scaled simplex."""
    x, totals, commodity = _as_blocks(x, totals, commodity)
    out = np.empty_like(x)
    for c, nu in enumerate(totals):
        idx = np.flatnonzero(commodity == c)
        if len(idx):
            out[idx] = project_simplex(x[idx], nu)
    return out


@dataclass
class LocalResult:
    x: np.ndarray
    f: float
    evaluations: int
    converged: bool


class _Counted:
    def __init__(self, fun, max_evals):
        self.fun = fun
        self.max_evals = max_evals
        self.n = 0

    def __call__(self, x):
        self.n += 1
        return float(self.fun(x))

    @property
    def exhausted(self):
        return self.n >= self.max_evals


def _exchange_search(fun, x, totals, commodity, step, tol, max_evals) -> LocalResult:
    """Pattern search over feasible moves ``x_j -> x_k`` within each block.

    A successful move is repeated with doubled length; a pass without any
    success halves the step.  Stops when the step drops below ``tol``.
    """
    f_eval = _Counted(fun, max_evals)
    x = x.copy()
    f = f_eval(x)
    blocks = [np.flatnonzero(commodity == c) for c in range(len(totals))]
    h = float(step)
    while h >= tol and not f_eval.exhausted:
        improved = False
        for idx in blocks:
            if len(idx) < 2:
                continue
            for j in idx:
                for k in idx:
                    if k == j or x[j] <= 0.0:
                        continue
                    t = min(h, x[j])
                    while True:
                        trial = x.copy()
                        trial[j] -= t
                        trial[k] += t
                        if trial[j] < 0.0:
                            trial[j] = 0.0
                        ft = f_eval(trial)
                        if ft < f:
                            x, f = trial, ft
                            improved = True
                            if x[j] <= 0.0 or f_eval.exhausted:
                                break
                            t = min(2.0 * t, x[j])
                        else:
                            break
                    if f_eval.exhausted:
                        return LocalResult(x, f, f_eval.n, False)
        if not improved:
            h *= 0.5
    return LocalResult(x, f, f_eval.n, h < tol)


def _simplex_search(fun, x, totals, commodity, step, tol, max_evals) -> LocalResult:
    f_eval = _Counted(lambda z: fun(project_feasible(z, totals, commodity)), max_evals)
    n = len(x)
    if n == 0:
        return LocalResult(x, f_eval(x), 1, True)
    simplex = np.vstack([x] + [x + step * np.eye(n)[i] for i in range(n)])
    res = minimize(f_eval, x, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": tol, "fatol": 0.0,
                            "maxfev": max_evals, "adaptive": n > 4})
    best = project_feasible(res.x, totals, commodity)
    return LocalResult(best, float(fun(best)), f_eval.n + 1, bool(res.success))


def _slsqp_search(fun, x, totals, commodity, step, tol, max_evals) -> LocalResult:
    f_eval = _Counted(fun, max_evals)
    rows = np.zeros((len(totals), len(x)))
    rows[commodity, np.arange(len(x))] = 1.0
    cons = {"type": "eq", "fun": lambda z: rows @ z - totals, "jac": lambda z: rows}
    res = minimize(f_eval, x, method="SLSQP", bounds=[(0.0, None)] * len(x), constraints=[cons],
                   options={"ftol": max(tol * 1e-2, 1e-13), "maxiter": max(1, min(SLSQP_MAX_ITER, max_evals // (len(x) + 2)))})
    best = project_feasible(res.x, totals, commodity)
    f_best = float(fun(best))
    f_start = float(fun(x))
    if f_start < f_best:
        best, f_best = x, f_start
    return LocalResult(best, f_best, f_eval.n + 2, bool(res.success))


def local_minimize(objective, x0, totals, commodity=None, config: OptimizerConfig | None = None,
                   step: float | None = None) -> LocalResult:
    """Derivative-free local minimization from the projection of ``x0``.

    The returned point is always feasible; ``converged`` is false when the
    evaluation cap was hit first.
    """
    config = config or OptimizerConfig()
    x0, totals, commodity = _as_blocks(x0, totals, commodity)
    x = project_feasible(x0, totals, commodity)
    step = config.hop_step if step is None else step
    if config.method == "simplex":
        return _simplex_search(objective, x, totals, commodity, step, config.local_tol, config.local_max_evals)
    if config.method == "slsqp":
        return _slsqp_search(objective, x, totals, commodity, step, config.local_tol, config.local_max_evals)
    compiled = getattr(objective, "exchange_search", None)
    if compiled is not None:
        return compiled(x, totals, commodity, step, config.local_tol, config.local_max_evals)
    return _exchange_search(objective, x, totals, commodity, step, config.local_tol, config.local_max_evals)


@dataclass
class HopTrace:
    """Per-hop record: trial value, accepted flag and best-so-far value."""

    trial: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    best: list = field(default_factory=list)
    evaluations: int = 0

    def __len__(self):
        return len(self.trial)


def basin_hop(objective, x0, totals, commodity=None, config: OptimizerConfig | None = None,
              target: float | None = None):
    """Basin hopping with Metropolis acceptance.

    Each hop perturbs the current point with Gaussian noise of scale
    ``hop_step``, projects, and runs :func:`local_minimize`.  Returns the best
    point seen, its value and a :class:`HopTrace`.  When ``target`` is given
    the search stops once the best value reaches it.  With ``patience`` set,
    it also stops after that many consecutive hops without improving the best
    value by more than ``local_tol``.
    """
    config = config or OptimizerConfig()
    x0, totals, commodity = _as_blocks(x0, totals, commodity)
    rng = np.random.default_rng(config.seed)
    trace = HopTrace()
    first = local_minimize(objective, x0, totals, commodity, config)
    trace.evaluations += first.evaluations
    cur_x, cur_f = first.x, first.f
    best_x, best_f = cur_x, cur_f
    trace.trial.append(cur_f)
    trace.accepted.append(True)
    trace.best.append(best_f)
    stale = 0
    for _ in range(config.hop_count):
        if target is not None and best_f <= target:
            break
        if config.patience is not None and stale >= config.patience:
            break
        trial = cur_x + rng.normal(0.0, config.hop_step, size=cur_x.shape)
        local = local_minimize(objective, trial, totals, commodity, config)
        trace.evaluations += local.evaluations
        delta = local.f - cur_f
        accept = delta < 0 or rng.random() < np.exp(-delta / config.temperature)
        if accept:
            cur_x, cur_f = local.x, local.f
        stale = 0 if local.f < best_f - config.local_tol else stale + 1
        if local.f < best_f:
            best_x, best_f = local.x, local.f
        trace.trial.append(local.f)
        trace.accepted.append(bool(accept))
        trace.best.append(best_f)
    return best_x, best_f, trace
