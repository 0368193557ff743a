"""Equilibria and optima of the entanglement routing game.

Discrete Nash equilibria are computed on integer user counts with greedy
insertion followed by best-response sweeps.  Continuous solutions (Wardrop
equilibrium, global, better-than-Nash and fair optima) minimize an objective
over per-commodity simplices with :mod:`qbraess.optimize`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from . import _kernels
from .game import RoutingGame
from .optimize import LocalResult, OptimizerConfig, basin_hop, project_feasible

EPS_IMPROVE = 1e-9
EPS_WE = 1e-8
EPS_FAIR = 1e-6
EPS_FLOOR = 1e-6
X_CUT = 1e-6
MAX_SWEEPS = 10_000


class Solver(str, enum.Enum):
    GREEDY_NE = "GreedyNE"
    WARDROP = "Wardrop"
    GLOBAL = "Global"
    BTN = "BtN"
    FAIR = "Fair"


def fidelity(p):
    return (3.0 * np.asarray(p) + 1.0) / 4.0


@dataclass(frozen=True)
class FlowAssignment:
    """Normalized path flows ``x`` (users / M) and induced edge loads ``y``."""

    x: np.ndarray
    loads: np.ndarray
    commodity: np.ndarray
    totals: np.ndarray

    def check(self, tol=1e-9) -> None:
        sums = np.bincount(self.commodity, weights=self.x, minlength=len(self.totals))
        if np.any(np.abs(sums - self.totals) > tol):
            raise AssertionError(f"flow sums {sums} != demands {self.totals}")
        if np.any(self.x < 0):
            raise AssertionError("negative path flow")


@dataclass(frozen=True)
class DiscreteAssignment:
    """Per-user path choices and integer edge demands ``m_i``."""

    user_paths: np.ndarray
    user_commodity: np.ndarray
    edge_demand: np.ndarray

    @classmethod
    def from_counts(cls, game: RoutingGame, counts) -> "DiscreteAssignment":
        counts = np.asarray(counts, dtype=np.int64)
        user_paths = np.repeat(np.arange(game.n_paths), counts)
        user_commodity = game.commodity[user_paths]
        order = np.argsort(user_commodity, kind="stable")
        user_paths = user_paths[order]
        m = np.rint(game.loads(counts)).astype(np.int64)
        return cls(user_paths, user_commodity[order], m)

    def counts(self, n_paths: int) -> np.ndarray:
        return np.bincount(self.user_paths, minlength=n_paths).astype(np.int64)


@dataclass
class EquilibriumResult:
    """Solution of one solver on one game."""

    game: RoutingGame
    assignment: FlowAssignment
    path_params: np.ndarray
    average_param: float
    average_fidelity: float
    solver: Solver
    converged: bool
    diagnostics: dict = field(default_factory=dict)
    discrete: DiscreteAssignment | None = None

    @property
    def x(self) -> np.ndarray:
        return self.assignment.x

    @property
    def path_fidelities(self) -> np.ndarray:
        return fidelity(self.path_params)

    def used(self, x_cut: float = X_CUT) -> np.ndarray:
        return np.flatnonzero(self.x > x_cut)

    def commodity_fidelities(self) -> np.ndarray:
        return fidelity(self.game.average_params(self.x, self.path_params))

    def to_dict(self) -> dict:
        node_paths = self.game.node_paths()
        flows = []
        for j in range(self.game.n_paths):
            flows.append({
                "commodity": int(self.game.commodity[j]),
                "path": list(node_paths[j]),
                "x": float(self.x[j]),
                "fidelity": float(self.path_fidelities[j]),
            })
        diag = {k: (v.item() if isinstance(v, np.generic) else v) for k, v in self.diagnostics.items()}
        return {
            "solver": self.solver.value,
            "converged": bool(self.converged),
            "pairs": [list(p) for p in self.game.demand.pairs],
            "demands": list(self.game.demand.demands),
            "average_param": float(self.average_param),
            "average_fidelity": float(self.average_fidelity),
            "commodity_fidelities": [float(f) for f in self.commodity_fidelities()],
            "flows": flows,
            "diagnostics": diag,
        }


def make_result(game: RoutingGame, x, solver: Solver, converged: bool, diagnostics=None,
                discrete=None) -> EquilibriumResult:
    x = np.asarray(x, dtype=float)
    loads, _, p = game.flow_state(x)
    avg = game.overall_average(x, p)
    return EquilibriumResult(
        game=game,
        assignment=FlowAssignment(x, loads, game.commodity, game.totals),
        path_params=p,
        average_param=avg,
        average_fidelity=(3.0 * avg + 1.0) / 4.0,
        solver=solver,
        converged=converged,
        diagnostics=dict(diagnostics or {}),
        discrete=discrete,
    )


# -- discrete game -------------------------------------------------------------

def _integer_table(game: RoutingGame, budget: int, users) -> np.ndarray:
    return game.integer_response(budget, int(np.sum(users)) + 1)


def greedy_ne(game: RoutingGame, budget: int | None = None, seed: int = 0,
              eps: float = EPS_IMPROVE, max_sweeps: int = MAX_SWEEPS) -> EquilibriumResult:
    """Nash equilibrium of ``round(nu_i * M)`` users per commodity.

    Users are inserted one at a time (round robin over commodities) on the path
    that is best for them given current integer loads, lowest path index on
    ties.  Best-response sweeps then move single users while some move gains
    more than ``eps`` in fidelity.  The procedure is deterministic; ``seed`` is
    only recorded.
    """
    budget = int(budget or game.net.budget)
    users = game.users(budget)
    G = _integer_table(game, budget, users)
    counts, m = _kernels.greedy_insert(game.path_ptr, game.path_edges, game.commodity, users, G,
                                       game.net.n_edges)
    sweeps, moves, converged = _kernels.best_response_sweeps(
        game.path_ptr, game.path_edges, game.commodity, counts, m, G, eps, max_sweeps)
    gain, _, _ = _kernels.max_deviation_gain(game.path_ptr, game.path_edges, game.commodity, counts, m, G)
    discrete = DiscreteAssignment.from_counts(game, counts)
    x = counts / budget
    diag = {
        "seed": int(seed),
        "budget": budget,
        "users": [int(u) for u in users],
        "sweeps": int(sweeps),
        "moves": int(moves),
        "max_improvement": float(gain) if np.isfinite(gain) else 0.0,
        "rounded_demand": bool(np.any(np.abs(users - np.asarray(game.totals) * budget) > 1e-9)),
    }
    return make_result(game, x, Solver.GREEDY_NE, bool(converged), diag, discrete)


@dataclass(frozen=True)
class NEReport:
    passed: bool
    max_improvement: float
    from_path: int
    to_path: int


def verify_ne(game: RoutingGame, assignment: DiscreteAssignment, budget: int | None = None,
              eps: float = EPS_IMPROVE) -> NEReport:
    """Check that no single user gains more than ``eps`` fidelity by switching path."""
    budget = int(budget or game.net.budget)
    counts = assignment.counts(game.n_paths)
    m = np.rint(game.loads(counts)).astype(np.int64)
    if not np.array_equal(m, assignment.edge_demand):
        raise ValueError("edge demands inconsistent with user paths")
    G = game.integer_response(budget, int(counts.sum()) + 1)
    gain, src, dst = _kernels.max_deviation_gain(game.path_ptr, game.path_edges, game.commodity, counts, m, G)
    if not np.isfinite(gain):
        return NEReport(True, 0.0, -1, -1)
    return NEReport(bool(gain <= eps), float(gain), int(src), int(dst))


# -- continuous objectives -----------------------------------------------------

class GameObjective:
    """Objective on path flows of ``game``, evaluated by compiled kernels.

    ``kind`` selects the Wardrop residual, the negated average, or one of the
    two penalty objectives; ``a`` and ``b`` carry their parameters.
    """

    def __init__(self, game: RoutingGame, kind: int, a: float = 0.0, b: float = 0.0):
        self.game = game
        self.kind = kind
        self.a = float(a)
        self.b = float(b)
        r = game.response
        self._args = (game.path_ptr, game.path_edges, game.net.n_edges, game.commodity,
                      np.ascontiguousarray(game.totals), r.is_bell, r.p0, r.table_id, r.grid, r.values)

    def __call__(self, x) -> float:
        x = np.ascontiguousarray(x, dtype=float)
        return float(_kernels.objective_value(self.kind, x, *self._args, self.a, self.b))

    def exchange_search(self, x, totals, commodity, step, tol, max_evals) -> LocalResult:
        x, f, evals, ok = _kernels.exchange_search(
            self.kind, np.ascontiguousarray(x, dtype=float), *self._args, self.a, self.b,
            float(step), float(tol), int(max_evals))
        return LocalResult(x, float(f), int(evals), bool(ok))


def we_objective(game: RoutingGame, x) -> float:
    """Wardrop residual: zero iff every used path has the commodity average and
    no path exceeds it.

    Paths above the average count fully (``x**0 = 1`` even at zero flow); paths
    below it are weighted by their flow.
    """
    return GameObjective(game, _kernels.OBJ_WARDROP)(x)


def global_objective(game: RoutingGame, x) -> float:
    return GameObjective(game, _kernels.OBJ_GLOBAL)(x)


@dataclass(frozen=True)
class WardropReport:
    passed: bool
    spread: float
    excess: float
    common: float


def verify_wardrop(result: EquilibriumResult, tol: float = 1e-3, x_cut: float = X_CUT,
                   in_fidelity: bool = True) -> WardropReport:
    """Equal value on used paths and nothing better among unused ones, per commodity.

    ``spread`` is the largest max-min gap over used paths; ``excess`` the
    largest amount an unused path beats its commodity's best used path.  Both
    are measured in fidelity unless ``in_fidelity`` is false.
    """
    game = result.game
    vals = fidelity(result.path_params) if in_fidelity else np.asarray(result.path_params)
    spread = 0.0
    excess = -np.inf
    common = np.nan
    for c, idx in enumerate(game.blocks()):
        used = idx[result.x[idx] > x_cut]
        unused = idx[result.x[idx] <= x_cut]
        if len(used) == 0:
            continue
        hi = float(vals[used].max())
        spread = max(spread, hi - float(vals[used].min()))
        if c == 0:
            common = float(vals[used].mean())
        if len(unused):
            excess = max(excess, float(vals[unused].max()) - hi)
    excess = float(max(excess, 0.0)) if np.isfinite(excess) else 0.0
    return WardropReport(bool(spread <= tol and excess <= tol), spread, excess, common)


# -- continuous solvers --------------------------------------------------------

def _starts(game: RoutingGame, warm=None) -> list[np.ndarray]:
    starts = [np.concatenate([np.full(len(b), nu / len(b)) for b, nu in zip(game.blocks(), game.totals)])]
    order = np.concatenate(game.blocks())
    starts[0] = starts[0][np.argsort(order)]
    if warm is not None:
        starts.append(project_feasible(np.asarray(warm, dtype=float), game.totals, game.commodity))
    return starts


def _minimize(game: RoutingGame, objective, config: OptimizerConfig, warm=None, target=None):
    best = None
    traces = []
    for k, x0 in enumerate(_starts(game, warm)):
        cfg = config.with_seed(config.seed + k)
        x, f, trace = basin_hop(objective, x0, game.totals, game.commodity, cfg, target=target)
        traces.append(trace)
        if best is None or f < best[1]:
            best = (x, f, k)
        if target is not None and f <= target:
            break
    return best[0], best[1], best[2], traces


SMOOTH_PATIENCE = 10


def _default_config(game: RoutingGame, config: OptimizerConfig | None, seed: int,
                    smooth: bool = True) -> OptimizerConfig:
    # The average-parameter objectives are smooth away from the load kinks and
    # SLSQP lands on the same optimum from almost any start, so a short run of
    # unproductive hops ends the search.  The Wardrop residual is not smooth
    # (the weight jumps when a path crosses the average) and uses the exchange
    # pattern search with the full hop budget.
    if config is None:
        extra = {"method": "slsqp", "patience": SMOOTH_PATIENCE} if smooth else {}
        config = OptimizerConfig.defaults(float(np.max(game.totals)), seed=seed, **extra)
    return config


def solve_wardrop(game: RoutingGame, config: OptimizerConfig | None = None, seed: int = 0,
                  warm_start: bool = True, budget: int | None = None) -> EquilibriumResult:
    """Wardrop equilibrium by minimizing :func:`we_objective`.

    Starts from the uniform split and, when ``warm_start`` is set, from the
    greedy Nash flow; stops as soon as the residual reaches ``EPS_WE``.
    """
    config = _default_config(game, config, seed, smooth=False)
    warm = greedy_ne(game, budget).x if warm_start else None
    x, f, start, traces = _minimize(game, GameObjective(game, _kernels.OBJ_WARDROP), config, warm, target=EPS_WE)
    diag = {"objective": f, "seed": config.seed, "start": start,
            "hops": sum(len(t) for t in traces), "evaluations": sum(t.evaluations for t in traces)}
    return make_result(game, x, Solver.WARDROP, bool(f <= EPS_WE), diag)


def solve_global(game: RoutingGame, config: OptimizerConfig | None = None, seed: int = 0,
                 warm_start: bool = True, budget: int | None = None) -> EquilibriumResult:
    """Flow maximizing the load-weighted average Werner parameter."""
    config = _default_config(game, config, seed)
    warm = greedy_ne(game, budget).x if warm_start else None
    x, f, start, traces = _minimize(game, GameObjective(game, _kernels.OBJ_GLOBAL), config, warm)
    diag = {"objective": f, "seed": config.seed, "start": start,
            "hops": sum(len(t) for t in traces), "evaluations": sum(t.evaluations for t in traces)}
    return make_result(game, x, Solver.GLOBAL, True, diag)


def _continuation(game, make_objective, violation, config, x0, mu_start=1e2, mu_stop=1e6):
    x = x0
    mu = mu_start
    evaluations = 0
    while True:
        cfg = config.with_seed(config.seed + int(np.log10(mu)))
        x, f, trace = basin_hop(make_objective(mu), x, game.totals, game.commodity, cfg)
        evaluations += trace.evaluations
        if mu >= mu_stop:
            break
        mu *= 10.0
    return x, mu, evaluations, violation(x)


def ne_floor(ne_result: EquilibriumResult) -> float:
    """Common used-path Werner parameter of a Nash result (the lowest if not exactly common)."""
    used = ne_result.used()
    return float(ne_result.path_params[used].min())


def solve_btn(game: RoutingGame, ne_result: EquilibriumResult | None = None,
              config: OptimizerConfig | None = None, seed: int = 0,
              budget: int | None = None) -> EquilibriumResult:
    """Best average subject to every used path staying at or above the Nash value.

    Quadratic-penalty continuation ``mu = 1e2 .. 1e6`` from the Nash flow.
    """
    config = _default_config(game, config, seed)
    if ne_result is None:
        ne_result = greedy_ne(game, budget)
    floor = ne_floor(ne_result)

    def violation(z):
        p = game.path_params(z)
        used = z > X_CUT
        return float(np.max(np.maximum(0.0, floor - p[used]), initial=0.0))

    x0 = ne_result.x.copy()
    x, mu, evals, viol = _continuation(
        game, lambda mu: GameObjective(game, _kernels.OBJ_BTN, floor, mu), violation, config, x0)
    x = _repair_floor(game, x, floor, x0)
    viol = violation(x)
    res = make_result(game, x, Solver.BTN, viol <= EPS_FLOOR,
                      {"seed": config.seed, "floor_param": floor, "floor_violation": viol,
                       "mu": mu, "evaluations": evals})
    return res


def _repair_floor(game, x, floor, x_ne):
    """Blend toward the Nash flow until the floor holds on every used path.

    The Nash flow satisfies the floor by construction, so the blend is
    feasible at weight 1; bisection finds the smallest feasible weight.  The
    repair aims at half the tolerance so rounding cannot push the result
    back over it.
    """
    def ok(z):
        p = game.path_params(z)
        return np.all(p[z > X_CUT] >= floor - 0.5 * EPS_FLOOR)

    if ok(x):
        return x
    lo, hi = 0.0, 1.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if ok((1 - mid) * x + mid * x_ne):
            hi = mid
        else:
            lo = mid
    return (1 - hi) * x + hi * x_ne


def _equalize(game: RoutingGame, x) -> np.ndarray:
    """Newton-type polish making all used paths of each commodity equal.

    Solves ``p_j = mean`` on the used set with the block sums fixed, starting
    from ``x``; the penalty optimum is usually within ``1/mu`` of such a point.
    """
    x = np.asarray(x, dtype=float)
    used = np.flatnonzero(x > X_CUT)
    if len(used) < 2:
        return x

    def full(z):
        out = np.zeros_like(x)
        out[used] = z
        return out

    comm = game.commodity[used]

    def residual(z):
        zz = full(z)
        p = game.path_params(zz)[used]
        res = []
        for c in np.unique(comm):
            sel = comm == c
            res.append(p[sel] - np.average(p[sel], weights=np.maximum(z[sel], 1e-300)))
            res.append([np.sum(z[sel]) - game.totals[c]])
        return np.concatenate(res)

    sol = least_squares(residual, x[used], bounds=(0.0, np.inf), xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        max_nfev=200 * len(used))
    return project_feasible(full(sol.x), game.totals, game.commodity)


def solve_fair(game: RoutingGame, config: OptimizerConfig | None = None, seed: int = 0,
               warm=None, budget: int | None = None) -> EquilibriumResult:
    """Best common value: all used paths share one parameter (within ``EPS_FAIR``).

    The penalty continuation runs from the Nash flow and from the Wardrop flow
    (or from ``warm`` when given); the best fair outcome wins.  If neither
    penalty optimum is fair, the start with the smallest spread is returned.
    """
    config = _default_config(game, config, seed)
    if warm is None:
        starts = [greedy_ne(game, budget).x, solve_wardrop(game, seed=config.seed, budget=budget).x]
    else:
        starts = [np.asarray(warm, float)]

    def spread(z):
        p = game.path_params(z)
        used = z > X_CUT
        return float(np.ptp(p[used])) if np.any(used) else 0.0

    candidates = []
    evals = 0
    for k, x0 in enumerate(starts):
        x, mu, n, _ = _continuation(
            game, lambda mu: GameObjective(game, _kernels.OBJ_FAIR, mu), spread,
            config.with_seed(config.seed + 100 * k), x0)
        evals += n
        candidates.extend([x, _equalize(game, x), x0])
    fair = [z for z in candidates if spread(z) <= EPS_FAIR]
    if fair:
        x = max(fair, key=game.overall_average)
    else:
        x = min(candidates, key=spread)
    sp = spread(x)
    return make_result(game, x, Solver.FAIR, sp <= EPS_FAIR,
                       {"seed": config.seed, "spread": sp, "mu": mu, "evaluations": evals})
