"""Braess removal scans, all-pair sweeps and ensemble statistics.

Every experiment is a set of independent work items (removal subsets, Alice-Bob
pairs, network realizations).  Items derive their randomness from
``(master_seed, index)`` and results are collected by index, so outputs do not
depend on the number of worker threads.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import netmodel
from .equilibria import (
    EquilibriumResult,
    Solver,
    greedy_ne,
    solve_btn,
    solve_fair,
    solve_global,
    solve_wardrop,
)
from .game import NoPathError, RoutingGame
from .netmodel import ConstantFidelity, GaussianFidelity, Network, NetworkError

log = logging.getLogger(__name__)

SCAN_SOLVERS = (Solver.GREEDY_NE, Solver.WARDROP)
MAX_REMOVAL_SIZE = 3
MAX_RESAMPLES = 1000


def _map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Ordered map over ``items``, optionally on a thread pool."""
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _solve(game: RoutingGame, solver: Solver, seed: int) -> EquilibriumResult:
    solver = Solver(solver)
    if solver is Solver.GREEDY_NE:
        return greedy_ne(game, seed=seed)
    if solver is Solver.WARDROP:
        return solve_wardrop(game, seed=seed)
    raise ValueError(f"scans support {[s.value for s in SCAN_SOLVERS]}, got {solver.value}")


# -- removal scans -------------------------------------------------------------

@dataclass
class Removal:
    subset: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    result: EquilibriumResult
    improvement: float


@dataclass
class ScanResult:
    """Baseline equilibrium and the outcome of every edge-subset removal.

    ``removals`` and ``skipped`` follow the enumeration order: subsets of size
    1, then 2, ... up to ``removal_size``, each size in lexicographic order.
    """

    baseline: EquilibriumResult
    removals: list[Removal]
    skipped: list[tuple[int, ...]]
    removal_size: int
    best: Removal | None = None

    def __post_init__(self):
        if self.best is None and self.removals:
            self.best = max(self.removals, key=lambda r: r.improvement)

    @property
    def best_improvement(self) -> float:
        """Largest ``post - baseline`` fidelity change; 0 when nothing could be removed."""
        return self.best.improvement if self.best is not None else 0.0

    @property
    def converged(self) -> bool:
        return self.baseline.converged and all(r.result.converged for r in self.removals)

    def to_dict(self) -> dict:
        return {
            "baseline_fidelity": self.baseline.average_fidelity,
            "removal_size": self.removal_size,
            "best": None if self.best is None else {
                "subset": list(self.best.subset),
                "edges": [list(e) for e in self.best.edges],
                "post_fidelity": self.best.result.average_fidelity,
                "improvement": self.best.improvement,
                "used_paths": int(len(self.best.result.used())),
            },
            "removals": [{"subset": list(r.subset), "edges": [list(e) for e in r.edges],
                          "post_fidelity": r.result.average_fidelity, "improvement": r.improvement}
                         for r in self.removals],
            "skipped": [list(s) for s in self.skipped],
            "converged": self.converged,
        }


def removal_subsets(n_edges: int, removal_size: int) -> list[tuple[int, ...]]:
    """All edge subsets of size ``1..removal_size`` in deterministic order."""
    if removal_size not in range(1, MAX_REMOVAL_SIZE + 1):
        raise ValueError(f"removal size must be in 1..{MAX_REMOVAL_SIZE}, got {removal_size}")
    out = []
    for size in range(1, removal_size + 1):
        out.extend(itertools.combinations(range(n_edges), size))
    return out


def braess_scan(net: Network, demand: netmodel.DemandSpec, removal_size: int = 1,
                solver: Solver = Solver.GREEDY_NE, seed: int = 0, threads: int = 1,
                game: RoutingGame | None = None) -> ScanResult:
    """Re-solve the game with every subset of at most ``removal_size`` edges removed.

    The demand stays the one measured on the original network.  Subsets that
    leave some commodity without a path are recorded as skipped.
    """
    solver = Solver(solver)
    if solver not in SCAN_SOLVERS:
        raise ValueError(f"scans support {[s.value for s in SCAN_SOLVERS]}, got {solver.value}")
    if game is None:
        game = RoutingGame.build(net, demand)
    baseline = _solve(game, solver, seed)
    subsets = removal_subsets(net.n_edges, removal_size)

    def run(subset):
        if not game.has_paths_without(subset):
            return None
        res = _solve(game.restrict(subset), solver, seed)
        return Removal(subset, tuple(net.edges[i] for i in subset), res,
                       res.average_fidelity - baseline.average_fidelity)

    outcomes = _map(run, subsets, threads)
    removals = [r for r in outcomes if r is not None]
    skipped = [s for s, r in zip(subsets, outcomes) if r is None]
    return ScanResult(baseline, removals, skipped, removal_size)


# -- all-pair sweep ------------------------------------------------------------

@dataclass
class PairRecord:
    """Per Alice-Bob pair summary of one network.

    ``below_ne`` is the share of user mass that the global optimum routes on
    paths worse than the Nash fidelity.  The optimum columns are ``None`` when
    the sweep ran without them.
    """

    pair: tuple[int, int]
    ne: float
    post: float
    improvement: float
    best_edges: tuple[tuple[int, int], ...]
    used_paths: int
    post_used_paths: int
    global_opt: float | None = None
    btn: float | None = None
    fair: float | None = None
    below_ne: float | None = None
    converged: bool = True


@dataclass
class SweepResult:
    records: list[PairRecord]
    skipped: list[tuple[int, int]]

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.records)


def fraction_below(result: EquilibriumResult, reference_fidelity: float, tol: float = 1e-9) -> float:
    """Share of flow on paths whose fidelity is below ``reference_fidelity``."""
    below = result.path_fidelities < reference_fidelity - tol
    return float(result.x[below].sum() / result.x.sum())


def pair_record(net: Network, pair: tuple[int, int], solver: Solver = Solver.GREEDY_NE,
                seed: int = 0, optima: bool = False) -> PairRecord:
    demand = netmodel.demand_for(net, [pair])
    game = RoutingGame.build(net, demand)
    scan = braess_scan(net, demand, 1, solver, seed, game=game)
    best = scan.best
    rec = PairRecord(
        pair=tuple(pair),
        ne=scan.baseline.average_fidelity,
        post=best.result.average_fidelity if best else scan.baseline.average_fidelity,
        improvement=scan.best_improvement,
        best_edges=best.edges if best else (),
        used_paths=int(len(scan.baseline.used())),
        post_used_paths=int(len(best.result.used())) if best else int(len(scan.baseline.used())),
        converged=scan.converged,
    )
    if optima:
        ne = scan.baseline if scan.baseline.solver is Solver.GREEDY_NE else greedy_ne(game, seed=seed)
        glob = solve_global(game, seed=seed)
        btn = solve_btn(game, ne, seed=seed)
        fair = solve_fair(game, seed=seed)
        rec.global_opt = glob.average_fidelity
        rec.btn = btn.average_fidelity
        rec.fair = fair.average_fidelity
        rec.below_ne = fraction_below(glob, ne.average_fidelity)
        rec.converged = rec.converged and glob.converged and btn.converged and fair.converged
    return rec


def ab_sweep(net: Network, solver: Solver = Solver.GREEDY_NE, seed: int = 0, optima: bool = False,
             threads: int = 1) -> SweepResult:
    """Baseline and best single-edge removal for every unordered node pair.

    With ``optima`` the global, better-than-Nash and fair optima are solved too.
    """
    if net.n_nodes < 2:
        raise NetworkError("n: need at least 2 nodes")
    pairs = list(itertools.combinations(range(net.n_nodes), 2))

    def run(pair):
        try:
            return pair_record(net, pair, solver, seed, optima)
        except NoPathError:
            return None

    out = _map(run, pairs, threads)
    return SweepResult([r for r in out if r is not None],
                       [p for p, r in zip(pairs, out) if r is None])


# -- ensembles -----------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleConfig:
    """One ensemble point: network family, state mix, demand and scan settings.

    ``f0`` is a constant fidelity or a :class:`GaussianFidelity`.  With
    ``d == 1`` and ``placements is None`` every connected Alice-Bob pair of a
    realization is scanned; otherwise ``placements`` draws of ``d`` disjoint
    pairs are made per realization (default one).
    """

    n_nodes: int
    degree: float
    f0: float | GaussianFidelity
    bell_fraction: float = 0.5
    runs: int = 100
    master_seed: int = 0
    d: int = 1
    removal_size: int = 1
    budget: int = 1000
    solver: Solver = Solver.GREEDY_NE
    placements: int | None = None

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError(f"runs must be >= 1, got {self.runs}")
        if self.d < 1 or 2 * self.d > self.n_nodes:
            raise ValueError(f"d={self.d} disjoint pairs do not fit in {self.n_nodes} nodes")
        if self.placements is not None and self.placements < 1:
            raise ValueError("placements must be >= 1")
        removal_subsets(0, self.removal_size)
        object.__setattr__(self, "solver", Solver(self.solver))
        if not isinstance(self.f0, GaussianFidelity):
            ConstantFidelity(float(self.f0))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["solver"] = self.solver.value
        if isinstance(self.f0, GaussianFidelity):
            out["f0"] = {"mean": self.f0.mean, "sigma": self.f0.sigma}
        return out

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RealizationRecord:
    index: int
    seed: int
    resamples: int
    placements: list[tuple[tuple[int, int], ...]]
    baseline: list[float]
    post: list[float]
    improvements: list[float]
    best_subsets: list[tuple[tuple[int, int], ...]]
    value: float
    value_raw: float
    converged: bool


@dataclass
class EnsembleStats:
    """Per-realization values with mean and standard error.

    ``values`` floor each placement's best improvement at zero before
    averaging (an operator would not remove a harmful edge); ``values_raw``
    keep the sign.  The standard error is the sample standard deviation over
    ``sqrt(runs)`` and is ``nan`` for a single run.
    """

    config: EnsembleConfig
    values: np.ndarray
    values_raw: np.ndarray
    records: list[RealizationRecord] = field(repr=False)

    @staticmethod
    def _se(v):
        return float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) >= 2 else float("nan")

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def se(self) -> float:
        return self._se(self.values)

    @property
    def mean_raw(self) -> float:
        return float(np.mean(self.values_raw))

    @property
    def se_raw(self) -> float:
        return self._se(self.values_raw)

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.records)

    def summary(self) -> dict:
        return {"mean": self.mean, "se": self.se, "mean_raw": self.mean_raw, "se_raw": self.se_raw,
                "runs": len(self.values), "fingerprint": self.fingerprint, "converged": self.converged}


def realization_seed(master_seed: int, index: int, attempt: int = 0) -> int:
    """Independent 63-bit seed for item ``index`` of a run."""
    ss = np.random.SeedSequence([int(master_seed), int(index), int(attempt)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def realize_network(config: EnsembleConfig, index: int) -> tuple[Network, int, int]:
    """Network of realization ``index``; returns ``(net, seed, resamples)``."""
    for attempt in range(MAX_RESAMPLES):
        seed = realization_seed(config.master_seed, index, attempt)
        try:
            net = netmodel.generate_er(config.n_nodes, config.degree, seed, config.budget)
        except NetworkError as exc:
            log.warning("realization %d attempt %d: %s; resampling", index, attempt, exc)
            continue
        return netmodel.assign_states(net, config.bell_fraction, config.f0, seed), seed, attempt
    raise NetworkError(f"realization {index}: no network after {MAX_RESAMPLES} resamples")


def _placements(config: EnsembleConfig, net: Network, seed: int) -> list[tuple[tuple[int, int], ...]]:
    if config.d == 1 and config.placements is None:
        return [(p,) for p in itertools.combinations(range(net.n_nodes), 2)]
    rng = np.random.default_rng([seed, 1])
    out = []
    for _ in range(config.placements or 1):
        nodes = rng.choice(net.n_nodes, size=2 * config.d, replace=False)
        out.append(tuple((int(min(a, b)), int(max(a, b))) for a, b in nodes.reshape(-1, 2)))
    return out


def run_realization(config: EnsembleConfig, index: int) -> RealizationRecord:
    net, seed, resamples = realize_network(config, index)
    base, post, imp, best, placements = [], [], [], [], []
    converged = True
    for pairs in _placements(config, net, seed):
        demand = netmodel.demand_for(net, pairs)
        try:
            scan = braess_scan(net, demand, config.removal_size, config.solver, seed)
        except NoPathError:
            # generated networks are connected, so this only guards user-built families
            continue
        placements.append(pairs)
        base.append(scan.baseline.average_fidelity)
        imp.append(scan.best_improvement)
        post.append(base[-1] + imp[-1])
        best.append(scan.best.edges if scan.best else ())
        converged = converged and scan.converged
    imp_arr = np.asarray(imp)
    return RealizationRecord(
        index=index, seed=seed, resamples=resamples, placements=placements, baseline=base, post=post,
        improvements=imp, best_subsets=best,
        value=float(np.mean(np.maximum(imp_arr, 0.0))) if len(imp) else 0.0,
        value_raw=float(np.mean(imp_arr)) if len(imp) else 0.0,
        converged=converged,
    )


def ensemble_run(config: EnsembleConfig, threads: int = 1) -> EnsembleStats:
    """Best-removal improvement statistics over ``config.runs`` random networks."""
    records = _map(lambda i: run_realization(config, i), list(range(config.runs)), threads)
    return EnsembleStats(config, np.array([r.value for r in records]),
                         np.array([r.value_raw for r in records]), records)


def multi_pair_run(config: EnsembleConfig, threads: int = 1) -> EnsembleStats:
    """Ensemble with ``config.d`` disjoint Alice-Bob pairs sharing the network.

    Each realization places the pairs uniformly at random and measures the
    improvement of the all-user average fidelity.
    """
    if config.placements is None:
        config = replace(config, placements=1)
    return ensemble_run(config, threads)


def cumulative_improvement(improvements) -> list[tuple[float, float]]:
    """``(rank fraction, cumulative share)`` with improvements sorted descending.

    Negative improvements count as zero.  An all-zero input yields zero shares.
    """
    v = np.maximum(np.asarray(list(improvements), dtype=float), 0.0)
    if v.size == 0:
        raise ValueError("no improvements given")
    v = np.sort(v)[::-1]
    total = v.sum()
    share = np.cumsum(v) / total if total > 0 else np.zeros_like(v)
    rank = np.arange(1, len(v) + 1) / len(v)
    return list(zip(rank.tolist(), share.tolist()))
