"""scikit-learn style wrappers around the solvers and the removal scan.

The estimators take a :class:`~qbraess.netmodel.Network` as ``X`` and a list of
Alice-Bob pairs as ``y``; hyperparameters live in ``__init__`` so
``get_params``/``set_params``/``clone`` work as usual.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import equilibria, experiments, netmodel
from .game import RoutingGame
from .validation import check_int, check_pair, check_solver


def _check_net_pairs(net, pairs):
    if not isinstance(net, netmodel.Network):
        raise TypeError(f"X must be a Network, got {type(net).__name__}")
    if pairs is None:
        raise ValueError("y: Alice-Bob pairs are required")
    pairs = [pairs] if np.ndim(pairs) == 1 else list(pairs)
    return [check_pair(net, a, b) for a, b in pairs]


class RoutingSolver(BaseEstimator):
    """Solve the routing game for one network and demand.

    Parameters
    ----------
    solver : {"ne", "we", "global", "btn", "fair"}
        Which equilibrium or optimum to compute.
    seed : int
        Seed for the stochastic optimizers (recorded by the Nash solver).
    budget : int or None
        Copies per edge for the Nash game; defaults to the network's budget.
    """

    def __init__(self, solver="ne", seed=0, budget=None):
        self.solver = solver
        self.seed = seed
        self.budget = budget

    def fit(self, X, y=None):
        pairs = _check_net_pairs(X, y)
        solver = check_solver(self.solver)
        seed = check_int("seed", self.seed, 0)
        budget = None if self.budget is None else check_int("budget", self.budget, 1)
        game = RoutingGame.build(X, netmodel.demand_for(X, pairs))
        if solver is equilibria.Solver.GREEDY_NE:
            res = equilibria.greedy_ne(game, budget, seed)
        elif solver is equilibria.Solver.WARDROP:
            res = equilibria.solve_wardrop(game, seed=seed, budget=budget)
        elif solver is equilibria.Solver.GLOBAL:
            res = equilibria.solve_global(game, seed=seed, budget=budget)
        elif solver is equilibria.Solver.BTN:
            res = equilibria.solve_btn(game, seed=seed, budget=budget)
        else:
            res = equilibria.solve_fair(game, seed=seed, budget=budget)
        self.game_ = game
        self.result_ = res
        self.flows_ = res.x
        return self

    def predict(self, X=None):
        """Path fidelities at the fitted flow."""
        check_is_fitted(self, "result_")
        return self.result_.path_fidelities

    def score(self, X=None, y=None):
        """Load-weighted average end-to-end fidelity."""
        check_is_fitted(self, "result_")
        return self.result_.average_fidelity


class BraessScanner(BaseEstimator):
    """Edge-removal scan; ``transform`` returns the improvement of every subset.

    Parameters
    ----------
    removal_size : int
        Largest subset size (1 to 3); all smaller subsets are scanned too.
    solver : {"ne", "we"}
    seed : int
    threads : int
        Worker threads; results do not depend on it.
    """

    def __init__(self, removal_size=1, solver="ne", seed=0, threads=1):
        self.removal_size = removal_size
        self.solver = solver
        self.seed = seed
        self.threads = threads

    def fit(self, X, y=None):
        pairs = _check_net_pairs(X, y)
        size = check_int("removal_size", self.removal_size, 1, experiments.MAX_REMOVAL_SIZE)
        solver = check_solver(self.solver, experiments.SCAN_SOLVERS)
        self.scan_ = experiments.braess_scan(X, netmodel.demand_for(X, pairs), size, solver,
                                             check_int("seed", self.seed, 0),
                                             check_int("threads", self.threads, 1))
        self.best_edges_ = self.scan_.best.edges if self.scan_.best else ()
        self.best_improvement_ = self.scan_.best_improvement
        return self

    def transform(self, X=None):
        check_is_fitted(self, "scan_")
        return np.array([r.improvement for r in self.scan_.removals])

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform()
