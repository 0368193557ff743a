import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import werner
from oracles import exhaustive_pure_equilibria
from qbraess import equilibria as eq
from qbraess import netmodel
from qbraess.equilibria import DiscreteAssignment, Solver
from qbraess.game import NoPathError, RoutingGame
from qbraess.netmodel import EdgeState

TOL = 1e-6


def game_for(net, pairs):
    return RoutingGame.build(net, netmodel.demand_for(net, pairs))


def random_game(seed, n=8, k=3, f0=0.75):
    net = netmodel.assign_states(netmodel.generate_er(n, k, seed), 0.5, f0, seed)
    rng = np.random.default_rng(seed)
    a, b = rng.choice(n, 2, replace=False)
    return game_for(net, [(int(a), int(b))])


@pytest.fixture(scope="module")
def fixture_results():
    net = netmodel.load_fixture("braess8")
    game = game_for(net, [(3, 6)])
    ne = eq.greedy_ne(game)
    return {
        "ne": ne,
        "we": eq.solve_wardrop(game),
        "global": eq.solve_global(game),
        "btn": eq.solve_btn(game, ne),
        "fair": eq.solve_fair(game),
    }


class TestSinglePath:
    def net(self):
        return netmodel.make_network(3, [(0, 1), (1, 2)], [werner(0.9), werner(0.9)], budget=100)

    def test_all_solvers_agree(self):
        game = game_for(self.net(), [(0, 2)])
        p0 = werner(0.9).p0
        expected = (3 * p0 * p0 + 1) / 4
        for res in [eq.greedy_ne(game), eq.solve_wardrop(game), eq.solve_global(game)]:
            assert res.average_fidelity == pytest.approx(expected, abs=1e-12)
            assert res.x == pytest.approx([1.0])


class TestSymmetric:
    def test_ne_splits_evenly(self, two_path_net):
        game = game_for(two_path_net, [(0, 3)])
        res = eq.greedy_ne(game)
        assert res.discrete.counts(game.n_paths).tolist() == [1000, 1000]
        assert res.converged

    def test_wardrop_splits_evenly(self, two_path_net):
        game = game_for(two_path_net, [(0, 3)])
        res = eq.solve_wardrop(game)
        assert res.converged
        assert res.x == pytest.approx([1.0, 1.0], abs=1e-6)

    def test_we_objective_characterizes(self, two_path_net):
        game = game_for(two_path_net, [(0, 3)])
        assert eq.we_objective(game, [1.0, 1.0]) <= 1e-15
        assert eq.we_objective(game, [1.5, 0.5]) > 1e-3
        # an unused path that beats the average is penalized even at zero flow
        assert eq.we_objective(game, [2.0, 0.0]) > 1e-3


class TestGreedyNE:
    @pytest.mark.parametrize("seed", range(6))
    def test_matches_exhaustive_oracle(self, seed):
        net = netmodel.assign_states(netmodel.generate_er(6, 2, seed), 0.5, 0.8, seed)
        net = netmodel.make_network(6, net.edges, net.states, budget=3)
        rng = np.random.default_rng(seed)
        a, b = (int(v) for v in rng.choice(6, 2, replace=False))
        game = game_for(net, [(a, b)])
        users = game.users(3)
        G = game.integer_response(3, int(users.sum()) + 1)
        res = eq.greedy_ne(game)
        counts = tuple(res.discrete.counts(game.n_paths).tolist())
        stable = exhaustive_pure_equilibria(game.edge_paths(), game.commodity.tolist(), users.tolist(),
                                            lambda i, load: G[i, load])
        assert counts in stable

    @given(seed=st.integers(0, 500))
    @settings(max_examples=15, deadline=None)
    def test_verified_and_conserving(self, seed):
        game = random_game(seed)
        res = eq.greedy_ne(game)
        assert res.converged
        assert eq.verify_ne(game, res.discrete).passed
        res.assignment.check()
        assert res.discrete.counts(game.n_paths).sum() == game.users(1000).sum()

    def test_deterministic(self):
        game = random_game(4)
        a, b = eq.greedy_ne(game), eq.greedy_ne(game)
        assert np.array_equal(a.x, b.x)

    def test_verify_rejects_bad_assignment(self, two_path_net):
        game = game_for(two_path_net, [(0, 3)])
        bad = DiscreteAssignment.from_counts(game, [2000, 0])
        report = eq.verify_ne(game, bad)
        assert not report.passed
        assert (report.from_path, report.to_path) == (0, 1)
        broken = DiscreteAssignment(bad.user_paths, bad.user_commodity, bad.edge_demand + 1)
        with pytest.raises(ValueError):
            eq.verify_ne(game, broken)

    def test_two_commodities(self):
        game = game_for(netmodel.load_fixture("braess8"), [(3, 6), (0, 1)])
        res = eq.greedy_ne(game)
        assert eq.verify_ne(game, res.discrete).passed
        assert np.bincount(game.commodity, weights=res.x) == pytest.approx([1.5, 1.5])


class TestWardrop:
    @pytest.mark.parametrize("seed", range(3))
    def test_equal_used_paths(self, seed):
        game = random_game(seed)
        res = eq.solve_wardrop(game)
        assert res.converged
        report = eq.verify_wardrop(res)
        assert report.passed and report.spread <= 1e-3 and report.excess <= 1e-3
        res.assignment.check()

    def test_verify_detects_violation(self, two_path_net):
        game = game_for(two_path_net, [(0, 3)])
        report = eq.verify_wardrop(eq.make_result(game, [2.0, 0.0], Solver.WARDROP, False))
        assert not report.passed and report.excess > 1e-3


class TestOptima:
    def test_ordering(self, fixture_results):
        r = fixture_results
        ne = r["ne"].average_fidelity
        assert r["global"].average_fidelity >= r["btn"].average_fidelity - TOL
        assert r["btn"].average_fidelity >= ne - TOL
        assert r["fair"].average_fidelity >= ne - TOL

    def test_btn_floor(self, fixture_results):
        btn, ne = fixture_results["btn"], fixture_results["ne"]
        floor = eq.fidelity(eq.ne_floor(ne))
        assert btn.converged
        assert np.all(btn.path_fidelities[btn.used()] >= floor - TOL)

    def test_fair_common_value(self, fixture_results):
        fair = fixture_results["fair"]
        assert fair.converged
        assert np.ptp(fair.path_params[fair.used()]) <= eq.EPS_FAIR

    def test_flow_conservation(self, fixture_results):
        for res in fixture_results.values():
            res.assignment.check()

    def test_results_serialize(self, fixture_results):
        doc = fixture_results["global"].to_dict()
        assert doc["solver"] == "Global"
        assert sum(f["x"] for f in doc["flows"]) == pytest.approx(3.0)


def test_disconnected_pair_raises():
    net = netmodel.make_network(3, [(0, 1), (1, 2)], [EdgeState.bell()] * 2)
    game = game_for(net, [(0, 2)])
    with pytest.raises(NoPathError):
        game.restrict([0])
