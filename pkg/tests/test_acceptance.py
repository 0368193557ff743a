"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N: PASS|FAIL`` line with its measurements and
runtime; the lines are repeated in the terminal summary.  Tolerances are the
stated ones and are not relaxed when a check fails.
"""
import contextlib
import itertools
import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import binary_entropy, exhaustive_pure_equilibria, pump_monte_carlo
from qbraess import cli, entops, netmodel
from qbraess import equilibria as eq
from qbraess import experiments as ex
from qbraess.game import RoutingGame
from qbraess.netmodel import EdgeState

P95 = 2.8 / 3


class Criterion:
    def __init__(self, number, limit):
        self.number = number
        self.limit = limit
        self.notes = []
        self.failures = []

    def check(self, ok, message):
        self.notes.append(message)
        if not ok:
            self.failures.append(message)

    def note(self, message):
        self.notes.append(message)


@contextlib.contextmanager
def criterion(request, number, limit=None, setup_time=0.0):
    """Time the block (plus ``setup_time`` spent in shared fixtures) and report it."""
    c = Criterion(number, limit)
    start = time.perf_counter() - setup_time
    error = None
    try:
        yield c
    except Exception as exc:  # record crashes as failures too
        error = exc
        c.failures.append(f"error: {exc!r}")
    elapsed = time.perf_counter() - start
    if limit is not None and elapsed > limit:
        c.failures.append(f"runtime {elapsed:.1f}s > {limit}s")
    status = "FAIL" if c.failures else "PASS"
    limit_txt = f" (limit {limit}s)" if limit is not None else ""
    line = f"criterion {number:2d}: {status} [{elapsed:.1f}s{limit_txt}] " + "; ".join(c.notes)
    if c.failures:
        line += " || failed: " + "; ".join(c.failures)
    ACCEPTANCE_LINES.append(line)
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is not None:
        reporter.write_line("")
        reporter.write_line(line)
    if error is not None:
        raise error
    assert not c.failures, line


def we_instances():
    """Twenty connected 8-node, k=3, half-Bell, F0=0.75 single-pair games."""
    games = []
    for seed in range(20):
        net = netmodel.assign_states(netmodel.generate_er(8, 3, seed), 0.5, 0.75, seed)
        a, b = np.random.default_rng([seed, 7]).choice(8, 2, replace=False)
        games.append(RoutingGame.build(net, netmodel.demand_for(net, [(int(a), int(b))])))
    return games


@pytest.fixture(scope="module")
def we_results():
    start = time.perf_counter()
    out = []
    for game in we_instances():
        out.append((game, eq.solve_wardrop(game, seed=0), eq.solve_wardrop(game, seed=1)))
    return out, time.perf_counter() - start


@pytest.fixture(scope="module")
def fixture_sweep():
    start = time.perf_counter()
    sweep = ex.ab_sweep(netmodel.load_fixture("braess8"), optima=True)
    return sweep, time.perf_counter() - start


# -- 1 ------------------------------------------------------------------------

def test_entanglement_math(request):
    with criterion(request, 1, limit=10) as c:
        ps = np.linspace(0, 1, 10_001)
        rt = max(abs(entops.werner_from_fidelity(entops.fidelity_from_werner(p)) - p) for p in ps)
        fs = np.linspace(0.25, 1, 10_001)
        rt = max(rt, max(abs(entops.fidelity_from_werner(entops.werner_from_fidelity(f)) - f) for f in fs))
        c.check(rt <= 1e-14, f"round trip {rt:.1e}")

        one = entops.purify_pair(1.0, 1.0)
        third = entops.purify_pair(1 / 3, 1 / 3)
        c.check(one[0] == 1.0 and third[0] == 1 / 3, f"fixed points {one[0]!r}, {third[0]!r}")

        grid = np.linspace(0, 1, 2001)[1:-1]
        improved = np.array([entops.purify_pair(p, p)[0] > p for p in grid])
        inside = (grid > 1 / 3) & (grid < 1)
        c.check(np.array_equal(improved, inside), "improvement exactly on (1/3, 1)")

        ys = np.geomspace(1 + 1e-9, 1e6, 500)
        res = max(abs(binary_entropy(entops.dilution_lambda(y)) - 1 / y) for y in ys)
        c.check(res <= 1e-12, f"entropy residual {res:.1e}")

        g1_jump = abs(entops.bell_response_g1(1 + 1e-12) - entops.bell_response_g1(1.0))
        c.check(g1_jump <= 1e-5, f"g1 jump at 1: {g1_jump:.1e}")
        for p0 in (0.5, 0.8, P95):
            jump = abs(entops.werner_response_g2(p0, 1 - 1e-12) - entops.werner_response_g2(p0, 1.0))
            c.check(jump <= 1e-6, f"g2 jump at 1 (p0={p0:.3f}): {jump:.1e}")
        ys = np.geomspace(1e-3, 1e3, 4000)
        mono = bool(np.all(np.diff(entops.bell_response_g1(ys)) <= 0))
        for p0 in (0.5, 0.8, P95):
            mono &= bool(np.all(np.diff(entops.werner_response_g2(p0, ys)) <= 0))
        c.check(mono, "g1/g2 nonincreasing on grids")


# -- 2 ------------------------------------------------------------------------

def test_pump_oracle(request):
    with criterion(request, 2, limit=120) as c:
        for p0, y in itertools.product((0.8, P95), (0.25, 0.5, 0.75)):
            draws = pump_monte_carlo(p0, y, 1000, 100_000, 20261019)
            mean, se = draws.mean(), draws.std(ddof=1) / np.sqrt(len(draws))
            z = (entops.werner_pump(p0, y) - mean) / se
            c.check(abs(z) <= 2, f"p0={p0:.4f} y={y}: z={z:+.2f}")


# -- 3 ------------------------------------------------------------------------

def test_wardrop_characterization(request, we_results):
    we_results, setup = we_results
    with criterion(request, 3, limit=300, setup_time=setup) as c:
        worst_c = worst_spread = worst_excess = worst_seed_gap = 0.0
        all_converged = True
        for game, r0, r1 in we_results:
            rep = eq.verify_wardrop(r0)
            all_converged &= r0.converged and r1.converged
            worst_c = max(worst_c, r0.diagnostics["objective"], r1.diagnostics["objective"])
            worst_spread = max(worst_spread, rep.spread)
            worst_excess = max(worst_excess, rep.excess)
            worst_seed_gap = max(worst_seed_gap, abs(r0.average_fidelity - r1.average_fidelity))
        c.check(all_converged and worst_c <= 1e-8, f"max C {worst_c:.1e}")
        c.check(worst_spread <= 1e-3, f"max used spread {worst_spread:.1e}")
        c.check(worst_excess <= 1e-3, f"max unused excess {worst_excess:.1e}")
        c.check(worst_seed_gap <= 1e-3, f"max seed gap {worst_seed_gap:.1e}")
        c.note(f"{len(we_results)} instances")


# -- 4 ------------------------------------------------------------------------

def test_ne_matches_we(request, we_results):
    we_results, setup = we_results
    with criterion(request, 4, limit=300, setup_time=setup) as c:
        gaps = [abs(eq.greedy_ne(game, 1000).average_fidelity - r0.average_fidelity)
                for game, r0, _ in we_results]
        c.check(max(gaps) <= 0.005, f"max |F_NE - F_WE| {max(gaps):.1e} over {len(gaps)} instances")


# -- 5 ------------------------------------------------------------------------

def test_fixture_reproduction(request):
    with criterion(request, 5, limit=60) as c:
        net = netmodel.load_fixture("braess8")
        game = RoutingGame.build(net, netmodel.demand_for(net, [(3, 6)]))
        scan = ex.braess_scan(net, game.demand, 1, game=game)
        ne = scan.baseline
        c.check(abs(ne.average_fidelity - 0.868) <= 0.002, f"NE {ne.average_fidelity:.4f}")
        c.check(len(ne.used()) == 8, f"NE used paths {len(ne.used())}")
        glob = eq.solve_global(game)
        c.check(abs(glob.average_fidelity - 0.919) <= 0.002, f"global {glob.average_fidelity:.4f}")
        best = scan.best
        c.check(best.edges == ((5, 7),), f"best removal {best.edges}")
        c.check(net.states[net.edge_index(5, 7)].is_bell, "removed edge is Bell")
        post = best.result
        c.check(abs(post.average_fidelity - 0.904) <= 0.002, f"post NE {post.average_fidelity:.4f}")
        c.check(len(post.used()) == 5, f"post used paths {len(post.used())}")


# -- 6 ------------------------------------------------------------------------

def test_ordering_and_fairness(request, fixture_sweep, we_results):
    sweep, sweep_time = fixture_sweep
    we_results, _ = we_results
    with criterion(request, 6, setup_time=sweep_time) as c:
        tol = 1e-6
        bad_order, bad_fair, bad_floor = [], [], []
        net = netmodel.load_fixture("braess8")
        for rec in sweep.records:
            if rec.global_opt < rec.btn - tol or rec.btn < rec.ne - tol:
                bad_order.append(rec.pair)
            if rec.fair < rec.ne - tol:
                bad_fair.append((rec.pair, rec.fair - rec.ne))
        # btN floor, checked on freshly solved fixture and ensemble instances
        games = [RoutingGame.build(net, netmodel.demand_for(net, [p])) for p in [(3, 6), (0, 7), (1, 2)]]
        games += [g for g, _, _ in we_results[:5]]
        for game in games:
            ne = eq.greedy_ne(game)
            btn = eq.solve_btn(game, ne)
            floor = float(eq.fidelity(ne.path_params[ne.used()]).min())
            low = float(btn.path_fidelities[btn.used()].min())
            if low < floor - tol:
                bad_floor.append((game.demand.pairs[0], low - floor))
        c.check(not bad_order, f"global >= btN >= NE on {len(sweep.records)} pairs (violations {bad_order})")
        worst = min((d for _, d in bad_fair), default=0.0)
        c.check(not bad_fair, f"fair >= NE: {len(bad_fair)} violations, worst {worst:.1e}")
        c.check(not bad_floor, f"btN floor on {len(games)} instances (violations {bad_floor})")
        frac = float(np.mean([r.below_ne for r in sweep.records]))
        c.check(abs(frac - 0.365) <= 0.05, f"mass below NE at global optima {frac:.3f}")
        c.note(f"all-pair optima sweep {sweep_time:.0f}s")


# -- 7 ------------------------------------------------------------------------

GRID_RUNS = 20
GRID_PLACEMENTS = 20


def test_braess_existence(request):
    with criterion(request, 7, limit=1800) as c:
        main = ex.ensemble_run(ex.EnsembleConfig(16, 3, 0.675, 0.5, runs=100, master_seed=0))
        c.check(main.mean > 0 and main.mean > 2 * main.se,
                f"F0=0.675: mean dF {main.mean:.2e} (SE {main.se:.1e})")
        control = ex.ensemble_run(ex.EnsembleConfig(16, 3, 0.675, 1.0, runs=100, master_seed=0))
        c.check(control.mean <= 1e-6, f"all-Bell control {control.mean:.1e}")

        # shapes at reduced scale: sampled pairs per network
        def curve(**kw):
            base = dict(n_nodes=16, degree=3, f0=0.675, bell_fraction=0.5, runs=GRID_RUNS,
                        master_seed=1, placements=GRID_PLACEMENTS)
            base.update(kw)
            return ex.ensemble_run(ex.EnsembleConfig(**base)).mean

        f0s = [0.575, 0.675, 0.775, 0.875, 0.975]
        by_f0 = [curve(f0=f) for f in f0s]
        peak = int(np.argmax(by_f0))
        c.check(0 < peak < len(f0s) - 1,
                "F0 curve " + ",".join(f"{v:.1e}" for v in by_f0) + f" peak at {f0s[peak]}")
        bells = [0.0, 0.25, 0.5, 0.75, 1.0]
        by_b = [curve(bell_fraction=b) for b in bells]
        peak = int(np.argmax(by_b))
        c.check(0 < peak < len(bells) - 1,
                "bell curve " + ",".join(f"{v:.1e}" for v in by_b) + f" peak at {bells[peak]}")
        c.note(f"grids: {GRID_RUNS} networks x {GRID_PLACEMENTS} pairs")


# -- 8 ------------------------------------------------------------------------

MULTI_RUNS = 100
MULTI_PLACEMENTS = 8


def test_multi_removal_and_multi_pair(request):
    with criterion(request, 8, limit=2700) as c:
        base = dict(n_nodes=16, degree=3, f0=0.675, bell_fraction=0.5, runs=25, master_seed=2, placements=1)
        stats = {r: ex.ensemble_run(ex.EnsembleConfig(removal_size=r, **base)) for r in (1, 2, 3)}
        v = {r: np.array([rec.improvements[0] for rec in stats[r].records]) for r in stats}
        c.check(bool(np.all(v[2] >= v[1])), f"r<=2 >= r=1 on all {len(v[1])} instances")
        c.check(bool(np.all(v[3] >= v[2])), f"r<=3 >= r<=2 on all {len(v[1])} instances")
        c.note("means " + ", ".join(f"r{r}={stats[r].mean:.2e}" for r in (1, 2, 3)))

        means = []
        for d in (1, 2, 3):
            cfg = ex.EnsembleConfig(16, 3, 0.675, 0.5, runs=MULTI_RUNS, master_seed=3, d=d,
                                    placements=MULTI_PLACEMENTS)
            means.append(ex.multi_pair_run(cfg).mean)
        c.check(means[0] <= means[1] <= means[2],
                "d=1..3 mean dF " + ", ".join(f"{m:.2e}" for m in means))


# -- 9 ------------------------------------------------------------------------

def small_networks():
    """Ten hand-built games with at most four paths per commodity and six users."""
    B = EdgeState.bell()

    def W(f):
        return EdgeState.werner((4 * f - 1) / 3)

    cases = [
        # two parallel Werner routes
        (4, [(0, 1), (1, 3), (0, 2), (2, 3)], [W(0.9), W(0.9), W(0.8), W(0.95)], [(0, 3)], 3),
        # square with a Bell diagonal: the Wheatstone network, four paths
        (4, [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)], [W(0.9), B, B, B, W(0.9)], [(0, 3)], 3),
        (4, [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)], [W(0.8), W(0.95), B, W(0.95), W(0.8)], [(0, 3)], 2),
        # triangle, direct edge versus two-hop detour
        (3, [(0, 1), (0, 2), (1, 2)], [W(0.85), B, B], [(0, 1)], 3),
        (3, [(0, 1), (0, 2), (1, 2)], [B, W(0.7), W(0.99)], [(0, 1)], 3),
        # single Bell route (trivial)
        (3, [(0, 1), (1, 2)], [B, B], [(0, 2)], 5),
        # three parallel two-hop routes
        (5, [(0, 1), (0, 2), (0, 3), (1, 4), (2, 4), (3, 4)],
         [B, W(0.9), W(0.8), W(0.9), B, B], [(0, 4)], 2),
        # two commodities sharing a bottleneck
        (4, [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)], [B, W(0.9), W(0.9), B, W(0.85)], [(0, 3), (1, 2)], 2),
        # lattice corner pair
        (4, [(0, 1), (0, 2), (1, 3), (2, 3)], [B, W(0.75), W(0.75), B], [(0, 3)], 3),
        # pentagon
        (5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)], [W(0.9), B, W(0.9), B, W(0.7)], [(0, 2)], 3),
    ]
    out = []
    for n, edges, states, pairs, budget in cases:
        net = netmodel.make_network(n, edges, states, budget=budget)
        out.append(RoutingGame.build(net, netmodel.demand_for(net, pairs)))
    return out


def direct_edge_value(net, i, load):
    """Edge parameter from the closed-form responses, independent of the game's table."""
    y = load / net.budget
    s = net.states[i]
    return float(entops.bell_response_g1(y)) if s.is_bell else float(entops.werner_response_g2(s.p0, y))


def test_discrete_oracle(request):
    with criterion(request, 9, limit=60) as c:
        games = small_networks()
        verified = confirmed = 0
        shapes = []
        for game in games:
            users = game.users(game.net.budget)
            sizes = [len(b) for b in game.blocks()]
            shapes.append(f"{max(sizes)}p/{users.sum()}u")
            if max(sizes) > 4 or users.sum() > 6:
                c.check(False, f"case exceeds 4 paths / 6 users: {sizes}, {users}")
            res = eq.greedy_ne(game)
            if eq.verify_ne(game, res.discrete).passed:
                verified += 1
            stable = exhaustive_pure_equilibria(
                game.edge_paths(), game.commodity.tolist(), users.tolist(),
                lambda i, load, net=game.net: direct_edge_value(net, i, load))
            if tuple(res.discrete.counts(game.n_paths).tolist()) in stable:
                confirmed += 1
        c.check(verified == len(games), f"verify_ne {verified}/{len(games)}")
        c.check(confirmed == len(games), f"exhaustive search confirms {confirmed}/{len(games)}")
        c.note("cases " + " ".join(shapes))


# -- 10 -----------------------------------------------------------------------

def test_cli_determinism(request, tmp_path, capsysbinary, monkeypatch):
    with criterion(request, 10) as c:
        net_path = tmp_path / "net.json"
        cli.main(["gen", "--nodes", "8", "--degree", "3", "--f0", "0.75", "--seed", "5",
                  "--out", str(net_path)])
        commands = [
            ["gen", "--nodes", "16", "--degree", "3", "--f0-gauss", "0.75,0.1", "--seed", "4"],
            ["fixture", "braess8"],
            ["solve", "--net", "fixture:braess8", "--a", "3", "--b", "6", "--solver", "ne"],
            ["solve", "--net", "fixture:braess8", "--a", "3", "--b", "6", "--solver", "global", "--seed", "2"],
            ["solve", "--net", str(net_path), "--pairs", "0:7,1:6", "--solver", "we"],
            ["solve", "--net", str(net_path), "--a", "0", "--b", "7", "--solver", "btn"],
            ["solve", "--net", str(net_path), "--a", "0", "--b", "7", "--solver", "fair"],
            ["scan", "--net", "fixture:braess8", "--a", "3", "--b", "6", "--removals", "2"],
            ["scan", "--net", "fixture:braess8", "--all-pairs", "--format", "csv"],
            ["sweep", "--nodes", "16", "--runs", "4", "--placements", "2", "--seed", "9"],
            ["sweep", "--nodes", "12", "--runs", "3", "--d", "2", "--placements", "2", "--format", "csv"],
        ]
        # gen and fixture take no --threads flag; they see the environment default
        unthreaded = {"gen", "fixture"}
        mismatched = []
        for argv in commands:
            outputs = []
            for threads in (1, 1, 8, 8):
                monkeypatch.setenv(cli.THREADS_ENV, str(threads))
                extra = [] if argv[0] in unthreaded else ["--threads", str(threads)]
                code = cli.main(argv + extra)
                out = capsysbinary.readouterr().out
                outputs.append((code, normalize(out)))
            if any(o != outputs[0] for o in outputs[1:]):
                mismatched.append(" ".join(argv[:2]))
        c.check(not mismatched, f"{len(commands)} commands x threads 1,1,8,8 identical "
                                f"(mismatches {mismatched})")


def normalize(raw: bytes):
    try:
        return cli.strip_timestamp(json.loads(raw))
    except ValueError:
        return raw
