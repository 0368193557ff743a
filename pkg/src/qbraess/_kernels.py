"""Compiled inner loops of the discrete (finite-M) routing game."""
import numba
import numpy as np

# Fidelity = 0.75 * Werner parameter + 0.25
_FID = 0.75


@numba.njit(cache=True)
def _path_value(ptr, edges, j, G, m, shift):
    v = 1.0
    for t in range(ptr[j], ptr[j + 1]):
        i = edges[t]
        v *= G[i, m[i] + shift]
    return v


@numba.njit(cache=True)
def _deviation_value(ptr, edges, k, G, m, mark):
    # fidelity parameter of a user joining path k, leaving the marked path
    v = 1.0
    for t in range(ptr[k], ptr[k + 1]):
        i = edges[t]
        if mark[i]:
            v *= G[i, m[i]]
        else:
            v *= G[i, m[i] + 1]
    return v


@numba.njit(cache=True)
def _heap_less(val, idx, a, b):
    # max-heap order on (value, -index): larger value first, lower index on ties
    if val[a] != val[b]:
        return val[a] > val[b]
    return idx[a] < idx[b]


@numba.njit(cache=True)
def _sift_down(val, idx, lo, hi, pos):
    while True:
        left = lo + 2 * (pos - lo) + 1
        if left >= hi:
            return
        best = left
        right = left + 1
        if right < hi and _heap_less(val, idx, right, left):
            best = right
        if _heap_less(val, idx, best, pos):
            val[best], val[pos] = val[pos], val[best]
            idx[best], idx[pos] = idx[pos], idx[best]
            pos = best
        else:
            return


@numba.njit(cache=True)
def greedy_insert(ptr, edges, commodity, users, G, n_edges):
    """Round-robin insertion of users on their currently best path.

    Edge responses never increase with load, so a stored path value is an
    upper bound on its current one.  Each commodity keeps a max-heap of stored
    values; the top is re-evaluated until it stays on top, which yields the
    exact best path (lowest index on ties) without scanning every path.
    """
    n_paths = commodity.shape[0]
    n_comm = users.shape[0]
    counts = np.zeros(n_paths, dtype=np.int64)
    m = np.zeros(n_edges, dtype=np.int64)
    lo = np.zeros(n_comm, dtype=np.int64)
    hi = np.zeros(n_comm, dtype=np.int64)
    for c in range(n_comm):
        lo[c] = n_paths
    for j in range(n_paths):
        c = commodity[j]
        if j < lo[c]:
            lo[c] = j
        if j + 1 > hi[c]:
            hi[c] = j + 1
    val = np.empty(n_paths)
    idx = np.empty(n_paths, dtype=np.int64)
    for j in range(n_paths):
        val[j] = _path_value(ptr, edges, j, G, m, 1)
        idx[j] = j
    for c in range(n_comm):
        for pos in range(hi[c] - 1, lo[c] - 1, -1):
            _sift_down(val, idx, lo[c], hi[c], pos)
    remaining = users.copy()
    left = remaining.sum()
    while left > 0:
        for c in range(n_comm):
            if remaining[c] == 0:
                continue
            top = lo[c]
            while True:
                v = _path_value(ptr, edges, idx[top], G, m, 1)
                if v == val[top]:
                    break
                val[top] = v
                _sift_down(val, idx, lo[c], hi[c], top)
            best = idx[top]
            counts[best] += 1
            for t in range(ptr[best], ptr[best + 1]):
                m[edges[t]] += 1
            remaining[c] -= 1
            left -= 1
    return counts, m


@numba.njit(cache=True)
def best_response_sweeps(ptr, edges, commodity, counts, m, G, eps, max_sweeps):
    """Move single users to strictly better paths until no move exceeds ``eps``.

    Users are scanned grouped by current path in index order.  Returns
    ``(sweeps, moves, converged)``; ``counts`` and ``m`` are updated in place.
    """
    n_paths = commodity.shape[0]
    mark = np.zeros(m.shape[0], dtype=np.bool_)
    sweeps = 0
    moves = 0
    while sweeps < max_sweeps:
        sweeps += 1
        moved = False
        for j in range(n_paths):
            while counts[j] > 0:
                for t in range(ptr[j], ptr[j + 1]):
                    mark[edges[t]] = True
                cur = _path_value(ptr, edges, j, G, m, 0)
                best = -1
                best_v = cur
                for k in range(n_paths):
                    if k == j or commodity[k] != commodity[j]:
                        continue
                    v = _deviation_value(ptr, edges, k, G, m, mark)
                    if v > best_v:
                        best_v = v
                        best = k
                for t in range(ptr[j], ptr[j + 1]):
                    mark[edges[t]] = False
                if best < 0 or _FID * (best_v - cur) <= eps:
                    break
                counts[j] -= 1
                counts[best] += 1
                for t in range(ptr[j], ptr[j + 1]):
                    m[edges[t]] -= 1
                for t in range(ptr[best], ptr[best + 1]):
                    m[edges[t]] += 1
                moves += 1
                moved = True
        if not moved:
            return sweeps, moves, True
    return sweeps, moves, False


@numba.njit(cache=True)
def max_deviation_gain(ptr, edges, commodity, counts, m, G):
    """Largest fidelity gain any single user obtains by switching paths.

    Returns ``(gain, from_path, to_path)``; ``gain`` is ``-inf`` when no user
    has an alternative.
    """
    n_paths = commodity.shape[0]
    mark = np.zeros(m.shape[0], dtype=np.bool_)
    gain = -np.inf
    src = -1
    dst = -1
    for j in range(n_paths):
        if counts[j] == 0:
            continue
        for t in range(ptr[j], ptr[j + 1]):
            mark[edges[t]] = True
        cur = _path_value(ptr, edges, j, G, m, 0)
        for k in range(n_paths):
            if k == j or commodity[k] != commodity[j]:
                continue
            d = _FID * (_deviation_value(ptr, edges, k, G, m, mark) - cur)
            if d > gain:
                gain = d
                src = j
                dst = k
        for t in range(ptr[j], ptr[j + 1]):
            mark[edges[t]] = False
    return gain, src, dst


@numba.njit(cache=True)
def path_values(ptr, edges, G, m):
    n_paths = ptr.shape[0] - 1
    out = np.empty(n_paths)
    for j in range(n_paths):
        out[j] = _path_value(ptr, edges, j, G, m, 0)
    return out


@numba.njit(cache=True)
def _h2(lam):
    if lam <= 0.0 or lam >= 1.0:
        return 0.0
    return -lam * np.log2(lam) - (1.0 - lam) * np.log2(1.0 - lam)


@numba.njit(cache=True)
def dilution_lambda_scalar(y):
    """Safeguarded Newton solve of ``H(l) = 1/y`` on ``(0, 1/2]``."""
    if y <= 1.0:
        return 0.5
    h = 1.0 / y
    lo = 0.0
    hi = 0.5
    lam = 0.25
    for _ in range(200):
        res = _h2(lam) - h
        if abs(res) <= 1e-14:
            break
        if res < 0.0:
            lo = lam
        else:
            hi = lam
        d = np.log2((1.0 - lam) / lam)
        nxt = lam - res / d if d > 0.0 else 0.5 * (lo + hi)
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        if hi - lo < 1e-18:
            break
        lam = nxt
    return lam


@numba.njit(cache=True)
def g1_scalar(y):
    if y <= 1.0:
        return 1.0
    lam = dilution_lambda_scalar(y)
    return (4.0 * np.sqrt(lam * (1.0 - lam)) + 1.0) / 3.0


@numba.njit(cache=True)
def g1_array(y):
    out = np.empty(y.shape[0])
    for i in range(y.shape[0]):
        out[i] = g1_scalar(y[i])
    return out


@numba.njit(cache=True)
def edge_values(loads, is_bell, p0, table_id, grid, values):
    """Per-edge Werner parameter; Werner rows use ``values[table_id[i]]`` on ``grid``."""
    n = loads.shape[0]
    out = np.empty(n)
    y_min = grid[0]
    for i in range(n):
        y = loads[i]
        if is_bell[i]:
            out[i] = g1_scalar(y)
        elif y >= 1.0:
            out[i] = p0[i] / y
        else:
            if y < y_min:
                y = y_min
            row = values[table_id[i]]
            k = np.searchsorted(grid, y) - 1
            if k < 0:
                k = 0
            if k >= grid.shape[0] - 1:
                out[i] = row[grid.shape[0] - 1]
            else:
                w = (y - grid[k]) / (grid[k + 1] - grid[k])
                out[i] = row[k] + w * (row[k + 1] - row[k])
    return out


@numba.njit(cache=True)
def flow_state(x, ptr, edges, n_edges, is_bell, p0, table_id, grid, values):
    """Edge loads, edge parameters and path parameters for path flows ``x``."""
    n_paths = ptr.shape[0] - 1
    loads = np.zeros(n_edges)
    for j in range(n_paths):
        for t in range(ptr[j], ptr[j + 1]):
            loads[edges[t]] += x[j]
    g = edge_values(loads, is_bell, p0, table_id, grid, values)
    p = np.empty(n_paths)
    for j in range(n_paths):
        v = 1.0
        for t in range(ptr[j], ptr[j + 1]):
            v *= g[edges[t]]
        p[j] = v
    return loads, g, p


# -- continuous objectives -------------------------------------------------------
OBJ_WARDROP = 0
OBJ_GLOBAL = 1
OBJ_BTN = 2
OBJ_FAIR = 3


@numba.njit(cache=True)
def objective_value(kind, x, ptr, edges, n_edges, commodity, totals,
                    is_bell, p0, table_id, grid, values, a, b):
    loads, g, p = flow_state(x, ptr, edges, n_edges, is_bell, p0, table_id, grid, values)
    n_paths = x.shape[0]
    n_comm = totals.shape[0]
    sums = np.zeros(n_comm)
    for j in range(n_paths):
        sums[commodity[j]] += p[j] * x[j]
    if kind == OBJ_WARDROP:
        c = 0.0
        for j in range(n_paths):
            pbar = sums[commodity[j]] / totals[commodity[j]]
            d = (pbar - p[j]) * (pbar - p[j])
            if p[j] >= pbar:
                c += d
            else:
                c += d * x[j]
        return c
    avg = sums.sum() / totals.sum()
    if kind == OBJ_GLOBAL:
        return -avg
    pen = 0.0
    if kind == OBJ_BTN:
        for j in range(n_paths):
            s = a - p[j]
            if s > 0.0:
                pen += x[j] * s * s
        return -avg + b * pen
    for j in range(n_paths):
        pen += x[j] * (p[j] - avg) * (p[j] - avg)
    return -avg + a * pen


@numba.njit(cache=True)
def exchange_search(kind, x0, ptr, edges, n_edges, commodity, totals,
                    is_bell, p0, table_id, grid, values, a, b, step, tol, max_evals):
    """Compiled twin of ``optimize._exchange_search`` for the game objectives."""
    x = x0.copy()
    n = x.shape[0]
    f = objective_value(kind, x, ptr, edges, n_edges, commodity, totals, is_bell, p0, table_id,
                        grid, values, a, b)
    evals = 1
    h = step
    trial = x.copy()
    while h >= tol:
        improved = False
        for j in range(n):
            for k in range(n):
                if k == j or commodity[k] != commodity[j] or x[j] <= 0.0:
                    continue
                t = min(h, x[j])
                while True:
                    for i in range(n):
                        trial[i] = x[i]
                    trial[j] -= t
                    trial[k] += t
                    if trial[j] < 0.0:
                        trial[j] = 0.0
                    ft = objective_value(kind, trial, ptr, edges, n_edges, commodity, totals, is_bell,
                                         p0, table_id, grid, values, a, b)
                    evals += 1
                    if ft < f:
                        for i in range(n):
                            x[i] = trial[i]
                        f = ft
                        improved = True
                        if x[j] <= 0.0 or evals >= max_evals:
                            break
                        t = min(2.0 * t, x[j])
                    else:
                        break
                if evals >= max_evals:
                    return x, f, evals, False
        if not improved:
            h *= 0.5
    return x, f, evals, True
