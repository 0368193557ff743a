"""Werner-parameter bookkeeping for swapping, dilution and purification.

Every quantity here is a Werner parameter ``p`` (or fidelity ``F = (3p+1)/4``).
Edges respond to a normalized load ``y = m / M``:

* Bell edges (``g1``): surplus copies are useless (``y <= 1`` gives 1); a
  deficit is covered by entropy-conserving dilution into weaker pure states.
* Werner edges (``g2``): a deficit spreads the copies thin (``p0 / y``); a
  surplus is pumped with BBPSSW recurrence, modelled by a deterministic
  expected-value pump tabulated once per ``p0``.
"""
from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels

PUMP_REFERENCE_WEIGHT = 10_000.0
TABLE_Y_MIN = 1e-3
TABLE_POINTS = 256
BISECT_TOL = 1e-12
BISECT_MAX_ITER = 200
_MERGE_TOL = 1e-12


def _check_unit(name, value, lo=0.0, hi=1.0):
    arr = np.asarray(value, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < lo) or np.any(arr > hi):
        raise ValueError(f"{name}={value} outside [{lo}, {hi}]")
    return arr


def fidelity_from_werner(p):
    arr = _check_unit("p", p)
    out = (3.0 * arr + 1.0) / 4.0
    return float(out) if arr.ndim == 0 else out


def werner_from_fidelity(f):
    arr = _check_unit("F", f, 0.25, 1.0)
    out = (4.0 * arr - 1.0) / 3.0
    return float(out) if arr.ndim == 0 else out


def pure_state_werner(lambda0: float) -> float:
    """Werner parameter of ``sqrt(l)|00> + sqrt(1-l)|11>`` after twirling."""
    _check_unit("lambda0", lambda0)
    lam = float(lambda0)
    return (4.0 * np.sqrt(lam * (1.0 - lam)) + 1.0) / 3.0


def binary_entropy(lam):
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -lam * np.log2(lam) - (1.0 - lam) * np.log2(1.0 - lam)
    return np.where((lam <= 0.0) | (lam >= 1.0), 0.0, h)


def _dilution_lambda_array(y: np.ndarray) -> np.ndarray:
    target = 1.0 / y
    lo = np.zeros_like(target)
    hi = np.full_like(target, 0.5)
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        h = binary_entropy(mid)
        below = h < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(np.abs(binary_entropy(0.5 * (lo + hi)) - target) <= BISECT_TOL) or np.all(hi - lo < 1e-17):
            break
    lam = 0.5 * (lo + hi)
    return np.where(y == 1.0, 0.5, lam)


def dilution_lambda(y: float) -> float:
    """Schmidt coefficient ``l <= 1/2`` with binary entropy ``H(l) = 1/y``.

    ``M`` Bell pairs carry ``M`` ebits; spreading them over ``m = yM`` pure
    pairs leaves ``1/y`` ebits each.
    """
    if not np.isfinite(y) or y < 1.0:
        raise ValueError(f"dilution needs y >= 1, got {y}")
    return float(_dilution_lambda_array(np.array([float(y)]))[0])


def bell_response_g1(y):
    """Expected Werner parameter on a Bell edge at normalized load ``y``."""
    arr = np.asarray(y, dtype=float)
    if np.any(~(arr > 0.0)):
        raise ValueError(f"load must be positive, got {y}")
    out = np.ones(arr.shape)
    over = arr > 1.0
    if np.any(over):
        out[over] = _kernels.g1_array(np.ascontiguousarray(arr[over]))
    return float(out) if np.ndim(y) == 0 else out


def purify_pair(p1: float, p2: float) -> tuple[float, float]:
    """One BBPSSW round: ``(output parameter, success probability)``."""
    _check_unit("p1", p1)
    _check_unit("p2", p2)
    prod = p1 * p2
    return (p1 + p2 + 4.0 * prod) / (3.0 + 3.0 * prod), (1.0 + prod) / 2.0


def _pump_trajectory(p0: float, thresholds: Sequence[float]) -> list[float]:
    """Run the expected-value pump once, reading the ensemble average at each
    threshold (descending normalized weights).

    Buckets are ``[parameter, weight]`` in ascending parameter order.  Outputs
    of successive draws never decrease, so new buckets always go to the back.
    """
    W = PUMP_REFERENCE_WEIGHT
    buckets = deque([[p0, W]])
    total = W
    out = []
    for y in thresholds:
        target = y * W
        while total > target and total >= 2.0:
            front = buckets[0]
            if front[1] >= 2.0:
                p1 = p2 = front[0]
                front[1] -= 2.0
                if front[1] <= _MERGE_TOL:
                    buckets.popleft()
            else:
                units = []
                for _ in range(2):
                    need, acc = 1.0, 0.0
                    while need > _MERGE_TOL:
                        b = buckets[0]
                        take = min(need, b[1])
                        acc += take * b[0]
                        b[1] -= take
                        need -= take
                        if b[1] <= _MERGE_TOL:
                            buckets.popleft()
                    units.append(acc)
                p1, p2 = units
            prod = p1 * p2
            p = (p1 + p2 + 4.0 * prod) / (3.0 + 3.0 * prod)
            q = (1.0 + prod) / 2.0
            if buckets and abs(buckets[-1][0] - p) <= _MERGE_TOL:
                buckets[-1][1] += q
            else:
                buckets.append([p, q])
            total += q - 2.0
        if total >= W:
            out.append(p0)
        else:
            ws = sum(b[1] for b in buckets)
            out.append(sum(b[0] * b[1] for b in buckets) / ws)
    return out


def werner_pump(p0: float, y: float) -> float:
    """Weight-averaged parameter after pumping Werner copies down to fraction ``y``.

    Deterministic mean-field version of recurrence purification on the
    lowest-parameter states: each draw consumes two units and returns ``q``
    units at the purified parameter, until the remaining weight is at most
    ``y`` of the start.
    """
    if not (1.0 / 3.0 < p0 < 1.0):
        raise ValueError(f"p0={p0} is not purifiable (need 1/3 < p0 < 1)")
    if not (0.0 < y <= 1.0):
        raise ValueError(f"y={y} outside (0, 1]")
    return _pump_trajectory(float(p0), [float(y)])[0]


@dataclass(frozen=True)
class EdgeResponseTable:
    """Tabulated Werner-edge response on a geometric load grid ending at 1."""

    p0: float
    grid: np.ndarray
    values: np.ndarray

    @classmethod
    def build(cls, p0: float, n_points: int = TABLE_POINTS, y_min: float = TABLE_Y_MIN) -> "EdgeResponseTable":
        if not (1.0 / 3.0 < p0 < 1.0):
            raise ValueError(f"p0={p0} is not purifiable (need 1/3 < p0 < 1)")
        grid = np.geomspace(y_min, 1.0, n_points)
        grid[-1] = 1.0
        values = np.array(_pump_trajectory(float(p0), grid[::-1]))[::-1]
        values[-1] = p0
        grid.setflags(write=False)
        values.setflags(write=False)
        return cls(float(p0), grid, values)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.interp(np.clip(y, self.grid[0], 1.0), self.grid, self.values)


_TABLES: dict[float, EdgeResponseTable] = {}
_TABLES_LOCK = threading.Lock()


def response_table(p0: float) -> EdgeResponseTable:
    """Memoized :meth:`EdgeResponseTable.build`."""
    key = float(p0)
    table = _TABLES.get(key)
    if table is None:
        with _TABLES_LOCK:
            table = _TABLES.get(key)
            if table is None:
                table = EdgeResponseTable.build(key)
                _TABLES[key] = table
    return table


def werner_response_g2(p0: float, y, table: EdgeResponseTable | None = None):
    """Expected Werner parameter on a Werner edge at normalized load ``y``."""
    if table is None:
        table = response_table(p0)
    elif table.p0 != float(p0):
        raise ValueError(f"table built for p0={table.p0}, asked for p0={p0}")
    arr = np.asarray(y, dtype=float)
    if np.any(~(arr > 0.0)):
        raise ValueError(f"load must be positive, got {y}")
    out = np.where(arr >= 1.0, p0 / np.maximum(arr, 1.0), table(np.minimum(arr, 1.0)))
    return float(out) if np.ndim(y) == 0 else out


@dataclass(frozen=True)
class ResponseArrays:
    """Flat per-edge response description consumed by the compiled kernels."""

    is_bell: np.ndarray
    p0: np.ndarray
    table_id: np.ndarray
    grid: np.ndarray
    values: np.ndarray

    @classmethod
    def for_network(cls, net) -> "ResponseArrays":
        is_bell = net.bell_mask()
        p0 = net.p0_array()
        werner_p0 = sorted(set(p0[~is_bell].tolist()))
        table_id = np.zeros(net.n_edges, dtype=np.int64)
        for i, v in enumerate(p0):
            if not is_bell[i]:
                table_id[i] = werner_p0.index(v)
        tables = [response_table(v) for v in werner_p0]
        grid = tables[0].grid if tables else np.geomspace(TABLE_Y_MIN, 1.0, TABLE_POINTS)
        values = np.array([t.values for t in tables]) if tables else np.ones((1, len(grid)))
        return cls(is_bell, p0, table_id, np.ascontiguousarray(grid), np.ascontiguousarray(values))

    def __call__(self, loads) -> np.ndarray:
        loads = np.ascontiguousarray(loads, dtype=float)
        return _kernels.edge_values(loads, self.is_bell, self.p0, self.table_id, self.grid, self.values)


def edge_parameters(net, loads) -> np.ndarray:
    """Per-edge response ``g_alpha(y_i)`` for all edges of ``net``.

    Zero loads are evaluated at the smallest tabulated load (Werner) or as an
    unloaded Bell edge; such edges only matter to hypothetical users.
    """
    loads = np.asarray(loads, dtype=float)
    if loads.shape != (net.n_edges,):
        raise ValueError(f"expected {net.n_edges} loads, got shape {loads.shape}")
    if np.any(loads < 0):
        raise ValueError("loads must be nonnegative")
    return ResponseArrays.for_network(net)(loads)


def path_parameter(path: Sequence[int], loads, net) -> float:
    """End-to-end Werner parameter after swapping along ``path`` (edge indices)."""
    path = list(path)
    if not path:
        raise ValueError("empty path")
    loads = np.asarray(loads, dtype=float)
    if len(loads) != net.n_edges:
        raise ValueError("missing loads for some edges")
    sub = loads[path]
    if np.any(~(sub > 0.0)):
        raise ValueError("every edge on the path needs a positive load")
    params = edge_parameters(net, np.where(loads > 0, loads, 1.0))
    return float(np.prod(np.sort(params[path])))
