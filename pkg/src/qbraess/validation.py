"""Input checks shared by the command line and the estimator wrappers.

Each helper returns the normalized value or raises :class:`ValueError` (or
:class:`~qbraess.netmodel.NetworkError`) with a one-line message naming the
offending field.
"""
from __future__ import annotations

from typing import Iterable

from .equilibria import Solver
from .netmodel import GaussianFidelity, Network, NetworkError

SOLVER_ALIASES = {
    "ne": Solver.GREEDY_NE,
    "we": Solver.WARDROP,
    "global": Solver.GLOBAL,
    "btn": Solver.BTN,
    "fair": Solver.FAIR,
}


def check_int(name: str, value, minimum: int | None = None, maximum: int | None = None) -> int:
    if isinstance(value, bool) or int(value) != value:
        raise ValueError(f"{name}: expected an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ValueError(f"{name}: must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ValueError(f"{name}: must be <= {maximum}, got {value}")
    return value


def check_fraction(name: str, value) -> float:
    value = float(value)
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"{name}: must lie in [0, 1], got {value}")
    return value


def check_f0(value) -> float:
    """Edge fidelity of a Werner preparation; must be purifiable (``0.5 < F0 < 1``)."""
    value = float(value)
    if not (0.5 < value < 1.0):
        raise ValueError(f"f0: must lie in (0.5, 1), got {value}")
    return value


def check_gaussian(mean, sigma) -> GaussianFidelity:
    mean, sigma = float(mean), float(sigma)
    if not (0.5 < mean < 1.0):
        raise ValueError(f"f0-gauss: mean must lie in (0.5, 1), got {mean}")
    if not sigma > 0.0:
        raise ValueError(f"f0-gauss: sigma must be positive, got {sigma}")
    return GaussianFidelity(mean, sigma)


def check_solver(value, allowed: Iterable[Solver] | None = None) -> Solver:
    if isinstance(value, Solver):
        solver = value
    elif str(value).lower() in SOLVER_ALIASES:
        solver = SOLVER_ALIASES[str(value).lower()]
    else:
        try:
            solver = Solver(value)
        except ValueError:
            raise ValueError(f"solver: unknown solver {value!r}") from None
    if allowed is not None and solver not in tuple(allowed):
        names = ", ".join(k for k, v in SOLVER_ALIASES.items() if v in tuple(allowed))
        raise ValueError(f"solver: {solver.value} not supported here (choose from {names})")
    return solver


def check_pair(net: Network, a, b) -> tuple[int, int]:
    a = check_int("a", a)
    b = check_int("b", b)
    for name, node in (("a", a), ("b", b)):
        if not (0 <= node < net.n_nodes):
            raise NetworkError(f"{name}: node {node} outside [0, {net.n_nodes})")
    if a == b:
        raise NetworkError(f"a, b: Alice and Bob must differ (both {a})")
    return a, b


def parse_pairs(text: str) -> list[tuple[int, int]]:
    """Parse ``"A1:B1,A2:B2"``."""
    pairs = []
    for item in str(text).split(","):
        parts = item.strip().split(":")
        if len(parts) != 2:
            raise ValueError(f"pairs: expected A:B, got {item!r}")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ValueError(f"pairs: non-integer node in {item!r}") from None
    return pairs


def parse_grid(name: str, text: str) -> list[float]:
    """Parse an inclusive ``start:stop:step`` grid."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ValueError(f"{name}: expected start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise ValueError(f"{name}: non-numeric entry in {text!r}") from None
    if step <= 0 or stop < start:
        raise ValueError(f"{name}: need step > 0 and stop >= start, got {text!r}")
    n = int(round((stop - start) / step))
    if abs(start + n * step - stop) > 1e-9 * max(1.0, abs(stop)):
        raise ValueError(f"{name}: step does not divide the range in {text!r}")
    return [round(start + i * step, 12) for i in range(n + 1)]
