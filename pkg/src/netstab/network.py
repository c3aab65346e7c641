"""Static network structure: cells, turning/exit rates, and acyclicity tools.

A network is a directed graph on ``n`` cells (0-based in code, printed 1-based
in messages).  ``P[i, j]`` is the fixed fraction of cell ``i``'s outflow routed
to cell ``j`` and ``Qexit[i]`` the fraction leaving the network at ``i``;
conservation requires each row of ``P`` plus the exit fraction to sum to one.
Entries of ``P`` at or below ``EDGE_TOL`` are treated as absent edges.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError

EDGE_TOL = 1e-15
CHECK_TOL = 1e-12

_NETWORK_FIELDS = ("n", "a", "P", "Qexit", "mu", "vmax")


class AcyclicityError(ValueError):
    """Raised when a routing graph that must be acyclic contains a cycle."""

    def __init__(self, cycle: tuple[int, ...]):
        self.cycle = tuple(int(i) for i in cycle)
        pretty = " -> ".join(str(i + 1) for i in self.cycle + self.cycle[:1])
        super().__init__(f"routing graph contains a cycle (cells {pretty})")


@dataclass(frozen=True)
class Violation:
    """One violated structural constraint, with its location and residual."""

    constraint: str
    index: object  # int cell index, (i, j) edge, or None for global checks
    residual: float
    message: str


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class NetworkSpec:
    """Immutable description of the network's cells and routing.

    Attributes
    ----------
    n : int
        Number of cells.
    a : (n,) array
        Storage capacities in vehicles.
    P : (n, n) array
        Turning rates; ``P[i, j]`` routes that fraction of cell ``i``'s
        outflow into cell ``j``.
    Qexit : (n,) array
        Per-cell exit fractions.
    mu : (n,) array
        Uncongested density thresholds in vehicles.
    vmax : (n,) array
        External-inflow bounds (veh/step) used by the supply-margin audit.
    """

    n: int
    a: np.ndarray
    P: np.ndarray
    Qexit: np.ndarray
    mu: np.ndarray
    vmax: np.ndarray
    # Adjacency caches; predecessors are stored highest-index-first, which is
    # the junction priority order used by the dynamics.
    successors: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    predecessors: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise DimensionError("cell count must be a positive integer")
        object.__setattr__(self, "n", n)
        for name in ("a", "Qexit", "mu", "vmax"):
            arr = _frozen_array(getattr(self, name))
            if arr.shape != (n,):
                raise DimensionError(f"{name} must have shape ({n},), got {arr.shape}")
            object.__setattr__(self, name, arr)
        P = _frozen_array(self.P)
        if P.shape != (n, n):
            raise DimensionError(f"P must have shape ({n}, {n}), got {P.shape}")
        object.__setattr__(self, "P", P)
        succs = []
        preds = [[] for _ in range(n)]
        for i in range(n):
            row = tuple(int(j) for j in np.nonzero(P[i] > EDGE_TOL)[0])
            succs.append(row)
            for j in row:
                preds[j].append(i)
        object.__setattr__(self, "successors", tuple(succs))
        object.__setattr__(
            self, "predecessors", tuple(tuple(sorted(p, reverse=True)) for p in preds)
        )


def validate_spec(spec: NetworkSpec) -> list[Violation]:
    """Check every NetworkSpec value constraint; return all violations found.

    An empty report means the network is structurally sound within ``CHECK_TOL``.
    Dimension mismatches never reach this function: they raise
    :class:`DimensionError` at construction.
    """
    out: list[Violation] = []
    n = spec.n
    for i in range(n):
        if spec.P[i, i] > EDGE_TOL:
            out.append(
                Violation(
                    "zero_diagonal", (i, i), float(spec.P[i, i]),
                    f"cell {i + 1}: self-loop turning rate {spec.P[i, i]:.6g} must be 0",
                )
            )
    bad = np.argwhere((spec.P < -CHECK_TOL) | (spec.P > 1 + CHECK_TOL))
    for i, j in bad:
        p = float(spec.P[i, j])
        out.append(
            Violation(
                "rate_range", (int(i), int(j)), max(-p, p - 1.0),
                f"turning rate p[{i + 1},{j + 1}] = {p:.6g} outside [0, 1]",
            )
        )
    row = spec.P.sum(axis=1) + spec.Qexit
    for i in np.nonzero(np.abs(row - 1.0) > CHECK_TOL)[0]:
        out.append(
            Violation(
                "row_sum", int(i), float(abs(row[i] - 1.0)),
                f"cell {i + 1}: turning rates plus exit fraction sum to "
                f"{row[i]:.12g}, expected 1",
            )
        )
    for i in np.nonzero((spec.Qexit < -CHECK_TOL) | (spec.Qexit > 1 + CHECK_TOL))[0]:
        q = float(spec.Qexit[i])
        out.append(
            Violation(
                "exit_range", int(i), max(-q, q - 1.0),
                f"cell {i + 1}: exit fraction {q:.6g} outside [0, 1]",
            )
        )
    for name, arr in (("a", spec.a), ("mu", spec.mu), ("vmax", spec.vmax)):
        for i in np.nonzero(~(arr > 0))[0]:
            out.append(
                Violation(
                    f"{name}_positive", int(i), float(-arr[i]),
                    f"cell {i + 1}: {name} = {arr[i]:.6g} must be positive",
                )
            )
    for i in np.nonzero(~(spec.mu < spec.a))[0]:
        out.append(
            Violation(
                "mu_below_capacity", int(i), float(spec.mu[i] - spec.a[i]),
                f"cell {i + 1}: threshold mu = {spec.mu[i]:.6g} must lie below "
                f"the capacity a = {spec.a[i]:.6g}",
            )
        )
    return out


@dataclass(frozen=True)
class TopologicalOrder:
    """A cell ordering under which the routing matrix is strictly upper triangular."""

    order: tuple[int, ...]  # order[k] = cell placed at position k

    def rank(self) -> np.ndarray:
        """Inverse permutation: rank()[i] is cell i's position in the order."""
        r = np.empty(len(self.order), dtype=int)
        for pos, cell in enumerate(self.order):
            r[cell] = pos
        return r

    def permute(self, M: np.ndarray) -> np.ndarray:
        """Reindex a matrix (or vector) into this ordering."""
        M = np.asarray(M)
        idx = list(self.order)
        if M.ndim == 1:
            return M[idx]
        return M[np.ix_(idx, idx)]


def topological_sort(P: np.ndarray) -> TopologicalOrder:
    """Order the cells so that all routing goes from earlier to later cells.

    Kahn's algorithm with a min-heap, so ties always resolve to the lowest
    cell index and the result is deterministic.  Raises
    :class:`AcyclicityError` carrying a witness cycle if none exists.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if P.shape != (n, n):
        raise DimensionError(f"P must be square, got {P.shape}")
    adj = [np.nonzero(P[i] > EDGE_TOL)[0] for i in range(n)]
    indeg = [0] * n
    for i in range(n):
        for j in adj[i]:
            indeg[j] += 1
    ready = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for j in adj[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(ready, int(j))
    if len(order) < n:
        cycle = find_cycle(P)
        if not cycle:  # pragma: no cover - Kahn failure implies a cycle exists
            raise StructureMismatch("ordering failed but no cycle was found")
        raise AcyclicityError(cycle)
    topo = TopologicalOrder(tuple(order))
    Pp = topo.permute(P)
    if np.any(np.tril(Pp) > EDGE_TOL):  # pragma: no cover - Kahn guarantees this
        raise StructureMismatch("ordering is not strictly upper triangular")
    return topo


class StructureMismatch(RuntimeError):
    """Internal invariant of the ordering algorithms failed."""


def find_cycle(P: np.ndarray) -> tuple[int, ...]:
    """Return one directed cycle of the routing graph, or () if acyclic.

    The returned cells (i_1, ..., i_e) satisfy p[i_1,i_2], ..., p[i_e,i_1]
    all above ``EDGE_TOL``, so the product of rates around the cycle is
    nonzero.  Iterative DFS; deterministic (lowest successor first).
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    adj = [list(np.nonzero(P[i] > EDGE_TOL)[0]) for i in range(n)]
    color = [0] * n  # 0 unvisited, 1 on stack, 2 done
    parent = [-1] * n
    for root in range(n):
        if color[root]:
            continue
        stack: list[tuple[int, int]] = [(root, 0)]
        color[root] = 1
        while stack:
            node, ptr = stack[-1]
            if ptr < len(adj[node]):
                stack[-1] = (node, ptr + 1)
                nxt = int(adj[node][ptr])
                if color[nxt] == 0:
                    color[nxt] = 1
                    parent[nxt] = node
                    stack.append((nxt, 0))
                elif color[nxt] == 1:
                    cycle = [node]
                    while cycle[-1] != nxt:
                        cycle.append(parent[cycle[-1]])
                    return tuple(reversed(cycle))
            else:
                color[node] = 2
                stack.pop()
    return ()


def load_network(path) -> NetworkSpec:
    """Read a NetworkSpec from a JSON file; unknown fields are rejected."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: network file must hold a JSON object")
    unknown = set(doc) - set(_NETWORK_FIELDS)
    if unknown:
        raise ValueError(f"{path}: unknown field(s) {sorted(unknown)}")
    missing = set(_NETWORK_FIELDS) - set(doc)
    if missing:
        raise ValueError(f"{path}: missing field(s) {sorted(missing)}")
    return NetworkSpec(
        n=doc["n"], a=doc["a"], P=doc["P"], Qexit=doc["Qexit"],
        mu=doc["mu"], vmax=doc["vmax"],
    )


def save_network(spec: NetworkSpec, path) -> None:
    doc = {
        "n": spec.n,
        "a": spec.a.tolist(),
        "P": spec.P.tolist(),
        "Qexit": spec.Qexit.tolist(),
        "mu": spec.mu.tolist(),
        "vmax": spec.vmax.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
