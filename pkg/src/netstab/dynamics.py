"""One-step network update: supply-limited flow exchange between cells.

Per step, each cell attempts to emit its demand f_i(d, x_i).  A receiving
cell admits at most its supply g_j(d, x): external inflow v_j has full
priority (it is accepted up to min(v_j, g_j)); upstream senders then fill the
remaining supply in descending cell-index order, each claiming its routed
share p_{i,j} f_i or whatever is left.  A sender feeding several junctions is
throttled by the tightest one.  The per-cell throttle s_i multiplies the whole
outflow (including the exit share), so mass is conserved by construction:
sent always equals received and total inflow never exceeds supply.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagrams import DiagramSet, demand_all, supply_all
from .errors import DimensionError, DomainError, NumericalError
from .network import NetworkSpec

DEMAND_FLOOR = 1e-12   # below this a cell has nothing to throttle: s = 1
STATE_TOL = 1e-9       # admission tolerance for x against the state box


@dataclass(frozen=True)
class FlowBreakdown:
    """Everything that moved in one step.

    outflow[i] = s[i] * attempted_demand[i]; inflow[i] sums accepted external
    inflow (w[i] * v[i]) and routed upstream arrivals; exit[i] is the share
    leaving the network.  inflow never exceeds the cell's supply.
    """

    outflow: np.ndarray
    inflow: np.ndarray
    exit: np.ndarray
    s: np.ndarray
    w: np.ndarray
    attempted_demand: np.ndarray


def _allocate(spec: NetworkSpec, f: np.ndarray, g: np.ndarray, v: np.ndarray,
              x: np.ndarray) -> np.ndarray:
    """Per-cell throttles honoring external-first, descending-index priority."""
    s = np.ones(spec.n)
    for j, preds in enumerate(spec.predecessors):
        if not preds:
            continue
        rem = g[j] - v[j]
        for i in preds:
            cap = spec.P[i, j] * f[i]
            if cap > DEMAND_FLOOR:
                ratio = rem / cap
                if ratio < s[i]:
                    s[i] = max(0.0, ratio)
            rem -= cap
    # empty or demandless cells emit nothing and are never considered throttled
    s[(x <= 0.0) | (f < DEMAND_FLOOR)] = 1.0
    return s


def compute_flows(spec: NetworkSpec, ds: DiagramSet, x, v, d) -> FlowBreakdown:
    """Flow breakdown at (x, v, d) without validation; see `step` for checks."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    f = demand_all(ds, d, x)
    g = supply_all(ds, d, x)
    if not np.isfinite(f).all():
        raise NumericalError(
            f"non-finite demand at cell {int(np.argmax(~np.isfinite(f))) + 1}",
            cell=int(np.argmax(~np.isfinite(f))))
    if not np.isfinite(g).all():
        raise NumericalError(
            f"non-finite supply at cell {int(np.argmax(~np.isfinite(g))) + 1}",
            cell=int(np.argmax(~np.isfinite(g))))
    s = _allocate(spec, f, g, v, x)
    outflow = s * f
    accepted = np.minimum(v, g)
    inflow = accepted + outflow @ spec.P
    exit_flow = spec.Qexit * outflow
    w = np.divide(accepted, v, out=np.ones(spec.n), where=v > 0)
    return FlowBreakdown(outflow=outflow, inflow=inflow, exit=exit_flow,
                         s=s, w=w, attempted_demand=f)


def step(spec: NetworkSpec, ds: DiagramSet, x, v, d) -> tuple[np.ndarray, FlowBreakdown]:
    """Advance the state one step; returns (x_next, FlowBreakdown).

    Raises DomainError when x leaves the state box, v is negative, or d falls
    outside the uncertainty box; NumericalError when any flow is non-finite.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    d = np.asarray(d, dtype=float)
    if x.shape != (spec.n,) or v.shape != (spec.n,):
        raise DimensionError(f"x and v must have shape ({spec.n},)")
    if np.any(x < -STATE_TOL) or np.any(x > spec.a + STATE_TOL):
        i = int(np.argmax(np.maximum(-x, x - spec.a)))
        raise DomainError(f"cell {i + 1}: density {x[i]:.6g} outside [0, {spec.a[i]:.6g}]")
    if np.any(v < 0):
        i = int(np.argmax(v < 0))
        raise DomainError(f"cell {i + 1}: negative external inflow {v[i]:.6g}")
    if not ds.contains_d(d):
        raise DomainError(f"disturbance {d} outside the uncertainty box")
    x = np.clip(x, 0.0, spec.a)
    fb = compute_flows(spec, ds, x, v, d)
    x_next = x - fb.outflow + fb.inflow
    if not np.isfinite(x_next).all():
        i = int(np.argmax(~np.isfinite(x_next)))
        raise NumericalError(f"non-finite state at cell {i + 1}", cell=i)
    drift = float(np.max(np.maximum(-x_next, x_next - spec.a), initial=0.0))
    if drift > STATE_TOL:
        i = int(np.argmax(np.maximum(-x_next, x_next - spec.a)))
        raise NumericalError(
            f"state left its box at cell {i + 1} by {drift:.3g}", cell=i)
    return np.clip(x_next, 0.0, spec.a), fb


def compute_s(spec: NetworkSpec, ds: DiagramSet, x, v, d) -> np.ndarray:
    """Per-cell outflow throttles in [0, 1] (1 at empty or demandless cells)."""
    return compute_flows(spec, ds, x, v, d).s


def is_uncongested(spec: NetworkSpec, ds: DiagramSet, x, v, d) -> bool:
    """True iff every cell's supply covers its attempted inflow at (x, v, d)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    f = demand_all(ds, d, x)
    g = supply_all(ds, d, x)
    return bool(np.all(v + f @ spec.P <= g))
