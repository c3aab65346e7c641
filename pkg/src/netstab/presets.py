"""Ready-made networks and scenarios: the 8-cell freeway benchmark and foils.

The benchmark models a mainline of six cells with a two-cell on-ramp merging
at cell 7 (1-based); half of cell 4's outflow exits, the rest joins the merge.
All densities are vehicles per cell, flows vehicles per step.
"""

from __future__ import annotations

import numpy as np

from .control import ControllerConfig
from .diagrams import DemandFunction, DiagramSet, SupplyFunction
from .network import NetworkSpec

JAM = 170.0
QCAP = 115.0
D_LO = (0.0, 0.0, 0.0, 0.22)
D_HI = (1.0, 1.0, 1.0, 0.3)

# equilibrium densities sit at 55 (mainline) / 27.5 (ramp cells); mu leaves a
# hair of room above them and delta a hair above mu so the subcritical sector
# bounds cover the whole invariant box
MU_MAIN = 55.0 + 1e-5
MU_RAMP = 27.5 + 1e-5
DELTA = 55.0 + 2e-5


def reference_network() -> NetworkSpec:
    """The 8-cell freeway: mainline 1..4 -> merge 7..8, on-ramp 5..6 -> 7."""
    n = 8
    P = np.zeros((n, n))
    for i in (0, 1, 2, 4, 5, 6):
        P[i, i + 1] = 1.0
    P[3, 6] = 0.5
    Qexit = np.zeros(n)
    Qexit[3] = 0.5
    Qexit[7] = 1.0
    mu = np.full(n, MU_MAIN)
    mu[4] = mu[5] = MU_RAMP
    vmax = np.full(n, 0.3)
    vmax[0] = vmax[4] = 25.0
    return NetworkSpec(n=n, a=np.full(n, JAM), P=P, Qexit=Qexit, mu=mu,
                       vmax=vmax)


def _main_demand() -> DemandFunction:
    return DemandFunction(family="freeway-main", a=JAM, delta=DELTA,
                          delta_tilde=DELTA, L=0.2, G=0.71, fmin=10.0)


def _ramp_demand() -> DemandFunction:
    return DemandFunction(family="freeway-onramp", a=JAM, delta=DELTA,
                          delta_tilde=DELTA, L=0.009, G=0.9, fmin=10.0)


def reference_diagrams() -> DiagramSet:
    """Uncertain curves for the benchmark: ramp cells 5-6, mainline elsewhere."""
    demands = tuple(_ramp_demand() if i in (4, 5) else _main_demand()
                    for i in range(8))
    supplies = tuple(SupplyFunction(qcap=QCAP, a=JAM) for _ in range(8))
    return DiagramSet(demands=demands, supplies=supplies, d_lo=D_LO, d_hi=D_HI)


def reference_vstar() -> np.ndarray:
    """Benchmark equilibrium inflows: 25 at the mainline head, 12.5 at the ramp."""
    v = np.zeros(8)
    v[0] = 25.0
    v[4] = 12.5
    return v


def experiment_controller(xstar) -> ControllerConfig:
    """Hand-tuned benchmark law: floors 0.5 on both inlets, uniform gain 0.016.

    Its floor is far above what a finite trapping bound allows, so a
    certificate around it reports floor_budget_ok = False; the closed loop
    still converges in simulation.
    """
    b = np.zeros(8)
    b[0] = b[4] = 0.5
    return ControllerConfig(xstar=np.asarray(xstar, dtype=float),
                            vstar=reference_vstar(), b=b,
                            K=np.full((8, 8), 0.016), tau=0.5)


def benchmark_initial_states() -> tuple[np.ndarray, ...]:
    """Four starts: full jam, heavy, mixed, near-equilibrium."""
    return (
        np.full(8, JAM),
        np.array([150.0, 140.0, 60.0, 120.0, 120.0, 100.0, 160.0, 130.0]),
        np.array([100.0, 120.0, 10.0, 20.0, 110.0, 80.0, 5.0, 90.0]),
        np.array([50.0, 50.0, 50.0, 50.0, 27.0, 27.0, 80.0, 60.0]),
    )


def congested_candidate() -> np.ndarray:
    """Open-loop congested operating point of the benchmark (to plot precision)."""
    return np.array([111.8, 111.8, 111.8, 111.8, 27.5, 27.5, 92.82, 92.82])


def three_cell_cycle() -> tuple[NetworkSpec, DiagramSet]:
    """A 3-cycle with no exits: valid input that admits gridlock, not stability."""
    n = 3
    P = np.zeros((n, n))
    P[0, 1] = P[1, 2] = P[2, 0] = 1.0
    spec = NetworkSpec(n=n, a=np.full(n, JAM), P=P, Qexit=np.zeros(n),
                       mu=np.full(n, MU_MAIN), vmax=np.full(n, 0.3))
    ds = DiagramSet(demands=tuple(_main_demand() for _ in range(n)),
                    supplies=tuple(SupplyFunction(qcap=QCAP, a=JAM)
                                   for _ in range(n)),
                    d_lo=D_LO, d_hi=D_HI)
    return spec, ds


def reference_with_backedge() -> NetworkSpec:
    """The benchmark wiring plus a merge-to-mainline back edge (cyclic)."""
    ref = reference_network()
    P = np.array(ref.P)
    P[6, 7] = 0.5
    P[6, 2] = 0.5
    return NetworkSpec(n=ref.n, a=ref.a, P=P, Qexit=ref.Qexit, mu=ref.mu,
                       vmax=ref.vmax)
