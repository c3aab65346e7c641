"""Uncertain demand/supply curve families and their sampling audits.

Each cell carries a demand curve f(d, x) (attempted outflow, increasing up to
the critical density ``delta``) and a supply curve g(d, x) (acceptable inflow,
non-increasing, zero at jam).  Uncertainty enters through a 4-vector
d = (d1, d2, d3, d4): d1..d3 blend the demand branches, d4 scales supply.

Two built-in demand families cover the reference freeway (mainline and
on-ramp-merge shapes); "piecewise" admits user polynomials per branch.
The audits check, by sampling, that declared sector/floor constants hold and
that supplies can absorb worst-case inflows on the uncongested box.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .errors import DimensionError, DomainError
from .network import NetworkSpec

FAMILIES = ("freeway-main", "freeway-onramp", "piecewise")

_D_DIM = 4


# --- base curves -----------------------------------------------------------
# Quadratic/affine segments shared by the built-in families.  Knees at 27.5
# (on-ramp branch change) are part of the curve shapes themselves; the
# subcritical/overcritical switch at `delta` belongs to the DemandFunction.

def _phi1(z):
    return (5.0 / 11.0) * z


def _phi2(z):
    return -(13.5 / 3025.0) * z * z + 0.7 * z


def _phi3(z):
    return (14.0 / 3025.0) * z * z + 0.2 * z


def _phi4(z):
    lo = -(49.0 / 3025.0) * z * z + 0.9 * z
    hi = -(38.0 / 3025.0) * z * z + (82.0 / 55.0) * z - 19.0
    return np.where(z <= 27.5, lo, hi)


def _phi5(z):
    lo = (7.0 / 756.25) * z * z + 0.2 * z
    hi = (21.0 / 6050.0) * z * z + (71.5 / 1210.0) * z + 8.25
    return np.where(z <= 27.5, lo, hi)


def _phi6(z):
    return -(3.0 / 23.0) * z + 740.0 / 23.0


def _phi7(z):
    return (83.0 / 52900.0) * z * z - (4471.0 / 10580.0) * z + 46019.0 / 1058.0


@dataclass(frozen=True)
class Piece:
    """One polynomial segment [lo, hi] with ascending coefficients."""

    lo: float
    hi: float
    coeffs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if not self.lo <= self.hi:
            raise ValueError(f"piece interval [{self.lo}, {self.hi}] is empty")


def _eval_pieces(pieces: tuple[Piece, ...], z: np.ndarray) -> np.ndarray:
    out = np.zeros_like(z, dtype=float)
    claimed = np.zeros(z.shape, dtype=bool)
    for p in pieces:
        m = (z >= p.lo) & (z <= p.hi) & ~claimed
        if m.any():
            out[m] = np.polynomial.polynomial.polyval(z[m], p.coeffs)
            claimed |= m
    if not claimed.all():
        bad = float(np.asarray(z)[~claimed].flat[0])
        raise DomainError(f"no polynomial piece covers density {bad:.6g}")
    return out


@dataclass(frozen=True)
class DemandFunction:
    """Per-cell uncertain demand curve with its declared sector constants.

    ``L``/``G`` bound the subcritical slopes (L on [0, delta_tilde], G on
    [0, delta]); ``fmin`` lower-bounds demand beyond the critical density.
    These are *declared* values — `audit_demand_curve` checks them against samples.
    """

    family: str
    a: float
    delta: float
    delta_tilde: float
    L: float
    G: float
    fmin: float
    subcritical: tuple[Piece, ...] = ()
    overcritical: tuple[Piece, ...] = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown demand family {self.family!r}")
        if not (0 < self.delta_tilde <= self.delta <= self.a):
            raise ValueError("need 0 < delta_tilde <= delta <= a")
        if not (0 < self.L <= self.G <= 1):
            raise ValueError("need 0 < L <= G <= 1")
        if not self.fmin > 0:
            raise ValueError("fmin must be positive")
        if self.family == "piecewise" and not (self.subcritical and self.overcritical):
            raise ValueError("piecewise family needs both branch tables")
        object.__setattr__(self, "subcritical", tuple(self.subcritical))
        object.__setattr__(self, "overcritical", tuple(self.overcritical))


@dataclass(frozen=True)
class SupplyFunction:
    """g(d, x) = scale * min(qcap, a - x); scale is d4 unless `wave` pins it."""

    qcap: float
    a: float
    wave: float | None = None

    def __post_init__(self):
        if not (self.qcap > 0 and self.a > 0):
            raise ValueError("qcap and a must be positive")
        if self.wave is not None and not self.wave > 0:
            raise ValueError("fixed wave scale must be positive")


def _demand_values(fd: DemandFunction, d1, d2, d3, z):
    """Branch-blended demand; no domain checks. Broadcasts d-weights over z."""
    z = np.asarray(z, dtype=float)
    if fd.family == "piecewise":
        sub = _eval_pieces(fd.subcritical, np.minimum(z, fd.delta))
        over = _eval_pieces(fd.overcritical, np.maximum(z, fd.delta))
    else:
        w1 = d1
        w2 = d2 * (1.0 - d1)
        w3 = (1.0 - d2) * (1.0 - d1)
        if fd.family == "freeway-main":
            sub = w1 * _phi1(z) + w2 * _phi2(z) + w3 * _phi3(z)
        else:
            sub = w1 * _phi1(z) + w2 * _phi4(z) + w3 * _phi5(z)
        over = d3 * _phi6(z) + (1.0 - d3) * _phi7(z)
    return np.where(z <= fd.delta, sub, over)


def _supply_values(sf: SupplyFunction, d4, x):
    scale = d4 if sf.wave is None else sf.wave
    return scale * np.minimum(sf.qcap, sf.a - np.asarray(x, dtype=float))


@dataclass(frozen=True)
class DiagramSet:
    """All per-cell demand/supply curves plus the uncertainty box D.

    ``d_lo``/``d_hi`` bound the 4-vector d.  Evaluation helpers are
    vectorized over cells (and over samples in the ``*_batch`` forms).
    """

    demands: tuple[DemandFunction, ...]
    supplies: tuple[SupplyFunction, ...]
    d_lo: np.ndarray
    d_hi: np.ndarray
    # cached per-cell arrays and family index groups
    _a: np.ndarray = field(init=False, repr=False, compare=False)
    _delta: np.ndarray = field(init=False, repr=False, compare=False)
    _groups: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "demands", tuple(self.demands))
        object.__setattr__(self, "supplies", tuple(self.supplies))
        if len(self.demands) != len(self.supplies):
            raise DimensionError("demand and supply tables differ in length")
        for lohi in ("d_lo", "d_hi"):
            arr = np.array(getattr(self, lohi), dtype=float)
            if arr.shape != (_D_DIM,):
                raise DimensionError(f"{lohi} must have shape ({_D_DIM},)")
            arr.setflags(write=False)
            object.__setattr__(self, lohi, arr)
        if np.any(self.d_lo > self.d_hi):
            raise ValueError("uncertainty box is empty")
        for fd, sf in zip(self.demands, self.supplies):
            if fd.a != sf.a:
                raise ValueError("demand and supply disagree on the jam capacity")
        object.__setattr__(self, "_a", np.array([fd.a for fd in self.demands]))
        object.__setattr__(self, "_delta", np.array([fd.delta for fd in self.demands]))
        groups = {
            fam: np.array([k for k, fd in enumerate(self.demands) if fd.family == fam],
                          dtype=int)
            for fam in FAMILIES
        }
        object.__setattr__(self, "_groups", groups)

    @property
    def n(self) -> int:
        return len(self.demands)

    def contains_d(self, d, tol: float = 1e-12) -> bool:
        d = np.asarray(d, dtype=float)
        return d.shape == (_D_DIM,) and bool(
            np.all(d >= self.d_lo - tol) and np.all(d <= self.d_hi + tol)
        )

    def min_supply_at_zero(self) -> np.ndarray:
        """Per-cell inf over d of g(d, 0) — the guaranteed empty-cell supply."""
        low = np.empty(self.n)
        for k, sf in enumerate(self.supplies):
            scale = self.d_lo[3] if sf.wave is None else sf.wave
            low[k] = scale * min(sf.qcap, sf.a)
        return low


def eval_demand(fd: DemandFunction, d, x) -> float:
    """Demand flow of one cell at density x under uncertainty sample d."""
    d = np.asarray(d, dtype=float)
    if d.shape != (_D_DIM,):
        raise DimensionError(f"d must be a {_D_DIM}-vector")
    x = float(x)
    if not 0.0 <= x <= fd.a:
        raise DomainError(f"density {x:.6g} outside [0, {fd.a:.6g}]")
    if fd.family != "piecewise" and not (
        0.0 <= d[0] <= 1.0 and 0.0 <= d[1] <= 1.0 and 0.0 <= d[2] <= 1.0
    ):
        raise DomainError("demand blend weights d1..d3 must lie in [0, 1]")
    return float(_demand_values(fd, d[0], d[1], d[2], x))


def eval_supply(sf: SupplyFunction, d, x) -> float:
    """Supply (acceptable inflow) of one cell at density x."""
    d = np.asarray(d, dtype=float)
    x = float(x)
    if not 0.0 <= x <= sf.a:
        raise DomainError(f"density {x:.6g} outside [0, {sf.a:.6g}]")
    if sf.wave is None and d[3] <= 0:
        raise DomainError("supply scale d4 must be positive")
    return float(_supply_values(sf, d[3], x))


def demand_all(ds: DiagramSet, d, x) -> np.ndarray:
    """All cells' demand at state x (one uncertainty sample)."""
    return demand_batch(ds, np.asarray(d, float)[None, :], np.asarray(x, float)[None, :])[0]


def supply_all(ds: DiagramSet, d, x) -> np.ndarray:
    return supply_batch(ds, np.asarray(d, float)[None, :], np.asarray(x, float)[None, :])[0]


def demand_batch(ds: DiagramSet, D: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Demand for a batch: D is (N, 4), X is (N, n); returns (N, n)."""
    N = X.shape[0]
    out = np.empty((N, ds.n))
    d1 = D[:, 0:1]
    d2 = D[:, 1:2]
    d3 = D[:, 2:3]
    for fam in ("freeway-main", "freeway-onramp"):
        idx = ds._groups[fam]
        if idx.size == 0:
            continue
        z = X[:, idx]
        w2 = d2 * (1.0 - d1)
        w3 = (1.0 - d2) * (1.0 - d1)
        if fam == "freeway-main":
            sub = d1 * _phi1(z) + w2 * _phi2(z) + w3 * _phi3(z)
        else:
            sub = d1 * _phi1(z) + w2 * _phi4(z) + w3 * _phi5(z)
        over = d3 * _phi6(z) + (1.0 - d3) * _phi7(z)
        out[:, idx] = np.where(z <= ds._delta[idx], sub, over)
    for k in ds._groups["piecewise"]:
        out[:, k] = _demand_values(ds.demands[k], d1[:, 0], d2[:, 0], d3[:, 0], X[:, k])
    return out


def supply_batch(ds: DiagramSet, D: np.ndarray, X: np.ndarray) -> np.ndarray:
    N = X.shape[0]
    out = np.empty((N, ds.n))
    for k, sf in enumerate(ds.supplies):
        scale = D[:, 3] if sf.wave is None else sf.wave
        out[:, k] = scale * np.minimum(sf.qcap, sf.a - X[:, k])
    return out


# --- uncertainty sampling ---------------------------------------------------

def d_corners(ds: DiagramSet) -> np.ndarray:
    """All 2^4 corner points of the uncertainty box."""
    cols = [(ds.d_lo[k], ds.d_hi[k]) for k in range(_D_DIM)]
    return np.array(list(itertools.product(*cols)))


def sample_uncertainty(ds: DiagramSet, m: int, seed: int = 0,
                       include_corners: bool = False) -> np.ndarray:
    """m low-discrepancy samples of d (corners prepended when asked).

    Sobol points get scaled into the box; the total row count is m (corner
    rows replace the first Sobol rows so callers can rely on the count).
    """
    corners = d_corners(ds) if include_corners else np.empty((0, _D_DIM))
    k = m - len(corners)
    if k < 0:
        raise ValueError(f"need m >= {len(corners)} to include all corners")
    sob = qmc.Sobol(d=_D_DIM, scramble=True, seed=seed)
    u = sob.random_base2(max(1, math.ceil(math.log2(max(k, 2)))))[:k]
    pts = ds.d_lo + u * (ds.d_hi - ds.d_lo)
    return np.vstack([corners, pts]) if len(corners) else pts


def _philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def uniform_uncertainty(ds: DiagramSet, m: int, rng: np.random.Generator) -> np.ndarray:
    """m independent uniform draws from the box (for per-step disturbances)."""
    u = rng.uniform(size=(m, _D_DIM))
    return ds.d_lo + u * (ds.d_hi - ds.d_lo)


# --- assumption audits -------------------------------------------------------

@dataclass(frozen=True)
class DemandAudit:
    """Sampled audit of one demand curve against its declared constants."""

    monotone_ok: bool
    sector_ok: bool
    fmin_ok: bool
    strict_bound_ok: bool
    L_hat: float
    G_hat: float
    fmin_hat: float

    @property
    def passed(self) -> bool:
        return self.monotone_ok and self.sector_ok and self.fmin_ok and self.strict_bound_ok


def audit_demand_curve(fd: DemandFunction, n_grid: int = 512, n_d: int = 64,
                       seed: int = 0) -> DemandAudit:
    """Audit increase/sector/floor/strict-bound behavior of a demand curve.

    Sampling-based: ``n_grid`` densities per branch crossed with ``n_d``
    blend-weight samples (low-discrepancy over [0,1]^3, corners included).
    Reports the tightest empirical constants next to the declared ones.
    """
    if n_grid < 100:
        raise ValueError("need at least 100 grid points per axis")
    if fd.family == "piecewise":
        dmat = np.zeros((1, 3))
    else:
        corners = np.array(list(itertools.product((0.0, 1.0), repeat=3)))
        sob = qmc.Sobol(d=3, scramble=True, seed=seed)
        extra = sob.random_base2(max(1, math.ceil(math.log2(max(n_d, 2)))))[:n_d]
        dmat = np.vstack([corners, extra])
    d1, d2, d3 = (dmat[:, k:k + 1] for k in range(3))

    zs = np.linspace(0.0, fd.delta, n_grid)
    f_sub = _demand_values(fd, d1, d2, d3, zs[None, :])
    df = np.diff(f_sub, axis=1)
    slopes = df / np.diff(zs)
    monotone_ok = bool((df > 0).all())
    # two-point slopes over a sorted grid: adjacent pairs attain the extremes
    tilde = zs[1:] <= fd.delta_tilde + 1e-12
    L_hat = float(slopes[:, tilde].min()) if tilde.any() else math.inf
    G_hat = float(slopes.max())
    sector_ok = bool(L_hat >= fd.L - 1e-9 and G_hat <= fd.G + 1e-9)

    zo = np.linspace(fd.delta, fd.a, n_grid)
    f_over = _demand_values(fd, d1, d2, d3, zo[None, :])
    fmin_hat = float(f_over.min())
    fmin_ok = bool(fmin_hat >= fd.fmin - 1e-9)

    z_all = np.concatenate([zs[1:], zo])
    f_all = np.hstack([f_sub[:, 1:], f_over])
    strict_bound_ok = bool((f_all > 0).all() and (f_all < z_all[None, :]).all())

    return DemandAudit(monotone_ok, sector_ok, fmin_ok, strict_bound_ok,
                    L_hat, G_hat, fmin_hat)


@dataclass(frozen=True)
class SupplyMarginAudit:
    """Worst-case slack of supply over inflow on the uncongested box."""

    min_slack: float
    worst_cell: int
    worst_d: np.ndarray
    worst_x: np.ndarray
    passed: bool


def audit_supply_margin(spec: NetworkSpec, ds: DiagramSet, n_x: int = 4096,
                        n_d: int = 64, seed: int = 0,
                        tol: float = 1e-4) -> SupplyMarginAudit:
    """Check v_max + routed demand <= supply for all sampled x <= mu, d in D.

    Both demand and supply are monotone in x, so the honest worst case sits
    at x = mu exactly; that slice is swept against all box corners and a
    low-discrepancy d-sample, then a random (x, d) cloud fills in the rest.
    Slack slightly below zero (within ``tol``) still passes: instances built
    with deliberate epsilon padding of mu sit a hair past exact equality.
    """
    n = spec.n
    corners = d_corners(ds)
    dmat = np.vstack([corners, sample_uncertainty(ds, n_d, seed=seed)])
    X_mu = np.tile(spec.mu, (len(dmat), 1))

    rng = _philox(seed)
    D_rand = uniform_uncertainty(ds, n_x, rng)
    X_rand = rng.uniform(size=(n_x, n)) * spec.mu

    D_all = np.vstack([dmat, D_rand])
    X_all = np.vstack([X_mu, X_rand])
    F = demand_batch(ds, D_all, X_all)
    Gs = supply_batch(ds, D_all, X_all)
    slack = Gs - spec.vmax[None, :] - F @ spec.P  # (N, n); col j gets sum_i P[i,j] f_i
    flat = int(np.argmin(slack))
    row, cell = divmod(flat, n)
    return SupplyMarginAudit(
        min_slack=float(slack.flat[flat]),
        worst_cell=cell,
        worst_d=D_all[row].copy(),
        worst_x=X_all[row].copy(),
        passed=bool(slack.flat[flat] >= -tol),
    )


# --- JSON I/O ----------------------------------------------------------------

_CELL_FIELDS = {"family", "a", "delta", "delta_tilde", "L", "G", "fmin",
                "subcritical", "overcritical", "supply"}
_SUPPLY_FIELDS = {"qcap", "wave"}


def load_diagrams(path) -> DiagramSet:
    """Read a DiagramSet from JSON; unknown fields are rejected."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    unknown = set(doc) - {"d_box", "cells"}
    if unknown:
        raise ValueError(f"{path}: unknown field(s) {sorted(unknown)}")
    box = np.asarray(doc["d_box"], dtype=float)
    if box.shape != (_D_DIM, 2):
        raise ValueError(f"{path}: d_box must be {_D_DIM} [lo, hi] pairs")
    demands, supplies = [], []
    for k, cell in enumerate(doc["cells"]):
        unknown = set(cell) - _CELL_FIELDS
        if unknown:
            raise ValueError(f"{path}: cell {k + 1}: unknown field(s) {sorted(unknown)}")
        sup = cell["supply"]
        unknown = set(sup) - _SUPPLY_FIELDS
        if unknown:
            raise ValueError(f"{path}: cell {k + 1}: unknown supply field(s) {sorted(unknown)}")
        demands.append(DemandFunction(
            family=cell["family"], a=cell["a"], delta=cell["delta"],
            delta_tilde=cell["delta_tilde"], L=cell["L"], G=cell["G"],
            fmin=cell["fmin"],
            subcritical=tuple(Piece(lo, hi, tuple(c)) for lo, hi, c in cell.get("subcritical", ())),
            overcritical=tuple(Piece(lo, hi, tuple(c)) for lo, hi, c in cell.get("overcritical", ())),
        ))
        supplies.append(SupplyFunction(qcap=sup["qcap"], a=cell["a"], wave=sup.get("wave")))
    return DiagramSet(tuple(demands), tuple(supplies), box[:, 0], box[:, 1])


def save_diagrams(ds: DiagramSet, path) -> None:
    cells = []
    for fd, sf in zip(ds.demands, ds.supplies):
        cell = {
            "family": fd.family, "a": fd.a, "delta": fd.delta,
            "delta_tilde": fd.delta_tilde, "L": fd.L, "G": fd.G, "fmin": fd.fmin,
            "supply": {"qcap": sf.qcap} if sf.wave is None
                      else {"qcap": sf.qcap, "wave": sf.wave},
        }
        if fd.family == "piecewise":
            cell["subcritical"] = [[p.lo, p.hi, list(p.coeffs)] for p in fd.subcritical]
            cell["overcritical"] = [[p.lo, p.hi, list(p.coeffs)] for p in fd.overcritical]
        cells.append(cell)
    doc = {"d_box": np.stack([ds.d_lo, ds.d_hi], axis=1).tolist(), "cells": cells}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
