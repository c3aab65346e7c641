"""Certificate pipeline: weights, drain constants, comparison matrix, bounds.

The pipeline has two stages.  Stage one depends on the network alone: the
geometric cell weights r, the excess-propagation weights xi with the invariant
box they certify, and the drain constants (Q, Theta, gamma, C) bounding how
much weighted mass every step must release.  Stage two adds a controller
(synthesizing one if needed), builds the comparison matrix Gamma for the
stacked deviation vector, and converts C into a worst-case step count m after
which any trajectory is trapped inside the invariant box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from . import control
from .control import ControllerConfig, h_map
from .diagrams import (DiagramSet, _philox, d_corners, demand_batch,
                       supply_batch, uniform_uncertainty)
from .dynamics import step
from .errors import (DimensionError, NumericalError, StructuralError,
                     ThrottleBoundViolation, TrappingInfeasible)
from .network import NetworkSpec, topological_sort

RHO_AGREE_TOL = 1e-9   # structural vs. iterative spectral radius
SQUARINGS = 48         # matrix squarings: norm^(1/2^48) is far below the tol
JAM_PATTERN_LIMIT = 12  # enumerate binary jam patterns up to this cell count


def weights_r(P: np.ndarray) -> np.ndarray:
    """Cell weights halving along the flow direction: r_i = 2^(n-1-rank_i).

    All successors of a cell sit at least one topological rank downstream and
    row sums of P are at most one, so the weighted routing loses at least half
    the weight per hop: sum_j P[i, j] r_j < r_i strictly.  That margin is what
    the drain constants build on; its failure is reported as structural.
    """
    P = np.asarray(P, dtype=float)
    rank = topological_sort(P).rank()
    n = P.shape[0]
    r = np.power(2.0, n - 1 - rank)
    slack = r - P @ r
    if np.any(slack <= 0):
        i = int(np.argmin(slack))
        raise StructuralError(
            f"cell {i + 1}: routed weight is not strictly dominated "
            f"(slack {slack[i]:.3g})")
    return r


def weights_xi(P: np.ndarray, L: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Excess-propagation weights: source cells get 1, others amplify inflow.

    Along a topological order, xi_i = (2 / L_i) * sum of G_j xi_j over the
    predecessors j of i.  The factor two leaves a strict margin
    L_i xi_i > sum_j P[j, i] G_j xi_j, which makes every box
    [0, x* + eps * xi] forward invariant for small eps.
    """
    P = np.asarray(P, dtype=float)
    L = np.asarray(L, dtype=float)
    G = np.asarray(G, dtype=float)
    n = P.shape[0]
    if L.shape != (n,) or G.shape != (n,):
        raise DimensionError(f"L and G must have shape ({n},)")
    if np.any(L <= 0) or np.any(G <= 0):
        raise ValueError("sector slopes must be positive")
    order = topological_sort(P)
    xi = np.zeros(n)
    for i in order.order:
        preds = np.nonzero(P[:, i] > 0)[0]
        if preds.size == 0:
            xi[i] = 1.0
        else:
            xi[i] = (2.0 / L[i]) * float(np.sum(G[preds] * xi[preds]))
    margin = L * xi - P.T @ (G * xi)
    if np.any(margin <= 0):
        i = int(np.argmin(margin))
        raise StructuralError(
            f"cell {i + 1}: inflow growth is not strictly dominated "
            f"(margin {margin[i]:.3g})")
    return xi


def spectral_radius(M: np.ndarray, squarings: int = SQUARINGS) -> float:
    """Spectral radius via norm-normalized repeated squaring.

    Single-vector power iteration degrades to O(1/k) convergence on repeated
    or defective leading eigenvalues, which the comparison matrix has
    whenever two cells share the slowest release rate.  Squaring instead
    evaluates ||M^(2^J)||_F^(1/2^J) with the scale tracked in log space, so
    the polynomial Jordan factor is annihilated by the 2^-J exponent.
    """
    B = np.array(M, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise DimensionError("matrix must be square")
    if not np.isfinite(B).all():
        raise NumericalError("matrix has non-finite entries")
    scale = float(np.linalg.norm(B))
    if scale == 0.0:
        return 0.0
    B /= scale
    log_acc = math.log(scale)
    for _ in range(squarings):
        B = B @ B
        s = float(np.linalg.norm(B))
        if s == 0.0:
            return 0.0  # nilpotent
        B /= s
        log_acc = 2.0 * log_acc + math.log(s)
    return math.exp(log_acc / 2.0 ** squarings)


def build_gamma(P, L, G, vstar, b, K, tau) -> tuple[np.ndarray, float]:
    """Comparison matrix for the stacked deviation vector (excess, deficit).

    Gamma = [[A, 0], [diag(v* - b) K / tau, A]] with
    A = I + P' diag(G) - diag(L): excesses contract on their own, deficits
    additionally absorb whatever inflow the controller withholds, which the
    lower-left block bounds through the gain.  The spectral radius of the
    block-triangular matrix is the structural value max_i (1 - L_i); it is
    cross-checked against the iterative estimate and disagreement beyond
    RHO_AGREE_TOL raises StructuralError.
    """
    P = np.asarray(P, dtype=float)
    L = np.asarray(L, dtype=float)
    G = np.asarray(G, dtype=float)
    vstar = np.asarray(vstar, dtype=float)
    b = np.asarray(b, dtype=float)
    K = np.asarray(K, dtype=float)
    n = P.shape[0]
    A = np.eye(n) + P.T * G - np.diag(L)
    B = (vstar - b)[:, None] * K / tau
    Gamma = np.block([[A, np.zeros((n, n))], [B, A]])
    rho = float(np.max(1.0 - L))
    rho_iter = spectral_radius(Gamma)
    if abs(rho_iter - rho) > RHO_AGREE_TOL:
        raise StructuralError(
            f"spectral radius mismatch: structural {rho:.12g} vs "
            f"iterated {rho_iter:.12g}")
    return Gamma, rho


def invariant_region(xstar, xi, mu) -> tuple[float, np.ndarray]:
    """Largest box ceiling beta = x* + eps* xi that stays below mu.

    eps* = min_i (mu_i - x*_i) / xi_i; the returned beta is clipped to mu so
    rounding at the binding cell cannot push it above the threshold.  Raises
    ValueError when some equilibrium density already reaches mu.
    """
    xstar = np.asarray(xstar, dtype=float)
    xi = np.asarray(xi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(xi <= 0):
        raise ValueError("weights xi must be positive")
    room = mu - xstar
    if np.any(room <= 0):
        i = int(np.argmin(room))
        raise ValueError(
            f"cell {i + 1}: equilibrium density {xstar[i]:.6g} reaches the "
            f"uncongested threshold {mu[i]:.6g}")
    epsstar = float(np.min(room / xi))
    beta = np.minimum(xstar + epsstar * xi, mu)
    return epsstar, beta


def _check_match(spec: NetworkSpec, ds: DiagramSet) -> None:
    if ds.n != spec.n or not np.array_equal(ds._a, spec.a):
        raise ValueError("diagram jam capacities disagree with the network spec")


def stilde_bound(spec: NetworkSpec, ds: DiagramSet):
    """Allocation-free lower bound on the outflow throttles, batched.

    The returned callable maps (X, V, D) of shapes (N, n), (N, n), (N, 4) to
    an (N, n) array S with S <= s pointwise: each junction's remaining supply
    after external inflow and after all higher-priority attempted demands is
    divided by the claimant's worst-case demand P[i, j] * a_i instead of the
    realized one.  Demands never reach the jam capacity, so the realized
    throttle can only be larger.
    """
    _check_match(spec, ds)
    P = spec.P
    a = spec.a
    junctions = [(j, spec.predecessors[j]) for j in range(spec.n)
                 if spec.predecessors[j]]

    def bound(X: np.ndarray, V: np.ndarray, D: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        V = np.atleast_2d(np.asarray(V, dtype=float))
        D = np.atleast_2d(np.asarray(D, dtype=float))
        F = demand_batch(ds, D, X)
        Gm = supply_batch(ds, D, X)
        S = np.ones_like(F)
        for j, preds in junctions:
            rem = Gm[:, j] - V[:, j]
            for i in preds:
                frac = np.clip(rem / (P[i, j] * a[i]), 0.0, 1.0)
                np.minimum(S[:, i], frac, out=S[:, i])
                rem = rem - P[i, j] * F[:, i]
        return S

    return bound


@dataclass(frozen=True)
class DrainConstants:
    """Sampled lower bound on the weighted mass released per step.

    C = Qconst * Theta * min(1, gamma): Qconst is the routing loss under the
    weights r, theta_i the guaranteed outflow fraction of a full cell, and
    gamma the sampled infimum of the throttled weighted-mass ratio over the
    state box, the admissible inflow box ``v_box``, and the uncertainty box
    (states below ``mass_floor`` total mass are excluded).
    """

    Qconst: float
    theta: np.ndarray
    Theta: float
    gamma: float
    C: float
    argmin: dict
    v_box: np.ndarray
    mass_floor: float
    n_evaluated: int


def drain_constants(spec: NetworkSpec, ds: DiagramSet, r, stilde=None,
                    n_samples: int = 100_000, seed: int = 0,
                    refine_top: int = 8, refine_sweeps: int = 3,
                    scan_width: int = 33) -> DrainConstants:
    """Estimate the per-step drain constants (Qconst, theta, gamma, C).

    gamma is a sampled infimum: structured seeds (every binary jam pattern
    for small networks, inflows at both box ends, all uncertainty corners)
    plus a joint low-discrepancy cloud, followed by coordinate-descent
    refinement of the best seeds with a zooming grid per coordinate.  A
    nonpositive gamma raises ThrottleBoundViolation with the witness sample.
    """
    _check_match(spec, ds)
    r = np.asarray(r, dtype=float)
    if r.shape != (spec.n,):
        raise DimensionError(f"r must have shape ({spec.n},)")
    if np.any(r <= 0):
        raise ValueError("weights r must be positive")
    n = spec.n

    Qconst = float(np.min(1.0 - (spec.P @ r) / r))
    if Qconst <= 0:
        raise StructuralError("weights r admit no routing loss (Qconst <= 0)")

    L = np.array([fd.L for fd in ds.demands])
    delta_tilde = np.array([fd.delta_tilde for fd in ds.demands])
    fmin = np.array([fd.fmin for fd in ds.demands])
    theta = np.minimum(L, np.minimum(fmin / spec.a, L * delta_tilde / spec.a))
    Theta = float(theta.min())

    caps = np.minimum(spec.vmax, ds.min_supply_at_zero())
    if caps.min() <= 0:
        raise ValueError("admissible external-inflow box is empty")
    eps_tilde = 0.5 * float(caps.min())
    v_box = caps - eps_tilde
    mass_floor = min(float(ds._delta.min()), eps_tilde / (2.0 * n))

    sbound = stilde if stilde is not None else stilde_bound(spec, ds)

    def ratios(X, V, D):
        S = sbound(X, V, D)
        den = X @ r
        out = np.full(len(X), np.inf)
        ok = (X.sum(axis=1) >= mass_floor) & (den > 0)
        out[ok] = ((S[ok] * X[ok]) @ r) / den[ok]
        return out

    # structured seeds: binary jam patterns x inflow box ends x d corners
    if n <= JAM_PATTERN_LIMIT:
        codes = np.arange(1, 2 ** n)  # skip the all-empty pattern
        patterns = (codes[:, None] >> np.arange(n)[None, :]) & 1
    else:
        patterns = (_philox(seed ^ 0x9E3779B9).random((4096, n)) < 0.5)
    X_pat = patterns * spec.a[None, :]
    V_opts = np.stack([np.zeros(n), v_box])
    D_crn = d_corners(ds)
    reps = len(V_opts) * len(D_crn)
    X_struct = np.repeat(X_pat, reps, axis=0)
    V_struct = np.tile(np.repeat(V_opts, len(D_crn), axis=0), (len(X_pat), 1))
    D_struct = np.tile(D_crn, (len(X_pat) * len(V_opts), 1))

    # joint low-discrepancy cloud over (x, v, d)
    m = 2 ** max(1, math.ceil(math.log2(max(n_samples, 2))))
    sob = qmc.Sobol(d=2 * n + 4, scramble=True, seed=seed)
    u = sob.random_base2(int(math.log2(m)))
    X_sob = u[:, :n] * spec.a[None, :]
    V_sob = u[:, n:2 * n] * v_box[None, :]
    D_sob = ds.d_lo + u[:, 2 * n:] * (ds.d_hi - ds.d_lo)

    X_all = np.vstack([X_struct, X_sob])
    V_all = np.vstack([V_struct, V_sob])
    D_all = np.vstack([D_struct, D_sob])
    vals = ratios(X_all, V_all, D_all)
    n_evaluated = int(np.isfinite(vals).sum())
    if n_evaluated == 0:
        raise ValueError("no sample state reached the mass floor")

    # coordinate-descent refinement of the best seeds
    d_lo, d_hi = ds.d_lo, ds.d_hi
    best_idx = np.argsort(vals)[:refine_top]
    incumbent = (float(vals[best_idx[0]]), X_all[best_idx[0]].copy(),
                 V_all[best_idx[0]].copy(), D_all[best_idx[0]].copy())

    def refine(x0, v0, d0, val0):
        x, v, d, val = x0.copy(), v0.copy(), d0.copy(), val0

        def scan(kind, idx, lo_full, hi_full):
            nonlocal x, v, d, val
            lo, hi = lo_full, hi_full
            for _ in range(3):  # zoom levels
                ts = np.linspace(lo, hi, scan_width)
                Xb = np.tile(x, (scan_width, 1))
                Vb = np.tile(v, (scan_width, 1))
                Db = np.tile(d, (scan_width, 1))
                (Xb if kind == "x" else Vb if kind == "v" else Db)[:, idx] = ts
                cand = ratios(Xb, Vb, Db)
                k = int(np.argmin(cand))
                if cand[k] < val:
                    val = float(cand[k])
                    if kind == "x":
                        x[idx] = ts[k]
                    elif kind == "v":
                        v[idx] = ts[k]
                    else:
                        d[idx] = ts[k]
                span = (hi - lo) / (scan_width - 1)
                lo = max(lo_full, ts[k] - span)
                hi = min(hi_full, ts[k] + span)

        for _ in range(refine_sweeps):
            for i in range(n):
                scan("x", i, 0.0, float(spec.a[i]))
            for i in range(n):
                scan("v", i, 0.0, float(v_box[i]))
            for k in range(4):
                scan("d", k, float(d_lo[k]), float(d_hi[k]))
        return val, x, v, d

    for idx in best_idx:
        if not np.isfinite(vals[idx]):
            continue
        val, x, v, d = refine(X_all[idx], V_all[idx], D_all[idx],
                              float(vals[idx]))
        if val < incumbent[0]:
            incumbent = (val, x, v, d)

    gamma, x_min, v_min, d_min = incumbent
    if not math.isfinite(gamma) or gamma <= 0:
        raise ThrottleBoundViolation(
            f"sampled throttle ratio hit {gamma:.3g}",
            witness={"x": x_min, "v": v_min, "d": d_min})
    argmin = {"x": x_min, "v": v_min, "d": d_min, "ratio": gamma}
    C = Qconst * Theta * min(1.0, gamma)
    return DrainConstants(Qconst=Qconst, theta=theta, Theta=Theta, gamma=gamma,
                          C=C, argmin=argmin, v_box=v_box,
                          mass_floor=mass_floor, n_evaluated=n_evaluated)


def trapping_bound(C: float, r, beta, b, a) -> int:
    """Step count after which any trajectory is trapped under min_i r_i beta_i.

    The weighted mass r'x contracts by the factor (1 - C) per step toward the
    floor r'b / C; starting from the worst case r'a, m is the first count at
    which the remaining gap fits inside the target box.  Raises
    TrappingInfeasible when the inflow floor alone exceeds the target.
    """
    r = np.asarray(r, dtype=float)
    beta = np.asarray(beta, dtype=float)
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    if not 0.0 < C < 1.0:
        raise ValueError("contraction rate C must lie in (0, 1)")
    target = float(np.min(r * beta))
    gap = C * target - float(r @ b)
    if gap <= 0:
        raise TrappingInfeasible(
            f"inflow floor consumes the whole target: C min(r beta) = "
            f"{C * target:.6g} but r'b = {float(r @ b):.6g}")
    start = C * float(r @ a)
    m = math.floor((math.log(gap) - math.log(start)) / math.log1p(-C)) + 1
    return max(0, m)


def lyapunov_eval(x, xstar) -> np.ndarray:
    """Stacked deviation vector (excess above x*, deficit below x*)."""
    x = np.asarray(x, dtype=float)
    xstar = np.asarray(xstar, dtype=float)
    return np.concatenate([h_map(x - xstar), h_map(xstar - x)])


@dataclass(frozen=True)
class ContractionReport:
    max_violation: float
    n_samples: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol


def contraction_check(spec: NetworkSpec, ds: DiagramSet,
                      controller: ControllerConfig, cert,
                      n_samples: int = 10_000, seed: int = 0,
                      tol: float = 1e-9) -> ContractionReport:
    """Sample closed-loop steps inside [0, beta] against the comparison bound.

    Draws states uniformly from the certified box and disturbances from the
    uncertainty box, applies the control law, and reports the worst entry of
    V(x+) - Gamma V(x) (positive means the bound failed).
    """
    rng = _philox(seed)
    beta = np.asarray(cert.beta, dtype=float)
    Gamma = np.asarray(cert.Gamma, dtype=float)
    X = rng.uniform(0.0, beta, size=(n_samples, spec.n))
    D = uniform_uncertainty(ds, n_samples, rng)
    worst = -math.inf
    for x, d in zip(X, D):
        v = control.control_law(controller, x)
        x_next, _ = step(spec, ds, x, v, d)
        gap = lyapunov_eval(x_next, controller.xstar) \
            - Gamma @ lyapunov_eval(x, controller.xstar)
        worst = max(worst, float(gap.max()))
    return ContractionReport(max_violation=worst, n_samples=n_samples, tol=tol)


@dataclass(frozen=True)
class CertificateCore:
    """Controller-independent certificate data (stage one of the pipeline)."""

    r: np.ndarray
    xi: np.ndarray
    epsstar: float
    beta: np.ndarray
    drain: DrainConstants

    @property
    def Qconst(self) -> float:
        return self.drain.Qconst

    @property
    def theta(self) -> np.ndarray:
        return self.drain.theta

    @property
    def Theta(self) -> float:
        return self.drain.Theta

    @property
    def gamma(self) -> float:
        return self.drain.gamma

    @property
    def C(self) -> float:
        return self.drain.C


@dataclass(frozen=True)
class StabilityCertificate:
    """Full certificate: core constants plus controller-dependent results.

    ``m`` is None (with ``floor_budget_ok`` False) when the controller's
    inflow floor is too large for a finite trapping bound — the law still
    runs, but only the box invariance part of the certificate stands.
    """

    core: CertificateCore
    controller: ControllerConfig
    floor_fraction: float
    Gamma: np.ndarray
    rho: float
    m: int | None
    floor_budget_ok: bool

    @property
    def r(self) -> np.ndarray:
        return self.core.r

    @property
    def xi(self) -> np.ndarray:
        return self.core.xi

    @property
    def epsstar(self) -> float:
        return self.core.epsstar

    @property
    def beta(self) -> np.ndarray:
        return self.core.beta

    @property
    def C(self) -> float:
        return self.core.C


def certify(spec: NetworkSpec, ds: DiagramSet, eq, controller=None,
            tau: float = 0.5, n_gamma_samples: int = 100_000,
            seed: int = 0) -> StabilityCertificate:
    """Run the full pipeline around an equilibrium, synthesizing if needed.

    Stage one computes weights, the invariant box, and the drain constants
    from the network alone.  Stage two synthesizes a controller when none is
    given (its floor then respects the drain budget by construction), builds
    the comparison matrix, and attempts the trapping bound.
    """
    r = weights_r(spec.P)
    L = np.array([fd.L for fd in ds.demands])
    G = np.array([fd.G for fd in ds.demands])
    xi = weights_xi(spec.P, L, G)
    epsstar, beta = invariant_region(eq.xstar, xi, spec.mu)
    drain = drain_constants(spec, ds, r, n_samples=n_gamma_samples, seed=seed)
    core = CertificateCore(r=r, xi=xi, epsstar=epsstar, beta=beta, drain=drain)

    if controller is None:
        controller = control.synthesize(spec, eq, core, tau=tau)
    Gamma, rho = build_gamma(spec.P, L, G, controller.vstar, controller.b,
                             controller.K, controller.tau)
    with np.errstate(invalid="ignore"):
        ratio = np.divide(controller.b, controller.vstar,
                          out=np.zeros(spec.n), where=controller.vstar > 0)
    floor_fraction = float(ratio.max())
    try:
        m: int | None = trapping_bound(drain.C, r, beta, controller.b, spec.a)
        floor_budget_ok = True
    except TrappingInfeasible:
        m, floor_budget_ok = None, False
    return StabilityCertificate(core=core, controller=controller,
                                floor_fraction=floor_fraction, Gamma=Gamma,
                                rho=rho, m=m, floor_budget_ok=floor_budget_ok)
