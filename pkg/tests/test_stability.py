import math

import numpy as np
import pytest

from netstab.errors import (DimensionError, NumericalError, StructuralError,
                            TrappingInfeasible)
from netstab.stability import (build_gamma, certify, contraction_check,
                               drain_constants, invariant_region,
                               lyapunov_eval, spectral_radius, trapping_bound,
                               weights_r, weights_xi)

import oracles


def _ref_slopes(ref_ds):
    L = np.array([fd.L for fd in ref_ds.demands])
    G = np.array([fd.G for fd in ref_ds.demands])
    return L, G


def test_weights_match_hand_values(ref_spec, ref_ds):
    r = weights_r(ref_spec.P)
    np.testing.assert_array_equal(r, oracles.R_WEIGHTS)
    L, G = _ref_slopes(ref_ds)
    xi = weights_xi(ref_spec.P, L, G)
    np.testing.assert_allclose(xi, oracles.XI_WEIGHTS, rtol=1e-9)


def test_weight_rules_hold_strictly_on_random_networks():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        P, L, G = oracles.random_acyclic_instance(rng)
        r = weights_r(P)
        assert np.all(P @ r < r)
        xi = weights_xi(P, L, G)
        assert np.all(L * xi > P.T @ (G * xi))


def test_spectral_radius_matches_eigensolver():
    rng = np.random.default_rng(8)
    for _ in range(25):
        n = int(rng.integers(2, 12))
        M = rng.normal(0, 1, (n, n))
        want = oracles.spectral_radius_eig(M)
        assert spectral_radius(M) == pytest.approx(want, rel=1e-9, abs=1e-9)


def test_spectral_radius_handles_defective_matrices():
    """A Jordan block defeats plain power iteration; squaring must not care.

    Floating point caps the accuracy at roughly eps**(1/p) for a defective
    eigenvalue of index p under a dense similarity, so only the small blocks
    that shared release rates actually produce get a tight tolerance.
    """
    J = 0.7 * np.eye(5) + np.diag(np.ones(4), k=1)
    assert spectral_radius(J) == pytest.approx(0.7, abs=1e-9)
    rng = np.random.default_rng(1)
    for _ in range(10):
        J2 = 0.7 * np.eye(2) + np.diag([1.0], k=1)
        T = rng.normal(0, 1, (2, 2))
        sim = np.linalg.solve(T, J2 @ T)  # same spectrum, dense entries
        assert spectral_radius(sim) == pytest.approx(0.7, abs=1e-4)
    nil = np.diag(np.ones(3), k=1)
    assert spectral_radius(nil) == 0.0
    assert spectral_radius(np.zeros((4, 4))) == 0.0


def test_spectral_radius_input_checks():
    with pytest.raises(DimensionError):
        spectral_radius(np.zeros((2, 3)))
    with pytest.raises(NumericalError):
        spectral_radius(np.array([[np.nan, 0], [0, 1]]))


def test_gamma_block_structure(ref_spec, ref_ds, ref_cert):
    n = ref_spec.n
    L, G = _ref_slopes(ref_ds)
    ctl = ref_cert.controller
    Gamma, rho = build_gamma(ref_spec.P, L, G, ctl.vstar, ctl.b, ctl.K, ctl.tau)
    A = np.eye(n) + ref_spec.P.T * G - np.diag(L)
    B = (ctl.vstar - ctl.b)[:, None] * ctl.K / ctl.tau
    np.testing.assert_allclose(Gamma[:n, :n], A, rtol=0, atol=0)
    np.testing.assert_allclose(Gamma[n:, n:], A, rtol=0, atol=0)
    np.testing.assert_array_equal(Gamma[:n, n:], np.zeros((n, n)))
    np.testing.assert_allclose(Gamma[n:, :n], B, rtol=0, atol=0)
    assert rho == pytest.approx(oracles.RHO_CLOSED_FORM, abs=1e-12)
    assert oracles.spectral_radius_eig(Gamma) == pytest.approx(rho, abs=1e-9)


def test_gamma_radius_below_one_for_random_instances():
    rng = np.random.default_rng(77)
    for _ in range(50):
        P, L, G = oracles.random_acyclic_instance(rng)
        n = len(L)
        vstar = rng.uniform(0, 30, n)
        b = rng.uniform(0, 1, n) * vstar
        K = rng.uniform(0, 2.0 / n, (n, n))
        tau = float(rng.uniform(0.1, 0.9))
        Gamma, rho = build_gamma(P, L, G, vstar, b, K, tau)
        assert rho < 1
        assert oracles.spectral_radius_eig(Gamma) == pytest.approx(rho, abs=1e-9)


def test_invariant_region_hand_computation(ref_eq, ref_cert, ref_spec):
    eps, beta = invariant_region(ref_eq.xstar, ref_cert.xi, ref_spec.mu)
    want = 1e-5 / oracles.XI_WEIGHTS[7]  # the tail cell binds
    assert eps == pytest.approx(want, rel=1e-6)
    assert np.all(beta <= ref_spec.mu)
    assert beta[7] == pytest.approx(ref_spec.mu[7], abs=1e-12)
    assert np.all(beta > ref_eq.xstar)

    with pytest.raises(ValueError, match="reaches"):
        invariant_region(ref_spec.mu, ref_cert.xi, ref_spec.mu)
    with pytest.raises(ValueError, match="positive"):
        invariant_region(ref_eq.xstar, np.zeros(8), ref_spec.mu)


def test_drain_constants_reference_values(ref_spec, ref_ds, ref_cert):
    drain = ref_cert.core.drain
    assert drain.Qconst == pytest.approx(0.5, abs=1e-12)
    L = np.array([fd.L for fd in ref_ds.demands])
    fmin = np.array([fd.fmin for fd in ref_ds.demands])
    dtl = np.array([fd.delta_tilde for fd in ref_ds.demands])
    theta_hand = np.minimum(L, np.minimum(fmin / ref_spec.a,
                                          L * dtl / ref_spec.a))
    np.testing.assert_allclose(drain.theta, theta_hand, rtol=0, atol=1e-15)
    assert drain.Theta == pytest.approx(0.0029117657647, abs=1e-9)
    # the sampled infimum lands in the hand-located basin
    assert 0.0011 < drain.gamma < 0.0011604
    assert drain.C == pytest.approx(
        drain.Qconst * drain.Theta * min(1.0, drain.gamma), rel=1e-12)
    np.testing.assert_allclose(
        drain.v_box,
        np.where(np.arange(8) % 4 == 0, 24.85, 0.15), rtol=0, atol=1e-12)
    assert drain.n_evaluated > 100_000


def test_drain_constants_input_checks(ref_spec, ref_ds):
    with pytest.raises(ValueError, match="positive"):
        drain_constants(ref_spec, ref_ds, np.zeros(8), n_samples=64)
    with pytest.raises(DimensionError):
        drain_constants(ref_spec, ref_ds, np.ones(3), n_samples=64)


def test_trapping_bound_is_minimal():
    C, r = 0.01, np.array([1.0, 1.0])
    beta = np.array([10.0, 10.0])
    b = np.array([0.001, 0.001])
    a = np.array([100.0, 100.0])
    m = trapping_bound(C, r, beta, b, a)
    gap = C * float(np.min(r * beta)) - float(r @ b)
    start = C * float(r @ a)
    assert start * (1 - C) ** m <= gap
    assert start * (1 - C) ** (m - 1) > gap

    with pytest.raises(TrappingInfeasible):
        trapping_bound(C, r, beta, np.array([2.0, 2.0]), a)
    with pytest.raises(ValueError):
        trapping_bound(1.5, r, beta, b, a)


def test_lyapunov_eval_stacks_excess_then_deficit():
    x = np.array([3.0, 1.0, 2.0])
    xstar = np.array([2.0, 2.0, 2.0])
    np.testing.assert_array_equal(lyapunov_eval(x, xstar),
                                  [1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def test_contraction_check_passes_on_certified_box(ref_spec, ref_ds, ref_cert):
    report = contraction_check(ref_spec, ref_ds, ref_cert.controller, ref_cert,
                               n_samples=1500, seed=3)
    assert report.passed
    assert report.max_violation <= 1e-9
    assert report.n_samples == 1500


def test_certificate_consistency(ref_spec, ref_eq, ref_cert):
    cert = ref_cert
    assert cert.rho == pytest.approx(0.991, abs=1e-9)
    assert cert.floor_budget_ok
    assert cert.m is not None and cert.m > 0
    assert cert.m == trapping_bound(cert.C, cert.r, cert.beta,
                                    cert.controller.b, ref_spec.a)
    assert cert.Gamma.shape == (16, 16)
    assert 0 < cert.floor_fraction < 1e-6
    assert cert.epsstar == pytest.approx(1e-5 / oracles.XI_WEIGHTS[7], rel=1e-6)


def test_certificate_flags_oversized_floor(ref_spec, ref_ds, ref_eq, bench_ctrl):
    """The hand-tuned benchmark floor busts the drain budget: no finite bound."""
    cert = certify(ref_spec, ref_ds, ref_eq, controller=bench_ctrl,
                   n_gamma_samples=4096)
    assert not cert.floor_budget_ok
    assert cert.m is None
    assert cert.rho == pytest.approx(0.991, abs=1e-9)
