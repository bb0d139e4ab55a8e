"""Gait family: constraint pins, limit cycles, stability, library, tube capture."""

import numpy as np
import pytest
from conftest import draw_tube_state

from gaitroa.dynamics import RobotParams, reset_map
from gaitroa.gaits import (
    BETA_MAX,
    BETA_MIN,
    DEFAULT_GAINS,
    N_LIBRARY,
    SLOPE_PRE,
    TARGET_EPS,
    TARGET_WEIGHTS,
    GaitLibrary,
    NoImpactError,
    _simulate_to_impact,
    generate_gait,
    poincare_map,
    poincare_stability,
    target_l,
    tube_distance,
    vc_eval,
)

P = RobotParams()


def weighted_dist(a, b):
    w = np.asarray(TARGET_WEIGHTS)
    return float(np.sqrt(((np.asarray(a) - np.asarray(b)) ** 2 * w).sum()))


def slow_corner_launch(vc, lc):
    """On-surface launch at the tube edge, all budget in the slow direction."""
    s_post = vc_eval(vc, vc.beta)[1]
    dmax = TARGET_EPS / np.sqrt(TARGET_WEIGHTS[2] * (1.0 + s_post * s_post))
    w = lc.fixed_point[2] + dmax
    return np.array([vc.beta, -2.0 * vc.beta, w, s_post * w])


# ---------------------------------------------------------------------------
# virtual constraint polynomial


def test_endpoint_pins(gait_shallow, gait_mid, gait_steep):
    for vc, _ in (gait_shallow, gait_mid, gait_steep):
        b = vc.beta
        assert abs(vc_eval(vc, b)[0] - (-2.0 * b)) < 1e-10
        assert abs(vc_eval(vc, -b)[0] - 2.0 * b) < 1e-10
        assert abs(vc_eval(vc, -b)[1] - SLOPE_PRE) < 1e-9


def test_surface_is_impact_invariant(gait_mid, gait_steep):
    # oracle: push an arbitrary on-surface pre-impact state through the
    # mechanical reset; the relabeled state must still satisfy y = dy = 0,
    # which is exactly what the computed post-impact slope pin promises
    for vc, _ in (gait_mid, gait_steep):
        b = vc.beta
        s_pre = vc_eval(vc, -b)[1]
        for w in (-0.4, -0.7, -1.1):
            x_pre = np.array([-b, 2.0 * b, w, s_pre * w])
            x_post = reset_map(x_pre, P)
            c, dc, _ = vc_eval(vc, x_post[0])
            assert abs(x_post[1] - c) < 1e-10
            assert abs(x_post[3] - dc * x_post[2]) < 1e-10


def test_vc_eval_derivatives_match_fd(gait_mid):
    vc, _ = gait_mid
    rng = np.random.default_rng(2)
    h = 1e-6
    for q1 in rng.uniform(-vc.beta, vc.beta, size=20):
        c0, dc0, ddc0 = vc_eval(vc, q1)
        cp = vc_eval(vc, q1 + h)[0]
        cm = vc_eval(vc, q1 - h)[0]
        dcp = vc_eval(vc, q1 + h)[1]
        dcm = vc_eval(vc, q1 - h)[1]
        assert abs((cp - cm) / (2 * h) - dc0) < 1e-8 * max(1.0, abs(dc0))
        assert abs((dcp - dcm) / (2 * h) - ddc0) < 1e-7 * max(1.0, abs(ddc0))


def test_vc_eval_batches_match_scalars(gait_mid):
    vc, _ = gait_mid
    qs = np.linspace(-vc.beta, vc.beta, 7)
    cv, dv, ddv = vc_eval(vc, qs)
    for i, q in enumerate(qs):
        c, d, dd = vc_eval(vc, q)
        assert cv[i] == c and dv[i] == d and ddv[i] == dd


def test_out_of_range_beta_rejected():
    with pytest.raises(ValueError):
        generate_gait(0.05, P)
    with pytest.raises(ValueError):
        generate_gait(0.2, P)


# ---------------------------------------------------------------------------
# limit cycles


def test_cycle_samples_lie_on_surface(gait_shallow, gait_mid, gait_steep):
    for vc, lc in (gait_shallow, gait_mid, gait_steep):
        c, dc, _ = vc_eval(vc, lc.samples[:, 0])
        assert np.max(np.abs(lc.samples[:, 1] - c)) < 1e-6
        assert np.max(np.abs(lc.samples[:, 3] - dc * lc.samples[:, 2])) < 1e-5


def test_fixed_point_closes_orbit(gait_shallow, gait_mid, gait_steep):
    for vc, lc in (gait_shallow, gait_mid, gait_steep):
        post, t_imp, _, _, _ = _simulate_to_impact(lc.fixed_point, vc,
                                                   DEFAULT_GAINS, P)
        assert lc.period_Tp > 0.3
        assert abs(t_imp - lc.period_Tp) < 1e-9
        assert np.max(np.abs(post - lc.fixed_point)) < 1e-6


def test_section_residual_small(gait_shallow, gait_mid, gait_steep):
    for vc, lc in (gait_shallow, gait_mid, gait_steep):
        xi = np.array([lc.fixed_point[0], lc.fixed_point[2], lc.fixed_point[3]])
        xi_next, _ = poincare_map(xi, vc, DEFAULT_GAINS, P)
        assert np.linalg.norm(xi_next - xi) < 1e-8


def test_cycle_geometry(gait_mid):
    _, lc = gait_mid
    assert lc.samples.shape[0] == len(lc.phases)
    assert lc.phases[0] == 0.0 and lc.phases[-1] == 1.0
    # starts at +beta (to shooting tolerance), ends at the impact
    # configuration -beta
    assert abs(lc.samples[0, 0] - lc.beta) < 1e-6
    assert abs(lc.samples[-1, 0] + lc.beta) < 1e-3
    # reset of the final sample reproduces the first
    back = reset_map(lc.samples[-1], P)
    assert np.max(np.abs(back - lc.samples[0])) < 1e-6


def test_spectral_radius_stable_and_step_converged(gait_mid):
    _, lc = gait_mid
    rho_h = poincare_stability(lc, P, dt=1e-3)
    rho_h2 = poincare_stability(lc, P, dt=5e-4)
    assert rho_h < 1.0
    assert rho_h2 < 1.0
    assert abs(rho_h - rho_h2) < 1e-3


def test_cycle_torque_stays_inside_limit(gait_shallow, gait_mid, gait_steep):
    for vc, lc in (gait_shallow, gait_mid, gait_steep):
        _, _, _, _, us = _simulate_to_impact(lc.fixed_point, vc, DEFAULT_GAINS,
                                             P, record=True)
        peak = float(np.max(np.abs(us)))
        # clamping never engages on the nominal orbit
        assert peak < P.u_max


# ---------------------------------------------------------------------------
# gait library


def test_library_covers_range_with_monotone_impacts(library):
    assert len(library.betas) == N_LIBRARY
    assert np.allclose(library.betas, np.linspace(BETA_MIN, BETA_MAX, N_LIBRARY))
    impact_angles = [lc.samples[-1, 0] for lc in library.gaits]
    diffs = np.diff(impact_angles)
    assert np.all(diffs < 0.0), "impact stance angle must decrease strictly"
    for lc in library.gaits:
        b = lc.beta
        assert abs(vc_eval(lc.vc, b)[0] - (-2.0 * b)) < 1e-10
        assert abs(vc_eval(lc.vc, -b)[0] - 2.0 * b) < 1e-10


def test_library_members_stable(library):
    assert np.all(library.spectral_radii < 1.0)
    # spot-check one stored radius against a fresh computation
    lc = library.gaits[16]
    rho = poincare_stability(lc, library.robot, library.gains)
    assert abs(rho - library.spectral_radii[16]) < 1e-6


def test_library_roundtrip(library, tmp_path):
    path = tmp_path / "lib.json"
    library.save(path)
    again = GaitLibrary.load(path)
    assert np.array_equal(again.betas, library.betas)
    assert np.array_equal(again.spectral_radii, library.spectral_radii)
    assert again.robot == library.robot
    assert again.gains == library.gains
    for a, b in zip(again.gaits, library.gaits):
        assert a.beta == b.beta
        assert a.period_Tp == b.period_Tp
        assert np.array_equal(a.samples, b.samples)
        assert a.vc.coeffs == b.vc.coeffs
        assert a.vc.bezier == b.vc.bezier


def test_member_lookup_and_interpolation(library):
    b16 = float(library.betas[16])
    assert np.array_equal(library.cycle_samples(b16), library.gaits[16].samples)
    mid = 0.5 * (library.betas[10] + library.betas[11])
    s = library.cycle_samples(mid)
    lo = np.minimum(library.gaits[10].samples, library.gaits[11].samples)
    hi = np.maximum(library.gaits[10].samples, library.gaits[11].samples)
    assert np.all(s >= lo - 1e-12) and np.all(s <= hi + 1e-12)
    assert library.member_index(mid) is None
    assert library.nearest_beta(mid) in (library.betas[10], library.betas[11])


# ---------------------------------------------------------------------------
# target margin function


def test_target_margin_values(library):
    b = float(library.betas[16])
    lc = library.gaits[16]
    assert abs(target_l(lc.fixed_point, b, library) - (-TARGET_EPS)) < 1e-12
    far = np.array([0.5, 0.5, 3.0, 3.0])
    assert target_l(far, b, library) > 0.0
    # batched call agrees with scalars
    X = np.vstack([lc.fixed_point, far, lc.samples[77]])
    vals = target_l(X, b, library)
    for i in range(3):
        assert vals[i] == target_l(X[i], b, library)


def test_target_margin_is_nonexpansive(library):
    # |l(a) - l(b)| <= weighted distance(a, b): min over samples of a
    # 1-Lipschitz family in the weighted metric
    b = float(library.betas[5])
    rng = np.random.default_rng(9)
    for _ in range(200):
        a = rng.uniform([-0.4, -1.0, -3.0, -3.0], [0.4, 1.0, 3.0, 3.0])
        c = a + rng.normal(size=4) * 0.1
        gap = abs(target_l(a, b, library) - target_l(c, b, library))
        assert gap <= weighted_dist(a, c) + 1e-9


# ---------------------------------------------------------------------------
# capture tube behaviour


def test_tube_states_contract_over_ten_steps(gait_shallow, gait_mid, gait_steep):
    for vc, lc in (gait_shallow, gait_mid, gait_steep):
        rng = np.random.default_rng(7)
        for _ in range(30):
            x = draw_tube_state(rng, lc)
            d0 = tube_distance(x, lc.samples)
            for _step in range(10):
                x, _, _, _, _ = _simulate_to_impact(x, vc, DEFAULT_GAINS, P,
                                                    max_time=6.0)
            d10 = tube_distance(x, lc.samples)
            assert d10 <= max(0.75 * d0, 1e-4)


def test_slowest_tube_launch_recovers(gait_shallow, gait_mid, gait_steep):
    # the binding case for the whole family: an on-surface launch slower by
    # the full tube budget must still clear the apex and fall back in
    for vc, lc in (gait_shallow, gait_mid, gait_steep):
        x = slow_corner_launch(vc, lc)
        d0 = tube_distance(x, lc.samples)
        assert d0 <= TARGET_EPS + 1e-9
        for _step in range(10):
            x, _, _, _, _ = _simulate_to_impact(x, vc, DEFAULT_GAINS, P,
                                                max_time=6.0)
        assert tube_distance(x, lc.samples) < 0.70 * d0


def test_slow_launch_convergence_depth(gait_mid, gait_steep):
    # the speed mode contracts at the impact-loss rate, so full convergence
    # takes tens of steps; the steeper the gait the faster the contraction
    for (vc, lc), budget in ((gait_mid, 30), (gait_steep, 25)):
        x = slow_corner_launch(vc, lc)
        steps = None
        for k in range(budget):
            x, _, _, _, _ = _simulate_to_impact(x, vc, DEFAULT_GAINS, P,
                                                max_time=6.0)
            if tube_distance(x, lc.samples) < 1e-3:
                steps = k + 1
                break
        assert steps is not None, f"no convergence within {budget} steps"


def test_slow_launch_outside_basin_never_captured(gait_mid):
    # far outside the tube on the slow side the walker cannot climb the
    # apex; it either stops producing admissible impacts or limps through a
    # rocking motion whose crossings stay far from the orbit
    vc, lc = gait_mid
    x = np.array([vc.beta, -2.0 * vc.beta, -0.05, 0.0])
    try:
        for _step in range(10):
            x, _, _, _, _ = _simulate_to_impact(x, vc, DEFAULT_GAINS, P,
                                                max_time=6.0)
            assert tube_distance(x, lc.samples) > TARGET_EPS
    except NoImpactError:
        pass
