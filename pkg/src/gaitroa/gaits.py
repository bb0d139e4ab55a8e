"""Periodic gait family for the two-link walker.

A gait is a degree-5 virtual-constraint polynomial q2r(q1) enforced by the
IO-linearizing controller.  The polynomial is built in Bezier form over the
normalized phase s = (beta - q1)/(2*beta): the endpoint values pin the pre-
and post-impact configurations to the switching surface, the endpoint slopes
make the constraint surface invariant under the reset map (the post-impact
velocity ratio is computed from the impact velocity matrix), and the two
interior control values are free design variables chosen by Nelder-Mead to
minimize integrated squared torque over one cycle.

The limit cycle itself is pinned down by Newton shooting on the Poincare
section of post-impact states, parameterized by (q1, dq1, dq2) with
q2 = -2*q1 implied by surface membership.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from math import comb

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.optimize import minimize

from .dynamics import (
    RobotParams,
    _accel_scalar,
    impact_velocity_matrix,
    reset_map,
)
from .io_linearization import DEFAULT_GAINS, IOGains, io_control_full

BETA_MIN = 0.072
BETA_MAX = 0.145
N_LIBRARY = 21
N_CYCLE = 200
TARGET_EPS = 0.05
TARGET_WEIGHTS = (1.0, 1.0, 0.1, 0.1)
# swing-leg slope dq2r/dq1 at the pre-impact end; must stay above -2 so the
# surface function 2*q1+q2 is descending in time at impact.  The positive
# value mirrors the unactuated swing, which retracts before striking.
SLOPE_PRE = 1.2
SIM_DT = 1e-3
LIBRARY_VERSION = 1


class NoImpactError(RuntimeError):
    """Closed-loop rollout produced no admissible reset within the horizon."""


class ShootingError(RuntimeError):
    """Newton shooting on the Poincare section failed to converge."""


class GaitGenerationError(RuntimeError):
    """Direct search found no stable gait for the requested beta."""


# ---------------------------------------------------------------------------
# virtual constraint


@dataclass(frozen=True)
class VirtualConstraint:
    """Degree-5 polynomial q2r(q1) with cached derivative coefficients."""

    beta: float
    coeffs: tuple          # power basis in q1, ascending
    dcoeffs: tuple
    ddcoeffs: tuple
    bezier: tuple          # six Bezier control values over s in [0, 1]


def _bezier_end_values(beta: float, p: RobotParams, slope_pre: float):
    """Boundary Bezier values and the reset-consistent post-impact slope."""
    W = impact_velocity_matrix(-beta, p)
    v = W @ np.array([1.0, slope_pre])
    if abs(v[0]) < 1e-12:
        raise GaitGenerationError(
            f"impact map degenerate for beta={beta:.4f}, slope_pre={slope_pre}"
        )
    slope_post = float(v[1] / v[0])
    a0 = -2.0 * beta
    a5 = 2.0 * beta
    # B'(0) = 5*(a1-a0) in s; chain rule with ds/dq1 = -1/(2*beta)
    a1 = a0 - 0.4 * beta * slope_post
    a4 = a5 + 0.4 * beta * slope_pre
    return a0, a1, a4, a5, slope_post


def make_virtual_constraint(
    beta: float,
    alpha2: float,
    alpha3: float,
    p: RobotParams,
    slope_pre: float = SLOPE_PRE,
) -> VirtualConstraint:
    a0, a1, a4, a5, _ = _bezier_end_values(beta, p, slope_pre)
    bez = (a0, a1, float(alpha2), float(alpha3), a4, a5)

    # power coefficients in s of sum_k bez[k] C(5,k) s^k (1-s)^(5-k)
    cs = np.zeros(6)
    for k, ak in enumerate(bez):
        term = np.array([ak * comb(5, k)])
        term = npoly.polymul(term, npoly.polypow([0.0, 1.0], k)) if k else term
        if k < 5:
            term = npoly.polymul(term, npoly.polypow([1.0, -1.0], 5 - k))
        cs[: len(term)] += term

    # compose with s(q1) = 1/2 - q1/(2*beta) by Horner in polynomial arithmetic
    lin = np.array([0.5, -0.5 / beta])
    cq = np.zeros(1)
    for c in cs[::-1]:
        cq = npoly.polyadd(npoly.polymul(cq, lin), [c])
    cq = np.pad(cq, (0, 6 - len(cq)))[:6]
    dc = npoly.polyder(cq)
    ddc = npoly.polyder(dc)
    return VirtualConstraint(
        beta=float(beta),
        coeffs=tuple(float(c) for c in cq),
        dcoeffs=tuple(float(c) for c in dc),
        ddcoeffs=tuple(float(c) for c in ddc),
        bezier=tuple(float(a) for a in bez),
    )


def vc_eval(vc: VirtualConstraint, q1):
    """q2r and its first two derivatives with respect to q1."""
    q1 = np.asarray(q1, dtype=float)
    v = npoly.polyval(q1, np.asarray(vc.coeffs))
    dv = npoly.polyval(q1, np.asarray(vc.dcoeffs))
    ddv = npoly.polyval(q1, np.asarray(vc.ddcoeffs))
    if q1.ndim == 0:
        return float(v), float(dv), float(ddv)
    return v, dv, ddv


# ---------------------------------------------------------------------------
# closed-loop simulation (scalar hot path)


def _rk4_closed(q1, q2, d1, d2, vc, gains, p, h):
    """RK4 step of the feedback-closed vector field.

    The control is re-evaluated at every stage so the integration error of
    the tracked output y = q2 - q2r(q1) stays at integrator order instead of
    the first-order floor a held torque would impose.  Returns the new state
    and the stage-1 torque (the value a logger would see at the step start).
    """

    def f(y1, y2, v1, v2):
        u = io_control_full((y1, y2, v1, v2), vc, gains, p)[0]
        a1, a2 = _accel_scalar(y1, y2, v1, v2, u, p)
        return v1, v2, a1, a2, u

    k1 = f(q1, q2, d1, d2)
    k2 = f(
        q1 + 0.5 * h * k1[0], q2 + 0.5 * h * k1[1],
        d1 + 0.5 * h * k1[2], d2 + 0.5 * h * k1[3],
    )
    k3 = f(
        q1 + 0.5 * h * k2[0], q2 + 0.5 * h * k2[1],
        d1 + 0.5 * h * k2[2], d2 + 0.5 * h * k2[3],
    )
    k4 = f(q1 + h * k3[0], q2 + h * k3[1], d1 + h * k3[2], d2 + h * k3[3])
    nq1 = q1 + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    nq2 = q2 + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    nd1 = d1 + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    nd2 = d2 + h / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
    return nq1, nq2, nd1, nd2, k1[4]


def _simulate_to_impact(
    x0,
    vc: VirtualConstraint,
    gains: IOGains,
    p: RobotParams,
    dt: float = SIM_DT,
    max_time: float = 4.0,
    record: bool = False,
    bisect_tol: float = 1e-12,
):
    """Flow under io_control until the first admissible reset.

    Returns (post_state, impact_time, times, states, torques); the recorded
    arrays end with the pre-impact state at the impact time.  Raises
    NoImpactError if no admissible crossing occurs.
    """
    q1, q2, d1, d2 = (float(x0[0]), float(x0[1]), float(x0[2]), float(x0[3]))
    t = 0.0
    ts = [0.0] if record else None
    xs = [(q1, q2, d1, d2)] if record else None
    us = [] if record else None
    q1_bar = p.q1_bar
    n_max = int(round(max_time / dt))
    for _ in range(n_max):
        s0 = 2.0 * q1 + q2
        *n1, u = _rk4_closed(q1, q2, d1, d2, vc, gains, p, dt)
        s1 = 2.0 * n1[0] + n1[1]
        if s0 > 0.0 and s1 <= 0.0:
            lo, hi = 0.0, dt
            while hi - lo > bisect_tol:
                mid = 0.5 * (lo + hi)
                xm = _rk4_closed(q1, q2, d1, d2, vc, gains, p, mid)
                if 2.0 * xm[0] + xm[1] > 0.0:
                    lo = mid
                else:
                    hi = mid
            xc = _rk4_closed(q1, q2, d1, d2, vc, gains, p, hi)[:4]
            if xc[0] <= q1_bar and 2.0 * xc[2] + xc[3] < 0.0:
                post = reset_map(np.array(xc), p, tol=1e-6)
                t_imp = t + hi
                if record:
                    ts.append(t_imp)
                    xs.append(tuple(xc))
                    us.append(u)
                return post, t_imp, ts, xs, us
        q1, q2, d1, d2 = n1
        t += dt
        if record:
            ts.append(t)
            xs.append(tuple(n1))
            us.append(u)
    raise NoImpactError(
        f"no admissible reset within {max_time:.2f} s from state {tuple(x0)}"
    )


def _section_state(xi) -> np.ndarray:
    """Lift section coordinates (q1, dq1, dq2) to the full post-impact state."""
    return np.array([xi[0], -2.0 * xi[0], xi[1], xi[2]])


def poincare_map(
    xi,
    vc: VirtualConstraint,
    gains: IOGains,
    p: RobotParams,
    dt: float = SIM_DT,
    max_time: float = 4.0,
):
    """One return of the post-impact section map; returns (xi_next, period)."""
    post, t_imp, _, _, _ = _simulate_to_impact(
        _section_state(xi), vc, gains, p, dt=dt, max_time=max_time
    )
    return np.array([post[0], post[2], post[3]]), t_imp


# ---------------------------------------------------------------------------
# zero dynamics (motion restricted to q2 = q2r(q1)); used to seed shooting


def _vc_scalar(vc: VirtualConstraint, q1: float):
    c, dc, ddc = vc.coeffs, vc.dcoeffs, vc.ddcoeffs
    v = 0.0
    for ck in c[::-1]:
        v = v * q1 + ck
    dv = 0.0
    for ck in dc[::-1]:
        dv = dv * q1 + ck
    ddv = 0.0
    for ck in ddc[::-1]:
        ddv = ddv * q1 + ck
    return v, dv, ddv


def _zd_accel(q1: float, d1: float, vc: VirtualConstraint, p: RobotParams) -> float:
    """Stance acceleration on the constraint surface (unactuated row)."""
    q2, s, ss = _vc_scalar(vc, q1)
    d2 = s * d1
    m, mH = p.leg_mass, p.hip_mass
    a, b = p.leg_com_offset_a, p.leg_com_offset_b
    L = a + b
    g = p.gravity
    c2 = math.cos(q2)
    m11 = m * a * a + mH * L * L + m * L * L + m * b * b - 2.0 * m * L * b * c2
    m12 = m * b * b - m * L * b * c2
    h = m * L * b * math.sin(q2)
    g1 = -g * math.sin(q1) * (m * a + mH * L + m * L) + g * m * b * math.sin(q1 + q2)
    num = h * d2 * d1 + h * (d1 + d2) * d2 + g1 + m12 * ss * d1 * d1
    return -num / (m11 + m12 * s)


def _zd_flow(
    w: float,
    vc: VirtualConstraint,
    p: RobotParams,
    dt: float = 2e-3,
    max_time: float = 4.0,
    record: bool = False,
):
    """Integrate the zero dynamics from (beta, w) until q1 reaches -beta.

    Returns (dq1_pre, duration, times, q1s, dq1s) or None if the stance angle
    turns around before reaching the impact configuration.
    """
    beta = vc.beta
    q1, d1 = beta, float(w)
    t = 0.0
    ts = [0.0] if record else None
    q1s = [q1] if record else None
    d1s = [d1] if record else None
    n_max = int(round(max_time / dt))
    for _ in range(n_max):
        try:
            a1 = _zd_accel(q1, d1, vc, p)
            v1 = d1 + 0.5 * dt * a1
            a2 = _zd_accel(q1 + 0.5 * dt * d1, v1, vc, p)
            v2 = d1 + 0.5 * dt * a2
            a3 = _zd_accel(q1 + 0.5 * dt * v1, v2, vc, p)
            v3 = d1 + dt * a3
            a4 = _zd_accel(q1 + dt * v2, v3, vc, p)
        except (ValueError, OverflowError, ZeroDivisionError):
            # stage argument escaped to infinity; treat as a failed launch
            return None
        q1n = q1 + dt / 6.0 * (d1 + 2.0 * v1 + 2.0 * v2 + v3)
        d1n = d1 + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        if q1n <= -beta:
            # bisect the sub-step for the crossing q1 = -beta
            lo, hi = 0.0, dt
            ql, dl = q1, d1
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                b1 = _zd_accel(ql, dl, vc, p)
                w1 = dl + 0.5 * mid * b1
                b2 = _zd_accel(ql + 0.5 * mid * dl, w1, vc, p)
                w2 = dl + 0.5 * mid * b2
                b3 = _zd_accel(ql + 0.5 * mid * w1, w2, vc, p)
                w3 = dl + mid * b3
                b4 = _zd_accel(ql + mid * w2, w3, vc, p)
                qm = ql + mid / 6.0 * (dl + 2.0 * w1 + 2.0 * w2 + w3)
                if qm > -beta:
                    lo = mid
                else:
                    hi = mid
            tau = 0.5 * (lo + hi)
            b1 = _zd_accel(ql, dl, vc, p)
            w1 = dl + 0.5 * tau * b1
            b2 = _zd_accel(ql + 0.5 * tau * dl, w1, vc, p)
            w2 = dl + 0.5 * tau * b2
            b3 = _zd_accel(ql + 0.5 * tau * w1, w2, vc, p)
            w3 = dl + tau * b3
            b4 = _zd_accel(ql + tau * w2, w3, vc, p)
            d1c = dl + tau / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            t_imp = t + tau
            if record:
                ts.append(t_imp)
                q1s.append(-beta)
                d1s.append(d1c)
            return d1c, t_imp, ts, q1s, d1s
        if d1n >= 0.0:
            return None
        # extreme surfaces can fling the reduced flow off to infinity
        if not (math.isfinite(q1n) and math.isfinite(d1n)) or abs(d1n) > 100.0:
            return None
        q1, d1 = q1n, d1n
        t += dt
        if record:
            ts.append(t)
            q1s.append(q1)
            d1s.append(d1)
    return None


def _zd_return_scan(vc: VirtualConstraint, p: RobotParams, n_scan: int = 11):
    """Scan the 1-D restricted return map dq1+ -> dq1+ for a fixed point.

    The reset multiplies the stance rate by kappa = W11 + W12 * slope_pre.
    Launches slower than some stall speed turn around before the apex, and
    the negative lobe of the map excess g = ret(w) - w can be narrower than
    the scan spacing just past that stall, so the stall boundary is bisected
    and probed before looking for a sign change.  Returns
    (root, rho_zd, g_min, w_slowest): the bracketed root and its
    finite-difference contraction rate (None, None without a crossing), the
    most negative excess seen (grades how far the surface is from supporting
    a periodic solution), and the slowest launch that still reaches the
    impact configuration (None when none does).
    """
    beta = vc.beta
    W = impact_velocity_matrix(-beta, p)
    s_pre = _vc_scalar(vc, -beta)[1]
    kappa = float(W[0, 0] + W[0, 1] * s_pre)

    def ret(w: float):
        out = _zd_flow(w, vc, p)
        if out is None:
            return None
        return kappa * out[0]

    ws = list(np.linspace(-0.25, -1.5, n_scan))
    gs = []
    for w in ws:
        r = ret(w)
        gs.append(None if r is None else r - w)
    first = next((i for i, g in enumerate(gs) if g is not None), None)
    if first is None:
        return None, None, 1.0, None
    w_slowest = ws[first]
    if first > 0:
        lo, hi = ws[first - 1], ws[first]
        for _ in range(16):
            mid = 0.5 * (lo + hi)
            if ret(mid) is None:
                lo = mid
            else:
                hi = mid
        r_th = ret(hi)
        if r_th is not None:
            w_slowest = hi
            ws.insert(first, hi)
            gs.insert(first, r_th - hi)
    g_min = min(g for g in gs if g is not None)
    root = None
    for i in range(len(ws) - 1):
        if gs[i] is None or gs[i + 1] is None:
            continue
        if gs[i] == 0.0:
            root = ws[i]
            break
        if gs[i] * gs[i + 1] < 0.0:
            lo, hi = ws[i], ws[i + 1]
            glo = gs[i]
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                r_mid = ret(mid)
                if r_mid is None:
                    # stalled launch inside the bracket; the crossing must be
                    # on the faster side of it
                    lo = mid
                    continue
                gm = r_mid - mid
                if abs(gm) < 1e-11:
                    lo = hi = mid
                    break
                if glo * gm < 0.0:
                    hi = mid
                else:
                    lo, glo = mid, gm
            root = 0.5 * (lo + hi)
            break
    if root is None:
        return None, None, float(g_min), float(w_slowest)
    h = 1e-5
    rp, rm = ret(root + h), ret(root - h)
    if rp is None or rm is None:
        return None, None, float(g_min), float(w_slowest)
    rho_zd = abs((rp - rm) / (2.0 * h))
    return float(root), float(rho_zd), float(g_min), float(w_slowest)


def _zd_fixed_point(vc: VirtualConstraint, p: RobotParams):
    """Fixed point (w_star, rho_zd) of the restricted return map, or None."""
    root, rho, _, _ = _zd_return_scan(vc, p)
    if root is None:
        return None
    return root, rho


def _zd_hold_torque(q1: float, d1: float, vc: VirtualConstraint, p: RobotParams) -> float:
    """Torque that holds the constraint exactly (actuated row, unclamped)."""
    q2, s, ss = _vc_scalar(vc, q1)
    m = p.leg_mass
    b = p.leg_com_offset_b
    L = p.leg_length
    c2 = math.cos(q2)
    m12 = m * b * b - m * L * b * c2
    m22 = m * b * b
    h = m * L * b * math.sin(q2)
    g2 = p.gravity * m * b * math.sin(q1 + q2)
    acc1 = _zd_accel(q1, d1, vc, p)
    return m12 * acc1 + m22 * (s * acc1 + ss * d1 * d1) - h * d1 * d1 + g2


# ---------------------------------------------------------------------------
# limit cycle via Newton shooting


@dataclass
class LimitCycle:
    """Sampled periodic orbit with its section fixed point."""

    beta: float
    period_Tp: float
    phases: np.ndarray       # (N,), uniform on [0, 1]; phase 1 = pre-impact
    samples: np.ndarray      # (N, 4) states at the phases
    fixed_point: np.ndarray  # (4,) post-impact state on the section
    vc: VirtualConstraint


def find_limit_cycle(
    vc: VirtualConstraint,
    p: RobotParams,
    gains: IOGains = DEFAULT_GAINS,
    xi0=None,
    tol: float = 1e-8,
    max_iter: int = 30,
    dt: float = SIM_DT,
    n_samples: int = N_CYCLE,
) -> LimitCycle:
    """Newton shooting for the post-impact fixed point, then orbit sampling.

    The last sample sits at the impact itself, so reset_map(samples[-1])
    reproduces samples[0].
    """
    beta = vc.beta
    if xi0 is None:
        zd = _zd_fixed_point(vc, p)
        if zd is None:
            raise ShootingError(
                f"no restricted-dynamics fixed point to seed shooting at "
                f"beta={beta:.4f}"
            )
        w_star = zd[0]
        s_post = _vc_scalar(vc, beta)[1]
        xi = np.array([beta, w_star, s_post * w_star])
    else:
        xi = np.asarray(xi0, dtype=float).copy()

    def residual(z):
        return poincare_map(z, vc, gains, p, dt=dt)[0] - z

    r = residual(xi)
    rn = float(np.linalg.norm(r))
    fd = 1e-6
    for _ in range(max_iter):
        if rn < tol:
            break
        J = np.empty((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = fd
            J[:, j] = (residual(xi + e) - residual(xi - e)) / (2.0 * fd)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise ShootingError(f"singular shooting Jacobian at beta={beta:.4f}") from exc
        scale = 1.0
        for _ in range(6):
            cand = xi + scale * step
            rc = residual(cand)
            rcn = float(np.linalg.norm(rc))
            if rcn < rn:
                xi, r, rn = cand, rc, rcn
                break
            scale *= 0.5
        else:
            raise ShootingError(
                f"shooting stalled at beta={beta:.4f}, residual {rn:.2e}"
            )
    if rn >= tol:
        raise ShootingError(
            f"shooting did not reach tolerance at beta={beta:.4f}: {rn:.2e}"
        )

    x_star = _section_state(xi)
    _, period, _, _, _ = _simulate_to_impact(
        x_star, vc, gains, p, dt=dt, record=True
    )
    # resample by integrating exactly to each phase time; interpolating the
    # recorded trajectory instead would pull samples off the orbit by the
    # chord error and break the on-surface property
    phases = np.linspace(0.0, 1.0, n_samples)
    samples = np.empty((n_samples, 4))
    samples[0] = x_star
    state = tuple(float(v) for v in x_star)
    t = 0.0
    for i in range(1, n_samples):
        t_goal = phases[i] * period
        while t_goal - t > 1.5 * dt:
            state = _rk4_closed(*state, vc, gains, p, dt)[:4]
            t += dt
        state = _rk4_closed(*state, vc, gains, p, t_goal - t)[:4]
        t = t_goal
        samples[i] = state
    return LimitCycle(
        beta=beta,
        period_Tp=float(period),
        phases=phases,
        samples=samples,
        fixed_point=x_star,
        vc=vc,
    )


def poincare_stability(
    lc: LimitCycle,
    p: RobotParams,
    gains: IOGains = DEFAULT_GAINS,
    fd_step: float = 1e-6,
    dt: float = SIM_DT,
) -> float:
    """Spectral radius of the section-map Jacobian at the fixed point.

    A perturbed rollout that produces no reset within 3 periods raises
    NoImpactError.
    """
    xi = np.array([lc.fixed_point[0], lc.fixed_point[2], lc.fixed_point[3]])
    horizon = 3.0 * lc.period_Tp
    J = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = fd_step
        pp, _ = poincare_map(xi + e, lc.vc, gains, p, dt=dt, max_time=horizon)
        pm, _ = poincare_map(xi - e, lc.vc, gains, p, dt=dt, max_time=horizon)
        J[:, j] = (pp - pm) / (2.0 * fd_step)
    return float(np.max(np.abs(np.linalg.eigvals(J))))


# ---------------------------------------------------------------------------
# gait generation by direct search


def _zd_cycle_stats(vc: VirtualConstraint, p: RobotParams):
    """Cycle statistics on the constraint surface, or None if none closes.

    Returns (integral of u^2 dt, peak |u| unclamped, period, rho_zd, g_min,
    w_star, w_slowest).
    """
    root, rho_zd, g_min, w_slowest = _zd_return_scan(vc, p)
    if root is None:
        return None, None, None, None, g_min, None, w_slowest
    out = _zd_flow(root, vc, p, record=True)
    if out is None:
        return None, None, None, None, g_min, None, w_slowest
    _, period, ts, q1s, d1s = out
    j_int = 0.0
    u_peak = 0.0
    u_prev = None
    for i in range(len(ts)):
        u = _zd_hold_torque(q1s[i], d1s[i], vc, p)
        au = abs(u)
        if au > u_peak:
            u_peak = au
        if u_prev is not None:
            j_int += 0.5 * (u * u + u_prev * u_prev) * (ts[i] - ts[i - 1])
        u_prev = u
    return j_int, u_peak, period, rho_zd, g_min, root, w_slowest


def _line_sign_changes(vc: VirtualConstraint) -> int:
    """Sign changes of 2*q1 + q2r(q1) strictly inside (-beta, beta)."""
    beta = vc.beta
    q1 = np.linspace(-beta, beta, 201)[1:-1]
    y = 2.0 * q1 + npoly.polyval(q1, np.asarray(vc.coeffs))
    sgn = np.sign(y)
    sgn = sgn[sgn != 0]
    return int(np.count_nonzero(np.diff(sgn)))


def _slow_margin_needed(vc: VirtualConstraint, w_star: float) -> float:
    """Slow-side basin margin the capture tube demands of the gait.

    The tube around the cycle admits on-surface launches slower by up to
    dmax = eps / sqrt(w_v * (1 + s_post^2)) in stance rate (both velocities
    scaled together); those must still cross the apex, so the stall speed has
    to sit at least dmax below the fixed point, plus slack for the reduced
    model's approximation of the full closed loop.
    """
    s_post = _vc_scalar(vc, vc.beta)[1]
    w_v = TARGET_WEIGHTS[2]
    dmax = TARGET_EPS / math.sqrt(w_v * (1.0 + s_post * s_post))
    return dmax / abs(w_star) + 0.04


def _gait_objective(z, beta, p, slope_pre):
    vc = make_virtual_constraint(beta, z[0], z[1], p, slope_pre=slope_pre)
    j_int, u_peak, _, rho_zd, g_min, w_star, w_slowest = _zd_cycle_stats(vc, p)
    if j_int is None:
        # no periodic solution closes on this surface; grade by how far the
        # return map is from producing one so the search can climb back
        return 1e4 + 1e3 * max(0.0, g_min)
    pen = 0.0
    if rho_zd >= 0.93:
        pen += 100.0 * (rho_zd - 0.93)
    if rho_zd >= 1.0:
        pen += 50.0 + 300.0 * (rho_zd - 1.0)
    margin = 0.8 * p.u_max
    if u_peak > margin:
        pen += 5.0 * (u_peak - margin) ** 2
    changes = _line_sign_changes(vc)
    if changes != 1:
        pen += 5.0 * abs(changes - 1)
    slow_margin = 1.0 - w_slowest / w_star
    need = _slow_margin_needed(vc, w_star)
    if slow_margin < need:
        pen += 5000.0 * (need - slow_margin)
    return j_int + pen


def generate_gait(
    beta: float,
    p: RobotParams,
    gains: IOGains = DEFAULT_GAINS,
    slope_pre: float = SLOPE_PRE,
    z0=None,
    nm_maxiter: int = 150,
) -> VirtualConstraint:
    """Search the two interior Bezier values for a low-torque stable gait.

    Without a warm start, a coarse grid above the straight-line constraint
    locates the pocket where the return map closes; Nelder-Mead then
    minimizes integrated squared torque with stability and torque-margin
    penalties.
    """
    if not (BETA_MIN - 1e-12 <= beta <= BETA_MAX + 1e-12):
        raise ValueError(f"beta {beta} outside [{BETA_MIN}, {BETA_MAX}]")
    a0, a1, a4, a5, _ = _bezier_end_values(beta, p, slope_pre)
    if z0 is None:
        z_line = np.array([a1 + (a4 - a1) / 3.0, a1 + 2.0 * (a4 - a1) / 3.0])
        best_val, z0 = np.inf, z_line
        for da2 in np.linspace(0.0, 0.9, 5):
            for da3 in np.linspace(0.0, 0.9, 5):
                cand = z_line + np.array([da2, da3])
                val = _gait_objective(cand, beta, p, slope_pre)
                if val < best_val:
                    best_val, z0 = val, cand
    else:
        z0 = np.asarray(z0, dtype=float)

    res = minimize(
        _gait_objective,
        z0,
        args=(beta, p, slope_pre),
        method="Nelder-Mead",
        options={
            "maxiter": nm_maxiter,
            "xatol": 1e-5,
            "fatol": 1e-4,
            "initial_simplex": np.array(
                [z0, z0 + [0.03, 0.0], z0 + [0.0, 0.03]]
            ),
        },
    )
    vc = make_virtual_constraint(beta, res.x[0], res.x[1], p, slope_pre=slope_pre)
    try:
        lc = find_limit_cycle(vc, p, gains)
        rho = poincare_stability(lc, p, gains)
    except (ShootingError, NoImpactError) as exc:
        raise GaitGenerationError(
            f"no stable gait found for beta={beta:.4f}: {exc}"
        ) from exc
    if rho >= 1.0:
        raise GaitGenerationError(
            f"no stable gait found for beta={beta:.4f}: spectral radius {rho:.3f}"
        )
    return vc


# ---------------------------------------------------------------------------
# library


@dataclass
class GaitLibrary:
    """Immutable family of stable gaits indexed by beta."""

    robot: RobotParams
    gains: IOGains
    betas: np.ndarray
    gaits: list          # LimitCycle entries, ascending beta
    spectral_radii: np.ndarray
    slope_pre: float = SLOPE_PRE

    def member_index(self, beta: float, tol: float = 1e-9):
        idx = int(np.argmin(np.abs(self.betas - beta)))
        if abs(self.betas[idx] - beta) <= tol:
            return idx
        return None

    def nearest_beta(self, beta: float) -> float:
        return float(self.betas[int(np.argmin(np.abs(self.betas - beta)))])

    def gait(self, beta: float) -> LimitCycle:
        idx = self.member_index(beta)
        if idx is None:
            raise KeyError(f"beta {beta} is not a library member")
        return self.gaits[idx]

    def cycle_samples(self, beta: float) -> np.ndarray:
        """Cycle samples for beta, interpolating members at equal phase."""
        idx = self.member_index(beta)
        if idx is not None:
            return self.gaits[idx].samples
        b = float(np.clip(beta, self.betas[0], self.betas[-1]))
        hi = int(np.searchsorted(self.betas, b))
        hi = min(max(hi, 1), len(self.betas) - 1)
        lo = hi - 1
        t = (b - self.betas[lo]) / (self.betas[hi] - self.betas[lo])
        return (1.0 - t) * self.gaits[lo].samples + t * self.gaits[hi].samples

    def save(self, path) -> None:
        data = {
            "version": LIBRARY_VERSION,
            "n_cycle": int(self.gaits[0].samples.shape[0]) if self.gaits else N_CYCLE,
            "target_eps": TARGET_EPS,
            "target_weights": list(TARGET_WEIGHTS),
            "slope_pre": self.slope_pre,
            "robot": {
                "hip_mass": self.robot.hip_mass,
                "leg_mass": self.robot.leg_mass,
                "leg_com_offset_a": self.robot.leg_com_offset_a,
                "leg_com_offset_b": self.robot.leg_com_offset_b,
                "gravity": self.robot.gravity,
                "u_max": self.robot.u_max,
                "q1_bar": self.robot.q1_bar,
            },
            "gains": {"kp": self.gains.kp, "kd": self.gains.kd},
            "betas": [float(b) for b in self.betas],
            "gaits": [
                {
                    "beta": g.beta,
                    "bezier": list(g.vc.bezier),
                    "coeffs": list(g.vc.coeffs),
                    "period_Tp": g.period_Tp,
                    "fixed_point": [float(v) for v in g.fixed_point],
                    "phases": [float(v) for v in g.phases],
                    "samples": [[float(v) for v in row] for row in g.samples],
                    "spectral_radius": float(r),
                }
                for g, r in zip(self.gaits, self.spectral_radii)
            ],
        }
        with open(path, "w") as f:
            json.dump(data, f, sort_keys=True)

    @classmethod
    def load(cls, path) -> "GaitLibrary":
        with open(path) as f:
            data = json.load(f)
        if data.get("version") != LIBRARY_VERSION:
            raise ValueError(
                f"unsupported gait library version {data.get('version')}"
            )
        r = data["robot"]
        p = RobotParams(
            hip_mass=r["hip_mass"],
            leg_mass=r["leg_mass"],
            leg_com_offset_a=r["leg_com_offset_a"],
            leg_com_offset_b=r["leg_com_offset_b"],
            gravity=r["gravity"],
            u_max=r["u_max"],
            q1_bar=r["q1_bar"],
        )
        gains = IOGains(kp=data["gains"]["kp"], kd=data["gains"]["kd"])
        gaits = []
        radii = []
        for entry in data["gaits"]:
            coeffs = tuple(entry["coeffs"])
            dc = npoly.polyder(np.asarray(coeffs))
            ddc = npoly.polyder(dc)
            vc = VirtualConstraint(
                beta=entry["beta"],
                coeffs=coeffs,
                dcoeffs=tuple(float(c) for c in dc),
                ddcoeffs=tuple(float(c) for c in ddc),
                bezier=tuple(entry["bezier"]),
            )
            gaits.append(
                LimitCycle(
                    beta=entry["beta"],
                    period_Tp=entry["period_Tp"],
                    phases=np.asarray(entry["phases"]),
                    samples=np.asarray(entry["samples"]),
                    fixed_point=np.asarray(entry["fixed_point"]),
                    vc=vc,
                )
            )
            radii.append(entry["spectral_radius"])
        return cls(
            robot=p,
            gains=gains,
            betas=np.asarray(data["betas"]),
            gaits=gaits,
            spectral_radii=np.asarray(radii),
            slope_pre=data.get("slope_pre", SLOPE_PRE),
        )


def library_betas(n: int = N_LIBRARY) -> np.ndarray:
    return np.linspace(BETA_MIN, BETA_MAX, n)


def build_library(
    p: RobotParams,
    gains: IOGains = DEFAULT_GAINS,
    betas=None,
    slope_pre: float = SLOPE_PRE,
    verbose: bool = False,
) -> GaitLibrary:
    """Generate the full gait family, warm-starting each search from the last."""
    if betas is None:
        betas = library_betas()
    betas = np.asarray(betas, dtype=float)
    gaits = []
    radii = []
    z_prev = None
    for beta in betas:
        vc = generate_gait(beta, p, gains, slope_pre=slope_pre, z0=z_prev)
        lc = find_limit_cycle(vc, p, gains)
        rho = poincare_stability(lc, p, gains)
        gaits.append(lc)
        radii.append(rho)
        z_prev = np.array([vc.bezier[2], vc.bezier[3]])
        if verbose:
            print(
                f"beta={beta:.4f}  Tp={lc.period_Tp:.4f}  rho={rho:.4f}  "
                f"dq1+={lc.fixed_point[2]:+.4f}"
            )
    return GaitLibrary(
        robot=p,
        gains=gains,
        betas=betas,
        gaits=gaits,
        spectral_radii=np.asarray(radii),
        slope_pre=slope_pre,
    )


# ---------------------------------------------------------------------------
# target function


def target_l(x, beta: float, lib: GaitLibrary):
    """Signed distance-like margin to the cycle tube; negative inside."""
    S = lib.cycle_samples(beta)
    w = np.asarray(TARGET_WEIGHTS)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    d2 = ((X[:, None, :] - S[None, :, :]) ** 2 * w).sum(axis=-1)
    d = np.sqrt(d2.min(axis=1)) - TARGET_EPS
    return float(d[0]) if single else d


def tube_distance(x, samples: np.ndarray) -> float:
    """Weighted distance from x to the cycle polyline.

    Projects onto each segment between consecutive samples so the value does
    not saturate at the sample spacing.  No wrap segment: the last and first
    samples are joined by the reset, not by the flow.
    """
    w = np.asarray(TARGET_WEIGHTS)
    x = np.asarray(x, dtype=float)
    a = samples[:-1]
    ab = samples[1:] - a
    ax = x - a
    denom = (ab * ab * w).sum(axis=1)
    t = np.clip((ax * ab * w).sum(axis=1) / np.maximum(denom, 1e-300), 0.0, 1.0)
    proj = a + t[:, None] * ab
    d2 = ((proj - x) ** 2 * w).sum(axis=1)
    return float(np.sqrt(d2.min()))
