"""Hybrid dynamics of a planar two-link point-foot walker.

Model: stance leg pinned at the origin, walking in +x. Generalized coordinates
q = (q1, q2): q1 is the stance leg angle from the upward vertical (positive when
the stance foot is ahead of the hip), q2 the swing leg angle relative to the
stance leg, so the absolute swing angle is q1 + q2. Each leg is a massless rod
of length L = a + b carrying a point mass at distance a from its foot; a third
point mass sits at the hip. A single torque u acts at the inter-leg joint.

State vectors are ndarray (..., 4) ordered [q1, q2, dq1, dq2].

The swing foot touches the ground exactly on sigma(x) := 2 q1 + q2 = 0 and is
descending iff 2 dq1 + dq2 < 0 (for q1 < 0). The switching surface is

    S = { x : q1 <= q1_bar,  2 q1 + q2 = 0,  2 dq1 + dq2 < 0 }

and the reset relabels legs (q1+ = q1 + q2, q2+ = -q2) with velocities mapped
by a rigid plastic impact at the new contact point (impulse at the new foot
only, old foot released). The impact is computed as the kinetic-metric
orthogonal projection of the floating-base velocity onto the new-contact
constraint subspace, so kinetic energy never increases across a reset.
"""

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

__all__ = [
    "RobotParams",
    "ResetEvent",
    "TooManyCrossingsError",
    "mass_matrix",
    "coriolis_matrix",
    "gravity_vector",
    "kinetic_energy",
    "potential_energy",
    "total_energy",
    "continuous_dynamics",
    "control_affine_fields",
    "sigma",
    "sigma_rate",
    "on_switching_surface",
    "swing_foot_height",
    "reset_map",
    "impact_velocity_matrix",
    "rk4_step",
    "step_with_events",
]


@dataclass(frozen=True)
class RobotParams:
    """Physical parameters. Field names match the JSON config schema."""

    hip_mass: float = 10.0
    leg_mass: float = 5.0
    leg_com_offset_a: float = 0.5  # foot to leg COM [m]
    leg_com_offset_b: float = 0.5  # leg COM to hip [m]
    gravity: float = 9.81
    u_max: float = 150.0
    q1_bar: float = 0.2  # surface threshold on q1 [rad]

    @property
    def leg_length(self) -> float:
        return self.leg_com_offset_a + self.leg_com_offset_b

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_json(cls, path) -> "RobotParams":
        with open(path) as f:
            data = json.load(f)
        return cls(**data)

    def validate(self) -> None:
        if min(self.hip_mass, self.leg_mass, self.leg_com_offset_a,
               self.leg_com_offset_b, self.gravity, self.u_max) <= 0.0:
            raise ValueError("robot parameters must be positive")


@dataclass(frozen=True)
class ResetEvent:
    """One surface crossing handled during integration."""

    t: float
    pre_state: np.ndarray
    post_state: np.ndarray


class TooManyCrossingsError(RuntimeError):
    """More than two surface crossings inside a single step: dt too coarse."""


# ---------------------------------------------------------------------------
# Manipulator form M(q) qdd + C(q, qd) qd + G(q) = B u,  B = [0, 1]^T
# ---------------------------------------------------------------------------

def mass_matrix(q2, p: RobotParams) -> np.ndarray:
    """Mass matrix; depends on q2 only. Works on scalars or arrays (..., )."""
    m, mH = p.leg_mass, p.hip_mass
    a, b = p.leg_com_offset_a, p.leg_com_offset_b
    L = a + b
    c2 = np.cos(q2)
    m11 = m * a * a + mH * L * L + m * L * L + m * b * b - 2.0 * m * L * b * c2
    m12 = m * b * b - m * L * b * c2
    m22 = m * b * b + np.zeros_like(np.asarray(q2, dtype=float))
    return np.stack(np.broadcast_arrays(m11, m12, m12, m22), axis=-1).reshape(
        np.shape(np.asarray(q2)) + (2, 2)
    )


def coriolis_matrix(q2, dq1, dq2, p: RobotParams) -> np.ndarray:
    """Coriolis/centrifugal matrix from Christoffel symbols of mass_matrix."""
    h = p.leg_mass * p.leg_length * p.leg_com_offset_b * np.sin(q2)
    z = np.zeros_like(np.asarray(q2, dtype=float))
    c11 = h * dq2
    c12 = h * (dq1 + dq2)
    c21 = -h * dq1
    return np.stack(np.broadcast_arrays(c11, c12, c21, z), axis=-1).reshape(
        np.shape(np.asarray(q2)) + (2, 2)
    )


def gravity_vector(q1, q2, p: RobotParams) -> np.ndarray:
    m, mH, g = p.leg_mass, p.hip_mass, p.gravity
    a, b = p.leg_com_offset_a, p.leg_com_offset_b
    L = a + b
    s1 = np.sin(q1)
    s12 = np.sin(q1 + q2)
    g1 = -g * s1 * (m * a + mH * L + m * L) + g * m * b * s12
    g2 = g * m * b * s12
    return np.stack(np.broadcast_arrays(g1, g2), axis=-1)


def kinetic_energy(x, p: RobotParams) -> float:
    x = np.asarray(x, dtype=float)
    qd = x[..., 2:4]
    M = mass_matrix(x[..., 1], p)
    return 0.5 * np.einsum("...i,...ij,...j->...", qd, M, qd)


def potential_energy(x, p: RobotParams) -> float:
    x = np.asarray(x, dtype=float)
    m, mH, g = p.leg_mass, p.hip_mass, p.gravity
    a, b = p.leg_com_offset_a, p.leg_com_offset_b
    L = a + b
    return g * ((m * a + mH * L + m * L) * np.cos(x[..., 0])
                - m * b * np.cos(x[..., 0] + x[..., 1]))


def total_energy(x, p: RobotParams) -> float:
    return kinetic_energy(x, p) + potential_energy(x, p)


def _accel_scalar(q1, q2, dq1, dq2, u, p: RobotParams):
    """Joint accelerations; scalar fast path (no array allocation)."""
    m, mH = p.leg_mass, p.hip_mass
    a, b = p.leg_com_offset_a, p.leg_com_offset_b
    L = a + b
    g = p.gravity
    c2 = math.cos(q2)
    m11 = m * a * a + mH * L * L + m * L * L + m * b * b - 2.0 * m * L * b * c2
    m12 = m * b * b - m * L * b * c2
    m22 = m * b * b
    h = m * L * b * math.sin(q2)
    s1 = math.sin(q1)
    s12 = math.sin(q1 + q2)
    g1 = -g * s1 * (m * a + mH * L + m * L) + g * m * b * s12
    g2 = g * m * b * s12
    # rhs = B u - C qd - G
    r1 = -(h * dq2 * dq1 + h * (dq1 + dq2) * dq2) - g1
    r2 = u + h * dq1 * dq1 - g2
    det = m11 * m22 - m12 * m12
    dd1 = (m22 * r1 - m12 * r2) / det
    dd2 = (m11 * r2 - m12 * r1) / det
    return dd1, dd2


def continuous_dynamics(x, u, p: RobotParams) -> np.ndarray:
    """xdot = f(x, u). Accepts a single state (4,) or a batch (..., 4)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        dd1, dd2 = _accel_scalar(x[0], x[1], x[2], x[3], float(u), p)
        return np.array([x[2], x[3], dd1, dd2])
    return _dynamics_batch(x, np.asarray(u, dtype=float), p)


def _dynamics_batch(x: np.ndarray, u: np.ndarray, p: RobotParams) -> np.ndarray:
    q1, q2, dq1, dq2 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    m, mH = p.leg_mass, p.hip_mass
    a, b = p.leg_com_offset_a, p.leg_com_offset_b
    L = a + b
    g = p.gravity
    c2 = np.cos(q2)
    m11 = m * a * a + mH * L * L + m * L * L + m * b * b - 2.0 * m * L * b * c2
    m12 = m * b * b - m * L * b * c2
    m22 = m * b * b
    h = m * L * b * np.sin(q2)
    s1 = np.sin(q1)
    s12 = np.sin(q1 + q2)
    g1 = -g * s1 * (m * a + mH * L + m * L) + g * m * b * s12
    g2 = g * m * b * s12
    r1 = -(h * dq2 * dq1 + h * (dq1 + dq2) * dq2) - g1
    r2 = u + h * dq1 * dq1 - g2
    det = m11 * m22 - m12 * m12
    out = np.empty_like(x)
    out[..., 0] = dq1
    out[..., 1] = dq2
    out[..., 2] = (m22 * r1 - m12 * r2) / det
    out[..., 3] = (m11 * r2 - m12 * r1) / det
    return out


def control_affine_fields(x, p: RobotParams):
    """Split xdot = f0(x) + g(x) u. Returns (f0, g) with shapes (..., 4)."""
    x = np.asarray(x, dtype=float)
    f0 = _dynamics_batch(np.atleast_2d(x), np.zeros(np.atleast_2d(x).shape[:-1]), p)
    q2 = np.atleast_2d(x)[..., 1]
    m, mH = p.leg_mass, p.hip_mass
    a, b = p.leg_com_offset_a, p.leg_com_offset_b
    L = a + b
    c2 = np.cos(q2)
    m11 = m * a * a + mH * L * L + m * L * L + m * b * b - 2.0 * m * L * b * c2
    m12 = m * b * b - m * L * b * c2
    m22 = m * b * b
    det = m11 * m22 - m12 * m12
    gvec = np.zeros(np.atleast_2d(x).shape)
    gvec[..., 2] = -m12 / det  # d(qdd1)/du
    gvec[..., 3] = m11 / det  # d(qdd2)/du
    if x.ndim == 1:
        return f0[0], gvec[0]
    return f0.reshape(x.shape), gvec.reshape(x.shape)


# ---------------------------------------------------------------------------
# Switching surface and reset
# ---------------------------------------------------------------------------

def sigma(x) -> np.ndarray:
    """Surface coordinate 2 q1 + q2 (zero iff swing foot at ground height)."""
    x = np.asarray(x, dtype=float)
    return 2.0 * x[..., 0] + x[..., 1]


def sigma_rate(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return 2.0 * x[..., 2] + x[..., 3]


def swing_foot_height(x, p: RobotParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    L = p.leg_length
    return L * (np.cos(x[..., 0]) - np.cos(x[..., 0] + x[..., 1]))


def on_switching_surface(x, p: RobotParams, tol: float = 1e-9) -> bool:
    """Full membership test for S (configuration identity to tol)."""
    x = np.asarray(x, dtype=float)
    return bool(
        np.abs(sigma(x)) <= tol
        and x[..., 0] <= p.q1_bar
        and sigma_rate(x) < 0.0
    )


def _u_dir(q1):
    return np.stack(np.broadcast_arrays(-np.sin(q1), np.cos(q1)), axis=-1)


def _u_dir_d(q1):
    return np.stack(np.broadcast_arrays(-np.cos(q1), -np.sin(q1)), axis=-1)


def _w_dir(th):
    return np.stack(np.broadcast_arrays(np.sin(th), -np.cos(th)), axis=-1)


def _w_dir_d(th):
    return np.stack(np.broadcast_arrays(np.cos(th), np.sin(th)), axis=-1)


def _impact_projection(q1, q2, p: RobotParams):
    """Post-impulse rates (w1, w2) per unit pre-impact (dq1, dq2).

    Floating coordinates (q1, q2, px, py) with (px, py) the old stance foot.
    Returns the 2x2 map P with (w1, w2) = P @ (dq1-, dq2-), before relabeling.
    Vectorized over leading dimensions of q1/q2.
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    m, mH = p.leg_mass, p.hip_mass
    a, b = p.leg_com_offset_a, p.leg_com_offset_b
    L = a + b
    th2 = q1 + q2
    shp = np.broadcast_shapes(q1.shape, q2.shape)
    eye2 = np.broadcast_to(np.eye(2), shp + (2, 2))

    def jac(dq1_col, dq2_col):
        # body Jacobian (..., 2, 4) from columns for q1, q2 plus identity for p
        out = np.zeros(shp + (2, 4))
        out[..., :, 0] = dq1_col
        out[..., :, 1] = dq2_col
        out[..., :, 2:4] = eye2
        return out

    zero = np.zeros(shp + (2,))
    J_c1 = jac(a * _u_dir_d(q1), zero)
    J_H = jac(L * _u_dir_d(q1), zero)
    J_c2 = jac(L * _u_dir_d(q1) + b * _w_dir_d(th2), b * _w_dir_d(th2))
    J_B = jac(L * _u_dir_d(q1) + L * _w_dir_d(th2), L * _w_dir_d(th2))

    Me = (m * np.einsum("...ki,...kj->...ij", J_c1, J_c1)
          + mH * np.einsum("...ki,...kj->...ij", J_H, J_H)
          + m * np.einsum("...ki,...kj->...ij", J_c2, J_c2))

    MiJt = np.linalg.solve(Me, np.swapaxes(J_B, -1, -2))  # (..., 4, 2)
    A = J_B @ MiJt  # (..., 2, 2)
    # v+ = (I - Mi J^T A^-1 J) v-, restricted to the (dq1, dq2) block
    K = MiJt @ np.linalg.solve(A, J_B)  # (..., 4, 4)
    P = (np.broadcast_to(np.eye(4), shp + (4, 4)) - K)[..., :2, :2]
    return P


def impact_velocity_matrix(q1, p: RobotParams) -> np.ndarray:
    """Relabelled velocity map W at the impact configuration (q1, -2 q1).

    (dq1+, dq2+) = W @ (dq1-, dq2-) in the post-impact (relabelled) chart.
    """
    q1 = np.asarray(q1, dtype=float)
    P = _impact_projection(q1, -2.0 * q1, p)
    R = np.zeros(P.shape)
    R[..., 0, 0] = 1.0
    R[..., 0, 1] = 1.0
    R[..., 1, 1] = -1.0
    return R @ P


def reset_map(x, p: RobotParams, tol: float = 1e-9) -> np.ndarray:
    """Reset x- -> x+: leg relabel plus rigid-impact velocity map.

    Requires the configuration identity |2 q1 + q2| <= tol; raises ValueError
    off the surface. Accepts a single state (4,) or a batch (N, 4).
    """
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(sigma(x)) > tol):
        raise ValueError("reset_map called off the switching surface")
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    P = _impact_projection(xb[:, 0], xb[:, 1], p)
    w = np.einsum("nij,nj->ni", P, xb[:, 2:4])
    out = np.empty_like(xb)
    out[:, 0] = xb[:, 0] + xb[:, 1]
    out[:, 1] = -xb[:, 1]
    out[:, 2] = w[:, 0] + w[:, 1]
    out[:, 3] = -w[:, 1]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Integration with event handling
# ---------------------------------------------------------------------------

def _rk4_scalar(q1, q2, d1, d2, u, h, p: RobotParams):
    """Plain-float RK4 step; hot path for closed-loop simulation."""
    a1, b1 = _accel_scalar(q1, q2, d1, d2, u, p)
    v1q1, v1q2 = d1 + 0.5 * h * a1, d2 + 0.5 * h * b1
    a2, b2 = _accel_scalar(q1 + 0.5 * h * d1, q2 + 0.5 * h * d2, v1q1, v1q2, u, p)
    v2q1, v2q2 = d1 + 0.5 * h * a2, d2 + 0.5 * h * b2
    a3, b3 = _accel_scalar(q1 + 0.5 * h * v1q1, q2 + 0.5 * h * v1q2, v2q1, v2q2, u, p)
    v3q1, v3q2 = d1 + h * a3, d2 + h * b3
    a4, b4 = _accel_scalar(q1 + h * v2q1, q2 + h * v2q2, v3q1, v3q2, u, p)
    nq1 = q1 + h / 6.0 * (d1 + 2.0 * v1q1 + 2.0 * v2q1 + v3q1)
    nq2 = q2 + h / 6.0 * (d2 + 2.0 * v1q2 + 2.0 * v2q2 + v3q2)
    nd1 = d1 + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    nd2 = d2 + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    return nq1, nq2, nd1, nd2


def rk4_step(x, u, h, p: RobotParams) -> np.ndarray:
    """One classical RK4 step of the controlled vector field (u held)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        k1 = continuous_dynamics(x, u, p)
        k2 = continuous_dynamics(x + 0.5 * h * k1, u, p)
        k3 = continuous_dynamics(x + 0.5 * h * k2, u, p)
        k4 = continuous_dynamics(x + h * k3, u, p)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    u = np.asarray(u, dtype=float)
    k1 = _dynamics_batch(x, u, p)
    k2 = _dynamics_batch(x + 0.5 * h * k1, u, p)
    k3 = _dynamics_batch(x + 0.5 * h * k2, u, p)
    k4 = _dynamics_batch(x + h * k3, u, p)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _locate_crossing(x0, u, h, p: RobotParams, tol: float):
    """Bisect the crossing time of sigma inside (0, h]. Returns (t*, x_pre)."""
    lo, hi = 0.0, h
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        xm = rk4_step(x0, u, mid, p)
        if sigma(xm) > 0.0:
            lo = mid
        else:
            hi = mid
    t_star = 0.5 * (lo + hi)
    return t_star, rk4_step(x0, u, t_star, p)


def step_with_events(x, u, dt, p: RobotParams, t0: float = 0.0,
                     bisect_tol: float = 1e-10, max_events: int = 2):
    """Advance one step of size dt, handling surface crossings.

    A crossing is a sign change of sigma from positive to non-positive within
    the step; it triggers a reset only if the located crossing state satisfies
    the remaining surface clauses (q1 <= q1_bar and 2 dq1 + dq2 < 0), otherwise
    integration passes through. More than max_events handled crossings in one
    call raises TooManyCrossingsError.

    Returns (x_next, events) with events a list of ResetEvent (absolute times
    offset by t0).
    """
    x = np.asarray(x, dtype=float)
    events: list[ResetEvent] = []
    remaining = float(dt)
    elapsed = 0.0
    while True:
        x1 = rk4_step(x, u, remaining, p)
        if not (sigma(x) > 0.0 and sigma(x1) <= 0.0):
            return x1, events
        t_star, x_pre = _locate_crossing(x, u, remaining, p, bisect_tol)
        if not (x_pre[0] <= p.q1_bar and sigma_rate(x_pre) < 0.0):
            return x1, events  # inadmissible crossing: pass through
        if len(events) >= max_events:
            raise TooManyCrossingsError(
                f"more than {max_events} surface crossings in one step of {dt}"
            )
        x_post = reset_map(x_pre, p, tol=1e-6)
        events.append(ResetEvent(t=t0 + elapsed + t_star,
                                 pre_state=x_pre, post_state=x_post))
        elapsed += t_star
        remaining -= t_star
        x = x_post
        if remaining <= 0.0:
            return x, events
