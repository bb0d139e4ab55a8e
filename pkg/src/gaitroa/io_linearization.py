"""Input-output linearizing tracking controller for the hip torque.

The controller drives the output y = q2 - q2r(q1) to zero, where q2r is a
virtual-constraint polynomial in the stance angle.  Differentiating twice
along the dynamics gives

    ddy = Lf2y + (LgLfy) u

and the control law cancels the drift and imposes critically-damped error
dynamics ddy = -kp*y - kd*dy before saturating at the torque limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import RobotParams, _accel_scalar


@dataclass(frozen=True)
class IOGains:
    """PD gains for the output error dynamics."""

    kp: float = 100.0
    kd: float = 20.0


DEFAULT_GAINS = IOGains()

# below this the output has effectively lost relative degree two
DECOUPLING_MIN = 1e-8


class DecouplingError(ValueError):
    """Raised when the decoupling term LgLfy is numerically singular."""


def _vc_terms(vc, q1: float) -> tuple[float, float, float]:
    """Evaluate q2r and its first two q1-derivatives at a scalar q1."""
    c = vc.coeffs
    dc = vc.dcoeffs
    ddc = vc.ddcoeffs
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


def io_control_full(
    x,
    vc,
    gains: IOGains,
    p: RobotParams,
) -> tuple[float, float, float, bool]:
    """Compute the tracking torque along with diagnostics.

    Returns (u, y, dy, saturated).  Raises DecouplingError if |LgLfy|
    falls below DECOUPLING_MIN, which would demand unbounded torque.
    """
    q1 = float(x[0])
    q2 = float(x[1])
    dq1 = float(x[2])
    dq2 = float(x[3])

    q2r, dq2r, ddq2r = _vc_terms(vc, q1)
    y = q2 - q2r
    dy = dq2 - dq2r * dq1

    # drift acceleration (u = 0) and the torque direction M^{-1}B
    a1_0, a2_0 = _accel_scalar(q1, q2, dq1, dq2, 0.0, p)

    m = p.leg_mass
    b = p.leg_com_offset_b
    L = p.leg_length
    cos_q2 = np.cos(q2)
    m11 = m * p.leg_com_offset_a**2 + (p.hip_mass + m) * L * L \
        + m * b * b - 2.0 * m * L * b * cos_q2
    m12 = m * b * b - m * L * b * cos_q2
    m22 = m * b * b
    det = m11 * m22 - m12 * m12
    g1 = -m12 / det
    g2 = m11 / det

    decoupling = g2 - dq2r * g1
    if abs(decoupling) < DECOUPLING_MIN:
        raise DecouplingError(
            f"output decoupling {decoupling:.3e} below {DECOUPLING_MIN:.0e} "
            f"at q1={q1:.4f}, q2={q2:.4f}"
        )

    lf2y = a2_0 - dq2r * a1_0 - ddq2r * dq1 * dq1
    u_ff = -lf2y / decoupling
    u = u_ff + (-gains.kp * y - gains.kd * dy) / decoupling

    saturated = False
    if u > p.u_max:
        u = p.u_max
        saturated = True
    elif u < -p.u_max:
        u = -p.u_max
        saturated = True
    return u, y, dy, saturated


def io_control(x, vc, gains: IOGains, p: RobotParams) -> float:
    """Tracking torque, clamped to [-u_max, u_max]."""
    return io_control_full(x, vc, gains, p)[0]
