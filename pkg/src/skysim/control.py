"""Control-input resolution: every supported command modality is lowered to
per-motor desired angular velocities.

High-level modalities run through a cascade (position P -> velocity PID ->
acceleration/heading -> geometric attitude P -> body-rate PID -> torque); the
resulting wrench is inverted through the allocation pseudo-inverse and the
quadratic thrust model. Low-level modalities (per-motor throttle, control
groups) bypass the cascade.
"""

import math
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
from numba import njit

from .dynamics import AllocationModel, PropellerParams, UavModel, UavState
from .rotations import is_rotation, log_rotvec

# Weight applied to the normalized torque-row sign patterns when mixing
# roll/pitch/yaw control groups onto per-motor throttles.
MIX_GAIN = 0.25

CONTROLLER_STATE_LEN = 16
GAINS_LEN = 12


@dataclass
class ActuatorThrottles:
    """Modality (a): normalized per-motor throttle in [0, 1]."""
    throttles: np.ndarray

    def __post_init__(self):
        self.throttles = np.asarray(self.throttles, dtype=float)


@dataclass
class ControlGroups:
    """Modality (b): roll/pitch/yaw in [-1, 1] plus collective throttle."""
    roll: float
    pitch: float
    yaw: float
    throttle: float


@dataclass
class RateThrottle:
    """Modality (c): body angular rate setpoint plus collective throttle."""
    body_rates: np.ndarray
    throttle: float

    def __post_init__(self):
        self.body_rates = np.asarray(self.body_rates, dtype=float)


@dataclass
class AttitudeThrottle:
    """Modality (d): desired orientation plus collective throttle."""
    rotation: np.ndarray
    throttle: float

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)


@dataclass
class AccelHeading:
    """Modality (e): world-frame acceleration plus heading."""
    acceleration: np.ndarray
    heading: float

    def __post_init__(self):
        self.acceleration = np.asarray(self.acceleration, dtype=float)


@dataclass
class AccelHeadingRate:
    """Modality (f): world-frame acceleration plus heading rate."""
    acceleration: np.ndarray
    heading_rate: float

    def __post_init__(self):
        self.acceleration = np.asarray(self.acceleration, dtype=float)


@dataclass
class VelocityHeading:
    """Modality (g): world-frame velocity plus heading."""
    velocity: np.ndarray
    heading: float

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float)


@dataclass
class VelocityHeadingRate:
    """Modality (h): world-frame velocity plus heading rate."""
    velocity: np.ndarray
    heading_rate: float

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float)


@dataclass
class PositionHeading:
    """Modality (i): world-frame position plus heading."""
    position: np.ndarray
    heading: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)


ControlInput = Union[
    ActuatorThrottles, ControlGroups, RateThrottle, AttitudeThrottle,
    AccelHeading, AccelHeadingRate, VelocityHeading, VelocityHeadingRate,
    PositionHeading,
]

MODALITY_CODES = {
    ActuatorThrottles: 0,
    ControlGroups: 1,
    RateThrottle: 2,
    AttitudeThrottle: 3,
    AccelHeading: 4,
    AccelHeadingRate: 5,
    VelocityHeading: 6,
    VelocityHeadingRate: 7,
    PositionHeading: 8,
}

MODALITY_NAMES = {
    0: "actuators",
    1: "control_groups",
    2: "rate",
    3: "attitude",
    4: "accel_heading",
    5: "accel_heading_rate",
    6: "velocity_heading",
    7: "velocity_heading_rate",
    8: "position_heading",
}

MODALITY_CODES_BY_NAME = {v: k for k, v in MODALITY_NAMES.items()}


@dataclass
class CascadeGains:
    """Loop gains and per-loop output saturations for the cascade.

    The defaults are tuned for the default quad-X airframe at the default
    physics step; every value is configurable per UAV.
    """

    position_p: float = 1.0
    velocity_pid: tuple = (3.0, 0.1, 0.3)
    attitude_p: float = 6.0
    rate_pid: tuple = (4.0, 0.2, 0.05)
    velocity_limit: float = 8.0    # m/s, position loop output
    accel_limit: float = 10.0      # m/s^2, velocity loop output
    rate_limit: float = 6.0        # rad/s, attitude loop output
    torque_limit: float = 2.0      # N m per axis, rate loop output

    def __post_init__(self):
        gains = (self.position_p, *self.velocity_pid, self.attitude_p,
                 *self.rate_pid)
        if any(g < 0.0 for g in gains):
            raise ValueError("gains must be >= 0")
        sats = (self.velocity_limit, self.accel_limit, self.rate_limit,
                self.torque_limit)
        if any(s <= 0.0 for s in sats):
            raise ValueError("saturation limits must be > 0")

    def to_flat(self):
        return np.array([
            self.position_p,
            self.velocity_pid[0], self.velocity_pid[1], self.velocity_pid[2],
            self.attitude_p,
            self.rate_pid[0], self.rate_pid[1], self.rate_pid[2],
            self.velocity_limit, self.accel_limit, self.rate_limit,
            self.torque_limit,
        ])


class ControllerState:
    """Per-UAV integrator and memory storage for the cascade loops.

    Layout: velocity integrator (0:3), velocity previous error (3:6),
    velocity-derivative valid flag (6), rate integrator (7:10), rate previous
    error (10:13), rate-derivative valid flag (13), heading reference (14),
    heading-reference valid flag (15).
    """

    def __init__(self):
        self.array = np.zeros(CONTROLLER_STATE_LEN)

    def reset(self):
        self.array[:] = 0.0

    @property
    def heading_reference(self):
        return float(self.array[14])

    @property
    def heading_reference_valid(self):
        return self.array[15] != 0.0


def throttle_to_speed(p: PropellerParams, throttle: float) -> float:
    """Desired motor speed for a normalized throttle (throttle * omega_max)."""
    t = float(throttle)
    if t < 0.0 or t > 1.0:
        warnings.warn(f"throttle {t} outside [0, 1], clamped", stacklevel=2)
        t = min(1.0, max(0.0, t))
    return t * p.max_angular_velocity


def mixer_rows(a: AllocationModel):
    """Torque rows of the allocation matrix normalized to unit gain."""
    rows = a.matrix[1:4].copy()
    for r in range(3):
        peak = np.max(np.abs(rows[r]))
        if peak > 0.0:
            rows[r] /= peak
    return np.ascontiguousarray(rows)


def mix_control_groups(a: AllocationModel, groups: ControlGroups):
    """Per-motor throttles for normalized roll/pitch/yaw/collective groups."""
    rows = mixer_rows(a)
    t = (groups.throttle
         + MIX_GAIN * (groups.roll * rows[0]
                       + groups.pitch * rows[1]
                       + groups.yaw * rows[2]))
    return np.clip(t, 0.0, 1.0)


def attitude_error(rotation, rotation_desired):
    """Rotation vector of R^T R_d; zero iff the orientations coincide."""
    r = np.asarray(rotation, dtype=float)
    rd = np.asarray(rotation_desired, dtype=float)
    return log_rotvec(r.T @ rd)


def accel_to_attitude(acceleration, heading_angle, model: UavModel):
    """Desired orientation and collective thrust realizing a world-frame
    acceleration with the body z-axis carrying the thrust.

    Returns (rotation, thrust). The thrust is saturated at the airframe's
    maximum collective thrust (with a warning); a demanded acceleration equal
    to gravity leaves the thrust direction undefined and raises.
    """
    acc = np.asarray(acceleration, dtype=float)
    thrust_vec = acc - model.body.gravity
    norm = float(np.linalg.norm(thrust_vec))
    if norm <= 1e-6:
        raise ValueError("degenerate thrust direction: acceleration equals gravity")
    b3 = thrust_vec / norm
    thrust = model.body.mass * norm
    limit = model.max_collective_thrust()
    if thrust > limit:
        warnings.warn(
            f"commanded thrust {thrust:.2f} N saturated at {limit:.2f} N",
            stacklevel=2)
        thrust = limit
    # pick b1 with its horizontal projection exactly along the heading
    # vector; the z component follows from orthogonality with b3
    cx, cy = math.cos(heading_angle), math.sin(heading_angle)
    if b3[2] <= 1e-9:
        raise ValueError("degenerate heading: thrust axis has no upward component")
    b1 = np.array([cx, cy, -(cx * b3[0] + cy * b3[1]) / b3[2]])
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(b3, b1)
    return np.column_stack((b1, b2, b3)), thrust


@njit(cache=True)
def _rotvec_err(r, rd, out):
    # out <- rotation vector of R^T Rd; r is a flat body state (R at 6:15),
    # rd is a row-major 9-vector
    m00 = r[6] * rd[0] + r[9] * rd[3] + r[12] * rd[6]
    m01 = r[6] * rd[1] + r[9] * rd[4] + r[12] * rd[7]
    m02 = r[6] * rd[2] + r[9] * rd[5] + r[12] * rd[8]
    m10 = r[7] * rd[0] + r[10] * rd[3] + r[13] * rd[6]
    m11 = r[7] * rd[1] + r[10] * rd[4] + r[13] * rd[7]
    m12 = r[7] * rd[2] + r[10] * rd[5] + r[13] * rd[8]
    m20 = r[8] * rd[0] + r[11] * rd[3] + r[14] * rd[6]
    m21 = r[8] * rd[1] + r[11] * rd[4] + r[14] * rd[7]
    m22 = r[8] * rd[2] + r[11] * rd[5] + r[14] * rd[8]
    tr = m00 + m11 + m22
    c = 0.5 * (tr - 1.0)
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    angle = math.acos(c)
    if angle < 1e-7:
        out[0] = 0.5 * (m21 - m12)
        out[1] = 0.5 * (m02 - m20)
        out[2] = 0.5 * (m10 - m01)
        return
    if angle > math.pi - 1e-5:
        b00 = 0.5 * (m00 + 1.0)
        b11 = 0.5 * (m11 + 1.0)
        b22 = 0.5 * (m22 + 1.0)
        a0 = math.sqrt(max(b00, 0.0))
        a1 = math.sqrt(max(b11, 0.0))
        a2 = math.sqrt(max(b22, 0.0))
        if a0 >= a1 and a0 >= a2:
            if 0.5 * (m01 + m10) < 0.0:
                a1 = -a1
            if 0.5 * (m02 + m20) < 0.0:
                a2 = -a2
        elif a1 >= a2:
            if 0.5 * (m01 + m10) < 0.0:
                a0 = -a0
            if 0.5 * (m12 + m21) < 0.0:
                a2 = -a2
        else:
            if 0.5 * (m02 + m20) < 0.0:
                a0 = -a0
            if 0.5 * (m12 + m21) < 0.0:
                a1 = -a1
        n = math.sqrt(a0 * a0 + a1 * a1 + a2 * a2)
        if n == 0.0:
            out[0] = 0.0
            out[1] = 0.0
            out[2] = 0.0
            return
        s = angle / n
        out[0] = a0 * s
        out[1] = a1 * s
        out[2] = a2 * s
        return
    s = 0.5 * angle / math.sin(angle)
    out[0] = (m21 - m12) * s
    out[1] = (m02 - m20) * s
    out[2] = (m10 - m01) * s


@njit(cache=True)
def _cascade_kernel(code, payload, s, mix, gamma_pinv, k, wmax, mass, gvec,
                    gains, cs, dt):
    n = gamma_pinv.shape[0]
    wd = np.empty(n)

    if code == 0:  # per-motor throttle, bypasses the cascade
        for i in range(n):
            t = payload[i]
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            wd[i] = t * wmax
        return wd

    if code == 1:  # control groups
        roll = payload[0]
        pitch = payload[1]
        yaw = payload[2]
        coll = payload[3]
        for i in range(n):
            t = coll + MIX_GAIN * (roll * mix[0, i] + pitch * mix[1, i]
                                   + yaw * mix[2, i])
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            wd[i] = t * wmax
        return wd

    ft = 0.0
    rd = np.empty(9)
    acc0 = 0.0
    acc1 = 0.0
    acc2 = 0.0
    rate_sp0 = 0.0
    rate_sp1 = 0.0
    rate_sp2 = 0.0

    if code >= 4:  # acceleration level and above
        if code == 8:  # position -> velocity
            vx = gains[0] * (payload[0] - s[0])
            vy = gains[0] * (payload[1] - s[1])
            vz = gains[0] * (payload[2] - s[2])
            vn = math.sqrt(vx * vx + vy * vy + vz * vz)
            if vn > gains[8]:
                sc = gains[8] / vn
                vx *= sc
                vy *= sc
                vz *= sc
        elif code == 6 or code == 7:
            vx = payload[0]
            vy = payload[1]
            vz = payload[2]
        else:
            vx = 0.0
            vy = 0.0
            vz = 0.0

        if code == 4 or code == 5:  # acceleration given directly
            acc0 = payload[0]
            acc1 = payload[1]
            acc2 = payload[2]
        else:  # velocity PID -> acceleration
            e0 = vx - s[3]
            e1 = vy - s[4]
            e2 = vz - s[5]
            ki = gains[2]
            cs[0] += e0 * dt
            cs[1] += e1 * dt
            cs[2] += e2 * dt
            if ki > 0.0:
                lim = gains[9] / ki
                for j in range(3):
                    if cs[j] > lim:
                        cs[j] = lim
                    elif cs[j] < -lim:
                        cs[j] = -lim
            d0 = 0.0
            d1 = 0.0
            d2 = 0.0
            if cs[6] != 0.0:
                d0 = (e0 - cs[3]) / dt
                d1 = (e1 - cs[4]) / dt
                d2 = (e2 - cs[5]) / dt
            cs[3] = e0
            cs[4] = e1
            cs[5] = e2
            cs[6] = 1.0
            kp = gains[1]
            kd = gains[3]
            acc0 = kp * e0 + ki * cs[0] + kd * d0
            acc1 = kp * e1 + ki * cs[1] + kd * d1
            acc2 = kp * e2 + ki * cs[2] + kd * d2
            an = math.sqrt(acc0 * acc0 + acc1 * acc1 + acc2 * acc2)
            if an > gains[9]:
                sc = gains[9] / an
                acc0 *= sc
                acc1 *= sc
                acc2 *= sc

        # heading reference: direct for (e)/(g)/(i), integrated for (f)/(h)
        if code == 5 or code == 7:
            if cs[15] == 0.0:
                cs[14] = math.atan2(s[9], s[6])
                cs[15] = 1.0
            cs[14] += payload[3] * dt
            eta = cs[14]
        else:
            eta = payload[3]

        # acceleration + heading -> attitude + thrust
        t0 = acc0 - gvec[0]
        t1 = acc1 - gvec[1]
        t2 = acc2 - gvec[2]
        tn = math.sqrt(t0 * t0 + t1 * t1 + t2 * t2)
        if tn <= 1e-6:
            # thrust direction undefined: cut thrust, hold current attitude
            ft = 0.0
            for j in range(9):
                rd[j] = s[6 + j]
        else:
            b3x = t0 / tn
            b3y = t1 / tn
            b3z = t2 / tn
            ft = mass * tn
            fmax = n * k * wmax * wmax
            if ft > fmax:
                ft = fmax
            cx = math.cos(eta)
            cy = math.sin(eta)
            if b3z <= 1e-9:
                ft = 0.0
                for j in range(9):
                    rd[j] = s[6 + j]
            else:
                # b1 horizontal projection exactly along the heading vector
                b1x = cx
                b1y = cy
                b1z = -(cx * b3x + cy * b3y) / b3z
                bn = math.sqrt(b1x * b1x + b1y * b1y + b1z * b1z)
                b1x /= bn
                b1y /= bn
                b1z /= bn
                b2x = b3y * b1z - b3z * b1y
                b2y = b3z * b1x - b3x * b1z
                b2z = b3x * b1y - b3y * b1x
                rd[0] = b1x
                rd[1] = b2x
                rd[2] = b3x
                rd[3] = b1y
                rd[4] = b2y
                rd[5] = b3y
                rd[6] = b1z
                rd[7] = b2z
                rd[8] = b3z

    if code == 3:  # attitude + throttle given directly
        for j in range(9):
            rd[j] = payload[j]
        t = payload[9]
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        w = t * wmax
        ft = n * k * w * w

    if code >= 3:  # attitude P -> body-rate setpoint
        err = np.empty(3)
        _rotvec_err(s, rd, err)
        rate_sp0 = gains[4] * err[0]
        rate_sp1 = gains[4] * err[1]
        rate_sp2 = gains[4] * err[2]
        rn = math.sqrt(rate_sp0 * rate_sp0 + rate_sp1 * rate_sp1
                       + rate_sp2 * rate_sp2)
        if rn > gains[10]:
            sc = gains[10] / rn
            rate_sp0 *= sc
            rate_sp1 *= sc
            rate_sp2 *= sc

    if code == 2:  # body rates + throttle given directly
        rate_sp0 = payload[0]
        rate_sp1 = payload[1]
        rate_sp2 = payload[2]
        t = payload[3]
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        w = t * wmax
        ft = n * k * w * w

    # body-rate PID -> torque
    e0 = rate_sp0 - s[15]
    e1 = rate_sp1 - s[16]
    e2 = rate_sp2 - s[17]
    ki = gains[6]
    cs[7] += e0 * dt
    cs[8] += e1 * dt
    cs[9] += e2 * dt
    if ki > 0.0:
        lim = gains[11] / ki
        for j in range(7, 10):
            if cs[j] > lim:
                cs[j] = lim
            elif cs[j] < -lim:
                cs[j] = -lim
    d0 = 0.0
    d1 = 0.0
    d2 = 0.0
    if cs[13] != 0.0:
        d0 = (e0 - cs[10]) / dt
        d1 = (e1 - cs[11]) / dt
        d2 = (e2 - cs[12]) / dt
    cs[10] = e0
    cs[11] = e1
    cs[12] = e2
    cs[13] = 1.0
    kp = gains[5]
    kd = gains[7]
    tq0 = kp * e0 + ki * cs[7] + kd * d0
    tq1 = kp * e1 + ki * cs[8] + kd * d1
    tq2 = kp * e2 + ki * cs[9] + kd * d2
    tl = gains[11]
    if tq0 > tl:
        tq0 = tl
    elif tq0 < -tl:
        tq0 = -tl
    if tq1 > tl:
        tq1 = tl
    elif tq1 < -tl:
        tq1 = -tl
    if tq2 > tl:
        tq2 = tl
    elif tq2 < -tl:
        tq2 = -tl

    # wrench -> per-motor forces -> speeds
    for i in range(n):
        f = (gamma_pinv[i, 0] * ft + gamma_pinv[i, 1] * tq0
             + gamma_pinv[i, 2] * tq1 + gamma_pinv[i, 3] * tq2)
        if f < 0.0:
            f = 0.0
        w = math.sqrt(f / k)
        if w > wmax:
            w = wmax
        wd[i] = w
    return wd


def control_params(model: UavModel):
    """Contiguous arrays consumed by the cascade kernel."""
    p = model.propellers
    return (
        mixer_rows(model.allocation),
        model.allocation.pseudo_inverse,
        p.thrust_coefficient,
        p.max_angular_velocity,
        model.body.mass,
        model.body.gravity,
    )


def pack_input(inp: ControlInput, n_motors: int):
    """Validate a control input and pack it as (modality code, payload)."""
    code = MODALITY_CODES.get(type(inp))
    if code is None:
        raise TypeError(f"unsupported control input type {type(inp).__name__}")
    if code == 0:
        payload = np.asarray(inp.throttles, dtype=float)
        if payload.shape != (n_motors,):
            raise ValueError(f"expected {n_motors} throttles")
    elif code == 1:
        payload = np.array([inp.roll, inp.pitch, inp.yaw, inp.throttle],
                           dtype=float)
    elif code == 2:
        payload = np.concatenate([inp.body_rates, [inp.throttle]]).astype(float)
    elif code == 3:
        rot = np.asarray(inp.rotation, dtype=float)
        if not is_rotation(rot, tol=1e-6):
            raise ValueError("attitude setpoint is not a rotation matrix")
        payload = np.concatenate([rot.reshape(9), [inp.throttle]])
    elif code in (4, 5):
        tail = inp.heading if code == 4 else inp.heading_rate
        payload = np.concatenate([inp.acceleration, [tail]]).astype(float)
    elif code in (6, 7):
        tail = inp.heading if code == 6 else inp.heading_rate
        payload = np.concatenate([inp.velocity, [tail]]).astype(float)
    else:
        payload = np.concatenate([inp.position, [inp.heading]]).astype(float)
    if not np.all(np.isfinite(payload)):
        raise ValueError("control input contains non-finite values")
    return code, np.ascontiguousarray(payload)


def unpack_input(code: int, payload) -> ControlInput:
    """Inverse of pack_input (used by the wire protocol and config loader)."""
    payload = np.asarray(payload, dtype=float)
    if code == 0:
        return ActuatorThrottles(payload)
    if code == 1:
        return ControlGroups(*payload[:4])
    if code == 2:
        return RateThrottle(payload[:3], float(payload[3]))
    if code == 3:
        return AttitudeThrottle(payload[:9].reshape(3, 3), float(payload[9]))
    if code == 4:
        return AccelHeading(payload[:3], float(payload[3]))
    if code == 5:
        return AccelHeadingRate(payload[:3], float(payload[3]))
    if code == 6:
        return VelocityHeading(payload[:3], float(payload[3]))
    if code == 7:
        return VelocityHeadingRate(payload[:3], float(payload[3]))
    if code == 8:
        return PositionHeading(payload[:3], float(payload[3]))
    raise ValueError(f"unknown modality code {code}")


def resolve(inp: ControlInput, state: UavState, model: UavModel,
            gains: CascadeGains, controller_state: ControllerState,
            dt: float):
    """Per-motor desired angular velocities for one physics step.

    Mutates controller_state (integrators, derivative memory, heading
    reference). The output is always within [0, omega_max].
    """
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    code, payload = pack_input(inp, model.n_motors)
    mix, pinv, k, wmax, mass, gvec = control_params(model)
    return _cascade_kernel(code, payload, state.to_flat(), mix, pinv, k,
                           wmax, mass, gvec, gains.to_flat(),
                           controller_state.array, float(dt))
