"""Multirotor rigid-body dynamics: propeller lag, force-torque allocation,
Euler rotational dynamics, and a deterministic RK4 stepper.

State convention: world frame z-up, body frame x-forward / z-up, rotation
matrix maps body to world. Motor speeds follow a first-order lag toward the
commanded speed; within a step the lag is advanced by its exact exponential
solution while the rigid-body states use classic 4-stage Runge-Kutta with the
motor trajectory evaluated at the stage times.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .rotations import is_rotation, orthonormalize

STATE_BODY_LEN = 18  # r(3) + v(3) + R(9, row-major) + omega(3); motors follow


class DivergenceError(RuntimeError):
    """Raised when an integration step produces non-finite state."""


@dataclass
class PropellerParams:
    """Quadratic thrust model constants for one propeller class."""

    thrust_coefficient: float = 2.2e-5   # N s^2 / rad^2
    motor_time_constant: float = 0.03    # s
    max_angular_velocity: float = 1100.0  # rad/s
    torque_constant: float = 0.016       # m, yaw torque per unit thrust

    def __post_init__(self):
        if self.thrust_coefficient <= 0.0:
            raise ValueError("thrust_coefficient must be > 0")
        if self.motor_time_constant <= 0.0:
            raise ValueError("motor_time_constant must be > 0")
        if self.max_angular_velocity <= 0.0:
            raise ValueError("max_angular_velocity must be > 0")
        if self.torque_constant < 0.0:
            raise ValueError("torque_constant must be >= 0")


@dataclass
class AllocationModel:
    """Linear map from per-motor thrust forces to (collective thrust, torques)."""

    matrix: np.ndarray          # (4, n_motors)
    arm_diagonal: float = 0.4   # m

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(np.asarray(self.matrix, dtype=float))
        if self.matrix.ndim != 2 or self.matrix.shape[0] != 4:
            raise ValueError("allocation matrix must be 4 x n_motors")
        if self.matrix.shape[1] < 3:
            raise ValueError("need at least 3 motors")
        if np.linalg.matrix_rank(self.matrix) < 4:
            raise ValueError("allocation matrix must have full row rank")
        self.pseudo_inverse = np.ascontiguousarray(np.linalg.pinv(self.matrix))

    @property
    def n_motors(self):
        return self.matrix.shape[1]

    @classmethod
    def quad_x(cls, arm_diagonal=0.4, torque_constant=0.016):
        """Standard X-configuration quadrotor allocation."""
        a = arm_diagonal / math.sqrt(2.0)
        c = torque_constant
        m = np.array([
            [1.0, 1.0, 1.0, 1.0],
            [-a, a, a, -a],
            [-a, a, -a, a],
            [-c, -c, c, c],
        ])
        return cls(matrix=m, arm_diagonal=arm_diagonal)


@dataclass
class RigidBodyModel:
    mass: float = 2.0
    inertia: np.ndarray = field(default_factory=lambda: np.diag([0.02, 0.02, 0.04]))
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        self.inertia = np.ascontiguousarray(np.asarray(self.inertia, dtype=float))
        self.gravity = np.ascontiguousarray(np.asarray(self.gravity, dtype=float))
        if self.mass <= 0.0:
            raise ValueError("mass must be > 0")
        if self.inertia.shape != (3, 3):
            raise ValueError("inertia must be 3x3")
        if np.max(np.abs(self.inertia - self.inertia.T)) > 1e-12:
            raise ValueError("inertia must be symmetric")
        if np.any(np.linalg.eigvalsh(self.inertia) <= 0.0):
            raise ValueError("inertia must be positive definite")
        if self.gravity.shape != (3,):
            raise ValueError("gravity must be a 3-vector")
        self.inertia_inv = np.ascontiguousarray(np.linalg.inv(self.inertia))


@dataclass
class UavModel:
    propellers: PropellerParams = field(default_factory=PropellerParams)
    allocation: AllocationModel = field(default_factory=AllocationModel.quad_x)
    body: RigidBodyModel = field(default_factory=RigidBodyModel)

    @classmethod
    def default_quad_x(cls):
        return cls()

    @property
    def n_motors(self):
        return self.allocation.n_motors

    def hover_motor_speed(self):
        """Per-motor speed where collective thrust balances gravity."""
        p = self.propellers
        weight = self.body.mass * float(np.linalg.norm(self.body.gravity))
        w = math.sqrt(weight / (self.n_motors * p.thrust_coefficient))
        return min(w, p.max_angular_velocity)

    def max_collective_thrust(self):
        p = self.propellers
        return self.n_motors * p.thrust_coefficient * p.max_angular_velocity ** 2


@dataclass
class UavState:
    position: np.ndarray
    velocity: np.ndarray
    rotation: np.ndarray      # world <- body
    body_rates: np.ndarray    # rad/s, body frame
    motor_speeds: np.ndarray  # rad/s, one per motor

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.body_rates = np.asarray(self.body_rates, dtype=float)
        self.motor_speeds = np.asarray(self.motor_speeds, dtype=float)

    def validate(self, model=None):
        if not is_rotation(self.rotation, tol=1e-9):
            raise ValueError("rotation is not in SO(3) within 1e-9")
        if model is not None:
            wmax = model.propellers.max_angular_velocity
            if np.any(self.motor_speeds < 0.0) or np.any(self.motor_speeds > wmax):
                raise ValueError("motor speeds outside [0, max_angular_velocity]")
        for v in (self.position, self.velocity, self.body_rates, self.motor_speeds):
            if not np.all(np.isfinite(v)):
                raise ValueError("non-finite state component")

    @classmethod
    def at_rest(cls, model, position=(0.0, 0.0, 0.0), heading_angle=0.0,
                motors="hover"):
        """State with zero velocities at a pose. motors: 'hover', 'rest' or
        an explicit per-motor speed sequence."""
        c, s = math.cos(heading_angle), math.sin(heading_angle)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        if isinstance(motors, str):
            if motors == "hover":
                w = np.full(model.n_motors, model.hover_motor_speed())
            elif motors == "rest":
                w = np.zeros(model.n_motors)
            else:
                raise ValueError(f"unknown motor preset {motors!r}")
        else:
            w = np.asarray(motors, dtype=float)
            if w.shape != (model.n_motors,):
                raise ValueError("motor speed list length mismatch")
        return cls(
            position=np.asarray(position, dtype=float),
            velocity=np.zeros(3),
            rotation=rot,
            body_rates=np.zeros(3),
            motor_speeds=w,
        )

    def to_flat(self):
        out = np.empty(STATE_BODY_LEN + self.motor_speeds.shape[0])
        out[0:3] = self.position
        out[3:6] = self.velocity
        out[6:15] = self.rotation.reshape(9)
        out[15:18] = self.body_rates
        out[18:] = self.motor_speeds
        return out

    @classmethod
    def from_flat(cls, flat):
        flat = np.asarray(flat, dtype=float)
        return cls(
            position=flat[0:3].copy(),
            velocity=flat[3:6].copy(),
            rotation=flat[6:15].reshape(3, 3).copy(),
            body_rates=flat[15:18].copy(),
            motor_speeds=flat[18:].copy(),
        )


@dataclass
class StateDerivative:
    velocity: np.ndarray
    acceleration: np.ndarray
    rotation_rate: np.ndarray   # R @ hat(omega)
    body_rate_accel: np.ndarray
    motor_accel: np.ndarray


def thrust_from_speed(p: PropellerParams, omega: float) -> float:
    """Quadratic propeller thrust k * omega^2."""
    if omega < 0.0:
        raise ValueError("propeller angular velocity must be >= 0")
    return p.thrust_coefficient * omega * omega


def motor_derivative(p: PropellerParams, omega: float, omega_desired: float) -> float:
    """First-order lag toward the commanded speed."""
    return -(omega - omega_desired) / p.motor_time_constant


def allocate(a: AllocationModel, forces):
    """Collective thrust and body torques for per-motor thrust forces."""
    forces = np.asarray(forces, dtype=float)
    if forces.shape != (a.n_motors,):
        raise ValueError(
            f"expected {a.n_motors} motor forces, got shape {forces.shape}")
    wrench = a.matrix @ forces
    return float(wrench[0]), wrench[1:4].copy()


def state_derivative(model: UavModel, state: UavState, motor_setpoints) -> StateDerivative:
    """Continuous-time derivative of the full state under commanded motor speeds."""
    p = model.propellers
    wd = np.clip(np.asarray(motor_setpoints, dtype=float), 0.0, p.max_angular_velocity)
    if wd.shape != (model.n_motors,):
        raise ValueError("motor setpoint length mismatch")
    motor_accel = -(state.motor_speeds - wd) / p.motor_time_constant
    forces = p.thrust_coefficient * state.motor_speeds ** 2
    thrust, torque = allocate(model.allocation, forces)
    body = model.body
    omega = state.body_rates
    rate_accel = body.inertia_inv @ (torque - np.cross(omega, body.inertia @ omega))
    omega_hat = np.array([
        [0.0, -omega[2], omega[1]],
        [omega[2], 0.0, -omega[0]],
        [-omega[1], omega[0], 0.0],
    ])
    rotation_rate = state.rotation @ omega_hat
    accel = state.rotation[:, 2] * (thrust / body.mass) + body.gravity
    return StateDerivative(
        velocity=state.velocity.copy(),
        acceleration=accel,
        rotation_rate=rotation_rate,
        body_rate_accel=rate_accel,
        motor_accel=motor_accel,
    )


@njit(cache=True)
def _body_deriv(s, wm, gamma, mass, inertia, inertia_inv, k, gvec, out):
    # s: 18-component body state, wm: motor speeds at this stage
    n = wm.shape[0]
    ft = 0.0
    t1 = 0.0
    t2 = 0.0
    t3 = 0.0
    for i in range(n):
        f = k * wm[i] * wm[i]
        ft += gamma[0, i] * f
        t1 += gamma[1, i] * f
        t2 += gamma[2, i] * f
        t3 += gamma[3, i] * f
    out[0] = s[3]
    out[1] = s[4]
    out[2] = s[5]
    inv_m = ft / mass
    out[3] = s[8] * inv_m + gvec[0]
    out[4] = s[11] * inv_m + gvec[1]
    out[5] = s[14] * inv_m + gvec[2]
    w1 = s[15]
    w2 = s[16]
    w3 = s[17]
    # dR = R @ hat(omega), row-major layout
    for r in range(3):
        b = 6 + 3 * r
        out[b + 0] = s[b + 1] * w3 - s[b + 2] * w2
        out[b + 1] = -s[b + 0] * w3 + s[b + 2] * w1
        out[b + 2] = s[b + 0] * w2 - s[b + 1] * w1
    jw1 = inertia[0, 0] * w1 + inertia[0, 1] * w2 + inertia[0, 2] * w3
    jw2 = inertia[1, 0] * w1 + inertia[1, 1] * w2 + inertia[1, 2] * w3
    jw3 = inertia[2, 0] * w1 + inertia[2, 1] * w2 + inertia[2, 2] * w3
    m1 = t1 - (w2 * jw3 - w3 * jw2)
    m2 = t2 - (w3 * jw1 - w1 * jw3)
    m3 = t3 - (w1 * jw2 - w2 * jw1)
    out[15] = inertia_inv[0, 0] * m1 + inertia_inv[0, 1] * m2 + inertia_inv[0, 2] * m3
    out[16] = inertia_inv[1, 0] * m1 + inertia_inv[1, 1] * m2 + inertia_inv[1, 2] * m3
    out[17] = inertia_inv[2, 0] * m1 + inertia_inv[2, 1] * m2 + inertia_inv[2, 2] * m3


@njit(cache=True)
def _rk4_kernel(flat, wd, dt, k, tau, wmax, gamma, mass, inertia, inertia_inv, gvec):
    """One integration step on the flat state. Returns (new_flat, ok)."""
    n = wd.shape[0]
    total = STATE_BODY_LEN + n
    wd_c = np.empty(n)
    for i in range(n):
        c = wd[i]
        if c < 0.0:
            c = 0.0
        elif c > wmax:
            c = wmax
        wd_c[i] = c
    # exact first-order lag trajectory at the RK4 stage times
    e_half = math.exp(-dt / (2.0 * tau))
    e_full = e_half * e_half
    wm0 = flat[STATE_BODY_LEN:total]
    wm_half = np.empty(n)
    wm_full = np.empty(n)
    for i in range(n):
        off = wm0[i] - wd_c[i]
        wm_half[i] = wd_c[i] + off * e_half
        wm_full[i] = wd_c[i] + off * e_full

    s0 = flat[0:STATE_BODY_LEN]
    k1 = np.empty(STATE_BODY_LEN)
    k2 = np.empty(STATE_BODY_LEN)
    k3 = np.empty(STATE_BODY_LEN)
    k4 = np.empty(STATE_BODY_LEN)
    tmp = np.empty(STATE_BODY_LEN)

    _body_deriv(s0, wm0, gamma, mass, inertia, inertia_inv, k, gvec, k1)
    half = 0.5 * dt
    for i in range(STATE_BODY_LEN):
        tmp[i] = s0[i] + half * k1[i]
    _body_deriv(tmp, wm_half, gamma, mass, inertia, inertia_inv, k, gvec, k2)
    for i in range(STATE_BODY_LEN):
        tmp[i] = s0[i] + half * k2[i]
    _body_deriv(tmp, wm_half, gamma, mass, inertia, inertia_inv, k, gvec, k3)
    for i in range(STATE_BODY_LEN):
        tmp[i] = s0[i] + dt * k3[i]
    _body_deriv(tmp, wm_full, gamma, mass, inertia, inertia_inv, k, gvec, k4)

    out = np.empty(total)
    sixth = dt / 6.0
    for i in range(STATE_BODY_LEN):
        out[i] = s0[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    for i in range(n):
        w = wm_full[i]
        if w < 0.0:
            w = 0.0
        elif w > wmax:
            w = wmax
        out[STATE_BODY_LEN + i] = w

    # Gram-Schmidt on the rotation columns (column j lives at out[6+3r+j])
    n1 = math.sqrt(out[6] * out[6] + out[9] * out[9] + out[12] * out[12])
    ok = n1 > 0.0
    if ok:
        b1x = out[6] / n1
        b1y = out[9] / n1
        b1z = out[12] / n1
        d = out[7] * b1x + out[10] * b1y + out[13] * b1z
        b2x = out[7] - d * b1x
        b2y = out[10] - d * b1y
        b2z = out[13] - d * b1z
        n2 = math.sqrt(b2x * b2x + b2y * b2y + b2z * b2z)
        ok = n2 > 0.0
        if ok:
            b2x /= n2
            b2y /= n2
            b2z /= n2
            out[6] = b1x
            out[9] = b1y
            out[12] = b1z
            out[7] = b2x
            out[10] = b2y
            out[13] = b2z
            out[8] = b1y * b2z - b1z * b2y
            out[11] = b1z * b2x - b1x * b2z
            out[14] = b1x * b2y - b1y * b2x
    if ok:
        for i in range(total):
            if not math.isfinite(out[i]):
                ok = False
                break
    return out, ok


def kernel_params(model: UavModel):
    """Contiguous arrays consumed by the numba stepping kernel."""
    p = model.propellers
    b = model.body
    return (
        p.thrust_coefficient,
        p.motor_time_constant,
        p.max_angular_velocity,
        model.allocation.matrix,
        b.mass,
        b.inertia,
        b.inertia_inv,
        b.gravity,
    )


def rk4_step_flat(flat, motor_setpoints, dt, params):
    """Step a flat state vector; params from kernel_params()."""
    out, ok = _rk4_kernel(flat, motor_setpoints, dt, *params)
    if not ok:
        raise DivergenceError(
            "integration step produced non-finite state "
            f"(position {out[0:3]}, velocity {out[3:6]})")
    return out


def rk4_step(model: UavModel, state: UavState, motor_setpoints, dt: float) -> UavState:
    """Advance one step of size dt. Deterministic: identical inputs produce
    bit-identical output."""
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    wd = np.ascontiguousarray(np.asarray(motor_setpoints, dtype=float))
    if wd.shape != (model.n_motors,):
        raise ValueError("motor setpoint length mismatch")
    flat = rk4_step_flat(state.to_flat(), wd, float(dt), kernel_params(model))
    return UavState.from_flat(flat)


def heading(rotation) -> float:
    """Heading angle: direction of the body x-axis projected to the world
    horizontal plane, in (-pi, pi]."""
    r = np.asarray(rotation, dtype=float)
    hx, hy = r[0, 0], r[1, 0]
    if math.hypot(hx, hy) < 1e-9:
        raise ValueError("heading undefined: body x-axis is vertical")
    eta = math.atan2(hy, hx)
    if eta <= -math.pi:
        eta += 2.0 * math.pi
    return eta


def renormalize_rotation(rotation):
    """Public wrapper for the per-step orthonormalization."""
    return orthonormalize(np.asarray(rotation, dtype=float))
