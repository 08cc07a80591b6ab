"""Planar multirotor simulation under ground-truth disturbances.

The vehicle lives in the world x-z plane, tilting about the out-of-plane
axis: theta > 0 tilts the thrust direction toward -x, so the body z-axis is
(-sin theta, 0, cos theta). Ground truth dynamics:

    x_dd = -(F / m) sin(theta) + disturbances
    z_dd =  (F / m) cos(theta) - g + disturbances
    theta_dd = tau / I

A cascaded PD controller adds a position correction to the demanded
acceleration and an attitude correction to the demanded angular
acceleration; the feedforward terms come from the selected inversion
strategy. "Open loop" zeroes both PD corrections.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import flatness
from .errmodel import LinearErrorModel
from .errors import (
    DegenerateAttitudeError,
    DegenerateThrustError,
    NewtonConvergenceError,
    SimulationAbort,
    SingularJacobianError,
)
from .flatness import FlatControl, PhysicalParams, Strategy
from .trajgen import PolySegment, TrajectoryPoint, eval_poly

DEFAULT_PARAMS = PhysicalParams(mass=4.19, gravity=10.18, inertia=0.123)

# Ground-truth disturbance magnitudes.
PUSH_ACCEL = 4.1       # constant acceleration opposing +x [m/s^2]
DRAG_COEFF = 3.1       # linear velocity drag [1/s]
TILT_GAIN = 1.4        # tilt-proportional acceleration in x [m/s^2]
ADDED_MASS = 2.0       # unmodeled extra mass [kg]


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    if -math.pi < a <= math.pi:
        return a
    return a - 2.0 * math.pi * math.ceil((a - math.pi) / (2.0 * math.pi))


@dataclass(frozen=True)
class PlanarState:
    """Planar vehicle state; theta is wrapped to (-pi, pi] on construction."""

    x: float = 0.0
    z: float = 0.0
    theta: float = 0.0
    x_dot: float = 0.0
    z_dot: float = 0.0
    theta_dot: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.x, self.z, self.theta, self.x_dot, self.z_dot, self.theta_dot]
        )

    @classmethod
    def from_array(cls, a: np.ndarray) -> "PlanarState":
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class PlanarInput:
    """Total thrust [N] and body torque [N m]."""

    F: float
    tau: float


@dataclass(frozen=True)
class DisturbanceSpec:
    """Which ground-truth perturbations act on the simulated plant."""

    constant_push: bool = False   # x_dd -= 4.1
    drag_x: bool = False          # x_dd -= 3.1 * x_dot
    tilt_coupling: bool = False   # x_dd += 1.4 * sin(theta)
    drag_z: bool = False          # z_dd -= 3.1 * z_dot
    added_mass: bool = False      # true mass = nominal + 2 kg (forces only)

    def m_true(self, params: PhysicalParams) -> float:
        """Mass used by the force balance; inertia is never perturbed."""
        return params.mass + ADDED_MASS if self.added_mass else params.mass


#: Named disturbance combinations exercised by the experiment harness.
DISTURBANCE_SETS = {
    "A": DisturbanceSpec(constant_push=True),
    "B": DisturbanceSpec(constant_push=True, drag_x=True, drag_z=True),
    "C": DisturbanceSpec(tilt_coupling=True, added_mass=True),
    "D": DisturbanceSpec(
        constant_push=True, drag_x=True, tilt_coupling=True, drag_z=True, added_mass=True
    ),
}


@dataclass(frozen=True)
class Gains:
    """Cascaded PD gains (position/velocity, angle/angular velocity)."""

    kp_pos: float = 10.0
    kd_pos: float = 10.0
    kp_att: float = 300.0
    kd_att: float = 30.0

    def __post_init__(self):
        for name in ("kp_pos", "kd_pos", "kp_att", "kd_att"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class SimConfig:
    """One closed-loop run configuration."""

    strategy: Strategy
    disturbances: DisturbanceSpec
    feedback: bool
    dt: float = 1e-3
    params: PhysicalParams = DEFAULT_PARAMS
    gains: Gains = Gains()

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")


def dynamics_deriv(
    state: np.ndarray,
    inp: PlanarInput,
    dist: DisturbanceSpec,
    params: PhysicalParams,
) -> np.ndarray:
    """Time derivative of the planar state under the ground-truth plant."""
    th = state[2]
    xd = state[3]
    zd = state[4]
    m = params.mass + ADDED_MASS if dist.added_mass else params.mass
    s = math.sin(th)
    c = math.cos(th)
    spec = inp.F / m
    ax = -spec * s
    az = spec * c - params.gravity
    if dist.constant_push:
        ax -= PUSH_ACCEL
    if dist.drag_x:
        ax -= DRAG_COEFF * xd
    if dist.tilt_coupling:
        ax += TILT_GAIN * s
    if dist.drag_z:
        az -= DRAG_COEFF * zd
    return np.array([xd, zd, state[5], ax, az, inp.tau / params.inertia])


def rk4_step(
    state: np.ndarray,
    inp: PlanarInput,
    dist: DisturbanceSpec,
    params: PhysicalParams,
    dt: float,
) -> np.ndarray:
    """Classical 4th-order Runge-Kutta step; input held constant over dt."""
    k1 = dynamics_deriv(state, inp, dist, params)
    k2 = dynamics_deriv(state + 0.5 * dt * k1, inp, dist, params)
    k3 = dynamics_deriv(state + 0.5 * dt * k2, inp, dist, params)
    k4 = dynamics_deriv(state + dt * k3, inp, dist, params)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def hover_trim(
    dist: DisturbanceSpec, params: PhysicalParams
) -> tuple[float, float]:
    """Hover attitude and thrust at which both accelerations vanish at rest.

    Solves -g tan(theta) + d_x(theta) = 0 for the tilt, where d_x collects
    the x disturbances at zero velocity, then balances the vertical axis
    with F = m_true * g / cos(theta).
    """
    g = params.gravity
    push = PUSH_ACCEL if dist.constant_push else 0.0
    tilt = TILT_GAIN if dist.tilt_coupling else 0.0
    theta = 0.0
    if push != 0.0:
        for _ in range(100):
            h = -g * math.tan(theta) - push + tilt * math.sin(theta)
            dh = -g / math.cos(theta) ** 2 + tilt * math.cos(theta)
            step = h / dh
            theta -= step
            if abs(step) < 1e-15:
                break
    F = dist.m_true(params) * g / math.cos(theta)
    return theta, F


def initial_state_for_set(
    dist_set: str | DisturbanceSpec, params: PhysicalParams = DEFAULT_PARAMS
) -> PlanarState:
    """Initial state for a named disturbance set: at rest, at the hover trim tilt.

    Whenever the constant push acts, the vehicle starts tilted so that zero
    acceleration in z also gives zero acceleration in x; otherwise the trim
    tilt is zero and the state starts at the origin.
    """
    dist = DISTURBANCE_SETS[dist_set] if isinstance(dist_set, str) else dist_set
    theta0, _ = hover_trim(dist, params)
    return PlanarState(theta=theta0)


def controller_step(
    ref: TrajectoryPoint,
    state: np.ndarray,
    model: LinearErrorModel | None,
    cfg: SimConfig,
    prev_u: np.ndarray | None,
) -> tuple[PlanarInput, np.ndarray, FlatControl]:
    """One cascaded-control update.

    The position PD correction is added to the demanded acceleration before
    inversion (demanded jerk/snap are left untouched); the attitude PD
    correction is added to the demanded angular acceleration. With feedback
    off both corrections vanish and the command is pure feedforward.

    Returns:
        (plant input, commanded acceleration vector, full inversion output).
    """
    gains = cfg.gains
    if cfg.feedback:
        pos = np.array([state[0], 0.0, state[1]])
        vel = np.array([state[3], 0.0, state[4]])
        a_cmd = (
            ref.acc
            + gains.kp_pos * (ref.pos - pos)
            + gains.kd_pos * (ref.vel - vel)
        )
        ref = replace(ref, acc=a_cmd)
    fc = flatness.ff_generate(cfg.strategy, ref, model, cfg.params, prev_u)

    # Map the 3D attitude chain into the planar tilt. With body z =
    # (-sin theta, 0, cos theta) the pitch rate about the body y-axis is the
    # negative tilt rate, hence the sign flips.
    theta_des = math.atan2(-fc.z[0], fc.z[2])
    theta_dot_des = -fc.omega[1]
    theta_ddot_cmd = -fc.omega_dot[1]
    if cfg.feedback:
        theta_ddot_cmd += gains.kp_att * wrap_angle(theta_des - state[2])
        theta_ddot_cmd += gains.kd_att * (theta_dot_des - state[5])

    F = cfg.params.mass * fc.u
    tau = cfg.params.inertia * theta_ddot_cmd
    return PlanarInput(F=max(F, 0.0), tau=tau), fc.u_vec, fc


RUNLOG_CSV_COLUMNS = (
    "t", "x", "z", "theta", "xd", "zd", "thetad", "F", "tau", "ux", "uz", "ex", "ez"
)


@dataclass
class RunLog:
    """Uniform per-step record of one closed-loop run.

    ``err`` is reference minus actual position (x and z components).
    """

    t: np.ndarray
    state: np.ndarray        # (n, 6): x, z, theta, x_dot, z_dot, theta_dot
    F: np.ndarray
    tau: np.ndarray
    u_cmd: np.ndarray        # (n, 3) commanded acceleration vectors
    ref_pos: np.ndarray
    ref_vel: np.ndarray
    ref_acc: np.ndarray
    ref_jerk: np.ndarray
    ref_snap: np.ndarray
    err: np.ndarray          # (n, 2)
    m_nom: float = DEFAULT_PARAMS.mass
    n_clamped: int = 0
    abort_step: int | None = field(default=None)

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def training_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(t, pos, vel, u_realized) with the plane embedded at world y = 0.

        The input column is the specific-force vector the vehicle actually
        realized, (F / m_nom) * (-sin theta, 0, cos theta) from the logged
        thrust and attitude, not the commanded vector: regression must see
        the input that caused the observed acceleration.
        """
        n = len(self)
        pos = np.zeros((n, 3))
        pos[:, 0] = self.state[:, 0]
        pos[:, 2] = self.state[:, 1]
        vel = np.zeros((n, 3))
        vel[:, 0] = self.state[:, 3]
        vel[:, 2] = self.state[:, 4]
        spec = self.F / self.m_nom
        u_real = np.zeros((n, 3))
        u_real[:, 0] = -spec * np.sin(self.state[:, 2])
        u_real[:, 2] = spec * np.cos(self.state[:, 2])
        return self.t, pos, vel, u_real

    def to_csv(self, path) -> None:
        """Write the fixed-order per-step CSV with 17 significant digits."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RUNLOG_CSV_COLUMNS)
            for i in range(len(self)):
                row = (
                    self.t[i],
                    self.state[i, 0], self.state[i, 1], self.state[i, 2],
                    self.state[i, 3], self.state[i, 4], self.state[i, 5],
                    self.F[i], self.tau[i],
                    self.u_cmd[i, 0], self.u_cmd[i, 2],
                    self.err[i, 0], self.err[i, 1],
                )
                writer.writerow([f"{v:.17g}" for v in row])


_CONTROLLER_ERRORS = (
    DegenerateThrustError,
    DegenerateAttitudeError,
    NewtonConvergenceError,
    SingularJacobianError,
)


def run_trajectory(
    cfg: SimConfig,
    traj: PolySegment,
    model: LinearErrorModel | None,
    initial_state: PlanarState | None = None,
) -> RunLog:
    """Integrate the closed loop along a trajectory at cfg.dt, logging every step.

    The controller is part of the integrated dynamics: it is re-evaluated at
    every Runge-Kutta stage (continuous-control integration), so feedforward
    consistency is preserved to the integrator's order rather than being
    floored by input sample-and-hold. The logged input and command of step k
    are the ones computed at the step start. The Newton warm start is the
    most recently solved commanded acceleration vector.

    Raises:
        SimulationAbort: a controller failure, carrying the step index.
    """
    if initial_state is None:
        initial_state = initial_state_for_set(cfg.disturbances, cfg.params)
    n_steps = int(round(traj.duration / cfg.dt))
    state = initial_state.as_array()
    n_clamped = 0

    ts = np.empty(n_steps + 1)
    states = np.empty((n_steps + 1, 6))
    Fs = np.empty(n_steps + 1)
    taus = np.empty(n_steps + 1)
    u_cmds = np.empty((n_steps + 1, 3))
    refs = {k: np.empty((n_steps + 1, 3)) for k in ("pos", "vel", "acc", "jerk", "snap")}
    errs = np.empty((n_steps + 1, 2))

    def log_row(i, t, ref, F, tau, u_cmd):
        ts[i] = t
        states[i] = state
        Fs[i] = F
        taus[i] = tau
        u_cmds[i] = u_cmd
        refs["pos"][i] = ref.pos
        refs["vel"][i] = ref.vel
        refs["acc"][i] = ref.acc
        refs["jerk"][i] = ref.jerk
        refs["snap"][i] = ref.snap
        errs[i] = (ref.pos[0] - state[0], ref.pos[2] - state[1])

    warm = {"u": None}

    def stage(t, y):
        ref = eval_poly(traj, min(t, traj.duration))
        inp, u_cmd, fc = controller_step(ref, y, model, cfg, warm["u"])
        warm["u"] = u_cmd
        return dynamics_deriv(y, inp, cfg.disturbances, cfg.params), inp, u_cmd, ref

    dt = cfg.dt
    inp = PlanarInput(0.0, 0.0)
    u_cmd = np.zeros(3)
    for k in range(n_steps):
        t = k * dt
        try:
            k1, inp, u_cmd, ref = stage(t, state)
            k2 = stage(t + 0.5 * dt, state + (0.5 * dt) * k1)[0]
            k3 = stage(t + 0.5 * dt, state + (0.5 * dt) * k2)[0]
            k4 = stage(t + dt, state + dt * k3)[0]
        except _CONTROLLER_ERRORS as exc:
            raise SimulationAbort(k, exc) from exc
        if inp.F == 0.0:  # thrust was clamped at zero
            n_clamped += 1
        log_row(k, t, ref, inp.F, inp.tau, u_cmd)
        state = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    # final row at n_steps * dt to keep the log spacing exactly uniform
    t_end = n_steps * dt
    ref = eval_poly(traj, min(t_end, traj.duration))
    log_row(n_steps, t_end, ref, inp.F, inp.tau, u_cmd)

    return RunLog(
        t=ts,
        state=states,
        F=Fs,
        tau=taus,
        u_cmd=u_cmds,
        ref_pos=refs["pos"],
        ref_vel=refs["vel"],
        ref_acc=refs["acc"],
        ref_jerk=refs["jerk"],
        ref_snap=refs["snap"],
        err=errs,
        m_nom=cfg.params.mass,
        n_clamped=n_clamped,
    )
