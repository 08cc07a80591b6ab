"""Exact feedforward generation by inverting the acceleration model.

Given a reference trajectory point and an optional learned acceleration-error
model, computes the body acceleration u, body z-axis, their first two time
derivatives, and the body angular velocity/acceleration feedforward terms.

Two inversion routes exist. The direct route treats the error model as a
function of state only, subtracting it (and optionally its total time
derivatives) from the demanded acceleration chain. The numerical route solves
the input-dependent acceleration balance with Newton iteration and propagates
derivatives of the commanded acceleration vector through linear solves
against the input Jacobian.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errmodel import LinearErrorModel
from .errors import (
    DegenerateAttitudeError,
    DegenerateThrustError,
    NewtonConvergenceError,
    SingularJacobianError,
)
from .trajgen import TrajectoryPoint

#: Minimum commanded acceleration magnitude [m/s^2] for a defined attitude.
U_MIN = 1e-3

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
JACOBIAN_COND_LIMIT = 1e12


@dataclass(frozen=True)
class PhysicalParams:
    """Nominal vehicle parameters used by the controller."""

    mass: float
    gravity: float
    inertia: float

    def __post_init__(self):
        for name in ("mass", "gravity", "inertia"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")

    @property
    def g_world(self) -> np.ndarray:
        """World gravity vector (0, 0, -g)."""
        return np.array([0.0, 0.0, -self.gravity])


@dataclass(frozen=True)
class FlatControl:
    """Inversion output bundle.

    ``u_vec`` is the commanded acceleration vector u * z. ``omega`` and
    ``omega_dot`` are world-frame vectors with no component along z (zero
    yaw rate).
    """

    u: float
    z: np.ndarray
    u_dot: float
    z_dot: np.ndarray
    u_ddot: float
    z_ddot: np.ndarray
    omega: np.ndarray
    omega_dot: np.ndarray
    u_vec: np.ndarray


class Strategy(enum.Enum):
    """Feedforward generation strategies.

    FF1  no error model.
    FF2  error model in the acceleration balance only.
    FF3  FF2 plus numerical inversion of the input-dependent balance.
    FF4  FF2 plus propagation of the model's time derivatives.
    FF5  numerical inversion plus derivative propagation.
    """

    FF1 = "FF1"
    FF2 = "FF2"
    FF3 = "FF3"
    FF4 = "FF4"
    FF5 = "FF5"

    @property
    def uses_model(self) -> bool:
        return self is not Strategy.FF1

    @property
    def input_dependent(self) -> bool:
        """Solve the acceleration balance numerically in u_vec."""
        return self in (Strategy.FF3, Strategy.FF5)

    @property
    def model_dynamics(self) -> bool:
        """Propagate model derivatives into the jerk/snap chain."""
        return self in (Strategy.FF4, Strategy.FF5)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def _inv3(A: np.ndarray) -> np.ndarray:
    """Inverse of a 3x3 matrix via the adjugate, guarding conditioning.

    Raises:
        SingularJacobianError: if the matrix is singular or its 1-norm
            condition number exceeds JACOBIAN_COND_LIMIT.
    """
    a, b, c = A[0]
    d, e, f = A[1]
    g, h, i = A[2]
    c00 = e * i - f * h
    c01 = c * h - b * i
    c02 = b * f - c * e
    c10 = f * g - d * i
    c11 = a * i - c * g
    c12 = c * d - a * f
    c20 = d * h - e * g
    c21 = b * g - a * h
    c22 = a * e - b * d
    det = a * c00 + b * c10 + c * c20
    if det == 0.0 or not np.isfinite(det):
        raise SingularJacobianError("input Jacobian is singular")
    inv = np.array(
        [[c00, c01, c02], [c10, c11, c12], [c20, c21, c22]]
    ) / det
    norm_a = max(
        abs(a) + abs(d) + abs(g), abs(b) + abs(e) + abs(h), abs(c) + abs(f) + abs(i)
    )
    norm_inv = np.max(np.sum(np.abs(inv), axis=0))
    if norm_a * norm_inv > JACOBIAN_COND_LIMIT:
        raise SingularJacobianError(
            f"input Jacobian condition number {norm_a * norm_inv:.3e} exceeds limit"
        )
    return inv


def body_rates(z: np.ndarray, z_dot: np.ndarray, yaw: float = 0.0) -> np.ndarray:
    """Angular velocity realizing z_dot for a yaw-fixed frame.

    Builds the body x/y axes from the heading direction, then projects
    z_dot: omega_x = -z_dot . y_b, omega_y = z_dot . x_b. The returned
    world-frame vector satisfies z_dot = omega x z and has zero component
    along z (zero yaw rate).

    Raises:
        DegenerateAttitudeError: if z is within 1e-6 of anti-parallel to
            world z, or parallel to the heading direction.
    """
    x_b, y_b = _body_axes(z, yaw)
    wx = -float(z_dot @ y_b)
    wy = float(z_dot @ x_b)
    return wx * x_b + wy * y_b


def body_ang_accel(
    z: np.ndarray, z_dot: np.ndarray, z_ddot: np.ndarray, omega: np.ndarray, yaw: float = 0.0
) -> np.ndarray:
    """Angular acceleration realizing z_ddot given the current rates.

    Uses z_ddot = omega_dot x z + omega x z_dot: projects
    z_ddot - omega x z_dot onto the body x and y axes. Zero yaw component.
    """
    x_b, y_b = _body_axes(z, yaw)
    w = z_ddot - _cross(omega, z_dot)
    ax = -float(w @ y_b)
    ay = float(w @ x_b)
    return ax * x_b + ay * y_b


def _body_axes(z: np.ndarray, yaw: float) -> tuple[np.ndarray, np.ndarray]:
    if 1.0 + z[2] < 1e-6:
        raise DegenerateAttitudeError("body z-axis is anti-parallel to world z")
    x_c = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    y_b = _cross(z, x_c)
    n = float(np.sqrt(y_b @ y_b))
    if n < 1e-9:
        raise DegenerateAttitudeError("body z-axis is parallel to the heading direction")
    y_b = y_b / n
    x_b = _cross(y_b, z)
    return x_b, y_b


def _chain_from_uvec_derivs(
    u_vec: np.ndarray, d1: np.ndarray, d2: np.ndarray
) -> FlatControl:
    """Complete a FlatControl from u_vec and its first/second time derivatives.

    d1 and d2 are the time derivatives of the commanded acceleration vector
    (the effective jerk and snap for the direct route).
    """
    u = float(np.sqrt(u_vec @ u_vec))
    if u < U_MIN:
        raise DegenerateThrustError(
            f"commanded acceleration magnitude {u:.3e} below {U_MIN}"
        )
    z = u_vec / u
    u_dot = float(d1 @ z)
    z_dot = (d1 - u_dot * z) / u
    u_ddot = float(d2 @ z) + u * float(z_dot @ z_dot)
    z_ddot = (d2 - u_ddot * z - 2.0 * u_dot * z_dot) / u
    omega = body_rates(z, z_dot)
    omega_dot = body_ang_accel(z, z_dot, z_ddot, omega)
    return FlatControl(
        u=u,
        z=z,
        u_dot=u_dot,
        z_dot=z_dot,
        u_ddot=u_ddot,
        z_ddot=z_ddot,
        omega=omega,
        omega_dot=omega_dot,
        u_vec=u_vec,
    )


def invert_independent(
    ref: TrajectoryPoint,
    model: LinearErrorModel | None,
    params: PhysicalParams,
    use_model_dynamics: bool = False,
) -> FlatControl:
    """Direct inversion treating the error model as input-independent.

    The commanded acceleration vector is a_d - g - f_e. Input-dependent
    feature terms are frozen at the nominal command a_d - g (the model-free
    inversion), so f_e acts as a function of the reference state only.

    With ``use_model_dynamics`` the demanded jerk and snap are corrected by
    the first and second total time derivatives of f_e along the reference
    (state derivatives taken from the demanded velocity/acceleration/jerk);
    otherwise the raw demanded jerk/snap are used.

    Raises:
        DegenerateThrustError: commanded acceleration magnitude below U_MIN.
    """
    g_world = params.g_world
    u_nom = ref.acc - g_world
    if model is None:
        u_vec = u_nom
        d1 = ref.jerk
        d2 = ref.snap
        return _chain_from_uvec_derivs(u_vec, d1, d2)

    eta = np.concatenate([ref.pos, ref.vel])
    fe = model.evaluate(eta, u_nom)
    u_vec = u_nom - fe
    if use_model_dynamics:
        J_eta, _ = model.jacobians(eta, u_nom)
        H_eta, _, _ = model.hessians(eta, u_nom)
        eta_dot = np.concatenate([ref.vel, ref.acc])
        eta_ddot = np.concatenate([ref.acc, ref.jerk])
        d1 = ref.jerk - J_eta @ eta_dot
        fe_ddot = np.einsum("iab,a,b->i", H_eta, eta_dot, eta_dot) + J_eta @ eta_ddot
        d2 = ref.snap - fe_ddot
    else:
        d1 = ref.jerk
        d2 = ref.snap
    return _chain_from_uvec_derivs(u_vec, d1, d2)


def newton_solve(
    a_cmd: np.ndarray,
    model: LinearErrorModel,
    eta: np.ndarray,
    guess: np.ndarray | None,
    gravity: float,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> np.ndarray:
    """Solve u_vec + g + f_e(eta, u_vec) - a_cmd = 0 for u_vec.

    Newton iteration with the analytic input Jacobian I + d f_e / d u_vec.
    ``guess`` warm-starts the iteration (the previous timestep's solution);
    when None, the cold start is the model-free inversion a_cmd - g.

    Raises:
        NewtonConvergenceError: residual above tol after max_iter steps.
        SingularJacobianError: ill-conditioned input Jacobian.
    """
    g_world = np.array([0.0, 0.0, -gravity])
    if guess is None:
        u_vec = a_cmd - g_world
    else:
        u_vec = np.asarray(guess, dtype=float).copy()
    shift = g_world - a_cmd
    for _ in range(max_iter):
        residual = u_vec + shift + model.evaluate(eta, u_vec)
        if float(np.sqrt(residual @ residual)) <= tol:
            return u_vec
        _, J_u = model.jacobians(eta, u_vec)
        J = J_u + np.eye(3)
        u_vec = u_vec - _inv3(J) @ residual
    residual = u_vec + shift + model.evaluate(eta, u_vec)
    norm = float(np.sqrt(residual @ residual))
    if norm <= tol:
        return u_vec
    raise NewtonConvergenceError(
        f"residual {norm:.3e} above tol {tol:.1e} after {max_iter} iterations"
    )


def invert_dependent(
    ref: TrajectoryPoint,
    model: LinearErrorModel,
    params: PhysicalParams,
    prev_solution: np.ndarray | None = None,
    use_model_dynamics: bool = False,
) -> FlatControl:
    """Numerical inversion of the input-dependent acceleration balance.

    Solves for u_vec with Newton iteration, then obtains the time derivatives
    of u_vec from linear systems in the input Jacobian: the first from the
    model's state drift minus demanded jerk, the second from the full chain
    of second partials and demanded snap. With ``use_model_dynamics`` off the
    model's derivative terms are zeroed, leaving the demanded jerk/snap as
    the u_vec derivatives.

    Raises:
        NewtonConvergenceError, SingularJacobianError, DegenerateThrustError.
    """
    eta = np.concatenate([ref.pos, ref.vel])
    u_vec = newton_solve(ref.acc, model, eta, prev_solution, gravity=params.gravity)
    if use_model_dynamics:
        J_eta, J_u = model.jacobians(eta, u_vec)
        dfdu_inv = _inv3(J_u + np.eye(3))
        eta_dot = np.concatenate([ref.vel, ref.acc])
        eta_ddot = np.concatenate([ref.acc, ref.jerk])
        dfdt = J_eta @ eta_dot - ref.jerk
        d1 = -(dfdu_inv @ dfdt)
        H_eta, H_u, H_u_eta = model.hessians(eta, u_vec)
        d2fdudt = np.einsum("iab,b->ia", H_u_eta, eta_dot)
        d2fdt2 = (
            np.einsum("iab,a,b->i", H_eta, eta_dot, eta_dot)
            + J_eta @ eta_ddot
            - ref.snap
        )
        M = np.einsum("iab,b->ia", H_u, d1) + 2.0 * d2fdudt
        d2 = dfdu_inv @ (-(M @ d1) - d2fdt2)
    else:
        d1 = ref.jerk
        d2 = ref.snap
    return _chain_from_uvec_derivs(u_vec, d1, d2)


def ff_generate(
    strategy: Strategy,
    ref: TrajectoryPoint,
    model: LinearErrorModel | None,
    params: PhysicalParams,
    prev_solution: np.ndarray | None = None,
) -> FlatControl:
    """Dispatch a trajectory point through the selected feedforward strategy.

    Raises:
        ValueError: if the strategy needs a model and none is given.
    """
    if strategy is Strategy.FF1:
        return invert_independent(ref, None, params, use_model_dynamics=False)
    if model is None:
        raise ValueError(f"{strategy.value} requires an error model")
    if strategy.input_dependent:
        return invert_dependent(
            ref, model, params, prev_solution, use_model_dynamics=strategy.model_dynamics
        )
    return invert_independent(ref, model, params, use_model_dynamics=strategy.model_dynamics)
