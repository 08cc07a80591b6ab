"""Learned additive acceleration-error models.

A model is a weight matrix over a feature map of vehicle state ``eta``
(position and velocity, packed as a 6-vector) and commanded acceleration
vector ``u_vec``. Feature maps expose analytic first and second partial
derivatives so that controllers can propagate the model through time
derivatives of the commanded input.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateAttitudeError, InvalidLogError, SingularSystemError

ETA_DIM = 6  # position (3) + velocity (3)
U_DIM = 3

MODEL_FORMAT_TAG = "flatff-model"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class StateVec:
    """Vehicle position and velocity, the state argument of the error model."""

    pos: np.ndarray
    vel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pos", np.asarray(self.pos, dtype=float).reshape(3))
        object.__setattr__(self, "vel", np.asarray(self.vel, dtype=float).reshape(3))

    @property
    def packed(self) -> np.ndarray:
        """6-vector [pos, vel]."""
        return np.concatenate([self.pos, self.vel])


def _packed_eta(eta) -> np.ndarray:
    if isinstance(eta, StateVec):
        return eta.packed
    return np.asarray(eta, dtype=float).reshape(ETA_DIM)


@dataclass(frozen=True)
class TrainingSample:
    """One regression observation: state, commanded acceleration, residual."""

    eta: StateVec
    u_vec: np.ndarray
    residual: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u_vec", np.asarray(self.u_vec, dtype=float).reshape(3))
        object.__setattr__(self, "residual", np.asarray(self.residual, dtype=float).reshape(3))


class FeatureMap:
    """Feature vector phi(eta, u_vec) with analytic first and second partials.

    Subclasses set ``name``, ``dim`` and ``params`` (scalars needed to
    reconstruct the map from a serialized model) and implement the six
    evaluation methods. Shapes:

        value       -> (dim,)
        jac_eta     -> (dim, 6)
        jac_u       -> (dim, 3)
        hess_eta    -> (dim, 6, 6)   d2 phi / d eta d eta
        hess_u      -> (dim, 3, 3)   d2 phi / d u d u
        hess_u_eta  -> (dim, 3, 6)   d2 phi / d u d eta
    """

    name: str = "abstract"
    dim: int = 0
    params: dict[str, float] = {}

    def value(self, eta: np.ndarray, u_vec: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jac_eta(self, eta: np.ndarray, u_vec: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jac_u(self, eta: np.ndarray, u_vec: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess_eta(self, eta: np.ndarray, u_vec: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess_u(self, eta: np.ndarray, u_vec: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess_u_eta(self, eta: np.ndarray, u_vec: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class PlanarFeatureMap(FeatureMap):
    """Hand-selected planar features of state and commanded acceleration.

    phi = [x, z, xdot, zdot, sin(theta), F sin(theta), F cos(theta), 1]

    The tilt and thrust terms are reconstructed from the commanded
    acceleration vector: F sin(theta) = -m_nom * u_x, F cos(theta) =
    m_nom * u_z and sin(theta) = -u_x / ||u_vec||, which are exact for a
    planar vehicle commanded with thrust F = m_nom * ||u_vec||.
    """

    name = "planar8"
    dim = 8

    def __init__(self, m_nom: float):
        if not m_nom > 0.0:
            raise ValueError("m_nom must be positive")
        self.m_nom = float(m_nom)
        self.params = {"m_nom": self.m_nom}
        J = np.zeros((8, ETA_DIM))
        J[0, 0] = 1.0  # x
        J[1, 2] = 1.0  # z
        J[2, 3] = 1.0  # xdot
        J[3, 5] = 1.0  # zdot
        self._jac_eta = _readonly(J)
        self._hess_eta = _readonly(np.zeros((8, ETA_DIM, ETA_DIM)))
        self._hess_u_eta = _readonly(np.zeros((8, U_DIM, ETA_DIM)))

    @staticmethod
    def _norm(u_vec: np.ndarray) -> float:
        r = float(np.sqrt(u_vec[0] ** 2 + u_vec[1] ** 2 + u_vec[2] ** 2))
        if r < 1e-9:
            raise DegenerateAttitudeError(
                "commanded acceleration magnitude below 1e-9; tilt angle undefined"
            )
        return r

    def value(self, eta, u_vec):
        r = self._norm(u_vec)
        phi = np.empty(8)
        phi[0] = eta[0]
        phi[1] = eta[2]
        phi[2] = eta[3]
        phi[3] = eta[5]
        phi[4] = -u_vec[0] / r
        phi[5] = -self.m_nom * u_vec[0]
        phi[6] = self.m_nom * u_vec[2]
        phi[7] = 1.0
        return phi

    def jac_eta(self, eta, u_vec):
        return self._jac_eta

    def jac_u(self, eta, u_vec):
        r = self._norm(u_vec)
        J = np.zeros((8, U_DIM))
        # d/du of -u_x / r
        J[4] = u_vec[0] * u_vec / r**3
        J[4, 0] -= 1.0 / r
        J[5, 0] = -self.m_nom
        J[6, 2] = self.m_nom
        return J

    def hess_eta(self, eta, u_vec):
        return self._hess_eta

    def hess_u(self, eta, u_vec):
        r = self._norm(u_vec)
        H = np.zeros((8, U_DIM, U_DIM))
        ux = u_vec[0]
        outer = np.outer(u_vec, u_vec)
        H4 = -3.0 * ux * outer / r**5
        H4 += ux * np.eye(3) / r**3
        H4[0] += u_vec / r**3
        H4[:, 0] += u_vec / r**3
        H[4] = H4
        return H

    def hess_u_eta(self, eta, u_vec):
        return self._hess_u_eta


class VelAccFeatureMap(FeatureMap):
    """Linear features: velocity, commanded acceleration, constant bias.

    phi = [xdot, ydot, zdot, u_x, u_y, u_z, 1]; all second partials vanish.
    """

    name = "velacc7"
    dim = 7

    def __init__(self):
        self.params = {}
        J_eta = np.zeros((7, ETA_DIM))
        J_eta[0, 3] = J_eta[1, 4] = J_eta[2, 5] = 1.0
        self._jac_eta = _readonly(J_eta)
        J_u = np.zeros((7, U_DIM))
        J_u[3, 0] = J_u[4, 1] = J_u[5, 2] = 1.0
        self._jac_u = _readonly(J_u)
        self._hess_eta = _readonly(np.zeros((7, ETA_DIM, ETA_DIM)))
        self._hess_u = _readonly(np.zeros((7, U_DIM, U_DIM)))
        self._hess_u_eta = _readonly(np.zeros((7, U_DIM, ETA_DIM)))

    def value(self, eta, u_vec):
        phi = np.empty(7)
        phi[0:3] = eta[3:6]
        phi[3:6] = u_vec
        phi[6] = 1.0
        return phi

    def jac_eta(self, eta, u_vec):
        return self._jac_eta

    def jac_u(self, eta, u_vec):
        return self._jac_u

    def hess_eta(self, eta, u_vec):
        return self._hess_eta

    def hess_u(self, eta, u_vec):
        return self._hess_u

    def hess_u_eta(self, eta, u_vec):
        return self._hess_u_eta


def make_feature_map_2d(m_nom: float = 4.19) -> PlanarFeatureMap:
    """Planar 8-feature map; ``m_nom`` is the controller's nominal mass."""
    return PlanarFeatureMap(m_nom=m_nom)


def make_feature_map_6d() -> VelAccFeatureMap:
    """Velocity + commanded-acceleration map with a constant bias feature."""
    return VelAccFeatureMap()


@dataclass(frozen=True)
class LinearErrorModel:
    """Acceleration-error model f_e(eta, u_vec) = W^T phi(eta, u_vec).

    W has shape (dim, 3); column i weights the i-th output axis. All
    derivatives are exact linear images of the feature-map derivatives.
    """

    feature_map: FeatureMap
    W: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.shape != (self.feature_map.dim, 3):
            raise ValueError(
                f"W shape {W.shape} does not match feature map "
                f"({self.feature_map.dim}, 3)"
            )
        object.__setattr__(self, "W", W)

    @classmethod
    def zeros(cls, feature_map: FeatureMap) -> "LinearErrorModel":
        return cls(feature_map, np.zeros((feature_map.dim, 3)))

    def evaluate(self, eta, u_vec) -> np.ndarray:
        """f_e at (eta, u_vec); eta may be a StateVec or a packed 6-vector."""
        eta = _packed_eta(eta)
        return self.W.T @ self.feature_map.value(eta, u_vec)

    def jacobians(self, eta, u_vec) -> tuple[np.ndarray, np.ndarray]:
        """(d f_e / d eta, d f_e / d u_vec) with shapes (3, 6) and (3, 3)."""
        eta = _packed_eta(eta)
        J_eta = self.W.T @ self.feature_map.jac_eta(eta, u_vec)
        J_u = self.W.T @ self.feature_map.jac_u(eta, u_vec)
        return J_eta, J_u

    def hessians(self, eta, u_vec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Second partials as 3rd-order arrays.

        Returns:
            (H_eta, H_u, H_u_eta) with shapes (3, 6, 6), (3, 3, 3), (3, 3, 6);
            index [i, a, b] is d2 f_e[i] / d slot_a d slot_b.
        """
        eta = _packed_eta(eta)
        fm = self.feature_map
        H_eta = np.einsum("fi,fab->iab", self.W, fm.hess_eta(eta, u_vec))
        H_u = np.einsum("fi,fab->iab", self.W, fm.hess_u(eta, u_vec))
        H_u_eta = np.einsum("fi,fab->iab", self.W, fm.hess_u_eta(eta, u_vec))
        return H_eta, H_u, H_u_eta


def residuals_from_arrays(
    t: np.ndarray,
    pos: np.ndarray,
    vel: np.ndarray,
    u_vec: np.ndarray,
    gravity: float,
    stride: int = 1,
) -> list[TrainingSample]:
    """Build residual samples from uniformly sampled run data.

    The observed acceleration is the central finite difference of the
    velocity sequence over ``stride`` samples; the predicted acceleration is
    the logged specific-force vector plus gravity. ``u_vec`` should be the
    input the vehicle actually realized (applied thrust along the actual
    body z-axis, divided by the nominal mass): pairing the realized input
    with the observed response is what makes the regression identify a
    causal input dependence even when the attitude deviates from its
    command. Endpoint samples are dropped.

    Raises:
        InvalidLogError: on fewer than 2*stride + 1 samples or non-uniform
            timestamps (jitter above 1e-9 s).
    """
    t = np.asarray(t, dtype=float)
    n = t.shape[0]
    if n < 2 * stride + 1:
        raise InvalidLogError(f"need at least {2 * stride + 1} samples, got {n}")
    dt = t[1] - t[0]
    if np.max(np.abs(np.diff(t) - dt)) > 1e-9:
        raise InvalidLogError("timestamps are not uniformly spaced (jitter > 1e-9 s)")
    g_world = np.array([0.0, 0.0, -gravity])
    h = stride * dt
    samples = []
    for i in range(stride, n - stride):
        obs = (vel[i + stride] - vel[i - stride]) / (2.0 * h)
        residual = obs - (u_vec[i] + g_world)
        samples.append(
            TrainingSample(eta=StateVec(pos[i], vel[i]), u_vec=u_vec[i], residual=residual)
        )
    return samples


def residuals_from_log(log, params, fd_step: float | None = None) -> list[TrainingSample]:
    """Residual samples from a run log (anything exposing ``training_arrays()``).

    Args:
        log: run log; ``training_arrays()`` must return (t, pos, vel, u_vec)
            with u_vec the realized specific-force vectors.
        params: physical parameters providing ``gravity``.
        fd_step: finite-difference step [s]; must be an integer multiple of
            the log spacing. Defaults to the log spacing itself.
    """
    t, pos, vel, u_vec = log.training_arrays()
    if len(t) < 2:
        raise InvalidLogError("log too short")
    dt = t[1] - t[0]
    if fd_step is None:
        stride = 1
    else:
        stride = int(round(fd_step / dt))
        if stride < 1 or abs(stride * dt - fd_step) > 1e-9:
            raise InvalidLogError(f"fd_step {fd_step} is not a multiple of log spacing {dt}")
    return residuals_from_arrays(t, pos, vel, u_vec, gravity=params.gravity, stride=stride)


def fit(
    samples: Sequence[TrainingSample],
    feature_map: FeatureMap,
    ridge: float = 1e-8,
) -> LinearErrorModel:
    """Least-squares fit of W to residual samples with a ridge penalty.

    Minimizes sum ||W^T phi_i - r_i||^2 + ridge * ||W||_F^2.

    Raises:
        ValueError: on an empty sample set or negative ridge.
        SingularSystemError: if ridge is zero and the features are rank
            deficient over the samples.
    """
    if len(samples) == 0:
        raise ValueError("cannot fit a model to zero samples")
    if ridge < 0.0:
        raise ValueError("ridge must be non-negative")
    Phi = np.stack([feature_map.value(s.eta.packed, s.u_vec) for s in samples])
    R = np.stack([s.residual for s in samples])
    if ridge == 0.0 and np.linalg.matrix_rank(Phi) < feature_map.dim:
        raise SingularSystemError(
            "features are rank deficient over the sample set and ridge is zero"
        )

    # Standardize before solving: noiseless single-trajectory data is highly
    # collinear, and the minimum-norm/ridge solution is only meaningful if
    # all features share a scale. Constant features act as the intercept:
    # they stay unscaled and absorb the centering offsets, so the returned
    # raw-space model is unchanged as a function.
    mu = Phi.mean(axis=0)
    sigma = Phi.std(axis=0)
    constant = sigma < 1e-12 * np.maximum(1.0, np.abs(mu))
    bias_candidates = [i for i in np.where(constant)[0] if abs(mu[i]) > 1e-9]
    bias_idx = max(bias_candidates, key=lambda i: abs(mu[i])) if bias_candidates else None
    center = np.where(constant, 0.0, mu) if bias_idx is not None else np.zeros_like(mu)
    scale = np.where(constant | (sigma == 0.0), 1.0, sigma)
    Phi_s = (Phi - center) / scale

    dim = feature_map.dim
    if ridge > 0.0:
        # Ridge as sqrt(ridge) * I augmentation rows in standardized space,
        # solved by SVD-backed lstsq (no condition-number squaring).
        A = np.vstack([Phi_s, np.sqrt(ridge) * np.eye(dim)])
        b = np.vstack([R, np.zeros((dim, 3))])
    else:
        A, b = Phi_s, R
    W_s, *_ = np.linalg.lstsq(A, b, rcond=None)

    W = W_s / scale[:, None]
    if bias_idx is not None:
        # fold the centering offsets back into the constant (bias) feature
        W[bias_idx] -= (center @ W) / mu[bias_idx]
    return LinearErrorModel(feature_map, W)


FEATURE_MAP_REGISTRY = {
    PlanarFeatureMap.name: lambda params: PlanarFeatureMap(m_nom=params["m_nom"]),
    VelAccFeatureMap.name: lambda params: VelAccFeatureMap(),
}


def save_model(model: LinearErrorModel, path) -> None:
    """Serialize a model to the versioned text format."""
    fm = model.feature_map
    lines = [
        f"{MODEL_FORMAT_TAG} v{MODEL_FORMAT_VERSION}",
        f"feature_map {fm.name}",
        f"dim {fm.dim}",
    ]
    for key in sorted(fm.params):
        lines.append(f"param {key} {fm.params[key]:.17g}")
    lines.append("weights")
    for row in model.W:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> LinearErrorModel:
    """Load a model written by :func:`save_model`."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = lines[0].split()
    if header[0] != MODEL_FORMAT_TAG or header[1] != f"v{MODEL_FORMAT_VERSION}":
        raise ValueError(f"unrecognized model header: {lines[0]!r}")
    name = None
    dim = None
    params: dict[str, float] = {}
    idx = 1
    while idx < len(lines) and lines[idx] != "weights":
        key, *rest = lines[idx].split()
        if key == "feature_map":
            name = rest[0]
        elif key == "dim":
            dim = int(rest[0])
        elif key == "param":
            params[rest[0]] = float(rest[1])
        else:
            raise ValueError(f"unrecognized model field {key!r}")
        idx += 1
    if name not in FEATURE_MAP_REGISTRY:
        raise ValueError(f"unknown feature map {name!r}")
    fm = FEATURE_MAP_REGISTRY[name](params)
    if dim != fm.dim:
        raise ValueError(f"dim {dim} does not match feature map {name!r} ({fm.dim})")
    W = np.array([[float(v) for v in ln.split()] for ln in lines[idx + 1 :]])
    return LinearErrorModel(fm, W)


SAMPLE_CSV_COLUMNS = (
    "x", "y", "z",
    "vx", "vy", "vz",
    "ux", "uy", "uz",
    "rx", "ry", "rz",
)


def write_samples_csv(samples: Sequence[TrainingSample], path) -> None:
    """Export a training dataset as CSV (state, command, residual columns)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SAMPLE_CSV_COLUMNS)
        for s in samples:
            row = list(s.eta.pos) + list(s.eta.vel) + list(s.u_vec) + list(s.residual)
            writer.writerow([f"{v:.17g}" for v in row])
