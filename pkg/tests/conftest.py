"""Shared fixtures: physical parameters, ideal models, the full benchmark matrix."""

import time

import numpy as np
import pytest

from flatff import errmodel, experiment, sim2d
from flatff.errmodel import FeatureMap, LinearErrorModel, make_feature_map_2d
from flatff.trajgen import TrajectoryPoint

MASS_NOM = 4.19
MASS_TRUE = 6.19
GRAVITY = 10.18
MASS_RATE_GAIN = 1.0 / MASS_NOM - 1.0 / MASS_TRUE  # residual per unit F-feature


@pytest.fixture(scope="session")
def params():
    return sim2d.DEFAULT_PARAMS


@pytest.fixture()
def fmap2d():
    return make_feature_map_2d(m_nom=MASS_NOM)


def ideal_weights(dist: sim2d.DisturbanceSpec) -> np.ndarray:
    """Exact error-model weights for a ground-truth disturbance combination.

    Derived from observed - predicted acceleration with the true plant:
    the mass offset contributes +/-(1/m_nom - 1/m_true) on the thrust
    features, the remaining disturbances map directly onto state features.
    """
    W = np.zeros((8, 3))
    if dist.constant_push:
        W[7, 0] = -sim2d.PUSH_ACCEL
    if dist.drag_x:
        W[2, 0] = -sim2d.DRAG_COEFF
    if dist.tilt_coupling:
        W[4, 0] = sim2d.TILT_GAIN
    if dist.drag_z:
        W[3, 2] = -sim2d.DRAG_COEFF
    if dist.added_mass:
        W[5, 0] = MASS_RATE_GAIN
        W[6, 2] = -MASS_RATE_GAIN
    return W


@pytest.fixture()
def ideal_model_for_set():
    def make(set_name: str) -> LinearErrorModel:
        dist = sim2d.DISTURBANCE_SETS[set_name]
        return LinearErrorModel(make_feature_map_2d(m_nom=MASS_NOM), ideal_weights(dist))

    return make


def hover_point(t: float = 0.0) -> TrajectoryPoint:
    z3 = np.zeros(3)
    return TrajectoryPoint(t=t, pos=z3, vel=z3, acc=z3, jerk=z3, snap=z3)


class CoupledFeatureMap(FeatureMap):
    """Test-only map with state-input cross terms to exercise all Hessian blocks.

    phi = [xdot*u_x, zdot*u_z, sin(a*x)*u_x, u_x*u_z], a = 0.3.
    """

    name = "coupled4-test"
    dim = 4
    A = 0.3

    def __init__(self):
        self.params = {}

    def value(self, eta, u):
        return np.array(
            [
                eta[3] * u[0],
                eta[5] * u[2],
                np.sin(self.A * eta[0]) * u[0],
                u[0] * u[2],
            ]
        )

    def jac_eta(self, eta, u):
        J = np.zeros((4, 6))
        J[0, 3] = u[0]
        J[1, 5] = u[2]
        J[2, 0] = self.A * np.cos(self.A * eta[0]) * u[0]
        return J

    def jac_u(self, eta, u):
        J = np.zeros((4, 3))
        J[0, 0] = eta[3]
        J[1, 2] = eta[5]
        J[2, 0] = np.sin(self.A * eta[0])
        J[3, 0] = u[2]
        J[3, 2] = u[0]
        return J

    def hess_eta(self, eta, u):
        H = np.zeros((4, 6, 6))
        H[2, 0, 0] = -self.A**2 * np.sin(self.A * eta[0]) * u[0]
        return H

    def hess_u(self, eta, u):
        H = np.zeros((4, 3, 3))
        H[3, 0, 2] = H[3, 2, 0] = 1.0
        return H

    def hess_u_eta(self, eta, u):
        H = np.zeros((4, 3, 6))
        H[0, 0, 3] = 1.0
        H[1, 2, 5] = 1.0
        H[2, 0, 0] = self.A * np.cos(self.A * eta[0])
        return H


@pytest.fixture()
def coupled_map():
    return CoupledFeatureMap()


@pytest.fixture(scope="session")
def matrix_results(tmp_path_factory):
    """Full 4x5x2 benchmark matrix at the default configuration.

    Runs the open-loop half first (timed separately for the runtime gate),
    then the closed-loop half. Shared by the acceptance tests and the
    experiment-level invariants.
    """
    out = tmp_path_factory.mktemp("matrix")
    cfg_open = experiment.ExperimentConfig(feedback_modes=(False,))
    t0 = time.perf_counter()
    open_result = experiment.run_matrix(cfg_open, output_dir=out / "open")
    open_elapsed = time.perf_counter() - t0
    cfg_closed = experiment.ExperimentConfig(feedback_modes=(True,))
    closed_result = experiment.run_matrix(cfg_closed, output_dir=out / "closed")
    return {
        "open": open_result,
        "closed": closed_result,
        "open_elapsed": open_elapsed,
        "out": out,
    }
