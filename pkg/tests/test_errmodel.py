"""Error model: feature maps, analytic derivatives, residuals, regression."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from flatff import errmodel, sim2d
from flatff.errmodel import (
    LinearErrorModel,
    StateVec,
    TrainingSample,
    fit,
    load_model,
    make_feature_map_2d,
    make_feature_map_6d,
    residuals_from_arrays,
    residuals_from_log,
    save_model,
    write_samples_csv,
)
from flatff.errors import DegenerateAttitudeError, InvalidLogError, SingularSystemError

from conftest import MASS_NOM, MASS_TRUE, GRAVITY, ideal_weights


def random_point(rng, u_scale=4.0):
    eta = rng.normal(0, 2, 6)
    u = rng.normal((0, 0, 10), u_scale, 3)
    if np.linalg.norm(u) < 1.0:
        u[2] += 5.0
    return eta, u


def fd_jacobians(fmap, eta, u, h=1e-5):
    d_eta = np.zeros((fmap.dim, 6))
    for a in range(6):
        e = np.zeros(6)
        e[a] = h
        d_eta[:, a] = (fmap.value(eta + e, u) - fmap.value(eta - e, u)) / (2 * h)
    d_u = np.zeros((fmap.dim, 3))
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        d_u[:, a] = (fmap.value(eta, u + e) - fmap.value(eta, u - e)) / (2 * h)
    return d_eta, d_u


def fd_hessians(fmap, eta, u, h=1e-3):
    def val(de, du):
        return fmap.value(eta + de, u + du)

    H_eta = np.zeros((fmap.dim, 6, 6))
    for a in range(6):
        ea = np.zeros(6)
        ea[a] = h
        for b in range(6):
            eb = np.zeros(6)
            eb[b] = h
            H_eta[:, a, b] = (
                val(ea + eb, 0) - val(ea - eb, 0) - val(eb - ea, 0) + val(-ea - eb, 0)
            ) / (4 * h * h)
    H_u = np.zeros((fmap.dim, 3, 3))
    for a in range(3):
        ea = np.zeros(3)
        ea[a] = h
        for b in range(3):
            eb = np.zeros(3)
            eb[b] = h
            H_u[:, a, b] = (
                val(0, ea + eb) - val(0, ea - eb) - val(0, eb - ea) + val(0, -ea - eb)
            ) / (4 * h * h)
    H_ue = np.zeros((fmap.dim, 3, 6))
    for a in range(3):
        ua = np.zeros(3)
        ua[a] = h
        for b in range(6):
            eb = np.zeros(6)
            eb[b] = h
            H_ue[:, a, b] = (
                val(eb, ua) - val(-eb, ua) - val(eb, -ua) + val(-eb, -ua)
            ) / (4 * h * h)
    return H_eta, H_u, H_ue


class TestPlanarFeatureMap:
    def test_hover_features(self, fmap2d):
        phi = fmap2d.value(np.zeros(6), np.array([0.0, 0.0, 10.18]))
        expected = [0, 0, 0, 0, 0, 0, MASS_NOM * 10.18, 1.0]
        assert_allclose(phi, expected, atol=1e-12)

    def test_thrust_feature_slope(self, fmap2d):
        # F cos(theta) = m_nom * u_z, so its u_z derivative is m_nom
        J = fmap2d.jac_u(np.zeros(6), np.array([0.0, 0.0, GRAVITY]))
        assert_allclose(J[6, 2], MASS_NOM, atol=1e-12)

    def test_upright_tilt_sine_is_zero(self, fmap2d):
        rng = np.random.default_rng(3)
        phi = fmap2d.value(rng.normal(0, 1, 6), np.array([0.0, 0.0, 1.0]))
        assert phi[4] == 0.0

    def test_degenerate_command_rejected(self, fmap2d):
        with pytest.raises(DegenerateAttitudeError):
            fmap2d.value(np.zeros(6), np.array([0.0, 0.0, 1e-12]))

    def test_dim(self, fmap2d):
        assert fmap2d.dim == 8


class TestVelAccFeatureMap:
    def test_assembly(self):
        fmap = make_feature_map_6d()
        eta = np.array([9, 9, 9, 1.0, 2.0, 3.0])
        phi = fmap.value(eta, np.array([0.0, 0.0, 10.0]))
        assert_allclose(phi, [1, 2, 3, 0, 0, 10, 1], atol=0.0)

    def test_dim_includes_bias(self):
        assert make_feature_map_6d().dim == 7

    def test_second_partials_vanish(self):
        fmap = make_feature_map_6d()
        eta, u = np.ones(6), np.ones(3)
        assert not fmap.hess_eta(eta, u).any()
        assert not fmap.hess_u(eta, u).any()
        assert not fmap.hess_u_eta(eta, u).any()


@pytest.mark.parametrize("map_name", ["planar8", "velacc7", "coupled"])
def test_derivative_consistency(map_name, coupled_map):
    """Analytic jacobians/hessians of every map track finite differences."""
    maps = {
        "planar8": make_feature_map_2d(MASS_NOM),
        "velacc7": make_feature_map_6d(),
        "coupled": coupled_map,
    }
    fmap = maps[map_name]
    rng = np.random.default_rng(11)
    n_jac, n_hess = 1000, 120
    for i in range(n_jac):
        eta, u = random_point(rng)
        J_eta, J_u = fd_jacobians(fmap, eta, u)
        assert_allclose(fmap.jac_eta(eta, u), J_eta, rtol=1e-6, atol=1e-7)
        assert_allclose(fmap.jac_u(eta, u), J_u, rtol=1e-6, atol=1e-7)
        if i < n_hess:
            H_eta, H_u, H_ue = fd_hessians(fmap, eta, u)
            assert_allclose(fmap.hess_eta(eta, u), H_eta, rtol=1e-4, atol=1e-5)
            assert_allclose(fmap.hess_u(eta, u), H_u, rtol=1e-4, atol=1e-5)
            assert_allclose(fmap.hess_u_eta(eta, u), H_ue, rtol=1e-4, atol=1e-5)


def test_hessian_slot_symmetry(fmap2d):
    rng = np.random.default_rng(5)
    for _ in range(50):
        eta, u = random_point(rng)
        H_u = fmap2d.hess_u(eta, u)
        assert_allclose(H_u, np.swapaxes(H_u, 1, 2), atol=1e-14)
        H_eta = fmap2d.hess_eta(eta, u)
        assert_allclose(H_eta, np.swapaxes(H_eta, 1, 2), atol=1e-14)


class TestLinearErrorModel:
    def test_zero_weights(self, fmap2d):
        model = LinearErrorModel.zeros(fmap2d)
        rng = np.random.default_rng(1)
        eta, u = random_point(rng)
        assert_allclose(model.evaluate(eta, u), 0.0, atol=0.0)
        J_eta, J_u = model.jacobians(eta, u)
        assert not J_eta.any() and not J_u.any()

    def test_constant_push_model(self, fmap2d):
        W = np.zeros((8, 3))
        W[7, 0] = -4.1
        model = LinearErrorModel(fmap2d, W)
        rng = np.random.default_rng(2)
        for _ in range(10):
            eta, u = random_point(rng)
            assert_allclose(model.evaluate(eta, u), [-4.1, 0, 0], atol=1e-14)

    def test_ideal_weights_reproduce_plant_residual(self):
        """Algebraic check of the full-disturbance weights against the plant.

        For a consistent planar attitude (u_vec = (F/m_nom)(-sin t, 0, cos t))
        the true residual is F sin/cos terms scaled by the mass-rate gap plus
        the direct state disturbances.
        """
        dist = sim2d.DISTURBANCE_SETS["D"]
        model = LinearErrorModel(make_feature_map_2d(MASS_NOM), ideal_weights(dist))
        rng = np.random.default_rng(4)
        km = 1.0 / MASS_NOM - 1.0 / MASS_TRUE
        for _ in range(30):
            theta = rng.uniform(-1.0, 1.0)
            F = rng.uniform(20.0, 70.0)
            eta = rng.normal(0, 1, 6)
            eta[1] = eta[4] = 0.0
            u = (F / MASS_NOM) * np.array([-math.sin(theta), 0.0, math.cos(theta)])
            expected_x = (
                km * F * math.sin(theta)
                - sim2d.PUSH_ACCEL
                - sim2d.DRAG_COEFF * eta[3]
                + sim2d.TILT_GAIN * math.sin(theta)
            )
            expected_z = -km * F * math.cos(theta) - sim2d.DRAG_COEFF * eta[5]
            assert_allclose(model.evaluate(eta, u), [expected_x, 0.0, expected_z], atol=1e-10)

    def test_linearity_in_weights(self, fmap2d):
        rng = np.random.default_rng(6)
        W1 = rng.normal(0, 1, (8, 3))
        W2 = rng.normal(0, 1, (8, 3))
        m1 = LinearErrorModel(fmap2d, W1)
        m2 = LinearErrorModel(fmap2d, W2)
        m12 = LinearErrorModel(fmap2d, W1 + W2)
        eta, u = random_point(rng)
        assert_allclose(
            m12.evaluate(eta, u), m1.evaluate(eta, u) + m2.evaluate(eta, u), rtol=1e-12
        )

    def test_input_slope_feature(self):
        W = np.zeros((7, 3))
        W[5, 2] = 0.7  # u_z feature weighting the z output
        model = LinearErrorModel(make_feature_map_6d(), W)
        _, J_u = model.jacobians(np.zeros(6), np.array([0, 0, 5.0]))
        assert_allclose(J_u[2, 2], 0.7, atol=1e-14)

    def test_model_derivatives_match_fd(self, fmap2d):
        rng = np.random.default_rng(8)
        W = rng.normal(0, 0.5, (8, 3))
        model = LinearErrorModel(fmap2d, W)
        eta, u = random_point(rng)
        J_eta_fd, J_u_fd = fd_jacobians(fmap2d, eta, u)
        J_eta, J_u = model.jacobians(eta, u)
        assert_allclose(J_eta, W.T @ J_eta_fd, rtol=1e-6, atol=1e-8)
        assert_allclose(J_u, W.T @ J_u_fd, rtol=1e-6, atol=1e-8)
        H_eta, H_u, H_ue = model.hessians(eta, u)
        He_fd, Hu_fd, Hue_fd = fd_hessians(fmap2d, eta, u)
        assert_allclose(H_u, np.einsum("fi,fab->iab", W, Hu_fd), rtol=1e-4, atol=1e-6)
        assert_allclose(H_eta, np.einsum("fi,fab->iab", W, He_fd), rtol=1e-4, atol=1e-6)
        assert_allclose(H_ue, np.einsum("fi,fab->iab", W, Hue_fd), rtol=1e-4, atol=1e-6)

    def test_dimension_mismatch_rejected(self, fmap2d):
        with pytest.raises(ValueError, match="shape"):
            LinearErrorModel(fmap2d, np.zeros((7, 3)))


class TestResiduals:
    def test_hover_log_zero_residuals(self, params):
        n = 11
        t = np.arange(n) * 1e-2
        pos = np.zeros((n, 3))
        vel = np.zeros((n, 3))
        u = np.tile([0.0, 0.0, params.gravity], (n, 1))
        samples = residuals_from_arrays(t, pos, vel, u, gravity=params.gravity)
        assert len(samples) == n - 2
        for s in samples:
            assert_allclose(s.residual, 0.0, atol=1e-14)

    def test_linear_velocity_exact(self, params):
        # constant acceleration: central differences are exact on linear data
        a = np.array([0.3, 0.0, -0.2])
        n = 9
        dt = 1e-2
        t = np.arange(n) * dt
        vel = t[:, None] * a
        pos = 0.5 * t[:, None] ** 2 * a
        u = np.tile([0.1, 0.0, 9.0], (n, 1))
        samples = residuals_from_arrays(t, pos, vel, u, gravity=params.gravity)
        expected = a - (np.array([0.1, 0.0, 9.0]) + np.array([0, 0, -params.gravity]))
        for s in samples:
            assert_allclose(s.residual, expected, atol=1e-12)

    def test_trim_hover_recovers_push_disturbance(self, params):
        """Set-A plant held at trim: residual equals the raw disturbance."""
        dist = sim2d.DISTURBANCE_SETS["A"]
        theta0, F = sim2d.hover_trim(dist, params)
        state = sim2d.PlanarState(theta=theta0).as_array()
        inp = sim2d.PlanarInput(F=F, tau=0.0)
        dt = 1e-3
        states = [state]
        for _ in range(100):
            states.append(sim2d.rk4_step(states[-1], inp, dist, params, dt))
        arr = np.array(states)
        t = np.arange(len(arr)) * dt
        pos = np.zeros((len(arr), 3))
        pos[:, 0], pos[:, 2] = arr[:, 0], arr[:, 1]
        vel = np.zeros((len(arr), 3))
        vel[:, 0], vel[:, 2] = arr[:, 3], arr[:, 4]
        spec = F / params.mass
        u = np.tile(
            [-spec * math.sin(theta0), 0.0, spec * math.cos(theta0)], (len(arr), 1)
        )
        samples = residuals_from_arrays(t, pos, vel, u, gravity=params.gravity)
        for s in samples:
            assert_allclose(s.residual, [-4.1, 0.0, 0.0], atol=1e-4)

    def test_nonuniform_timestamps_rejected(self, params):
        t = np.array([0.0, 0.01, 0.021, 0.03])
        z = np.zeros((4, 3))
        with pytest.raises(InvalidLogError, match="uniform"):
            residuals_from_arrays(t, z, z, z, gravity=params.gravity)

    def test_short_log_rejected(self, params):
        t = np.array([0.0, 0.01])
        z = np.zeros((2, 3))
        with pytest.raises(InvalidLogError, match="samples"):
            residuals_from_arrays(t, z, z, z, gravity=params.gravity)

    def test_fd_step_stride(self, params):
        """residuals_from_log honors a coarser differencing step."""
        cfg = sim2d.SimConfig(
            strategy=sim2d.Strategy.FF1,
            disturbances=sim2d.DisturbanceSpec(),
            feedback=False,
            dt=1e-3,
        )
        from flatff.trajgen import fit_rest_to_rest_poly

        traj = fit_rest_to_rest_poly((0, 0, 0), (0.5, 0, 0.5), 1.0)
        log = sim2d.run_trajectory(cfg, traj, None)
        fine = residuals_from_log(log, params)
        coarse = residuals_from_log(log, params, fd_step=5e-3)
        assert len(coarse) == len(fine) - 8
        with pytest.raises(InvalidLogError, match="multiple"):
            residuals_from_log(log, params, fd_step=2.5e-4)


class TestFit:
    def make_samples(self, model, n, rng, u_scale=4.0):
        samples = []
        for _ in range(n):
            eta, u = random_point(rng, u_scale)
            samples.append(
                TrainingSample(StateVec(eta[:3], eta[3:]), u, model.evaluate(eta, u))
            )
        return samples

    def test_ideal_weight_recovery(self, fmap2d):
        """Noise-free residuals from the full-disturbance weights, 500 points."""
        W_star = ideal_weights(sim2d.DISTURBANCE_SETS["D"])
        model = LinearErrorModel(fmap2d, W_star)
        rng = np.random.default_rng(12)
        fitted = fit(self.make_samples(model, 500, rng), fmap2d, ridge=1e-8)
        assert np.max(np.abs(fitted.W - W_star)) <= 1e-6

    def test_zero_residuals_give_zero_model(self, fmap2d):
        rng = np.random.default_rng(13)
        samples = [
            TrainingSample(StateVec(eta[:3], eta[3:]), u, np.zeros(3))
            for eta, u in (random_point(rng) for _ in range(100))
        ]
        fitted = fit(samples, fmap2d, ridge=1e-8)
        assert np.linalg.norm(fitted.W) <= 1e-6

    def test_single_repeated_sample_stays_finite(self, fmap2d):
        s = TrainingSample(StateVec([0, 0, 0], [1, 0, 0]), [0, 0, 10.0], [0.5, 0, 0])
        fitted = fit([s] * 5, fmap2d, ridge=1e-6)
        assert np.all(np.isfinite(fitted.W))

    def test_empty_samples_rejected(self, fmap2d):
        with pytest.raises(ValueError, match="zero samples"):
            fit([], fmap2d)

    def test_rank_deficient_without_ridge_rejected(self, fmap2d):
        s = TrainingSample(StateVec([0, 0, 0], [1, 0, 0]), [0, 0, 10.0], [0.5, 0, 0])
        with pytest.raises(SingularSystemError):
            fit([s] * 20, fmap2d, ridge=0.0)

    def test_fit_optimality(self, fmap2d):
        """Random perturbations of the solution do not decrease the objective."""
        rng = np.random.default_rng(14)
        W_star = rng.normal(0, 0.5, (8, 3))
        model = LinearErrorModel(fmap2d, W_star)
        samples = self.make_samples(model, 200, rng)
        for s in samples:  # add noise so the optimum is interior
            s.residual[:] += rng.normal(0, 0.05, 3)
        ridge = 1e-8
        fitted = fit(samples, fmap2d, ridge=ridge)

        def objective(W):
            sse = sum(
                np.sum((W.T @ fmap2d.value(s.eta.packed, s.u_vec) - s.residual) ** 2)
                for s in samples
            )
            return sse + ridge * np.sum(W**2)

        base = objective(fitted.W)
        for _ in range(20):
            d = rng.normal(0, 1, (8, 3))
            d *= 1e-3 / np.linalg.norm(d)
            assert objective(fitted.W + d) >= base - 1e-12

    def test_identifiability_random_weights(self, fmap2d):
        rng = np.random.default_rng(15)
        W_star = rng.normal(0, 1, (8, 3))
        model = LinearErrorModel(fmap2d, W_star)
        fitted = fit(self.make_samples(model, 400, rng), fmap2d, ridge=1e-8)
        assert np.max(np.abs(fitted.W - W_star)) <= 1e-6


class TestSerialization:
    def test_roundtrip(self, tmp_path, fmap2d):
        rng = np.random.default_rng(16)
        model = LinearErrorModel(fmap2d, rng.normal(0, 1, (8, 3)))
        path = tmp_path / "model.txt"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.feature_map.name == "planar8"
        assert loaded.feature_map.params["m_nom"] == pytest.approx(MASS_NOM, abs=0)
        assert_allclose(loaded.W, model.W, atol=0.0)  # 17 digits roundtrip exactly

    def test_roundtrip_6d(self, tmp_path):
        model = LinearErrorModel.zeros(make_feature_map_6d())
        path = tmp_path / "model6.txt"
        save_model(model, path)
        assert load_model(path).feature_map.name == "velacc7"

    def test_unknown_map_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("flatff-model v1\nfeature_map nope\ndim 2\nweights\n0 0 0\n0 0 0\n")
        with pytest.raises(ValueError, match="unknown feature map"):
            load_model(path)

    def test_samples_csv(self, tmp_path):
        samples = [
            TrainingSample(StateVec([1, 2, 3], [4, 5, 6]), [7, 8, 9], [0.1, 0.2, 0.3])
        ]
        path = tmp_path / "data.csv"
        write_samples_csv(samples, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == ",".join(errmodel.SAMPLE_CSV_COLUMNS)
        assert [float(v) for v in lines[1].split(",")][:3] == [1.0, 2.0, 3.0]
