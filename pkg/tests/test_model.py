import dataclasses

import numpy as np
import pytest

from puckshot.errors import ArtifactMismatch, EmptyMode
from puckshot.gaussians import GaussianBelief, is_psd, sample_gaussian
from puckshot.model import (
    ModeParams,
    ModeSample,
    check_model_compatible,
    fit_mode,
    fit_model,
    fragment_dataset,
    load_model,
    model_from_dict,
    model_to_dict,
    predict_velocity,
    save_model,
    state_space,
)
from puckshot.sim import Episode, SimConfig, collect_dataset
from puckshot.table import (
    FLOATING,
    ContactFrame,
    MalletState,
    ModeKind,
    PuckState,
    TableGeometry,
    Wall,
    wall_frame,
    wall_mode,
)

from conftest import make_synthetic_model


def make_episode(puck_rows, mallet_rows, modes, dt=0.02):
    n = len(puck_rows)
    return Episode(
        t=np.arange(n) * dt,
        puck=np.asarray(puck_rows, dtype=float),
        mallet=np.asarray(mallet_rows, dtype=float),
        modes=list(modes),
    )


class TestFragmentDataset:
    def test_contact_free_episode(self):
        rows = [[0.1 + 0.01 * k, 0.0, 0.5, 0.0] for k in range(50)]
        mallet = [[-5.0, -5.0, 0.0, 0.0]] * 50
        ep = make_episode(rows, mallet, [FLOATING] * 50)
        frags = fragment_dataset([ep])
        assert len(frags[ModeKind.FLOATING]) == 49
        assert len(frags[ModeKind.WALL]) == 0
        assert len(frags[ModeKind.MALLET]) == 0

    def test_single_bounce_lands_in_wall_mode(self):
        rows = [
            [0.5, 0.48, 0.0, 1.0],
            [0.5, 0.50, 0.0, -0.92],
            [0.5, 0.48, 0.0, -0.92],
        ]
        mallet = [[-5.0, -5.0, 0.0, 0.0]] * 3
        modes = [wall_mode(Wall.LEFT), FLOATING, FLOATING]
        frags = fragment_dataset([make_episode(rows, mallet, modes)])
        assert len(frags[ModeKind.WALL]) == 1
        sample = frags[ModeKind.WALL][0]
        # left-wall frame: normal (0,-1), tangential (1,0)
        assert np.allclose(sample.xi, [-1.0, 0.0])
        assert np.allclose(sample.y, [0.92, 0.0])

    def test_mallet_sample_is_contact_frame_4d(self):
        rows = [[0.5, 0.0, -0.3, 0.0], [0.5, 0.0, 2.0, 0.0]]
        mallet = [[0.5 - 0.0798, 0.0, 1.2, 0.0]] * 2
        from puckshot.table import MALLET

        frags = fragment_dataset([make_episode(rows, mallet, [MALLET, FLOATING])])
        sample = frags[ModeKind.MALLET][0]
        assert sample.xi.shape == (4,)
        assert np.allclose(sample.xi, [-0.3, 0.0, 1.2, 0.0])
        assert np.allclose(sample.y, [2.0, 0.0])

    def test_sample_budget(self, episodes):
        frags = fragment_dataset(episodes)
        total = sum(len(v) for v in frags.values())
        assert total <= 100 * 49


class TestFitMode:
    def test_floating_recovers_damping(self, geom):
        config = SimConfig(vel_noise_std=0.0)
        episodes = collect_dataset(geom, config, 40, 50, np.random.default_rng(1))
        model, _ = fit_model(episodes, config.dt, geom)
        p = model.params(ModeKind.FLOATING)
        expected = (1.0 - config.damping * config.dt) * np.eye(2)
        assert np.allclose(p.theta_mat, expected, atol=1e-6)
        assert np.allclose(p.theta_vec, 0.0, atol=1e-6)

    def test_wall_recovers_restitution(self, geom):
        config = SimConfig(vel_noise_std=0.0)
        episodes = collect_dataset(geom, config, 60, 50, np.random.default_rng(2))
        model, _ = fit_model(episodes, config.dt, geom)
        p = model.params(ModeKind.WALL)
        assert p.theta_mat[0, 0] == pytest.approx(-config.wall_restitution, rel=1e-3)
        assert p.theta_mat[1, 1] == pytest.approx(1.0 - config.wall_tangent_friction, rel=1e-3)

    def test_round_trip_known_params(self, geom):
        # generate labelled two-step episodes from known mode maps, refit
        truth = make_synthetic_model(geom, noise=4e-4)
        rng = np.random.default_rng(3)
        n = 10_000
        episodes = []
        p2 = truth.params(ModeKind.WALL)
        rot = wall_frame(Wall.LEFT).rotation
        y0 = geom.half_width - geom.puck_radius / 2
        for _ in range(n):
            v = np.array([rng.uniform(-2, 2), rng.uniform(0.3, 3.0)])  # into left wall
            mean = rot.T @ (p2.theta_mat @ (rot @ v) + p2.theta_vec)
            v1 = sample_gaussian(GaussianBelief(mean, rot.T @ p2.sigma @ rot), 1, rng)[0]
            rows = [[0.5, y0, *v], [0.5, y0 - 0.01, *v1]]
            mallet = [[-5, -5, 0, 0]] * 2
            episodes.append(make_episode(rows, mallet, [wall_mode(Wall.LEFT), FLOATING]))
        model, _ = fit_model(episodes, truth.dt, geom)
        fitted = model.params(ModeKind.WALL)
        assert np.linalg.norm(fitted.theta_mat - p2.theta_mat) / np.linalg.norm(
            p2.theta_mat
        ) < 0.05
        assert np.linalg.norm(fitted.sigma - p2.sigma) / np.linalg.norm(p2.sigma) < 0.10

    def test_empty_mode_reported(self, geom):
        rows = [[0.3 + 0.01 * k, 0.0, 0.5, 0.0] for k in range(30)]
        mallet = [[-5.0, -5.0, 0.0, 0.0]] * 30
        ep = make_episode(rows, mallet, [FLOATING] * 30)
        model, skipped = fit_model([ep], 0.02, geom)
        assert ModeKind.WALL in skipped and ModeKind.MALLET in skipped
        with pytest.raises(EmptyMode):
            model.params(ModeKind.WALL)

    def test_fit_mode_empty_raises(self):
        with pytest.raises(EmptyMode):
            fit_mode([])

    def test_calibration_on_held_out(self, geom, sim_config, fitted_model, episodes):
        held_out = collect_dataset(geom, sim_config, 40, 50, np.random.default_rng(77))
        frags = fragment_dataset(held_out)
        p = fitted_model.params(ModeKind.FLOATING)
        xi = np.array([s.xi for s in frags[ModeKind.FLOATING]])
        y = np.array([s.y for s in frags[ModeKind.FLOATING]])
        resid = y - xi @ p.theta_mat.T - p.theta_vec
        standardized = resid / np.sqrt(np.diag(p.sigma))
        assert abs(standardized.std() - 1.0) < 0.2


class TestPredictVelocity:
    def test_identity_model(self, geom):
        params = ModeParams(np.eye(2), np.zeros(2), np.zeros((2, 2)))
        model = make_synthetic_model(geom)
        model.modes[ModeKind.FLOATING] = params
        belief = predict_velocity(model, ModeKind.FLOATING, [0.7, -0.4])
        assert np.allclose(belief.mean, [0.7, -0.4])
        assert np.allclose(belief.cov, 0.0)

    def test_mallet_inherits_mallet_velocity(self, geom):
        model = make_synthetic_model(geom)
        model.modes[ModeKind.MALLET] = ModeParams(
            np.zeros((2, 2)), np.zeros(2), np.zeros((2, 2)), theta_mat_mallet=np.eye(2)
        )
        belief = predict_velocity(model, ModeKind.MALLET, [9.0, 9.0], mallet_vel=[1.0, 0.5])
        assert np.allclose(belief.mean, [1.0, 0.5])

    def test_arity_checks(self, synthetic_model):
        with pytest.raises(ValueError):
            predict_velocity(synthetic_model, ModeKind.MALLET, [0, 0])
        with pytest.raises(ValueError):
            predict_velocity(synthetic_model, ModeKind.FLOATING, [0, 0], mallet_vel=[0, 0])

    def test_one_step_calibration(self, geom, fitted_model, sim_config):
        held_out = collect_dataset(geom, sim_config, 30, 50, np.random.default_rng(55))
        frags = fragment_dataset(held_out)
        p = fitted_model.params(ModeKind.FLOATING)
        zs = []
        for s in frags[ModeKind.FLOATING]:
            belief = predict_velocity(fitted_model, ModeKind.FLOATING, s.xi)
            zs.append((s.y - belief.mean) / np.sqrt(np.diag(p.sigma)))
        zs = np.array(zs)
        assert abs(zs.var() - 1.0) < 0.2


class TestStateSpace:
    def test_floating_constant_velocity_structure(self, geom):
        model = make_synthetic_model(geom)
        model.modes[ModeKind.FLOATING] = ModeParams(np.eye(2), np.zeros(2), np.zeros((2, 2)))
        a, b, q = state_space(model, FLOATING)
        expected = np.eye(4)
        expected[0, 2] = expected[1, 3] = model.dt
        assert np.allclose(a, expected)
        assert np.allclose(b, 0.0)
        assert np.allclose(q, 0.0)

    def test_position_noise_block_zero(self, synthetic_model):
        for mode in [FLOATING, wall_mode(Wall.LEFT), wall_mode(Wall.TOP)]:
            _, _, q = state_space(synthetic_model, mode)
            assert np.allclose(q[:2, :], 0.0)
            assert np.allclose(q[:, :2], 0.0)

    def test_position_rows_constant_for_all_modes(self, synthetic_model, fitted_model):
        for model in (synthetic_model, fitted_model):
            for mode in [FLOATING] + [wall_mode(w) for w in Wall]:
                a, b, _ = state_space(model, mode)
                assert np.allclose(a[:2, :2], np.eye(2))
                assert np.allclose(a[:2, 2:], model.dt * np.eye(2))
                assert np.allclose(a[2:, :2], 0.0)
                assert np.allclose(b[:2], 0.0)

    def test_frame_conjugation(self, synthetic_model):
        angle = 0.7
        rot = np.array(
            [[np.cos(angle), np.sin(angle)], [-np.sin(angle), np.cos(angle)]]
        )
        frame = ContactFrame(rot)
        p = synthetic_model.params(ModeKind.WALL)
        a, _, q = state_space(synthetic_model, wall_mode(Wall.LEFT), frame=frame)
        assert np.allclose(a[2:, 2:], rot.T @ p.theta_mat @ rot, atol=1e-12)
        assert np.allclose(q[2:, 2:], rot.T @ p.sigma @ rot, atol=1e-12)

    def test_wall_sigma_invariant_across_walls(self, geom, sim_config):
        # all walls pool into one mode: the in-frame noise must not depend on
        # which wall produced the samples
        config = SimConfig()
        episodes = collect_dataset(geom, config, 80, 50, np.random.default_rng(4))
        frags = fragment_dataset(episodes)
        by_wall = {}
        for s in frags[ModeKind.WALL]:
            by_wall.setdefault(s.mode.wall, []).append(s)
        sigmas = {}
        for wall, samples in by_wall.items():
            if len(samples) >= 30:
                sigmas[wall] = fit_mode(samples).sigma
        assert len(sigmas) >= 2
        vals = list(sigmas.values())
        for v in vals[1:]:
            assert np.linalg.norm(v - vals[0]) / np.linalg.norm(vals[0]) < 0.6

    def test_mallet_requires_frame_and_velocity(self, synthetic_model):
        from puckshot.table import MALLET

        with pytest.raises(ValueError):
            state_space(synthetic_model, MALLET)

    def test_psd_process_noise(self, fitted_model):
        for mode in [FLOATING] + [wall_mode(w) for w in Wall]:
            _, _, q = state_space(fitted_model, mode)
            assert is_psd(q)


class TestModelSerialization:
    def test_json_round_trip(self, tmp_path, fitted_model):
        path = tmp_path / "model.json"
        save_model(fitted_model, path, meta={"config_hash": "abc"})
        back = load_model(path)
        assert back.dt == fitted_model.dt
        assert back.geometry == fitted_model.geometry
        for kind in ModeKind:
            a, b = fitted_model.params(kind), back.params(kind)
            assert np.allclose(a.theta_mat, b.theta_mat)
            assert np.allclose(a.theta_vec, b.theta_vec)
            assert np.allclose(a.sigma, b.sigma)
        p = back.params(ModeKind.MALLET)
        assert p.theta_mat_mallet is not None

    def test_dict_schema(self, fitted_model):
        data = model_to_dict(fitted_model)
        assert set(data) == {"dt", "geometry", "modes", "meta"}
        assert set(data["modes"]) == {"floating", "wall", "mallet"}
        assert "theta_mat_mallet" in data["modes"]["mallet"]
        assert "theta_mat_mallet" not in data["modes"]["floating"]
        assert data["meta"]["counts"]["floating"] > 0
        back = model_from_dict(data)
        assert back.dt == fitted_model.dt

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"dt": 0.02}')
        with pytest.raises(ArtifactMismatch):
            load_model(path)

    def test_compatibility_checks(self, fitted_model, geom):
        check_model_compatible(fitted_model, 0.02, geom)
        with pytest.raises(ArtifactMismatch):
            check_model_compatible(fitted_model, 0.01, geom)
        with pytest.raises(ArtifactMismatch):
            check_model_compatible(
                fitted_model, 0.02, dataclasses.replace(geom, goal_width=0.3)
            )
