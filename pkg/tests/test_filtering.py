import numpy as np
import pytest

from puckshot.filtering import (
    FilterState,
    MeasurementModel,
    initial_state,
    predict,
    run_filter,
    update,
)
from puckshot.gaussians import GaussianBelief
from puckshot.model import state_space
from puckshot.table import FLOATING, MalletState, ModeKind, PuckState, detect_mode

FAR_MALLET = MalletState((-10.0, -10.0), (0.0, 0.0))


def textbook_kf(z, a_mat, b_vec, q_mat, h, r, mean0, cov0):
    """Straightforward reference filter with explicit inverses."""
    means, covs = [mean0.copy()], [cov0.copy()]
    mean, cov = mean0.copy(), cov0.copy()
    for k in range(1, len(z)):
        mean = a_mat @ mean + b_vec
        cov = a_mat @ cov @ a_mat.T + q_mat
        s = h @ cov @ h.T + r
        gain = cov @ h.T @ np.linalg.inv(s)
        mean = mean + gain @ (z[k] - h @ mean)
        cov = (np.eye(4) - gain @ h) @ cov
        means.append(mean.copy())
        covs.append(cov.copy())
    return np.array(means), np.array(covs)


def floating_measurements(model, rng, n=60, meas_std=1e-3, start=(0.3, -0.2), vel=(0.8, 0.25)):
    """Noisy position measurements of a synthetic floating trajectory.

    The defaults keep the trajectory away from every wall so the filter
    never leaves the floating mode.
    """
    a_mat, b_vec, q_mat = state_space(model, FLOATING)
    s = np.array([*start, *vel])
    truth = [s.copy()]
    for _ in range(n - 1):
        noise = np.zeros(4)
        noise[2:] = np.sqrt(np.diag(q_mat)[2:]) * rng.standard_normal(2)
        s = a_mat @ s + b_vec + noise
        truth.append(s.copy())
    truth = np.array(truth)
    z = truth[:, :2] + meas_std * rng.standard_normal((n, 2))
    return truth, z


class TestUpdate:
    def test_scalar_hand_case(self):
        # prior N(0, 1) on x, measurement 1 with R = 1 -> posterior N(0.5, 0.5)
        cov = np.diag([1.0, 1e-12, 1e-12, 1e-12])
        state = FilterState(GaussianBelief(np.zeros(4), cov), FLOATING, 0)
        mm = MeasurementModel(obs_mat=np.array([[1.0, 0.0, 0.0, 0.0]]), noise_cov=np.eye(1))
        post = update(state, np.array([1.0]), mm)
        assert post.belief.mean[0] == pytest.approx(0.5, abs=1e-9)
        assert post.belief.cov[0, 0] == pytest.approx(0.5, abs=1e-9)

    def test_tiny_noise_limit_snaps_to_measurement(self):
        state = FilterState(GaussianBelief(np.array([0.5, 0.5, 1.0, 0.0]), np.eye(4)), FLOATING, 0)
        mm = MeasurementModel(noise_cov=1e-18 * np.eye(2))
        post = update(state, np.array([0.8, 0.2]), mm)
        assert np.allclose(post.belief.mean[:2], [0.8, 0.2], atol=1e-8)

    def test_skipped_update_keeps_prior(self):
        state = FilterState(GaussianBelief(np.zeros(4), np.eye(4)), FLOATING, 3)
        assert update(state, None) is state
        nan_post = update(state, np.array([np.nan, 0.0]))
        assert nan_post is state

    def test_joseph_form_keeps_psd(self):
        rng = np.random.default_rng(0)
        state = FilterState(GaussianBelief(np.zeros(4), np.diag([1e-8, 1e-8, 4.0, 4.0])), FLOATING, 0)
        for _ in range(50):
            z = rng.standard_normal(2)
            state = update(state, z)
            vals = np.linalg.eigvalsh(state.belief.cov)
            assert vals.min() >= -1e-10


class TestPredict:
    def test_exact_linear_tracking_with_zero_noise(self, geom, synthetic_model):
        import copy

        model = copy.deepcopy(synthetic_model)
        for p in model.modes.values():
            p.sigma = np.zeros((2, 2))
        a_mat, b_vec, _ = state_space(model, FLOATING)
        truth = np.array([0.5, 0.0, 1.0, 0.2])
        state = FilterState(GaussianBelief(truth.copy(), np.zeros((4, 4))), FLOATING, 0)
        for _ in range(20):
            truth = a_mat @ truth + b_vec
            state = predict(state, model, FAR_MALLET)
            assert np.allclose(state.belief.mean, truth, atol=1e-12)

    def test_covariance_grows_under_process_noise(self, synthetic_model):
        state = FilterState(
            GaussianBelief(np.array([0.5, 0.0, 0.5, 0.0]), 1e-6 * np.eye(4)), FLOATING, 0
        )
        prev_trace = np.trace(state.belief.cov)
        for _ in range(10):
            state = predict(state, synthetic_model, FAR_MALLET)
            trace = np.trace(state.belief.cov)
            assert trace > prev_trace
            prev_trace = trace

    def test_mode_switch_matches_detect_mode(self, geom, synthetic_model):
        # drive the mean into the left wall and check the filter switches mode
        state = FilterState(
            GaussianBelief(
                np.array([0.5, geom.half_width - geom.puck_radius / 2, 0.0, 1.0]),
                1e-8 * np.eye(4),
            ),
            FLOATING,
            0,
        )
        expected = detect_mode(
            PuckState(state.belief.mean[:2], state.belief.mean[2:]), FAR_MALLET, geom
        )
        new = predict(state, synthetic_model, FAR_MALLET)
        assert new.last_mode == expected
        assert new.last_mode.kind is ModeKind.WALL


class TestRunFilter:
    def test_matches_textbook_filter_on_floating_data(self, synthetic_model):
        rng = np.random.default_rng(1)
        _, z = floating_measurements(synthetic_model, rng)
        mm = MeasurementModel()
        states = run_filter(z, [FAR_MALLET] * len(z), synthetic_model, mm)
        a_mat, b_vec, q_mat = state_space(synthetic_model, FLOATING)
        init = initial_state(z[0], z[1], synthetic_model.dt)
        means, covs = textbook_kf(
            z, a_mat, b_vec, q_mat, mm.obs_mat, mm.noise_cov,
            init.belief.mean, init.belief.cov,
        )
        ours = np.array([s.belief.mean for s in states])
        our_covs = np.array([s.belief.cov for s in states])
        assert np.abs(ours - means).max() < 1e-10
        assert np.abs(our_covs - covs).max() < 1e-10

    def test_velocity_converges_on_noise_free_linear_motion(self, synthetic_model):
        import copy

        model = copy.deepcopy(synthetic_model)
        model.modes[ModeKind.FLOATING].theta_mat = np.eye(2)
        model.modes[ModeKind.FLOATING].sigma = np.zeros((2, 2))
        n = 30
        vel = np.array([0.7, -0.4])
        pos = np.array([0.3, 0.2]) + np.arange(n)[:, None] * model.dt * vel
        states = run_filter(pos, [FAR_MALLET] * n, model, MeasurementModel())
        err = np.linalg.norm(states[10].belief.mean[2:] - vel)
        assert err < 1e-6
        assert np.linalg.norm(states[-1].belief.mean[2:] - vel) < 1e-9

    def test_beats_raw_measurements(self, synthetic_model):
        wins = 0
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            truth, z = floating_measurements(synthetic_model, rng)
            states = run_filter(z, [FAR_MALLET] * len(z), synthetic_model)
            est = np.array([s.belief.mean[:2] for s in states])
            rmse_filter = np.sqrt(np.mean((est[5:] - truth[5:, :2]) ** 2))
            rmse_meas = np.sqrt(np.mean((z[5:] - truth[5:, :2]) ** 2))
            wins += rmse_filter < rmse_meas
        assert wins >= 18

    def test_all_covariances_psd(self, fitted_model):
        rng = np.random.default_rng(2)
        _, z = floating_measurements(fitted_model, rng)
        states = run_filter(z, [FAR_MALLET] * len(z), fitted_model)
        for s in states:
            vals = np.linalg.eigvalsh(s.belief.cov)
            assert vals.min() >= -1e-10

    def test_deterministic(self, synthetic_model):
        rng = np.random.default_rng(3)
        _, z = floating_measurements(synthetic_model, rng)
        a = run_filter(z, [FAR_MALLET] * len(z), synthetic_model)
        b = run_filter(z, [FAR_MALLET] * len(z), synthetic_model)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.belief.mean, sb.belief.mean)
            assert np.array_equal(sa.belief.cov, sb.belief.cov)

    def test_filter_through_mallet_collision(self, geom, fitted_model, sim_config):
        # filter a collected chase episode containing a mallet contact
        from puckshot.sim import collect_dataset

        episodes = collect_dataset(geom, sim_config, 10, 50, np.random.default_rng(8))
        ep = next(
            e for e in episodes if any(m.kind is ModeKind.MALLET for m in e.modes)
        )
        rng = np.random.default_rng(9)
        z = ep.puck[:, :2] + 1e-3 * rng.standard_normal((len(ep), 2))
        mallets = [MalletState(row[:2], row[2:]) for row in ep.mallet]
        states = run_filter(z, mallets, fitted_model)
        assert len(states) == len(ep)
        assert all(np.isfinite(s.belief.mean).all() for s in states)
        err = np.linalg.norm(states[-1].belief.mean[:2] - ep.puck[-1, :2])
        assert err < 0.05

    def test_input_validation(self, synthetic_model):
        with pytest.raises(ValueError):
            run_filter(np.zeros((1, 2)), [FAR_MALLET], synthetic_model)
        with pytest.raises(ValueError):
            run_filter(np.zeros((5, 2)), [FAR_MALLET] * 4, synthetic_model)
