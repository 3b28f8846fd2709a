"""Piecewise-linear Kalman filter over the learned contact modes.

The filter hard-switches the (A, b, Q) system by the mode detected from the
predicted mean (measurements carry no velocity, and mode depends on the
velocity direction). Covariance updates use the Joseph form so posteriors
stay PSD.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussians import GaussianBelief, symmetrize
from .model import PuckModel, state_space
from .table import FLOATING, MalletState, ModeId, ModeKind, PuckState, detect_mode, mallet_frame

# Conservative initial covariance: 1 cm position, 0.5 m/s velocity.
INIT_POS_STD = 1e-2
INIT_VEL_STD = 0.5


@dataclass
class MeasurementModel:
    """Position-only linear measurement with Gaussian noise."""

    obs_mat: np.ndarray = None
    noise_cov: np.ndarray = None

    def __post_init__(self):
        if self.obs_mat is None:
            self.obs_mat = np.hstack([np.eye(2), np.zeros((2, 2))])
        if self.noise_cov is None:
            self.noise_cov = (1e-3) ** 2 * np.eye(2)
        self.obs_mat = np.asarray(self.obs_mat, dtype=float)
        self.noise_cov = np.asarray(self.noise_cov, dtype=float)


@dataclass
class FilterState:
    belief: GaussianBelief
    last_mode: ModeId
    step: int


def predict(state: FilterState, model: PuckModel, mallet: MalletState) -> FilterState:
    """Propagate the belief through the mode detected at the current mean."""
    mean, cov = state.belief.mean, state.belief.cov
    puck = PuckState(mean[:2], mean[2:])
    mode = detect_mode(puck, mallet, model.geometry)
    frame = None
    if mode.kind is ModeKind.MALLET:
        frame = mallet_frame(puck.pos, mallet.pos)
    a_mat, b_vec, q_mat = state_space(model, mode, frame=frame, mallet_vel=mallet.vel)
    new_mean = a_mat @ mean + b_vec
    new_cov = symmetrize(a_mat @ cov @ a_mat.T + q_mat)
    return FilterState(GaussianBelief(new_mean, new_cov), mode, state.step + 1)


def update(
    state: FilterState,
    measurement: np.ndarray | None,
    meas_model: MeasurementModel | None = None,
) -> FilterState:
    """Joseph-form measurement update; a None/NaN measurement is skipped."""
    if measurement is None:
        return state
    z = np.asarray(measurement, dtype=float).reshape(-1)
    if not np.isfinite(z).all():
        return state
    mm = meas_model or MeasurementModel()
    h, r = mm.obs_mat, mm.noise_cov
    mean, cov = state.belief.mean, state.belief.cov
    innovation_cov = h @ cov @ h.T + r
    gain = np.linalg.solve(innovation_cov, h @ cov).T
    new_mean = mean + gain @ (z - h @ mean)
    i_kh = np.eye(mean.size) - gain @ h
    new_cov = symmetrize(i_kh @ cov @ i_kh.T + gain @ r @ gain.T)
    return FilterState(GaussianBelief(new_mean, new_cov), state.last_mode, state.step)


def initial_state(z0: np.ndarray, z1: np.ndarray, dt: float) -> FilterState:
    """Initialization from the first two measurements (finite-difference velocity)."""
    z0 = np.asarray(z0, dtype=float).reshape(2)
    z1 = np.asarray(z1, dtype=float).reshape(2)
    mean = np.concatenate([z0, (z1 - z0) / dt])
    cov = np.diag([INIT_POS_STD**2, INIT_POS_STD**2, INIT_VEL_STD**2, INIT_VEL_STD**2])
    return FilterState(GaussianBelief(mean, cov), FLOATING, 0)


def run_filter(
    measurements: np.ndarray,
    mallet_track: list[MalletState],
    model: PuckModel,
    meas_model: MeasurementModel | None = None,
) -> list[FilterState]:
    """Filter an aligned measurement/mallet time series.

    Returns one FilterState per measurement; index 0 holds the two-point
    initialization. NaN measurement rows skip the update (prediction only).
    """
    z = np.asarray(measurements, dtype=float).reshape(-1, 2)
    if len(z) < 2:
        raise ValueError("need at least two measurements to initialize")
    if len(mallet_track) != len(z):
        raise ValueError("mallet track and measurements must be aligned")
    states = [initial_state(z[0], z[1], model.dt)]
    for k in range(1, len(z)):
        prior = predict(states[-1], model, mallet_track[k - 1])
        zk = z[k] if np.isfinite(z[k]).all() else None
        states.append(update(prior, zk, meas_model))
    return states
