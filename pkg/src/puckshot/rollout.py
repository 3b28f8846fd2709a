"""Stochastic rollout of the learned model and goal-probability evaluation.

The mean/covariance recursion runs in a compiled kernel so a full
500-step rollout stays well under 0.1 ms; candidate shots can then be
scored by brute-force sampling at interactive rates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .gaussians import GaussianBelief, chol_or_eigh
from .model import PuckModel, state_space
from .table import (
    APPROACH_EPS,
    FLOATING,
    MALLET,
    MalletState,
    ModeId,
    ModeKind,
    PuckState,
    TableGeometry,
    Wall,
    mallet_frame,
    wall_mode,
)

MAX_ROLLOUT_STEPS = 500

_CODE_TO_MODE = [
    FLOATING,
    wall_mode(Wall.LEFT),
    wall_mode(Wall.RIGHT),
    wall_mode(Wall.TOP),
    wall_mode(Wall.BOTTOM),
    MALLET,
]


@dataclass
class BeliefTrajectory:
    """Gaussian belief sequence from one rollout.

    means/covs hold the belief at every step; mode_codes[k] is the mode
    applied to the transition out of step k. k_goal is the last step index
    before the mean crossed the goal line (None if it never crossed), and
    crossing_frac locates the crossing within that transition.
    """

    means: np.ndarray        # (n, 4)
    covs: np.ndarray         # (n, 4, 4)
    mode_codes: np.ndarray   # (n,)
    k_goal: int | None
    bank_count: int
    crossing_frac: float = 0.0

    def __len__(self) -> int:
        return len(self.means)

    @property
    def beliefs(self) -> list[GaussianBelief]:
        return [GaussianBelief(m, c) for m, c in zip(self.means, self.covs)]

    @property
    def modes(self) -> list[ModeId]:
        return [_CODE_TO_MODE[c] for c in self.mode_codes]


@dataclass
class ShotEvaluation:
    """Scored outcome of one candidate shot under the learned model."""

    g_hat: float
    v_puck: float
    bank_count: int
    feasible: bool


def apply_mallet_collision(
    s_pre: PuckState, mallet: MalletState, model: PuckModel
) -> GaussianBelief:
    """Belief over the post-collision state from the learned mallet mode.

    The mean velocity comes from the fitted collision map in the contact
    frame; the position is unchanged (the collision is instantaneous) and
    the covariance is exactly the rotated mode noise in the velocity block.
    """
    frame = mallet_frame(s_pre.pos, mallet.pos)
    p = model.params(ModeKind.MALLET)
    rot = frame.rotation
    v_frame = p.theta_mat @ (rot @ s_pre.vel) + p.theta_mat_mallet @ (rot @ mallet.vel) + p.theta_vec
    mean = np.concatenate([s_pre.pos, rot.T @ v_frame])
    cov = np.zeros((4, 4))
    cov[2:, 2:] = rot.T @ p.sigma @ rot
    return GaussianBelief(mean, cov)


def _rollout_tables(model: PuckModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World-frame velocity maps for codes 0..4, cached per model instance."""
    cached = getattr(model, "_rollout_tables", None)
    if cached is not None:
        return cached
    thetas = np.zeros((5, 2, 2))
    offsets = np.zeros((5, 2))
    sigmas = np.zeros((5, 2, 2))
    for code, mode in enumerate(_CODE_TO_MODE[:5]):
        a_mat, b_vec, q_mat = state_space(model, mode)
        thetas[code] = a_mat[2:, 2:]
        offsets[code] = b_vec[2:]
        sigmas[code] = q_mat[2:, 2:]
    tables = (thetas, offsets, sigmas)
    model._rollout_tables = tables
    return tables


@njit(cache=True)
def _rollout_kernel(
    m0, p0, thetas, offsets, sigmas, dt,
    length, half_width, goal_hw, puck_r, goal_line_x, half_length,
    max_steps, means, covs, codes,
):  # pragma: no cover - exercised through stochastic_rollout
    means[0] = m0
    covs[0] = p0
    k_goal = -1
    bank_count = 0
    frac = 0.0
    n = 1
    if m0[0] >= goal_line_x:
        k_goal = 0
        return n, k_goal, bank_count, frac
    for k in range(max_steps):
        x = means[k, 0]
        y = means[k, 1]
        vx = means[k, 2]
        vy = means[k, 3]
        code = 0
        if y >= half_width - puck_r and vy > APPROACH_EPS:
            code = 1
        elif y <= -half_width + puck_r and vy < -APPROACH_EPS:
            code = 2
        elif x >= length - puck_r and vx > APPROACH_EPS and (y > goal_hw or y < -goal_hw):
            code = 3
        elif x <= puck_r and vx < -APPROACH_EPS:
            code = 4
        codes[k] = code
        th = thetas[code]
        off = offsets[code]
        sg = sigmas[code]
        nx = x + dt * vx
        ny = y + dt * vy
        nvx = th[0, 0] * vx + th[0, 1] * vy + off[0]
        nvy = th[1, 0] * vx + th[1, 1] * vy + off[1]
        means[k + 1, 0] = nx
        means[k + 1, 1] = ny
        means[k + 1, 2] = nvx
        means[k + 1, 3] = nvy
        p = covs[k]
        pn = covs[k + 1]
        pxx00 = p[0, 0]; pxx01 = p[0, 1]; pxx11 = p[1, 1]
        pxv00 = p[0, 2]; pxv01 = p[0, 3]; pxv10 = p[1, 2]; pxv11 = p[1, 3]
        pvv00 = p[2, 2]; pvv01 = p[2, 3]; pvv11 = p[3, 3]
        # position block: Pxx + dt*(Pxv + Pvx) + dt^2*Pvv
        pn[0, 0] = pxx00 + dt * (pxv00 + pxv00) + dt * dt * pvv00
        pn[0, 1] = pxx01 + dt * (pxv01 + pxv10) + dt * dt * pvv01
        pn[1, 1] = pxx11 + dt * (pxv11 + pxv11) + dt * dt * pvv11
        pn[1, 0] = pn[0, 1]
        # cross block: (Pxv + dt*Pvv) @ Theta^T
        b00 = pxv00 + dt * pvv00
        b01 = pxv01 + dt * pvv01
        b10 = pxv10 + dt * pvv01
        b11 = pxv11 + dt * pvv11
        pn[0, 2] = b00 * th[0, 0] + b01 * th[0, 1]
        pn[0, 3] = b00 * th[1, 0] + b01 * th[1, 1]
        pn[1, 2] = b10 * th[0, 0] + b11 * th[0, 1]
        pn[1, 3] = b10 * th[1, 0] + b11 * th[1, 1]
        pn[2, 0] = pn[0, 2]; pn[3, 0] = pn[0, 3]; pn[2, 1] = pn[1, 2]; pn[3, 1] = pn[1, 3]
        # velocity block: Theta @ Pvv @ Theta^T + Sigma
        c00 = th[0, 0] * pvv00 + th[0, 1] * pvv01
        c01 = th[0, 0] * pvv01 + th[0, 1] * pvv11
        c10 = th[1, 0] * pvv00 + th[1, 1] * pvv01
        c11 = th[1, 0] * pvv01 + th[1, 1] * pvv11
        pn[2, 2] = c00 * th[0, 0] + c01 * th[0, 1] + sg[0, 0]
        pn[2, 3] = c00 * th[1, 0] + c01 * th[1, 1] + sg[0, 1]
        pn[3, 3] = c10 * th[1, 0] + c11 * th[1, 1] + sg[1, 1]
        pn[3, 2] = pn[2, 3]
        n = k + 2
        if code != 0:
            bank_count += 1
        if nx >= goal_line_x:
            k_goal = k
            if nx > x:
                frac = (goal_line_x - x) / (nx - x)
            else:
                frac = 1.0
            break
        if nx < half_length and nvx < 0.0:
            break
    return n, k_goal, bank_count, frac


def stochastic_rollout(
    s0_plus: GaussianBelief,
    model: PuckModel,
    max_steps: int = MAX_ROLLOUT_STEPS,
) -> BeliefTrajectory:
    """Propagate mean and covariance through the switched-linear dynamics.

    The mode is detected on the mean at every step (no mallet is present
    after the initiating contact). Terminates at goal-line crossing of the
    mean, return into the robot's half, or max_steps.
    """
    geom = model.geometry
    thetas, offsets, sigmas = _rollout_tables(model)
    means = np.empty((max_steps + 1, 4))
    covs = np.empty((max_steps + 1, 4, 4))
    codes = np.zeros(max_steps + 1, dtype=np.int64)
    n, k_goal, bank_count, frac = _rollout_kernel(
        np.ascontiguousarray(s0_plus.mean),
        np.ascontiguousarray(s0_plus.cov),
        thetas, offsets, sigmas, model.dt,
        geom.length, geom.half_width, geom.goal_halfwidth,
        geom.puck_radius, geom.goal_line_x, geom.half_length,
        max_steps, means, covs, codes,
    )
    return BeliefTrajectory(
        means=means[:n],
        covs=covs[:n],
        mode_codes=codes[:n],
        k_goal=k_goal if k_goal >= 0 else None,
        bank_count=int(bank_count),
        crossing_frac=float(frac),
    )


def goal_probability(
    traj: BeliefTrajectory,
    geom: TableGeometry,
    n_samples: int,
    rng: np.random.Generator,
) -> float:
    """Monte-Carlo estimate of the probability of crossing inside the goal.

    Samples puck positions from the position marginal of the belief at
    k_goal and counts the fraction inside the goal interval.
    """
    if traj.k_goal is None:
        return 0.0
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    mean = traj.means[traj.k_goal, :2]
    cov = traj.covs[traj.k_goal, :2, :2]
    factor = chol_or_eigh(cov)
    ys = mean[1] + rng.standard_normal((n_samples, 2)) @ factor.T[:, 1]
    return float(np.mean(np.abs(ys) <= geom.goal_halfwidth))


def puck_speed_at_goal(traj: BeliefTrajectory) -> float:
    """Norm of the mean puck velocity at k_goal; 0 if the mean never crossed."""
    if traj.k_goal is None:
        return 0.0
    return float(np.linalg.norm(traj.means[traj.k_goal, 2:]))
