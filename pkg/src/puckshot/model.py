"""Learned mixture of linear-Gaussian contact modes for the puck.

Each mode maps the current (contact-frame) velocity to a Gaussian over the
next velocity; positions always advance by explicit Euler with constant
gains, so the state-space form has deterministic position rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArtifactMismatch, EmptyMode
from .gaussians import GaussianBelief, condition, fit_joint_gaussian
from .sim import Episode
from .table import (
    ContactFrame,
    ModeId,
    ModeKind,
    TableGeometry,
    mallet_frame,
    wall_frame,
)


@dataclass
class ModeParams:
    """Fitted parameters of one linear-Gaussian contact mode.

    For wall and mallet modes the parameters act on contact-frame
    velocities; the mallet mode additionally carries the gain on the
    mallet velocity.
    """

    theta_mat: np.ndarray
    theta_vec: np.ndarray
    sigma: np.ndarray
    theta_mat_mallet: np.ndarray | None = None
    count: int = 0

    def __post_init__(self):
        self.theta_mat = np.asarray(self.theta_mat, dtype=float).reshape(2, 2)
        self.theta_vec = np.asarray(self.theta_vec, dtype=float).reshape(2)
        self.sigma = np.asarray(self.sigma, dtype=float).reshape(2, 2)
        if self.theta_mat_mallet is not None:
            self.theta_mat_mallet = np.asarray(self.theta_mat_mallet, dtype=float).reshape(2, 2)


@dataclass
class ModeSample:
    """One fragmented velocity transition (contact-frame for wall/mallet modes)."""

    y: np.ndarray
    xi: np.ndarray
    mode: ModeId


@dataclass
class PuckModel:
    """All three fitted modes plus the integration constants of the state space."""

    dt: float
    modes: dict[ModeKind, ModeParams]
    geometry: TableGeometry = field(default_factory=TableGeometry)

    def params(self, kind: ModeKind) -> ModeParams:
        if kind not in self.modes:
            raise EmptyMode(f"mode '{kind.value}' was not fitted")
        return self.modes[kind]

    def has(self, kind: ModeKind) -> bool:
        return kind in self.modes


def fragment_dataset(episodes: list[Episode]) -> dict[ModeKind, list[ModeSample]]:
    """Split logged trajectories into per-mode velocity-transition samples.

    Floating samples stay in the world frame; wall and mallet samples are
    rotated into the contact frame of the labelled contact. Mallet samples
    stack the pre-collision puck velocity and the mallet velocity as the
    4-D condition.
    """
    out: dict[ModeKind, list[ModeSample]] = {k: [] for k in ModeKind}
    for ep in episodes:
        for k in range(len(ep) - 1):
            mode = ep.modes[k]
            v0 = ep.puck[k, 2:4]
            v1 = ep.puck[k + 1, 2:4]
            if mode.kind is ModeKind.FLOATING:
                out[ModeKind.FLOATING].append(ModeSample(v1.copy(), v0.copy(), mode))
            elif mode.kind is ModeKind.WALL:
                rot = wall_frame(mode.wall).rotation
                out[ModeKind.WALL].append(ModeSample(rot @ v1, rot @ v0, mode))
            else:
                rot = mallet_frame(ep.puck[k, 0:2], ep.mallet[k, 0:2]).rotation
                xi = np.concatenate([rot @ v0, rot @ ep.mallet[k, 2:4]])
                out[ModeKind.MALLET].append(ModeSample(rot @ v1, xi, mode))
    return out


def fit_mode(samples: list[ModeSample]) -> ModeParams:
    """Joint-Gaussian fit plus conditioning for one mode's sample set.

    For the mallet mode the 4-D condition splits column-wise into the puck
    and mallet velocity gains.
    """
    if not samples:
        raise EmptyMode("no samples for mode")
    joint = fit_joint_gaussian((s.y, s.xi) for s in samples)
    lgm = condition(joint)
    if joint.dim_xi == 4:
        return ModeParams(
            theta_mat=lgm.gain[:, :2],
            theta_mat_mallet=lgm.gain[:, 2:],
            theta_vec=lgm.offset,
            sigma=lgm.noise_cov,
            count=len(samples),
        )
    return ModeParams(
        theta_mat=lgm.gain, theta_vec=lgm.offset, sigma=lgm.noise_cov, count=len(samples)
    )


def fit_model(
    episodes: list[Episode],
    dt: float,
    geometry: TableGeometry,
) -> tuple[PuckModel, list[ModeKind]]:
    """Fragment and fit all modes; returns the model and any skipped (empty) modes."""
    by_mode = fragment_dataset(episodes)
    modes: dict[ModeKind, ModeParams] = {}
    skipped: list[ModeKind] = []
    for kind, samples in by_mode.items():
        if samples:
            modes[kind] = fit_mode(samples)
        else:
            skipped.append(kind)
    return PuckModel(dt=dt, modes=modes, geometry=geometry), skipped


def predict_velocity(
    model: PuckModel,
    mode: ModeKind,
    puck_vel: np.ndarray,
    mallet_vel: np.ndarray | None = None,
) -> GaussianBelief:
    """One-step Gaussian prediction of the next velocity, in the mode's own frame.

    Inputs for wall and mallet modes must already be contact-frame
    velocities; callers apply the frame transforms.
    """
    p = model.params(mode)
    puck_vel = np.asarray(puck_vel, dtype=float).reshape(2)
    mean = p.theta_mat @ puck_vel + p.theta_vec
    if mode is ModeKind.MALLET:
        if mallet_vel is None:
            raise ValueError("mallet mode prediction requires the mallet velocity")
        mean = mean + p.theta_mat_mallet @ np.asarray(mallet_vel, dtype=float).reshape(2)
    elif mallet_vel is not None:
        raise ValueError(f"mode '{mode.value}' takes no mallet velocity")
    return GaussianBelief(mean, p.sigma.copy())


def state_space(
    model: PuckModel,
    mode: ModeId,
    frame: ContactFrame | None = None,
    mallet_vel: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World-frame switched-linear dynamics (A, b, Q) for the 4-D puck state.

    Position rows are the constant explicit-Euler blocks [I, dt*I]; the
    fitted velocity map fills the lower-right block. Wall and mallet modes
    are conjugated by the contact-frame rotation so the result acts on
    world-frame states; the mallet's contribution enters the offset.
    """
    p = model.params(mode.kind)
    if mode.kind is ModeKind.FLOATING:
        theta_w, offset_w, sigma_w = p.theta_mat, p.theta_vec, p.sigma
    else:
        if frame is None:
            if mode.kind is ModeKind.WALL:
                frame = wall_frame(mode.wall)
            else:
                raise ValueError("mallet mode requires an explicit contact frame")
        rot = frame.rotation
        theta_w = rot.T @ p.theta_mat @ rot
        sigma_w = rot.T @ p.sigma @ rot
        if mode.kind is ModeKind.MALLET:
            if mallet_vel is None:
                raise ValueError("mallet mode requires the mallet velocity")
            vm = rot @ np.asarray(mallet_vel, dtype=float).reshape(2)
            offset_w = rot.T @ (p.theta_mat_mallet @ vm + p.theta_vec)
        else:
            offset_w = rot.T @ p.theta_vec
    a_mat = np.zeros((4, 4))
    a_mat[0, 0] = a_mat[1, 1] = 1.0
    a_mat[0, 2] = a_mat[1, 3] = model.dt
    a_mat[2:, 2:] = theta_w
    b_vec = np.zeros(4)
    b_vec[2:] = offset_w
    q_mat = np.zeros((4, 4))
    q_mat[2:, 2:] = sigma_w
    return a_mat, b_vec, q_mat


_MODE_JSON_KEYS = {
    ModeKind.FLOATING: "floating",
    ModeKind.WALL: "wall",
    ModeKind.MALLET: "mallet",
}


def model_to_dict(model: PuckModel, meta: dict | None = None) -> dict:
    modes = {}
    for kind, p in model.modes.items():
        entry = {
            "theta_mat": p.theta_mat.tolist(),
            "theta_vec": p.theta_vec.tolist(),
            "sigma": p.sigma.tolist(),
        }
        if p.theta_mat_mallet is not None:
            entry["theta_mat_mallet"] = p.theta_mat_mallet.tolist()
        modes[_MODE_JSON_KEYS[kind]] = entry
    g = model.geometry
    return {
        "dt": model.dt,
        "geometry": {
            "length": g.length,
            "width": g.width,
            "goal_width": g.goal_width,
            "puck_radius": g.puck_radius,
            "mallet_radius": g.mallet_radius,
            "goal_line_x": g.goal_line_x,
        },
        "modes": modes,
        "meta": dict(meta or {}, counts={_MODE_JSON_KEYS[k]: p.count for k, p in model.modes.items()}),
    }


def model_from_dict(data: dict) -> PuckModel:
    counts = data.get("meta", {}).get("counts", {})
    modes = {}
    for kind, key in _MODE_JSON_KEYS.items():
        if key not in data["modes"]:
            continue
        entry = data["modes"][key]
        modes[kind] = ModeParams(
            theta_mat=np.asarray(entry["theta_mat"]),
            theta_vec=np.asarray(entry["theta_vec"]),
            sigma=np.asarray(entry["sigma"]),
            theta_mat_mallet=(
                np.asarray(entry["theta_mat_mallet"]) if "theta_mat_mallet" in entry else None
            ),
            count=int(counts.get(key, 0)),
        )
    return PuckModel(
        dt=float(data["dt"]),
        modes=modes,
        geometry=TableGeometry(**data["geometry"]),
    )


def save_model(model: PuckModel, path: str | Path, meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, meta), indent=2, sort_keys=True))


def load_model(path: str | Path) -> PuckModel:
    try:
        data = json.loads(Path(path).read_text())
        return model_from_dict(data)
    except (KeyError, ValueError, TypeError) as exc:
        raise ArtifactMismatch(f"malformed model file {path}: {exc}") from exc


def check_model_compatible(model: PuckModel, dt: float, geometry: TableGeometry) -> None:
    """Refuse to combine a model with a mismatched time step or table."""
    if abs(model.dt - dt) > 1e-12:
        raise ArtifactMismatch(f"model dt {model.dt} != configured dt {dt}")
    if model.geometry != geometry:
        raise ArtifactMismatch("model table geometry differs from configured geometry")
