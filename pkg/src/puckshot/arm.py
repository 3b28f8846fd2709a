"""Shooting-angle action parametrization over a planar arm.

A shooting angle u maps to a unique mallet contact state: the mallet sits
on the contact circle opposite the shooting direction and moves along it at
the highest speed the joint velocity limits allow. That speed is the exact
solution of a tiny linear program solved by active-set vertex enumeration.

The planning pipeline is written batch-first (`plan_batch`) because the
brute-force planner scores 100 candidate angles per scenario; the scalar
entry points wrap the batched core.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from .errors import OutOfTable, Unreachable
from .table import PuckState, TableGeometry

DEFAULT_ANGLE_LIMIT = 1.2   # rad, halfwidth of the admissible shooting-angle set
IK_GRID = 16                # samples of the 3-link redundancy parameter

_FEAS_TOL = 1e-9


@dataclass(frozen=True)
class PlanarArm:
    """Planar revolute arm with per-joint velocity limits (box constraints)."""

    link_lengths: tuple = (0.55, 0.55, 0.30)
    base_pos: tuple = (-0.4, 0.0)
    joint_vel_limits: tuple = (
        math.radians(85.0),
        math.radians(85.0),
        math.radians(100.0),
    )

    def __post_init__(self):
        if len(self.link_lengths) != len(self.joint_vel_limits):
            raise ValueError("one velocity limit per link required")
        if any(l <= 0 for l in self.link_lengths) or any(l <= 0 for l in self.joint_vel_limits):
            raise ValueError("link lengths and velocity limits must be positive")

    @property
    def n_joints(self) -> int:
        return len(self.link_lengths)

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths))


@dataclass
class ShotPlan:
    """Contact-time mallet state realizing a shooting angle."""

    u: float
    v_star: float
    mallet_pos: np.ndarray
    mallet_vel: np.ndarray
    q0: np.ndarray
    qdot0: np.ndarray
    g_hat: float | None = None
    v_puck: float | None = None


def joint_positions(arm: PlanarArm, q: np.ndarray) -> np.ndarray:
    """Positions of the base, each joint, and the end point: (n+1, 2)."""
    q = np.asarray(q, dtype=float).reshape(arm.n_joints)
    angles = np.cumsum(q)
    steps = np.asarray(arm.link_lengths)[:, None] * np.stack(
        [np.cos(angles), np.sin(angles)], axis=1
    )
    pts = np.vstack([np.asarray(arm.base_pos)[None, :], steps])
    return np.cumsum(pts, axis=0)


def forward_kin(arm: PlanarArm, q: np.ndarray) -> np.ndarray:
    return joint_positions(arm, q)[-1]


def jacobian(arm: PlanarArm, q: np.ndarray) -> np.ndarray:
    """Planar geometric Jacobian of the end point, shape (2, n)."""
    pts = joint_positions(arm, q)
    rel = pts[-1] - pts[:-1]            # end point minus each joint pivot
    return np.stack([-rel[:, 1], rel[:, 0]])


def _jacobian_batch(arm: PlanarArm, qs: np.ndarray) -> np.ndarray:
    """Jacobians for a batch of configurations, shape (m, 2, n)."""
    qs = np.asarray(qs, dtype=float)
    angles = np.cumsum(qs, axis=1)
    lengths = np.asarray(arm.link_lengths)
    steps = lengths[None, :, None] * np.stack([np.cos(angles), np.sin(angles)], axis=2)
    pts = np.concatenate(
        [np.broadcast_to(np.asarray(arm.base_pos), (len(qs), 1, 2)), steps], axis=1
    )
    pts = np.cumsum(pts, axis=1)
    rel = pts[:, -1:, :] - pts[:, :-1, :]
    return np.stack([-rel[:, :, 1], rel[:, :, 0]], axis=1)


@lru_cache(maxsize=8)
def _vertex_combos(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Active-set patterns for the max-speed LP with n joints.

    Vertices of the (qdot, v) polytope pin n-1 joints at signed bounds and
    leave one joint plus v free; the patterns with all joints pinned cover
    the degenerate case where the free column is parallel to the shooting
    direction.
    """
    free_idx, bound_masks = [], []
    for free in range(n):
        others = [j for j in range(n) if j != free]
        for signs in product((-1.0, 1.0), repeat=n - 1):
            mask = np.zeros(n)
            for j, s in zip(others, signs):
                mask[j] = s
            free_idx.append(free)
            bound_masks.append(mask)
    all_bound = [np.array(signs) for signs in product((-1.0, 1.0), repeat=n)]
    return np.asarray(free_idx), np.asarray(bound_masks), np.asarray(all_bound)


def _max_speed_batch(
    jacs: np.ndarray, limits: np.ndarray, e_u: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Solve the max-speed LP for a batch of Jacobians (m, 2, n).

    e_u is one unit direction (2,) or one per row (m, 2). Returns
    (v (m,), qdot (m, n)); infeasible rows get v = 0, qdot = 0.
    """
    m, _, n = jacs.shape
    free_idx, bound_masks, all_bound = _vertex_combos(n)
    e = np.broadcast_to(np.asarray(e_u, dtype=float), (m, 2))
    ex, ey = e[:, :1], e[:, 1:]
    scale = float(np.abs(jacs).max()) + 1.0

    # Partially-bounded vertices: solve the 2x2 system for (qdot_free, v).
    w = bound_masks * limits[None, :]                      # (c, n)
    rhs = -np.einsum("min,cn->mci", jacs, w)               # (m, c, 2)
    jf = jacs[:, :, free_idx]                              # (m, 2, c)
    det = ex * jf[:, 1, :] - ey * jf[:, 0, :]              # (m, c)
    safe = np.abs(det) > _FEAS_TOL * scale
    det_safe = np.where(safe, det, 1.0)
    qf = (ex * rhs[:, :, 1] - ey * rhs[:, :, 0]) / det_safe
    v1 = (jf[:, 0, :] * rhs[:, :, 1] - jf[:, 1, :] * rhs[:, :, 0]) / det_safe
    feas1 = safe & (np.abs(qf) <= limits[free_idx][None, :] + _FEAS_TOL) & (v1 > 0.0)
    qdot1 = np.broadcast_to(w, (m,) + w.shape).copy()      # (m, c, n)
    mi = np.arange(m)[:, None]
    ci = np.arange(len(free_idx))[None, :]
    qdot1[mi, ci, free_idx[None, :]] = qf

    # Fully-bounded vertices: valid when J @ qdot is parallel to e_u.
    w2 = all_bound * limits[None, :]                       # (c2, n)
    jq = np.einsum("min,cn->mci", jacs, w2)                # (m, c2, 2)
    v2 = jq[:, :, 0] * ex + jq[:, :, 1] * ey
    resid = jq - v2[:, :, None] * e[:, None, :]
    feas2 = (np.linalg.norm(resid, axis=2) <= _FEAS_TOL * scale) & (v2 > 0.0)
    qdot2 = np.broadcast_to(w2, (m,) + w2.shape)

    vs = np.concatenate([np.where(feas1, v1, 0.0), np.where(feas2, v2, 0.0)], axis=1)
    best = np.argmax(vs, axis=1)
    v_star = vs[np.arange(m), best]
    qdot = np.concatenate([qdot1, qdot2], axis=1)[np.arange(m), best]
    qdot = np.where(v_star[:, None] > 0.0, qdot, 0.0)
    return v_star, qdot


def max_speed(arm: PlanarArm, q0: np.ndarray, e_u: np.ndarray) -> tuple[float, np.ndarray]:
    """Highest mallet speed along direction e_u subject to joint velocity limits.

    Exact LP solution; only the direction of e_u matters. A degenerate
    direction (e.g. at a singularity) yields v = 0 with zero joint rates.
    """
    e = np.asarray(e_u, dtype=float).reshape(2)
    norm = np.linalg.norm(e)
    if norm < 1e-12:
        raise ValueError("shooting direction must be nonzero")
    jac = jacobian(arm, q0)
    v, qdot = _max_speed_batch(jac[None], np.asarray(arm.joint_vel_limits), e / norm)
    return float(v[0]), qdot[0]


def _ik_candidates_batch(arm: PlanarArm, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-kinematics solutions for a batch of end-point targets.

    Returns (configurations (v, k, n), feasible (v, k)) where k enumerates
    the redundancy grid (3 links) or is 1 (2 links), times both elbow
    branches. Infeasible slots hold zeros.
    """
    p = np.asarray(targets, dtype=float).reshape(-1, 2) - np.asarray(arm.base_pos)
    lengths = arm.link_lengths
    if arm.n_joints == 2:
        wrists = p[:, None, :]
        chi = None
    elif arm.n_joints == 3:
        chi = np.linspace(0.0, 2.0 * np.pi, IK_GRID, endpoint=False)
        tips = lengths[2] * np.stack([np.cos(chi), np.sin(chi)], axis=1)
        wrists = p[:, None, :] - tips[None, :, :]
    else:
        raise Unreachable(f"inverse kinematics supports 2 or 3 links, not {arm.n_joints}")
    l1, l2 = lengths[0], lengths[1]
    d2 = np.einsum("vkj,vkj->vk", wrists, wrists)
    cos_q2 = (d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    feasible = np.abs(cos_q2) <= 1.0
    base_q2 = np.arccos(np.clip(cos_q2, -1.0, 1.0))
    heading = np.arctan2(wrists[:, :, 1], wrists[:, :, 0])
    qs = []
    for branch in (1.0, -1.0):
        q2 = branch * base_q2
        q1 = heading - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2))
        if chi is None:
            qs.append(np.stack([q1, q2], axis=2))
        else:
            q3 = chi[None, :] - q1 - q2
            qs.append(np.stack([q1, q2, q3], axis=2))
    configs = np.concatenate(qs, axis=1)
    feasible = np.concatenate([feasible, feasible], axis=1)
    return np.where(feasible[:, :, None], configs, 0.0), feasible


def contact_configuration(arm: PlanarArm, mallet_pos: np.ndarray, u: float) -> np.ndarray:
    """Joint configuration reaching mallet_pos, chosen to maximize shot speed.

    The 1-D redundancy of the 3-link arm is resolved by a coarse grid
    search over the end-link heading. Raises Unreachable when the target is
    outside the workspace.
    """
    configs, feasible = _ik_candidates_batch(arm, np.asarray(mallet_pos)[None, :])
    if not feasible.any():
        raise Unreachable(f"mallet position {np.asarray(mallet_pos)} outside the arm workspace")
    e = np.array([math.cos(u), math.sin(u)])
    jacs = _jacobian_batch(arm, configs[0])
    vs, _ = _max_speed_batch(jacs, np.asarray(arm.joint_vel_limits), e)
    vs = np.where(feasible[0], vs, -1.0)
    return configs[0, int(np.argmax(vs))]


def mallet_contact_pose(geom: TableGeometry, puck_pos: np.ndarray, u: float) -> np.ndarray:
    """Mallet center on the contact circle, opposite the shooting direction."""
    puck_pos = np.asarray(puck_pos, dtype=float).reshape(2)
    pos = puck_pos - geom.contact_distance * np.array([math.cos(u), math.sin(u)])
    r = geom.mallet_radius
    if not (r <= pos[0] <= geom.length - r and abs(pos[1]) <= geom.half_width - r):
        raise OutOfTable(f"contact pose {pos} violates table bounds")
    return pos


def plan_batch(
    puck_state: PuckState,
    us: np.ndarray,
    arm: PlanarArm,
    geom: TableGeometry,
    u_limit: float = DEFAULT_ANGLE_LIMIT,
) -> tuple[list[ShotPlan | None], list[str]]:
    """Plan every candidate angle of one scenario in a single vectorized pass.

    Returns aligned (plans, statuses); a status of "ok" pairs with a plan
    (possibly v_star = 0 at a degenerate direction), "angle",
    "out_of_table", and "unreachable" pair with None.
    """
    us = np.atleast_1d(np.asarray(us, dtype=float))
    m = us.size
    e = np.stack([np.cos(us), np.sin(us)], axis=1)
    poses = puck_state.pos[None, :] - geom.contact_distance * e
    r = geom.mallet_radius
    ok_angle = np.abs(us) <= u_limit
    ok_pose = (
        (poses[:, 0] >= r)
        & (poses[:, 0] <= geom.length - r)
        & (np.abs(poses[:, 1]) <= geom.half_width - r)
    )
    statuses = ["ok"] * m
    plans: list[ShotPlan | None] = [None] * m
    for i in range(m):
        if not ok_angle[i]:
            statuses[i] = "angle"
        elif not ok_pose[i]:
            statuses[i] = "out_of_table"
    valid = np.flatnonzero(ok_angle & ok_pose)
    if valid.size == 0:
        return plans, statuses
    configs, feasible = _ik_candidates_batch(arm, poses[valid])
    v, k, n = configs.shape
    jacs = _jacobian_batch(arm, configs.reshape(v * k, n))
    e_rows = np.repeat(e[valid], k, axis=0)
    vs, qdots = _max_speed_batch(jacs, np.asarray(arm.joint_vel_limits), e_rows)
    vs = np.where(feasible.reshape(v * k), vs, -1.0).reshape(v, k)
    best = np.argmax(vs, axis=1)
    for local, i in enumerate(valid):
        if not feasible[local].any():
            statuses[i] = "unreachable"
            continue
        b = best[local]
        v_star = max(0.0, float(vs[local, b]))
        qdot = qdots[local * k + b] if v_star > 0.0 else np.zeros(n)
        plans[i] = ShotPlan(
            u=float(us[i]),
            v_star=v_star,
            mallet_pos=poses[i],
            mallet_vel=v_star * e[i],
            q0=configs[local, b],
            qdot0=qdot,
        )
    return plans, statuses


def plan_from_angle(
    puck_state: PuckState,
    u: float,
    arm: PlanarArm,
    geom: TableGeometry,
    u_limit: float = DEFAULT_ANGLE_LIMIT,
) -> ShotPlan:
    """Compose contact pose, IK, and the max-speed problem into a ShotPlan.

    Raises OutOfTable/Unreachable for impossible contact geometry; a
    reachable pose at a degenerate direction yields a plan with v_star = 0.
    """
    plans, statuses = plan_batch(puck_state, [u], arm, geom, u_limit=u_limit)
    if statuses[0] == "angle":
        raise ValueError(f"shooting angle {u} outside [-{u_limit}, {u_limit}]")
    if statuses[0] == "out_of_table":
        raise OutOfTable(f"contact pose for angle {u} violates table bounds")
    if statuses[0] == "unreachable":
        raise Unreachable(f"contact pose for angle {u} outside the arm workspace")
    return plans[0]
