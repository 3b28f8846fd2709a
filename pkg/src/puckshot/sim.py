"""Ground-truth puck physics used to collect training data and judge shots.

The simulator is deliberately simple (planar, spin-free, circular bodies)
but is distinct from the learned model: damped free flight, restitution
walls with tangential friction, and an infinite-mass mallet collision law.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .table import (
    FLOATING,
    MalletState,
    ModeId,
    ModeKind,
    PuckState,
    TableGeometry,
    Wall,
    detect_mode,
    mallet_frame,
    wall_frame,
)

# Mallet parked here never interacts with the puck.
_FAR_AWAY = MalletState(pos=(-100.0, -100.0), vel=(0.0, 0.0))


@dataclass
class SimConfig:
    """Ground-truth physics constants; all configurable."""

    dt: float = 0.02
    damping: float = 0.12               # 1/s, linear velocity decay
    wall_restitution: float = 0.92
    wall_tangent_friction: float = 0.05
    mallet_restitution: float = 0.9
    vel_noise_std: float = 0.01         # m/s added per step
    seed: int | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not (0.0 < self.wall_restitution <= 1.0 and 0.0 < self.mallet_restitution <= 1.0):
            raise ValueError("restitutions must lie in (0, 1]")
        if not 0.0 <= self.wall_tangent_friction <= 1.0:
            raise ValueError("wall_tangent_friction must lie in [0, 1]")


@dataclass
class ShotOutcome:
    """Ground-truth verdict on one executed shot."""

    scored: bool
    speed_at_goal: float
    bank_count: int
    trajectory: list[PuckState]


@dataclass
class Episode:
    """One logged trajectory: aligned puck/mallet states and per-step modes."""

    t: np.ndarray             # (n,)
    puck: np.ndarray          # (n, 4) px, py, pvx, pvy
    mallet: np.ndarray        # (n, 4) mx, my, mvx, mvy
    modes: list[ModeId]       # mode governing the transition out of each row

    def __len__(self) -> int:
        return len(self.t)


def wall_collision_law(vel: np.ndarray, wall: Wall, config: SimConfig) -> np.ndarray:
    """Reflect the normal component, shrink the tangential one."""
    frame = wall_frame(wall)
    v = frame.to_frame(vel)
    v[0] *= -config.wall_restitution
    v[1] *= 1.0 - config.wall_tangent_friction
    return frame.to_world(v)


def mallet_collision_law(
    puck_vel: np.ndarray,
    mallet_vel: np.ndarray,
    normal: np.ndarray,
    restitution: float,
) -> np.ndarray:
    """Infinite-mass mallet impact: restitution on the relative normal velocity.

    normal points from the mallet toward the puck; the puck's tangential
    velocity is preserved.
    """
    rel_n = float((puck_vel - mallet_vel) @ normal)
    return puck_vel - (1.0 + restitution) * rel_n * np.asarray(normal, dtype=float)


def _reseat(pos: np.ndarray, mallet: MalletState, geom: TableGeometry) -> np.ndarray:
    """Project the puck center out of wall/mallet penetration.

    The opponent short wall is open over the goal interval, so a puck
    crossing there is not clamped.
    """
    x, y = pos
    r = geom.puck_radius
    y = min(max(y, -geom.half_width + r), geom.half_width - r)
    x = max(x, r)
    if abs(y) > geom.goal_halfwidth:
        x = min(x, geom.length - r)
    out = np.array([x, y])
    d = out - mallet.pos
    dist = float(np.linalg.norm(d))
    if 1e-12 < dist < geom.contact_distance:
        out = mallet.pos + d * (geom.contact_distance / dist)
    return out


def step(
    puck: PuckState,
    mallet: MalletState,
    geom: TableGeometry,
    config: SimConfig,
    rng: np.random.Generator,
) -> tuple[PuckState, ModeId]:
    """Advance the puck one step; returns the new state and the mode applied.

    Collision steps apply only the contact law (the impulse dominates the
    drag over one dt); floating steps apply linear damping. Velocity noise
    is added every step, position integrates semi-implicitly.
    """
    mode = detect_mode(puck, mallet, geom)
    if mode.kind is ModeKind.MALLET:
        n = mallet_frame(puck.pos, mallet.pos).normal
        vel = mallet_collision_law(puck.vel, mallet.vel, n, config.mallet_restitution)
    elif mode.kind is ModeKind.WALL:
        vel = wall_collision_law(puck.vel, mode.wall, config)
    else:
        vel = (1.0 - config.damping * config.dt) * puck.vel
    if config.vel_noise_std > 0.0:
        vel = vel + config.vel_noise_std * rng.standard_normal(2)
    pos = puck.pos + config.dt * vel
    pos = _reseat(pos, mallet, geom)
    return PuckState(pos, vel), mode


def _crossed_goal(geom: TableGeometry, prev: PuckState, new: PuckState) -> float | None:
    """Fraction of the step at which the center crossed the goal line, else None."""
    x0, x1 = prev.pos[0], new.pos[0]
    if x0 < geom.goal_line_x <= x1:
        frac = (geom.goal_line_x - x0) / (x1 - x0) if x1 > x0 else 1.0
        y_cross = prev.pos[1] + frac * (new.pos[1] - prev.pos[1])
        if abs(y_cross) <= geom.goal_halfwidth:
            return float(frac)
    return None


def simulate_shot(
    puck_at_contact: PuckState,
    plan,
    geom: TableGeometry,
    config: SimConfig,
    rng: np.random.Generator,
    exec_noise: tuple[float, float] | None = (0.02, 0.05),
    max_steps: int = 500,
) -> ShotOutcome:
    """Execute a planned contact under ground-truth physics.

    The planned (angle, speed) pair is optionally perturbed by zero-mean
    Gaussian execution noise (stands in for controller tracking error), the
    truth collision law is applied, and the free puck is rolled until it
    crosses the goal line, returns into the robot's half, or times out.
    """
    u, speed = plan.u, plan.v_star
    if exec_noise is not None:
        u = u + exec_noise[0] * rng.standard_normal()
        speed = max(0.0, speed + exec_noise[1] * rng.standard_normal())
    # The contact normal equals the shooting direction because the mallet
    # sits on the contact circle opposite to it.
    e_u = np.array([np.cos(u), np.sin(u)])
    vel_post = mallet_collision_law(
        puck_at_contact.vel, speed * e_u, e_u, config.mallet_restitution
    )
    puck = PuckState(puck_at_contact.pos.copy(), vel_post)
    trajectory = [puck]
    bank_count = 0
    scored = False
    speed_at_goal = 0.0
    for _ in range(max_steps):
        prev = puck
        puck, mode = step(puck, _FAR_AWAY, geom, config, rng)
        frac = _crossed_goal(geom, prev, puck)
        if frac is not None:
            cross = prev.pos + frac * (puck.pos - prev.pos)
            trajectory.append(PuckState(cross, puck.vel.copy()))
            scored = True
            speed_at_goal = float(np.linalg.norm(puck.vel))
            break
        if mode.kind is ModeKind.WALL:
            bank_count += 1
        trajectory.append(puck)
        if puck.pos[0] < geom.half_length and puck.vel[0] < 0.0:
            break
    return ShotOutcome(scored, speed_at_goal, bank_count, trajectory)


def collect_dataset(
    geom: TableGeometry,
    config: SimConfig,
    episodes: int,
    steps: int,
    rng: np.random.Generator,
) -> list[Episode]:
    """Roll seeded data-collection episodes and log state + detected mode.

    The first half of the episodes drives the mallet on a randomized
    contact-seeking chase; the second half launches the puck at high random
    velocity against a stationary mallet. Episodes end early if the puck
    leaves through the goal opening.
    """
    if episodes <= 0 or steps <= 0:
        raise ValueError("episodes and steps must be positive")
    out = []
    for ep in range(episodes):
        chase = ep < episodes // 2
        if chase:
            puck = PuckState(
                pos=rng.uniform([0.15 * geom.length, -0.3], [0.45 * geom.length, 0.3]),
                vel=rng.uniform(-0.1, 0.1, 2),
            )
            mallet = MalletState(
                pos=rng.uniform(
                    [geom.mallet_radius + 0.02, -geom.half_width + geom.mallet_radius + 0.02],
                    [0.25 * geom.length, geom.half_width - geom.mallet_radius - 0.02],
                ),
                vel=(0.0, 0.0),
            )
            chase_speed = rng.uniform(0.5, 2.5)
        else:
            margin = 0.1
            puck_speed = rng.uniform(1.0, 3.0)
            heading = rng.uniform(-np.pi, np.pi)
            puck = PuckState(
                pos=rng.uniform(
                    [margin, -geom.half_width + margin],
                    [geom.length - margin, geom.half_width - margin],
                ),
                vel=puck_speed * np.array([np.cos(heading), np.sin(heading)]),
            )
            mallet = MalletState(pos=(0.08, 0.0), vel=(0.0, 0.0))
            chase_speed = 0.0
        rows_t, rows_p, rows_m, modes = [], [], [], []
        for k in range(steps):
            if chase:
                d = puck.pos - mallet.pos
                dist = float(np.linalg.norm(d))
                vel = chase_speed * d / dist if dist > 1e-9 else np.zeros(2)
                mallet = MalletState(mallet.pos, vel)
            new_puck, mode = step(puck, mallet, geom, config, rng)
            rows_t.append(k * config.dt)
            rows_p.append(puck.as_vector())
            rows_m.append(mallet.as_vector())
            modes.append(mode)
            if new_puck.pos[0] > geom.goal_line_x:
                break
            puck = new_puck
            if chase:
                pos = mallet.pos + config.dt * mallet.vel
                pos = np.clip(
                    pos,
                    [geom.mallet_radius, -geom.half_width + geom.mallet_radius],
                    [geom.half_length - geom.mallet_radius, geom.half_width - geom.mallet_radius],
                )
                mallet = MalletState(pos, mallet.vel)
        out.append(
            Episode(
                t=np.asarray(rows_t),
                puck=np.asarray(rows_p),
                mallet=np.asarray(rows_m),
                modes=modes,
            )
        )
    return out


CSV_COLUMNS = ["t", "px", "py", "pvx", "pvy", "mx", "my", "mvx", "mvy", "mode"]


def write_trajectory_csv(path: str | Path, episodes: list[Episode]) -> None:
    """Write episodes to CSV; episode boundaries are marked by t restarting at 0."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for ep in episodes:
            for i in range(len(ep)):
                writer.writerow(
                    [repr(float(ep.t[i]))]
                    + [repr(float(v)) for v in ep.puck[i]]
                    + [repr(float(v)) for v in ep.mallet[i]]
                    + [ep.modes[i].label]
                )


def read_trajectory_csv(path: str | Path) -> list[Episode]:
    episodes: list[Episode] = []
    rows_t, rows_p, rows_m, modes = [], [], [], []

    def flush():
        if rows_t:
            episodes.append(
                Episode(np.asarray(rows_t), np.asarray(rows_p), np.asarray(rows_m), list(modes))
            )

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            t = float(row["t"])
            if t == 0.0:
                flush()
                rows_t, rows_p, rows_m, modes = [], [], [], []
            rows_t.append(t)
            rows_p.append([float(row[c]) for c in ("px", "py", "pvx", "pvy")])
            rows_m.append([float(row[c]) for c in ("mx", "my", "mvx", "mvy")])
            modes.append(ModeId.parse(row["mode"]))
    flush()
    return episodes
