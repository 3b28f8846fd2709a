"""Table geometry, contact-aligned frames, and discrete contact-mode detection.

Coordinate convention: x runs from the robot's short wall (x = 0) to the
opponent's short wall (x = length) where the goal opening sits, y spans
[-width/2, +width/2] with the goal centered at y = 0. Viewed from the robot,
"left" is the long wall at y = +width/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import CoincidentCenters

# Relative normal speeds slower than this do not count as approaching,
# which prevents mode chattering at rest contact.
APPROACH_EPS = 1e-6


class Wall(Enum):
    LEFT = "left"      # y = +width/2
    RIGHT = "right"    # y = -width/2
    TOP = "top"        # x = length (opponent end, contains the goal opening)
    BOTTOM = "bottom"  # x = 0 (robot end)


class ModeKind(Enum):
    FLOATING = "floating"
    WALL = "wall"
    MALLET = "mallet"


@dataclass(frozen=True)
class ModeId:
    """Discrete dynamics regime of one time step."""

    kind: ModeKind
    wall: Wall | None = None

    @property
    def label(self) -> str:
        if self.kind is ModeKind.WALL:
            return f"wall_{self.wall.value}"
        return self.kind.value

    @staticmethod
    def parse(label: str) -> "ModeId":
        if label.startswith("wall_"):
            return ModeId(ModeKind.WALL, Wall(label[5:]))
        return ModeId(ModeKind(label))


FLOATING = ModeId(ModeKind.FLOATING)
MALLET = ModeId(ModeKind.MALLET)


def wall_mode(wall: Wall) -> ModeId:
    return ModeId(ModeKind.WALL, wall)


@dataclass
class PuckState:
    """Planar puck position (m) and velocity (m/s) on the table surface."""

    pos: np.ndarray
    vel: np.ndarray

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float).reshape(2)
        self.vel = np.asarray(self.vel, dtype=float).reshape(2)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])

    @staticmethod
    def from_vector(s: np.ndarray) -> "PuckState":
        s = np.asarray(s, dtype=float).reshape(4)
        return PuckState(s[:2], s[2:])


@dataclass
class MalletState:
    """Planar mallet (end-effector disk) position and velocity."""

    pos: np.ndarray
    vel: np.ndarray

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float).reshape(2)
        self.vel = np.asarray(self.vel, dtype=float).reshape(2)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])


@dataclass(frozen=True)
class TableGeometry:
    """Table dimensions in meters; defaults match a standard competition table."""

    length: float = 1.948
    width: float = 1.038
    goal_width: float = 0.25
    puck_radius: float = 0.03165
    mallet_radius: float = 0.04815
    goal_line_x: float = field(default=0.0)

    def __post_init__(self):
        if self.goal_width >= self.width:
            raise ValueError("goal_width must be smaller than table width")
        if self.puck_radius <= 0 or self.mallet_radius <= 0:
            raise ValueError("radii must be positive")
        if self.goal_line_x == 0.0:
            object.__setattr__(self, "goal_line_x", self.length)

    @property
    def half_width(self) -> float:
        return 0.5 * self.width

    @property
    def goal_halfwidth(self) -> float:
        return 0.5 * self.goal_width

    @property
    def half_length(self) -> float:
        return 0.5 * self.length

    @property
    def contact_distance(self) -> float:
        return self.puck_radius + self.mallet_radius

    def contains(self, pos: np.ndarray, margin: float = 0.0) -> bool:
        x, y = float(pos[0]), float(pos[1])
        return (margin <= x <= self.length - margin
                and -self.half_width + margin <= y <= self.half_width - margin)


# Unit normals pointing from each wall into the playing field.
_WALL_NORMALS = {
    Wall.LEFT: np.array([0.0, -1.0]),
    Wall.RIGHT: np.array([0.0, 1.0]),
    Wall.TOP: np.array([-1.0, 0.0]),
    Wall.BOTTOM: np.array([1.0, 0.0]),
}


@dataclass(frozen=True)
class ContactFrame:
    """2-D rotation mapping world velocities to (normal, tangential) components.

    Rows of `rotation` are the normal and tangential axes; the tangential
    axis is the normal rotated +90 deg, so det(rotation) = +1.
    """

    rotation: np.ndarray

    @staticmethod
    def from_normal(normal: np.ndarray) -> "ContactFrame":
        n = np.asarray(normal, dtype=float).reshape(2)
        n = n / np.linalg.norm(n)
        return ContactFrame(np.array([[n[0], n[1]], [-n[1], n[0]]]))

    @property
    def normal(self) -> np.ndarray:
        return self.rotation[0].copy()

    def to_frame(self, v: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(v, dtype=float)

    def to_world(self, v: np.ndarray) -> np.ndarray:
        return self.rotation.T @ np.asarray(v, dtype=float)


def wall_frame(wall: Wall) -> ContactFrame:
    """Contact frame of a wall; normal axis points into the playing field."""
    return ContactFrame.from_normal(_WALL_NORMALS[wall])


def mallet_frame(puck_pos: np.ndarray, mallet_pos: np.ndarray) -> ContactFrame:
    """Contact frame of a puck-mallet contact; normal points from mallet to puck."""
    d = np.asarray(puck_pos, dtype=float) - np.asarray(mallet_pos, dtype=float)
    dist = np.linalg.norm(d)
    if dist < 1e-9:
        raise CoincidentCenters("puck and mallet centers coincide")
    return ContactFrame.from_normal(d / dist)


def _wall_touch_and_approach(geom: TableGeometry, puck: PuckState, wall: Wall) -> bool:
    x, y = puck.pos
    r = geom.puck_radius
    if wall is Wall.LEFT:
        touching = y >= geom.half_width - r
    elif wall is Wall.RIGHT:
        touching = y <= -geom.half_width + r
    elif wall is Wall.TOP:
        # The goal opening is not a wall; a puck headed through it floats out.
        touching = x >= geom.length - r and abs(y) > geom.goal_halfwidth
    else:
        touching = x <= r
    if not touching:
        return False
    return float(puck.vel @ _WALL_NORMALS[wall]) < -APPROACH_EPS


def detect_mode(puck: PuckState, mallet: MalletState, geom: TableGeometry) -> ModeId:
    """Classify the current step's dynamics regime.

    Mallet contact dominates wall contact dominates floating: the mallet
    contact is the planned event and must not be masked. Corner contacts
    resolve one wall per step in a fixed (left, right, top, bottom) order.
    """
    d = puck.pos - mallet.pos
    dist = float(np.linalg.norm(d))
    if dist <= geom.contact_distance:
        if dist < 1e-9:
            return MALLET
        n = d / dist
        if float((puck.vel - mallet.vel) @ n) < -APPROACH_EPS:
            return MALLET
    for wall in (Wall.LEFT, Wall.RIGHT, Wall.TOP, Wall.BOTTOM):
        if _wall_touch_and_approach(geom, puck, wall):
            return wall_mode(wall)
    return FLOATING
