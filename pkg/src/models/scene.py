"""
Scene data types: buildings, lanes, vehicle poses and depth views.
"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np


@dataclass(frozen=True)
class Building:
    """Axis-aligned box standing on the ground plane."""
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    height: float

    @property
    def box_min(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, 0.0])

    @property
    def box_max(self) -> np.ndarray:
        return np.array([self.x_max, self.y_max, self.height])

    def translated(self, dx: float, dy: float) -> "Building":
        return Building(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy, self.height)


@dataclass(frozen=True)
class Lane:
    """Straight road centerline from ``start`` to ``end`` (x, y in meters)."""
    start: Tuple[float, float]
    end: Tuple[float, float]

    @property
    def length(self) -> float:
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))

    @property
    def heading(self) -> float:
        return float(np.arctan2(self.end[1] - self.start[1], self.end[0] - self.start[0]))

    def point_at(self, distance: float) -> Tuple[float, float]:
        """Point ``distance`` meters along the lane, wrapping at the end."""
        s = distance % self.length
        u = s / self.length
        return (
            self.start[0] + u * (self.end[0] - self.start[0]),
            self.start[1] + u * (self.end[1] - self.start[1]),
        )


@dataclass
class Scene:
    """Static urban scene around one base station."""
    length: float  # x extent, meters
    width: float  # y extent, meters
    buildings: List[Building] = field(default_factory=list)
    lanes: List[Lane] = field(default_factory=list)
    bs_position: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 6.0]))
    reflection_loss: float = 0.5
    road_width: float = 12.0
    ms_height: float = 1.5
    ground_reflection: bool = False
    max_paths: int = 25
    phase_jitter: float = 0.5

    def contains(self, point) -> bool:
        return 0.0 <= point[0] <= self.length and 0.0 <= point[1] <= self.width

    def box_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """Stacked box corners, each of shape (n_buildings, 3)."""
        if not self.buildings:
            return np.zeros((0, 3)), np.zeros((0, 3))
        return (
            np.stack([b.box_min for b in self.buildings]),
            np.stack([b.box_max for b in self.buildings]),
        )


@dataclass
class VehiclePose:
    """Receiver antenna position g (meters) and vehicle heading (radians)."""
    position: np.ndarray
    heading: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([*self.position, self.heading], dtype=np.float64)


@dataclass
class DepthView:
    """Normalized depth image; 1.0 means no hit within range."""
    pixels: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """A vehicle driving along a lane at constant speed."""
    lane: int
    speed: float  # m/s
    duration: float  # seconds
    start_offset: float = 0.0  # meters along the lane
