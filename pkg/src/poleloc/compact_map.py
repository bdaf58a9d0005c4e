"""Pole-landmark map, camera intrinsics and the column projection model.

World frame is planar East/North. A pose heading ``psi`` rotates the camera
so that its forward axis points along ``(-sin psi, cos psi)``; ``psi = 0``
faces +North and image columns grow to the East.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAP_HEADER = ("id", "east_m", "north_m", "label")
DEFAULT_MAX_RANGE = 80.0


class MapLoadError(ValueError):
    pass


class SemanticLabel(enum.Enum):
    Pole = "Pole"
    Lamp = "Lamp"
    TreeTrunk = "TreeTrunk"
    TrafficSign = "TrafficSign"
    Other = "Other"

    @classmethod
    def parse(cls, text: str) -> "SemanticLabel":
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown semantic label {text!r}") from None

    @property
    def code(self) -> int:
        return _LABEL_CODES[self]


_LABEL_CODES = {label: i for i, label in enumerate(SemanticLabel)}
LABELS_BY_CODE = list(SemanticLabel)


def wrap_angle(a):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    if isinstance(a, np.ndarray):
        return np.pi - np.mod(np.pi - a, 2.0 * np.pi)
    return math.pi - (math.pi - a) % (2.0 * math.pi)


@dataclass(frozen=True)
class Pose2:
    east: float
    north: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.east, self.north])

    @property
    def forward(self) -> np.ndarray:
        return np.array([-math.sin(self.heading), math.cos(self.heading)])

    def as_array(self) -> np.ndarray:
        return np.array([self.east, self.north, self.heading])

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "Pose2":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def to_camera(self, east: float, north: float) -> tuple[float, float]:
        """Inverse rigid transform of a world point into the camera frame (x', y')."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        dx, dy = east - self.east, north - self.north
        return c * dx + s * dy, -s * dx + c * dy

    def to_world(self, x: float, y: float) -> tuple[float, float]:
        c, s = math.cos(self.heading), math.sin(self.heading)
        return self.east + c * x - s * y, self.north + s * x + c * y


@dataclass(frozen=True)
class Pole:
    id: int
    east: float
    north: float
    label: SemanticLabel

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.east, self.north])


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 500.0
    cx: float = 320.0
    image_width: int = 640
    image_height: int = 480

    def __post_init__(self):
        if not self.fx > 0:
            raise ValueError("fx must be positive")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")
        if not 0 <= self.cx < self.image_width:
            raise ValueError("cx must lie inside the image")


@dataclass(frozen=True)
class Projection:
    pole_id: int
    u: float
    range: float
    label: SemanticLabel


class CompactMap:
    """Ordered, immutable collection of poles with array views for vectorized use."""

    def __init__(self, poles: Iterable[Pole] = ()):
        self.poles: tuple[Pole, ...] = tuple(poles)
        ids = [p.id for p in self.poles]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate pole id")
        self.ids = np.array(ids, dtype=np.int64)
        self.xy = np.array([[p.east, p.north] for p in self.poles], dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(self.xy)):
            raise ValueError("pole positions must be finite")
        self.label_codes = np.array([p.label.code for p in self.poles], dtype=np.int64)
        self._index = {p.id: i for i, p in enumerate(self.poles)}

    def __len__(self) -> int:
        return len(self.poles)

    def __iter__(self):
        return iter(self.poles)

    def __getitem__(self, pole_id: int) -> Pole:
        return self.poles[self._index[pole_id]]

    def index_of(self, pole_id: int) -> int:
        return self._index[pole_id]

    def __eq__(self, other) -> bool:
        return isinstance(other, CompactMap) and self.poles == other.poles


def _format_coord(x: float) -> str:
    s = f"{x:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def save_map(cmap: CompactMap, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(",".join(MAP_HEADER) + "\n")
        for p in cmap:
            f.write(f"{p.id},{_format_coord(p.east)},{_format_coord(p.north)},{p.label.value}\n")


def load_map(path) -> CompactMap:
    path = Path(path)
    poles: list[Pole] = []
    seen: set[int] = set()
    try:
        f = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise MapLoadError(f"{path}: cannot read ({e.strerror})") from None
    with f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MAP_HEADER:
            raise MapLoadError(f"{path}:1: expected header {','.join(MAP_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise MapLoadError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                pid = int(row[0])
                east, north = float(row[1]), float(row[2])
                label = SemanticLabel.parse(row[3].strip())
            except ValueError as e:
                raise MapLoadError(f"{path}:{lineno}: {e}") from None
            if not (math.isfinite(east) and math.isfinite(north)):
                raise MapLoadError(f"{path}:{lineno}: non-finite position")
            if pid in seen:
                raise MapLoadError(f"{path}:{lineno}: duplicate pole id {pid}")
            seen.add(pid)
            poles.append(Pole(pid, east, north, label))
    return CompactMap(poles)


def project_pole(pose: Pose2, intr: CameraIntrinsics, pole: Pole) -> Projection | None:
    x, y = pose.to_camera(pole.east, pole.north)
    if y <= 0:
        return None
    u = x * intr.fx / y + intr.cx
    if not 0 <= u < intr.image_width:
        return None
    return Projection(pole.id, u, y, pole.label)


def visible_projections(pose: Pose2, intr: CameraIntrinsics, cmap: CompactMap,
                        max_range: float = DEFAULT_MAX_RANGE) -> list[Projection]:
    out = []
    for pole in cmap:
        proj = project_pole(pose, intr, pole)
        if proj is not None and proj.range <= max_range:
            out.append(proj)
    out.sort(key=lambda p: (p.u, p.pole_id))
    return out


def project_all(poses: np.ndarray, intr: CameraIntrinsics, cmap: CompactMap,
                max_range: float = DEFAULT_MAX_RANGE):
    """Vectorized projection of every map pole for every pose row.

    Returns ``(u, rng, visible)``, each shaped ``(N, M)``. Entries where
    ``visible`` is False carry meaningless ``u`` values.
    """
    poses = np.atleast_2d(poses)
    c = np.cos(poses[:, 2])[:, None]
    s = np.sin(poses[:, 2])[:, None]
    dx = cmap.xy[None, :, 0] - poses[:, 0:1]
    dy = cmap.xy[None, :, 1] - poses[:, 1:2]
    x = c * dx + s * dy
    y = -s * dx + c * dy
    front = y > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(front, x * intr.fx / np.where(front, y, 1.0) + intr.cx, np.nan)
    visible = front & (u >= 0) & (u < intr.image_width) & (y <= max_range)
    return u, y, visible
