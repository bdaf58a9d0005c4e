"""Synthetic pole worlds, ground-truth trajectories, odometry and observations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .coarse_localization import MotionNoise, Odometry
from .compact_map import (
    DEFAULT_MAX_RANGE, CameraIntrinsics, CompactMap, Pole, Pose2, SemanticLabel,
    visible_projections, wrap_angle,
)
from .pole_extraction import DEFAULT_LABEL_MAP, Observation, SegmentationMask

NOMINAL_GROUP_WIDTH = 3
NOMINAL_PIXEL_COUNT = 100

DEFAULT_LABEL_MIX = {
    SemanticLabel.Pole: 0.4,
    SemanticLabel.Lamp: 0.3,
    SemanticLabel.TreeTrunk: 0.2,
    SemanticLabel.TrafficSign: 0.1,
}


@dataclass(frozen=True)
class WorldConfig:
    arena: tuple[float, float, float, float] = (-110.0, 110.0, -110.0, 110.0)  # min/max east, min/max north
    pole_count: int = 40
    label_mix: Mapping[SemanticLabel, float] = field(default_factory=lambda: dict(DEFAULT_LABEL_MIX))
    trajectory: str = "loop"  # "loop" or "waypoints"
    loop_radius: float = 500.0 / (2.0 * math.pi)
    loop_center: tuple[float, float] = (0.0, 0.0)
    waypoints: tuple[tuple[float, float], ...] = ()
    speed: float = 5.0
    frame_rate: float = 2.0
    duration_s: float | None = None  # default: one lap / the full polyline
    seed: int = 0

    def __post_init__(self):
        if self.pole_count < 0:
            raise ValueError("pole_count must be >= 0")
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        if not self.speed > 0:
            raise ValueError("speed must be positive")
        if self.trajectory not in ("loop", "waypoints"):
            raise ValueError(f"unknown trajectory kind {self.trajectory!r}")
        if self.trajectory == "waypoints" and len(self.waypoints) < 2:
            raise ValueError("waypoint trajectory needs at least two waypoints")
        if self.trajectory == "loop" and not self.loop_radius > 0:
            raise ValueError("loop_radius must be positive")


@dataclass(frozen=True)
class SensorNoise:
    sigma_px: float = 2.0
    p_d: float = 0.9
    clutter_rate: float = 1.0

    def __post_init__(self):
        if not 0 <= self.p_d <= 1:
            raise ValueError("p_d must lie in [0, 1]")
        if self.sigma_px < 0 or self.clutter_rate < 0:
            raise ValueError("sigma_px and clutter_rate must be nonnegative")


def _mix_arrays(label_mix: Mapping[SemanticLabel, float]):
    labels = list(label_mix)
    p = np.array([label_mix[k] for k in labels], dtype=float)
    if len(labels) == 0 or np.any(p < 0) or p.sum() <= 0:
        raise ValueError("label_mix must hold nonnegative weights with a positive sum")
    return labels, p / p.sum()


def _loop_trajectory(cfg: WorldConfig) -> list[tuple[float, Pose2]]:
    r = cfg.loop_radius
    duration = cfg.duration_s if cfg.duration_s is not None else 2.0 * math.pi * r / cfg.speed
    n = int(math.floor(duration * cfg.frame_rate + 1e-9)) + 1
    out = []
    for k in range(n):
        t = k / cfg.frame_rate
        phi = cfg.speed * t / r
        out.append((t, Pose2(cfg.loop_center[0] + r * math.cos(phi),
                             cfg.loop_center[1] + r * math.sin(phi), phi)))
    return out


def _polyline_trajectory(cfg: WorldConfig) -> list[tuple[float, Pose2]]:
    pts = np.asarray(cfg.waypoints, dtype=float)
    seg = np.diff(pts, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    if np.any(lengths == 0):
        raise ValueError("consecutive waypoints must differ")
    cum = np.concatenate(([0.0], np.cumsum(lengths)))
    duration = cfg.duration_s if cfg.duration_s is not None else cum[-1] / cfg.speed
    n = int(math.floor(duration * cfg.frame_rate + 1e-9)) + 1
    out = []
    for k in range(n):
        t = k / cfg.frame_rate
        s = min(cfg.speed * t, cum[-1])
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        frac = (s - cum[i]) / lengths[i]
        e, nn = pts[i] + frac * seg[i]
        psi = math.atan2(-seg[i, 0], seg[i, 1])
        out.append((t, Pose2(float(e), float(nn), psi)))
    return out


def generate_world(cfg: WorldConfig) -> tuple[CompactMap, list[tuple[float, Pose2]]]:
    """Seeded uniform pole placement plus a sampled ground-truth trajectory.

    Pole coordinates are rounded to the millimetre so the map survives a CSV
    round trip unchanged.
    """
    rng = np.random.default_rng(cfg.seed)
    e0, e1, n0, n1 = cfg.arena
    if cfg.pole_count > 0 and not (e1 > e0 and n1 > n0):
        raise ValueError("arena is empty but pole_count > 0")
    labels, p = _mix_arrays(cfg.label_mix)
    east = np.round(rng.uniform(e0, e1, cfg.pole_count), 3)
    north = np.round(rng.uniform(n0, n1, cfg.pole_count), 3)
    picks = rng.choice(len(labels), size=cfg.pole_count, p=p)
    cmap = CompactMap(Pole(i + 1, float(east[i]), float(north[i]), labels[picks[i]])
                      for i in range(cfg.pole_count))
    traj = _loop_trajectory(cfg) if cfg.trajectory == "loop" else _polyline_trajectory(cfg)
    return cmap, traj


def exact_odometry(p0: Pose2, p1: Pose2, dt: float) -> tuple[float, float]:
    """(v, omega) of the single circular arc taking ``p0`` to ``p1`` in ``dt``."""
    dpsi = wrap_angle(p1.heading - p0.heading)
    de, dn = p1.east - p0.east, p1.north - p0.north
    chord = math.hypot(de, dn)
    mid = p0.heading + 0.5 * dpsi
    sign = 1.0 if (-math.sin(mid) * de + math.cos(mid) * dn) >= 0 else -1.0
    omega = dpsi / dt
    if abs(dpsi) < 1e-12:
        return sign * chord / dt, 0.0
    arc = chord / (2.0 * abs(math.sin(0.5 * dpsi))) * abs(dpsi)
    return sign * arc / dt, omega


def synthesize_odometry(truth: Sequence[tuple[float, Pose2]], noise: MotionNoise,
                        rng: np.random.Generator) -> list[Odometry]:
    """One odometry reading per consecutive pair of ground-truth samples."""
    if len(truth) < 2:
        raise ValueError("need at least two trajectory samples")
    out = []
    for (t0, p0), (t1, p1) in zip(truth[:-1], truth[1:]):
        dt = t1 - t0
        v, w = exact_odometry(p0, p1, dt)
        sv, sw, _ = noise.sigmas(v, w)
        ev, ew = rng.standard_normal(2)
        out.append(Odometry(v + sv * ev, w + sw * ew, dt))
    return out


def synthesize_observations(pose: Pose2, cmap: CompactMap, intr: CameraIntrinsics,
                            noise: SensorNoise, rng: np.random.Generator,
                            label_mix: Mapping[SemanticLabel, float] | None = None,
                            max_range: float = DEFAULT_MAX_RANGE) -> list[Observation]:
    projections = visible_projections(pose, intr, cmap, max_range)
    detected = rng.random(len(projections)) < noise.p_d
    jitter = rng.standard_normal(len(projections)) * noise.sigma_px
    upper = np.nextafter(float(intr.image_width), 0.0)
    obs = [Observation(float(np.clip(p.u + dj, 0.0, upper)), p.label,
                       NOMINAL_GROUP_WIDTH, NOMINAL_PIXEL_COUNT)
           for p, hit, dj in zip(projections, detected, jitter) if hit]
    n_clutter = int(rng.poisson(noise.clutter_rate))
    if n_clutter:
        labels, p = _mix_arrays(label_mix or DEFAULT_LABEL_MIX)
        us = rng.uniform(0.0, intr.image_width, n_clutter)
        picks = rng.choice(len(labels), size=n_clutter, p=p)
        obs.extend(Observation(float(u), labels[k], NOMINAL_GROUP_WIDTH, NOMINAL_PIXEL_COUNT)
                   for u, k in zip(us, picks))
    obs.sort(key=lambda o: (o.u, o.label.code))
    return obs


def render_mask(pose: Pose2, cmap: CompactMap, intr: CameraIntrinsics, stripe_width: int = 3,
                label_map: Mapping[int, SemanticLabel] | None = None,
                max_range: float = DEFAULT_MAX_RANGE) -> SegmentationMask:
    """Draw each visible pole as a full-height vertical stripe, nearer poles on top."""
    class_of = {label: cid for cid, label in sorted((label_map or DEFAULT_LABEL_MAP).items(), reverse=True)}
    grid = np.zeros((intr.image_height, intr.image_width), dtype=np.uint8)
    for proj in sorted(visible_projections(pose, intr, cmap, max_range), key=lambda p: -p.range):
        first = int(round(proj.u - (stripe_width - 1) / 2.0))
        lo, hi = max(first, 0), min(first + stripe_width, intr.image_width)
        if lo < hi:
            grid[:, lo:hi] = class_of[proj.label]
    return SegmentationMask(grid)
