"""Geometric fine alignment from associated pole triples.

Translation comes from intersecting the two circles on which the camera
must lie to see consecutive landmark pairs under their measured horizontal
angles. It does not involve the heading. The heading is then refined by a
one-parameter Gauss-Newton fit of the pixel residuals.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coarse_localization import (
    NONE, ParticleSet, WeightParams, pose_log_weight,
)
from .compact_map import CameraIntrinsics, CompactMap, Pole, Pose2, wrap_angle
from .pole_extraction import Observation

BEARING_TOL = 1e-6
CENTER_TOL = 1e-6
MAX_HALVINGS = 8


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError("circle radius must be positive and finite")


@dataclass(frozen=True)
class AlignParams:
    d0: float = 1.0
    beta_t: float = 1000.0
    beta_theta: float = 200.0
    min_triple_angle: float = 0.05
    gn_max_iters: int = 20
    gn_tol: float = 1e-9
    require_tight_spread: bool = True

    def __post_init__(self):
        for name in ("d0", "beta_t", "beta_theta", "min_triple_angle", "gn_max_iters", "gn_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class AlignedPose:
    pose: Pose2
    weight: float
    source_triple: tuple[int, int, int]
    log_weight: float = 0.0
    normalized_weight: float = 1.0  # w* in (0, 1], relative to the coarse pose weight


@dataclass
class RotationResult:
    heading: float
    cost: float
    iterations: int
    ok: bool = True


@dataclass
class AlignmentReport:
    """Outcome of one alignment attempt, including every candidate tried."""

    accepted: AlignedPose | None = None
    reason: str = ""
    coarse_log_weight: float = float("nan")
    spread_m: float | None = None
    candidates: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "accepted": self.accepted is not None,
            "reason": self.reason,
            "coarse_log_weight": self.coarse_log_weight,
            "spread_m": self.spread_m,
            "candidates": self.candidates,
        }


# --------------------------------------------------------------- geometry

def horizontal_angle(u1: float, u2: float, intr: CameraIntrinsics, *, check: bool = True) -> float:
    if check and not u1 > u2:
        raise ValueError("horizontal_angle requires u1 > u2")
    return math.atan((u1 - intr.cx) / intr.fx) - math.atan((u2 - intr.cx) / intr.fx)


def circumscribed_circle(la, lb, theta: float, side: int) -> Circle:
    """Circle through ``la`` and ``lb`` from whose arc the chord subtends ``theta``.

    ``side`` (+1 or -1) picks which of the two mirror-image circles to return:
    the one whose viewing arc lies left (+1) or right (-1) of la->lb. For
    obtuse ``theta`` the center sits on the opposite side of the chord.
    """
    if not 0 < theta < math.pi:
        raise ValueError("inscribed angle must lie in (0, pi)")
    ax, ay = float(la[0]), float(la[1])
    bx, by = float(lb[0]), float(lb[1])
    dx, dy = bx - ax, by - ay
    chord = math.hypot(dx, dy)
    if chord == 0 or not math.isfinite(chord):
        raise ValueError("degenerate chord")
    r = chord / (2.0 * math.sin(theta))
    # signed offset r*cos(theta): positive for acute angles (center on the viewer's side)
    h = 0.5 * chord / math.tan(theta)
    nx, ny = -dy / chord, dx / chord
    s = 1.0 if side >= 0 else -1.0
    return Circle((0.5 * (ax + bx) + s * h * nx, 0.5 * (ay + by) + s * h * ny), r)


def clockwise_angle(frm, to) -> float:
    """Angle to rotate direction ``frm`` clockwise onto ``to``, in (-pi, pi]."""
    cross = frm[0] * to[1] - frm[1] * to[0]
    dot = frm[0] * to[0] + frm[1] * to[1]
    return -math.atan2(cross, dot)


def _reflect(p, a, b):
    """Reflect point ``p`` across the line through ``a`` and ``b``."""
    dx, dy = b[0] - a[0], b[1] - a[1]
    t = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)
    fx, fy = a[0] + t * dx, a[1] + t * dy
    return 2.0 * fx - p[0], 2.0 * fy - p[1]


def translation_from_triple(l1, l2, l3, theta12: float, theta23: float,
                            coarse: Pose2 | None = None,
                            params: AlignParams | None = None) -> tuple[float, float] | None:
    """Camera position seeing ``l1, l2, l3`` (right to left) under the given angles.

    ``coarse`` only breaks ties between surviving solutions by proximity; its
    heading is never read.
    """
    params = params or AlignParams()
    if min(theta12, theta23) < params.min_triple_angle or max(theta12, theta23) >= math.pi:
        return None
    pts = [(float(p[0]), float(p[1])) for p in (l1, l2, l3)]
    if pts[0] == pts[1] or pts[1] == pts[2] or pts[0] == pts[2]:
        return None
    survivors = []
    for s1, s2 in itertools.product((1, -1), repeat=2):
        c1 = circumscribed_circle(pts[0], pts[1], theta12, s1)
        c2 = circumscribed_circle(pts[1], pts[2], theta23, s2)
        scale = max(c1.radius, c2.radius)
        sep = math.hypot(c1.center[0] - c2.center[0], c1.center[1] - c2.center[1])
        if sep < CENTER_TOL * scale:
            continue
        # L2 on the line of centers means the circles touch only there
        t = _reflect(pts[1], c1.center, c2.center)
        if math.hypot(t[0] - pts[1][0], t[1] - pts[1][1]) < CENTER_TOL * scale:
            continue
        b = [(p[0] - t[0], p[1] - t[1]) for p in pts]
        if min(math.hypot(*v) for v in b) < CENTER_TOL * scale:
            continue
        if (abs(clockwise_angle(b[1], b[0]) - theta12) > BEARING_TOL
                or abs(clockwise_angle(b[2], b[1]) - theta23) > BEARING_TOL):
            continue
        survivors.append(t)
    if not survivors:
        return None
    if coarse is None:
        return survivors[0]
    return min(survivors, key=lambda t: math.hypot(t[0] - coarse.east, t[1] - coarse.north))


# --------------------------------------------------------------- rotation

def _residuals(translation, psi, poles_xy: np.ndarray, u_obs: np.ndarray, intr: CameraIntrinsics):
    """Signed pixel residuals and their heading derivatives; NaN where a pole is behind."""
    c, s = math.cos(psi), math.sin(psi)
    dx = poles_xy[:, 0] - translation[0]
    dy = poles_xy[:, 1] - translation[1]
    x = c * dx + s * dy
    y = -s * dx + c * dy
    front = y > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(front, x / np.where(front, y, 1.0), np.nan)
    r = intr.fx * ratio + intr.cx - u_obs
    jac = intr.fx * (1.0 + ratio * ratio)
    return r, jac


def rotation_cost(translation, psi, poles_xy, u_obs, intr) -> float:
    r, _ = _residuals(translation, psi, poles_xy, u_obs, intr)
    r = r[np.isfinite(r)]
    return 0.5 * float(np.dot(r, r))


def rotation_gradient(translation, psi, poles_xy, u_obs, intr) -> float:
    r, j = _residuals(translation, psi, poles_xy, u_obs, intr)
    ok = np.isfinite(r)
    return float(np.dot(r[ok], j[ok]))


def optimize_rotation(translation, pairs: Sequence[tuple[Observation, Pole]],
                      intr: CameraIntrinsics, psi_init: float,
                      params: AlignParams | None = None) -> RotationResult:
    """Gauss-Newton on the heading with the translation held fixed.

    Residuals whose pole falls behind the camera are dropped for that
    iteration. A step that raises the cost is halved up to eight times.
    """
    params = params or AlignParams()
    poles_xy = np.array([[p.east, p.north] for _, p in pairs], dtype=float).reshape(-1, 2)
    u_obs = np.array([o.u for o, _ in pairs], dtype=float)
    psi = float(psi_init)
    r, j = _residuals(translation, psi, poles_xy, u_obs, intr)
    ok = np.isfinite(r)
    if not ok.any():
        return RotationResult(wrap_angle(psi), float("nan"), 0, ok=False)
    cost = 0.5 * float(np.dot(r[ok], r[ok]))
    it = 0
    for it in range(1, params.gn_max_iters + 1):
        step = -float(np.dot(j[ok], r[ok])) / float(np.dot(j[ok], j[ok]))
        for _ in range(MAX_HALVINGS + 1):
            cand = psi + step
            r_new, j_new = _residuals(translation, cand, poles_xy, u_obs, intr)
            ok_new = np.isfinite(r_new)
            new_cost = 0.5 * float(np.dot(r_new[ok_new], r_new[ok_new])) if ok_new.any() else math.inf
            if new_cost <= cost:
                break
            step *= 0.5
        else:
            break
        psi, r, j, ok, cost = cand, r_new, j_new, ok_new, new_cost
        if abs(step) < params.gn_tol:
            break
    return RotationResult(wrap_angle(psi), cost, it)


# --------------------------------------------------------------- alignment

def matched_pairs(observations: Sequence[Observation], mapping: Sequence[int],
                  cmap: CompactMap) -> list[tuple[Observation, Pole]]:
    return [(o, cmap[pid]) for o, pid in zip(observations, mapping) if pid != NONE]


def align_pose_report(coarse: Pose2, observations: Sequence[Observation], mapping: Sequence[int],
                      cmap: CompactMap, intr: CameraIntrinsics, weight_params: WeightParams,
                      params: AlignParams | None = None) -> AlignmentReport:
    """Enumerate every associated triple, score each candidate pose, apply both acceptance gates."""
    params = params or AlignParams()
    coarse_lw = pose_log_weight(coarse, observations, mapping, cmap, intr, weight_params)
    report = AlignmentReport(coarse_log_weight=coarse_lw)
    pairs = matched_pairs(observations, mapping, cmap)
    if len(pairs) < 3:
        report.reason = "fewer than 3 matched landmarks"
        return report
    pairs.sort(key=lambda op: (-op[0].u, op[1].id))
    best = None  # (log_weight, -distance, pose, triple)
    for a, b, c in itertools.combinations(range(len(pairs)), 3):
        (o1, p1), (o2, p2), (o3, p3) = pairs[a], pairs[b], pairs[c]
        triple = (p1.id, p2.id, p3.id)
        entry: dict = {"triple": list(triple)}
        report.candidates.append(entry)
        if not (o1.u > o2.u > o3.u):
            entry["rejected"] = "coincident columns"
            continue
        t12 = horizontal_angle(o1.u, o2.u, intr)
        t23 = horizontal_angle(o2.u, o3.u, intr)
        t = translation_from_triple(p1.xy, p2.xy, p3.xy, t12, t23, coarse, params)
        if t is None:
            entry["rejected"] = "degenerate or inconsistent triple"
            continue
        rot = optimize_rotation(t, pairs, intr, coarse.heading, params)
        if not rot.ok:
            entry["rejected"] = "all poles behind camera"
            continue
        pose = Pose2(t[0], t[1], rot.heading)
        lw = pose_log_weight(pose, observations, mapping, cmap, intr, weight_params)
        dist = math.hypot(pose.east - coarse.east, pose.north - coarse.north)
        entry.update(east=pose.east, north=pose.north, heading=pose.heading,
                     log_weight=lw, distance=dist)
        key = (lw, -dist)
        if best is None or key > best[0]:
            best = (key, pose, triple)
    if best is None:
        report.reason = "no valid candidate"
        return report
    (lw, neg_dist), pose, triple = best
    if not lw > coarse_lw:
        report.reason = "candidate weight does not exceed coarse weight"
    elif not -neg_dist < params.d0:
        report.reason = "candidate farther than d0 from coarse pose"
    else:
        # w* = w_p / (w_p + w_c); 1 - w* evaluated directly to keep precision near w* = 1
        gap = coarse_lw - lw
        miss = math.exp(gap) / (1.0 + math.exp(gap))
        if params.require_tight_spread and not miss * params.beta_t < params.d0:
            report.reason = "resample spread exceeds d0"
            report.spread_m = miss * params.beta_t
        else:
            report.accepted = AlignedPose(pose, math.exp(lw), triple, lw, 1.0 - miss)
            report.reason = "accepted"
    return report


def align_pose(coarse: Pose2, observations: Sequence[Observation], mapping: Sequence[int],
               cmap: CompactMap, intr: CameraIntrinsics, weight_params: WeightParams,
               params: AlignParams | None = None) -> AlignedPose | None:
    return align_pose_report(coarse, observations, mapping, cmap, intr, weight_params, params).accepted


def accurate_resample(particles: ParticleSet, aligned: AlignedPose, params: AlignParams,
                      rng: np.random.Generator) -> ParticleSet:
    """Redraw every particle around the aligned pose with spread (1 - w*) * beta."""
    n = len(particles)
    spread = 1.0 - aligned.normalized_weight
    sigma = np.array([spread * params.beta_t, spread * params.beta_t, spread * params.beta_theta])
    poses = aligned.pose.as_array()[None, :] + rng.standard_normal((n, 3)) * sigma
    poses[:, 2] = wrap_angle(poses[:, 2])
    return ParticleSet(poses, np.full(n, 1.0 / n))
