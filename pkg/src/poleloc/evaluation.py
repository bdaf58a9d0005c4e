"""Trajectory accuracy: translation/rotation RMSE and recall tiers."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .compact_map import Pose2, wrap_angle

TRANS_TIERS_M = (0.5, 1.0, 2.0)
POSE_TIERS = ((0.25, 2.0), (0.5, 5.0), (5.0, 10.0))  # (meters, degrees)


@dataclass(frozen=True)
class MetricsReport:
    rmse_trans_m: float
    rmse_rot_deg: float
    recall_trans: tuple[float, ...]
    recall_pose: tuple[float, ...]
    frame_count: int

    def to_json(self) -> dict:
        return {
            "rmse_trans_m": self.rmse_trans_m,
            "rmse_rot_deg": self.rmse_rot_deg,
            "recall_trans": {f"{m:g}m": r for m, r in zip(TRANS_TIERS_M, self.recall_trans)},
            "recall_pose": {f"{m:g}m_{d:g}deg": r for (m, d), r in zip(POSE_TIERS, self.recall_pose)},
            "frame_count": self.frame_count,
        }


def frame_errors(estimate: Sequence[Pose2], truth: Sequence[Pose2]) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame translation error (m) and wrapped absolute heading error (deg)."""
    if len(estimate) != len(truth):
        raise ValueError(f"trajectory length mismatch: {len(estimate)} estimated vs {len(truth)} truth frames")
    if len(truth) == 0:
        raise ValueError("empty trajectory")
    est = np.array([p.as_array() for p in estimate])
    ref = np.array([p.as_array() for p in truth])
    trans = np.hypot(est[:, 0] - ref[:, 0], est[:, 1] - ref[:, 1])
    rot = np.degrees(np.abs(wrap_angle(est[:, 2] - ref[:, 2])))
    return trans, rot


def compute_metrics(estimate: Sequence[Pose2], truth: Sequence[Pose2]) -> MetricsReport:
    trans, rot = frame_errors(estimate, truth)
    return MetricsReport(
        rmse_trans_m=float(math.sqrt(np.mean(trans ** 2))),
        rmse_rot_deg=float(math.sqrt(np.mean(rot ** 2))),
        recall_trans=tuple(float(np.mean(trans < m)) for m in TRANS_TIERS_M),
        recall_pose=tuple(float(np.mean((trans < m) & (rot < d))) for m, d in POSE_TIERS),
        frame_count=len(trans),
    )
