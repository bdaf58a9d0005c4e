import math

import numpy as np
import pytest

from poleloc.compact_map import CameraIntrinsics, CompactMap, Pole, Pose2, SemanticLabel


@pytest.fixture
def intr():
    return CameraIntrinsics()


def random_map(rng: np.random.Generator, m: int, half_extent: float = 50.0) -> CompactMap:
    labels = list(SemanticLabel)[:4]
    xy = rng.uniform(-half_extent, half_extent, (m, 2))
    return CompactMap(Pole(i + 1, float(e), float(n), labels[int(rng.integers(4))])
                      for i, (e, n) in enumerate(xy))


def poses_close(a: Pose2, b: Pose2, tol: float) -> bool:
    dpsi = abs(math.remainder(a.heading - b.heading, 2 * math.pi))
    return math.hypot(a.east - b.east, a.north - b.north) < tol and dpsi < tol
