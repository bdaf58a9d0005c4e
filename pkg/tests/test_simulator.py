import math

import numpy as np
import pytest

from poleloc.coarse_localization import MotionNoise, ParticleSet, motion_update
from poleloc.compact_map import CameraIntrinsics, Pose2, SemanticLabel, visible_projections
from poleloc.pole_extraction import ExtractionParams, extract_from_mask
from poleloc.simulator import (
    SensorNoise, WorldConfig, exact_odometry, generate_world, render_mask,
    synthesize_observations, synthesize_odometry,
)


def test_empty_map_still_has_trajectory():
    cmap, traj = generate_world(WorldConfig(pole_count=0))
    assert len(cmap) == 0 and len(traj) > 1


def test_empty_arena_rejected():
    with pytest.raises(ValueError):
        generate_world(WorldConfig(arena=(0, 0, 0, 10), pole_count=3))


def test_loop_spacing_and_tangent():
    _, traj = generate_world(WorldConfig(loop_radius=50, speed=5, frame_rate=10, duration_s=20))
    for (t0, a), (t1, b) in zip(traj, traj[1:]):
        assert t1 - t0 == pytest.approx(0.1)
        dphi = math.remainder(b.heading - a.heading, 2 * math.pi)
        assert 50 * dphi == pytest.approx(0.5, abs=1e-12)
        # tangent heading: forward axis perpendicular to the radius vector
        assert abs(a.forward @ (a.xy / np.linalg.norm(a.xy))) < 1e-12


def test_polyline_headings():
    _, traj = generate_world(WorldConfig(trajectory="waypoints", waypoints=((0, 0), (0, 10), (10, 10)),
                                         speed=5, frame_rate=2))
    assert traj[0][1].heading == 0.0
    assert traj[-1][1].heading == pytest.approx(-math.pi / 2)
    assert traj[-1][1].east == pytest.approx(10.0)


def test_world_deterministic():
    a = generate_world(WorldConfig(seed=4))
    b = generate_world(WorldConfig(seed=4))
    assert a[0] == b[0] and a[1] == b[1]
    assert generate_world(WorldConfig(seed=5))[0] != a[0]


def test_straight_odometry():
    _, traj = generate_world(WorldConfig(trajectory="waypoints", waypoints=((0, 0), (0, 20)),
                                         speed=5, frame_rate=10))
    for odo in synthesize_odometry(traj, MotionNoise(), np.random.default_rng(0)):
        assert odo.v == pytest.approx(5) and odo.omega == 0.0 and odo.dt == pytest.approx(0.1)


def test_odometry_round_trip():
    _, traj = generate_world(WorldConfig(duration_s=60))
    odo = synthesize_odometry(traj, MotionNoise(), np.random.default_rng(0))
    ps = ParticleSet(traj[0][1].as_array()[None, :], np.ones(1))
    rng = np.random.default_rng(0)
    for o, (_, truth) in zip(odo, traj[1:]):
        ps = motion_update(ps, o, MotionNoise(), rng)
        assert math.hypot(ps.poses[0, 0] - truth.east, ps.poses[0, 1] - truth.north) < 1e-9


def test_exact_odometry_reverse():
    v, w = exact_odometry(Pose2(0, 0, 0), Pose2(0, -1, 0), 1.0)
    assert v == pytest.approx(-1) and w == 0.0


def test_odometry_deterministic():
    _, traj = generate_world(WorldConfig(duration_s=10))
    noise = MotionNoise(0.05, 0, 0.01, 0.05)
    a = synthesize_odometry(traj, noise, np.random.default_rng(3))
    b = synthesize_odometry(traj, noise, np.random.default_rng(3))
    assert a == b


def test_observation_extremes():
    cmap, traj = generate_world(WorldConfig(seed=1))
    intr = CameraIntrinsics()
    pose = traj[0][1]
    rng = np.random.default_rng(0)
    clean = synthesize_observations(pose, cmap, intr, SensorNoise(0, 1, 0), rng)
    projs = visible_projections(pose, intr, cmap)
    assert [(o.u, o.label) for o in clean] == [(p.u, p.label) for p in projs]
    assert all(o.group_width == 3 and o.pixel_count == 100 for o in clean)
    assert synthesize_observations(pose, cmap, intr, SensorNoise(2, 0, 0), rng) == []


def test_clutter_mean():
    cmap, _ = generate_world(WorldConfig(pole_count=0))
    rng = np.random.default_rng(7)
    intr = CameraIntrinsics()
    counts = [len(synthesize_observations(Pose2(0, 0, 0), cmap, intr, SensorNoise(2, 0.9, 2.0), rng))
              for _ in range(10000)]
    assert np.mean(counts) == pytest.approx(2.0, abs=0.05)


def test_observations_sorted_and_in_image():
    cmap, traj = generate_world(WorldConfig(seed=2))
    rng = np.random.default_rng(1)
    intr = CameraIntrinsics()
    for _, pose in traj[::10]:
        obs = synthesize_observations(pose, cmap, intr, SensorNoise(5, 0.9, 3), rng)
        us = [o.u for o in obs]
        assert us == sorted(us) and all(0 <= u < intr.image_width for u in us)


def test_rendered_mask_extracts_projections():
    cmap, traj = generate_world(WorldConfig(seed=3))
    intr = CameraIntrinsics()
    pose = traj[5][1]
    obs = extract_from_mask(render_mask(pose, cmap, intr), ExtractionParams())
    projs = visible_projections(pose, intr, cmap)
    assert len(obs) <= len(projs)
    for o in obs:
        near = min(projs, key=lambda p: abs(p.u - o.u))
        assert abs(near.u - o.u) <= 1.0
