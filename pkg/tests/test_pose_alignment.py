import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import bearing_residual_grid, central_difference
from poleloc.coarse_localization import NONE, ParticleSet, WeightParams, pose_log_weight
from poleloc.compact_map import CameraIntrinsics, CompactMap, Pole, Pose2, SemanticLabel, visible_projections
from poleloc.pole_extraction import Observation
from poleloc.pose_alignment import (
    AlignParams, AlignedPose, accurate_resample, align_pose, align_pose_report, circumscribed_circle,
    horizontal_angle, optimize_rotation, rotation_cost, rotation_gradient, translation_from_triple,
)

P = SemanticLabel.Pole


def bearing_angle(t, a, b):
    """Clockwise angle at ``t`` from landmark ``b`` to landmark ``a``."""
    va = np.subtract(a, t)
    vb = np.subtract(b, t)
    return -math.atan2(vb[0] * va[1] - vb[1] * va[0], vb @ va)


# ---------------------------------------------------------------- angles

def test_horizontal_angle_examples():
    intr = CameraIntrinsics(fx=500, cx=320)
    assert horizontal_angle(820, 320, intr) == pytest.approx(math.pi / 4)
    assert horizontal_angle(820, -180, intr) == pytest.approx(math.pi / 2)
    assert horizontal_angle(320 + 1e-9, 320 - 1e-9, intr) == pytest.approx(2e-9 / 500, rel=1e-6)
    with pytest.raises(ValueError):
        horizontal_angle(300, 310, intr)


@given(st.floats(-1000, 1000), st.floats(-1000, 1000))
def test_horizontal_angle_antisymmetric(a, b):
    intr = CameraIntrinsics()
    assert horizontal_angle(a, b, intr, check=False) == -horizontal_angle(b, a, intr, check=False)


# ---------------------------------------------------------------- circles

def test_circle_examples():
    c = circumscribed_circle((0, 0), (2, 0), math.pi / 2, 1)
    assert c.radius == pytest.approx(1) and np.allclose(c.center, (1, 0))
    c2 = circumscribed_circle((0, 0), (2, 0), math.pi / 2, -1)
    assert np.allclose(c2.center, (1, 0))
    assert circumscribed_circle((0, 0), (1, 0), math.pi / 6, 1).radius == pytest.approx(1)
    with pytest.raises(ValueError):
        circumscribed_circle((0, 0), (1, 0), math.pi, 1)
    with pytest.raises(ValueError):
        circumscribed_circle((1, 1), (1, 1), 0.5, 1)


@settings(max_examples=200)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50),
       st.floats(0.01, math.pi - 0.01), st.sampled_from([1, -1]))
def test_circle_passes_through_chord(ax, ay, bx, by, theta, side):
    if math.hypot(bx - ax, by - ay) < 1e-3:
        return
    c = circumscribed_circle((ax, ay), (bx, by), theta, side)
    for x, y in ((ax, ay), (bx, by)):
        assert abs(math.hypot(x - c.center[0], y - c.center[1]) - c.radius) <= 1e-12 * max(c.radius, 1) * 100


@settings(max_examples=100)
@given(st.floats(0.05, math.pi - 0.05), st.floats(0, 2 * math.pi), st.sampled_from([1, -1]))
def test_inscribed_angle_on_arc(theta, phi, side):
    # every point on the viewing arc sees the chord under theta
    la, lb = (0.0, 0.0), (3.0, 1.0)
    c = circumscribed_circle(la, lb, theta, side)
    p = (c.center[0] + c.radius * math.cos(phi), c.center[1] + c.radius * math.sin(phi))
    if min(math.dist(p, la), math.dist(p, lb)) < 1e-3:
        return
    seen = abs(bearing_angle(p, la, lb))
    assert seen == pytest.approx(theta, abs=1e-7) or seen == pytest.approx(math.pi - theta, abs=1e-7)


# ------------------------------------------------------------ translation

def test_translation_documented_example():
    t = (0.0, 0.0)
    l1, l2, l3 = (3, 5), (0, 6), (-2, 5)  # right to left when facing north
    th12, th23 = bearing_angle(t, l1, l2), bearing_angle(t, l2, l3)
    got = translation_from_triple(l1, l2, l3, th12, th23, Pose2(0.3, -0.2, 0))
    assert math.dist(got, t) < 1e-9


def test_translation_grid_oracle():
    rng = np.random.default_rng(21)
    for _ in range(20):
        t = rng.uniform(-5, 5, 2)
        psi = rng.uniform(-math.pi, math.pi)
        fwd = np.array([-math.sin(psi), math.cos(psi)])
        right = np.array([math.cos(psi), math.sin(psi)])
        pts = [t + d * fwd + x * right for d, x in zip(rng.uniform(8, 30, 3), (6.0, 0.0, -6.0))]
        th = (bearing_angle(t, pts[0], pts[1]), bearing_angle(t, pts[1], pts[2]))
        got = translation_from_triple(*pts, *th, Pose2(*t, 0))
        coarse_grid = bearing_residual_grid(pts, th, t, 2.0, 401)
        fine = bearing_residual_grid(pts, th, coarse_grid, 0.02, 401)
        assert math.dist(got, fine) < 1e-3
        assert math.dist(got, t) < 1e-9


def test_translation_collinear_is_none():
    # camera on the landmark line sees zero angles, or pi when it sits between them
    t = (0.0, 0.0)
    l1, l2, l3 = (0, 10), (0, 20), (0, 30)
    th = (bearing_angle(t, l1, l2), bearing_angle(t, l2, l3))
    assert th == (0.0, 0.0)
    assert translation_from_triple(l1, l2, l3, *th) is None
    assert translation_from_triple(l1, l2, l3, 1e-12, 1e-12, params=AlignParams(min_triple_angle=1e-15)) is None
    assert translation_from_triple((0, -10), (0, 10), (0, 30), math.pi, 0.0) is None


def test_translation_ignores_heading():
    t = (1.0, 2.0)
    l1, l2, l3 = (8.0, 20.0), (1.0, 25.0), (-6.0, 19.0)
    th = (bearing_angle(t, l1, l2), bearing_angle(t, l2, l3))
    a = translation_from_triple(l1, l2, l3, *th, Pose2(1.2, 2.1, 0.0))
    b = translation_from_triple(l1, l2, l3, *th, Pose2(1.2, 2.1, 2.5))
    assert a == b


def test_translation_small_angle_skipped():
    assert translation_from_triple((1, 10), (0, 10), (-1, 10), 0.01, 0.1) is None


# --------------------------------------------------------------- rotation

def synth_pairs(pose, poles, intr):
    pairs = []
    for pole in poles:
        x, y = pose.to_camera(pole.east, pole.north)
        pairs.append((Observation(intr.fx * x / y + intr.cx, pole.label), pole))
    return pairs


def test_rotation_fixed_point(intr):
    pose = Pose2(0, 0, 0.4)
    pole = Pole(1, -3.0, 12.0, P)
    res = optimize_rotation((0, 0), synth_pairs(pose, [pole], intr), intr, 0.4)
    assert res.ok and res.heading == pytest.approx(0.4, abs=1e-12) and res.cost < 1e-20


def test_rotation_converges_from_offset(intr):
    rng = np.random.default_rng(2)
    for _ in range(50):
        pose = Pose2(*rng.uniform(-5, 5, 2), rng.uniform(-math.pi, math.pi))
        poles = [Pole(i, *(pose.xy + d * pose.forward + x * np.array([math.cos(pose.heading), math.sin(pose.heading)])), P)
                 for i, (d, x) in enumerate(zip(rng.uniform(5, 40, 4), rng.uniform(-4, 4, 4)))]
        res = optimize_rotation(pose.xy, synth_pairs(pose, poles, intr), intr, pose.heading + 0.1)
        assert abs(math.remainder(res.heading - pose.heading, 2 * math.pi)) < 1e-9


def test_rotation_all_behind(intr):
    res = optimize_rotation((0, 0), [(Observation(320.0, P), Pole(1, 0.0, -10.0, P))], intr, 0.0)
    assert not res.ok and res.heading == 0.0


def test_rotation_cost_non_increasing(intr):
    pose = Pose2(0, 0, 0.0)
    poles = [Pole(1, -4.0, 15.0, P), Pole(2, 5.0, 30.0, P), Pole(3, 1.0, 9.0, P)]
    pairs = [(Observation(o.u + n, P), p) for (o, p), n in zip(synth_pairs(pose, poles, intr), (3, -2, 1))]
    xy = np.array([[p.east, p.north] for _, p in pairs])
    u = np.array([o.u for o, _ in pairs])
    costs = [rotation_cost((0, 0), 0.3, xy, u, intr)]
    for iters in range(1, 6):
        res = optimize_rotation((0, 0), pairs, intr, 0.3, AlignParams(gn_max_iters=iters))
        costs.append(res.cost)
    assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))


def test_gradient_finite_difference(intr):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        t = rng.uniform(-5, 5, 2)
        psi = rng.uniform(-math.pi, math.pi)
        pose = Pose2(*t, psi)
        right = np.array([math.cos(psi), math.sin(psi)])
        xy = np.array([t + d * pose.forward + x * right for d, x in zip(rng.uniform(5, 40, 5), rng.uniform(-6, 6, 5))])
        u = rng.uniform(0, 640, 5)
        psi_eval = psi + rng.uniform(-0.1, 0.1)
        g = rotation_gradient(t, psi_eval, xy, u, intr)
        fd = central_difference(lambda p: rotation_cost(t, p, xy, u, intr), psi_eval)
        worst = max(worst, abs(g - fd) / max(abs(fd), 1e-8))
    assert worst < 1e-5


# -------------------------------------------------------------- alignment

def scene():
    cmap = CompactMap([Pole(1, 6.0, 20.0, P), Pole(2, 1.0, 28.0, SemanticLabel.Lamp),
                       Pole(3, -5.0, 22.0, P), Pole(4, -1.0, 14.0, SemanticLabel.TreeTrunk)])
    return cmap, Pose2(0.0, 0.0, 0.0)


def observe(pose, cmap, intr):
    projs = visible_projections(pose, intr, cmap)
    return [Observation(p.u, p.label) for p in projs], [p.pole_id for p in projs]


def test_align_recovers_truth(intr):
    cmap, truth = scene()
    obs, mapping = observe(truth, cmap, intr)
    coarse = Pose2(0.3, -0.4, 0.02)
    params = AlignParams(require_tight_spread=False)
    got = align_pose(coarse, obs, mapping, cmap, intr, WeightParams(), params)
    assert got is not None
    assert math.hypot(got.pose.east - truth.east, got.pose.north - truth.north) < 1e-6
    wc = pose_log_weight(coarse, obs, mapping, cmap, intr, WeightParams())
    assert got.log_weight > wc and 0 < got.normalized_weight <= 1


def test_align_tight_spread_accepts_clear_win(intr):
    cmap, truth = scene()
    obs, mapping = observe(truth, cmap, intr)
    got = align_pose(Pose2(0.3, -0.4, 0.02), obs, mapping, cmap, intr, WeightParams(), AlignParams())
    assert got is not None and (1 - got.normalized_weight) * 1000 < 1.0


def test_align_needs_three(intr):
    cmap, truth = scene()
    obs, mapping = observe(truth, cmap, intr)
    mapping = [NONE, NONE] + mapping[2:]
    rep = align_pose_report(truth, obs, mapping[:2] + [NONE] * (len(mapping) - 2), cmap, intr, WeightParams())
    assert rep.accepted is None and "fewer than 3" in rep.reason


def test_align_distance_gate(intr):
    cmap, truth = scene()
    obs, mapping = observe(truth, cmap, intr)
    rep = align_pose_report(Pose2(1.5, 0.0, 0.0), obs, mapping, cmap, intr, WeightParams(),
                            AlignParams(require_tight_spread=False))
    assert rep.accepted is None and "d0" in rep.reason


def test_align_never_worse_than_coarse(intr):
    rng = np.random.default_rng(13)
    cmap, truth = scene()
    clean, mapping = observe(truth, cmap, intr)
    params = AlignParams(require_tight_spread=False)
    for _ in range(50):
        obs = [Observation(o.u + rng.normal(0, 2), o.label) for o in clean]
        coarse = Pose2(*rng.normal(0, 0.5, 2), rng.normal(0, 0.02))
        got = align_pose(coarse, obs, mapping, cmap, intr, WeightParams(), params)
        if got is not None:
            wc = pose_log_weight(coarse, obs, mapping, cmap, intr, WeightParams())
            assert got.log_weight > wc
            assert math.hypot(got.pose.east - coarse.east, got.pose.north - coarse.north) < params.d0


def test_report_json(intr):
    cmap, truth = scene()
    obs, mapping = observe(truth, cmap, intr)
    rep = align_pose_report(Pose2(0.2, 0.1, 0.0), obs, mapping, cmap, intr, WeightParams())
    js = rep.to_json()
    assert js["accepted"] is True and len(js["candidates"]) == 4


# ------------------------------------------------------------- resample

def aligned(w_star):
    return AlignedPose(Pose2(1.0, 2.0, 0.5), 1.0, (1, 2, 3), 0.0, w_star)


def test_accurate_resample_zero_spread():
    ps = ParticleSet(np.zeros((50, 3)), np.full(50, 0.02))
    out = accurate_resample(ps, aligned(1.0), AlignParams(), np.random.default_rng(0))
    assert len(out) == 50 and np.all(out.poses == [1.0, 2.0, 0.5])


def test_accurate_resample_spread():
    n = 10000
    ps = ParticleSet(np.zeros((n, 3)), np.full(n, 1 / n))
    out = accurate_resample(ps, aligned(0.999), AlignParams(), np.random.default_rng(1))
    assert np.std(out.poses[:, 0]) == pytest.approx(1.0, rel=0.05)
    assert np.std(out.poses[:, 1]) == pytest.approx(1.0, rel=0.05)
    assert np.allclose(out.weights, 1 / n)
