"""End-to-end frame loop: coarse particle filter followed by optional pose alignment."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coarse_localization import (
    FilterDivergence, Odometry, ParticleSet, effective_particle_count, estimate_state,
    maybe_resample, measurement_update, motion_update,
)
from .compact_map import CompactMap, Pose2
from .config import RunConfig, ScenarioConfig
from .pole_extraction import Observation, SegmentationMask
from .pose_alignment import accurate_resample, align_pose_report
from .simulator import generate_world, render_mask, synthesize_observations, synthesize_odometry

log = logging.getLogger(__name__)


@dataclass
class Scenario:
    cmap: CompactMap
    truth: list[tuple[float, Pose2]]
    odometry: list[Odometry]
    observations: list[list[Observation]]
    masks: list[SegmentationMask] = field(default_factory=list)

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.truth]


def run_scenario(cfg: ScenarioConfig) -> Scenario:
    world = cfg.world()
    intr = cfg.intrinsics()
    cmap, truth = generate_world(world)
    odo_rng, obs_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    odometry = synthesize_odometry(truth, cfg.odometry_noise(), odo_rng) if len(truth) > 1 else []
    noise = cfg.sensor_noise()
    observations = [synthesize_observations(p, cmap, intr, noise, obs_rng, world.label_mix, cfg.max_range)
                    for _, p in truth]
    masks = []
    if cfg.render_masks:
        masks = [render_mask(p, cmap, intr, cfg.stripe_width, max_range=cfg.max_range) for _, p in truth]
    return Scenario(cmap, truth, odometry, observations, masks)


@dataclass
class FrameResult:
    pose: Pose2
    mode: str
    record: dict


class Localizer:
    """Stateful per-frame driver of the coarse-to-fine pipeline."""

    def __init__(self, cmap: CompactMap, cfg: RunConfig, rng: np.random.Generator | None = None):
        cfg.validate()
        self.cmap = cmap
        self.cfg = cfg
        self.intr = cfg.intrinsics()
        self.weight_params = cfg.weight_params()
        self.align_params = cfg.align_params()
        self.noise = cfg.motion_noise()
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        prior = Pose2(cfg.init_east_m, cfg.init_north_m, cfg.init_psi_rad)
        self.particles = ParticleSet.around(prior, cfg.particles, cfg.init_sigma_trans_m,
                                            cfg.init_sigma_rot_rad, self.rng)
        self.frame = 0
        self.diverged = False

    def step(self, odo: Odometry | None, observations: Sequence[Observation]) -> FrameResult:
        cfg = self.cfg
        rec: dict = {"frame": self.frame, "n_obs": len(observations)}
        if odo is not None:
            self.particles = motion_update(self.particles, odo, self.noise, self.rng)
        try:
            self.particles = measurement_update(self.particles, observations, self.cmap, self.intr,
                                                self.weight_params, cfg.gate_px, cfg.max_range)
        except FilterDivergence as e:
            log.warning("frame %d: filter divergence, weights reset to uniform", self.frame)
            self.particles = e.particles
            self.diverged = True
            rec["divergence"] = True
        best = self.particles.best_index()
        mapping = self.particles.associations[best]
        n_eff = effective_particle_count(self.particles.weights)
        rec["n_eff"] = n_eff
        resampled = maybe_resample(self.particles, cfg.p0, self.rng)
        rec["resampled"] = resampled is not self.particles
        self.particles = resampled
        coarse = estimate_state(self.particles)
        rec["coarse"] = [coarse.east, coarse.north, coarse.heading]
        pose, mode = coarse, "coarse"
        if cfg.alignment_enabled and self.frame % cfg.alignment_every == 0:
            report = align_pose_report(coarse, observations, mapping, self.cmap, self.intr,
                                       self.weight_params, self.align_params)
            rec["alignment"] = report.to_json() if cfg.diagnostics else {
                "accepted": report.accepted is not None, "reason": report.reason}
            if report.accepted is not None:
                self.particles = accurate_resample(self.particles, report.accepted, self.align_params, self.rng)
                pose, mode = report.accepted.pose, "aligned"
                rec["alignment"]["w_star"] = report.accepted.normalized_weight
                rec["alignment"]["triple"] = list(report.accepted.source_triple)
        rec["mode"] = mode
        self.frame += 1
        return FrameResult(pose, mode, rec)


def run_localization(cmap: CompactMap, odometry: Sequence[Odometry],
                     observations: Sequence[Sequence[Observation]], cfg: RunConfig):
    """Run every frame; ``odometry[k]`` moves the vehicle from frame k to k+1.

    Returns the per-frame results and whether any frame diverged.
    """
    if len(odometry) != max(len(observations) - 1, 0):
        raise ValueError(f"{len(observations)} observation frames need {len(observations) - 1} "
                         f"odometry readings, got {len(odometry)}")
    loc = Localizer(cmap, cfg)
    results = [loc.step(None if k == 0 else odometry[k - 1], obs) for k, obs in enumerate(observations)]
    return results, loc.diverged
