"""Particle filter over planar poses with pole-column observations."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .compact_map import (
    DEFAULT_MAX_RANGE, CameraIntrinsics, CompactMap, Pose2, Projection,
    project_all, project_pole, wrap_angle,
)
from .pole_extraction import Observation

log = logging.getLogger(__name__)

NONE = -1
DEFAULT_GATE_PX = 40.0
DEFAULT_P0 = 0.6
STRAIGHT_LINE_OMEGA = 1e-9
# log of the smallest positive double: raw weights below it are zero in linear arithmetic
LOG_TINY = math.log(5e-324)


class FilterDivergence(RuntimeError):
    """Every particle received zero weight.

    ``particles`` holds the ensemble after the update with weights reset to
    uniform, so the caller can continue if it chooses to.
    """

    def __init__(self, particles: "ParticleSet"):
        super().__init__("all particles received zero weight")
        self.particles = particles


@dataclass(frozen=True)
class Odometry:
    v: float
    omega: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (math.isfinite(self.v) and math.isfinite(self.omega)):
            raise ValueError("odometry must be finite")


@dataclass(frozen=True)
class MotionNoise:
    alpha1: float = 0.0
    alpha2: float = 0.0
    alpha3: float = 0.0
    alpha4: float = 0.0
    alpha5: float = 0.0
    alpha6: float = 0.0

    def __post_init__(self):
        if any(a < 0 for a in self.alphas):
            raise ValueError("motion noise coefficients must be nonnegative")

    @property
    def alphas(self) -> tuple[float, ...]:
        return (self.alpha1, self.alpha2, self.alpha3, self.alpha4, self.alpha5, self.alpha6)

    def sigmas(self, v: float, omega: float) -> tuple[float, float, float]:
        """Standard deviations of the velocity, turn-rate and final-rotation perturbations."""
        av, aw = abs(v), abs(omega)
        return (self.alpha1 * av + self.alpha2 * aw,
                self.alpha3 * av + self.alpha4 * aw,
                self.alpha5 * av + self.alpha6 * aw)


@dataclass(frozen=True)
class WeightParams:
    p_d: float = 0.9
    kappa: float = 0.01
    sigma_px: float = 2.0
    beta_ref: float = 20.0

    def __post_init__(self):
        if not 0 < self.p_d < 1:
            raise ValueError("p_d must lie in (0, 1)")
        if not self.kappa > 0 or not self.sigma_px > 0 or not self.beta_ref > 0:
            raise ValueError("kappa, sigma_px and beta_ref must be positive")

    @property
    def log_matched_peak(self) -> float:
        return math.log(self.p_d / self.kappa)

    @property
    def log_missed(self) -> float:
        return math.log(1.0 - self.p_d)


@dataclass(frozen=True)
class Assignment:
    """Observation-to-pole mapping. ``mapping[i]`` is a pole id or ``NONE``."""

    mapping: tuple[int, ...]
    total_loss: float
    gate_px: float = DEFAULT_GATE_PX

    @property
    def unmatched(self) -> int:
        return sum(1 for k in self.mapping if k == NONE)

    @property
    def objective(self) -> float:
        """Minimized quantity: matched losses plus ``gate_px`` per unmatched observation."""
        return self.total_loss + self.gate_px * self.unmatched


@dataclass(frozen=True)
class Particle:
    pose: Pose2
    weight: float


@dataclass
class ParticleSet:
    """Ensemble stored column-wise.

    ``poses`` is ``(N, 3)`` rows of (east, north, heading). After a
    measurement update ``associations`` is ``(N, n)`` pole ids (``NONE`` for
    clutter) and ``log_likelihood`` is the per-particle log of the raw
    observation product.
    """

    poses: np.ndarray
    weights: np.ndarray
    associations: np.ndarray | None = None
    log_likelihood: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.weights)

    def __getitem__(self, i: int) -> Particle:
        return Particle(Pose2.from_array(self.poses[i]), float(self.weights[i]))

    @classmethod
    def from_particles(cls, particles: Sequence[Particle]) -> "ParticleSet":
        poses = np.array([p.pose.as_array() for p in particles], dtype=float).reshape(-1, 3)
        return cls(poses, np.array([p.weight for p in particles], dtype=float))

    @classmethod
    def around(cls, pose: Pose2, n: int, sigma_trans: float, sigma_rot: float,
               rng: np.random.Generator) -> "ParticleSet":
        """Draw ``n`` equally weighted particles from a Gaussian prior."""
        if n < 1:
            raise ValueError("particle count must be >= 1")
        noise = rng.standard_normal((n, 3)) * np.array([sigma_trans, sigma_trans, sigma_rot])
        poses = pose.as_array()[None, :] + noise
        poses[:, 2] = wrap_angle(poses[:, 2])
        return cls(poses, np.full(n, 1.0 / n))

    def best_index(self) -> int:
        return int(np.argmax(self.weights))


# ---------------------------------------------------------------- motion

def advance(poses: np.ndarray, v, omega, gamma, dt: float) -> np.ndarray:
    """Move pose rows along circular arcs; arrays broadcast against ``poses[:, 0]``."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    psi = poses[:, 2]
    v = np.broadcast_to(np.asarray(v, dtype=float), psi.shape)
    omega = np.broadcast_to(np.asarray(omega, dtype=float), psi.shape)
    straight = np.abs(omega) < STRAIGHT_LINE_OMEGA
    safe_w = np.where(straight, 1.0, omega)
    half = 0.5 * omega * dt
    mid = psi + half
    turned = psi + omega * dt
    # (v/w)(cos(psi+w dt) - cos psi) rewritten as a product: no cancellation for small w
    chord = 2.0 * v / safe_w * np.sin(half)
    de = np.where(straight, -v * dt * np.sin(psi), -chord * np.sin(mid))
    dn = np.where(straight, v * dt * np.cos(psi), chord * np.cos(mid))
    out = np.empty_like(poses)
    out[:, 0] = poses[:, 0] + de
    out[:, 1] = poses[:, 1] + dn
    out[:, 2] = wrap_angle(turned + np.asarray(gamma, dtype=float) * dt)
    return out


def motion_update(particles: ParticleSet, odo: Odometry, noise: MotionNoise,
                  rng: np.random.Generator) -> ParticleSet:
    n = len(particles)
    if n == 0:
        raise ValueError("empty particle set")
    sv, sw, sg = noise.sigmas(odo.v, odo.omega)
    eps = rng.standard_normal((n, 3))
    v_hat = odo.v + sv * eps[:, 0]
    w_hat = odo.omega + sw * eps[:, 1]
    gamma = sg * eps[:, 2]
    return replace(particles, poses=advance(particles.poses, v_hat, w_hat, gamma, odo.dt),
                   associations=None, log_likelihood=None)


# ----------------------------------------------------------- association

def solve_assignment(cost: np.ndarray, gate_px: float) -> np.ndarray:
    """Exact min-cost injective mapping of rows to columns with a per-row NONE option.

    ``cost`` is ``(n, K)`` with ``inf`` marking forbidden pairs. Each row may
    instead be left unmatched at cost ``gate_px``. Returns the chosen column
    per row or ``NONE``.
    """
    n, k = cost.shape
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    aug = np.full((n, k + n), np.inf)
    aug[:, :k] = cost
    aug[np.arange(n), k + np.arange(n)] = gate_px
    rows, cols = linear_sum_assignment(aug)
    out = np.full(n, NONE, dtype=np.int64)
    hit = cols < k
    out[rows[hit]] = cols[hit]
    return out


def associate(observations: Sequence[Observation], projections: Sequence[Projection],
              gate_px: float = DEFAULT_GATE_PX) -> Assignment:
    n, k = len(observations), len(projections)
    cost = np.full((n, k), np.inf)
    for i, obs in enumerate(observations):
        for j, proj in enumerate(projections):
            if obs.label == proj.label:
                e = abs(obs.u - proj.u)
                if e <= gate_px:
                    cost[i, j] = e
    cols = solve_assignment(cost, gate_px)
    mapping = tuple(NONE if c == NONE else projections[c].pole_id for c in cols)
    total = float(sum(cost[i, c] for i, c in enumerate(cols) if c != NONE))
    return Assignment(mapping, total, gate_px)


# ------------------------------------------------------------ likelihood

def observation_likelihood(obs: Observation, matched: Projection | None,
                           params: WeightParams) -> float:
    if matched is None:
        return 1.0 - params.p_d
    e = abs(obs.u - matched.u)
    d = (matched.range / params.beta_ref) * e * e / params.sigma_px ** 2
    return params.p_d / params.kappa * math.exp(-0.5 * d)


def pose_log_weight(pose: Pose2, observations: Sequence[Observation], mapping: Sequence[int],
                    cmap: CompactMap, intr: CameraIntrinsics, params: WeightParams) -> float:
    """Log of the observation product at ``pose`` under a fixed association.

    A mapped pole that no longer projects into the image counts as unmatched.
    """
    total = 0.0
    for obs, pid in zip(observations, mapping):
        proj = None if pid == NONE else project_pole(pose, intr, cmap[pid])
        if proj is None:
            total += params.log_missed
        else:
            e = obs.u - proj.u
            total += params.log_matched_peak - 0.5 * (proj.range / params.beta_ref) * e * e / params.sigma_px ** 2
    return total


def _associate_all(u_obs, lab_obs, u, visible, cmap, gate_px):
    """Per-particle exact association over vectorized projections; returns column indices."""
    e = np.abs(u_obs[None, :, None] - u[:, None, :])
    feasible = (visible[:, None, :]
                & (lab_obs[None, :, None] == cmap.label_codes[None, None, :])
                & (e <= gate_px))
    row_deg = feasible.sum(axis=2)
    col_deg = feasible.sum(axis=1)
    # a feasible graph that is already a matching is its own optimum
    simple = (row_deg <= 1).all(axis=1) & (col_deg <= 1).all(axis=1)
    match = np.where(row_deg >= 1, np.argmax(feasible, axis=2), NONE)
    for m in np.flatnonzero(~simple):
        cols = np.flatnonzero(feasible[m].any(axis=0))
        cost = np.where(feasible[m][:, cols], e[m][:, cols], np.inf)
        sub = solve_assignment(cost, gate_px)
        match[m] = np.where(sub == NONE, NONE, cols[np.maximum(sub, 0)])
    return match, e


def measurement_update(particles: ParticleSet, observations: Sequence[Observation],
                       cmap: CompactMap, intr: CameraIntrinsics, params: WeightParams,
                       gate_px: float = DEFAULT_GATE_PX,
                       max_range: float = DEFAULT_MAX_RANGE) -> ParticleSet:
    """Reweight by the observation product and normalize.

    Weights are combined in the log domain. Raises :class:`FilterDivergence`
    when every raw weight (prior times product) would underflow to zero in
    double precision.
    """
    n_part = len(particles)
    if n_part == 0:
        raise ValueError("empty particle set")
    n = len(observations)
    assoc = np.full((n_part, n), NONE, dtype=np.int64)
    loglik = np.zeros(n_part)
    if n:
        u_obs = np.array([o.u for o in observations], dtype=float)
        lab_obs = np.array([o.label.code for o in observations], dtype=np.int64)
        if len(cmap):
            u, rng, visible = project_all(particles.poses, intr, cmap, max_range)
            match, e = _associate_all(u_obs, lab_obs, u, visible, cmap, gate_px)
            hit = match != NONE
            idx = np.maximum(match, 0)
            e_hit = np.take_along_axis(e, idx[:, :, None], axis=2)[:, :, 0]
            r_hit = np.take_along_axis(rng, idx, axis=1)
            d = (r_hit / params.beta_ref) * e_hit ** 2 / params.sigma_px ** 2
            terms = np.where(hit, params.log_matched_peak - 0.5 * d, params.log_missed)
            loglik = terms.sum(axis=1)
            assoc = np.where(hit, cmap.ids[idx], NONE)
        else:
            loglik = np.full(n_part, n * params.log_missed)
    with np.errstate(divide="ignore"):
        logw = np.log(particles.weights) + loglik
    top = np.max(logw)
    if not top >= LOG_TINY:
        uniform = ParticleSet(particles.poses, np.full(n_part, 1.0 / n_part), assoc, loglik)
        raise FilterDivergence(uniform)
    w = np.exp(logw - top)
    return ParticleSet(particles.poses, w / w.sum(), assoc, loglik)


# ---------------------------------------------------------- resampling

def effective_particle_count(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def systematic_resample_indices(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.minimum(np.searchsorted(cumulative, positions, side="right"), n - 1)


def maybe_resample(particles: ParticleSet, p0: float, rng: np.random.Generator) -> ParticleSet:
    """Systematic resampling when N_eff / N < p0; returns ``particles`` itself otherwise."""
    n = len(particles)
    if effective_particle_count(particles.weights) / n >= p0:
        return particles
    idx = systematic_resample_indices(particles.weights, rng)
    return ParticleSet(
        particles.poses[idx].copy(),
        np.full(n, 1.0 / n),
        None if particles.associations is None else particles.associations[idx].copy(),
        None if particles.log_likelihood is None else particles.log_likelihood[idx].copy(),
    )


def estimate_state(particles: ParticleSet) -> Pose2:
    w = particles.weights
    east = float(np.dot(w, particles.poses[:, 0]))
    north = float(np.dot(w, particles.poses[:, 1]))
    s = float(np.dot(w, np.sin(particles.poses[:, 2])))
    c = float(np.dot(w, np.cos(particles.poses[:, 2])))
    if math.hypot(s, c) < 1e-12:
        heading = float(particles.poses[particles.best_index(), 2])
    else:
        heading = math.atan2(s, c)
    return Pose2(east, north, heading)
