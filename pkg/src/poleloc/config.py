"""Flat ``key = value`` configuration files mapped onto typed dataclasses."""
from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from .coarse_localization import MotionNoise, WeightParams
from .compact_map import CameraIntrinsics, SemanticLabel
from .pole_extraction import ExtractionParams
from .pose_alignment import AlignParams
from .simulator import SensorNoise, WorldConfig


class ConfigError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def format_kv(values: dict[str, object]) -> str:
    return "".join(f"{k} = {_to_text(v)}\n" for k, v in values.items())


def _to_text(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_CONVERTERS = {"int": int, "float": float, "str": str, "bool": _parse_bool}


class FlatConfig:
    """Mixin giving a flat dataclass string parsing and overriding."""

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, values: dict[str, str], base=None, source: str = "<config>"):
        hints = typing.get_type_hints(cls)
        cfg = base if base is not None else cls()
        updates = {}
        for key, text in values.items():
            if key not in hints:
                raise ConfigError(f"{source}: unknown key {key!r}")
            conv = _CONVERTERS[hints[key].__name__]
            try:
                updates[key] = conv(text)
            except ValueError as e:
                raise ConfigError(f"{source}: bad value for {key!r}: {e}") from None
        return dataclasses.replace(cfg, **updates)

    @classmethod
    def from_file(cls, path, base=None):
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"{path}: cannot read ({e.strerror})") from None
        return cls.from_mapping(parse_kv(text, str(path)), base, str(path))

    def as_mapping(self) -> dict[str, object]:
        return dataclasses.asdict(self)


def parse_label_map(text: str) -> dict[int, SemanticLabel]:
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        cid, _, name = item.partition(":")
        out[int(cid)] = SemanticLabel.parse(name.strip())
    return out


def parse_label_mix(text: str) -> dict[SemanticLabel, float]:
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        name, _, p = item.partition(":")
        out[SemanticLabel.parse(name.strip())] = float(p)
    return out


@dataclass(frozen=True)
class RunConfig(FlatConfig):
    map: str = ""
    odometry: str = ""
    observations: str = ""
    masks: str = ""
    scenario: str = ""
    out: str = "out"
    seed: int = 0
    particles: int = 1000
    fx: float = 500.0
    cx: float = 320.0
    image_width: int = 640
    image_height: int = 480
    max_range: float = 80.0
    init_east_m: float = 0.0
    init_north_m: float = 0.0
    init_psi_rad: float = 0.0
    init_sigma_trans_m: float = 0.5
    init_sigma_rot_rad: float = 0.02
    p_d: float = 0.9
    kappa: float = 0.01
    sigma_px: float = 2.0
    beta_ref: float = 20.0
    gate_px: float = 40.0
    p0: float = 0.6
    alpha1: float = 0.105
    alpha2: float = 0.0
    alpha3: float = 0.0035
    alpha4: float = 0.105
    alpha5: float = 0.0005
    alpha6: float = 0.005
    d0: float = 1.0
    beta_t: float = 1000.0
    beta_theta: float = 200.0
    min_triple_angle: float = 0.05
    gn_max_iters: int = 20
    gn_tol: float = 1e-9
    require_tight_spread: bool = True
    c1: int = 60
    c2: int = 1
    c3: int = 15
    label_map: str = "1:Pole,2:Lamp,3:TreeTrunk,4:TrafficSign,5:Other"
    alignment_enabled: bool = True
    alignment_every: int = 1
    diagnostics: bool = False

    def validate(self) -> None:
        if self.particles < 1:
            raise ConfigError("particles must be >= 1")
        if self.alignment_every < 1:
            raise ConfigError("alignment_every must be >= 1")
        try:
            self.intrinsics(), self.weight_params(), self.align_params()
            self.motion_noise(), self.extraction_params()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.cx, self.image_width, self.image_height)

    def weight_params(self) -> WeightParams:
        return WeightParams(self.p_d, self.kappa, self.sigma_px, self.beta_ref)

    def align_params(self) -> AlignParams:
        return AlignParams(self.d0, self.beta_t, self.beta_theta, self.min_triple_angle,
                           self.gn_max_iters, self.gn_tol, self.require_tight_spread)

    def motion_noise(self) -> MotionNoise:
        return MotionNoise(self.alpha1, self.alpha2, self.alpha3, self.alpha4, self.alpha5, self.alpha6)

    def extraction_params(self) -> ExtractionParams:
        return ExtractionParams(self.c1, self.c2, self.c3, parse_label_map(self.label_map))


@dataclass(frozen=True)
class ScenarioConfig(FlatConfig):
    seed: int = 0
    arena_min_east: float = -110.0
    arena_max_east: float = 110.0
    arena_min_north: float = -110.0
    arena_max_north: float = 110.0
    pole_count: int = 40
    label_mix: str = "Pole:0.4,Lamp:0.3,TreeTrunk:0.2,TrafficSign:0.1"
    trajectory: str = "loop"
    loop_radius: float = 500.0 / (2.0 * math.pi)
    loop_center_east: float = 0.0
    loop_center_north: float = 0.0
    waypoints: str = ""  # "e n; e n; ..."
    speed: float = 5.0
    frame_rate: float = 2.0
    duration_s: float = 0.0  # <= 0: one lap / the full polyline
    fx: float = 500.0
    cx: float = 320.0
    image_width: int = 640
    image_height: int = 480
    max_range: float = 80.0
    sigma_px: float = 2.0
    p_d: float = 0.9
    clutter_rate: float = 1.0
    odo_alpha1: float = 0.07
    odo_alpha2: float = 0.0
    odo_alpha3: float = 0.0023
    odo_alpha4: float = 0.07
    render_masks: bool = False
    stripe_width: int = 3

    def world(self) -> WorldConfig:
        wps = tuple(tuple(float(x) for x in p.split()) for p in self.waypoints.split(";") if p.strip())
        return WorldConfig(
            arena=(self.arena_min_east, self.arena_max_east, self.arena_min_north, self.arena_max_north),
            pole_count=self.pole_count,
            label_mix=parse_label_mix(self.label_mix),
            trajectory=self.trajectory,
            loop_radius=self.loop_radius,
            loop_center=(self.loop_center_east, self.loop_center_north),
            waypoints=wps,
            speed=self.speed,
            frame_rate=self.frame_rate,
            duration_s=self.duration_s if self.duration_s > 0 else None,
            seed=self.seed,
        )

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.cx, self.image_width, self.image_height)

    def sensor_noise(self) -> SensorNoise:
        return SensorNoise(self.sigma_px, self.p_d, self.clutter_rate)

    def odometry_noise(self) -> MotionNoise:
        return MotionNoise(self.odo_alpha1, self.odo_alpha2, self.odo_alpha3, self.odo_alpha4)
