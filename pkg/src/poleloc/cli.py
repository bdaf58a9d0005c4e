"""Command line entry point: ``simulate``, ``localize``, ``extract``, ``evaluate``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .compact_map import MapLoadError, load_map, save_map
from .config import ConfigError, FlatConfig, RunConfig, ScenarioConfig, format_kv
from .evaluation import compute_metrics, frame_errors
from .formats import (
    InputError, read_observations, read_odometry, read_trajectory, read_truth,
    write_frame_errors, write_observations, write_odometry, write_trajectory, write_truth,
)
from .pipeline import run_localization, run_scenario
from .pole_extraction import ExtractionParams, MaskLoadError, extract_from_mask, load_mask, save_mask

log = logging.getLogger("poleloc")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2

# shorthand flags from the command contract; every config key also gets --key / --key-with-dashes
_ALIASES = {"alignment_every": ["--alignment-every"], "particles": ["--particles"],
            "seed": ["--seed"], "out": ["--out"]}


def _add_config_flags(p: argparse.ArgumentParser, cls: type[FlatConfig], skip=()) -> None:
    group = p.add_argument_group("configuration overrides")
    for key in cls.keys():
        if key in skip:
            continue
        names = {f"--{key}", f"--{key.replace('_', '-')}", *_ALIASES.get(key, [])}
        group.add_argument(*sorted(names), dest=f"cfg_{key}", metavar="VALUE", default=None)


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}


def _resolve(base: Path | None, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() or base is None else base / p


def _load_config(cls, args):
    cfg = cls()
    base = None
    if args.config:
        cfg = cls.from_file(args.config)
        base = Path(args.config).parent
    return cls.from_mapping(_overrides(args), cfg, "<command line>"), base


def _extraction_from(args) -> ExtractionParams:
    cfg, _ = _load_config(RunConfig, args)
    return cfg.extraction_params()


def _sorted_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise InputError(f"{directory}: not a directory")
    return sorted((p for p in directory.iterdir() if p.is_file()), key=lambda p: p.name)


def _extract_dir(directory: Path, params: ExtractionParams):
    frames = []
    for path in _sorted_files(directory):
        try:
            mask = load_mask(path, params)
        except MaskLoadError as e:
            raise InputError(str(e)) from None
        frames.append(extract_from_mask(mask, params))
    return frames


# --------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    cfg, _ = _load_config(ScenarioConfig, args)
    out = Path(args.out_dir or "sim")
    scenario = run_scenario(cfg)
    try:
        out.mkdir(parents=True, exist_ok=True)
        save_map(scenario.cmap, out / "map.csv")
        write_truth(out / "truth.csv", scenario.truth)
        write_odometry(out / "odometry.csv", scenario.times, scenario.odometry)
        write_observations(out / "observations.csv", scenario.observations)
        if scenario.masks:
            (out / "masks").mkdir(exist_ok=True)
            for k, mask in enumerate(scenario.masks):
                save_mask(mask, out / "masks" / f"frame_{k:06d}.pgm")
        start = scenario.truth[0][1]
        run = {"map": "map.csv", "odometry": "odometry.csv", "observations": "observations.csv",
               "seed": cfg.seed, "fx": cfg.fx, "cx": cfg.cx, "image_width": cfg.image_width,
               "image_height": cfg.image_height, "max_range": cfg.max_range,
               "init_east_m": start.east, "init_north_m": start.north, "init_psi_rad": start.heading}
        (out / "run.cfg").write_text(format_kv(run), encoding="utf-8")
    except OSError as e:
        log.error("%s: cannot write output (%s)", out, e.strerror)
        return EXIT_INPUT
    log.info("wrote %d frames, %d poles to %s", len(scenario.truth), len(scenario.cmap), out)
    return EXIT_OK


def _localize_inputs(cfg: RunConfig, base: Path | None):
    if cfg.scenario:
        scenario = run_scenario(ScenarioConfig.from_file(_resolve(base, cfg.scenario)))
        return scenario.cmap, scenario.odometry, scenario.observations
    if not cfg.map or not cfg.odometry:
        raise InputError("localize needs 'map' and 'odometry' (or a 'scenario')")
    cmap = load_map(_resolve(base, cfg.map))
    times, odometry = read_odometry(_resolve(base, cfg.odometry))
    if cfg.observations and cfg.masks:
        raise InputError("give either 'observations' or 'masks', not both")
    if cfg.observations:
        observations = read_observations(_resolve(base, cfg.observations), len(times))
    elif cfg.masks:
        observations = _extract_dir(_resolve(base, cfg.masks), cfg.extraction_params())
        if len(observations) != len(times):
            raise InputError(f"{cfg.masks}: {len(observations)} masks for {len(times)} odometry frames")
    else:
        raise InputError("localize needs an observation source: 'observations', 'masks' or 'scenario'")
    return cmap, odometry, observations


def cmd_localize(args) -> int:
    cfg, base = _load_config(RunConfig, args)
    if args.no_alignment:
        cfg = RunConfig.from_mapping({"alignment_enabled": "false"}, cfg)
    cfg.validate()
    cmap, odometry, observations = _localize_inputs(cfg, base)
    results, diverged = run_localization(cmap, odometry, observations, cfg)
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory(out / "trajectory.csv", [(r.pose, r.mode) for r in results])
        with open(out / "log.jsonl", "w", encoding="utf-8") as f:
            for r in results:
                f.write(json.dumps(r.record, sort_keys=True) + "\n")
    except OSError as e:
        log.error("%s: cannot write output (%s)", out, e.strerror)
        return EXIT_INPUT
    aligned = sum(r.mode == "aligned" for r in results)
    log.info("localized %d frames (%d aligned) -> %s", len(results), aligned, out / "trajectory.csv")
    if diverged:
        log.warning("filter diverged on at least one frame")
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_extract(args) -> int:
    params = _extraction_from(args)
    frames = _extract_dir(Path(args.mask_dir), params)
    out = Path(args.out_dir or "out")
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_observations(out / "observations.csv", frames)
    except OSError as e:
        log.error("%s: cannot write output (%s)", out, e.strerror)
        return EXIT_INPUT
    return EXIT_OK


def cmd_evaluate(args) -> int:
    estimate = read_trajectory(args.estimate)
    truth = [p for _, p in read_truth(args.truth)]
    try:
        report = compute_metrics(estimate, truth)
    except ValueError as e:
        raise InputError(str(e)) from None
    text = json.dumps(report.to_json(), indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(text + "\n", encoding="utf-8")
        write_frame_errors(out / "frame_errors.csv", *frame_errors(estimate, truth))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poleloc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic world and sensor streams")
    p.add_argument("--config", help="scenario file (key = value)")
    _add_config_flags(p, ScenarioConfig)
    p.add_argument("--out", dest="out_dir", metavar="DIR", default=None, help="output directory (default sim)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("localize", help="run the coarse-to-fine localizer")
    p.add_argument("--config", help="run configuration file (key = value)")
    p.add_argument("--no-alignment", action="store_true", help="coarse localization only")
    _add_config_flags(p, RunConfig)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("extract", help="extract pole observations from a directory of P5 masks")
    p.add_argument("mask_dir")
    p.add_argument("--config", help="run configuration file supplying c1, c2, c3, label_map")
    _add_config_flags(p, RunConfig, skip={"out"})
    p.add_argument("--out", dest="out_dir", metavar="DIR", default=None, help="output directory (default out)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("evaluate", help="compare an estimated trajectory with ground truth")
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, MapLoadError, ConfigError) as e:
        log.error("%s", e)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
