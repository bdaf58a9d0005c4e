"""CSV readers and writers for odometry, observations and trajectories.

Floats are written with ``repr`` so files round-trip exactly and identical
inputs produce byte-identical outputs.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

from .coarse_localization import Odometry
from .compact_map import Pose2, SemanticLabel
from .pole_extraction import Observation

TRUTH_HEADER = ("frame", "t_s", "east_m", "north_m", "psi_rad")
ODOMETRY_HEADER = ("t_s", "v_mps", "omega_radps")
OBSERVATIONS_HEADER = ("frame", "u_px", "label", "group_width", "pixel_count")
TRAJECTORY_HEADER = ("frame", "east_m", "north_m", "psi_rad", "mode")
FRAME_ERRORS_HEADER = ("frame", "err_trans_m", "err_rot_deg")


class InputError(ValueError):
    pass


def _f(x: float) -> str:
    return repr(float(x))


def _write(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(row) + "\n")


def _read(path, header: Sequence[str]):
    """Yield (line number, row) pairs after checking the header."""
    path = Path(path)
    try:
        f = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise InputError(f"{path}: cannot read ({e.strerror})") from None
    with f:
        reader = csv.reader(f)
        got = next(reader, None)
        if got is None or tuple(h.strip() for h in got) != tuple(header):
            raise InputError(f"{path}:1: expected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            yield lineno, row


def _parse(path, lineno, fn, text):
    try:
        return fn(text)
    except ValueError as e:
        raise InputError(f"{path}:{lineno}: {e}") from None


def write_truth(path, truth: Sequence[tuple[float, Pose2]]) -> None:
    _write(path, TRUTH_HEADER,
           ((str(k), _f(t), _f(p.east), _f(p.north), _f(p.heading)) for k, (t, p) in enumerate(truth)))


def read_truth(path) -> list[tuple[float, Pose2]]:
    out = []
    for lineno, row in _read(path, TRUTH_HEADER):
        frame, t, e, n, psi = (_parse(path, lineno, fn, x) for fn, x in zip((int, float, float, float, float), row))
        if frame != len(out):
            raise InputError(f"{path}:{lineno}: expected frame {len(out)}, got {frame}")
        out.append((t, Pose2(e, n, psi)))
    return out


def write_odometry(path, times: Sequence[float], odometry: Sequence[Odometry]) -> None:
    """One row per frame; row k holds the motion ending at frame k, row 0 is at rest."""
    if len(times) != len(odometry) + 1:
        raise ValueError("need exactly one odometry reading per frame after the first")
    rows = [(_f(times[0]), _f(0.0), _f(0.0))]
    rows += [(_f(t), _f(o.v), _f(o.omega)) for t, o in zip(times[1:], odometry)]
    _write(path, ODOMETRY_HEADER, rows)


def read_odometry(path) -> tuple[list[float], list[Odometry]]:
    """Frame times and the readings for frames 1..K-1 (dt from consecutive times)."""
    times: list[float] = []
    odo: list[Odometry] = []
    for lineno, row in _read(path, ODOMETRY_HEADER):
        t, v, w = (_parse(path, lineno, float, x) for x in row)
        if times:
            dt = t - times[-1]
            if not dt > 0:
                raise InputError(f"{path}:{lineno}: timestamps must increase")
            try:
                odo.append(Odometry(v, w, dt))
            except ValueError as e:
                raise InputError(f"{path}:{lineno}: {e}") from None
        times.append(t)
    return times, odo


def write_observations(path, frames: Sequence[Sequence[Observation]]) -> None:
    _write(path, OBSERVATIONS_HEADER,
           ((str(k), _f(o.u), o.label.value, str(o.group_width), str(o.pixel_count))
            for k, obs in enumerate(frames) for o in obs))


def read_observations(path, frame_count: int | None = None) -> list[list[Observation]]:
    """Observations grouped per frame; frames without rows are empty lists."""
    by_frame: dict[int, list[Observation]] = {}
    for lineno, row in _read(path, OBSERVATIONS_HEADER):
        frame = _parse(path, lineno, int, row[0])
        if frame < 0 or (frame_count is not None and frame >= frame_count):
            raise InputError(f"{path}:{lineno}: frame {frame} out of range")
        obs = Observation(_parse(path, lineno, float, row[1]),
                          _parse(path, lineno, SemanticLabel.parse, row[2].strip()),
                          _parse(path, lineno, int, row[3]),
                          _parse(path, lineno, int, row[4]))
        by_frame.setdefault(frame, []).append(obs)
    n = frame_count if frame_count is not None else (max(by_frame) + 1 if by_frame else 0)
    return [by_frame.get(k, []) for k in range(n)]


def write_trajectory(path, rows: Sequence[tuple[Pose2, str]]) -> None:
    _write(path, TRAJECTORY_HEADER,
           ((str(k), _f(p.east), _f(p.north), _f(p.heading), mode) for k, (p, mode) in enumerate(rows)))


def read_trajectory(path) -> list[Pose2]:
    out = []
    for lineno, row in _read(path, TRAJECTORY_HEADER):
        frame = _parse(path, lineno, int, row[0])
        if frame != len(out):
            raise InputError(f"{path}:{lineno}: expected frame {len(out)}, got {frame}")
        if row[4] not in ("coarse", "aligned"):
            raise InputError(f"{path}:{lineno}: unknown mode {row[4]!r}")
        out.append(Pose2(*(_parse(path, lineno, float, x) for x in row[1:4])))
    return out


def write_frame_errors(path, trans, rot) -> None:
    _write(path, FRAME_ERRORS_HEADER, ((str(k), _f(a), _f(b)) for k, (a, b) in enumerate(zip(trans, rot))))
