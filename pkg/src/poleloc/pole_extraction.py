"""Column-histogram pole extraction from semantic segmentation masks."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .compact_map import SemanticLabel

DEFAULT_LABEL_MAP = {
    1: SemanticLabel.Pole,
    2: SemanticLabel.Lamp,
    3: SemanticLabel.TreeTrunk,
    4: SemanticLabel.TrafficSign,
    5: SemanticLabel.Other,
}


class MaskLoadError(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    u: float
    label: SemanticLabel
    group_width: int = 1
    pixel_count: int = 0


@dataclass(frozen=True)
class ExtractionParams:
    c1: int = 60
    c2: int = 1
    c3: int = 15
    label_map: Mapping[int, SemanticLabel] = field(default_factory=lambda: dict(DEFAULT_LABEL_MAP))

    def __post_init__(self):
        if self.c1 < 1:
            raise ValueError("c1 must be >= 1")
        if self.c2 > self.c3:
            raise ValueError("c2 must not exceed c3")


@dataclass
class SegmentationMask:
    class_ids: np.ndarray  # (height, width) uint8

    @property
    def height(self) -> int:
        return self.class_ids.shape[0]

    @property
    def width(self) -> int:
        return self.class_ids.shape[1]


def binarize(mask: SegmentationMask, params: ExtractionParams) -> np.ndarray:
    classes = np.fromiter(params.label_map.keys(), dtype=np.int64)
    return np.isin(mask.class_ids, classes).astype(np.uint8)


def _runs(keep: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive (first, last) column indices of maximal True runs."""
    padded = np.concatenate(([False], keep, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return [(int(a), int(b) - 1) for a, b in zip(edges[::2], edges[1::2])]


def extract_poles(binary: np.ndarray, params: ExtractionParams,
                  mask: SegmentationMask | None = None) -> list[Observation]:
    """Group columns holding at least ``c1`` pole pixels and keep groups of width in [c2, c3].

    ``mask`` supplies the class ids used to label each group (majority class,
    ties to the smaller id). Without it every group is labelled with the
    smallest class id of ``label_map``.
    """
    counts = binary.sum(axis=0)
    out = []
    for first, last in _runs(counts >= params.c1):
        width = last - first + 1
        if not params.c2 <= width <= params.c3:
            continue
        label = _group_label(binary, mask, first, last, params)
        out.append(Observation(u=(first + last) / 2.0, label=label, group_width=width,
                               pixel_count=int(counts[first:last + 1].sum())))
    return out


def _group_label(binary, mask, first, last, params) -> SemanticLabel:
    if mask is None:
        return params.label_map[min(params.label_map)]
    block = mask.class_ids[:, first:last + 1][binary[:, first:last + 1].astype(bool)]
    ids, counts = np.unique(block, return_counts=True)
    # np.unique sorts ids ascending, so argmax resolves ties to the smaller id
    return params.label_map[int(ids[np.argmax(counts)])]


def extract_from_mask(mask: SegmentationMask, params: ExtractionParams) -> list[Observation]:
    return extract_poles(binarize(mask, params), params, mask)


def _pgm_header(data: bytes) -> tuple[list[bytes], int]:
    """Return the four header tokens and the payload offset."""
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
            j += 1
        if j == i:
            raise ValueError("truncated header")
        tokens.append(data[i:j])
        i = j
    # exactly one whitespace byte separates maxval from the raster
    if i >= len(data) or not data[i:i + 1].isspace():
        raise ValueError("missing raster separator")
    return tokens, i + 1


def load_mask(path, params: ExtractionParams | None = None) -> SegmentationMask:
    """Read a binary (P5) PGM whose pixel values are class ids."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] != b"P5":
        raise MaskLoadError(f"{path}: unsupported magic {data[:2]!r}, only binary PGM (P5) is accepted")
    try:
        tokens, offset = _pgm_header(data)
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise MaskLoadError(f"{path}: malformed PGM header ({e})") from None
    if width <= 0 or height <= 0:
        raise MaskLoadError(f"{path}: invalid dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise MaskLoadError(f"{path}: maxval {maxval} not in 1..255")
    payload = data[offset:]
    if len(payload) < width * height:
        raise MaskLoadError(f"{path}: truncated payload ({len(payload)} of {width * height} bytes)")
    grid = np.frombuffer(payload, dtype=np.uint8, count=width * height).reshape(height, width)
    return SegmentationMask(grid.copy())


def save_mask(mask: SegmentationMask, path) -> None:
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (mask.width, mask.height))
        f.write(np.ascontiguousarray(mask.class_ids, dtype=np.uint8).tobytes())
