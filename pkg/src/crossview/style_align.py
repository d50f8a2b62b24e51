"""Histogram-based visual style transfer from a satellite image set to drone images.

The satellite set's per-channel cumulative color distributions are turned into
256-entry lookup tables, averaged over the set, and applied per pixel to drone
images. No trainable parameters; pure integer arithmetic so results are
bit-reproducible.

Mapping file format: three lines, one per channel, e.g.

    R: 0,1,2,...,255
    G: ...
    B: ...

each carrying exactly 256 comma-separated integers in [0, 255], monotone
non-decreasing.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

LEVELS = 256
CHANNELS = ("R", "G", "B")


@dataclass(frozen=True)
class ColorMapping:
    """Per-channel lookup tables mapping input gray level to output level."""

    lut_r: np.ndarray
    lut_g: np.ndarray
    lut_b: np.ndarray

    def __post_init__(self):
        for name, lut in zip(CHANNELS, self.luts()):
            _check_lut(lut, name)

    def luts(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.lut_r, self.lut_g, self.lut_b

    def __eq__(self, other):
        if not isinstance(other, ColorMapping):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.luts(), other.luts()))


def _check_lut(lut: np.ndarray, name: str):
    lut = np.asarray(lut)
    if lut.shape != (LEVELS,):
        raise ValueError(f"{name} LUT must have {LEVELS} entries, got {lut.shape}")
    if lut.min() < 0 or lut.max() > 255:
        raise ValueError(f"{name} LUT values out of range [0, 255]")
    if np.any(np.diff(lut) < 0):
        raise ValueError(f"{name} LUT not monotone non-decreasing")


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
        raise ValueError("empty input")
    return image


def channel_histogram(image: np.ndarray, channel: str | int) -> np.ndarray:
    """Count pixels per gray level for one channel of an H x W x 3 image."""
    image = _check_image(image)
    idx = CHANNELS.index(channel) if isinstance(channel, str) else int(channel)
    values = image[:, :, idx].reshape(-1).astype(np.int64)
    if values.min() < 0 or values.max() > 255:
        raise ValueError("channel values out of range [0, 255]")
    return np.bincount(values, minlength=LEVELS)


def mapping_from_histogram(counts: np.ndarray) -> np.ndarray:
    """Scaled cumulative distribution of a channel histogram, as a LUT.

    lut[x] = floor(cdf(x) * 255 + 0.5) clamped to 255, computed in exact
    integer arithmetic: floor(c*255/t + 1/2) == (2*c*255 + t) // (2*t).
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (LEVELS,):
        raise ValueError(f"histogram must have {LEVELS} entries")
    if np.any(counts < 0):
        raise ValueError("negative histogram count")
    total = int(counts.sum())
    if total == 0:
        raise ValueError("empty histogram")
    cum = np.cumsum(counts)
    lut = (2 * cum * 255 + total) // (2 * total)
    return np.minimum(lut, 255).astype(np.int64)


def mapping_from_image(image: np.ndarray) -> ColorMapping:
    """Per-channel cumulative-distribution LUTs of a single image."""
    image = _check_image(image)
    return ColorMapping(*(mapping_from_histogram(channel_histogram(image, c)) for c in CHANNELS))


def average_mapping(mappings: Sequence[ColorMapping]) -> ColorMapping:
    """Entrywise mean of several mappings, re-quantized with round-half-up."""
    if len(mappings) == 0:
        raise ValueError("no satellite mappings")
    n = len(mappings)
    out = []
    for ch in range(3):
        total = np.zeros(LEVELS, dtype=np.int64)
        for m in mappings:
            total += m.luts()[ch]
        # floor(s/n + 1/2) == (2*s + n) // (2*n), exact in integers
        out.append(np.minimum((2 * total + n) // (2 * n), 255))
    return ColorMapping(*out)


def pooled_mapping(images: Iterable[np.ndarray]) -> ColorMapping:
    """Mapping from the pooled histogram of a whole image set.

    Alternative to averaging per-image mappings; kept for comparison.
    """
    totals = [np.zeros(LEVELS, dtype=np.int64) for _ in CHANNELS]
    count = 0
    for image in images:
        for ch in range(3):
            totals[ch] += channel_histogram(image, ch)
        count += 1
    if count == 0:
        raise ValueError("no satellite mappings")
    return ColorMapping(*(mapping_from_histogram(t) for t in totals))


def corpus_mapping(images: Iterable[np.ndarray], pooled: bool = False) -> ColorMapping:
    """Satellite-set mapping: average of per-image mappings (default) or pooled."""
    if pooled:
        return pooled_mapping(images)
    return average_mapping([mapping_from_image(im) for im in images])


def apply_mapping(image: np.ndarray, mapping: ColorMapping) -> np.ndarray:
    """Map every pixel channel value through the matching LUT."""
    image = _check_image(image)
    out = np.empty_like(image, dtype=np.uint8)
    for ch, lut in enumerate(mapping.luts()):
        out[:, :, ch] = lut.astype(np.uint8)[image[:, :, ch]]
    return out


def save_mapping(mapping: ColorMapping, path: str | Path):
    lines = [
        f"{name}: " + ",".join(str(int(v)) for v in lut)
        for name, lut in zip(CHANNELS, mapping.luts())
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mapping(path: str | Path) -> ColorMapping:
    """Parse a mapping file, reporting the offending line on any defect."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) != 3:
        raise ValueError(f"mapping file must have 3 lines, got {len(lines)}")
    luts = []
    for lineno, (name, line) in enumerate(zip(CHANNELS, lines), start=1):
        label, sep, rest = line.partition(":")
        if not sep or label.strip() != name:
            raise ValueError(f"line {lineno}: expected '{name}:' label")
        try:
            values = [int(v) for v in rest.strip().split(",")]
        except ValueError:
            raise ValueError(f"line {lineno}: non-integer entry") from None
        if len(values) != LEVELS:
            raise ValueError(f"line {lineno}: expected {LEVELS} entries, got {len(values)}")
        lut = np.asarray(values, dtype=np.int64)
        if lut.min() < 0 or lut.max() > 255:
            raise ValueError(f"line {lineno}: value out of range [0, 255]")
        if np.any(np.diff(lut) < 0):
            raise ValueError(f"line {lineno}: LUT not monotone non-decreasing")
        luts.append(lut)
    return ColorMapping(*luts)


def identity_mapping() -> ColorMapping:
    lut = np.arange(LEVELS, dtype=np.int64)
    return ColorMapping(lut.copy(), lut.copy(), lut.copy())


def aggregate_cdf(images: Iterable[np.ndarray]) -> np.ndarray:
    """Per-channel cumulative distribution over all pixels of an image set.

    Returns a (3, 256) array of fractions in [0, 1].
    """
    totals = np.zeros((3, LEVELS), dtype=np.int64)
    count = 0
    for image in images:
        for ch in range(3):
            totals[ch] += channel_histogram(image, ch)
        count += 1
    if count == 0:
        raise ValueError("empty input")
    cum = np.cumsum(totals, axis=1).astype(np.float64)
    return cum / cum[:, -1:]


def cdf_distance(cdf_a: np.ndarray, cdf_b: np.ndarray) -> np.ndarray:
    """Max absolute CDF difference per channel."""
    return np.abs(np.asarray(cdf_a) - np.asarray(cdf_b)).max(axis=1)
