"""Depth-map container types and the per-pixel color encodings.

A depth map is a dense ``(H, W)`` grid of readings in meters with a
validity mask (sensor dropouts, zero fills).  Encodings turn it into
8-bit imagery a standard RGB detector can consume: linear grayscale, a
jet color ramp over the grayscale, and the three-channel geometric
encoding (disparity / height / gravity angle) built in :mod:`.geometry`.

Quantization rule used throughout: floats round to integers half away
from zero, and invalid pixels encode to 0 in every channel.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import netpbm


def quantize_u8(values: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Map floats in [0, 255] to uint8, rounding half away from zero."""
    arr = np.asarray(values, dtype=np.float64)
    out = np.floor(np.abs(arr) + 0.5) * np.sign(arr)
    out = np.clip(out, 0, 255)
    if valid is not None:
        out = np.where(valid, out, 0)
    return out.astype(np.uint8)


@dataclass
class DepthMap:
    """Dense depth readings in meters.  Valid pixels are finite and > 0."""

    values: np.ndarray
    valid: np.ndarray

    def __init__(self, values: np.ndarray, valid: np.ndarray | None = None):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"depth values must be (H, W), got shape {values.shape}")
        finite_pos = np.isfinite(values) & (values > 0)
        if valid is None:
            valid = finite_pos
        else:
            valid = np.asarray(valid, dtype=bool)
            if valid.shape != values.shape:
                raise ValueError("valid mask shape differs from values shape")
            if np.any(valid & ~finite_pos):
                raise ValueError("valid pixels must hold finite, positive depths")
        self.values = values
        self.valid = valid

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def summary(self) -> dict:
        """Valid fraction and valid-depth range, for one-line reporting."""
        n = self.values.size
        if not self.valid.any():
            return {"valid_fraction": 0.0, "min": None, "max": None}
        vals = self.values[self.valid]
        return {
            "valid_fraction": float(self.valid.sum()) / n,
            "min": float(vals.min()),
            "max": float(vals.max()),
        }


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; ``baseline`` is the virtual stereo baseline in meters."""

    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float = 0.075

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.baseline <= 0:
            raise ValueError(f"baseline must be positive, got {self.baseline}")

    @classmethod
    def from_json(cls, path: str) -> "CameraIntrinsics":
        with open(path) as fh:
            raw = json.load(fh)
        try:
            return cls(
                fx=float(raw["fx"]),
                fy=float(raw["fy"]),
                cx=float(raw["cx"]),
                cy=float(raw["cy"]),
                baseline=float(raw.get("baseline", 0.075)),
            )
        except KeyError as exc:
            raise ValueError(f"intrinsics file {path} missing field {exc}") from None


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and standard deviation.  All stds must be positive."""

    means: tuple[float, ...]
    stds: tuple[float, ...]

    def __post_init__(self):
        if len(self.means) != len(self.stds):
            raise ValueError("means and stds must have equal length")
        if any(s <= 0 for s in self.stds):
            raise ValueError(f"stds must be positive, got {self.stds}")

    def to_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump({"mean": list(self.means), "std": list(self.stds)}, fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path: str) -> "ChannelStats":
        with open(path) as fh:
            raw = json.load(fh)
        return cls(means=tuple(raw["mean"]), stds=tuple(raw["std"]))


@dataclass
class GrayscaleDepth:
    """Linear grayscale encoding, float values in [0, 255] at valid pixels."""

    values: np.ndarray
    valid: np.ndarray
    normalized: np.ndarray | None = None

    @property
    def quantized(self) -> np.ndarray:
        return quantize_u8(self.values, self.valid)

    def channels(self) -> np.ndarray:
        return self.values[..., None]


@dataclass
class JetDepth:
    """Jet color-ramp encoding; valid pixels hold entries of the jet table."""

    rgb: np.ndarray
    valid: np.ndarray


@dataclass
class HdhaImage:
    """Geometric three-channel encoding.

    ``hd`` is horizontal disparity in pixel units, ``height`` is meters
    above the lowest valid scene point, ``angle`` is the angle in degrees
    between the local surface normal and the estimated gravity direction.
    """

    hd: np.ndarray
    height: np.ndarray
    angle: np.ndarray
    valid: np.ndarray
    normalized: np.ndarray | None = None

    def channels(self) -> np.ndarray:
        return np.stack([self.hd, self.height, self.angle], axis=-1)


def grayscale_encode(depth: DepthMap, d_min: float, d_max: float) -> GrayscaleDepth:
    """Linear map of depth to [0, 255]: ``255 * (d - d_min) / (d_max - d_min)``.

    Depths outside [d_min, d_max] clamp to the range ends.  Invalid pixels
    encode to 0.
    """
    if not d_max > d_min:
        raise ValueError(f"need d_max > d_min, got d_min={d_min} d_max={d_max}")
    scaled = 255.0 * (depth.values - d_min) / (d_max - d_min)
    scaled = np.clip(scaled, 0.0, 255.0)
    scaled = np.where(depth.valid, scaled, 0.0)
    return GrayscaleDepth(values=scaled, valid=depth.valid.copy())


def _jet_component(u: Fraction, center: Fraction) -> int:
    # Piecewise-linear ramp: 1 on a plateau around `center`, sloping to 0
    # at distance 3/8 either side.  Exact rational arithmetic keeps the
    # half-away rounding of x.5 products stable.
    v = Fraction(3, 2) - abs(4 * u - 4 * center)
    v = min(max(v, Fraction(0)), Fraction(1))
    # round half away from zero (values are nonnegative here)
    return int(v * 255 + Fraction(1, 2))


def _build_jet_table() -> np.ndarray:
    table = np.zeros((256, 3), dtype=np.uint8)
    for t in range(256):
        u = Fraction(t, 255)
        table[t, 0] = _jet_component(u, Fraction(3, 4))
        table[t, 1] = _jet_component(u, Fraction(1, 2))
        table[t, 2] = _jet_component(u, Fraction(1, 4))
    return table


_JET_TABLE: np.ndarray | None = None


def jet_table() -> np.ndarray:
    """The 256-entry jet lookup table, blue (low) through red (high)."""
    global _JET_TABLE
    if _JET_TABLE is None:
        table = _build_jet_table()
        table.setflags(write=False)
        _JET_TABLE = table
    return _JET_TABLE


def jet_encode(gray: GrayscaleDepth) -> JetDepth:
    """Look each quantized grayscale level up in the jet table.

    Invalid pixels encode to (0, 0, 0), which is not a table entry.
    """
    rgb = jet_table()[gray.quantized]
    rgb = np.where(gray.valid[..., None], rgb, 0).astype(np.uint8)
    return JetDepth(rgb=rgb, valid=gray.valid.copy())


def compute_channel_stats(images: list) -> ChannelStats:
    """Pooled per-channel mean/std over the valid pixels of all images.

    Accepts a uniform list of :class:`GrayscaleDepth` or :class:`HdhaImage`.
    Population std (ddof=0).  Raises if no valid pixels or a channel is
    constant.
    """
    if not images:
        raise ValueError("need at least one image to compute stats")
    pooled = []
    for img in images:
        chans = img.channels()
        pooled.append(chans[img.valid])
    stacked = np.concatenate(pooled, axis=0)
    if stacked.shape[0] == 0:
        raise ValueError("no valid pixels in any input image")
    means = stacked.mean(axis=0)
    stds = stacked.std(axis=0)
    if np.any(stds <= 0):
        raise ValueError(f"constant channel, std would be zero: stds={stds.tolist()}")
    return ChannelStats(means=tuple(float(m) for m in means), stds=tuple(float(s) for s in stds))


def normalize_encoding(image, stats: ChannelStats):
    """Return a copy of ``image`` with ``normalized = (x - mean) / std``.

    The original channel values are kept; the normalized planes land in
    the ``normalized`` field as an ``(H, W, C)`` float array with invalid
    pixels zeroed.
    """
    chans = image.channels()
    if chans.shape[-1] != len(stats.means):
        raise ValueError(
            f"image has {chans.shape[-1]} channels, stats describe {len(stats.means)}"
        )
    means = np.asarray(stats.means, dtype=np.float64)
    stds = np.asarray(stats.stds, dtype=np.float64)
    norm = (chans - means) / stds
    norm = np.where(image.valid[..., None], norm, 0.0)
    if isinstance(image, GrayscaleDepth):
        return GrayscaleDepth(values=image.values.copy(), valid=image.valid.copy(), normalized=norm)
    if isinstance(image, HdhaImage):
        return HdhaImage(
            hd=image.hd.copy(),
            height=image.height.copy(),
            angle=image.angle.copy(),
            valid=image.valid.copy(),
            normalized=norm,
        )
    raise TypeError(f"cannot normalize {type(image).__name__}")


def load_depth(path: str) -> DepthMap:
    """Read a depth file as meters, dispatching on the magic number.

    PFM stores float meters directly.  16-bit PGM stores millimeters with
    0 marking an invalid reading.
    """
    magic = netpbm.sniff_magic(path)
    if magic in ("Pf", "PF"):
        values, _ = netpbm.read_pfm(path)
        values = values.astype(np.float64)
        valid = np.isfinite(values) & (values > 0)
        return DepthMap(np.where(valid, values, 0.0), valid)
    if magic == "P5":
        raw, maxval = netpbm.read_pgm(path)
        if maxval <= 255:
            raise netpbm.ParseError(
                f"depth PGM must be 16-bit (maxval > 255), got maxval {maxval}", 0
            )
        values = raw.astype(np.float64) / 1000.0
        return DepthMap(values, raw > 0)
    raise netpbm.ParseError(f"unrecognized depth format magic {magic!r}", 0)


def hdha_to_rgb(image: HdhaImage, stats: ChannelStats | None = None) -> np.ndarray:
    """Render HDHA channels to bytes: hd into R, height into G, angle into B.

    Without stats each channel is min-max scaled over its valid pixels.
    With stats the z-score window [-3, 3] maps linearly onto [0, 255].
    Invalid pixels render to (0, 0, 0).
    """
    chans = image.channels()
    out = np.zeros_like(chans)
    if stats is not None:
        if len(stats.means) != 3:
            raise ValueError("hdha rendering needs 3-channel stats")
        means = np.asarray(stats.means)
        stds = np.asarray(stats.stds)
        z = (chans - means) / stds
        out = (z + 3.0) / 6.0 * 255.0
    else:
        for c in range(3):
            vals = chans[..., c][image.valid]
            if vals.size == 0:
                continue
            lo, hi = vals.min(), vals.max()
            if hi > lo:
                out[..., c] = (chans[..., c] - lo) / (hi - lo) * 255.0
    out = np.clip(out, 0.0, 255.0)
    return quantize_u8(out, valid=np.broadcast_to(image.valid[..., None], out.shape))
