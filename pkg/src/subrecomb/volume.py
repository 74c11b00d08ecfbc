"""Binary occupancy volumes in the synthetic atlas frame.

Arrays are stored as ``(channels, x, y, z)`` uint8 with x the sagittal
(left to right) axis, y coronal and z axial. On disk the byte order is
x fastest, then y, then z, then channel (VMV1 format).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = "VMV1"

FRAME_SHAPES = {
    "whole_head": (200, 205, 90),
    "hemisphere": (100, 205, 90),
    "ica_box": (55, 121, 57),
    "mca_box": (60, 77, 76),
}
MIDPLANE_X = 100
SPACING_MM = (1.0, 1.0, 1.0)


class FrameError(ValueError):
    """Raised when a volume does not conform to the frame an operation expects."""


@dataclass(frozen=True, eq=False)
class Volume3D:
    data: np.ndarray  # (channels, x, y, z), uint8 in {0, 1}
    frame_tag: str
    spacing_mm: tuple = SPACING_MM

    def __post_init__(self):
        if self.frame_tag not in FRAME_SHAPES:
            raise FrameError(f"unknown frame {self.frame_tag!r}")
        data = np.asarray(self.data)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4 or data.shape[0] < 1:
            raise FrameError(f"expected (c, x, y, z) array, got shape {data.shape}")
        if data.shape[1:] != FRAME_SHAPES[self.frame_tag]:
            raise FrameError(
                f"frame {self.frame_tag} requires shape {FRAME_SHAPES[self.frame_tag]}, "
                f"got {data.shape[1:]}"
            )
        if data.dtype != np.uint8:
            if data.size and not np.isin(data, (0, 1)).all():
                raise ValueError("volume values must be 0 or 1")
            data = data.astype(np.uint8)
        elif data.size and data.max() > 1:
            raise ValueError("volume values must be 0 or 1")
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))

    @classmethod
    def empty(cls, frame_tag, channels=1):
        return cls(np.zeros((channels,) + FRAME_SHAPES[frame_tag], np.uint8), frame_tag)

    @property
    def shape(self):
        return self.data.shape[1:]

    @property
    def channels(self):
        return self.data.shape[0]

    def count(self):
        return int(self.data.sum(dtype=np.int64))

    def channel(self, c):
        return Volume3D(self.data[c : c + 1], self.frame_tag, self.spacing_mm)

    def to_bytes(self):
        # (c, x, y, z) -> (c, z, y, x) so that x varies fastest in C order
        return np.ascontiguousarray(self.data.transpose(0, 3, 2, 1)).tobytes()

    def __eq__(self, other):
        if not isinstance(other, Volume3D):
            return NotImplemented
        return (
            self.frame_tag == other.frame_tag
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    __hash__ = None


@dataclass(frozen=True)
class RegionBox:
    region: str  # "ICA" or "MCA"
    side: str  # "left" or "right"
    origin: tuple
    extent: tuple

    @property
    def frame_tag(self):
        return "ica_box" if self.region == "ICA" else "mca_box"

    def slices(self):
        return tuple(slice(o, o + e) for o, e in zip(self.origin, self.extent))

    def contains(self, x, y, z):
        """Whole-head voxel coordinates inside the box (arrays broadcast)."""
        ox, oy, oz = self.origin
        ex, ey, ez = self.extent
        return (
            (x >= ox) & (x < ox + ex) & (y >= oy) & (y < oy + ey) & (z >= oz) & (z < oz + ez)
        )

    def validate(self):
        if self.region not in ("ICA", "MCA") or self.side not in ("left", "right"):
            raise FrameError(f"bad region box {self.region}/{self.side}")
        if tuple(self.extent) != FRAME_SHAPES[self.frame_tag]:
            raise FrameError(f"{self.region} box extent must be {FRAME_SHAPES[self.frame_tag]}")
        full = FRAME_SHAPES["whole_head"]
        for o, e, n in zip(self.origin, self.extent, full):
            if o < 0 or o + e > n:
                raise FrameError(f"box {self.origin}+{self.extent} exceeds whole-head frame")

    def mirrored(self):
        ox, oy, oz = self.origin
        nx = FRAME_SHAPES["whole_head"][0]
        side = "left" if self.side == "right" else "right"
        return RegionBox(self.region, side, (nx - ox - self.extent[0], oy, oz), self.extent)


# Right-side boxes in whole-head coordinates; left boxes are their mirror images.
_RIGHT_ORIGINS = {"ICA": (100, 30, 0), "MCA": (130, 52, 14)}


def region_box(region, side):
    box = RegionBox(region, "right", _RIGHT_ORIGINS[region], FRAME_SHAPES[
        "ica_box" if region == "ICA" else "mca_box"])
    return box if side == "right" else box.mirrored()


REGION_BOXES = {(r, s): region_box(r, s) for r in ("ICA", "MCA") for s in ("left", "right")}


# -- array level helpers (shared by the Volume3D API and the training bank) --

def mirror_x(arr):
    """Reverse the sagittal axis of a (c, x, y, z) array."""
    return arr[:, ::-1]


def downsample_max(arr, factor):
    """Max-pool the spatial axes of a (c, x, y, z) array; ragged edges are kept."""
    if factor == 1:
        return np.ascontiguousarray(arr)
    c = arr.shape[0]
    pads = [(0, 0)] + [(0, (-n) % factor) for n in arr.shape[1:]]
    a = np.pad(arr, pads)
    x, y, z = (n // factor for n in a.shape[1:])
    a = a.reshape(c, x, factor, y, factor, z, factor)
    return a.max(axis=(2, 4, 6))


# -- operations --

def _require(v, frame_tag, channels=None):
    if v.frame_tag != frame_tag:
        raise FrameError(f"expected {frame_tag} volume, got {v.frame_tag}")
    if channels is not None and v.channels != channels:
        raise FrameError(f"expected {channels} channel(s), got {v.channels}")


def split_hemispheres(v):
    """Split a whole-head volume at the mid-sagittal plane.

    Returns ``(left, right)`` as raw halves, without mirroring.
    """
    _require(v, "whole_head", 1)
    return (
        Volume3D(v.data[:, :MIDPLANE_X], "hemisphere", v.spacing_mm),
        Volume3D(v.data[:, MIDPLANE_X:], "hemisphere", v.spacing_mm),
    )


def mirror_sagittal(v):
    return Volume3D(mirror_x(v.data), v.frame_tag, v.spacing_mm)


def concat_sagittal(a, b):
    """Place ``a`` at x in [0, 100) and ``b`` at x in [100, 200)."""
    for h in (a, b):
        _require(h, "hemisphere", 1)
    return Volume3D(np.concatenate([a.data, b.data], axis=1), "whole_head", a.spacing_mm)


def stack_channels(a, b):
    if a.frame_tag != b.frame_tag or a.shape != b.shape:
        raise FrameError(f"cannot stack {a.frame_tag}{a.shape} with {b.frame_tag}{b.shape}")
    if a.channels != 1 or b.channels != 1:
        raise FrameError("stack_channels expects single-channel inputs")
    return Volume3D(np.concatenate([a.data, b.data], axis=0), a.frame_tag, a.spacing_mm)


def crop_region(v, box):
    """Crop an ICA/MCA box from a whole-head volume.

    Left-side crops are mirrored so every crop shares the right-side
    orientation.
    """
    _require(v, "whole_head")
    box.validate()
    out = v.data[(slice(None),) + box.slices()]
    if box.side == "left":
        out = mirror_x(out)
    return Volume3D(out, box.frame_tag, v.spacing_mm)


# -- VMV1 files --

def raw_path_for(header_path):
    return Path(header_path).with_suffix(".raw")


def save_vmv(path, v):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "magic": MAGIC,
        "shape": list(v.shape),
        "spacing_mm": list(v.spacing_mm),
        "channels": v.channels,
        "frame": v.frame_tag,
        "dtype": "u8",
    }
    path.write_text(json.dumps(header, indent=1))
    raw_path_for(path).write_bytes(v.to_bytes())
    return path


def load_vmv(path):
    path = Path(path)
    header = json.loads(path.read_text())
    if header.get("magic") != MAGIC:
        raise FrameError(f"{path}: not a VMV1 header")
    if header.get("dtype") != "u8":
        raise FrameError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    x, y, z = header["shape"]
    c = int(header["channels"])
    buf = np.frombuffer(raw_path_for(path).read_bytes(), dtype=np.uint8)
    if buf.size != x * y * z * c:
        raise FrameError(f"{path}: expected {x * y * z * c} bytes, found {buf.size}")
    data = buf.reshape(c, z, y, x).transpose(0, 3, 2, 1)
    return Volume3D(data, header["frame"], tuple(header["spacing_mm"]))
