"""Random elastic deformation of binary volumes.

A coarse grid of anchors (``anchors_per_axis`` per axis, spanning the
volume) receives uniform random displacements; border anchors stay fixed.
The dense field is the trilinear interpolation of the anchor grid, so no
component can exceed the anchors' maximum. Warping is a backward mapping
with nearest-neighbour lookup and background fill.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import volume as vol


@dataclass(frozen=True)
class DeformSpec:
    anchors_per_axis: int = 6
    max_displacement_vox: float = 20.0
    repetitions: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.anchors_per_axis < 2:
            raise ValueError("anchors_per_axis must be >= 2")
        if self.max_displacement_vox < 0:
            raise ValueError("max_displacement_vox must be >= 0")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


HEMISPHERE_DEFORM = DeformSpec(anchors_per_axis=6, max_displacement_vox=20.0, repetitions=10)
SUBVOLUME_DEFORM = DeformSpec(anchors_per_axis=4, max_displacement_vox=20.0, repetitions=10)


@dataclass(frozen=True, eq=False)
class DisplacementField:
    coarse: np.ndarray  # (A, A, A, 3) anchor displacements in voxels
    dense: np.ndarray  # (3, X, Y, Z) float32 displacements in voxels

    @property
    def shape(self):
        return self.dense.shape[1:]


def _hat_weights(n, anchors):
    """(n, anchors) linear-interpolation weights for anchors spread over [0, n-1]."""
    if n == 1:
        w = np.zeros((1, anchors))
        w[0, 0] = 1.0
        return w
    pos = np.arange(n) * (anchors - 1) / (n - 1)
    k = np.minimum(np.floor(pos).astype(int), anchors - 2)
    frac = pos - k
    w = np.zeros((n, anchors))
    w[np.arange(n), k] = 1.0 - frac
    w[np.arange(n), k + 1] += frac
    return w


def interpolate_anchors(coarse, shape):
    """Trilinear upsampling of an (A, A, A, 3) anchor grid to (3, *shape)."""
    a = coarse.shape[0]
    wx, wy, wz = (_hat_weights(n, a) for n in shape)
    out = np.empty((3,) + tuple(shape))
    for d in range(3):
        t = (wx @ coarse[..., d].reshape(a, -1)).reshape(shape[0], a, a)  # (X, b, c)
        t = t @ wz.T  # (X, b, Z)
        out[d] = np.matmul(wy, t)  # (X, Y, Z)
    return out


def coarse_displacements(spec, rng):
    a = spec.anchors_per_axis
    d = spec.max_displacement_vox
    coarse = rng.uniform(-d, d, (a, a, a, 3))
    border = np.zeros((a, a, a), bool)
    border[[0, -1], :, :] = border[:, [0, -1], :] = border[:, :, [0, -1]] = True
    coarse[border] = 0.0
    return coarse


def field_from_coarse(coarse, shape, bound=None):
    dense = interpolate_anchors(np.asarray(coarse, float), tuple(shape))
    if bound is not None:
        # guards float rounding only; the interpolation is already convex
        np.clip(dense, -bound, bound, out=dense)
    return DisplacementField(np.asarray(coarse, float), dense.astype(np.float32))


def sample_field(spec, shape, seed=None):
    """Draw a field for ``shape``; ``seed`` defaults to ``spec.seed``.

    ``seed`` may be an int or a sequence of ints (passed to numpy's SeedSequence).
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    return field_from_coarse(coarse_displacements(spec, rng), shape, spec.max_displacement_vox)


def warp_array(arr, field):
    """Backward-warp a (c, x, y, z) array with nearest-neighbour lookup."""
    shape = arr.shape[1:]
    if tuple(field.shape) != tuple(shape):
        raise vol.FrameError(f"field shape {field.shape} does not match volume shape {shape}")
    grids = np.ogrid[tuple(slice(0, n) for n in shape)]
    flat = np.zeros(shape, np.int64)
    valid = np.ones(shape, bool)
    stride = 1
    # C-order flat index over (x, y, z): z has stride 1
    for axis in (2, 1, 0):
        src = np.rint(grids[axis] + field.dense[axis]).astype(np.int64)
        valid &= (src >= 0) & (src < shape[axis])
        flat += np.clip(src, 0, shape[axis] - 1) * stride
        stride *= shape[axis]
    out = np.empty_like(arr)
    for c in range(arr.shape[0]):
        out[c] = np.where(valid, arr[c].reshape(-1)[flat], 0)
    return out


def warp(v, field):
    return vol.Volume3D(warp_array(v.data, field), v.frame_tag, v.spacing_mm)


def augment_dataset(volumes, spec, keys=None):
    """Deform each volume ``spec.repetitions`` times with independent fields.

    ``keys[i]`` (default ``i``) is folded into the seed of volume ``i`` so
    results do not depend on list order. Returns one list of repetitions
    per input volume.
    """
    keys = range(len(volumes)) if keys is None else keys
    out = []
    for v, key in zip(volumes, keys):
        key = key if isinstance(key, (tuple, list)) else (key,)
        reps = []
        for r in range(spec.repetitions):
            field = sample_field(spec, v.shape, seed=[spec.seed, *key, r])
            reps.append(warp(v, field))
        out.append(reps)
    return out


def save_field(path, field):
    """Write ``field.dense`` as little-endian float32 (dx, dy, dz) triples, x fastest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"magic": "VMF1", "shape": list(field.shape), "components": 3, "dtype": "f4le"}
    path.write_text(json.dumps(header))
    raw = np.ascontiguousarray(field.dense.transpose(3, 2, 1, 0)).astype("<f4")
    path.with_suffix(".raw").write_bytes(raw.tobytes())
    return path


def load_field(path):
    path = Path(path)
    header = json.loads(path.read_text())
    x, y, z = header["shape"]
    raw = np.frombuffer(path.with_suffix(".raw").read_bytes(), dtype="<f4").reshape(z, y, x, 3)
    dense = raw.transpose(3, 2, 1, 0).astype(np.float32)
    return DisplacementField(np.zeros((0, 0, 0, 3)), dense)
