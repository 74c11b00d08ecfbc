"""Downsampled, optionally deformed copies of every hemisphere and region crop.

The bank is what the trainer samples from. Volumes are deformed at full
resolution (one field per member and repetition), then max-pooled by the
downsample factor. Repetition ``-1`` is the undeformed original.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from . import volume as vol
from .deform import HEMISPHERE_DEFORM, SUBVOLUME_DEFORM, DeformSpec, sample_field, warp_array
from .recombine import entry_labels

log = logging.getLogger(__name__)

KIND_INDEX = {"hemi": 0, "ica": 1, "mca": 2}
KINDS_FOR_VARIANT = {"whole_head": ("hemi",), "h_stack": ("hemi",), "im_stack": ("ica", "mca")}


class TrainingBank:
    """Per-member arrays ``(X, Y, Z)`` uint8 in stored (right-side) orientation.

    Parameters
    ----------
    manifest : CohortManifest
    source : object with ``whole_head(p)`` returning a Volume3D
    factor : int
        Max-pool downsampling factor.
    kinds : iterable of {"hemi", "ica", "mca"}
    repetitions : int
        Deformed copies per member (0 disables deformation).
    hemi_deform, sub_deform : DeformSpec
        Field parameters for hemispheres and for ICA/MCA crops.
    cache_dir : path, optional
        Directory for an ``.npz`` cache keyed by the bank's configuration.
    online : bool
        Instead of precomputing ``repetitions`` copies, keep full-resolution
        members and warp them with a fresh field on every request
        (``rep`` then acts as the field's seed). Not cached.
    """

    ONLINE_TAG = 7919  # separates online field seeds from precomputed ones

    def __init__(self, manifest, source, factor=4, kinds=("hemi", "ica", "mca"), repetitions=0,
                 hemi_deform=HEMISPHERE_DEFORM, sub_deform=SUBVOLUME_DEFORM, cache_dir=None, online=False):
        self.manifest = manifest
        self.factor = int(factor)
        self.kinds = tuple(kinds)
        self.repetitions = int(repetitions)
        self.specs = {"hemi": hemi_deform, "ica": sub_deform, "mca": sub_deform}
        self.online = bool(online)
        self.arrays = {}  # (kind, p, side) -> uint8 array (reps + 1, X, Y, Z); index 0 = original
        self.full = {}  # online mode: full-resolution (1, X, Y, Z) members
        cache = self._cache_file(cache_dir) if cache_dir and not self.online else None
        if cache is not None and cache.exists():
            self._load(cache)
        else:
            self._build(source)
            if cache is not None:
                self._save(cache)

    def _key(self):
        desc = {
            "patients": [(p.id, p.labels) for p in self.manifest.patients],
            "seed": self.manifest.seed,
            "extra": self.manifest.extra,  # e.g. the generating phantom spec
            "root": str(Path(self.manifest.root).resolve()),
            "factor": self.factor,
            "kinds": self.kinds,
            "repetitions": self.repetitions,
            "specs": {k: [s.anchors_per_axis, s.max_displacement_vox, s.seed] for k, s in self.specs.items()},
        }
        return hashlib.sha256(json.dumps(desc, sort_keys=True, default=str).encode()).hexdigest()[:16]

    def _cache_file(self, cache_dir):
        return Path(cache_dir) / f"bank_{self._key()}.npz"

    def _member_volumes(self, whole):
        data = whole.data
        out = {}
        for side in ("left", "right"):
            if "hemi" in self.kinds:
                half = data[:, : vol.MIDPLANE_X] if side == "left" else data[:, vol.MIDPLANE_X :]
                out[("hemi", side)] = vol.mirror_x(half) if side == "left" else half
            for region in ("ICA", "MCA"):
                kind = region.lower()
                if kind in self.kinds:
                    out[(kind, side)] = vol.crop_region(whole, vol.REGION_BOXES[(region, side)]).data
        return out

    def _build(self, source):
        for p in range(len(self.manifest)):
            for (kind, side), arr in self._member_volumes(source.whole_head(p)).items():
                stack = [vol.downsample_max(arr, self.factor)[0]]
                spec = self.specs[kind]
                if self.online:
                    self.full[(kind, p, side)] = arr
                for r in range(0 if self.online else self.repetitions):
                    field = sample_field(spec, arr.shape[1:], seed=[spec.seed, p, KIND_INDEX[kind], int(side == "right"), r])
                    stack.append(vol.downsample_max(warp_array(arr, field), self.factor)[0])
                self.arrays[(kind, p, side)] = np.stack(stack)
            log.debug("bank: patient %d/%d done", p + 1, len(self.manifest))

    def _save(self, path):
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, **{f"{k}|{p}|{s}": a for (k, p, s), a in self.arrays.items()})

    def _load(self, path):
        with np.load(path) as z:
            for name in z.files:
                k, p, s = name.split("|")
                self.arrays[(k, int(p), s)] = z[name]

    def get(self, kind, member, rep=-1):
        p, side = member
        if self.online and rep >= 0:
            spec, arr = self.specs[kind], self.full[(kind, p, side)]
            seed = [spec.seed, p, KIND_INDEX[kind], int(side == "right"), self.ONLINE_TAG, int(rep)]
            return vol.downsample_max(warp_array(arr, sample_field(spec, arr.shape[1:], seed=seed)), self.factor)[0]
        return self.arrays[(kind, p, side)][rep + 1]

    def assemble(self, variant, entries, reps=None, mirror=None):
        """Channel-last network inputs and (N, 9) targets for plan entries.

        ``reps[n]`` gives one repetition index per member of entry ``n``;
        ``mirror[n]`` flips a whole-head sample left/right (labels follow).
        """
        n = len(entries)
        reps = [[-1] * len(e) for e in entries] if reps is None else reps
        mirror = [False] * n if mirror is None else mirror
        targets = np.zeros((n, 9), np.float32)
        if variant == "im_stack":
            ica = np.stack([np.stack([self.get("ica", e[0], r[0]), self.get("ica", e[1], r[1])], -1)
                            for e, r in zip(entries, reps)])
            mca = np.stack([np.stack([self.get("mca", e[2], r[2]), self.get("mca", e[3], r[3])], -1)
                            for e, r in zip(entries, reps)])
            inputs = [ica, mca]
        else:
            xs = []
            for e, r, flip in zip(entries, reps, mirror):
                a, b = self.get("hemi", e[0], r[0]), self.get("hemi", e[1], r[1])
                if variant == "whole_head":
                    x = np.concatenate([a[::-1], b], axis=0)
                    x = (x[::-1] if flip else x)[..., None]
                else:
                    x = np.stack([a, b], -1)
                xs.append(x)
            inputs = [np.stack(xs)]
        for k, (e, flip) in enumerate(zip(entries, mirror)):
            labels = entry_labels(e, self.manifest)
            if flip:
                labels = tuple(t.swapped() for t in labels)
            targets[k] = np.concatenate([np.asarray(t) for t in labels])
        return [x.astype(np.float32) for x in inputs], targets


def bank_for(manifest, source, variants, factor=4, repetitions=0, cache_dir=None, seed=0, online=False,
             anchors=(HEMISPHERE_DEFORM.anchors_per_axis, SUBVOLUME_DEFORM.anchors_per_axis),
             max_displacement=HEMISPHERE_DEFORM.max_displacement_vox):
    """Bank holding exactly the member kinds the given variants need.

    ``anchors`` is (hemisphere, ICA/MCA subvolume) anchors per axis.
    """
    kinds = sorted({k for v in variants for k in KINDS_FOR_VARIANT[v]}, key=KIND_INDEX.get)
    reps = max(repetitions, 1)
    hemi = DeformSpec(anchors[0], max_displacement, reps, seed)
    sub = DeformSpec(anchors[1], max_displacement, reps, seed)
    return TrainingBank(manifest, source, factor, kinds, repetitions, hemi, sub, cache_dir, online)
