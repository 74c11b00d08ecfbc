"""Cohort manifests and cached access to patient volumes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from . import volume as vol
from .labels import CohortStats, compose_hemi_labels

LABEL_KEYS = ("ica_left", "ica_right", "mca_left", "mca_right")
SIDES = ("left", "right")


class DataError(RuntimeError):
    """Missing or malformed cohort data."""


@dataclass(frozen=True)
class PatientRecord:
    id: str
    labels: dict
    volume: str  # path of the VMV1 header, relative to the manifest directory

    def region_label(self, region, side):
        return int(self.labels[f"{region.lower()}_{side}"])

    def hemi_label(self, side):
        return int(self.region_label("ica", side) or self.region_label("mca", side))

    def global_class(self):
        return compose_hemi_labels(self.hemi_label("left"), self.hemi_label("right"))

    def triples(self):
        """(global, ica, mca) class triples of the unmodified patient."""
        ica = compose_hemi_labels(self.region_label("ica", "left"), self.region_label("ica", "right"))
        mca = compose_hemi_labels(self.region_label("mca", "left"), self.region_label("mca", "right"))
        return self.global_class(), ica, mca


@dataclass
class CohortManifest:
    patients: list
    seed: int = 0
    root: Path = field(default=Path("."), compare=False)
    extra: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.patients)

    def ids(self):
        return [p.id for p in self.patients]

    def subset(self, indices):
        return CohortManifest([self.patients[i] for i in indices], self.seed, self.root, self.extra)

    def volume_path(self, index):
        return self.root / self.patients[index].volume

    def to_json(self):
        out = {
            "patients": [
                {"id": p.id, "labels": {k: int(p.labels[k]) for k in LABEL_KEYS}, "volume": p.volume}
                for p in self.patients
            ],
            "seed": self.seed,
        }
        out.update(self.extra)
        return out

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=1))
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read cohort manifest {path}: {exc}") from exc
        patients = []
        for entry in raw.get("patients", []):
            labels = entry.get("labels", {})
            missing = [k for k in LABEL_KEYS if k not in labels]
            if missing:
                raise DataError(f"patient {entry.get('id')}: missing labels {missing}")
            patients.append(PatientRecord(str(entry["id"]), {k: int(labels[k]) for k in LABEL_KEYS}, entry["volume"]))
        extra = {k: v for k, v in raw.items() if k not in ("patients", "seed")}
        return cls(patients, int(raw.get("seed", 0)), path.parent, extra)


def cohort_stats(manifest):
    """P and the fraction of patients with any positive region label."""
    P = len(manifest.patients)
    positives = sum(any(p.labels[k] for k in LABEL_KEYS) for p in manifest.patients)
    return CohortStats(P, positives / P)


class CohortVolumes:
    """Lazily loaded whole-head volumes with derived hemispheres and region crops.

    Hemispheres and crops come back in stored (right-side) orientation.
    ``volumes`` may supply the whole-head volumes directly (e.g. a phantom
    cohort generated in memory) instead of reading them from disk.
    """

    def __init__(self, manifest, cache_size=256, volumes=None):
        self.manifest = manifest
        if volumes is not None and len(volumes) != len(manifest):
            raise DataError(f"{len(volumes)} volumes for {len(manifest)} patients")
        self._volumes = volumes
        self._load = lru_cache(maxsize=cache_size)(self._load_uncached)

    def _load_uncached(self, index):
        if self._volumes is not None:
            return self._volumes[index]
        path = self.manifest.volume_path(index)
        if not path.exists():
            raise DataError(f"volume file {path} not found")
        v = vol.load_vmv(path)
        if v.frame_tag != "whole_head":
            raise DataError(f"{path}: expected a whole_head volume, got {v.frame_tag}")
        return v

    def whole_head(self, index):
        return self._load(index)

    def hemisphere(self, index, side):
        left, right = vol.split_hemispheres(self.whole_head(index))
        return vol.mirror_sagittal(left) if side == "left" else right

    def region(self, index, side, region):
        return vol.crop_region(self.whole_head(index), vol.REGION_BOXES[(region.upper(), side)])

