"""Procedural vessel-tree phantoms with controllable LVO lesions.

Each patient gets a quasi-symmetric anterior circulation per hemisphere:
an ascending ICA ending in a terminus, an M1 trunk running laterally with
M2/M3 branches, an ACA and a posterior branch, plus a few small
patient-specific side vessels. Geometry is drawn per patient, then
perturbed independently per side. A lesion removes the vessel distal to
a cut on the ICA trunk or on M1, restricted to the affected region box.

Hemispheres are built directly in stored (right-side) orientation in a
(100, 205, 90) grid; the left hemisphere is mirrored into the whole head.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from . import volume as vol
from .cohort import CohortManifest, PatientRecord, cohort_stats  # noqa: F401  (re-export)

HEMI_SHAPE = vol.FRAME_SHAPES["hemisphere"]
REGION_MIX_KEYS = ("ica_only", "mca_only", "both")


@dataclass(frozen=True)
class PhantomSpec:
    patients: int
    lvo_fraction: float = 2 / 3
    # given positive: probabilities of ICA-only, MCA-only, both
    region_mix: tuple = (0.11, 0.64, 0.25)
    asymmetry_jitter: float = 0.1
    seed: int = 0
    left_fraction: float = 0.44
    side_vessels: tuple = (2, 5)  # inclusive range of small extra vessels per patient

    def __post_init__(self):
        if self.patients < 1:
            raise ValueError("patients must be >= 1")
        if not 0.0 <= self.lvo_fraction <= 1.0:
            raise ValueError("lvo_fraction must lie in [0, 1]")
        mix = tuple(float(m) for m in self.region_mix)
        if len(mix) != 3 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
            raise ValueError("region_mix must be three probabilities summing to 1")
        object.__setattr__(self, "region_mix", mix)
        if self.asymmetry_jitter < 0:
            raise ValueError("asymmetry_jitter must be non-negative")


@dataclass
class Vessel:
    name: str
    control: np.ndarray  # (k, 3) control points, hemisphere-local voxel coordinates
    radius: float
    region: str | None = None  # "ICA" / "MCA" for vessels a lesion may remove
    trunk: bool = False  # the region's main centerline, where cuts are placed
    points: np.ndarray = field(default=None, repr=False)
    arc: np.ndarray = field(default=None, repr=False)

    def sample(self, spacing=1.0):
        c = self.control
        seg = np.linalg.norm(np.diff(c, axis=0), axis=1)
        t = np.concatenate([[0.0], np.cumsum(seg)])
        spline = CubicSpline(t, c, bc_type="natural")
        n = max(int(np.ceil(t[-1] / spacing)) + 1, 2)
        pts = spline(np.linspace(0.0, t[-1], n))
        self.points = pts
        self.arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        return self


@dataclass
class Lesion:
    region: str  # "ICA" or "MCA" (a "both" lesion is two Lesion entries)
    side: str
    cut_fraction: float
    cut_point: tuple


@dataclass
class PhantomPatient:
    id: str
    volume: vol.Volume3D
    labels: dict
    lesions: list


# base anatomy of a right hemisphere, local x = whole-head x - 100
_ICA = [(20, 100, 2), (24, 92, 14), (18, 82, 24), (12, 76, 32), (20, 86, 40), (28, 84, 47)]
_M1 = [(38, 83, 50), (50, 81, 52), (62, 79, 55)]
_M2_SUP = [(70, 72, 64), (76, 66, 74)]
_M2_INF = [(72, 88, 57), (78, 98, 60)]
_M3 = {"sup": [[(82, 60, 84)], [(84, 74, 82)]], "inf": [[(85, 108, 66)], [(84, 112, 52)]]}
_ACA = [(18, 66, 56), (6, 46, 66), (2, 30, 76)]
_POST = [(18, 90, 38), (14, 120, 42), (18, 150, 48), (25, 175, 55)]


def _rng(spec, *key):
    return np.random.default_rng([spec.seed, *key])


def _base_geometry(spec, index):
    """Patient-level anatomy shared by both hemispheres (before side jitter)."""
    rng = _rng(spec, index, 1)
    sigma = 40.0 * spec.asymmetry_jitter

    def jit(pts):
        pts = np.asarray(pts, float)
        return pts + rng.normal(0.0, sigma, pts.shape)

    geo = {
        "ica": jit(_ICA),
        "m1": jit(_M1),
        "m2_sup": jit(_M2_SUP),
        "m2_inf": jit(_M2_INF),
        "m3": {k: [jit(b) for b in v] for k, v in _M3.items()},
        "m3_keep": rng.random(4) < 0.8,
        "aca": jit(_ACA),
        "post": jit(_POST),
        "radii": {"ica": 2.5, "m1": 2.0, "m2": 1.5, "m3": 1.0, "aca": 1.5, "post": 1.2},
    }
    lo, hi = spec.side_vessels
    n_side = int(rng.integers(lo, hi + 1))
    side = []
    for _ in range(n_side):
        start = rng.uniform((5, 20, 10), (90, 185, 80))
        step = rng.normal(0.0, 12.0, (2, 3))
        side.append(np.vstack([start, start + step[0], start + step[0] + step[1]]))
    geo["side"] = side
    return geo


def _side_vessels(spec, index, side, geo):
    rng = _rng(spec, index, 2, 0 if side == "left" else 1)
    sigma = 20.0 * spec.asymmetry_jitter

    def jit(pts):
        pts = np.asarray(pts, float)
        return pts + rng.normal(0.0, sigma, pts.shape)

    def rad(r):
        return float(np.clip(r * (1.0 + spec.asymmetry_jitter * rng.normal()), 1.0, 3.0))

    hi = np.array(HEMI_SHAPE, float) - 1.0
    clip = lambda p: np.clip(p, 0.0, hi)  # noqa: E731
    radii = geo["radii"]
    ica = clip(jit(geo["ica"]))
    term = ica[-1]
    m1 = clip(np.vstack([term, jit(geo["m1"])]))
    bif = m1[-1]
    vessels = [
        Vessel("ica", ica, rad(radii["ica"]), region="ICA", trunk=True),
        Vessel("m1", m1, rad(radii["m1"]), region="MCA", trunk=True),
        Vessel("aca", clip(np.vstack([term, jit(geo["aca"])])), rad(radii["aca"])),
        Vessel("post", clip(np.vstack([ica[3], jit(geo["post"])])), rad(radii["post"])),
    ]
    keep = iter(geo["m3_keep"])
    for name in ("sup", "inf"):
        m2 = clip(np.vstack([bif, jit(geo[f"m2_{name}"])]))
        vessels.append(Vessel(f"m2_{name}", m2, rad(radii["m2"]), region="MCA"))
        for b, branch in enumerate(geo["m3"][name]):
            if next(keep):
                m3 = clip(np.vstack([m2[-1], jit(branch)]))
                vessels.append(Vessel(f"m3_{name}{b}", m3, rad(radii["m3"]), region="MCA"))
    for k, pts in enumerate(geo["side"]):
        vessels.append(Vessel(f"side{k}", clip(jit(pts)), rad(1.0)))
    return [v.sample() for v in vessels]


def rasterize_tubes(polylines, shape):
    """Union of tubes; each polyline is ``(points (n, 3), radius)``.

    A voxel is set when its centre lies within ``radius`` of a segment.
    """
    out = np.zeros(shape, bool)
    upper = np.array(shape) - 1
    for pts, r in polylines:
        for p0, p1 in zip(pts[:-1], pts[1:]):
            lo = np.maximum(np.floor(np.minimum(p0, p1) - r), 0).astype(int)
            hi = np.minimum(np.ceil(np.maximum(p0, p1) + r), upper).astype(int)
            if np.any(hi < lo):
                continue
            gx, gy, gz = np.ogrid[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1]
            d = p1 - p0
            dd = float(d @ d)
            rx, ry, rz = gx - p0[0], gy - p0[1], gz - p0[2]
            if dd > 0:
                t = np.clip((rx * d[0] + ry * d[1] + rz * d[2]) / dd, 0.0, 1.0)
            else:
                t = np.zeros(1)
            dist2 = (rx - t * d[0]) ** 2 + (ry - t * d[1]) ** 2 + (rz - t * d[2]) ** 2
            out[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1] |= dist2 <= r * r
    return out


def _local_box_mask(region):
    """Boolean mask of the right-side region box in hemisphere-local coordinates."""
    box = vol.REGION_BOXES[(region, "right")]
    mask = np.zeros(HEMI_SHAPE, bool)
    sl = box.slices()
    mask[(slice(sl[0].start - vol.MIDPLANE_X, sl[0].stop - vol.MIDPLANE_X),) + sl[1:]] = True
    return mask


def _split_at(v, fraction):
    """Proximal and distal parts of a vessel cut at ``fraction`` of its arc length."""
    s = fraction * v.arc[-1]
    k = int(np.searchsorted(v.arc, s))
    k = min(max(k, 1), len(v.arc) - 1)
    w = (s - v.arc[k - 1]) / max(v.arc[k] - v.arc[k - 1], 1e-12)
    cut = v.points[k - 1] + w * (v.points[k] - v.points[k - 1])
    proximal = np.vstack([v.points[:k], cut])
    distal = np.vstack([cut, v.points[k:]])
    return proximal, distal, cut


def _hemisphere(vessels, cuts):
    """Rasterize one stored-orientation hemisphere; ``cuts`` maps region -> fraction.

    Returns (volume, {region: cut point}, {region: distal polylines}).
    """
    full = rasterize_tubes([(v.points, v.radius) for v in vessels], HEMI_SHAPE)
    if not cuts:
        return full, {}, {}
    kept, cut_points, distal_parts = [], {}, {}
    for v in vessels:
        if v.region in cuts:
            if v.trunk:
                prox, dist, cut = _split_at(v, cuts[v.region])
                kept.append((prox, v.radius))
                cut_points[v.region] = tuple(float(c) for c in cut)
                distal_parts.setdefault(v.region, []).append((dist, v.radius))
            elif v.region == "MCA":
                # every non-trunk MCA vessel branches off distal to M1
                distal_parts.setdefault(v.region, []).append((v.points, v.radius))
            else:
                kept.append((v.points, v.radius))
        else:
            kept.append((v.points, v.radius))
    lesioned = rasterize_tubes(kept, HEMI_SHAPE)
    box = np.zeros(HEMI_SHAPE, bool)
    for region in cuts:
        box |= _local_box_mask(region)
    return np.where(box, lesioned, full), cut_points, distal_parts


def _draw_lesion(spec, index, positive):
    """Lesion plan for patient ``index``: (side, {region: cut fraction}) or None."""
    if not positive:
        return None
    rng = _rng(spec, index, 3)
    side = "left" if rng.random() < spec.left_fraction else "right"
    kind = REGION_MIX_KEYS[int(rng.choice(3, p=spec.region_mix))]
    regions = {"ica_only": ("ICA",), "mca_only": ("MCA",), "both": ("ICA", "MCA")}[kind]
    # cut uniformly over the middle 60 % of the trunk
    return side, {r: float(rng.uniform(0.2, 0.8)) for r in regions}


def positive_patients(spec):
    """Indices of LVO-positive patients (exactly round(lvo_fraction * P) of them)."""
    n_pos = int(round(spec.lvo_fraction * spec.patients))
    order = _rng(spec, 0xC0).permutation(spec.patients)
    return set(int(i) for i in order[:n_pos])


def generate_patient(spec, index, lesioned=True, positive=None, details=None):
    """Build one patient. ``lesioned=False`` gives the unlesioned twin.

    If ``details`` is a dict it receives the vessel lists, cut points and
    distal polylines per side for inspection.
    """
    if positive is None:
        positive = index in positive_patients(spec)
    plan = _draw_lesion(spec, index, positive)
    geo = _base_geometry(spec, index)
    hemis, lesions = {}, []
    labels = {f"{r}_{s}": 0 for r in ("ica", "mca") for s in ("left", "right")}
    for side in ("left", "right"):
        vessels = _side_vessels(spec, index, side, geo)
        cuts = plan[1] if (plan is not None and lesioned and plan[0] == side) else {}
        h, cut_points, distal = _hemisphere(vessels, cuts)
        hemis[side] = h
        for region, frac in cuts.items():
            labels[f"{region.lower()}_{side}"] = 1
            lesions.append(Lesion(region, side, frac, cut_points[region]))
        if details is not None:
            details[side] = {"vessels": vessels, "cut_points": cut_points, "distal": distal}
    whole = np.concatenate([hemis["left"][::-1], hemis["right"]], axis=0)
    return PhantomPatient(f"P{index:04d}", vol.Volume3D(whole[None].astype(np.uint8), "whole_head"), labels, lesions)


def generate_cohort(spec, out_dir=None):
    """Generate all patients; optionally write VMV1 volumes and ``cohort.json``.

    Returns ``(manifest, volumes)`` where ``volumes[i]`` is the whole-head
    volume of ``manifest.patients[i]``.
    """
    positives = positive_patients(spec)
    records, volumes = [], []
    out = Path(out_dir) if out_dir is not None else None
    for i in range(spec.patients):
        p = generate_patient(spec, i, positive=i in positives)
        rel = f"volumes/{p.id}.vmv"
        if out is not None:
            vol.save_vmv(out / rel, p.volume)
        records.append(PatientRecord(p.id, p.labels, rel))
        volumes.append(p.volume)
    extra = {"phantom": {
        "patients": spec.patients,
        "lvo_fraction": spec.lvo_fraction,
        "region_mix": list(spec.region_mix),
        "asymmetry_jitter": spec.asymmetry_jitter,
        "left_fraction": spec.left_fraction,
        "side_vessels": list(spec.side_vessels),
    }}
    manifest = CohortManifest(records, spec.seed, out if out is not None else Path("."), extra)
    if out is not None:
        manifest.save(out / "cohort.json")
    return manifest, volumes


def cohort_digest(volumes):
    h = hashlib.sha256()
    for v in volumes:
        h.update(v.to_bytes())
    return h.hexdigest()
