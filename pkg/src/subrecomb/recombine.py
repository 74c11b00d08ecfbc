"""Artificial patients from recombined hemispheres or ICA/MCA subvolumes.

A member is ``(patient_index, side)``. Plan entries are ordered by slot:

* hemi scheme: ``(left_member, right_member)``
* subvol scheme: ``(ica_left, ica_right, mca_left, mca_right)``

"Left slot" means the position of the left hemisphere in the artificial
patient; members are always stored in right-side orientation.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import volume as vol
from .labels import (
    ClassTriple,
    compose_hemi_labels,
    compose_subvolume_labels,
    is_admissible_hemi,
    is_admissible_subvol,
)

VARIANTS = ("whole_head", "h_stack", "im_stack")
SCHEME_OF_VARIANT = {"whole_head": "hemi", "h_stack": "hemi", "im_stack": "subvol"}


class PlanningError(ValueError):
    """The cohort does not admit a once-per-epoch plan."""


@dataclass(frozen=True)
class EpochPlan:
    scheme: str
    samples: tuple
    class_histogram: tuple  # (no LVO, left LVO, right LVO)
    seed: int


@dataclass(frozen=True, eq=False)
class SampleStack:
    scheme: str
    variant: str
    member_ids: tuple
    volumes: tuple  # one Volume3D, or (ICA stack, MCA stack) for im_stack
    labels: tuple  # (global, ica, mca) ClassTriples
    provenance_seed: int = 0


def _label(manifest, member, region):
    p, side = member
    rec = manifest.patients[p]
    if region == "hemi":
        return rec.hemi_label(side)
    return rec.region_label(region, side)


def entry_labels(entry, manifest):
    """(global, ica, mca) triples of a plan entry; raises on inadmissible entries."""
    if len(entry) == 2:
        i, j = entry
        g = compose_hemi_labels(_label(manifest, i, "hemi"), _label(manifest, j, "hemi"))
        ica = compose_hemi_labels(_label(manifest, i, "ica"), _label(manifest, j, "ica"))
        mca = compose_hemi_labels(_label(manifest, i, "mca"), _label(manifest, j, "mca"))
        return g, ica, mca
    i, j, k, l = entry
    return compose_subvolume_labels(
        _label(manifest, i, "ica"), _label(manifest, j, "ica"),
        _label(manifest, k, "mca"), _label(manifest, l, "mca"),
    )


def is_admissible_entry(entry, manifest):
    if len(entry) == 2:
        return is_admissible_hemi(_label(manifest, entry[0], "hemi"), _label(manifest, entry[1], "hemi"))
    i, j, k, l = entry
    return is_admissible_subvol(
        _label(manifest, i, "ica"), _label(manifest, j, "ica"),
        _label(manifest, k, "mca"), _label(manifest, l, "mca"),
    )


def _histogram(samples, manifest):
    counts = Counter(entry_labels(e, manifest)[0].index() for e in samples)
    return tuple(counts.get(k, 0) for k in range(3))


def original_entries(patients, scheme):
    """Unrecombined entries: each patient's own left and right."""
    if scheme == "hemi":
        return [((p, "left"), (p, "right")) for p in patients]
    return [((p, "left"), (p, "right"), (p, "left"), (p, "right")) for p in patients]


def _pair_up(positives, negatives, what):
    """Pair every positive with a distinct negative, then leftover negatives among themselves.

    Returns (positive pairs as (pos, neg), negative pairs).
    """
    if len(positives) > len(negatives):
        raise PlanningError(
            f"{len(positives)} positive vs {len(negatives)} negative {what}: "
            "cannot use every member once without pairing two positives"
        )
    pos_pairs = list(zip(positives, negatives))
    rest = negatives[len(positives):]
    neg_pairs = [(rest[k], rest[k + 1]) for k in range(0, len(rest), 2)]
    return pos_pairs, neg_pairs


def _shuffled(rng, items):
    items = list(items)
    return [items[k] for k in rng.permutation(len(items))]


def _members(patients):
    return [(p, s) for p in patients for s in ("left", "right")]


def plan_epoch(manifest, scheme, seed, patients=None):
    """Plan one epoch where every member is used exactly once.

    Positive members are paired with distinct negatives; positives
    alternate between left and right slots. For the subvol scheme the ICA
    and MCA pairings are planned separately and zipped so that the number
    of LVO-positive stacks is as close to two thirds as the pairing allows;
    both regions of a stack are then oriented to the same side, which
    makes every stack admissible.
    """
    patients = list(range(len(manifest))) if patients is None else list(patients)
    if not patients:
        raise PlanningError("empty cohort")
    rng = np.random.default_rng(seed)
    members = _members(patients)

    def orient(pos_pair, left):
        pos, neg = pos_pair
        return (pos, neg) if left else (neg, pos)

    def random_orient(pair):
        return pair if rng.random() < 0.5 else pair[::-1]

    if scheme == "hemi":
        pos = _shuffled(rng, [m for m in members if _label(manifest, m, "hemi")])
        neg = _shuffled(rng, [m for m in members if not _label(manifest, m, "hemi")])
        pos_pairs, neg_pairs = _pair_up(pos, neg, "hemispheres")
        start = int(rng.integers(2))
        samples = [orient(pp, (k + start) % 2 == 0) for k, pp in enumerate(pos_pairs)]
        samples += [random_orient(pair) for pair in neg_pairs]
    elif scheme == "subvol":
        pairs = {}
        for region in ("ica", "mca"):
            pos = _shuffled(rng, [m for m in members if _label(manifest, m, region)])
            neg = _shuffled(rng, [m for m in members if not _label(manifest, m, region)])
            pairs[region] = _pair_up(pos, neg, f"{region.upper()} subvolumes")
        (ip, ineg), (mp, mneg) = pairs["ica"], pairs["mca"]
        n = len(patients)
        lo, hi = max(0, len(ip) + len(mp) - n), min(len(ip), len(mp))
        overlap = int(np.clip(len(ip) + len(mp) - round(2 * n / 3), lo, hi))
        # zipped (ica pair, mca pair, which one is positive)
        zipped = [(ip[k], mp[k], "both") for k in range(overlap)]
        zipped += [(ip[overlap + k], mneg[k], "ica") for k in range(len(ip) - overlap)]
        zipped += [(ineg[k], mp[overlap + k], "mca") for k in range(len(mp) - overlap)]
        ineg_rest = ineg[len(mp) - overlap:]
        mneg_rest = mneg[len(ip) - overlap:]
        assert len(ineg_rest) == len(mneg_rest)
        start = int(rng.integers(2))
        samples = []
        for k, (ica, mca, kind) in enumerate(zipped):
            left = (k + start) % 2 == 0
            ica = orient(ica, left) if kind in ("both", "ica") else random_orient(ica)
            mca = orient(mca, left) if kind in ("both", "mca") else random_orient(mca)
            samples.append(ica + mca)
        samples += [random_orient(a) + random_orient(b) for a, b in zip(ineg_rest, mneg_rest)]
    else:
        raise ValueError(f"unknown scheme {scheme!r}")

    samples = tuple(_shuffled(rng, samples))
    bad = [e for e in samples if not is_admissible_entry(e, manifest)]
    if bad:  # pragma: no cover - construction guarantees admissibility
        raise PlanningError(f"planner produced inadmissible entries: {bad[:3]}")
    return EpochPlan(scheme, samples, _histogram(samples, manifest), seed)


def realize_sample(entry, source, manifest, variant, seed=0):
    """Materialise a plan entry as volumes for ``variant``.

    ``source`` provides ``hemisphere(p, side)`` and ``region(p, side, region)``
    in stored orientation (e.g. :class:`subrecomb.cohort.CohortVolumes`).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if len(entry) != (4 if variant == "im_stack" else 2):
        raise ValueError(f"{variant} needs a {SCHEME_OF_VARIANT[variant]} entry, got {entry}")
    labels = entry_labels(entry, manifest)
    if variant == "whole_head":
        (pi, si), (pj, sj) = entry
        left = vol.mirror_sagittal(source.hemisphere(pi, si))
        volumes = (vol.concat_sagittal(left, source.hemisphere(pj, sj)),)
    elif variant == "h_stack":
        (pi, si), (pj, sj) = entry
        volumes = (vol.stack_channels(source.hemisphere(pi, si), source.hemisphere(pj, sj)),)
    else:
        (pi, si), (pj, sj), (pk, sk), (pl, sl) = entry
        ica = vol.stack_channels(source.region(pi, si, "ICA"), source.region(pj, sj, "ICA"))
        mca = vol.stack_channels(source.region(pk, sk, "MCA"), source.region(pl, sl, "MCA"))
        volumes = (ica, mca)
    return SampleStack(SCHEME_OF_VARIANT[variant], variant, tuple(entry), volumes, labels, seed)


def mirror_sample(s):
    """Left/right flip: sagittal mirror for whole heads, channel swap for stacks."""
    if s.variant == "whole_head":
        volumes = (vol.mirror_sagittal(s.volumes[0]),)
    else:
        volumes = tuple(vol.Volume3D(v.data[::-1], v.frame_tag, v.spacing_mm) for v in s.volumes)
    m = s.member_ids
    members = (m[1], m[0]) if len(m) == 2 else (m[1], m[0], m[3], m[2])
    labels = tuple(ClassTriple(*t).swapped() for t in s.labels)
    return SampleStack(s.scheme, s.variant, members, volumes, labels, s.provenance_seed)


def export_epoch(plan, source, manifest, variant, out_dir):
    """Write every realized sample as VMV1 volumes plus an ``index.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = {"scheme": plan.scheme, "variant": variant, "seed": plan.seed,
             "class_histogram": list(plan.class_histogram), "samples": []}
    for n, entry in enumerate(plan.samples):
        s = realize_sample(entry, source, manifest, variant, plan.seed)
        names = ["input"] if len(s.volumes) == 1 else ["ica", "mca"]
        files = []
        for name, v in zip(names, s.volumes):
            rel = f"sample_{n:04d}_{name}.vmv"
            vol.save_vmv(out / rel, v)
            files.append(rel)
        index["samples"].append({
            "members": [{"patient": manifest.patients[p].id, "side": side} for p, side in entry],
            "volumes": files,
            "labels": {k: list(t) for k, t in zip(("global", "ica", "mca"), s.labels)},
        })
    (out / "index.json").write_text(json.dumps(index, indent=1))
    return out / "index.json"
