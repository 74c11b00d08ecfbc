import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_manifest
from subrecomb import volume as vol
from subrecomb.labels import ClassTriple
from subrecomb.recombine import (
    PlanningError,
    entry_labels,
    export_epoch,
    is_admissible_entry,
    mirror_sample,
    original_entries,
    plan_epoch,
    realize_sample,
)


def balanced_manifest(P=60, seed=0):
    """Two thirds positive, random side and region mix."""
    rng = np.random.default_rng(seed)
    labels = []
    for p in range(P):
        lab = [0, 0, 0, 0]
        if p < round(2 * P / 3):
            side = int(rng.integers(2))
            kind = int(rng.integers(3))
            if kind in (0, 2):
                lab[side] = 1
            if kind in (1, 2):
                lab[2 + side] = 1
        labels.append(lab)
    return make_manifest(labels)


def check_plan(plan, manifest, scheme):
    width = 2 if scheme == "hemi" else 4
    P = len(manifest)
    assert len(plan.samples) == P
    for entry in plan.samples:
        assert len(entry) == width and is_admissible_entry(entry, manifest)
    if scheme == "hemi":
        uses = Counter(m for e in plan.samples for m in e)
        assert len(uses) == 2 * P and set(uses.values()) == {1}
    else:
        for slots in ((0, 1), (2, 3)):
            uses = Counter(e[s] for e in plan.samples for s in slots)
            assert len(uses) == 2 * P and set(uses.values()) == {1}


def test_hemi_plan_uniform_classes():
    m = balanced_manifest()
    for seed in range(20):
        plan = plan_epoch(m, "hemi", seed)
        check_plan(plan, m, "hemi")
        assert plan.class_histogram == (20, 20, 20)


def test_subvol_plan_uses_every_subvolume_once():
    m = balanced_manifest()
    for seed in range(20):
        plan = plan_epoch(m, "subvol", seed)
        check_plan(plan, m, "subvol")
        assert sum(plan.class_histogram[1:]) == 40
        assert abs(plan.class_histogram[1] - plan.class_histogram[2]) <= 1


def test_plan_deterministic_and_seed_dependent():
    m = balanced_manifest()
    assert plan_epoch(m, "hemi", 5) == plan_epoch(m, "hemi", 5)
    assert plan_epoch(m, "hemi", 5).samples != plan_epoch(m, "hemi", 6).samples


def test_plan_on_patient_subset():
    m = balanced_manifest()
    sub = list(range(0, 60, 2))
    plan = plan_epoch(m, "hemi", 0, patients=sub)
    assert {p for e in plan.samples for p, _ in e} <= set(sub)
    assert len(plan.samples) == 30


def test_plan_feasible_with_single_sided_positives():
    # every patient contributes at most one positive member, so positives never outnumber negatives
    m = make_manifest([(1, 0, 0, 0)] * 3 + [(0, 1, 0, 1)] * 2)
    for scheme in ("hemi", "subvol"):
        check_plan(plan_epoch(m, scheme, 0), m, scheme)


def test_plan_infeasible_with_bilateral_patients():
    m = make_manifest([(1, 1, 0, 0), (0, 0, 1, 1), (1, 0, 0, 1)])
    with pytest.raises(PlanningError):
        plan_epoch(m, "hemi", 0)
    with pytest.raises(PlanningError):
        plan_epoch(make_manifest([(1, 1, 0, 0)]), "subvol", 0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=2, max_size=30), st.integers(0, 1000))
def test_plans_always_admissible(spec, seed):
    # (side 0 none / 1 left / 2 right, regions 0 ICA / 1 MCA / 2 both)
    labels = []
    for side, regions in spec:
        lab = [0, 0, 0, 0]
        if side:
            if regions in (0, 2):
                lab[side - 1] = 1
            if regions in (1, 2):
                lab[2 + side - 1] = 1
        labels.append(lab)
    m = make_manifest(labels)
    for scheme in ("hemi", "subvol"):
        try:
            plan = plan_epoch(m, scheme, seed)
        except PlanningError:
            continue
        check_plan(plan, m, scheme)


def test_entry_labels_hemi():
    m = make_manifest([(0, 0, 1, 0), (0, 0, 0, 0)])
    g, ica, mca = entry_labels(((0, "left"), (1, "right")), m)
    assert g == (0, 1, 0) and ica == (1, 0, 0) and mca == (0, 1, 0)
    g, _, _ = entry_labels(((1, "left"), (0, "left")), m)
    assert g == (0, 0, 1)


def test_original_entries():
    assert original_entries([3], "hemi") == [((3, "left"), (3, "right"))]
    assert original_entries([3], "subvol") == [((3, "left"), (3, "right"), (3, "left"), (3, "right"))]


def test_realize_original_whole_head_is_identity(small_cohort, small_source):
    manifest, volumes, _ = small_cohort
    for p in range(3):
        s = realize_sample(((p, "left"), (p, "right")), small_source, manifest, "whole_head")
        assert s.volumes[0] == volumes[p]
        assert s.labels == manifest.patients[p].triples()


def test_realize_h_stack_channels(small_cohort, small_source):
    manifest, volumes, _ = small_cohort
    s = realize_sample(((0, "left"), (1, "left")), small_source, manifest, "h_stack")
    v = s.volumes[0]
    assert v.channels == 2 and v.frame_tag == "hemisphere"
    assert np.array_equal(v.data[0], vol.mirror_x(volumes[0].data[:, :100])[0])
    assert np.array_equal(v.data[1], vol.mirror_x(volumes[1].data[:, :100])[0])


def test_realize_im_stack(small_cohort, small_source):
    manifest, volumes, _ = small_cohort
    candidates = (((0, "left"), (p, "right"), (2, "right"), (q, "left")) for p in range(8) for q in range(8))
    entry = next(e for e in candidates if is_admissible_entry(e, manifest))
    (_, _), (p, _), (_, _), (q, _) = entry
    s = realize_sample(entry, small_source, manifest, "im_stack")
    ica, mca = s.volumes
    assert ica.frame_tag == "ica_box" and mca.frame_tag == "mca_box"
    assert ica.channel(1) == vol.crop_region(volumes[p], vol.REGION_BOXES[("ICA", "right")])
    assert mca.channel(1) == vol.crop_region(volumes[q], vol.REGION_BOXES[("MCA", "left")])


def test_realize_rejects_wrong_entry(small_cohort, small_source):
    manifest = small_cohort[0]
    with pytest.raises(ValueError):
        realize_sample(((0, "left"), (0, "right")), small_source, manifest, "im_stack")


def test_mirror_sample_whole_head(small_cohort, small_source):
    manifest, volumes, _ = small_cohort
    p = next(i for i, r in enumerate(manifest.patients) if r.global_class().index() > 0)
    s = realize_sample(((p, "left"), (p, "right")), small_source, manifest, "whole_head")
    m = mirror_sample(s)
    assert m.volumes[0] == vol.mirror_sagittal(volumes[p])
    assert m.labels == tuple(ClassTriple(*t).swapped() for t in s.labels)
    assert mirror_sample(m).volumes[0] == s.volumes[0]


def test_mirror_sample_stack_equals_swapped_entry(small_cohort, small_source):
    manifest = small_cohort[0]
    entry = ((0, "left"), (1, "right"))
    if not is_admissible_entry(entry, manifest):
        entry = ((0, "left"), (0, "right"))
    a = mirror_sample(realize_sample(entry, small_source, manifest, "h_stack"))
    b = realize_sample(entry[::-1], small_source, manifest, "h_stack")
    assert a.volumes[0] == b.volumes[0] and a.labels == b.labels and a.member_ids == b.member_ids


def test_export_epoch(tmp_path, small_cohort, small_source):
    manifest = small_cohort[0]
    plan = plan_epoch(manifest, "hemi", 0)
    index = export_epoch(plan, small_source, manifest, "h_stack", tmp_path)
    data = json.loads(index.read_text())
    assert len(data["samples"]) == len(plan.samples)
    first = data["samples"][0]
    v = vol.load_vmv(tmp_path / first["volumes"][0])
    assert v.channels == 2
    assert sum(first["labels"]["global"]) == 1
