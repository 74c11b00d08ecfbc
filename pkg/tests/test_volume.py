import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subrecomb import volume as vol
from subrecomb.volume import FrameError, Volume3D


def whole_with(*voxels):
    data = np.zeros((1, 200, 205, 90), np.uint8)
    for x, y, z in voxels:
        data[0, x, y, z] = 1
    return Volume3D(data, "whole_head")


def test_frame_shapes_enforced():
    with pytest.raises(FrameError):
        Volume3D(np.zeros((1, 10, 10, 10), np.uint8), "hemisphere")
    with pytest.raises(FrameError):
        Volume3D(np.zeros((1, 100, 205, 90), np.uint8), "bogus")
    with pytest.raises(ValueError):
        Volume3D(np.full((1, 55, 121, 57), 2, np.uint8), "ica_box")
    v = Volume3D(np.zeros((100, 205, 90), bool), "hemisphere")
    assert v.data.dtype == np.uint8 and v.channels == 1


def test_volume_is_immutable():
    v = Volume3D.empty("mca_box")
    with pytest.raises(ValueError):
        v.data[0, 0, 0, 0] = 1


def test_split_boundary_voxel():
    left, right = vol.split_hemispheres(whole_with((0, 5, 5)))
    assert left.count() == 1 and right.count() == 0
    left, right = vol.split_hemispheres(whole_with((100, 5, 5)))
    assert left.count() == 0 and right.data[0, 0, 5, 5] == 1


def test_split_shapes_and_roundtrip(small_cohort):
    _, volumes, _ = small_cohort
    v = volumes[0]
    left, right = vol.split_hemispheres(v)
    assert left.shape == right.shape == (100, 205, 90)
    assert vol.concat_sagittal(left, right) == v


def test_split_rejects_wrong_frame():
    with pytest.raises(FrameError):
        vol.split_hemispheres(Volume3D.empty("hemisphere"))
    with pytest.raises(FrameError):
        vol.split_hemispheres(Volume3D.empty("whole_head", channels=2))


def test_mirror_index_and_involution(small_cohort):
    v = vol.mirror_sagittal(whole_with((0, 1, 2)))
    assert v.data[0, 199, 1, 2] == 1
    w = small_cohort[1][1]
    assert vol.mirror_sagittal(vol.mirror_sagittal(w)) == w
    assert vol.mirror_sagittal(w).count() == w.count()


def test_concat_places_hemispheres():
    a = Volume3D.empty("hemisphere")
    d = np.zeros((1, 100, 205, 90), np.uint8)
    d[0, 0, 0, 0] = 1
    b = Volume3D(d, "hemisphere")
    w = vol.concat_sagittal(a, b)
    assert w.frame_tag == "whole_head" and w.data[0, 100, 0, 0] == 1
    with pytest.raises(FrameError):
        vol.concat_sagittal(a, Volume3D.empty("ica_box"))


def test_stack_channels():
    a = Volume3D(np.ones((1, 55, 121, 57), np.uint8), "ica_box")
    b = Volume3D.empty("ica_box")
    s = vol.stack_channels(a, b)
    assert s.channels == 2 and s.channel(0) == a and s.channel(1) == b
    with pytest.raises(FrameError):
        vol.stack_channels(a, Volume3D.empty("mca_box"))


def test_region_boxes_valid_and_mirrored():
    for (region, side), box in vol.REGION_BOXES.items():
        box.validate()
        assert box.extent == vol.FRAME_SHAPES[box.frame_tag]
    for region in ("ICA", "MCA"):
        left, right = vol.REGION_BOXES[(region, "left")], vol.REGION_BOXES[(region, "right")]
        assert left.mirrored() == right and right.mirrored() == left
        assert left.origin[0] + left.extent[0] <= 100 <= right.origin[0]


def test_crop_matches_slice_and_mirrors_left(small_cohort):
    v = small_cohort[1][2]
    for (region, side), box in vol.REGION_BOXES.items():
        crop = vol.crop_region(v, box)
        raw = v.data[(slice(None),) + box.slices()]
        expected = raw[:, ::-1] if side == "left" else raw
        assert np.array_equal(crop.data, expected)
        assert crop.shape == vol.FRAME_SHAPES[box.frame_tag]


def test_left_crop_equals_right_crop_of_mirrored_head(small_cohort):
    v = small_cohort[1][3]
    m = vol.mirror_sagittal(v)
    for region in ("ICA", "MCA"):
        assert vol.crop_region(v, vol.REGION_BOXES[(region, "left")]) == vol.crop_region(
            m, vol.REGION_BOXES[(region, "right")])


def test_crop_rejects_bad_box():
    bad = vol.RegionBox("ICA", "right", (180, 0, 0), (55, 121, 57))
    with pytest.raises(FrameError):
        vol.crop_region(Volume3D.empty("whole_head"), bad)


def test_vmv_roundtrip_and_byte_order(tmp_path):
    d = np.zeros((2, 60, 77, 76), np.uint8)
    d[0, 1, 0, 0] = 1  # second byte on disk (x fastest)
    d[1, 0, 1, 0] = 1
    v = Volume3D(d, "mca_box")
    path = vol.save_vmv(tmp_path / "a.vmv", v)
    raw = (tmp_path / "a.raw").read_bytes()
    assert len(raw) == 2 * 60 * 77 * 76
    assert raw[1] == 1 and raw[0] == 0
    assert raw[60 * 77 * 76 + 60] == 1
    assert vol.load_vmv(path) == v


def test_vmv_truncated(tmp_path):
    path = vol.save_vmv(tmp_path / "b.vmv", Volume3D.empty("ica_box"))
    (tmp_path / "b.raw").write_bytes(b"\0" * 10)
    with pytest.raises(FrameError):
        vol.load_vmv(path)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 9), st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31))
def test_downsample_max_matches_blockwise_any(f, x, y, z, seed):
    a = (np.random.default_rng(seed).random((1, x, y, z)) < 0.2).astype(np.uint8)
    out = vol.downsample_max(a, f)
    assert out.shape == (1, -(-x // f), -(-y // f), -(-z // f))
    for i, j, k in np.ndindex(*out.shape[1:]):
        block = a[0, i * f : (i + 1) * f, j * f : (j + 1) * f, k * f : (k + 1) * f]
        assert out[0, i, j, k] == block.max()
