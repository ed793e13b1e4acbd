import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mafnet import data
from mafnet.niftio import volume_from_array
from mafnet.phantom import generate_phantom, write_phantom_dataset


def test_normalize_midpoint_is_zero():
    sl = np.array([[0.0, 100.0], [50.0, 100.0]])
    out = data.normalize(sl)
    assert out[1, 0] == 0.0
    assert out[0, 0] == -1.0
    assert out[0, 1] == 1.0


def test_normalize_constant_slice_maps_to_minus_one():
    out = data.normalize(np.zeros((4, 4)))
    np.testing.assert_array_equal(out, np.full((4, 4), -1.0, dtype=np.float32))


def test_normalize_derived_value():
    # 2 * (15 - 10) / 20 - 1 = -0.5
    out = data.normalize(np.array([[10.0, 30.0, 15.0]]))
    assert out[0, 2] == pytest.approx(-0.5, abs=1e-7)


def test_normalize_rejects_non_finite():
    with pytest.raises(data.NonFinite):
        data.normalize(np.array([[1.0, np.nan]]))


@settings(max_examples=50, deadline=None)
@given(
    values=st.lists(
        st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False),
        min_size=2,
        max_size=30,
    )
)
def test_normalize_is_monotone_and_bounded(values):
    arr = np.array(values).reshape(1, -1)
    out = data.normalize(arr)
    assert out.min() >= -1.0 and out.max() <= 1.0
    order = np.argsort(arr[0], kind="stable")
    assert np.all(np.diff(out[0][order]) >= 0)


def test_remap_labels_table():
    raw = np.array([0, 1, 2, 4])
    np.testing.assert_array_equal(data.remap_labels(raw), [0, 1, 2, 3])


def test_remap_labels_zero_map():
    np.testing.assert_array_equal(data.remap_labels(np.zeros((3, 3))), np.zeros((3, 3)))


def test_remap_labels_rejects_unknown_code():
    with pytest.raises(data.UnknownLabel):
        data.remap_labels(np.array([0, 3]))


def test_compose_regions_counts():
    seg = np.array([[1, 2], [3, 0]])
    masks = data.compose_regions(seg)
    assert masks.wt.sum() == 3
    assert masks.tc.sum() == 2
    assert masks.et.sum() == 1


def test_compose_regions_degenerate_full_and_empty():
    full = data.compose_regions(np.full((2, 2), 3))
    assert full.wt.all() and full.tc.all() and full.et.all()
    empty = data.compose_regions(np.zeros((2, 2), dtype=int))
    assert not empty.wt.any() and not empty.tc.any() and not empty.et.any()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_compose_regions_nesting_property(seed):
    seg = np.random.default_rng(seed).integers(0, 4, size=(12, 12))
    masks = data.compose_regions(seg)
    assert np.all(masks.et <= masks.tc)
    assert np.all(masks.tc <= masks.wt)


def test_split_cases_369_gives_258_36_75():
    ids = [f"c{i:04d}" for i in range(369)]
    split = data.split_cases(ids, seed=7)
    assert (len(split.train), len(split.val), len(split.test)) == (258, 36, 75)


def test_split_cases_exact_ratio_at_10():
    split = data.split_cases([f"c{i}" for i in range(10)], seed=0)
    assert (len(split.train), len(split.val), len(split.test)) == (7, 1, 2)


def test_split_cases_deterministic_and_partition():
    ids = [f"c{i:03d}" for i in range(23)]
    a = data.split_cases(ids, seed=5)
    b = data.split_cases(list(reversed(ids)), seed=5)
    assert a == b
    combined = a.train + a.val + a.test
    assert sorted(combined) == sorted(ids)
    assert len(set(a.train) & set(a.val)) == 0
    assert len(set(a.train) & set(a.test)) == 0
    assert len(set(a.val) & set(a.test)) == 0


def test_split_cases_rejects_too_few():
    with pytest.raises(data.TooFewCases):
        data.split_cases([f"c{i}" for i in range(9)], seed=0)


def _tiny_case(label_plan, extent=32, case_id="t"):
    """Case with given per-slice label fill; modalities are ramps."""
    nz = len(label_plan)
    shape = (extent, extent, nz)
    ramp = np.linspace(0, 1, num=int(np.prod(shape)), dtype=np.float32).reshape(shape)
    labels = np.zeros(shape, dtype=np.float32)
    for z, code in enumerate(label_plan):
        if code:
            labels[extent // 2, extent // 2, z] = code
    return data.Case(
        case_id=case_id,
        t1=volume_from_array(ramp),
        t2=volume_from_array(ramp * 2),
        flair=volume_from_array(ramp + 1),
        labels=volume_from_array(labels),
        t1ce=volume_from_array(ramp * 0.5),
    )


def test_make_slices_empty_for_tumorless_case():
    case = _tiny_case([0, 0, 0])
    assert data.make_slices(case, crop_size=16) == []


def test_make_slices_selects_only_tumor_slices():
    case = _tiny_case([0, 2, 0, 4, 1])
    samples = data.make_slices(case, crop_size=32)
    assert [s.slice_index for s in samples] == [1, 3, 4]
    for s in samples:
        s.validate()
        assert s.x.shape == (3, 32, 32)
        assert s.y_t1ce.shape == (1, 32, 32)


def test_center_window_240_is_8_to_232():
    win = data.center_window(240, 224)
    assert (win.start, win.stop) == (8, 232)


def test_center_window_odd_margin_floors_low_side():
    win = data.center_window(9, 4)  # margin 5: low trim 2, high trim 3
    assert (win.start, win.stop) == (2, 6)


def test_make_slices_crop_excludes_outside_tumor():
    # Tumor outside the crop window must not produce a sample.
    case = _tiny_case([0])
    case.labels.voxels[1, 1, 0] = 4.0  # corner, outside the central 16 crop
    assert data.make_slices(case, crop_size=16) == []


def test_make_slices_too_small():
    case = _tiny_case([2], extent=16)
    with pytest.raises(data.TooSmall):
        data.make_slices(case, crop_size=224)


def test_make_slices_counts_match_label_scan_on_phantom():
    case = generate_phantom(seed=42, dims=(64, 64, 16), allow_small=True)
    samples = data.make_slices(case, crop_size=48)
    win = data.center_window(64, 48)
    expected = sum(
        1
        for z in range(16)
        if (case.labels.voxels[win, win, z] > 0).any()
    )
    assert expected > 0
    assert len(samples) == expected


def test_load_case_round_trip(tmp_path):
    write_phantom_dataset(tmp_path, n_cases=1, seed=3, dims=(48, 48, 8), allow_small=True)
    case = data.load_case(tmp_path / "phantom_000")
    assert case.case_id == "phantom_000"
    assert case.t1ce is not None and case.labels is not None
    assert case.dims == (48, 48, 8)


def test_load_case_missing_modality(tmp_path):
    write_phantom_dataset(tmp_path, n_cases=1, seed=3, dims=(48, 48, 8), allow_small=True)
    (tmp_path / "phantom_000" / "phantom_000_flair.nii.gz").unlink()
    with pytest.raises(data.MissingModality):
        data.load_case(tmp_path / "phantom_000")


def test_load_case_dimension_mismatch(tmp_path):
    write_phantom_dataset(tmp_path, n_cases=1, seed=3, dims=(48, 48, 8), allow_small=True)
    bad = volume_from_array(np.zeros((48, 48, 9), dtype=np.float32))
    from mafnet.niftio import save_volume

    save_volume(bad, tmp_path / "phantom_000" / "phantom_000_t2.nii.gz")
    with pytest.raises(data.DimensionMismatch):
        data.load_case(tmp_path / "phantom_000")


def test_load_case_optional_t1ce(tmp_path):
    write_phantom_dataset(tmp_path, n_cases=1, seed=3, dims=(48, 48, 8), allow_small=True)
    (tmp_path / "phantom_000" / "phantom_000_t1ce.nii.gz").unlink()
    case = data.load_case(tmp_path / "phantom_000")
    assert case.t1ce is None
    with pytest.raises(data.MissingModality):
        data.load_case(tmp_path / "phantom_000", require_t1ce=True)


def test_slice_samples_satisfy_invariants_across_phantom_dataset(tmp_path):
    write_phantom_dataset(tmp_path, n_cases=2, seed=8, dims=(48, 48, 10), allow_small=True)
    for case in data.load_dataset(tmp_path):
        for sample in data.make_slices(case, crop_size=40):
            sample.validate()
            assert sample.x.dtype == np.float32
            assert set(np.unique(sample.seg)) <= {0, 1, 2, 3}
