"""Tests for skills/preprocess.py: foreground, clipping, normalization."""
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from skills.phantom import PhantomSpec, make_phantom
from skills.preprocess import (
    EmptyForegroundError, Normalization, binarize, clip_outliers, extract_foreground, normalize_unit, preprocess,
)
from skills.volume import Mask, Volume


def _two_cubes() -> np.ndarray:
    data = np.zeros((8, 12, 12))
    data[1:4, 1:4, 1:4] = 1.0   # 27 voxels
    data[5:7, 7:9, 7:9] = 1.0   # 8 voxels
    return data


# --- extract_foreground ---

def test_larger_component_wins():
    data = _two_cubes()
    mask = extract_foreground(Volume(data))
    expected = np.zeros_like(data, dtype=bool)
    expected[1:4, 1:4, 1:4] = True
    assert np.array_equal(mask.bits, expected)


def test_diagonal_contact_is_not_connected():
    data = np.zeros((1, 4, 4))
    data[0, 0, 0] = data[0, 1, 1] = data[0, 2, 2] = 1.0
    data[0, 3, 0] = data[0, 3, 1] = 1.0
    mask = extract_foreground(Volume(data))
    assert mask.count == 2
    assert mask.bits[0, 3, 0] and mask.bits[0, 3, 1]


def test_result_is_one_six_connected_component():
    rng = np.random.default_rng(2)
    data = (rng.random((6, 10, 10)) > 0.6).astype(float)
    mask = extract_foreground(Volume(data))
    _, count = ndimage.label(mask.bits, structure=ndimage.generate_binary_structure(3, 1))
    assert count == 1


def test_uniform_nonzero_volume_is_all_foreground():
    mask = extract_foreground(Volume(np.full((2, 3, 3), 0.7)))
    assert mask.count == 18


def test_all_zero_volume_has_no_foreground():
    with pytest.raises(EmptyForegroundError):
        extract_foreground(Volume(np.zeros((2, 3, 3))))


def test_binarize_splits_two_levels():
    data = np.array([[[0.1, 0.1, 0.9, 0.9]]])
    assert binarize(Volume(data)).bits.ravel().tolist() == [False, False, True, True]


def test_phantom_foreground_is_the_head_shell():
    spec = PhantomSpec(dims=(32, 32, 16), semi_axes=(13.0, 12.0, 6.0), skull_thickness=2.0,
                       intensities=(0.05, 0.45, 0.6), cavity=None)
    truth, labels, head = make_phantom(spec)
    mask = extract_foreground(truth)
    assert np.array_equal(mask.bits, head.bits)
    assert np.array_equal(mask.bits, Mask.from_labels(labels).bits)


# --- clip_outliers ---

def test_clip_example():
    v = Volume(np.array([[[0.0, 0.5, 1.0, 0.3]]]))
    mask = Mask(np.array([[[True, True, True, False]]]))
    out = clip_outliers(v, mask, 0.05, 0.85)
    assert out.data.ravel() == pytest.approx([0.05, 0.5, 0.85, 0.0], abs=1e-7)


def test_clip_full_range_is_identity_on_mask():
    v = Volume(np.array([[[0.1, 0.4, 0.7]]]))
    out = clip_outliers(v, Mask.full((3, 1, 1)), 0.0, 1.0)
    assert np.array_equal(out.data, v.data)


def test_clip_bounds_are_reached():
    rng = np.random.default_rng(4)
    data = rng.random((4, 8, 8))
    mask = Mask(rng.random((4, 8, 8)) > 0.3)
    values = data[mask.bits]
    lo = values.min() + 0.05 * (values.max() - values.min())
    hi = values.min() + 0.85 * (values.max() - values.min())
    out = clip_outliers(Volume(data), mask)
    assert out.data[mask.bits].min() == pytest.approx(lo, abs=1e-6)
    assert out.data[mask.bits].max() == pytest.approx(hi, abs=1e-6)
    assert not out.data[~mask.bits].any()


def test_clip_degenerate_spectrum_unchanged():
    v = Volume(np.full((1, 2, 2), 0.4))
    assert clip_outliers(v, Mask.full((2, 2, 1))) is v


def test_clip_rejects_empty_mask():
    with pytest.raises(ValueError):
        clip_outliers(Volume(np.ones((1, 1, 2))), Mask(np.zeros((1, 1, 2), dtype=bool)))


# --- normalize_unit ---

def test_normalize_example():
    v = Volume(np.array([[[2.0, 4.0, 6.0, 9.0]]]))
    mask = Mask(np.array([[[True, True, True, False]]]))
    out, norm = normalize_unit(v, mask)
    assert out.data.ravel().tolist() == [0.0, 0.5, 1.0, 0.0]
    assert norm.scale == pytest.approx(0.25)
    assert norm.offset == pytest.approx(-0.5)


def test_normalize_unit_data_is_identity():
    v = Volume(np.array([[[0.0, 0.25, 1.0]]]))
    out, _ = normalize_unit(v, Mask.full((3, 1, 1)))
    assert np.array_equal(out.data, v.data)


def test_normalize_inverse_restores_input():
    rng = np.random.default_rng(8)
    v = Volume(rng.uniform(3.0, 7.0, (2, 5, 5)))
    mask = Mask.full(v.dims)
    out, norm = normalize_unit(v, mask)
    assert np.allclose(norm.invert(out.data), v.data, atol=1e-5)


def test_normalize_degenerate():
    out, norm = normalize_unit(Volume(np.full((1, 1, 3), 5.0)), Mask.full((3, 1, 1)))
    assert not out.data.any()
    assert norm.scale == 1.0


def test_normalization_apply_invert():
    norm = Normalization(scale=2.0, offset=-1.0)
    assert norm.apply(np.array([1.0]))[0] == 1.0
    assert norm.invert(np.array([1.0]))[0] == 1.0


# --- preprocess chain ---

def test_chain_output_range():
    rng = np.random.default_rng(9)
    data = np.zeros((4, 12, 12))
    data[:, 2:10, 2:10] = rng.uniform(0.3, 0.9, (4, 8, 8))
    result = preprocess(Volume(data))
    inside = result.volume.data[result.mask.bits]
    assert inside.min() == 0.0 and inside.max() == 1.0
    assert not result.volume.data[~result.mask.bits].any()


def test_normalize_is_idempotent():
    rng = np.random.default_rng(10)
    v = Volume(rng.uniform(0.2, 0.8, (2, 6, 6)))
    mask = Mask.full(v.dims)
    once, _ = normalize_unit(v, mask)
    twice, _ = normalize_unit(once, mask)
    assert np.allclose(once.data, twice.data, atol=1e-6)


def test_chain_is_idempotent_without_clipping():
    rng = np.random.default_rng(12)
    data = np.zeros((3, 10, 10))
    data[:, 2:8, 2:8] = rng.uniform(0.3, 0.9, (3, 6, 6))
    first = preprocess(Volume(data), lo_frac=0.0, hi_frac=1.0)
    second = preprocess(first.volume, first.mask, lo_frac=0.0, hi_frac=1.0)
    assert np.allclose(first.volume.data, second.volume.data, atol=1e-6)


def test_supplied_mask_skips_extraction():
    data = _two_cubes()
    mask = Mask(data == 0)
    data = data + 0.5
    result = preprocess(Volume(data), mask)
    assert result.mask is mask
