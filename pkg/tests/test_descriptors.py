import numpy as np
import pytest
from scipy import ndimage

from patchbench.errors import DescriptorError
from patchbench.services.descriptors import (
    BRIEF_BITS,
    SIFT_CLAMP,
    DistanceScorer,
    area_weights,
    brief,
    brief_pattern,
    describe,
    distance,
    get_family,
    mstd,
    resz,
    rootsift,
    score,
    sift,
)
from patchbench.services.patches import PATCH_SIZE, dequantize_patches


def _smooth_patches(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    raw = ndimage.gaussian_filter(rng.random((n, PATCH_SIZE, PATCH_SIZE)), sigma=(0, 3, 3))
    lo, hi = raw.min(axis=(1, 2), keepdims=True), raw.max(axis=(1, 2), keepdims=True)
    return 0.2 + 0.4 * (raw - lo) / (hi - lo)


# -- mstd / resz ------------------------------------------------------------------------------


def test_mstd():
    assert np.array_equal(mstd(np.full((PATCH_SIZE, PATCH_SIZE), 0.5)), [0.5, 0.0])
    p = _smooth_patches(1)[0]
    assert np.allclose(mstd(p), [p.mean(), p.std()])
    assert mstd(_smooth_patches(3)).shape == (3, 2)


def test_mstd_of_a_two_level_patch():
    p = np.zeros((PATCH_SIZE, PATCH_SIZE))
    p[:, :32] = 1.0
    frac = 32 / PATCH_SIZE
    assert np.allclose(mstd(p), [frac, np.sqrt(frac * (1 - frac))])


def test_patch_shape_is_checked():
    with pytest.raises(DescriptorError):
        mstd(np.zeros((32, 32)))


def test_area_weights_average_unit_pixels():
    w = area_weights(6, PATCH_SIZE)
    assert w.shape == (6, PATCH_SIZE)
    assert np.allclose(w.sum(axis=1), 1.0)
    assert np.allclose(w.sum(axis=0), 6 / PATCH_SIZE)


def test_resz_of_a_constant_patch_is_zero():
    assert np.allclose(resz(np.full((PATCH_SIZE, PATCH_SIZE), 0.7)), np.zeros(36), atol=1e-12)


def test_resz_matches_a_supersampled_oracle():
    yy, xx = np.mgrid[0:PATCH_SIZE, 0:PATCH_SIZE].astype(np.float64)
    ramp = (0.3 * xx + 0.7 * yy) / PATCH_SIZE
    # repeat each pixel 6x6, then average 65x65 blocks: exact area averaging
    fine = np.repeat(np.repeat(ramp, 6, axis=0), 6, axis=1)
    small = fine.reshape(6, PATCH_SIZE, 6, PATCH_SIZE).mean(axis=(1, 3)).ravel()
    expected = (small - small.mean()) / small.std()
    assert np.allclose(resz(ramp), expected, atol=1e-10)


# -- sift / rootsift --------------------------------------------------------------------------


def test_sift_is_a_clamped_unit_vector():
    v = sift(_smooth_patches(4))
    assert v.shape == (4, 128)
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0)
    assert (sift(_smooth_patches(4), renormalize=False) <= SIFT_CLAMP + 1e-12).all()
    assert (v >= 0).all()


def test_sift_ignores_affine_brightness_changes():
    p = _smooth_patches(1, seed=3)[0]
    assert np.allclose(sift(1.5 * p + 0.05), sift(p), atol=1e-6)


def test_sift_of_a_constant_patch_is_zero():
    flat = np.full((PATCH_SIZE, PATCH_SIZE), 0.4)
    assert np.array_equal(sift(flat), np.zeros(128))
    assert np.array_equal(rootsift(flat), np.zeros(128))


def test_rootsift_matches_its_definition():
    patches = _smooth_patches(5, seed=1)
    s = sift(patches)
    expected = np.sqrt(s / s.sum(axis=1, keepdims=True))
    r = rootsift(patches)
    assert np.allclose(r, expected, atol=1e-12)
    assert np.allclose(np.linalg.norm(r, axis=1), 1.0, atol=1e-9)
    assert rootsift(patches[0]).shape == (128,)


# -- brief ------------------------------------------------------------------------------------


def test_brief_bits():
    patches = np.random.default_rng(2).random((40, PATCH_SIZE, PATCH_SIZE))
    bits = brief(patches)
    assert bits.shape == (40, BRIEF_BITS) and bits.dtype == np.bool_
    assert np.array_equal(brief(patches[0]), bits[0])
    assert distance(bits[0], brief(patches[0].copy())) == 0.0
    # independent noise patches disagree on about half the bits
    mean = np.mean([distance(bits[i], bits[i + 1]) for i in range(0, 40, 2)])
    assert abs(mean - 128) < 15


def test_brief_pattern_is_seeded_and_inside_the_patch():
    a, b = brief_pattern(1), brief_pattern(2)
    assert a is brief_pattern(1)
    assert not np.array_equal(a.pairs, b.pairs)
    assert a.pairs.min() >= 0 and a.pairs.max() < PATCH_SIZE


# -- distances and scorers --------------------------------------------------------------------


def test_distance_basics():
    assert distance(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == 5.0
    assert score(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == -5.0
    assert distance(np.array([True, False, True]), np.array([False, False, False])) == 2.0


def test_distance_is_a_metric():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a, b, c = rng.normal(size=(3, 16))
        assert distance(a, a) == 0.0
        assert distance(a, b) == pytest.approx(distance(b, a))
        assert distance(a, c) <= distance(a, b) + distance(b, c) + 1e-12


def test_distance_rejects_mismatches():
    with pytest.raises(DescriptorError):
        distance(np.zeros(3), np.zeros(4))
    with pytest.raises(DescriptorError):
        distance(np.zeros(3, bool), np.zeros(3))


def test_distance_scorer():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(5, 8)), rng.normal(size=(7, 8))
    scorer = DistanceScorer("l2")
    cross = scorer.cross(a, b)
    assert cross.shape == (5, 7)
    assert cross[2, 3] == pytest.approx(score(a[2], b[3]))
    assert np.allclose(scorer.pairwise(a, b[:5]), [score(x, y) for x, y in zip(a, b[:5])])

    bits_a, bits_b = rng.random((4, 256)) < 0.5, rng.random((6, 256)) < 0.5
    hamming = DistanceScorer("hamming")
    assert hamming.cross(bits_a, bits_b)[1, 2] == -distance(bits_a[1], bits_b[2])
    assert hamming.pairwise(bits_a, bits_b[:4])[3] == -distance(bits_a[3], bits_b[3])


# -- registry and batch extraction ------------------------------------------------------------


def test_family_registry():
    assert get_family("rsift").name == "rootsift"
    assert get_family("SIFT").dim == 128
    assert get_family("brief").metric == "hamming"
    assert get_family("sift").normalizable and not get_family("mstd").normalizable
    with pytest.raises(DescriptorError):
        get_family("orb")


@pytest.mark.parametrize("name", ["mstd", "resz", "sift", "rootsift", "brief"])
def test_describe_matches_per_patch_extraction(name):
    family = get_family(name)
    stored = np.random.default_rng(5).integers(0, 256, (300, PATCH_SIZE, PATCH_SIZE), np.uint8)
    batch = describe(family, stored)
    assert batch.shape == (300, family.dim)
    floats = dequantize_patches(stored)
    for i in (0, 255, 256, 299):
        single = np.asarray(family.extract(floats[i]), dtype=np.float64)
        assert np.allclose(batch[i].astype(np.float64), single)


def test_describe_empty_stack():
    assert describe(get_family("sift"), np.empty((0, PATCH_SIZE, PATCH_SIZE))).shape == (0, 128)
    assert describe(get_family("brief"), np.empty((0, PATCH_SIZE, PATCH_SIZE))).dtype == np.bool_
