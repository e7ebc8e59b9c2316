import math

import numpy as np
import pytest

from conftest import make_corpus
from patchbench.errors import CorpusError, InvalidParameterError, OutOfBoundsError
from patchbench.services.geometry import (
    NOISE_PROFILES,
    Homography,
    RegionDetection,
    perturbed_frame,
    region_frame,
    sample_noise,
)
from patchbench.services.patches import (
    PATCH_SIZE,
    PatchCorpus,
    SequencePatches,
    assign_splits,
    build_corpus,
    dequantize_patches,
    dominant_orientation,
    extract_patch,
    filter_contained,
    frame_points,
    inflation_radius,
    quantize_patches,
    region_contained,
    sample_patch,
    takes_turn,
)
from patchbench.services.seeding import substream
from patchbench.services.synthesis import Sequence, SequenceKind, detect_regions

EASY = {"easy": NOISE_PROFILES["easy"]}


def _ramp(size: int = 128, vertical: bool = False) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return (yy if vertical else xx) / size


def _static_sequence(img: np.ndarray) -> Sequence:
    return Sequence(
        id="i_static",
        kind=SequenceKind.ILLUMINATION,
        ref=img,
        targets=[img.copy() for _ in range(5)],
        homographies=[Homography.identity() for _ in range(5)],
    )


def _regions(seq: Sequence, seed: int = 0, count: int = 60) -> list[RegionDetection]:
    return detect_regions(seq.ref, np.random.default_rng(seed), max_regions=count)


# -- extraction -------------------------------------------------------------------------------


def test_patch_covering_a_pixel_block_equals_the_crop():
    img = np.random.default_rng(0).random((100, 100))
    patch = extract_patch(img, RegionDetection(40.0, 45.0, 32.0), rho=1.0)
    assert patch.shape == (PATCH_SIZE, PATCH_SIZE)
    assert np.array_equal(patch, img[13:78, 8:73])


def test_patch_is_periodic_in_theta():
    img = _ramp()
    a = extract_patch(img, RegionDetection(64.0, 64.0, 2.0, 0.4))
    b = extract_patch(img, RegionDetection(64.0, 64.0, 2.0, 0.4 + 2 * math.pi))
    assert np.allclose(a, b, atol=1e-12)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_patch_axes_follow_the_image():
    patch = extract_patch(_ramp(), RegionDetection(64.0, 64.0, 2.0))
    assert np.allclose(patch[0], patch[-1])
    assert patch[32, -1] > patch[32, 0]
    assert patch[32, 32] == pytest.approx(0.5)


def test_patch_leaving_the_image_is_rejected():
    with pytest.raises(OutOfBoundsError):
        extract_patch(_ramp(), RegionDetection(5.0, 64.0, 2.0))


def test_smallest_support_is_sixteen_pixels():
    points = frame_points(region_frame(RegionDetection(50.0, 50.0, 1.6)))
    assert points[..., 0].max() - points[..., 0].min() == pytest.approx(16.0)


def test_quantization_round_trip_error_is_half_a_step():
    patches = np.random.default_rng(1).random((10, PATCH_SIZE, PATCH_SIZE))
    stored = quantize_patches(patches)
    assert stored.dtype == np.uint8
    assert np.abs(dequantize_patches(stored) - patches).max() <= 1 / 510 + 1e-12


# -- orientation ------------------------------------------------------------------------------


def test_orientation_of_a_horizontal_ramp_is_zero():
    assert dominant_orientation(_ramp(), RegionDetection(64.0, 64.0, 2.0)) == pytest.approx(0.0)


def test_orientation_of_a_vertical_ramp_is_a_quarter_turn():
    theta = dominant_orientation(_ramp(vertical=True), RegionDetection(64.0, 64.0, 2.0))
    assert theta == pytest.approx(math.pi / 2, abs=math.radians(5))


def test_orientation_of_a_constant_image_is_zero():
    flat = np.full((128, 128), 0.3)
    assert dominant_orientation(flat, RegionDetection(64.0, 64.0, 2.0)) == 0.0


# -- containment ------------------------------------------------------------------------------


def test_inflation_radius_without_noise():
    r = RegionDetection(0.0, 0.0, 2.0)
    bare = inflation_radius(r, [NOISE_PROFILES["none"]], 5.0)
    assert bare == pytest.approx(2 * math.sqrt(2) * 5)
    assert inflation_radius(r, [NOISE_PROFILES["tough"]], 5.0) > inflation_radius(
        r, [NOISE_PROFILES["easy"]], 5.0
    )


def test_region_containment():
    H = Homography(np.array([[1.0, 0.0, 40.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    r = RegionDetection(50.0, 50.0, 2.0)
    assert region_contained(r, [Homography.identity()], (100, 100), 20.0)
    assert not region_contained(r, [H], (100, 100), 20.0)
    assert not region_contained(RegionDetection(5.0, 50.0, 2.0), [], (100, 100), 20.0)


def test_filter_keeps_only_regions_that_survive_every_target(viewpoint_sequence):
    regions = _regions(viewpoint_sequence)
    kept = filter_contained(viewpoint_sequence, regions, [NOISE_PROFILES["tough"]], 5.0)
    assert 0 < len(kept) < len(regions)
    corner_index = ([0, 0, -1, -1], [0, -1, 0, -1])
    for i in kept:
        for seed in range(5):
            noise = sample_noise(NOISE_PROFILES["tough"], np.random.default_rng(seed))
            corners = frame_points(perturbed_frame(regions[i], noise))[corner_index]
            # every noisy frame corner lands inside every target
            for H in viewpoint_sequence.homographies:
                corners_t = H.apply(corners)
                assert corners_t.min() >= 0 and corners_t.max() <= 255


# -- corpus building --------------------------------------------------------------------------


def test_without_noise_every_patch_of_a_group_is_identical():
    img = np.random.default_rng(3).random((128, 128))
    seq = _static_sequence(img)
    regions = [RegionDetection(40.0, 40.0, 2.0), RegionDetection(80.0, 70.0, 3.0, 0.5)]
    patches = build_corpus(seq, regions, {"none": NOISE_PROFILES["none"]}, seed=1)
    for k in range(5):
        assert np.array_equal(patches.targets["none"][k], patches.ref)


def test_noise_is_applied_before_projection():
    img = np.random.default_rng(4).random((128, 128))
    seq = _static_sequence(img)
    r = RegionDetection(64.0, 64.0, 2.0, 0.2)
    patches = build_corpus(seq, [r], EASY, seed=9, region_ids=[17])
    for k in range(5):
        noise = sample_noise(NOISE_PROFILES["easy"], substream(9, seq.id, 17, "easy", k + 1))
        expected = sample_patch(img, frame_points(perturbed_frame(r, noise)))
        assert np.array_equal(patches.targets["easy"][k, 0], quantize_patches(expected))


def test_build_corpus_shapes_and_determinism(viewpoint_sequence):
    regions = _regions(viewpoint_sequence)
    profiles = {name: NOISE_PROFILES[name] for name in ("easy", "hard", "tough")}
    a = build_corpus(viewpoint_sequence, regions, profiles, seed=5)
    b = build_corpus(viewpoint_sequence, regions, profiles, seed=5)
    n = a.n_regions
    assert a.ref.shape == (n, PATCH_SIZE, PATCH_SIZE) and a.ref.dtype == np.uint8
    assert a.variants == ("easy", "hard", "tough")
    for variant in a.variants:
        assert a.targets[variant].shape == (5, n, PATCH_SIZE, PATCH_SIZE)
        assert np.array_equal(a.targets[variant], b.targets[variant])
    assert len(a.groups("hard")) == n
    assert len(a.groups("hard")[0].target_patches) == 5


def test_target_patches_match_the_reference_under_ground_truth(viewpoint_sequence):
    regions = _regions(viewpoint_sequence)
    patches = build_corpus(viewpoint_sequence, regions, {"none": NOISE_PROFILES["none"]}, seed=5)
    ref = dequantize_patches(patches.ref).reshape(patches.n_regions, -1)
    first = dequantize_patches(patches.targets["none"][0]).reshape(patches.n_regions, -1)
    corr = [np.corrcoef(a, b)[0, 1] for a, b in zip(ref, first)]
    assert np.mean(corr) > 0.9


def test_tough_noise_moves_patches_further_than_easy(viewpoint_sequence):
    regions = _regions(viewpoint_sequence)
    profiles = {"easy": NOISE_PROFILES["easy"], "tough": NOISE_PROFILES["tough"]}
    patches = build_corpus(viewpoint_sequence, regions, profiles, seed=5)
    ref = dequantize_patches(patches.ref)[None]

    def spread(variant: str) -> float:
        return float(np.abs(dequantize_patches(patches.targets[variant]) - ref).mean())

    assert spread("tough") > spread("easy")


def test_adding_a_variant_keeps_the_other_patches(viewpoint_sequence):
    regions = _regions(viewpoint_sequence)
    easy = build_corpus(viewpoint_sequence, regions, EASY, seed=5)
    both = build_corpus(
        viewpoint_sequence, regions, {**EASY, "hard": NOISE_PROFILES["hard"]}, seed=5
    )
    common = np.intersect1d(easy.region_ids, both.region_ids)
    assert len(common)
    rows_a = np.searchsorted(easy.region_ids, common)
    rows_b = np.searchsorted(both.region_ids, common)
    assert np.array_equal(easy.targets["easy"][:, rows_a], both.targets["easy"][:, rows_b])


def test_build_corpus_needs_a_surviving_region():
    seq = _static_sequence(np.random.default_rng(5).random((128, 128)))
    with pytest.raises(CorpusError):
        build_corpus(seq, [RegionDetection(3.0, 3.0, 2.0)], EASY, seed=0)
    with pytest.raises(InvalidParameterError):
        build_corpus(seq, [RegionDetection(64.0, 64.0, 2.0)], EASY, seed=0, rho=0.0)


# -- corpus containers and splits -------------------------------------------------------------


def test_sequence_patches_validate_shapes():
    ref = np.zeros((3, PATCH_SIZE, PATCH_SIZE), np.uint8)
    with pytest.raises(CorpusError):
        SequencePatches("v_x", SequenceKind.VIEWPOINT, np.arange(3), ref, {"easy": ref})
    with pytest.raises(CorpusError):
        SequencePatches("v_x", SequenceKind.VIEWPOINT, np.zeros(3, np.int64), ref, {})


def test_corpus_rejects_duplicate_ids(tiny_corpus):
    with pytest.raises(CorpusError):
        PatchCorpus(sequences=[tiny_corpus.sequences[0], tiny_corpus.sequences[0]])


def test_takes_turn_spreads_a_fraction():
    assert [i for i in range(8) if takes_turn(i, 0.25)] == [3, 7]
    assert [i for i in range(4) if takes_turn(i, 0.5)] == [1, 3]
    assert not any(takes_turn(i, 0.0) for i in range(10))


def test_assign_splits_per_kind():
    corpus = make_corpus(n_seqs=8, n_regions=2)
    assign_splits(corpus, 0.25)
    fit = corpus.split("fit")
    assert len(fit.sequences) == 2
    assert {s.kind for s in fit.sequences} == {SequenceKind.VIEWPOINT, SequenceKind.ILLUMINATION}
    assert len(corpus.split("eval").sequences) == 6
    with pytest.raises(InvalidParameterError):
        assign_splits(corpus, 1.0)


def test_corpus_lookup(tiny_corpus):
    first = tiny_corpus.sequences[0]
    assert tiny_corpus.sequence(first.seq_id) is first
    with pytest.raises(KeyError):
        tiny_corpus.sequence("missing")
