"""Rectified 65x65 patches and corresponding-patch groups under detector noise."""

import logging
import math
from collections.abc import Mapping, Sequence as SequenceOf
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from patchbench.errors import (
    CorpusError,
    InvalidParameterError,
    OutOfBoundsError,
    ProjectionError,
)
from patchbench.services.geometry import (
    DEFAULT_RHO,
    Homography,
    NoiseProfile,
    NoiseTransform,
    RegionDetection,
    frame_inside,
    perturbed_frame,
    region_frame,
    sample_noise,
    wrap_angle,
)
from patchbench.services.seeding import substream
from patchbench.services.synthesis import SEQUENCE_LENGTH, Sequence, SequenceKind

logger = logging.getLogger(__name__)

PATCH_SIZE = 65
ORIENTATION_BINS = 36
_GRID = np.linspace(-1.0, 1.0, PATCH_SIZE)
_CIRCLE_VERTICES = 64


def quantize_patches(patches: np.ndarray) -> np.ndarray:
    return np.round(np.clip(patches, 0.0, 1.0) * 255.0).astype(np.uint8)


def dequantize_patches(patches: np.ndarray) -> np.ndarray:
    return patches.astype(np.float64) / 255.0


def frame_points(frame: np.ndarray) -> np.ndarray:
    """Image coordinates (65, 65, 2) of the patch grid; columns follow x, rows follow y."""
    uu, vv = np.meshgrid(_GRID, _GRID)
    homog = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    return (homog @ frame.T)[..., :2]


def sample_patch(img: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Bilinear samples of `img` at (..., 2) points, clamped to the border."""
    values = ndimage.map_coordinates(img, [points[..., 1], points[..., 0]], order=1, mode="nearest")
    return np.clip(values, 0.0, 1.0)


def extract_patch(img: np.ndarray, r: RegionDetection, rho: float = DEFAULT_RHO) -> np.ndarray:
    frame = region_frame(r, rho)
    height, width = img.shape
    if not frame_inside(frame, width, height):
        raise OutOfBoundsError(
            f"measurement region of ({r.cx:.1f}, {r.cy:.1f}, m={r.m:.2f}) at rho={rho} "
            f"leaves the {width}x{height} image"
        )
    return sample_patch(img, frame_points(frame))


def dominant_orientation(img: np.ndarray, r: RegionDetection, rho: float = DEFAULT_RHO) -> float:
    """Peak of the Gaussian-weighted 36-bin gradient orientation histogram, in radians."""
    patch = extract_patch(img, r.with_theta(0.0), rho)
    gy, gx = np.gradient(patch)
    sigma = PATCH_SIZE / 6.0
    offsets = np.arange(PATCH_SIZE) - (PATCH_SIZE - 1) / 2.0
    window = np.exp(-(offsets[:, None] ** 2 + offsets[None, :] ** 2) / (2.0 * sigma**2))

    bin_width = 2.0 * math.pi / ORIENTATION_BINS
    # bin k is centered on k * bin_width
    bins = np.round(np.arctan2(gy, gx) / bin_width).astype(np.int64) % ORIENTATION_BINS
    hist = np.bincount(
        bins.ravel(), weights=(np.hypot(gx, gy) * window).ravel(), minlength=ORIENTATION_BINS
    )
    if hist.max() <= 1e-12:
        return 0.0

    k = int(np.argmax(hist))
    left, center, right = hist[k - 1], hist[k], hist[(k + 1) % ORIENTATION_BINS]
    denom = left - 2.0 * center + right
    offset = 0.5 * (left - right) / denom if denom < 0 else 0.0
    return wrap_angle((k + offset) * bin_width)


def inflation_radius(r: RegionDetection, profiles: SequenceOf[NoiseProfile], rho: float) -> float:
    """Radius around the region center that covers its measurement square under any noise draw."""
    stretch = max((2.0 ** (p.s_max + p.a_max / 2.0) for p in profiles), default=1.0)
    shift = max((p.t_max for p in profiles), default=0.0)
    return r.m * math.sqrt(2.0) * (rho * stretch + shift)


def region_contained(
    r: RegionDetection,
    homographies: SequenceOf[Homography],
    shape: tuple[int, int],
    radius: float,
) -> bool:
    """True if the disc of `radius` around r stays inside the frame under every homography."""
    height, width = shape
    angles = np.linspace(0.0, 2.0 * math.pi, _CIRCLE_VERTICES, endpoint=False)
    # circumscribed polygon, so containment of its vertices bounds the whole disc
    outer = radius / math.cos(math.pi / _CIRCLE_VERTICES)
    polygon = np.column_stack([r.cx + outer * np.cos(angles), r.cy + outer * np.sin(angles)])
    for H in [Homography.identity(), *homographies]:
        try:
            mapped = H.apply(polygon)
        except ProjectionError:
            return False
        if (
            mapped[:, 0].min() < 0
            or mapped[:, 1].min() < 0
            or mapped[:, 0].max() > width - 1
            or mapped[:, 1].max() > height - 1
        ):
            return False
    return True


def filter_contained(
    seq: Sequence,
    regions: SequenceOf[RegionDetection],
    profiles: SequenceOf[NoiseProfile],
    rho: float,
) -> list[int]:
    """Indices of regions whose noise-inflated support fits in every image of the sequence."""
    return [
        idx
        for idx, r in enumerate(regions)
        if region_contained(r, seq.homographies, seq.ref.shape, inflation_radius(r, profiles, rho))
    ]


@dataclass
class PatchGroup:
    region_id: int
    variant: str
    ref_patch: np.ndarray
    target_patches: list[np.ndarray]


@dataclass(eq=False)
class SequencePatches:
    """All patches of one sequence: reference strip plus 5 target strips per noise variant.

    Patches are stored quantized to 8 bits, exactly as they are written to disk.
    """

    seq_id: str
    kind: SequenceKind
    region_ids: np.ndarray
    ref: np.ndarray
    targets: dict[str, np.ndarray]
    regions: list[RegionDetection] = field(default_factory=list)
    homographies: list[Homography] | None = None
    split: str = "eval"

    def __post_init__(self) -> None:
        n = len(self.region_ids)
        if self.ref.shape != (n, PATCH_SIZE, PATCH_SIZE):
            raise CorpusError(f"{self.seq_id}: reference strip has shape {self.ref.shape}")
        for variant, strip in self.targets.items():
            if strip.shape != (SEQUENCE_LENGTH, n, PATCH_SIZE, PATCH_SIZE):
                raise CorpusError(f"{self.seq_id}: {variant} strips have shape {strip.shape}")
        if len(set(self.region_ids.tolist())) != n:
            raise CorpusError(f"{self.seq_id}: region ids are not unique")

    @property
    def n_regions(self) -> int:
        return len(self.region_ids)

    @property
    def variants(self) -> tuple[str, ...]:
        return tuple(self.targets)

    def image_patches(self, variant: str, image: int) -> np.ndarray:
        """uint8 patches of image `image` (0 is the reference) for a noise variant."""
        if image == 0:
            return self.ref
        return self.targets[variant][image - 1]

    def groups(self, variant: str) -> list[PatchGroup]:
        strips = self.targets[variant]
        return [
            PatchGroup(
                region_id=int(rid),
                variant=variant,
                ref_patch=dequantize_patches(self.ref[j]),
                target_patches=[dequantize_patches(strips[k, j]) for k in range(SEQUENCE_LENGTH)],
            )
            for j, rid in enumerate(self.region_ids)
        ]


@dataclass(eq=False)
class PatchCorpus:
    sequences: list[SequencePatches]
    master_seed: int | None = None
    rho: float = DEFAULT_RHO
    geometry_known: bool = True

    def __post_init__(self) -> None:
        ids = [s.seq_id for s in self.sequences]
        if len(set(ids)) != len(ids):
            raise CorpusError("sequence ids are not unique")
        variant_sets = {tuple(sorted(s.variants)) for s in self.sequences}
        if len(variant_sets) > 1:
            raise CorpusError(f"sequences carry different noise variants: {variant_sets}")

    @property
    def variants(self) -> tuple[str, ...]:
        return self.sequences[0].variants if self.sequences else ()

    def split(self, name: str) -> "PatchCorpus":
        return PatchCorpus(
            sequences=[s for s in self.sequences if s.split == name],
            master_seed=self.master_seed,
            rho=self.rho,
            geometry_known=self.geometry_known,
        )

    def sequence(self, seq_id: str) -> SequencePatches:
        for s in self.sequences:
            if s.seq_id == seq_id:
                return s
        raise KeyError(seq_id)


def takes_turn(index: int, fraction: float) -> bool:
    """Spread a fraction evenly over an index sequence: floor((i + 1) f) > floor(i f)."""
    return math.floor((index + 1) * fraction) > math.floor(index * fraction)


def assign_splits(corpus: PatchCorpus, fit_fraction: float) -> None:
    """Mark every sequence `fit` or `eval`, spreading fit sequences evenly within each kind."""
    if not 0.0 <= fit_fraction < 1.0:
        raise InvalidParameterError(f"fit_fraction must lie in [0, 1), got {fit_fraction}")
    seen: dict[SequenceKind, int] = {}
    for s in corpus.sequences:
        index = seen.get(s.kind, 0)
        seen[s.kind] = index + 1
        s.split = "fit" if takes_turn(index, fit_fraction) else "eval"


def build_corpus(
    seq: Sequence,
    regions: SequenceOf[RegionDetection],
    profiles: Mapping[str, NoiseProfile],
    seed: int,
    rho: float = DEFAULT_RHO,
    region_ids: SequenceOf[int] | None = None,
) -> SequencePatches:
    """Extract the reference patch and 5 noisy target patches per region and noise variant.

    Noise is applied to the region in its own frame before projection through the ground
    truth. Regions whose support would leave any image under the largest noise are dropped
    from every variant.
    """
    if rho <= 0:
        raise InvalidParameterError(f"rho must be positive, got {rho}")
    if region_ids is None:
        region_ids = range(len(regions))
    if len(region_ids) != len(regions):
        raise InvalidParameterError("region_ids must match regions")

    kept = filter_contained(seq, regions, list(profiles.values()), rho)
    if not kept:
        raise CorpusError(f"{seq.id}: no region survives containment filtering")
    logger.debug("%s: %d of %d regions contained", seq.id, len(kept), len(regions))

    n = len(kept)
    ref = np.empty((n, PATCH_SIZE, PATCH_SIZE))
    targets = {name: np.empty((SEQUENCE_LENGTH, n, PATCH_SIZE, PATCH_SIZE)) for name in profiles}
    identity = NoiseTransform.identity()
    for j, idx in enumerate(kept):
        r, rid = regions[idx], region_ids[idx]
        ref[j] = sample_patch(seq.ref, frame_points(perturbed_frame(r, identity, rho)))
        for name, profile in profiles.items():
            for k, (img, H) in enumerate(zip(seq.targets, seq.homographies)):
                noise = sample_noise(profile, substream(seed, seq.id, rid, name, k + 1))
                points = frame_points(perturbed_frame(r, noise, rho))
                targets[name][k, j] = sample_patch(img, H.apply(points))

    return SequencePatches(
        seq_id=seq.id,
        kind=seq.kind,
        region_ids=np.array([region_ids[i] for i in kept], dtype=np.int64),
        ref=quantize_patches(ref),
        targets={name: quantize_patches(strip) for name, strip in targets.items()},
        regions=[regions[i] for i in kept],
        homographies=list(seq.homographies),
    )
