"""Synthetic planar-scene sequences with exact ground truth, and a blob detector for them."""

import logging
import math
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from patchbench.errors import DegenerateImageError, InvalidParameterError, SynthesisError
from patchbench.services.geometry import (
    MIN_DETECTION_SCALE,
    Homography,
    RegionDetection,
    disc_iou,
)

logger = logging.getLogger(__name__)

MIN_IMAGE_SIZE = 64
SEQUENCE_LENGTH = 5
DEFAULT_SEVERITY = (0.1, 0.3, 0.5, 0.7, 0.9)

# (cell size in pixels, amplitude) per value-noise octave
_OCTAVES = ((16, 1.0), (8, 0.7), (4, 0.5), (2, 0.3))
_TEXTURE_STD = 0.16

# viewpoint path magnitudes at severity 1
_VIEW_ROTATION = math.radians(35.0)
_VIEW_LOG2_SCALE = 0.7
_VIEW_PERSPECTIVE = 0.25
_MAX_FOLD_REJECTIONS = 100

# illumination magnitudes at severity 1
_ILLUM_GAIN = 0.6
_ILLUM_BIAS = 0.2
_ILLUM_LOG2_GAMMA = 0.8
_ILLUM_VIGNETTE = 0.5

# detector
_N_SCALES = 7
_SCALE_STEP = 2.0 ** (1.0 / 3.0)
LAPLACIAN_THRESHOLD = 0.02
DUPLICATE_IOU = 0.5
DEDUP_RHO = 1.0
MIN_REGIONS = 8


class SequenceKind(StrEnum):
    VIEWPOINT = "viewpoint"
    ILLUMINATION = "illumination"

    @property
    def prefix(self) -> str:
        return "v" if self is SequenceKind.VIEWPOINT else "i"


@dataclass(frozen=True)
class SequenceSpec:
    seed: int
    kind: SequenceKind
    severity: tuple[float, ...] = DEFAULT_SEVERITY
    width: int = 320
    height: int = 320

    def __post_init__(self) -> None:
        if len(self.severity) != SEQUENCE_LENGTH:
            raise InvalidParameterError(f"severity schedule needs {SEQUENCE_LENGTH} entries")
        if any(not 0.0 <= s <= 1.0 for s in self.severity):
            raise InvalidParameterError("severity values must lie in [0, 1]")
        if any(b < a for a, b in zip(self.severity, self.severity[1:])):
            raise InvalidParameterError("severity schedule must be non-decreasing")


@dataclass(eq=False)
class Sequence:
    """A reference image, five targets and the ground-truth homographies ref -> target."""

    id: str
    kind: SequenceKind
    ref: np.ndarray
    targets: list[np.ndarray]
    homographies: list[Homography] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.targets) != SEQUENCE_LENGTH or len(self.homographies) != SEQUENCE_LENGTH:
            raise InvalidParameterError(
                f"sequence {self.id} needs {SEQUENCE_LENGTH} targets and homographies"
            )

    @property
    def images(self) -> list[np.ndarray]:
        return [self.ref, *self.targets]


def check_image(img: np.ndarray) -> None:
    if img.ndim != 2 or min(img.shape) < MIN_IMAGE_SIZE:
        raise InvalidParameterError(
            f"images must be 2-D and at least {MIN_IMAGE_SIZE}px per side, got {img.shape}"
        )


def quantize_image(img: np.ndarray) -> np.ndarray:
    """Snap intensities to the 8-bit grid used on disk."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _standardize(img: np.ndarray) -> np.ndarray:
    return (img - img.mean()) / img.std()


def gen_texture(seed: int, width: int, height: int) -> np.ndarray:
    if width < MIN_IMAGE_SIZE or height < MIN_IMAGE_SIZE:
        raise InvalidParameterError(
            f"texture must be at least {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE}, got {width}x{height}"
        )
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)

    tex = np.zeros((height, width))
    for cell, amp in _OCTAVES:
        grid = rng.random((height // cell + 4, width // cell + 4))
        coords = [yy / cell + 1.0, xx / cell + 1.0]
        tex += amp * ndimage.map_coordinates(grid, coords, order=3, mode="nearest")
    tex = _standardize(tex)

    # blobs and bars give the gradient histograms something to lock onto
    for _ in range(max(8, width * height // 1500)):
        contrast = rng.choice([-1.0, 1.0]) * rng.uniform(0.6, 1.5)
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        if rng.random() < 0.5:
            sigma = rng.uniform(2.0, 8.0)
            tex += contrast * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
        else:
            half_w, half_h = rng.uniform(3.0, 16.0, size=2)
            phi = rng.uniform(0.0, math.pi)
            u = (xx - cx) * math.cos(phi) + (yy - cy) * math.sin(phi)
            v = -(xx - cx) * math.sin(phi) + (yy - cy) * math.cos(phi)
            inside = np.minimum(half_w - np.abs(u), half_h - np.abs(v))
            tex += contrast * np.clip(0.5 + inside, 0.0, 1.0)

    tex = ndimage.gaussian_filter(tex, 0.6)
    tex = _standardize(tex) * _TEXTURE_STD + 0.5
    return quantize_image(tex)


def _viewpoint_homography(
    severity: float, rot_sign: float, scale_sign: float, phi: float, width: int, height: int
) -> Homography:
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    angle = rot_sign * severity * _VIEW_ROTATION
    scale = 2.0 ** (scale_sign * severity * _VIEW_LOG2_SCALE)
    persp = severity * _VIEW_PERSPECTIVE / max(cx, cy)

    core = np.eye(3)
    core[0, :2] = scale * np.array([math.cos(angle), -math.sin(angle)])
    core[1, :2] = scale * np.array([math.sin(angle), math.cos(angle)])
    core[2, :2] = persp * np.array([math.cos(phi), math.sin(phi)])

    to_center = Homography(np.array([[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]]))
    from_center = Homography(np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]]))
    return to_center.compose(Homography(core)).compose(from_center)


def folds_domain(H: Homography, width: int, height: int, steps: int = 9) -> bool:
    """True if H sends part of the image frame through infinity or flips orientation."""
    h = H.h
    for x in np.linspace(0, width - 1, steps):
        for y in np.linspace(0, height - 1, steps):
            w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
            if w <= 0 or np.linalg.det(H.jacobian(x, y)) <= 0:
                return True
    return False


def warp_image(img: np.ndarray, H: Homography) -> np.ndarray:
    """Render the image seen through H (target(H p) = img(p)), bilinear, clamp-to-edge."""
    if H.is_identity:
        return img.copy()
    height, width = img.shape
    center = ((width - 1) / 2.0, (height - 1) / 2.0)
    local_scale = math.sqrt(abs(np.linalg.det(H.jacobian(*center))))
    source = img
    if local_scale < 1.0:
        source = ndimage.gaussian_filter(img, 0.5 * math.sqrt(1.0 / local_scale**2 - 1.0))

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    src = H.inverse().apply(np.stack([xx, yy], axis=-1))
    warped = ndimage.map_coordinates(
        source, [src[..., 1], src[..., 0]], order=1, mode="nearest"
    )
    return quantize_image(warped)


def gen_viewpoint_sequence(spec: SequenceSpec, seq_id: str | None = None) -> Sequence:
    if spec.kind is not SequenceKind.VIEWPOINT:
        raise InvalidParameterError(f"expected a viewpoint spec, got {spec.kind}")
    rng = np.random.default_rng(spec.seed)
    ref = gen_texture(int(rng.integers(2**63)), spec.width, spec.height)

    for attempt in range(_MAX_FOLD_REJECTIONS):
        rot_sign, scale_sign = rng.choice([-1.0, 1.0], size=2)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        homographies = [
            _viewpoint_homography(s, rot_sign, scale_sign, phi, spec.width, spec.height)
            for s in spec.severity
        ]
        if not any(folds_domain(H, spec.width, spec.height) for H in homographies):
            break
        logger.debug("rejected folding viewpoint path (attempt %d)", attempt + 1)
    else:
        raise SynthesisError(
            f"no non-folding homography path after {_MAX_FOLD_REJECTIONS} rejections"
        )

    targets = [warp_image(ref, H) for H in homographies]
    return Sequence(
        id=seq_id or f"v_{spec.seed}",
        kind=spec.kind,
        ref=ref,
        targets=targets,
        homographies=homographies,
    )


def apply_photometric(
    img: np.ndarray,
    gain: float = 1.0,
    bias: float = 0.0,
    gamma: float = 1.0,
    vignette: float = 0.0,
    center: tuple[float, float] | None = None,
) -> np.ndarray:
    """gain * img^gamma + bias, attenuated radially by `vignette`, clipped to [0, 1]."""
    out = gain * np.power(img, gamma) + bias
    if vignette:
        height, width = img.shape
        cx, cy = center if center is not None else ((width - 1) / 2.0, (height - 1) / 2.0)
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
        r2 = ((xx - cx) ** 2 + (yy - cy) ** 2) / ((width / 2.0) ** 2 + (height / 2.0) ** 2)
        out = out * (1.0 - vignette * np.minimum(r2, 1.0))
    return np.clip(out, 0.0, 1.0)


def gen_illum_sequence(spec: SequenceSpec, seq_id: str | None = None) -> Sequence:
    if spec.kind is not SequenceKind.ILLUMINATION:
        raise InvalidParameterError(f"expected an illumination spec, got {spec.kind}")
    rng = np.random.default_rng(spec.seed)
    ref = gen_texture(int(rng.integers(2**63)), spec.width, spec.height)

    # one lighting direction per scene: gain and bias move together
    light_sign, gamma_sign = rng.choice([-1.0, 1.0], size=2)
    center = (rng.uniform(0.25, 0.75) * spec.width, rng.uniform(0.25, 0.75) * spec.height)

    targets = []
    for s in spec.severity:
        out = apply_photometric(
            ref,
            gain=1.0 + light_sign * _ILLUM_GAIN * s,
            bias=light_sign * _ILLUM_BIAS * s,
            gamma=2.0 ** (gamma_sign * _ILLUM_LOG2_GAMMA * s),
            vignette=_ILLUM_VIGNETTE * s,
            center=center,
        )
        targets.append(quantize_image(out))
    return Sequence(
        id=seq_id or f"i_{spec.seed}",
        kind=spec.kind,
        ref=ref,
        targets=targets,
        homographies=[Homography.identity() for _ in range(SEQUENCE_LENGTH)],
    )


def gen_sequence(spec: SequenceSpec, seq_id: str | None = None) -> Sequence:
    if spec.kind is SequenceKind.VIEWPOINT:
        return gen_viewpoint_sequence(spec, seq_id)
    return gen_illum_sequence(spec, seq_id)


def _laplacian_candidates(img: np.ndarray, threshold: float) -> np.ndarray:
    sigmas = MIN_DETECTION_SCALE * _SCALE_STEP ** np.arange(_N_SCALES)
    stack = np.stack([s**2 * ndimage.gaussian_laplace(img, s) for s in sigmas])
    maxima = (stack == ndimage.maximum_filter(stack, size=3, mode="nearest")) & (stack > threshold)
    minima = (stack == ndimage.minimum_filter(stack, size=3, mode="nearest")) & (stack < -threshold)
    peaks = maxima | minima
    # extrema need a neighbour scale on both sides and a pixel margin
    peaks[0] = peaks[-1] = False
    peaks[:, :1, :] = peaks[:, -1:, :] = False
    peaks[:, :, :1] = peaks[:, :, -1:] = False
    k, y, x = np.nonzero(peaks)
    cand = np.column_stack([x.astype(np.float64), y.astype(np.float64), sigmas[k]])
    # canonical order so selection depends only on the seed
    order = np.lexsort((cand[:, 2], cand[:, 0], cand[:, 1]))
    return cand[order]


def _one_per_cluster(cand: np.ndarray, rng: np.random.Generator, rho: float) -> np.ndarray:
    n = len(cand)
    if n == 0:
        return cand
    radii = rho * cand[:, 2]
    tree = cKDTree(cand[:, :2])
    pairs = tree.query_pairs(r=2.0 * radii.max(), output_type="ndarray")
    if len(pairs):
        d = np.hypot(*(cand[pairs[:, 0], :2] - cand[pairs[:, 1], :2]).T)
        dup = disc_iou(radii[pairs[:, 0]], radii[pairs[:, 1]], d) >= DUPLICATE_IOU
        pairs = pairs[dup]
    graph = csr_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    n_clusters, labels = connected_components(graph, directed=False)

    order = np.argsort(labels, kind="stable")
    counts = np.bincount(labels, minlength=n_clusters)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pick = starts + np.floor(rng.random(n_clusters) * counts).astype(np.int64)
    return cand[np.sort(order[pick])]


def detect_regions(
    img: np.ndarray,
    rng: np.random.Generator,
    max_regions: int = 200,
    threshold: float = LAPLACIAN_THRESHOLD,
) -> list[RegionDetection]:
    """Multi-scale Laplacian extrema, one random survivor per IoU cluster, random subset."""
    check_image(img)
    cand = _laplacian_candidates(img, threshold)
    survivors = _one_per_cluster(cand, rng, DEDUP_RHO)
    if len(survivors) < MIN_REGIONS:
        raise DegenerateImageError(
            f"only {len(survivors)} regions survive detection (need {MIN_REGIONS})"
        )
    if len(survivors) > max_regions:
        keep = np.sort(rng.choice(len(survivors), size=max_regions, replace=False))
        survivors = survivors[keep]
    logger.debug("detected %d candidates, kept %d regions", len(cand), len(survivors))
    return [RegionDetection(cx=float(x), cy=float(y), m=float(m)) for x, y, m in survivors]
