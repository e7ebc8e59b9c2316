"""Baseline patch descriptors and the distances used to compare them."""

import functools
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from patchbench.errors import DescriptorError
from patchbench.services.patches import PATCH_SIZE, dequantize_patches

logger = logging.getLogger(__name__)

RESZ_SIZE = 6
SIFT_GRID = 4
SIFT_BINS = 8
SIFT_CLAMP = 0.2
SIFT_DIM = SIFT_GRID * SIFT_GRID * SIFT_BINS
BRIEF_BITS = 256
BRIEF_SMOOTHING = 2.0
DEFAULT_BRIEF_SEED = 1337

_CHUNK = 256
_EPS = 1e-12


def _as_batch(p: np.ndarray) -> tuple[np.ndarray, bool]:
    batch = np.asarray(p, dtype=np.float64)
    single = batch.ndim == 2
    if single:
        batch = batch[None]
    if batch.ndim != 3 or batch.shape[1:] != (PATCH_SIZE, PATCH_SIZE):
        raise DescriptorError(f"expected {PATCH_SIZE}x{PATCH_SIZE} patches, got {batch.shape}")
    return batch, single


def _unbatch(out: np.ndarray, single: bool) -> np.ndarray:
    return out[0] if single else out


def mstd(p: np.ndarray) -> np.ndarray:
    """[mean, population standard deviation] of the patch."""
    batch, single = _as_batch(p)
    out = np.column_stack([batch.mean(axis=(1, 2)), batch.std(axis=(1, 2))])
    return _unbatch(out, single)


@functools.cache
def area_weights(n_out: int, n_in: int) -> np.ndarray:
    """(n_out, n_in) matrix averaging n_in unit pixels into n_out equal cells by overlap."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo, hi = edges[:-1, None], edges[1:, None]
    pixels = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, pixels + 1) - np.maximum(lo, pixels), 0.0, None)
    return overlap / (n_in / n_out)


def resz(p: np.ndarray) -> np.ndarray:
    """6x6 area-averaged thumbnail, standardized (constant patches give zeros)."""
    batch, single = _as_batch(p)
    w = area_weights(RESZ_SIZE, PATCH_SIZE)
    small = np.einsum("iy,nyx,jx->nij", w, batch, w).reshape(len(batch), -1)
    mu = small.mean(axis=1, keepdims=True)
    sd = small.std(axis=1, keepdims=True)
    sd = np.where(sd < 1e-8, 1.0, sd)
    return _unbatch((small - mu) / sd, single)


@functools.cache
def _sift_spatial_weights() -> np.ndarray:
    # bilinear weights of each pixel row/column to the 4 cells, times the Gaussian window
    cell = (np.arange(PATCH_SIZE) + 0.5) / PATCH_SIZE * SIFT_GRID - 0.5
    weights = np.maximum(0.0, 1.0 - np.abs(cell[None, :] - np.arange(SIFT_GRID)[:, None]))
    offsets = np.arange(PATCH_SIZE) - (PATCH_SIZE - 1) / 2.0
    sigma = PATCH_SIZE / 2.0
    return weights * np.exp(-(offsets**2) / (2.0 * sigma**2))[None, :]


def _sift_histograms(batch: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(batch, axis=(1, 2))
    magnitude = np.hypot(gx, gy)
    ori = np.mod(np.arctan2(gy, gx), 2.0 * math.pi) * (SIFT_BINS / (2.0 * math.pi))

    channels = np.empty((len(batch), SIFT_BINS, PATCH_SIZE, PATCH_SIZE))
    for o in range(SIFT_BINS):
        diff = np.abs(ori - o)
        diff = np.minimum(diff, SIFT_BINS - diff)
        channels[:, o] = magnitude * np.maximum(0.0, 1.0 - diff)

    w = _sift_spatial_weights()
    hist = np.einsum("iy,noyx,jx->nijo", w, channels, w)
    return hist.reshape(len(batch), SIFT_DIM)


def _l2_normalize_rows(v: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return np.where(norms > _EPS, v / np.where(norms > _EPS, norms, 1.0), 0.0)


def sift(p: np.ndarray, renormalize: bool = True) -> np.ndarray:
    """4x4x8 gradient orientation histogram, L2-normalized, clamped at 0.2, renormalized."""
    batch, single = _as_batch(p)
    v = np.minimum(_l2_normalize_rows(_sift_histograms(batch)), SIFT_CLAMP)
    if renormalize:
        v = _l2_normalize_rows(v)
    return _unbatch(v, single)


def rootsift(p: np.ndarray) -> np.ndarray:
    s = np.atleast_2d(sift(p))
    l1 = np.abs(s).sum(axis=1, keepdims=True)
    out = np.where(l1 > _EPS, np.sqrt(s / np.where(l1 > _EPS, l1, 1.0)), 0.0)
    return out[0] if np.asarray(p).ndim == 2 else out


@dataclass(frozen=True, eq=False)
class BriefPattern:
    """256 fixed point pairs (y1, x1, y2, x2), isotropic Gaussian around the patch center."""

    seed: int
    pairs: np.ndarray

    @classmethod
    def from_seed(cls, seed: int) -> "BriefPattern":
        rng = np.random.default_rng(seed)
        center = (PATCH_SIZE - 1) / 2.0
        pts = rng.normal(center, PATCH_SIZE / 5.0, size=(BRIEF_BITS, 4))
        pairs = np.clip(np.round(pts), 0, PATCH_SIZE - 1).astype(np.intp)
        pairs.setflags(write=False)
        return cls(seed=seed, pairs=pairs)


@functools.cache
def brief_pattern(seed: int = DEFAULT_BRIEF_SEED) -> BriefPattern:
    return BriefPattern.from_seed(seed)


def brief(p: np.ndarray, pattern_seed: int = DEFAULT_BRIEF_SEED) -> np.ndarray:
    """256 intensity comparisons on the smoothed patch; bit k is I(p_k) < I(q_k)."""
    batch, single = _as_batch(p)
    pairs = brief_pattern(pattern_seed).pairs
    smooth = ndimage.gaussian_filter(batch, sigma=(0.0, BRIEF_SMOOTHING, BRIEF_SMOOTHING))
    bits = smooth[:, pairs[:, 0], pairs[:, 1]] < smooth[:, pairs[:, 2], pairs[:, 3]]
    return _unbatch(bits, single)


def distance(a: np.ndarray, b: np.ndarray) -> float:
    """L2 distance for real descriptors, Hamming distance for binary ones."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DescriptorError(f"descriptor dimensions differ: {a.shape} vs {b.shape}")
    binary_a, binary_b = a.dtype == np.bool_, b.dtype == np.bool_
    if binary_a != binary_b:
        raise DescriptorError("cannot compare a binary descriptor with a real-valued one")
    if binary_a:
        return float(np.count_nonzero(a != b))
    return float(np.linalg.norm(a.astype(np.float64) - b.astype(np.float64)))


def score(a: np.ndarray, b: np.ndarray) -> float:
    return -distance(a, b)


@dataclass(frozen=True)
class DescriptorFamily:
    name: str
    dim: int
    metric: str
    extract: Callable[[np.ndarray], np.ndarray]
    normalizable: bool


def _families(brief_seed: int) -> dict[str, DescriptorFamily]:
    return {
        "mstd": DescriptorFamily("mstd", 2, "l2", mstd, False),
        "resz": DescriptorFamily("resz", RESZ_SIZE * RESZ_SIZE, "l2", resz, False),
        "sift": DescriptorFamily("sift", SIFT_DIM, "l2", sift, True),
        "rootsift": DescriptorFamily("rootsift", SIFT_DIM, "l2", rootsift, True),
        "brief": DescriptorFamily(
            "brief", BRIEF_BITS, "hamming", functools.partial(brief, pattern_seed=brief_seed), False
        ),
    }


FAMILY_NAMES = ("mstd", "resz", "sift", "rootsift", "brief")
_ALIASES = {"rsift": "rootsift"}


def get_family(name: str, brief_seed: int = DEFAULT_BRIEF_SEED) -> DescriptorFamily:
    key = _ALIASES.get(name.lower(), name.lower())
    families = _families(brief_seed)
    if key not in families:
        raise DescriptorError(f"unknown descriptor {name!r}; expected one of {FAMILY_NAMES}")
    return families[key]


def describe(family: DescriptorFamily, patches: np.ndarray) -> np.ndarray:
    """Descriptors for a stack of patches (uint8 as stored, or floats in [0, 1])."""
    patches = np.asarray(patches)
    n = len(patches)
    if n == 0:
        dtype = np.bool_ if family.metric == "hamming" else np.float64
        return np.empty((0, family.dim), dtype=dtype)
    out = []
    for start in range(0, n, _CHUNK):
        chunk = patches[start : start + _CHUNK]
        if chunk.dtype == np.uint8:
            chunk = dequantize_patches(chunk)
        out.append(family.extract(chunk))
    return np.concatenate(out)


class Scorer(Protocol):
    """Confidence that two patches correspond; larger is more confident."""

    def pairwise(self, a: np.ndarray, b: np.ndarray) -> np.ndarray: ...

    def cross(self, a: np.ndarray, b: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class DistanceScorer:
    """Negative L2 or Hamming distance between descriptors."""

    metric: str = "l2"

    def pairwise(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.metric == "hamming":
            return -np.count_nonzero(a != b, axis=1).astype(np.float64)
        return -np.linalg.norm(a - b, axis=1)

    def cross(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.metric == "hamming":
            return -cdist(a, b, "hamming") * a.shape[1]
        return -cdist(a, b, "euclidean")
