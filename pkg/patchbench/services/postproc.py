"""ZCA whitening with clipped eigenvalues, signed power law and L2 normalization."""

import logging
from collections.abc import Callable, Iterable
from dataclasses import dataclass

import numpy as np

from patchbench.errors import PostprocError

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.5
DEFAULT_CLIP_CANDIDATES = (1e-4, 1e-3, 1e-2, 5e-2, 0.1, 0.3)
_SAMPLES_PER_DIM = 10


@dataclass(frozen=True, eq=False)
class ZcaModel:
    mean: np.ndarray
    whitener: np.ndarray
    clip_fraction: float
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self) -> None:
        d = len(self.mean)
        if self.whitener.shape != (d, d):
            raise PostprocError(f"whitener shape {self.whitener.shape} does not match D={d}")
        if not self.clip_fraction > 0:
            raise PostprocError(f"clip_fraction must be positive, got {self.clip_fraction}")
        if not np.allclose(self.whitener, self.whitener.T, atol=1e-8, rtol=0.0):
            raise PostprocError("whitener is not symmetric")

    @property
    def dim(self) -> int:
        return len(self.mean)

    @classmethod
    def isotropic(cls, dim: int, scale: float = 1.0, alpha: float = 1.0) -> "ZcaModel":
        return cls(np.zeros(dim), scale * np.eye(dim), clip_fraction=1.0, alpha=alpha)

    def to_text(self) -> str:
        lines = [f"{self.dim} {self.alpha:.17g} {self.clip_fraction:.17g}"]
        lines.append(" ".join(f"{v:.17g}" for v in self.mean))
        lines.extend(" ".join(f"{v:.17g}" for v in row) for row in self.whitener)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ZcaModel":
        lines = text.strip().splitlines()
        try:
            d_text, alpha, clip = lines[0].split()
            d = int(d_text)
            mean = np.array([float(v) for v in lines[1].split()])
            whitener = np.array([[float(v) for v in line.split()] for line in lines[2 : 2 + d]])
        except (IndexError, ValueError) as e:
            raise PostprocError("malformed ZCA model text") from e
        if mean.shape != (d,) or whitener.shape != (d, d):
            raise PostprocError("ZCA model text does not match its header")
        return cls(mean, whitener, clip_fraction=float(clip), alpha=float(alpha))


def fit_zca(sample: np.ndarray, clip_fraction: float, alpha: float = DEFAULT_ALPHA) -> ZcaModel:
    """Unsupervised ZCA fit; eigenvalues below clip_fraction * lambda_max are raised to it."""
    x = np.asarray(sample, dtype=np.float64)
    if x.ndim != 2:
        raise PostprocError(f"sample must be (n, D), got {x.shape}")
    n, d = x.shape
    if n < _SAMPLES_PER_DIM * d:
        raise PostprocError(f"ZCA needs at least {_SAMPLES_PER_DIM * d} samples for D={d}, got {n}")
    if not 0 < clip_fraction <= 1:
        raise PostprocError(f"clip_fraction must lie in (0, 1], got {clip_fraction}")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh((cov + cov.T) / 2.0)
    lam_max = eigvals.max()
    if not lam_max > 0:
        raise PostprocError("sample covariance has no positive eigenvalue")
    floor = clip_fraction * lam_max
    clipped = np.maximum(eigvals, floor)
    whitener = eigvecs @ np.diag(1.0 / np.sqrt(clipped)) @ eigvecs.T
    logger.debug(
        "fit ZCA D=%d n=%d clip=%g: %d of %d eigenvalues floored",
        d, n, clip_fraction, int(np.sum(eigvals < floor)), d,
    )
    return ZcaModel(mean, (whitener + whitener.T) / 2.0, clip_fraction, alpha)


def apply_post(d: np.ndarray, model: ZcaModel) -> np.ndarray:
    """Whiten, signed power law, L2-normalize. Accepts one descriptor or a (n, D) stack."""
    x = np.asarray(d, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.dim:
        raise PostprocError(f"descriptor has D={x.shape[1]}, model expects {model.dim}")
    v = (x - model.mean) @ model.whitener.T
    v = np.sign(v) * np.abs(v) ** model.alpha
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    v = np.where(norms > 0, v / np.where(norms > 0, norms, 1.0), 0.0)
    return v[0] if single else v


def select_clip_threshold(
    descs: np.ndarray,
    candidates: Iterable[float],
    eval_fn: Callable[[ZcaModel], float],
    alpha: float = DEFAULT_ALPHA,
) -> float:
    """Candidate whose fitted model maximizes `eval_fn`; ties go to the larger fraction."""
    ordered = sorted(set(candidates), reverse=True)
    if not ordered:
        raise PostprocError("no clip-fraction candidates given")
    best, best_score = ordered[0], -np.inf
    for clip in ordered:
        value = eval_fn(fit_zca(descs, clip, alpha))
        logger.debug("clip=%g -> %.6f", clip, value)
        if value > best_score:
            best, best_score = clip, value
    return best
