"""Homographies, detector-noise sampling, region projection and region overlap."""

import math
from dataclasses import dataclass, replace

import numpy as np

from patchbench.errors import InvalidParameterError, ProjectionError

MIN_DETECTION_SCALE = 1.6
DEFAULT_RHO = 5.0

_DET_EPS = 1e-12
_W_EPS = 1e-12


def wrap_angle(theta: float) -> float:
    """Map an angle in radians to [-pi, pi); angles already in range come back unchanged."""
    if -math.pi <= theta < math.pi:
        return theta
    wrapped = (theta + math.pi) % (2.0 * math.pi) - math.pi
    if wrapped >= math.pi:
        wrapped -= 2.0 * math.pi
    return wrapped


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True, eq=False)
class Homography:
    """Projective map between two images of a planar scene, normalized so h[2, 2] == 1."""

    h: np.ndarray

    def __post_init__(self) -> None:
        h = np.array(self.h, dtype=np.float64)
        if h.shape != (3, 3) or not np.all(np.isfinite(h)):
            raise InvalidParameterError(f"homography must be a finite 3x3 matrix, got {h.shape}")
        if abs(h[2, 2]) < _DET_EPS:
            raise InvalidParameterError("homography cannot be normalized: h[2, 2] is zero")
        h = h / h[2, 2]
        if abs(np.linalg.det(h)) <= _DET_EPS:
            raise InvalidParameterError("homography is singular")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.h, np.eye(3)))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def compose(self, other: "Homography") -> "Homography":
        """Return the map `self ∘ other` (apply `other` first)."""
        return Homography(self.h @ other.h)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an array of points with shape (..., 2)."""
        pts = np.asarray(points, dtype=np.float64)
        x, y = pts[..., 0], pts[..., 1]
        h = self.h
        w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
        if np.any(np.abs(w) < _W_EPS):
            raise ProjectionError("point maps to infinity under homography")
        u = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / w
        v = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / w
        return np.stack([u, v], axis=-1)

    def jacobian(self, x: float, y: float) -> np.ndarray:
        h = self.h
        w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
        if abs(w) < _W_EPS:
            raise ProjectionError(f"point ({x}, {y}) maps to infinity under homography")
        px = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / w
        py = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / w
        return (h[:2, :2] - np.outer([px, py], h[2, :2])) / w

    def to_text(self) -> str:
        return " ".join(f"{v:.17g}" for v in self.h.ravel())

    @classmethod
    def from_text(cls, line: str) -> "Homography":
        parts = line.split()
        if len(parts) != 9:
            raise InvalidParameterError(f"homography needs 9 decimals, got {len(parts)}")
        try:
            values = [float(p) for p in parts]
        except ValueError as e:
            raise InvalidParameterError(f"malformed homography line: {line!r}") from e
        return cls(np.array(values).reshape(3, 3))


@dataclass(frozen=True)
class RegionDetection:
    """Oriented disc keypoint: center (pixels), detection scale m (pixels), orientation.

    Detections have m >= MIN_DETECTION_SCALE; that floor is enforced where regions are
    detected and where they are read back. Projection through a zooming-out homography may
    take m below it, so the type itself only requires m > 0.
    """

    cx: float
    cy: float
    m: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.cx) and math.isfinite(self.cy)):
            raise InvalidParameterError("region center must be finite")
        if not (math.isfinite(self.m) and self.m > 0):
            raise InvalidParameterError(f"detection scale must be positive, got {self.m}")
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def with_theta(self, theta: float) -> "RegionDetection":
        return replace(self, theta=theta)


@dataclass(frozen=True)
class NoiseProfile:
    """Bounds of the detector-noise distribution. theta_max in degrees, s/a in log2 units."""

    name: str
    theta_max: float
    t_max: float
    s_max: float
    a_max: float

    def __post_init__(self) -> None:
        for field_name in ("theta_max", "t_max", "s_max", "a_max"):
            value = getattr(self, field_name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidParameterError(f"{field_name} must be finite and >= 0, got {value}")

    def as_dict(self) -> dict[str, float]:
        return {
            "theta_max": self.theta_max,
            "t_max": self.t_max,
            "s_max": self.s_max,
            "a_max": self.a_max,
        }


NOISE_PROFILES: dict[str, NoiseProfile] = {
    "easy": NoiseProfile("easy", 10.0, 0.15, 0.15, 0.2),
    "hard": NoiseProfile("hard", 20.0, 0.3, 0.3, 0.4),
    "tough": NoiseProfile("tough", 30.0, 0.45, 0.5, 0.45),
    "none": NoiseProfile("none", 0.0, 0.0, 0.0, 0.0),
}

BENCHMARK_VARIANTS = ("easy", "hard", "tough")


def get_profile(name: str) -> NoiseProfile:
    try:
        return NOISE_PROFILES[name.lower()]
    except KeyError:
        raise InvalidParameterError(
            f"unknown noise profile {name!r}; expected one of {sorted(NOISE_PROFILES)}"
        ) from None


@dataclass(frozen=True)
class NoiseTransform:
    """One draw of detector noise: rotation (rad), translation (fraction of m), linear s and a."""

    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    s: float = 1.0
    a: float = 1.0

    @classmethod
    def identity(cls) -> "NoiseTransform":
        return cls()

    def within(self, profile: NoiseProfile, tol: float = 1e-12) -> bool:
        return (
            abs(self.theta) <= math.radians(profile.theta_max) + tol
            and abs(self.tx) <= profile.t_max + tol
            and abs(self.ty) <= profile.t_max + tol
            and abs(math.log2(self.s)) <= profile.s_max + tol
            and abs(math.log2(self.a)) <= profile.a_max + tol
        )


def sample_noise(profile: NoiseProfile, rng: np.random.Generator) -> NoiseTransform:
    # one uniform draw per parameter, in a fixed order; s and a are uniform in log2
    u = rng.uniform(-1.0, 1.0, size=5)
    return NoiseTransform(
        theta=math.radians(profile.theta_max) * float(u[0]),
        tx=profile.t_max * float(u[1]),
        ty=profile.t_max * float(u[2]),
        s=2.0 ** (profile.s_max * float(u[3])),
        a=2.0 ** (profile.a_max * float(u[4])),
    )


def noise_to_matrix(t: NoiseTransform, m: float) -> np.ndarray:
    """Affine map of the noise transform on region-centered pixel coordinates.

    Linear part R(theta) @ diag(s / sqrt(a), s * sqrt(a)), translation (m * tx, m * ty):
    scale first, then rotate, then translate.
    """
    if not (t.s > 0 and t.a > 0 and m > 0):
        raise InvalidParameterError(
            f"noise transform needs s, a, m > 0 (got s={t.s}, a={t.a}, m={m})"
        )
    sqrt_a = math.sqrt(t.a)
    matrix = np.eye(3)
    matrix[:2, :2] = rotation(t.theta) @ np.diag([t.s / sqrt_a, t.s * sqrt_a])
    matrix[:2, 2] = (m * t.tx, m * t.ty)
    return matrix


def project_region(r: RegionDetection, H: Homography) -> RegionDetection:
    """Transport a region through H using the local linearization at its center."""
    center = H.apply(np.array([r.cx, r.cy]))
    J = H.jacobian(r.cx, r.cy)
    det = float(np.linalg.det(J))
    if not math.isfinite(det) or det == 0.0:
        raise ProjectionError("homography is degenerate at region center")
    direction = J @ np.array([math.cos(r.theta), math.sin(r.theta)])
    return RegionDetection(
        cx=float(center[0]),
        cy=float(center[1]),
        m=r.m * math.sqrt(abs(det)),
        theta=math.atan2(direction[1], direction[0]),
    )


def disc_iou(r1: np.ndarray, r2: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Intersection-over-union of discs with radii r1, r2 and center distance d (vectorized)."""
    r1, r2, d = np.broadcast_arrays(
        np.asarray(r1, dtype=np.float64),
        np.asarray(r2, dtype=np.float64),
        np.asarray(d, dtype=np.float64),
    )
    small, big = np.minimum(r1, r2), np.maximum(r1, r2)
    iou = np.zeros(d.shape)

    contained = d <= big - small
    iou[contained] = (small[contained] / big[contained]) ** 2

    partial = ~contained & (d < small + big)
    if np.any(partial):
        a, b, dd = small[partial], big[partial], d[partial]
        c1 = np.clip((dd**2 + a**2 - b**2) / (2 * dd * a), -1.0, 1.0)
        c2 = np.clip((dd**2 + b**2 - a**2) / (2 * dd * b), -1.0, 1.0)
        k = (-dd + a + b) * (dd + a - b) * (dd - a + b) * (dd + a + b)
        inter = a**2 * np.arccos(c1) + b**2 * np.arccos(c2) - 0.5 * np.sqrt(np.maximum(k, 0.0))
        union = math.pi * (a**2 + b**2) - inter
        iou[partial] = inter / union
    return iou


def region_iou(a: RegionDetection, b: RegionDetection, rho: float = 1.0) -> float:
    """Exact IoU of the discs of radius rho * m around both regions."""
    if rho <= 0:
        raise InvalidParameterError(f"rho must be positive, got {rho}")
    d = math.hypot(a.cx - b.cx, a.cy - b.cy)
    return float(disc_iou(rho * a.m, rho * b.m, d))


def _frame(cx: float, cy: float, theta: float, local: np.ndarray, extent: float) -> np.ndarray:
    frame = np.eye(3)
    frame[:2, :2] = rotation(theta)
    frame[:2, 2] = (cx, cy)
    return frame @ local @ np.diag([extent, extent, 1.0])


def region_frame(r: RegionDetection, rho: float = DEFAULT_RHO) -> np.ndarray:
    """Affine map from normalized patch coordinates [-1, 1]^2 to the measurement region."""
    if rho <= 0:
        raise InvalidParameterError(f"rho must be positive, got {rho}")
    return _frame(r.cx, r.cy, r.theta, np.eye(3), rho * r.m)


def perturbed_frame(r: RegionDetection, t: NoiseTransform, rho: float = DEFAULT_RHO) -> np.ndarray:
    """Measurement frame of `r` after applying the noise transform in its canonical frame."""
    if rho <= 0:
        raise InvalidParameterError(f"rho must be positive, got {rho}")
    return _frame(r.cx, r.cy, r.theta, noise_to_matrix(t, r.m), rho * r.m)


def frame_inside(frame: np.ndarray, width: int, height: int) -> bool:
    corners = np.array([[-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]], dtype=np.float64)
    mapped = corners @ frame.T
    xs, ys = mapped[:, 0], mapped[:, 1]
    return bool(
        xs.min() >= 0 and ys.min() >= 0 and xs.max() <= width - 1 and ys.max() <= height - 1
    )
