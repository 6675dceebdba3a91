"""Rigid motions in 2D and 3D: rotations, transforms, sampling and distance.

3D rotations are unit quaternions ``(w, x, y, z)`` with ``w >= 0``; 2D rotations
are angles in ``[0, 2*pi)``. The distance between two transforms is the
weighted Frobenius norm of the matrix logarithm of their relative motion.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
import structlog
from scipy.spatial.transform import Rotation as ScipyRotation

from peelplan.config.settings import MetricSettings, RotationMethod
from peelplan.errors import BadMethodForDimensionError

logger = structlog.get_logger()

TWO_PI = 2.0 * math.pi

# Second constant of the super-Fibonacci spiral (first is sqrt(2))
_FIBONACCI_PSI = 1.533751168755204288

_SMALL_ANGLE = 1e-4
_EXACT_ROTATION = 1e-9


def _canonical_quaternion(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    flip = q[..., 0] < 0
    # On the w == 0 great sphere pick the sign making the first nonzero part positive
    tied = q[..., 0] == 0
    if np.any(tied):
        vector = q[..., 1:]
        first = np.take_along_axis(
            vector, np.argmax(vector != 0, axis=-1)[..., None], axis=-1
        )[..., 0]
        flip = flip | (tied & (first < 0))
    return np.where(flip[..., None], -q, q)


def _wrap_angle(theta: float) -> float:
    theta = math.fmod(theta, TWO_PI)
    if theta < 0:
        theta += TWO_PI
    return 0.0 if theta >= TWO_PI else theta


def quaternion_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of broadcastable ``(..., 4)`` arrays."""
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quaternion_matrices(q: np.ndarray) -> np.ndarray:
    """Rotation matrices of ``(..., 4)`` wxyz quaternions."""
    q = np.asarray(q, dtype=float)
    flat = q.reshape(-1, 4)[:, [1, 2, 3, 0]]
    return ScipyRotation.from_quat(flat).as_matrix().reshape(q.shape[:-1] + (3, 3))


@dataclass(frozen=True)
class Rotation:
    """Element of SO(2) or SO(3)."""

    dimension: int
    quaternion: tuple[float, float, float, float] | None = None
    theta: float | None = None

    @classmethod
    def identity(cls, dimension: int) -> "Rotation":
        if dimension == 2:
            return cls(dimension=2, theta=0.0)
        return cls(dimension=3, quaternion=(1.0, 0.0, 0.0, 0.0))

    @classmethod
    def from_angle(cls, theta: float) -> "Rotation":
        return cls(dimension=2, theta=_wrap_angle(float(theta)))

    @classmethod
    def from_quaternion(cls, q: Sequence[float]) -> "Rotation":
        w, x, y, z = (float(c) for c in _canonical_quaternion(np.asarray(q)))
        return cls(dimension=3, quaternion=(w, x, y, z))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Rotation":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape == (2, 2):
            return cls.from_angle(math.atan2(matrix[1, 0], matrix[0, 0]))
        x, y, z, w = ScipyRotation.from_matrix(matrix).as_quat()
        return cls.from_quaternion([w, x, y, z])

    @classmethod
    def from_array(cls, values: np.ndarray) -> "Rotation":
        """Inverse of :attr:`as_array`."""
        values = np.atleast_1d(values)
        if len(values) == 1:
            return cls.from_angle(float(values[0]))
        return cls.from_quaternion(values)

    @property
    def as_array(self) -> np.ndarray:
        """``[theta]`` in 2D or ``[w, x, y, z]`` in 3D."""
        if self.dimension == 2:
            return np.array([self.theta], dtype=float)
        return np.asarray(self.quaternion, dtype=float)

    @property
    def matrix(self) -> np.ndarray:
        if self.dimension == 2:
            c, s = math.cos(self.theta or 0.0), math.sin(self.theta or 0.0)
            return np.array([[c, -s], [s, c]])
        return quaternion_matrices(self.as_array)

    @property
    def angle(self) -> float:
        """Rotation angle in [0, pi]."""
        if self.dimension == 2:
            theta = self.theta or 0.0
            return min(theta, TWO_PI - theta)
        w = self.quaternion[0] if self.quaternion else 1.0
        return 2.0 * math.acos(min(1.0, abs(w)))

    def inverse(self) -> "Rotation":
        if self.dimension == 2:
            return Rotation.from_angle(-(self.theta or 0.0))
        w, x, y, z = self.as_array
        return Rotation.from_quaternion([w, -x, -y, -z])

    def compose(self, other: "Rotation") -> "Rotation":
        """``self`` applied after ``other``."""
        if self.dimension == 2:
            return Rotation.from_angle((self.theta or 0.0) + (other.theta or 0.0))
        return Rotation.from_quaternion(
            quaternion_multiply(self.as_array, other.as_array)
        )

    def angle_to(self, other: "Rotation") -> float:
        """Geodesic angle between two rotations."""
        return self.inverse().compose(other).angle


@dataclass(frozen=True)
class RigidTransform:
    """Tool configuration ``(r, t)``: rotate about the tool tip, then translate."""

    rotation: Rotation
    translation: tuple[float, ...]

    @classmethod
    def identity(cls, dimension: int) -> "RigidTransform":
        return cls(Rotation.identity(dimension), (0.0,) * dimension)

    @classmethod
    def create(cls, rotation: Rotation, translation: Sequence[float]) -> "RigidTransform":
        return cls(rotation, tuple(float(x) for x in translation))

    @property
    def dimension(self) -> int:
        return self.rotation.dimension

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.translation, dtype=float)

    @property
    def matrix(self) -> np.ndarray:
        """Homogeneous (d+1)x(d+1) matrix."""
        d = self.dimension
        out = np.eye(d + 1)
        out[:d, :d] = self.rotation.matrix
        out[:d, d] = self.t
        return out

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self`` applied after ``other``."""
        rotation = self.rotation.compose(other.rotation)
        translation = self.rotation.matrix @ other.t + self.t
        return RigidTransform.create(rotation, translation)

    def inverse(self) -> "RigidTransform":
        inverse = self.rotation.inverse()
        return RigidTransform.create(inverse, -(inverse.matrix @ self.t))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map ``(n, d)`` points from the tool frame to the world."""
        return np.asarray(points) @ self.rotation.matrix.T + self.t

    def log(self) -> tuple[np.ndarray, np.ndarray]:
        """Rotation vector (angle in 2D) and translational part of the logarithm."""
        rotations, translations = stack_transforms([self])
        omega, v = _log_parts(rotations, translations, self.dimension)
        return omega[0], v[0]

    def to_dict(self) -> dict[str, Any]:
        if self.dimension == 2:
            return {"theta": self.rotation.theta, "translation": list(self.translation)}
        return {
            "quaternion": list(self.rotation.quaternion or ()),
            "translation": list(self.translation),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RigidTransform":
        translation = data["translation"]
        if "theta" in data:
            rotation = Rotation.from_angle(float(data["theta"]))
        else:
            rotation = Rotation.from_quaternion(data["quaternion"])
        return cls.create(rotation, translation)


@dataclass(frozen=True)
class MetricWeights:
    """Weights of the rotational and translational parts of the distance."""

    w_rot: float = 1.0
    w_trans: float = 1.0

    def __post_init__(self) -> None:
        if self.w_rot <= 0 or self.w_trans <= 0:
            raise ValueError("metric weights must be positive")

    @classmethod
    def from_settings(
        cls, metric: MetricSettings, scene_diagonal: float = 1.0
    ) -> "MetricWeights":
        """Effective weights, dividing translation by the scene diagonal if enabled."""
        w_trans = metric.w_trans
        if metric.normalize_translation and scene_diagonal > 0:
            w_trans = w_trans / scene_diagonal
        return cls(w_rot=metric.w_rot, w_trans=w_trans)

    @classmethod
    def refixturing(cls, scene_diagonal: float = 1.0) -> "MetricWeights":
        """Rotation-dominant regime: reorienting needs a new setup."""
        return cls(w_rot=10.0, w_trans=1.0 / scene_diagonal)

    @classmethod
    def reorienting(cls, scene_diagonal: float = 1.0) -> "MetricWeights":
        """Translation-dominant regime: changing orientation is cheap."""
        return cls(w_rot=0.1, w_trans=1.0 / scene_diagonal)


def stack_transforms(
    transforms: Sequence[RigidTransform],
) -> tuple[np.ndarray, np.ndarray]:
    """Rotation parameters ``(n, 1|4)`` and translations ``(n, d)`` of a list."""
    rotations = np.array([t.rotation.as_array for t in transforms], dtype=float)
    translations = np.array([t.translation for t in transforms], dtype=float)
    return rotations, translations


def _log_parts(
    rotations: np.ndarray, translations: np.ndarray, dimension: int
) -> tuple[np.ndarray, np.ndarray]:
    """Logarithm ``(omega, v)`` of transforms given as stacked arrays."""
    if dimension == 2:
        theta = np.arctan2(np.sin(rotations[..., 0]), np.cos(rotations[..., 0]))
        t = translations
        half = theta / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(
                np.abs(theta) < _SMALL_ANGLE,
                1.0 - theta**2 / 12.0,
                half * np.sin(theta) / (1.0 - np.cos(theta)),
            )
        perp = np.stack([-t[..., 1], t[..., 0]], axis=-1)
        v = a[..., None] * t - half[..., None] * perp
        return theta, v

    q = rotations
    sine = np.linalg.norm(q[..., 1:], axis=-1)
    sign = np.where(q[..., 0] < 0, -1.0, 1.0)
    theta = 2.0 * np.arctan2(sine, np.abs(q[..., 0]))
    with np.errstate(divide="ignore", invalid="ignore"):
        axis = np.where(
            sine[..., None] > 0, q[..., 1:] * (sign / sine)[..., None], 0.0
        )
        coeff = np.where(
            theta < _SMALL_ANGLE,
            1.0 / 12.0 + theta**2 / 720.0,
            (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / theta**2,
        )
    omega = axis * theta[..., None]
    t = translations
    cross = np.cross(omega, t)
    v = t - 0.5 * cross + coeff[..., None] * np.cross(omega, cross)
    return omega, v


def pairwise_distances(
    a: Sequence[RigidTransform] | tuple[np.ndarray, np.ndarray],
    b: Sequence[RigidTransform] | tuple[np.ndarray, np.ndarray],
    weights: MetricWeights,
) -> np.ndarray:
    """Distance matrix between two transform sets.

    Args:
        a: Transforms, or stacked ``(rotations, translations)`` arrays.
        b: Transforms, or stacked arrays.
        weights: Metric weights.

    Returns:
        ``(len(a), len(b))`` array.
    """
    rot_a, trans_a = a if isinstance(a, tuple) else stack_transforms(a)
    rot_b, trans_b = b if isinstance(b, tuple) else stack_transforms(b)
    dimension = trans_a.shape[1]
    diff = trans_b[None, :, :] - trans_a[:, None, :]

    if dimension == 2:
        theta_a = rot_a[:, 0]
        rel_rot = (rot_b[None, :, 0] - theta_a[:, None])[..., None]
        c, s = np.cos(theta_a)[:, None], np.sin(theta_a)[:, None]
        rel_t = np.stack(
            [c * diff[..., 0] + s * diff[..., 1], -s * diff[..., 0] + c * diff[..., 1]],
            axis=-1,
        )
    else:
        conj = rot_a * np.array([1.0, -1.0, -1.0, -1.0])
        rel_rot = quaternion_multiply(conj[:, None, :], rot_b[None, :, :])
        matrices = quaternion_matrices(rot_a)
        rel_t = np.einsum("nji,nmj->nmi", matrices, diff)

    omega, v = _log_parts(rel_rot, rel_t, dimension)
    rot_sq = 2.0 * (omega**2 if dimension == 2 else np.sum(omega**2, axis=-1))
    trans_sq = np.sum(v**2, axis=-1)
    return np.sqrt(weights.w_rot**2 * rot_sq + weights.w_trans**2 * trans_sq)


def riemannian_distance(
    tau1: RigidTransform,
    tau2: RigidTransform,
    w_rot: float = 1.0,
    w_trans: float = 1.0,
) -> float:
    """Weighted norm of ``log(tau1^-1 tau2)``.

    With unit weights this equals the Frobenius norm of the dense matrix
    logarithm of the relative homogeneous transform.
    """
    weights = MetricWeights(w_rot=w_rot, w_trans=w_trans)
    return float(pairwise_distances([tau1], [tau2], weights)[0, 0])


def closest_pair(
    a: Sequence[RigidTransform] | tuple[np.ndarray, np.ndarray],
    b: Sequence[RigidTransform] | tuple[np.ndarray, np.ndarray],
    weights: MetricWeights,
) -> tuple[float, int, int]:
    """Minimum pairwise distance and its indices, lowest ``(i, j)`` on ties."""
    distances = pairwise_distances(a, b, weights)
    flat = int(np.argmin(distances))
    i, j = divmod(flat, distances.shape[1])
    return float(distances[i, j]), i, j


@dataclass(frozen=True)
class TriangleAudit:
    """Triangle inequality check over every ordered triple of a distance matrix."""

    checked: int
    violations: int
    worst_excess: float

    @property
    def holds(self) -> bool:
        return self.violations == 0


def triangle_audit(distances: np.ndarray, tolerance: float = 1e-7) -> TriangleAudit:
    """Count triples with ``d[a, c] > d[a, b] + d[b, c] + tolerance``."""
    distances = np.asarray(distances, dtype=float)
    n = distances.shape[0]
    if n == 0:
        return TriangleAudit(0, 0, 0.0)
    # excess[a, b, c] = d[a, c] - d[a, b] - d[b, c]
    excess = distances[:, None, :] - (distances[:, :, None] + distances[None, :, :])
    return TriangleAudit(
        checked=n**3,
        violations=int(np.count_nonzero(excess > tolerance)),
        worst_excess=max(float(excess.max()), 0.0),
    )


def metric_audit(
    transforms: Sequence[RigidTransform],
    weights: MetricWeights | None = None,
    tolerance: float = 1e-7,
) -> TriangleAudit:
    """Audit the log-norm distance on a set of transforms.

    The log-norm is not a geodesic distance on SE(3) once rotation and
    translation mix, so triples may break the triangle inequality. Violations
    are logged, never raised.
    """
    if not transforms:
        return TriangleAudit(0, 0, 0.0)
    distances = pairwise_distances(transforms, transforms, weights or MetricWeights())
    audit = triangle_audit(distances, tolerance)
    if not audit.holds:
        logger.info(
            "Distance violates the triangle inequality",
            transforms=len(transforms),
            violations=audit.violations,
            checked=audit.checked,
            worst_excess=audit.worst_excess,
        )
    return audit


def interpolate(a: RigidTransform, b: RigidTransform, s: float) -> RigidTransform:
    """Translation lerp plus shortest-arc rotation interpolation."""
    translation = (1.0 - s) * a.t + s * b.t
    if a.dimension == 2:
        start = a.rotation.theta or 0.0
        delta = math.remainder((b.rotation.theta or 0.0) - start, TWO_PI)
        return RigidTransform.create(Rotation.from_angle(start + s * delta), translation)

    qa, qb = a.rotation.as_array, b.rotation.as_array
    dot = float(np.dot(qa, qb))
    if dot < 0:
        qb, dot = -qb, -dot
    if dot > 1.0 - 1e-12:
        q = (1.0 - s) * qa + s * qb
    else:
        omega = math.acos(min(1.0, dot))
        q = (math.sin((1.0 - s) * omega) * qa + math.sin(s * omega) * qb) / math.sin(
            omega
        )
    return RigidTransform.create(Rotation.from_quaternion(q), translation)


@dataclass(frozen=True)
class RotationSample:
    """Ordered rotation set tagged with its generator."""

    rotations: tuple[Rotation, ...]
    method: RotationMethod
    seed: int

    def __len__(self) -> int:
        return len(self.rotations)

    def __getitem__(self, index: int) -> Rotation:
        return self.rotations[index]

    @property
    def dimension(self) -> int:
        return self.rotations[0].dimension

    def as_arrays(self) -> np.ndarray:
        return np.array([r.as_array for r in self.rotations])

    def locate(self, rotation: Rotation) -> tuple[int, bool]:
        """Index of the nearest sampled rotation and whether it matches exactly."""
        angles = geodesic_angles(self.as_arrays(), rotation.as_array[None, :])[:, 0]
        index = int(np.argmin(angles))
        return index, bool(angles[index] < _EXACT_ROTATION)


def geodesic_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise rotation angles between stacked rotation parameters."""
    if a.shape[1] == 1:
        delta = np.abs(np.remainder(a[:, None, 0] - b[None, :, 0] + math.pi, TWO_PI) - math.pi)
        return delta
    dots = np.clip(np.abs(a @ b.T), 0.0, 1.0)
    return 2.0 * np.arccos(dots)


def _healpix_centers(nside: int) -> tuple[np.ndarray, np.ndarray]:
    """Polar and azimuthal angles of the ring-ordered HEALPix pixel centers."""
    thetas: list[np.ndarray] = []
    phis: list[np.ndarray] = []
    n = nside
    for ring in range(1, 4 * n):
        if ring < n:
            j = np.arange(1, 4 * ring + 1)
            z = 1.0 - ring**2 / (3.0 * n * n)
            phi = math.pi / (2 * ring) * (j - 0.5)
        elif ring <= 3 * n:
            j = np.arange(1, 4 * n + 1)
            z = 4.0 / 3.0 - 2.0 * ring / (3.0 * n)
            shift = (ring - n + 1) % 2
            phi = math.pi / (2 * n) * (j - shift / 2.0)
        else:
            mirrored = 4 * n - ring
            j = np.arange(1, 4 * mirrored + 1)
            z = -(1.0 - mirrored**2 / (3.0 * n * n))
            phi = math.pi / (2 * mirrored) * (j - 0.5)
        thetas.append(np.full(len(j), math.acos(z)))
        phis.append(np.asarray(phi, dtype=float))
    return np.concatenate(thetas), np.concatenate(phis)


def _hopf_grid(nside: int) -> np.ndarray:
    """Hopf-fibration grid of ``72 * nside**3`` wxyz quaternions."""
    theta, phi = _healpix_centers(nside)
    count = 6 * nside
    step = TWO_PI / count
    psi = np.arange(count) * step + step / 2.0

    theta = np.repeat(theta, count)
    phi = np.repeat(phi, count)
    psi = np.tile(psi, len(theta) // count)

    ct, st = np.cos(theta / 2.0), np.sin(theta / 2.0)
    quats = np.stack(
        [
            ct * np.cos(psi / 2.0),
            ct * np.sin(psi / 2.0),
            st * np.cos(phi + psi / 2.0),
            st * np.sin(phi + psi / 2.0),
        ],
        axis=1,
    )
    return _canonical_quaternion(quats)


def _farthest_point_subsample(quats: np.ndarray, count: int) -> np.ndarray:
    chosen = [0]
    nearest = geodesic_angles(quats, quats[:1])[:, 0]
    while len(chosen) < count:
        index = int(np.argmax(nearest))
        chosen.append(index)
        nearest = np.minimum(nearest, geodesic_angles(quats, quats[index : index + 1])[:, 0])
    return quats[chosen]


def _fibonacci_quaternions(count: int) -> np.ndarray:
    s = np.arange(count) + 0.5
    r = np.sqrt(s / count)
    big_r = np.sqrt(1.0 - s / count)
    alpha = TWO_PI * s / math.sqrt(2.0)
    beta = TWO_PI * s / _FIBONACCI_PSI
    quats = np.stack(
        [big_r * np.cos(beta), r * np.sin(alpha), r * np.cos(alpha), big_r * np.sin(beta)],
        axis=1,
    )
    return _canonical_quaternion(quats)


def _random_quaternion(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def sample_rotations(
    n1: int,
    method: RotationMethod | str,
    seed: int = 0,
    dimension: int | None = None,
) -> RotationSample:
    """Deterministic low-discrepancy rotation sample.

    Args:
        n1: Number of rotations.
        method: ``grid2d`` (SO(2)), ``hopf`` or ``fibonacci`` (SO(3)).
        seed: 0 keeps the canonical set; other seeds apply a seeded global offset.
        dimension: Job dimension, checked against the method when given.

    Returns:
        Rotation sample; ``n1 == 1`` always yields the identity.

    Raises:
        BadMethodForDimensionError: Method does not match ``dimension``.
        ValueError: ``n1 < 1``.
    """
    method = RotationMethod(method)
    if n1 < 1:
        raise ValueError("n1 must be at least 1")

    method_dimension = 2 if method == RotationMethod.GRID2D else 3
    if dimension is not None and dimension != method_dimension:
        raise BadMethodForDimensionError(
            f"Rotation method {method.value} samples SO({method_dimension}), "
            f"job is {dimension}D"
        )

    if n1 == 1:
        return RotationSample((Rotation.identity(method_dimension),), method, seed)

    rng = np.random.default_rng(seed) if seed else None

    if method == RotationMethod.GRID2D:
        offset = rng.uniform(0.0, TWO_PI / n1) if rng is not None else 0.0
        rotations = tuple(Rotation.from_angle(TWO_PI * k / n1 + offset) for k in range(n1))
        return RotationSample(rotations, method, seed)

    if method == RotationMethod.HOPF:
        nside = 1
        while 72 * nside**3 < n1:
            nside += 1
        quats = _hopf_grid(nside)
        if len(quats) > n1:
            quats = _farthest_point_subsample(quats, n1)
    else:
        quats = _fibonacci_quaternions(n1)

    if rng is not None:
        offset_q = _random_quaternion(rng)
        quats = quaternion_multiply(offset_q[None, :], quats)

    rotations = tuple(Rotation.from_quaternion(q) for q in quats)
    logger.debug("Sampled rotations", method=method.value, count=n1, seed=seed)
    return RotationSample(rotations, method, seed)
