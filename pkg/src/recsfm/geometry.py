"""Pinhole projection and SE(3) transforms, plus the differentiable warp.

Conventions: pixel coordinates are (u, v) = (column, row) with integer centers,
u in [0, width-1].  Camera space is right-handed with +z in front of the
camera.  Poses map reference-camera points into the context camera:
X_ctx = R X_ref + t.

The dense warp is written so that an exact identity pose reproduces the pixel
grid bit-for-bit whenever u - cx and v - cy are exactly representable (true
for the half-integer principal points the scene generator emits): the
projection is factored as M = diag(fx,fy,1) R diag(1/fx,1/fy,1) acting on
pixel-offset rays, with the translation divided by depth, so the identity
path never round-trips a value through a multiply/divide pair.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .errors import DimensionError, DomainError
from .tensor import Tensor

Z_EPS = 1e-5
SMALL_ANGLE = 1e-4
RENORM_EVERY = 64


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width < 1 or self.height < 1:
            raise DomainError(f"image extents must be >= 1, got {self.width}x{self.height}")

    def scaled(self, factor: int) -> "Intrinsics":
        """Intrinsics of the image downsampled by an integer factor."""
        return Intrinsics(self.fx / factor, self.fy / factor,
                          self.cx / factor, self.cy / factor,
                          self.width // factor, self.height // factor)


class Pose:
    """Rigid transform storing a 3x3 rotation and a translation vector.

    Rotations drift under long composition chains; every RENORM_EVERY
    compositions the matrix is re-orthonormalized by Gram-Schmidt.
    """

    __slots__ = ("rotation", "translation", "xi", "_age")

    def __init__(self, rotation=None, translation=None, xi=None, _age: int = 0):
        self.rotation = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
        self.translation = (np.zeros(3) if translation is None
                            else np.asarray(translation, dtype=np.float64).reshape(3))
        if self.rotation.shape != (3, 3):
            raise DimensionError(f"rotation must be 3x3, got {self.rotation.shape}")
        self.xi = None if xi is None else np.asarray(xi, dtype=np.float64).reshape(6)
        self._age = _age

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    def matrix34(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation.reshape(3, 1)], axis=1)

    def __repr__(self) -> str:
        return f"Pose(t={np.round(self.translation, 4)})"


def _gram_schmidt(r: np.ndarray) -> np.ndarray:
    a, b, c = r[:, 0], r[:, 1], r[:, 2]
    a = a / np.linalg.norm(a)
    b = b - (a @ b) * a
    b = b / np.linalg.norm(b)
    c = np.cross(a, b)
    return np.stack([a, b, c], axis=1)


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying b first, then a: (a o b)(x) = a(b(x))."""
    age = max(a._age, b._age) + 1
    r = a.rotation @ b.rotation
    t = a.rotation @ b.translation + a.translation
    if age >= RENORM_EVERY:
        r = _gram_schmidt(r)
        age = 0
    return Pose(r, t, _age=age)


def inverse(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt.copy(), -(rt @ p.translation), _age=p._age)


def transform(p: Pose, points: np.ndarray) -> np.ndarray:
    """Apply the pose to points shaped (3,) or (3, N)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape == (3,):
        return p.rotation @ pts + p.translation
    if pts.ndim == 2 and pts.shape[0] == 3:
        return p.rotation @ pts + p.translation[:, None]
    raise DimensionError(f"points must be (3,) or (3,N), got {pts.shape}")


def se3_exp(xi) -> Pose:
    """Exponential map from a twist (omega, tau) to a Pose, Rodrigues form."""
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    omega, tau = xi[:3], xi[3:]
    theta2 = float(omega @ omega)
    k = np.array([[0.0, -omega[2], omega[1]],
                  [omega[2], 0.0, -omega[0]],
                  [-omega[1], omega[0], 0.0]])
    k2 = k @ k
    if theta2 < SMALL_ANGLE ** 2:
        # power series in theta^2: smooth through zero
        a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
        c = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
        c = (1.0 - a) / theta2
    rot = np.eye(3) + a * k + b * k2
    v = np.eye(3) + b * k + c * k2
    return Pose(rot, v @ tau, xi=xi.copy())


def se3_log(p: Pose) -> np.ndarray:
    """Inverse of se3_exp for rotation angles below pi."""
    r = p.rotation
    cos_theta = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    vee = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < 1e-7:
        omega = 0.5 * vee
    else:
        omega = theta / (2.0 * np.sin(theta)) * vee
    theta2 = float(omega @ omega)
    k = np.array([[0.0, -omega[2], omega[1]],
                  [omega[2], 0.0, -omega[0]],
                  [-omega[1], omega[0], 0.0]])
    k2 = k @ k
    if theta2 < SMALL_ANGLE ** 2:
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
        c = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0
    else:
        b = (1.0 - np.cos(np.sqrt(theta2))) / theta2
        c = (1.0 - np.sin(np.sqrt(theta2)) / np.sqrt(theta2)) / theta2
    v = np.eye(3) + b * k + c * k2
    tau = np.linalg.solve(v, p.translation)
    return np.concatenate([omega, tau])


def project(points, intr: Intrinsics):
    """Project camera-space points (3,) or (3,N) -> (pixels, in_front)."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.shape == (3,)
    if single:
        pts = pts.reshape(3, 1)
    if pts.ndim != 2 or pts.shape[0] != 3:
        raise DimensionError(f"points must be (3,) or (3,N), got {np.shape(points)}")
    z = pts[2]
    in_front = z > Z_EPS
    zsafe = np.where(np.abs(z) > Z_EPS, z, Z_EPS)
    u = intr.fx * pts[0] / zsafe + intr.cx
    v = intr.fy * pts[1] / zsafe + intr.cy
    pix = np.stack([u, v])
    if single:
        return pix[:, 0], bool(in_front[0])
    return pix, in_front


def backproject(pixels, depth, intr: Intrinsics) -> np.ndarray:
    """Lift pixels (2,) or (2,N) with positive depths back to camera space."""
    pix = np.asarray(pixels, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    single = pix.shape == (2,)
    if single:
        pix = pix.reshape(2, 1)
        d = d.reshape(1)
    if (d <= 0).any():
        raise DomainError("backproject requires positive depth")
    x = (pix[0] - intr.cx) / intr.fx * d
    y = (pix[1] - intr.cy) / intr.fy * d
    out = np.stack([x, y, d])
    return out[:, 0] if single else out


def pixel_grid(width: int, height: int, dtype=np.float64) -> np.ndarray:
    """(2, H, W) map of pixel coordinates: row 0 = u (column), row 1 = v (row)."""
    xs, ys = np.meshgrid(np.arange(width, dtype=dtype),
                         np.arange(height, dtype=dtype), indexing="xy")
    return np.stack([xs, ys])


def exp_twist(xi: Tensor) -> tuple[Tensor, Tensor]:
    """Differentiable se3 exponential: 6-vector Tensor -> (R 3x3, t 3x1).

    Matches se3_exp numerically; the small-angle branch is a power series in
    theta^2, so gradients stay smooth through zero rotation.
    """
    if xi.shape != (6,):
        raise DimensionError(f"twist must have shape (6,), got {xi.shape}")
    omega = xi[0:3]
    tau = xi[3:6]
    wx, wy, wz = omega[0:1], omega[1:2], omega[2:3]
    zero = wx * 0.0
    row0 = T.concat([zero, -wz, wy]).reshape(1, 3)
    row1 = T.concat([wz, zero, -wx]).reshape(1, 3)
    row2 = T.concat([-wy, wx, zero]).reshape(1, 3)
    k = T.concat([row0, row1, row2], axis=0)
    k2 = T.matmul(k, k)
    theta2 = (omega * omega).sum()
    if float(theta2.data) < SMALL_ANGLE ** 2:
        t4 = theta2 * theta2
        a = 1.0 - theta2 * (1.0 / 6.0) + t4 * (1.0 / 120.0)
        b = 0.5 - theta2 * (1.0 / 24.0) + t4 * (1.0 / 720.0)
        c = 1.0 / 6.0 - theta2 * (1.0 / 120.0) + t4 * (1.0 / 5040.0)
    else:
        theta = T.sqrt(theta2)
        a = T.sin(theta) / theta
        b = (1.0 - T.cos(theta)) / theta2
        c = (1.0 - a) / theta2
    eye = T.constant(np.eye(3, dtype=xi.data.dtype))
    rot = eye + k * a + k2 * b
    v = eye + k * b + k2 * c
    t = T.matmul(v, tau.reshape(3, 1))
    return rot, t


def warp_coords(depth, pose, intr: Intrinsics):
    """Dense warp: reference pixels -> context-image coords under depth+pose.

    depth: Tensor or ndarray (1, H, W), positive, at the resolution of `intr`.
    pose: a Pose (constant) or a 6-vector twist Tensor (differentiable).
    Returns (coords: Tensor (2,H,W), valid: ndarray (1,H,W) float) where valid
    marks pixels that land in front of the camera and inside the frame.
    """
    depth_t = depth if isinstance(depth, Tensor) else T.constant(depth)
    if depth_t.ndim != 3 or depth_t.shape[0] != 1:
        raise DimensionError(f"depth must be (1,H,W), got {depth_t.shape}")
    if (depth_t.data <= 0).any():
        raise DomainError("warp_coords requires strictly positive depth")
    _, h, w = depth_t.shape
    if h != intr.height or w != intr.width:
        raise DimensionError(
            f"depth {h}x{w} does not match intrinsics {intr.height}x{intr.width}")
    dtype = depth_t.data.dtype
    n = h * w

    if isinstance(pose, Pose):
        rot_t = T.constant(pose.rotation.astype(dtype))
        tvec_t = T.constant(pose.translation.astype(dtype).reshape(3, 1))
    else:
        rot_t, tvec_t = exp_twist(pose)

    grid = pixel_grid(w, h, dtype=dtype).reshape(2, n)
    pu = grid[0] - dtype.type(intr.cx)
    pv = grid[1] - dtype.type(intr.cy)
    ray = T.constant(np.stack([pu, pv, np.ones(n, dtype=dtype)]))

    # M = diag(fx,fy,1) R diag(1/fx,1/fy,1), scaling applied as division so
    # an identity rotation yields the identity matrix bit-for-bit.
    row_scale = T.constant(np.array([[intr.fx], [intr.fy], [1.0]], dtype=dtype))
    col_scale = T.constant(np.array([[intr.fx, intr.fy, 1.0]], dtype=dtype))
    m = rot_t * row_scale / col_scale
    bvec = tvec_t * row_scale  # (fx tx, fy ty, tz)

    hray = T.matmul(m, ray)                      # (3, n)
    inv_z = 1.0 / depth_t.reshape(1, n)
    a = hray + bvec * inv_z                      # rays scaled by 1/Z
    az = a[2:3, :]
    az_safe = T.maximum(az, 1e-6)
    u = a[0:1, :] / az_safe + intr.cx
    v = a[1:2, :] / az_safe + intr.cy
    coords = T.concat([u, v], axis=0).reshape(2, h, w)

    z_ctx = depth_t.data.reshape(n) * az.data.reshape(n)
    in_front = z_ctx > Z_EPS
    uu, vv = coords.data[0].reshape(n), coords.data[1].reshape(n)
    inside = (uu >= 0) & (uu <= w - 1) & (vv >= 0) & (vv <= h - 1)
    valid = (in_front & inside).reshape(1, h, w).astype(dtype)
    return coords, valid


def pose_to_line(p: Pose) -> str:
    """Serialize a pose as 12 row-major [R|t] numbers on one line."""
    return " ".join(repr(float(x)) for x in p.matrix34().reshape(-1))


def parse_pose_line(line: str) -> Pose:
    parts = line.split()
    if len(parts) != 12:
        raise DomainError(f"pose line needs 12 numbers, got {len(parts)}")
    mat = np.array([float(x) for x in parts]).reshape(3, 4)
    return Pose(mat[:, :3], mat[:, 3])
