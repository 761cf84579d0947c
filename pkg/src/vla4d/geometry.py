"""Pinhole camera math, Euler conversions, depth patching and look-at rings.

Conventions:
    * Euler angles are extrinsic X-Y-Z, i.e. ``R = Rz(tz) @ Ry(ty) @ Rx(tx)``,
      canonical ranges ``ty in [-pi/2, pi/2]``, ``tx, tz in (-pi, pi]``.
    * Camera frame is x-right / y-down / z-forward.
    * ``CameraModel.R, T`` map camera coordinates to world: ``p_w = R @ p_c + T``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, DataError, DegeneratePose, IndivisibleShape, NotARotation

ORTHO_TOL = 1e-9
GIMBAL_TOL = 1e-9
MIN_DEPTH = 1e-12
DEFAULT_MASK_THRESHOLD = 0.1

# Angle rows of the MV-Bench camera table, degrees.
MVBENCH_PRESETS = {
    "mvbench-train": (0.0, 60.0, 120.0, 270.0, 300.0, 330.0),
    "mvbench-test15": (15.0, 45.0, 75.0, 105.0),
    "mvbench-test30": (30.0, 90.0),
}


def _frozen(a, shape=None):
    a = np.array(a, dtype=np.float64)
    if shape is not None and a.shape != shape:
        raise DataError(f"expected shape {shape}, got {a.shape}")
    a.setflags(write=False)
    return a


def rotation_error(R):
    """Max abs deviation of ``R.T @ R`` from identity."""
    R = np.asarray(R, dtype=np.float64)
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


def is_rotation(R, tol=ORTHO_TOL):
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return rotation_error(R) <= tol and abs(np.linalg.det(R) - 1.0) <= tol


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    T: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "R", _frozen(self.R, (3, 3)))
        object.__setattr__(self, "T", _frozen(self.T, (3,)))
        for name in ("fx", "fy", "cx", "cy"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise DataError(f"camera {name} must be finite")
            object.__setattr__(self, name, v)
        if self.fx <= 0 or self.fy <= 0:
            raise DataError("camera focal lengths must be positive")
        if not np.all(np.isfinite(self.T)):
            raise DataError("camera T must be finite")
        if not is_rotation(self.R):
            raise NotARotation("camera R is not a rotation (tol 1e-9)")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def with_pose(self, R, T):
        return CameraModel(self.fx, self.fy, self.cx, self.cy, R, T)

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return (
            (self.fx, self.fy, self.cx, self.cy) == (other.fx, other.fy, other.cx, other.cy)
            and np.array_equal(self.R, other.R)
            and np.array_equal(self.T, other.T)
        )

    __hash__ = None


@dataclass(frozen=True)
class Pose:
    """End-effector state: position, Euler orientation and gripper opening."""

    x: np.ndarray
    theta: np.ndarray
    gripper: float

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x, (3,)))
        object.__setattr__(self, "theta", _frozen(self.theta, (3,)))
        object.__setattr__(self, "gripper", float(self.gripper))
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.theta))):
            raise DataError("pose must be finite")
        if not 0.0 <= self.gripper <= 1.0:
            raise DataError("gripper must lie in [0, 1]")

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.theta, other.theta)
            and self.gripper == other.gripper
        )

    __hash__ = None


@dataclass(frozen=True)
class DepthGrid:
    """Per-patch depth (meters) plus the fraction of valid pixels behind each cell."""

    depth: np.ndarray
    valid_frac: np.ndarray
    patch: int = 1

    def __post_init__(self):
        d = _frozen(self.depth)
        v = _frozen(self.valid_frac)
        if d.ndim != 2 or d.shape != v.shape or min(d.shape) < 1:
            raise DataError("depth and valid_frac must be matching non-empty 2-D grids")
        if np.any((v < 0) | (v > 1)) or np.any((v > 0) & (d < 0)):
            raise DataError("invalid depth grid values")
        if int(self.patch) < 1:
            raise DataError("patch size must be >= 1")
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "valid_frac", v)
        object.__setattr__(self, "patch", int(self.patch))

    @property
    def rows(self):
        return self.depth.shape[0]

    @property
    def cols(self):
        return self.depth.shape[1]


@dataclass(frozen=True)
class PointGrid:
    """World coordinates per cell, shape ``[3, rows, cols]``; masked cells hold zeros."""

    points: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        p = _frozen(self.points)
        m = np.array(self.mask, dtype=bool)
        if p.ndim != 3 or p.shape[0] != 3 or p.shape[1:] != m.shape:
            raise DataError("points must be [3, rows, cols] matching mask")
        if np.any(p[:, ~m] != 0):
            raise DataError("masked cells must be zero-filled")
        m.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "mask", m)

    @property
    def rows(self):
        return self.mask.shape[0]

    @property
    def cols(self):
        return self.mask.shape[1]


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_matrix(theta):
    tx, ty, tz = (float(v) for v in theta)
    return rot_z(tz) @ rot_y(ty) @ rot_x(tx)


def _half_open(a):
    # atan2 can return -pi; the canonical interval is (-pi, pi].
    return math.pi if a <= -math.pi else a


def matrix_to_euler(R, tol=1e-6):
    """Inverse of :func:`euler_to_matrix` onto the canonical ranges.

    At gimbal lock (``|R[2,0]| > 1 - 1e-9``) roll is pinned to 0 and the
    remaining rotation is attributed to yaw.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise NotARotation("expected a finite 3x3 matrix")
    if rotation_error(R) > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise NotARotation(f"matrix is not a rotation within {tol:g}")
    s = -R[2, 0]
    ty = math.asin(max(-1.0, min(1.0, s)))
    if abs(R[2, 0]) > 1.0 - GIMBAL_TOL:
        tx = 0.0
        tz = math.atan2(-R[0, 1], R[1, 1])
    else:
        tx = math.atan2(R[2, 1], R[2, 2])
        tz = math.atan2(R[1, 0], R[0, 0])
    return np.array([_half_open(tx), ty, _half_open(tz)])


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = math.remainder(float(a), 2.0 * math.pi)
    return math.pi if w <= -math.pi else w


def project(p, cam):
    """World point -> pixel ``(u, v)``."""
    pc = cam.R.T @ (np.asarray(p, dtype=np.float64) - cam.T)
    if pc[2] <= MIN_DEPTH:
        raise BehindCamera(f"camera-frame depth {pc[2]:.3g} <= {MIN_DEPTH:g}")
    return (cam.fx * pc[0] / pc[2] + cam.cx, cam.fy * pc[1] / pc[2] + cam.cy)


def camera_depth(p, cam):
    """Camera-frame z of a world point."""
    return float((cam.R.T @ (np.asarray(p, dtype=np.float64) - cam.T))[2])


def backproject_pixel(u, v, depth, cam):
    """Lift pixel ``(u, v)`` at camera-frame depth ``depth`` into world coordinates."""
    ray = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    return cam.R @ (depth * ray) + cam.T


def patch_centers(rows, cols, patch):
    """Full-resolution pixel coordinates of cell centers: ``index * patch + patch / 2``."""
    u = np.arange(cols, dtype=np.float64) * patch + patch / 2.0
    v = np.arange(rows, dtype=np.float64) * patch + patch / 2.0
    return np.meshgrid(u, v)


def backproject(d, cam, mask_threshold=DEFAULT_MASK_THRESHOLD):
    """Back-project every sufficiently valid cell of ``d`` into the world frame.

    Cells whose valid fraction is below ``mask_threshold`` (the default skips
    patches that are more than 90 % missing) are masked and zero-filled.
    """
    if not 0.0 <= mask_threshold <= 1.0:
        raise DataError("mask_threshold must lie in [0, 1]")
    uu, vv = patch_centers(d.rows, d.cols, d.patch)
    mask = d.valid_frac >= mask_threshold
    rays = np.stack(
        [(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy, np.ones_like(uu)]
    )
    pc = rays * d.depth[None]
    pw = np.einsum("ij,jrc->irc", cam.R, pc) + cam.T[:, None, None]
    pw = np.where(mask[None], pw, 0.0)
    return PointGrid(pw, mask)


def patch_mean_depth(full, patch):
    """Average the non-missing (non-zero) depths inside each ``patch x patch`` block."""
    arr = np.asarray(getattr(full, "array", full), dtype=np.float64)
    if arr.ndim != 2:
        raise DataError("depth map must be 2-D")
    if patch < 1:
        raise DataError("patch size must be >= 1")
    h, w = arr.shape
    if h % patch or w % patch:
        raise IndivisibleShape(f"depth map {h}x{w} not divisible by patch {patch}")
    blocks = arr.reshape(h // patch, patch, w // patch, patch)
    valid = blocks > 0
    count = valid.sum(axis=(1, 3))
    # Offsets from the block minimum keep constant blocks exact.
    base = np.where(valid, blocks, np.inf).min(axis=(1, 3))
    base = np.where(count > 0, base, 0.0)
    resid = np.where(valid, blocks - base[:, None, :, None], 0.0).sum(axis=(1, 3))
    depth = base + np.divide(resid, count, out=np.zeros_like(resid), where=count > 0)
    return DepthGrid(depth, count / float(patch * patch), patch)


def ring_viewpose(angle, radius, height, target=(0.0, 0.0, 0.0)):
    """Look-at extrinsics for a camera on a horizontal ring around ``target``.

    Returns ``(R, T)`` with camera-to-world rotation columns (right, down, forward).
    """
    target = np.asarray(target, dtype=np.float64)
    T = target + np.array([radius * math.cos(angle), radius * math.sin(angle), height])
    offset = target - T
    dist = float(np.linalg.norm(offset))
    if dist < MIN_DEPTH:
        raise DegeneratePose("camera position coincides with target")
    f = offset / dist
    r = np.cross(f, [0.0, 0.0, 1.0])
    rn = float(np.linalg.norm(r))
    if rn < 1e-9:
        r = np.array([1.0, 0.0, 0.0])
        r = r - f * float(f @ r)
        r = r / np.linalg.norm(r)
    else:
        r = r / rn
    down = np.cross(f, r)
    return np.column_stack([r, down, f]), T


def ring_cameras(angles_deg, radius, height, target, fx, fy, cx, cy):
    return [
        CameraModel(fx, fy, cx, cy, *ring_viewpose(math.radians(a), radius, height, target))
        for a in angles_deg
    ]
