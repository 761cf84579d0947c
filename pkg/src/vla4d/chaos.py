"""Coordinate-system chaos: random rigid re-framing of the robot/world frame.

A chaos transform ``(q, t)`` relabels every world-frame quantity of a
trajectory while leaving what any camera sees unchanged, so a model that only
looks at pixels is confronted with inconsistent action labels.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .actions import Action
from .errors import DataError
from .geometry import Pose, _frozen, euler_to_matrix, is_rotation, matrix_to_euler, rot_z


@dataclass(frozen=True)
class ChaosLevel:
    level: int
    max_z_angle: float
    translation_halfwidth: float


CHAOS_LEVELS = {
    0: ChaosLevel(0, 0.0, 0.0),
    1: ChaosLevel(1, math.radians(15.0), 0.5),
    2: ChaosLevel(2, math.radians(30.0), 0.5),
    3: ChaosLevel(3, math.radians(90.0), 0.5),
}


def chaos_level(level):
    if isinstance(level, ChaosLevel):
        return level
    try:
        return CHAOS_LEVELS[int(level)]
    except (KeyError, ValueError):
        raise DataError(f"chaos level must be one of 0..3, got {level!r}") from None


@dataclass(frozen=True)
class ChaosTransform:
    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", _frozen(self.q, (3, 3)))
        object.__setattr__(self, "t", _frozen(self.t, (3,)))
        if not is_rotation(self.q):
            raise DataError("chaos q must be a rotation")

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def inverse(self):
        return ChaosTransform(self.q.T, -(self.q.T @ self.t))

    def apply_point(self, p):
        return self.q @ np.asarray(p, dtype=np.float64) + self.t

    def to_json(self):
        return {"q": self.q.reshape(-1).tolist(), "t": self.t.tolist()}


def sample_chaos(level, rng, t_dist="cube"):
    """Draw ``q = Rz(alpha)`` and ``t``; always consumes four draws (alpha, then three for t).

    ``t_dist="cube"`` draws each axis uniformly in ``[-w, w]``; ``"ball"`` draws
    uniformly inside the radius-``w`` ball from (radius, cos-polar, azimuth) draws.
    """
    lv = chaos_level(level)
    u = [rng.uniform() for _ in range(4)]
    if lv.level == 0:
        return ChaosTransform.identity()
    alpha = (2.0 * u[0] - 1.0) * lv.max_z_angle
    w = lv.translation_halfwidth
    if t_dist == "cube":
        t = [(2.0 * v - 1.0) * w for v in u[1:]]
    elif t_dist == "ball":
        r = w * u[1] ** (1.0 / 3.0)
        cz = 2.0 * u[2] - 1.0
        sz = math.sqrt(max(0.0, 1.0 - cz * cz))
        phi = 2.0 * math.pi * u[3]
        t = [r * sz * math.cos(phi), r * sz * math.sin(phi), r * cz]
    else:
        raise DataError(f"unknown t_dist {t_dist!r}")
    return ChaosTransform(rot_z(alpha), t)


def quat_to_matrix(x, y, z, w):
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def sample_chaos_so3(rng, halfwidth=0.5):
    """Uniform rotation on SO(3) by the subgroup algorithm, then a cube-uniform ``t``."""
    u1, u2, u3 = rng.uniform(), rng.uniform(), rng.uniform()
    a, b = math.sqrt(1.0 - u1), math.sqrt(u1)
    quat = (
        a * math.sin(2 * math.pi * u2),
        a * math.cos(2 * math.pi * u2),
        b * math.sin(2 * math.pi * u3),
        b * math.cos(2 * math.pi * u3),
    )
    q = quat_to_matrix(*quat)
    t = [(2.0 * rng.uniform() - 1.0) * halfwidth for _ in range(3)]
    return ChaosTransform(q, t)


def compose_chaos(c2, c1):
    """Transform equivalent to applying ``c1`` first, then ``c2``."""
    return ChaosTransform(c2.q @ c1.q, c2.q @ c1.t + c2.t)


def chaos_action(c, a):
    dtheta = matrix_to_euler(c.q @ euler_to_matrix(a.dtheta) @ c.q.T)
    return Action(c.q @ a.dx, dtheta, a.g)


def chaos_pose(c, p):
    theta = matrix_to_euler(c.q @ euler_to_matrix(p.theta))
    return Pose(c.q @ p.x + c.t, theta, p.gripper)


def chaos_camera(c, cam):
    return cam.with_pose(c.q @ cam.R, c.q @ cam.T + c.t)


def apply_chaos_frame(c, action, proprio, cam):
    """Re-express one frame's action, proprioception and camera pose in the chaos frame.

    ``action`` may be ``None`` (frames without labels); the gripper channel
    is never touched.
    """
    a2 = None if action is None else chaos_action(c, action)
    return a2, chaos_pose(c, proprio), chaos_camera(c, cam)


def apply_chaos_manifest(c, m):
    frames = []
    for f in m.frames:
        a, p, cam = apply_chaos_frame(c, f.action, f.proprio, f.camera)
        frames.append(replace(f, action=a, proprio=p, camera=cam))
    return replace(m, frames=tuple(frames))
