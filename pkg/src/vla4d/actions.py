"""End-effector delta actions: construction, scaling, percentile normalization
and trajectory preprocessing."""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, EmptyAfterFiltering, TooFewSamples, TrajectoryRejected
from .geometry import _frozen, wrap_angle

SCALE_T = 15.0
SCALE_R = 5.0
TARGET_LEN = 100
MAX_LEN = 600
STATIONARY_EPS = 1e-6
DEGENERATE_SPAN = 1e-12


@dataclass(frozen=True)
class Action:
    dx: np.ndarray
    dtheta: np.ndarray
    g: float

    def __post_init__(self):
        object.__setattr__(self, "dx", _frozen(self.dx, (3,)))
        object.__setattr__(self, "dtheta", _frozen(self.dtheta, (3,)))
        object.__setattr__(self, "g", float(self.g))
        if not (np.all(np.isfinite(self.dx)) and np.all(np.isfinite(self.dtheta))):
            raise DataError("action must be finite")
        if not 0.0 <= self.g <= 1.0:
            raise DataError("gripper action must lie in [0, 1]")

    @classmethod
    def zero(cls, g=0.0):
        return cls(np.zeros(3), np.zeros(3), g)

    @property
    def continuous(self):
        """The six normalized channels (dx then dtheta)."""
        return np.concatenate([self.dx, self.dtheta])

    def __eq__(self, other):
        if not isinstance(other, Action):
            return NotImplemented
        return (
            np.array_equal(self.dx, other.dx)
            and np.array_equal(self.dtheta, other.dtheta)
            and self.g == other.g
        )

    __hash__ = None


@dataclass(frozen=True)
class NormStats:
    q01: np.ndarray
    q99: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q01", _frozen(self.q01, (6,)))
        object.__setattr__(self, "q99", _frozen(self.q99, (6,)))
        if np.any(self.q01 > self.q99):
            raise DataError("q01 must not exceed q99")

    def to_json(self):
        return {"q01": self.q01.tolist(), "q99": self.q99.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["q01"], obj["q99"])


def delta_action(current, target):
    dtheta = [wrap_angle(b - a) for a, b in zip(current.theta, target.theta)]
    return Action(target.x - current.x, dtheta, target.gripper)


def scale_action(a, s_t=SCALE_T, s_r=SCALE_R, divide=False):
    """Multiply translation by ``s_t`` and rotation by ``s_r`` (``divide=True`` flips it)."""
    if divide:
        return Action(a.dx / s_t, a.dtheta / s_r, a.g)
    return Action(a.dx * s_t, a.dtheta * s_r, a.g)


def unscale_action(a, s_t=SCALE_T, s_r=SCALE_R, divide=False):
    return scale_action(a, s_t, s_r, divide=not divide)


def quantile(sorted_values, p):
    """Linear-interpolation quantile at rank ``p * (N - 1)`` of pre-sorted values."""
    n = len(sorted_values)
    rank = p * (n - 1)
    lo = math.floor(rank)
    hi = min(lo + 1, n - 1)
    frac = rank - lo
    a, b = float(sorted_values[lo]), float(sorted_values[hi])
    return a + (b - a) * frac


def compute_percentile_stats(actions):
    if len(actions) < 2:
        raise TooFewSamples(f"need at least 2 actions, got {len(actions)}")
    data = np.stack([a.continuous for a in actions])
    q01, q99 = [], []
    for col in data.T:
        col = np.sort(col)
        q01.append(quantile(col, 0.01))
        q99.append(quantile(col, 0.99))
    return NormStats(q01, q99)


def _normalize_vec(x, stats):
    span = stats.q99 - stats.q01
    degenerate = span < DEGENERATE_SPAN
    safe = np.where(degenerate, 1.0, span)
    y = np.clip(2.0 * (x - stats.q01) / safe - 1.0, -1.0, 1.0)
    return np.where(degenerate, 0.0, y)


def _denormalize_vec(y, stats):
    span = stats.q99 - stats.q01
    x = (np.asarray(y, dtype=np.float64) + 1.0) / 2.0 * span + stats.q01
    return np.where(span < DEGENERATE_SPAN, stats.q01, x)


def normalize_action(a, stats):
    y = _normalize_vec(a.continuous, stats)
    return Action(y[:3], y[3:], a.g)


def denormalize_action(a, stats):
    x = _denormalize_vec(a.continuous, stats)
    return Action(x[:3], x[3:], a.g)


def _pose_gap(a, b):
    dtheta = [abs(wrap_angle(q - p)) for p, q in zip(a.theta, b.theta)]
    return max(float(np.max(np.abs(b.x - a.x))), max(dtheta), abs(b.gripper - a.gripper))


def downsample_indices(length, target_len):
    """``round(i * (L - 1) / (target_len - 1))`` for i < target_len, half rounded up."""
    if length <= target_len:
        return list(range(length))
    if target_len <= 1:
        return [0]
    den = 2 * (target_len - 1)
    picked = [(2 * i * (length - 1) + (target_len - 1)) // den for i in range(target_len)]
    return sorted(set(picked))


def preprocess_trajectory(
    m, target_len=TARGET_LEN, max_len=MAX_LEN, stationary_eps=STATIONARY_EPS
):
    """Drop stationary frames, reject long trajectories, downsample, recompute deltas.

    A frame is stationary when its proprioception differs from the previously
    kept frame by less than ``stationary_eps`` in every channel.
    Raises :class:`TrajectoryRejected` when more than ``max_len`` actions remain.
    """
    frames = list(m.frames)
    if not frames:
        raise EmptyAfterFiltering("manifest has no frames")
    kept = [frames[0]]
    for fr in frames[1:]:
        if _pose_gap(kept[-1].proprio, fr.proprio) >= stationary_eps:
            kept.append(fr)
    if len(kept) > max_len:
        raise TrajectoryRejected(
            f"{m.trajectory_id}: {len(kept)} actions after filtering exceeds {max_len}"
        )
    kept = [kept[i] for i in downsample_indices(len(kept), target_len)]
    out = []
    for i, fr in enumerate(kept):
        if i + 1 < len(kept):
            act = delta_action(fr.proprio, kept[i + 1].proprio)
        else:
            act = Action.zero(fr.proprio.gripper)
        out.append(replace(fr, action=act))
    return replace(m, frames=tuple(out))
