"""Desk-scale coordinate-chaos experiment.

Each episode is a single step: an effector must move towards a goal.  The
robot frame is perturbed by a chaos transform, which relabels the action but
leaves the rendered pixels unchanged.  A pixel-only MLP therefore faces
inconsistent labels, while an MLP that also sees chaos-frame 3-D coordinates
of fixed scene anchors can recover the frame.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .actions import Action
from .chaos import ChaosTransform, chaos_camera, chaos_level, sample_chaos
from .errors import BehindCamera, DataError
from .geometry import CameraModel, MIN_DEPTH, ring_viewpose
from .learnkit import EPS, Batch, Mlp, mlp_forward_batch, mlp_train_step
from .rng import Prng, derive_seed

VARIANTS = ("base", "3d")


def default_camera():
    R, T = ring_viewpose(math.radians(225.0), 1.2, 0.9, (0.0, 0.0, 0.0))
    return CameraModel(200.0, 200.0, 112.0, 112.0, R, T)


@dataclass(frozen=True)
class SceneSpec:
    anchors: tuple = ((0.0, 0.0, 0.0), (0.4, 0.0, 0.0), (0.0, 0.4, 0.0), (0.0, 0.0, 0.4))
    effector_range: tuple = ((-0.35, -0.05), (-0.3, 0.3), (0.0, 0.02))
    goal_range: tuple = ((0.05, 0.35), (-0.3, 0.3), (0.0, 0.02))
    camera: CameraModel = field(default_factory=default_camera)
    step: float = 0.3

    def __post_init__(self):
        anchors = np.array(self.anchors, dtype=np.float64)
        if anchors.ndim != 2 or anchors.shape[1] != 3 or len(anchors) < 4:
            raise DataError("need at least four 3-D anchors")
        if np.linalg.matrix_rank(anchors[1:] - anchors[0]) < 3:
            raise DataError("anchors must affinely span 3-D")
        for rng in (self.effector_range, self.goal_range):
            r = np.array(rng, dtype=np.float64)
            if r.shape != (3, 2) or np.any(r[:, 0] >= r[:, 1]):
                raise DataError("ranges must be three (min, max) pairs with min < max")
        if self.step <= 0:
            raise DataError("step must be positive")


@dataclass(frozen=True)
class Episode:
    chaos: ChaosTransform
    effector: np.ndarray
    goal: np.ndarray
    features_base: np.ndarray
    features_3d: np.ndarray
    label: Action


def _draw_in(rng, ranges):
    return np.array([rng.uniform_range(lo, hi) for lo, hi in ranges])


def _pixels(points, cam):
    pc = (points - cam.T) @ cam.R
    z = pc[:, 2]
    if np.any(z <= MIN_DEPTH):
        raise BehindCamera("scene point behind the camera")
    u = cam.fx * pc[:, 0] / z + cam.cx
    v = cam.fy * pc[:, 1] / z + cam.cy
    return np.stack([u, v], axis=1)


def generate_episode(spec, level, rng):
    """Draw effector, goal (uniform in their boxes) and a chaos transform, in that order.

    Pixel features are normalized image coordinates ``((u-cx)/fx, (v-cy)/fy)``
    of every scene point seen through the chaos-transformed camera.
    """
    effector = _draw_in(rng, spec.effector_range)
    goal = _draw_in(rng, spec.goal_range)
    return make_episode(spec, effector, goal, sample_chaos(level, rng))


def make_episode(spec, effector, goal, c):
    """Episode for a fixed effector/goal pair under chaos transform ``c``."""
    effector = np.asarray(effector, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    world = np.vstack([np.asarray(spec.anchors, dtype=np.float64), effector, goal])
    moved = world @ c.q.T + c.t
    cam = chaos_camera(c, spec.camera)
    px = _pixels(moved, cam)
    base = np.column_stack([(px[:, 0] - cam.cx) / cam.fx, (px[:, 1] - cam.cy) / cam.fy]).ravel()
    offset = goal - effector
    label = Action(spec.step * (c.q @ (offset / np.linalg.norm(offset))), np.zeros(3), 0.0)
    return Episode(c, effector, goal, base, np.concatenate([base, moved.ravel()]), label)


def generate_episodes(spec, level, n, seed):
    """``n`` episodes, episode ``i`` drawn from its own stream ``derive_seed(seed, i)``."""
    return [generate_episode(spec, level, Prng(derive_seed(seed, i))) for i in range(n)]


@dataclass(frozen=True)
class NetConfig:
    hidden: tuple = (64, 64)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    lr: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 256
    lambda_d: float = 1.0
    eps: float = EPS
    schedule: str = "constant"

    def lr_at(self, step):
        # "cosine" decays from lr towards zero, which settles the last iterate
        if self.schedule == "constant":
            return self.lr
        if self.schedule == "cosine":
            return 0.5 * self.lr * (1.0 + math.cos(math.pi * step / self.steps))
        raise DataError(f"unknown lr schedule {self.schedule!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    levels: tuple = (0, 1, 2, 3)
    n_train: int = 4096
    n_test: int = 1024
    net: NetConfig = NetConfig()
    train: TrainConfig = TrainConfig()
    test_with_chaos: bool = True


def _stream(seed, level, role):
    # Purpose bits sit above bit 32 so small user seeds never alias each other.
    return derive_seed(seed, ((level + 1) << 40) | (role << 32))


def _to_batch(episodes, variant):
    key = "features_base" if variant == "base" else "features_3d"
    X = np.stack([getattr(e, key) for e in episodes])
    return Batch(
        X,
        np.stack([e.label.dx for e in episodes]),
        np.stack([e.label.dtheta for e in episodes]),
        np.array([e.label.g for e in episodes]),
    )


def _standardizer(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return mu, np.where(sd > 1e-12, sd, 1.0)


def angular_error(pred_dx, label_dx):
    """Per-row angle between predicted and true translation directions (radians)."""
    a = pred_dx / np.maximum(np.linalg.norm(pred_dx, axis=1, keepdims=True), 1e-300)
    b = label_dx / np.linalg.norm(label_dx, axis=1, keepdims=True)
    return np.arccos(np.clip(np.sum(a * b, axis=1), -1.0, 1.0))


def train_mlp(batch, net_cfg, train_cfg, init_seed, order_seed):
    """Mini-batch SGD with momentum; each epoch visits the data in an order drawn from ``order_seed``."""
    sizes = [batch.inputs.shape[1], *net_cfg.hidden, 7]
    net = Mlp.init(sizes, Prng(init_seed))
    order_rng = Prng(order_seed)
    n = len(batch)
    bs = min(train_cfg.batch_size, n)
    velocity, perm, pos = None, None, n
    train_cfg.lr_at(0)
    for step in range(train_cfg.steps):
        if pos + bs > n:
            perm = np.argsort(order_rng.uniform_array(n), kind="stable")
            pos = 0
        idx = perm[pos : pos + bs]
        pos += bs
        net, velocity, _ = mlp_train_step(
            net, batch.take(idx), train_cfg.lambda_d, train_cfg.eps,
            train_cfg.lr_at(step), train_cfg.momentum, velocity,
        )
    return net


def run_level(spec, level, cfg, seed):
    """Train both variants at one chaos level; returns ``{variant: mean angular error}``."""
    train = generate_episodes(spec, level, cfg.n_train, _stream(seed, level, 0))
    test_level = level if cfg.test_with_chaos else 0
    test = generate_episodes(spec, test_level, cfg.n_test, _stream(seed, level, 1))
    out = {}
    for vi, variant in enumerate(VARIANTS):
        tr, te = _to_batch(train, variant), _to_batch(test, variant)
        mu, sd = _standardizer(tr.inputs)
        tr = Batch((tr.inputs - mu) / sd, tr.dx, tr.dtheta, tr.g)
        net = train_mlp(tr, cfg.net, cfg.train, _stream(seed, level, 2 + vi), _stream(seed, level, 4 + vi))
        pred, _ = mlp_forward_batch(net, (te.inputs - mu) / sd)
        out[variant] = float(angular_error(pred[:, :3], te.dx).mean())
    return out


@dataclass
class ExperimentResult:
    seed: int
    n_test: int
    errors: dict
    seconds: float = 0.0

    def rows(self):
        return [
            {
                "level": lv,
                "variant": v,
                "mean_angular_error_rad": self.errors[lv][v],
                "n_test": self.n_test,
                "seed": self.seed,
            }
            for lv in sorted(self.errors)
            for v in VARIANTS
        ]

    def table(self):
        return {lv: (e["base"], e["3d"]) for lv, e in self.errors.items()}


def run_experiment(spec=None, cfg=None, seed=0):
    spec = spec or SceneSpec()
    cfg = cfg or ExperimentConfig()
    if cfg.n_train < 1 or cfg.n_test < 1:
        raise DataError("n_train and n_test must be >= 1")
    start = time.perf_counter()
    errors = {}
    for level in cfg.levels:
        chaos_level(level)
        errors[int(level)] = run_level(spec, int(level), cfg, seed)
    return ExperimentResult(seed, cfg.n_test, errors, time.perf_counter() - start)


def rows_to_csv(rows):
    lines = ["level,variant,mean_angular_error_rad,n_test,seed"]
    lines += [
        f"{r['level']},{r['variant']},{r['mean_angular_error_rad']!r},{r['n_test']},{r['seed']}"
        for r in rows
    ]
    return "\n".join(lines) + "\n"
