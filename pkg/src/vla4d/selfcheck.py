"""Fast embedded invariant suite behind ``vla4d selfcheck``."""

import math

import numpy as np

from . import actions, chaos, geometry, learnkit, sampling, tensorio
from .rng import Prng


def _tensor_roundtrip(rng):
    for _ in range(50):
        dims = tuple(1 + int(rng.uniform() * 4) for _ in range(1 + int(rng.uniform() * 3)))
        t = tensorio.Tensor(dims, "f64", rng.uniform_array(math.prod(dims)))
        if tensorio.decode_tensor(tensorio.encode_tensor(t)) != t:
            return False, f"roundtrip failed for dims {dims}"
    return True, "50 tensors"


def _euler_roundtrip(rng):
    worst = 0.0
    for _ in range(500):
        th = np.array([
            rng.uniform_range(-math.pi, math.pi),
            rng.uniform_range(-math.pi / 2 + 1e-4, math.pi / 2 - 1e-4),
            rng.uniform_range(-math.pi, math.pi),
        ])
        worst = max(worst, float(np.max(np.abs(geometry.matrix_to_euler(geometry.euler_to_matrix(th)) - th))))
    lock = geometry.matrix_to_euler(geometry.rot_y(math.pi / 2))
    ok = worst < 1e-9 and lock[0] == 0.0 and lock[1] == math.pi / 2
    return ok, f"max err {worst:.2e}"


def _project_roundtrip(rng):
    worst = 0.0
    for _ in range(500):
        R = chaos.sample_chaos_so3(rng).q
        cam = geometry.CameraModel(100 + 400 * rng.uniform(), 100 + 400 * rng.uniform(), 320.0, 240.0, R, rng.uniform_array(3))
        z = 0.1 + 5 * rng.uniform()
        p = cam.R @ np.array([rng.uniform_range(-1, 1) * z, rng.uniform_range(-1, 1) * z, z]) + cam.T
        u, v = geometry.project(p, cam)
        worst = max(worst, float(np.max(np.abs(geometry.backproject_pixel(u, v, z, cam) - p))))
    return worst < 1e-9, f"max err {worst:.2e}"


def _memory_bank(rng):
    steps = {i: np.array([v], float) for i, v in enumerate([0, 0, 0, 10, 10, 10])}
    flat = {i: np.array([1.0]) for i in range(5)}
    if sampling.memory_bank_sample(5, steps, 6, 3) != [0, 3, 5]:
        return False, "step trace"
    if sampling.memory_bank_sample(4, flat, 5, 3) != [0, 3, 4]:
        return False, "constant trace"
    for _ in range(300):
        n = 1 + int(rng.uniform() * 16)
        k = 1 + int(rng.uniform() * 6)
        d = 1 + int(rng.uniform() * 4)
        frames = {i: rng.uniform_array(d) for i in range(n)}
        a = sampling.memory_bank_sample(n - 1, frames, n, k, debug=True)
        if a != sampling.memory_bank_reference(n - 1, frames, n, k):
            return False, f"oracle mismatch n={n} k={k}"
    return True, "hand traces + 300 oracle cases"


def _loss_grad(rng):
    worst = 0.0
    for _ in range(100):
        out = rng.uniform_array(7) * 4 - 2
        tgt = actions.Action(rng.uniform_array(3) * 2 - 1, rng.uniform_array(3) * 2 - 1, rng.uniform())
        if np.linalg.norm(out[:3]) < 0.1 or np.linalg.norm(out[:3] - tgt.dx) < 0.1:
            continue
        f = lambda o: learnkit.action_loss_from_output(o, tgt).total  # noqa: E731
        g = lambda o: learnkit.action_loss_from_output(o, tgt).grad  # noqa: E731
        worst = max(worst, learnkit.grad_check(f, g, out, 1e-5))
    return worst < 1e-5, f"max rel err {worst:.2e}"


def _chaos_invariance(rng):
    worst = 0.0
    for _ in range(200):
        c = chaos.sample_chaos_so3(rng)
        R, T = geometry.ring_viewpose(2 * math.pi * rng.uniform(), 2.0, 1.0)
        cam = geometry.CameraModel(200.0, 200.0, 100.0, 100.0, R, T)
        p = rng.uniform_array(3) - 0.5
        a = geometry.project(p, cam)
        b = geometry.project(c.apply_point(p), chaos.chaos_camera(c, cam))
        worst = max(worst, abs(a[0] - b[0]), abs(a[1] - b[1]))
    return worst < 1e-9, f"max pixel diff {worst:.2e}"


def _normalization(rng):
    vals = [actions.Action([float(i)] * 3, [float(i)] * 3, 0.0) for i in range(1, 101)]
    st = actions.compute_percentile_stats(vals)
    ok = abs(st.q01[0] - 1.99) < 1e-12 and abs(st.q99[0] - 99.01) < 1e-12
    return ok, f"q01={st.q01[0]:.6f} q99={st.q99[0]:.6f}"


CHECKS = (
    ("tensor_roundtrip", _tensor_roundtrip),
    ("euler_roundtrip", _euler_roundtrip),
    ("project_backproject", _project_roundtrip),
    ("memory_bank", _memory_bank),
    ("loss_gradients", _loss_grad),
    ("chaos_pixel_invariance", _chaos_invariance),
    ("percentile_stats", _normalization),
)


def run_selfcheck(seed=0):
    results = []
    for i, (name, fn) in enumerate(CHECKS):
        try:
            ok, detail = fn(Prng(seed ^ i))
        except Exception as exc:  # a crash is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
