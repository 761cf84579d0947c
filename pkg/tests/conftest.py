import json
import math

import numpy as np
import pytest

from vla4d.geometry import ring_viewpose
from vla4d.tensorio import camera_to_obj, encode_pgm, dump_json
from vla4d.geometry import CameraModel


def ring_camera(angle_deg=30.0):
    R, T = ring_viewpose(math.radians(angle_deg), 1.5, 0.6, (0.0, 0.0, 0.0))
    return CameraModel(100.0, 100.0, 32.0, 32.0, R, T)


def manifest_obj(n, *, images=None, proprio=None, with_action=True, tid="traj"):
    cam = camera_to_obj(ring_camera())
    frames = []
    for i in range(n):
        x, theta, grip = proprio(i) if proprio else ([0.01 * i, 0.0, 0.0], [0.0, 0.0, 0.0], 0.0)
        fr = {
            "timestamp": i,
            "image_path": images[i] if images else f"img{i}.pgm",
            "depth_path": f"depth{i}.4dtn",
            "camera": json_roundtrip(cam),
            "proprio": {"x": list(x), "theta": list(theta), "gripper": grip},
        }
        if with_action:
            fr["action"] = {"dx": [0.01, 0.0, 0.0], "dtheta": [0.0, 0.0, 0.0], "g": grip}
        frames.append(fr)
    return {"trajectory_id": tid, "instruction": "push the block", "frames": frames}


@pytest.fixture
def write_manifest(tmp_path):
    """Write a manifest plus one PGM per frame; ``levels[i]`` is frame i's gray value."""

    def _write(levels, name="m.json", proprio=None, size=16):
        names = []
        for i, lv in enumerate(levels):
            img = np.full((size, size), lv, dtype=np.float64)
            p = tmp_path / f"{name}.img{i}.pgm"
            p.write_bytes(encode_pgm(img))
            names.append(p.name)
        obj = manifest_obj(len(levels), images=names, proprio=proprio, tid=name)
        path = tmp_path / name
        path.write_text(dump_json(obj))
        return path

    return _write


def json_roundtrip(obj):
    return json.loads(json.dumps(obj))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
