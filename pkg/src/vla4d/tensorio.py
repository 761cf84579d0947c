"""File formats: the 4DTN tensor container, binary netpbm images and
trajectory manifests.

4DTN layout (all little-endian)::

    "4DTN" | u32 version=1 | u8 dtype | u32 ndim | u64 dims[ndim] | payload

with dtype codes 0=f32, 1=f64, 2=u8 and a row-major payload.
"""

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actions import Action
from .errors import (
    BadMagic,
    CorruptHeader,
    DataError,
    DimOverflow,
    NonMonotonicTimestamps,
    SchemaError,
    TrailingData,
    TruncatedPayload,
    TruncatedPixels,
    UnsupportedDtype,
    UnsupportedFormat,
    UnsupportedVersion,
)
from .geometry import CameraModel, DepthGrid, PointGrid, Pose

MAGIC = b"4DTN"
VERSION = 1
DTYPE_CODES = {"f32": 0, "f64": 1, "u8": 2}
_CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}
_NUMPY = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "u8": np.dtype("u1")}
_HEADER = struct.Struct("<4sIBI")
_MAX_PAYLOAD = 1 << 62

LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True, eq=False)
class Tensor:
    """Dense row-major array with one of three dtypes."""

    dims: tuple
    dtype: str
    data: np.ndarray

    def __post_init__(self):
        if self.dtype not in DTYPE_CODES:
            raise DataError(f"unsupported dtype {self.dtype!r}")
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 1 or any(d < 1 for d in dims):
            raise DataError("tensor needs ndim >= 1 and every dim >= 1")
        arr = np.ascontiguousarray(self.data, dtype=_NUMPY[self.dtype]).reshape(-1)
        if arr.size != math.prod(dims):
            raise DataError(f"dims {dims} do not match {arr.size} scalars")
        arr.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_array(cls, a, dtype=None):
        a = np.asarray(a)
        if dtype is None:
            dtype = {np.dtype("float32"): "f32", np.dtype("uint8"): "u8", np.dtype("bool"): "u8"}.get(
                a.dtype, "f64"
            )
        return cls(a.shape if a.ndim else (1,), dtype, a)

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def array(self):
        return self.data.reshape(self.dims)

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.dtype == other.dtype
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None


def encode_tensor(t):
    head = _HEADER.pack(MAGIC, VERSION, DTYPE_CODES[t.dtype], t.ndim)
    dims = struct.pack(f"<{t.ndim}Q", *t.dims)
    return head + dims + t.data.astype(_NUMPY[t.dtype], copy=False).tobytes()


def decode_tensor(buf):
    buf = bytes(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic("missing 4DTN magic")
    if len(buf) < _HEADER.size:
        raise TruncatedPayload("header truncated")
    _, version, code, ndim = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}")
    if code not in _CODE_DTYPES:
        raise UnsupportedDtype(f"dtype code {code}")
    if ndim < 1:
        raise DimOverflow("ndim must be >= 1")
    off = _HEADER.size
    if len(buf) < off + 8 * ndim:
        raise TruncatedPayload("dims truncated")
    dims = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    dtype = _CODE_DTYPES[code]
    need = _NUMPY[dtype].itemsize
    for d in dims:
        if d < 1:
            raise DimOverflow("zero-sized dimension")
        need *= d
        if need > _MAX_PAYLOAD:
            raise DimOverflow("dims product overflows any payload")
    have = len(buf) - off
    if have < need:
        raise TruncatedPayload(f"payload has {have} bytes, dims require {need}")
    if have > need:
        raise TrailingData(f"{have - need} bytes after payload")
    data = np.frombuffer(buf, dtype=_NUMPY[dtype], offset=off)
    return Tensor(dims, dtype, data)


def atomic_write(path, data):
    """Write bytes or text via a temp file in the target directory plus rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_tensor(path, t):
    atomic_write(path, encode_tensor(t))


def load_tensor(path):
    return decode_tensor(Path(path).read_bytes())


# --- netpbm ----------------------------------------------------------------

_WS = b" \t\n\r\x0b\x0c"


def _header_tokens(buf, count):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens, i, n = [], 0, len(buf)
    while len(tokens) < count:
        while i < n and (buf[i] in _WS or buf[i] == 0x23):
            if buf[i] == 0x23:
                while i < n and buf[i] not in b"\r\n":
                    i += 1
            else:
                i += 1
        start = i
        while i < n and buf[i] not in _WS and buf[i] != 0x23:
            i += 1
        if start == i:
            raise CorruptHeader("header ended early")
        tokens.append(buf[start:i])
    if i >= n or buf[i] not in _WS:
        raise CorruptHeader("missing whitespace after maxval")
    return tokens, i + 1


def decode_netpbm(buf):
    """Decode binary PGM/PPM bytes into an ``[h, w]`` f32 tensor in [0, 1]."""
    buf = bytes(buf)
    if buf[:2] not in (b"P5", b"P6"):
        raise UnsupportedFormat(f"magic {buf[:2]!r}; only P5/P6 supported")
    channels = 1 if buf[:2] == b"P5" else 3
    tokens, off = _header_tokens(buf[2:], 3)
    off += 2
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise CorruptHeader("non-integer header field") from None
    if w < 1 or h < 1:
        raise CorruptHeader(f"bad size {w}x{h}")
    if maxval != 255:
        raise UnsupportedFormat(f"maxval {maxval}; only 255 supported")
    need = w * h * channels
    if len(buf) - off < need:
        raise TruncatedPixels(f"{len(buf) - off} pixel bytes, need {need}")
    raw = np.frombuffer(buf, dtype=np.uint8, count=need, offset=off).astype(np.float64)
    if channels == 1:
        img = raw.reshape(h, w) / 255.0
    else:
        rgb = raw.reshape(h, w, 3) / 255.0
        img = LUMA[0] * rgb[..., 0] + LUMA[1] * rgb[..., 1] + LUMA[2] * rgb[..., 2]
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    # f32 rounding can step just outside [0, 1].
    return Tensor((h, w), "f32", np.clip(img, 0.0, 1.0))


def load_image(path):
    return decode_netpbm(Path(path).read_bytes())


def encode_pgm(img):
    """Encode a 2-D array in [0, 1] (or uint8) as binary P5."""
    a = np.asarray(img)
    if a.dtype != np.uint8:
        a = np.clip(np.rint(np.asarray(a, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = a.shape
    return b"P5\n%d %d\n255\n" % (w, h) + a.tobytes()


# --- manifests ---------------------------------------------------------------


@dataclass(frozen=True)
class FrameRecord:
    timestamp: int
    image_path: str
    depth_path: str
    camera: CameraModel
    proprio: Pose
    action: Action = None


@dataclass(frozen=True)
class TrajectoryManifest:
    trajectory_id: str
    frames: tuple = field(default_factory=tuple)
    instruction: str = ""

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise DataError("manifest needs at least one frame")
        ts = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise NonMonotonicTimestamps(f"timestamps not strictly increasing: {ts}")

    def frame_at(self, timestamp):
        for f in self.frames:
            if f.timestamp == timestamp:
                return f
        raise KeyError(timestamp)


def _get(obj, key, path):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{path}.{key}" if path else key)
    return obj[key]


def _str(obj, key, path, nonempty=False):
    v = _get(obj, key, path)
    where = f"{path}.{key}" if path else key
    if not isinstance(v, str) or (nonempty and not v):
        raise SchemaError(where, "expected a non-empty string" if nonempty else "expected a string")
    return v


def _num(obj, key, path):
    v = _get(obj, key, path)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(f"{path}.{key}", "expected a finite number")
    return float(v)


def _vec(obj, key, path, n):
    v = _get(obj, key, path)
    ok = isinstance(v, list) and len(v) == n
    ok = ok and all(
        not isinstance(x, bool) and isinstance(x, (int, float)) and math.isfinite(x) for x in v
    )
    if not ok:
        raise SchemaError(f"{path}.{key}", f"expected {n} finite numbers")
    return [float(x) for x in v]


def _build(path, ctor, *args):
    try:
        return ctor(*args)
    except SchemaError:
        raise
    except DataError as exc:
        raise SchemaError(path, str(exc)) from None


def parse_camera(obj, path="camera"):
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    fx, fy, cx, cy = (_num(obj, k, path) for k in ("fx", "fy", "cx", "cy"))
    R = np.array(_vec(obj, "R", path, 9)).reshape(3, 3)
    T = _vec(obj, "T", path, 3)
    return _build(path, CameraModel, fx, fy, cx, cy, R, T)


def parse_pose(obj, path):
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    x = _vec(obj, "x", path, 3)
    theta = _vec(obj, "theta", path, 3)
    if abs(theta[1]) > math.pi / 2 + 1e-12 or abs(theta[0]) > math.pi + 1e-12 or abs(theta[2]) > math.pi + 1e-12:
        raise SchemaError(f"{path}.theta", "Euler angles outside canonical range")
    return _build(path, Pose, x, theta, _num(obj, "gripper", path))


def parse_action(obj, path):
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    return _build(
        path, Action, _vec(obj, "dx", path, 3), _vec(obj, "dtheta", path, 3), _num(obj, "g", path)
    )


def manifest_from_obj(obj):
    if not isinstance(obj, dict):
        raise SchemaError("$", "expected an object")
    tid = _str(obj, "trajectory_id", "")
    instruction = _str(obj, "instruction", "")
    raw_frames = _get(obj, "frames", "")
    if not isinstance(raw_frames, list) or not raw_frames:
        raise SchemaError("frames", "expected a non-empty list")
    frames = []
    for i, fo in enumerate(raw_frames):
        p = f"frames[{i}]"
        if not isinstance(fo, dict):
            raise SchemaError(p, "expected an object")
        ts = _get(fo, "timestamp", p)
        if isinstance(ts, bool) or not isinstance(ts, int):
            raise SchemaError(f"{p}.timestamp", "expected an integer")
        action = None
        if fo.get("action") is not None:
            action = parse_action(fo["action"], f"{p}.action")
        frames.append(
            FrameRecord(
                ts,
                _str(fo, "image_path", p, nonempty=True),
                _str(fo, "depth_path", p, nonempty=True),
                parse_camera(_get(fo, "camera", p), f"{p}.camera"),
                parse_pose(_get(fo, "proprio", p), f"{p}.proprio"),
                action,
            )
        )
    return TrajectoryManifest(tid, frames, instruction)


def parse_manifest(text):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from None
    return manifest_from_obj(obj)


def camera_to_obj(cam):
    return {
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "R": cam.R.reshape(-1).tolist(),
        "T": cam.T.tolist(),
    }


def manifest_to_obj(m):
    frames = []
    for f in m.frames:
        fo = {
            "timestamp": f.timestamp,
            "image_path": f.image_path,
            "depth_path": f.depth_path,
            "camera": camera_to_obj(f.camera),
            "proprio": {"x": f.proprio.x.tolist(), "theta": f.proprio.theta.tolist(), "gripper": f.proprio.gripper},
        }
        if f.action is not None:
            fo["action"] = {"dx": f.action.dx.tolist(), "dtheta": f.action.dtheta.tolist(), "g": f.action.g}
        frames.append(fo)
    return {"trajectory_id": m.trajectory_id, "instruction": m.instruction, "frames": frames}


def dump_json(obj):
    """Deterministic JSON text (sorted keys, shortest float repr, trailing newline)."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def manifest_to_json(m):
    return dump_json(manifest_to_obj(m))


def load_manifest(path):
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


# --- grid serialization --------------------------------------------------------


def depth_grid_to_tensors(d):
    return Tensor.from_array(d.depth, "f64"), Tensor.from_array(d.valid_frac, "f64")


def point_grid_to_tensors(pg):
    return Tensor.from_array(pg.points, "f64"), Tensor.from_array(pg.mask.astype(np.uint8), "u8")


def point_grid_from_tensors(points, mask):
    if points.ndim != 3 or mask.ndim != 2:
        raise DataError("expected points [3, rows, cols] and mask [rows, cols]")
    return PointGrid(points.array.astype(np.float64), mask.array != 0)


def depth_grid_from_tensors(depth, valid_frac, patch=1):
    return DepthGrid(depth.array.astype(np.float64), valid_frac.array.astype(np.float64), patch)
