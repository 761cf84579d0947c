import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vla4d import errors
from vla4d.geometry import DepthGrid, PointGrid
from vla4d.rng import Prng
from vla4d.tensorio import (
    Tensor,
    decode_netpbm,
    decode_tensor,
    depth_grid_from_tensors,
    depth_grid_to_tensors,
    encode_pgm,
    encode_tensor,
    load_image,
    load_tensor,
    manifest_to_json,
    parse_manifest,
    point_grid_from_tensors,
    point_grid_to_tensors,
    save_tensor,
)

from conftest import manifest_obj


def test_scalar_f32_layout():
    raw = encode_tensor(Tensor((1,), "f32", [0.0]))
    # u64 dims make the header 4 + 4 + 1 + 4 + 8 bytes
    expected = b"4DTN" + struct.pack("<I", 1) + b"\x00" + struct.pack("<I", 1) + struct.pack("<Q", 1) + b"\x00" * 4
    assert raw == expected
    assert len(raw) == 25
    t = decode_tensor(raw)
    assert t.dims == (1,) and t.dtype == "f32" and t.data.tolist() == [0.0]


def test_f64_payload_starts_with_ieee_one():
    raw = encode_tensor(Tensor((2, 2), "f64", [1, 2, 3, 4]))
    head = 4 + 4 + 1 + 4 + 16
    assert len(raw) == head + 32
    assert raw[head : head + 8] == struct.pack("<d", 1.0)


def test_roundtrip_random_tensors():
    rng = Prng(3)
    for _ in range(100):
        ndim = 1 + int(rng.uniform() * 4)
        dims = tuple(1 + int(rng.uniform() * 5) for _ in range(ndim))
        dtype = ("f32", "f64", "u8")[int(rng.uniform() * 3)]
        vals = rng.uniform_array(math.prod(dims))
        data = (vals * 255).astype(np.uint8) if dtype == "u8" else (vals - 0.5) * 1e3
        t = Tensor(dims, dtype, data)
        raw = encode_tensor(t)
        back = decode_tensor(raw)
        assert back == t
        assert encode_tensor(back) == raw


@settings(max_examples=200, deadline=None)
@given(
    dims=st.lists(st.integers(1, 4), min_size=1, max_size=4),
    seed=st.integers(0, 2**32),
)
def test_roundtrip_property(dims, seed):
    data = np.random.default_rng(seed).standard_normal(math.prod(dims))
    t = Tensor(tuple(dims), "f64", data)
    assert decode_tensor(encode_tensor(t)) == t


def test_nan_payload_roundtrips_bitwise():
    t = Tensor((3,), "f64", [np.nan, -0.0, np.inf])
    assert decode_tensor(encode_tensor(t)) == t


@pytest.mark.parametrize(
    "raw, exc",
    [
        (b"XXXX" + b"\x00" * 30, errors.BadMagic),
        (b"", errors.BadMagic),
        (b"4DTN\x01\x00", errors.TruncatedPayload),
        (b"4DTN" + struct.pack("<IBI", 2, 0, 1) + struct.pack("<Q", 1) + b"\x00" * 4, errors.UnsupportedVersion),
        (b"4DTN" + struct.pack("<IBI", 1, 9, 1) + struct.pack("<Q", 1) + b"\x00" * 4, errors.UnsupportedDtype),
        (b"4DTN" + struct.pack("<IBI", 1, 0, 1) + struct.pack("<Q", 10) + b"\x00" * 4, errors.TruncatedPayload),
        (b"4DTN" + struct.pack("<IBI", 1, 0, 2) + struct.pack("<Q", 1), errors.TruncatedPayload),
        (b"4DTN" + struct.pack("<IBI", 1, 0, 0), errors.DimOverflow),
        (b"4DTN" + struct.pack("<IBI", 1, 0, 1) + struct.pack("<Q", 0), errors.DimOverflow),
        (b"4DTN" + struct.pack("<IBI", 1, 1, 2) + struct.pack("<2Q", 2**40, 2**40), errors.DimOverflow),
        (b"4DTN" + struct.pack("<IBI", 1, 2, 1) + struct.pack("<Q", 1) + b"\x01\x02", errors.TrailingData),
    ],
)
def test_decode_errors(raw, exc):
    with pytest.raises(exc):
        decode_tensor(raw)


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=64))
def test_fuzz_raw_bytes_only_typed_errors(blob):
    try:
        decode_tensor(b"4DTN" + blob)
    except errors.TensorFormatError:
        pass


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 40), st.binary(min_size=1, max_size=4))
def test_fuzz_corrupted_valid_file(pos, junk):
    raw = bytearray(encode_tensor(Tensor((2, 3), "f32", np.arange(6))))
    pos = min(pos, len(raw) - 1)
    raw[pos : pos + len(junk)] = junk
    try:
        decode_tensor(bytes(raw))
    except errors.TensorFormatError:
        pass


def test_tensor_invariants():
    with pytest.raises(errors.DataError):
        Tensor((2, 2), "f64", [1.0, 2.0])
    with pytest.raises(errors.DataError):
        Tensor((0,), "f64", [])
    with pytest.raises(errors.DataError):
        Tensor((1,), "i32", [1])


def test_save_load_tensor(tmp_path):
    t = Tensor((2, 3), "u8", [0, 1, 2, 3, 4, 255])
    p = tmp_path / "t.4dtn"
    save_tensor(p, t)
    assert load_tensor(p) == t
    assert [q.name for q in tmp_path.iterdir()] == ["t.4dtn"]


# --- images -------------------------------------------------------------------


def test_p5_scaling():
    img = decode_netpbm(b"P5\n2 2\n255\n" + bytes([0, 255, 0, 255]))
    assert img.dims == (2, 2) and img.dtype == "f32"
    assert img.array.tolist() == [[0.0, 1.0], [0.0, 1.0]]


def test_p6_white_and_red():
    white = decode_netpbm(b"P6 1 1 255\n" + bytes([255, 255, 255]))
    assert white.array.tolist() == [[1.0]]
    red = decode_netpbm(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
    assert red.array[0, 0] == np.float32(0.299)


def test_header_comments_and_whitespace():
    raw = b"P5 # c\n# full line\n3\t1\n255\n" + bytes([10, 20, 30])
    assert decode_netpbm(raw).dims == (1, 3)


def test_pixel_byte_equal_to_whitespace():
    # the single separator after maxval is consumed; 0x0a is then a pixel
    img = decode_netpbm(b"P5 1 1 255\n\x0a")
    assert img.array[0, 0] == np.float32(10 / 255)


@pytest.mark.parametrize(
    "raw, exc",
    [
        (b"P2\n1 1\n255\n0", errors.UnsupportedFormat),
        (b"BM....", errors.UnsupportedFormat),
        (b"P5\n1 1\n65535\n\x00\x00", errors.UnsupportedFormat),
        (b"P5\n1\n", errors.CorruptHeader),
        (b"P5\nx 1\n255\n\x00", errors.CorruptHeader),
        (b"P5\n0 1\n255\n", errors.CorruptHeader),
        (b"P5\n2 2\n255\n\x00\x00", errors.TruncatedPixels),
        (b"P6\n1 1\n255\n\x00\x00", errors.TruncatedPixels),
    ],
)
def test_image_errors(raw, exc):
    with pytest.raises(exc):
        decode_netpbm(raw)


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=40))
def test_image_fuzz(blob):
    try:
        img = decode_netpbm(b"P5" + blob)
    except errors.ImageFormatError:
        return
    a = img.array
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_pgm_file_roundtrip(tmp_path):
    img = np.array([[0.0, 0.5], [1.0, 0.25]])
    p = tmp_path / "a.pgm"
    p.write_bytes(encode_pgm(img))
    back = load_image(p).array
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-7


# --- manifests --------------------------------------------------------------


def test_minimal_manifest():
    m = parse_manifest(json.dumps(manifest_obj(1)))
    assert len(m.frames) == 1
    assert m.frames[0].camera.fx == 100.0
    assert m.instruction == "push the block"


def test_manifest_json_roundtrip():
    m = parse_manifest(json.dumps(manifest_obj(3)))
    text = manifest_to_json(m)
    assert manifest_to_json(parse_manifest(text)) == text


def test_action_optional():
    m = parse_manifest(json.dumps(manifest_obj(2, with_action=False)))
    assert m.frames[0].action is None


def test_non_monotonic():
    obj = manifest_obj(2)
    obj["frames"][1]["timestamp"] = 0
    with pytest.raises(errors.NonMonotonicTimestamps):
        parse_manifest(json.dumps(obj))


def _schema_path(obj):
    with pytest.raises(errors.SchemaError) as info:
        parse_manifest(json.dumps(obj))
    return info.value.path


def test_missing_camera_path():
    obj = manifest_obj(1)
    del obj["frames"][0]["camera"]
    assert _schema_path(obj) == "frames[0].camera"


@pytest.mark.parametrize(
    "mutate, path",
    [
        (lambda o: o.pop("trajectory_id"), "trajectory_id"),
        (lambda o: o.__setitem__("frames", []), "frames"),
        (lambda o: o["frames"][1]["camera"].__setitem__("R", [1, 0, 0]), "frames[1].camera.R"),
        (lambda o: o["frames"][0]["camera"].__setitem__("fx", -1.0), "frames[0].camera"),
        (lambda o: o["frames"][0]["camera"].__setitem__("R", [2, 0, 0, 0, 1, 0, 0, 0, 1]), "frames[0].camera"),
        (lambda o: o["frames"][0]["proprio"].__setitem__("gripper", 2.0), "frames[0].proprio"),
        (lambda o: o["frames"][0]["proprio"].__setitem__("theta", [0.0, 2.0, 0.0]), "frames[0].proprio.theta"),
        (lambda o: o["frames"][0].__setitem__("timestamp", 1.5), "frames[0].timestamp"),
        (lambda o: o["frames"][0].__setitem__("image_path", ""), "frames[0].image_path"),
        (lambda o: o["frames"][0]["action"].pop("g"), "frames[0].action.g"),
        (lambda o: o["frames"][0]["action"].__setitem__("dx", [True, 0, 0]), "frames[0].action.dx"),
    ],
)
def test_schema_paths(mutate, path):
    obj = manifest_obj(2)
    mutate(obj)
    assert _schema_path(obj) == path


def test_invalid_json_is_schema_error():
    with pytest.raises(errors.SchemaError):
        parse_manifest("{not json")


# --- grids -----------------------------------------------------------------------


def test_grid_tensor_layouts():
    pg = PointGrid(np.arange(12.0).reshape(3, 2, 2) * [[[1, 0], [1, 1]]], [[True, False], [True, True]])
    pts, mask = point_grid_to_tensors(pg)
    assert pts.dims == (3, 2, 2) and pts.dtype == "f64"
    assert mask.dims == (2, 2) and mask.dtype == "u8" and mask.data.tolist() == [1, 0, 1, 1]
    back = point_grid_from_tensors(decode_tensor(encode_tensor(pts)), decode_tensor(encode_tensor(mask)))
    assert np.array_equal(back.points, pg.points) and np.array_equal(back.mask, pg.mask)

    d = DepthGrid([[1.0, 2.0]], [[1.0, 0.5]], 2)
    dt, vt = depth_grid_to_tensors(d)
    assert dt.dims == (1, 2)
    d2 = depth_grid_from_tensors(dt, vt, 2)
    assert np.array_equal(d2.depth, d.depth) and np.array_equal(d2.valid_frac, d.valid_frac)
