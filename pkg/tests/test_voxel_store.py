import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from crseg.errors import BoundsError, EncodingError, FormatError, ShapeError
from crseg.voxel_store import (LabelMap, Volume, extract_sequence, label_pyramid, read_volume,
                               write_volume)


def test_single_voxel_label_file_layout(tmp_path):
    p = tmp_path / "one.vol1"
    write_volume(p, LabelMap(np.array([[[5]]])))
    raw = p.read_bytes()
    assert len(raw) == 33
    assert raw[:4] == b"VOL1"
    assert raw[4:28] == (1).to_bytes(8, "little") * 3
    assert raw[28] == 1
    assert raw[29:] == b"\x05\x00\x00\x00"
    back = read_volume(p)
    assert isinstance(back, LabelMap)
    assert back.shape == (1, 1, 1) and back.data[0, 0, 0] == 5


def test_u8_payload_is_c_order(tmp_path):
    # value encodes (z, y, x) as 4z + 2y + x, scaled into the uint8 grid
    idx = np.arange(8).reshape(2, 2, 2)
    v = Volume(idx.astype(np.float32) / np.float32(255))
    p = tmp_path / "c.vol1"
    write_volume(p, v, dtype_code=0)
    assert list(p.read_bytes()[29:]) == [0, 1, 2, 3, 4, 5, 6, 7]


def test_u8_255_reads_as_one(tmp_path):
    p = tmp_path / "w.vol1"
    write_volume(p, Volume(np.ones((1, 2, 2))), dtype_code=0)
    assert np.all(read_volume(p).data == 1.0)


def test_float_round_trip_bit_identical(tmp_path, rng):
    v = Volume(rng.random((4, 8, 8)).astype(np.float32), voxel_size=(30.0, 6.0, 6.0))
    p = tmp_path / "f.vol1"
    write_volume(p, v)
    back = read_volume(p)
    assert back.data.tobytes() == v.data.tobytes()
    assert back.voxel_size == (30.0, 6.0, 6.0)
    assert json.loads((tmp_path / "f.vol1.meta.json").read_text()) == {"voxel_size_nm": [30.0, 6.0, 6.0]}


def test_truncated_payload_is_format_error(tmp_path):
    p = tmp_path / "t.vol1"
    write_volume(p, LabelMap(np.zeros((2, 3, 3), np.uint32)))
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(FormatError):
        read_volume(p)


def test_bad_magic(tmp_path):
    p = tmp_path / "m.vol1"
    p.write_bytes(b"VOL2" + bytes(25))
    with pytest.raises(FormatError):
        read_volume(p)


def test_encoding_errors(tmp_path):
    with pytest.raises(EncodingError):
        LabelMap(np.array([[-1]]))
    with pytest.raises(EncodingError):
        write_volume(tmp_path / "x.vol1", Volume(np.full((1, 1, 1), 1.5)), dtype_code=0)
    with pytest.raises(EncodingError):
        write_volume(tmp_path / "x.vol1", LabelMap(np.zeros((1, 1, 1))), dtype_code=2)


@settings(max_examples=40, deadline=None)
@given(code=st.sampled_from([0, 1, 2]),
       shape=st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5)),
       seed=st.integers(0, 2**32 - 1))
def test_round_trip_property(tmp_path_factory, code, shape, seed):
    r = np.random.default_rng(seed)
    if code == 0:
        obj = Volume(r.integers(0, 256, size=shape).astype(np.float32) / np.float32(255))
    elif code == 1:
        obj = LabelMap(r.integers(0, 2**32, size=shape, dtype=np.uint64))
    else:
        obj = Volume(r.random(shape, dtype=np.float32))
    p = tmp_path_factory.mktemp("rt") / "v.vol1"
    write_volume(p, obj, dtype_code=code)
    back = read_volume(p)
    assert type(back) is type(obj)
    assert back.data.dtype == obj.data.dtype
    assert back.data.tobytes() == obj.data.tobytes()


def test_extract_sequence_ranges(rng):
    data = rng.random((6, 4, 4)).astype(np.float32)
    labels = rng.integers(0, 3, size=(6, 4, 4))
    v, l = Volume(data), LabelMap(labels)
    frames, ref = extract_sequence(v, l, 0, 6)
    assert frames.shape == (6, 4, 4) and np.array_equal(ref.data, labels[0])
    frames, ref = extract_sequence(v, l, 3, 1)
    assert np.array_equal(frames[0], data[3]) and np.array_equal(ref.data, labels[3])
    frames, _ = extract_sequence(v, l, 2, 3)
    assert np.array_equal(frames, data[2:5])
    with pytest.raises(BoundsError):
        extract_sequence(v, l, 4, 3)
    with pytest.raises(BoundsError):
        extract_sequence(v, l, -1, 2)


def test_extract_sequence_snemi_shape():
    v = Volume(np.broadcast_to(np.float32(0.5), (100, 1024, 1024)))
    l = LabelMap(np.broadcast_to(np.uint32(1), (100, 1024, 1024)))
    frames, ref = extract_sequence(v, l, 10, 30)
    assert frames.shape == (30, 1024, 1024)
    assert ref.shape == (1024, 1024)


def test_label_pyramid_examples():
    const = LabelMap(np.full((8, 8), 3))
    levels = label_pyramid(const, 3)
    assert [lv.shape for lv in levels] == [(8, 8), (4, 4), (2, 2)]
    assert all(np.all(lv.data == 3) for lv in levels)

    quad = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
    assert label_pyramid(LabelMap(quad), 2)[1].data.tolist() == [[1, 2], [3, 4]]
    assert np.array_equal(label_pyramid(LabelMap(quad), 1)[0].data, quad)
    with pytest.raises(ShapeError):
        label_pyramid(LabelMap(np.zeros((6, 6))), 3)


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint32, (8, 8), elements=st.integers(0, 20)))
def test_label_pyramid_never_invents_ids(grid):
    levels = label_pyramid(LabelMap(grid), 4)
    src = set(np.unique(grid))
    for lv in levels:
        assert set(np.unique(lv.data)) <= src
