import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sewsnn.data import (
    FrameDataset,
    SyntheticSpec,
    generate_synthetic,
    load_frames,
    save_frames,
    train_test_split,
)
from sewsnn.errors import DatasetError, LabelError, MagicError, TruncationError, VersionError

HEADER = struct.Struct("<4sH6I")


def small(seed=0, n=6, classes=3):
    rng = np.random.default_rng(seed)
    x = rng.random((n, 2, 1, 3, 4)).astype(np.float32)
    return FrameDataset(x, rng.integers(classes, size=n), classes)


@pytest.fixture
def path(tmp_path):
    return os.fspath(tmp_path / "frames.sewf")


# --- file format -----------------------------------------------------------


def test_header_layout(path):
    save_frames(small(), path)
    with open(path, "rb") as fh:
        raw = fh.read()
    assert HEADER.unpack_from(raw) == (b"SEWF", 1, 6, 2, 1, 3, 4, 3)
    assert len(raw) == 30 + 6 * (2 * 12 * 4 + 4)


@settings(max_examples=25)
@given(
    n=st.integers(0, 5),
    t=st.integers(1, 3),
    c=st.integers(1, 2),
    hw=st.integers(1, 4),
    classes=st.integers(1, 5),
    seed=st.integers(0, 1000),
)
def test_round_trip_is_bit_exact(tmp_path_factory, n, t, c, hw, classes, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, t, c, hw, hw)).astype(np.float32)
    data = FrameDataset(x, rng.integers(classes, size=n), classes)
    p = os.fspath(tmp_path_factory.mktemp("rt") / "d.sewf")
    save_frames(data, p)
    back = load_frames(p)
    assert back.x.tobytes() == data.x.tobytes()
    assert np.array_equal(back.y, data.y)
    assert back.num_classes == classes and back.x.shape == x.shape


def test_empty_dataset(path):
    save_frames(FrameDataset(np.zeros((0, 3, 1, 2, 2), np.float32), np.zeros(0, np.int64), 2), path)
    back = load_frames(path)
    assert len(back) == 0 and back.x.shape == (0, 3, 1, 2, 2)


def _write(path, raw):
    with open(path, "wb") as fh:
        fh.write(raw)


def _raw(path):
    save_frames(small(), path)
    with open(path, "rb") as fh:
        return bytearray(fh.read())


def test_truncated_payload(path):
    raw = _raw(path)
    _write(path, raw[:-3])
    with pytest.raises(TruncationError) as info:
        load_frames(path)
    assert (info.value.expected, info.value.actual) == (len(raw), len(raw) - 3)
    assert str(len(raw)) in str(info.value)


def test_truncated_header(path):
    _write(path, b"SEWF\x01")
    with pytest.raises(TruncationError) as info:
        load_frames(path)
    assert info.value.field == "header" and info.value.expected == 30


def test_bad_magic(path):
    raw = _raw(path)
    raw[:4] = b"NOPE"
    _write(path, raw)
    with pytest.raises(MagicError):
        load_frames(path)


def test_bad_version(path):
    raw = _raw(path)
    raw[4:6] = struct.pack("<H", 7)
    _write(path, raw)
    with pytest.raises(VersionError, match="7"):
        load_frames(path)


def test_label_out_of_range(path):
    raw = _raw(path)
    raw[-4:] = struct.pack("<I", 3)
    _write(path, raw)
    with pytest.raises(LabelError) as info:
        load_frames(path)
    assert info.value.field == "label" and "sample 5" in str(info.value)


def test_trailing_bytes(path):
    _write(path, bytes(_raw(path)) + b"\x00")
    with pytest.raises(DatasetError, match="trailing"):
        load_frames(path)


def test_missing_file_is_oserror(tmp_path):
    with pytest.raises(OSError):
        load_frames(os.fspath(tmp_path / "absent.sewf"))


def test_dataset_validation():
    with pytest.raises(DatasetError):
        FrameDataset(np.zeros((2, 3)), np.zeros(2, np.int64), 2)
    with pytest.raises(LabelError):
        FrameDataset(np.zeros((1, 1, 1, 1, 1)), np.array([2]), 2)


# --- synthetic generators --------------------------------------------------


@pytest.mark.parametrize("kind", ["moving-bar", "temporal-pattern", "static-blobs"])
def test_generators_are_deterministic(kind):
    spec = SyntheticSpec(kind, samples=20, num_classes=3, T=4, size=6, noise=0.1, seed=3)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert a.x.tobytes() == b.x.tobytes() and np.array_equal(a.y, b.y)
    assert a.x.dtype == np.float32 and a.x.shape[:2] == (20, 4)


def test_different_seeds_differ():
    a = generate_synthetic(SyntheticSpec(seed=0, samples=10))
    b = generate_synthetic(SyntheticSpec(seed=1, samples=10))
    assert a.x.tobytes() != b.x.tobytes()


@pytest.mark.parametrize(
    "kw",
    [
        {"kind": "noise"},
        {"noise": 1.5},
        {"num_classes": 1},
        {"T": 0},
    ],
)
def test_synthetic_spec_validation(kw):
    with pytest.raises(DatasetError):
        SyntheticSpec(**kw)


def test_generator_class_limits():
    with pytest.raises(DatasetError):
        generate_synthetic(SyntheticSpec("moving-bar", num_classes=5))
    with pytest.raises(DatasetError):
        generate_synthetic(SyntheticSpec("temporal-pattern", T=2, num_classes=3))


def test_moving_bar_is_binary_two_channel():
    d = generate_synthetic(SyntheticSpec("moving-bar", samples=12, noise=0.2))
    assert d.frame_shape == (2, 8, 8)
    assert set(np.unique(d.x)) <= {0.0, 1.0}


def test_temporal_pattern_needs_order():
    """Without noise every class has identical time-averaged frames, so T=1 is at chance."""
    d = generate_synthetic(SyntheticSpec("temporal-pattern", samples=60, num_classes=4, T=4, size=6))
    flat = d.time_averaged().x.reshape(len(d), -1)
    assert np.all(flat == flat[0])
    assert len(np.unique(d.y)) == 4
    # the raw sequences do differ by class
    assert len({d.x[i].tobytes() for i in range(len(d))}) == 4


def test_static_blobs_separable_after_time_average():
    spec = SyntheticSpec("static-blobs", samples=200, num_classes=4, T=3, size=8, noise=0.05)
    d = generate_synthetic(spec)
    avg = d.time_averaged()
    assert np.allclose(avg.x[:, 0], d.x[:, 0])
    feats = np.hstack([avg.x.reshape(len(d), -1), np.ones((len(d), 1))])
    w, *_ = np.linalg.lstsq(feats, np.eye(4)[d.y], rcond=None)
    assert np.mean((feats @ w).argmax(axis=1) == d.y) > 0.95


def test_train_test_split_partitions():
    d = generate_synthetic(SyntheticSpec(samples=40))
    tr, te = train_test_split(d, 0.25, seed=1)
    assert (len(tr), len(te)) == (30, 10)
    rows = {r.tobytes() + bytes([y]) for r, y in zip(d.x, d.y)}
    assert {r.tobytes() + bytes([y]) for r, y in zip(np.concatenate([tr.x, te.x]), np.concatenate([tr.y, te.y]))} <= rows
