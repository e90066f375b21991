"""Checkpoint format round trips and corruption handling."""

import os
import struct

import numpy as np
import pytest

from freqdistill.autodiff import Parameter
from freqdistill.checkpoint import load_checkpoint, restore_into, save_checkpoint
from freqdistill.errors import CheckpointFormatError


def make_params(seed=0):
    rng = np.random.default_rng(seed)
    shapes = {
        "enc.w": (4, 3, 3, 3),
        "enc.b": (1, 4, 1, 1),
        "head": (1, 1, 1, 1),
        "wide": (2, 7, 5, 6),
    }
    return {
        name: Parameter(rng.standard_normal(shape).astype(np.float32))
        for name, shape in shapes.items()
    }


def test_round_trip_bit_exact(tmp_path):
    params = make_params()
    path = tmp_path / "model.dfck"
    save_checkpoint(path, params)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(params)  # insertion order preserved
    for name, param in params.items():
        assert loaded[name].dtype == np.float32
        np.testing.assert_array_equal(loaded[name], param.value.data)
        assert loaded[name].tobytes() == param.value.data.tobytes()


def test_round_trip_preserves_denormals_and_extremes(tmp_path):
    vals = np.asarray(
        [0.0, -0.0, 1e-45, np.float32(3.4028235e38), -1.1754944e-38],
        dtype=np.float32,
    ).reshape(1, 1, 1, 5)
    params = {"edge": Parameter(vals)}
    path = tmp_path / "edge.dfck"
    save_checkpoint(path, params)
    out = load_checkpoint(path)["edge"]
    assert out.tobytes() == vals.tobytes()


def test_save_leaves_no_temp_files(tmp_path):
    save_checkpoint(tmp_path / "a.dfck", make_params())
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a.dfck"]


def test_overwrite_is_atomic_replacement(tmp_path):
    path = tmp_path / "m.dfck"
    first = make_params(seed=1)
    second = make_params(seed=2)
    save_checkpoint(path, first)
    save_checkpoint(path, second)
    loaded = load_checkpoint(path)
    np.testing.assert_array_equal(loaded["enc.w"], second["enc.w"].value.data)


def test_missing_file_raises_format_error(tmp_path):
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "nope.dfck")


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "bad.dfck"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointFormatError, match="magic"):
        load_checkpoint(path)
    path.write_bytes(b"DFCK" + struct.pack("<I", 99) + struct.pack("<I", 0))
    with pytest.raises(CheckpointFormatError, match="version"):
        load_checkpoint(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "t.dfck"
    save_checkpoint(path, make_params())
    blob = path.read_bytes() + b"\x00\x00"
    path.write_bytes(blob)
    with pytest.raises(CheckpointFormatError, match="trailing"):
        load_checkpoint(path)


def test_every_strict_prefix_is_rejected(tmp_path):
    path = tmp_path / "p.dfck"
    save_checkpoint(path, {"w": Parameter(np.ones((1, 2, 2, 2), dtype=np.float32))})
    blob = path.read_bytes()
    cut = tmp_path / "cut.dfck"
    for n in range(len(blob)):
        cut.write_bytes(blob[:n])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(cut)


def test_non_finite_payload_rejected(tmp_path):
    path = tmp_path / "nan.dfck"
    p = Parameter(np.ones((1, 1, 1, 2), dtype=np.float32))
    save_checkpoint(path, {"w": p})
    blob = bytearray(path.read_bytes())
    blob[-4:] = struct.pack("<f", np.nan)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointFormatError, match="non-finite"):
        load_checkpoint(path)


def test_duplicate_names_rejected(tmp_path):
    # hand-build a file with the same entry twice
    entry = (
        struct.pack("<I", 1)
        + b"w"
        + struct.pack("<IIII", 1, 1, 1, 1)
        + struct.pack("<f", 1.0)
    )
    blob = b"DFCK" + struct.pack("<II", 1, 2) + entry + entry
    path = tmp_path / "dup.dfck"
    path.write_bytes(blob)
    with pytest.raises(CheckpointFormatError, match="duplicate"):
        load_checkpoint(path)


def test_corruption_fuzz_never_crashes(tmp_path):
    path = tmp_path / "fuzz.dfck"
    save_checkpoint(path, make_params(seed=3))
    blob = path.read_bytes()
    target = tmp_path / "mut.dfck"
    rng = np.random.default_rng(2024)
    for trial in range(300):
        mutated = bytearray(blob)
        kind = trial % 3
        if kind == 0:
            mutated = mutated[: rng.integers(0, len(blob))]
        elif kind == 1:
            pos = int(rng.integers(0, len(blob)))
            mutated[pos] ^= int(rng.integers(1, 256))
        else:
            pos = int(rng.integers(0, len(blob) + 1))
            junk = bytes(rng.integers(0, 256, size=int(rng.integers(1, 9)), dtype=np.uint8))
            mutated = mutated[:pos] + junk + mutated[pos:]
        target.write_bytes(bytes(mutated))
        try:
            out = load_checkpoint(target)
        except CheckpointFormatError:
            continue
        # a payload bit flip can still parse; the result must stay well-formed
        assert set(out) == {"enc.w", "enc.b", "head", "wide"}
        for arr in out.values():
            assert np.all(np.isfinite(arr))


def test_restore_into_round_trip(tmp_path):
    src = make_params(seed=5)
    path = tmp_path / "src.dfck"
    save_checkpoint(path, src)
    dst = make_params(seed=6)
    restore_into(dst, load_checkpoint(path))
    for name in src:
        np.testing.assert_array_equal(dst[name].value.data, src[name].value.data)


def test_restore_into_name_mismatch(tmp_path):
    src = make_params()
    path = tmp_path / "s.dfck"
    save_checkpoint(path, src)
    loaded = load_checkpoint(path)
    smaller = {k: v for k, v in make_params().items() if k != "wide"}
    with pytest.raises(CheckpointFormatError, match="mismatch"):
        restore_into(smaller, loaded)
    bigger = make_params()
    bigger["extra"] = Parameter(np.zeros((1, 1, 1, 1), dtype=np.float32))
    with pytest.raises(CheckpointFormatError, match="mismatch"):
        restore_into(bigger, loaded)


def test_restore_into_shape_mismatch(tmp_path):
    src = {"w": Parameter(np.ones((1, 2, 3, 3), dtype=np.float32))}
    path = tmp_path / "s.dfck"
    save_checkpoint(path, src)
    dst = {"w": Parameter(np.ones((1, 2, 3, 4), dtype=np.float32))}
    with pytest.raises(CheckpointFormatError, match="shape"):
        restore_into(dst, load_checkpoint(path))


def test_unicode_parameter_names(tmp_path):
    params = {"enc/α.w": Parameter(np.ones((1, 1, 1, 1), dtype=np.float32))}
    path = tmp_path / "u.dfck"
    save_checkpoint(path, params)
    assert list(load_checkpoint(path)) == ["enc/α.w"]
