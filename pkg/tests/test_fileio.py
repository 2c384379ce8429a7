import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spdpool import fileio as F


def header_bytes(kind, width, dims, label, failed):
    """Hand-assembled header, independent of the module's Struct."""
    out = b"SPDF" + (1).to_bytes(2, "little") + bytes([kind, width])
    for v in dims:
        out += v.to_bytes(4, "little")
    return out + label.to_bytes(4, "little") + bytes([failed])


def test_single_value_byte_layout(tmp_path):
    path = tmp_path / "one.spdf"
    F.write_feature_file(path, np.full((1, 1, 1), 0.5), label=3)
    raw = path.read_bytes()
    assert raw[:29] == header_bytes(0, 8, (1, 1, 1, 0), 3, 0)
    assert raw[29:] == struct.pack("<d", 0.5)
    assert raw[29:] == bytes([0, 0, 0, 0, 0, 0, 0xE0, 0x3F])


def test_payload_size_at_32_bits(tmp_path):
    # header dims (w, h, d) = (2, 3, 4) means an array of shape (h, w, d)
    path = tmp_path / "m.spdf"
    F.write_feature_file(path, np.zeros((3, 2, 4)), width=4)
    raw = path.read_bytes()
    assert struct.unpack_from("<4I", raw, 8) == (2, 3, 4, 0)
    assert len(raw) - 29 == 96


def test_unlabeled_and_failed_header(tmp_path):
    path = tmp_path / "f.spdf"
    F.write_feature_file(path, np.zeros((2, 3)), failed=True)
    raw = path.read_bytes()
    assert raw[:29] == header_bytes(1, 8, (2, 3, 0, 0), 0xFFFFFFFF, 1)
    rec = F.read_feature_file(path)
    assert rec.label is None and rec.failed and rec.kind == "temporal-sequence"


@pytest.mark.parametrize("width", [4, 8])
@pytest.mark.parametrize("shape", [(5, 3), (2, 4, 3)])
def test_round_trip(tmp_path, width, shape):
    rng = np.random.default_rng(0)
    data = rng.standard_normal(shape)
    if width == 4:
        data = data.astype(np.float32).astype(np.float64)
    path = tmp_path / "x.spdf"
    F.write_feature_file(path, data, label=2, width=width)
    rec = F.read_feature_file(path)
    assert rec.data.dtype == np.float64
    assert np.array_equal(rec.data, data)
    assert (rec.label, rec.width, rec.failed) == (2, width, False)
    # writing the record back reproduces the file byte for byte
    again = tmp_path / "y.spdf"
    F.write_feature_file(again, rec.data, label=rec.label, width=rec.width)
    assert again.read_bytes() == path.read_bytes()


def test_spatial_payload_order(tmp_path):
    data = np.arange(2 * 3 * 2, dtype=float).reshape(2, 3, 2)
    path = tmp_path / "s.spdf"
    F.write_feature_file(path, data)
    payload = np.frombuffer(path.read_bytes()[29:], "<f8")
    for row in range(2):
        for col in range(3):
            for ch in range(2):
                assert payload[(row * 3 + col) * 2 + ch] == data[row, col, ch]


def test_descriptor_round_trip(tmp_path):
    m = np.array([[2.0, 0.5], [0.5, 1.0]])
    path = tmp_path / "d.spdf"
    F.write_descriptor(path, m, label=1)
    assert struct.unpack_from("<4I", path.read_bytes(), 8) == (1, 1, 4, 2)
    rec = F.read_feature_file(path)
    assert rec.is_descriptor
    assert np.array_equal(rec.matrix(), m)


def test_plain_map_is_not_descriptor(tmp_path):
    path = tmp_path / "m.spdf"
    F.write_feature_file(path, np.ones((1, 1, 4)))
    rec = F.read_feature_file(path)
    assert not rec.is_descriptor
    with pytest.raises(F.FeatureFileError):
        rec.matrix()


def test_descriptor_must_be_square(tmp_path):
    with pytest.raises(F.FeatureFileError):
        F.write_descriptor(tmp_path / "d.spdf", np.ones((2, 3)))


@pytest.fixture
def valid(tmp_path):
    path = tmp_path / "v.spdf"
    F.write_feature_file(path, np.ones((4, 2)), label=0)
    return path


def test_truncated_payload(valid):
    valid.write_bytes(valid.read_bytes()[:-3])
    with pytest.raises(F.TruncatedPayloadError, match="truncated payload"):
        F.read_feature_file(valid)


def test_truncated_header(valid):
    valid.write_bytes(valid.read_bytes()[:10])
    with pytest.raises(F.TruncatedPayloadError):
        F.read_feature_file(valid)


def test_bad_magic(valid):
    raw = bytearray(valid.read_bytes())
    raw[0:4] = b"SPDG"
    valid.write_bytes(bytes(raw))
    with pytest.raises(F.BadMagicError, match="bad magic"):
        F.read_feature_file(valid)


def test_unknown_version(valid):
    raw = bytearray(valid.read_bytes())
    raw[4:6] = (2).to_bytes(2, "little")
    valid.write_bytes(bytes(raw))
    with pytest.raises(F.UnsupportedVersionError, match="unknown version"):
        F.read_feature_file(valid)


def test_errors_are_distinct():
    kinds = {F.BadMagicError, F.UnsupportedVersionError, F.TruncatedPayloadError}
    assert len(kinds) == 3
    for a in kinds:
        for b in kinds - {a}:
            assert not issubclass(a, b)


def test_trailing_bytes(valid):
    valid.write_bytes(valid.read_bytes() + b"\0")
    with pytest.raises(F.FeatureFileError, match="trailing"):
        F.read_feature_file(valid)


def test_bad_width_and_kind(valid, tmp_path):
    raw = bytearray(valid.read_bytes())
    raw[7] = 2
    valid.write_bytes(bytes(raw))
    with pytest.raises(F.FeatureFileError, match="width"):
        F.read_feature_file(valid)
    with pytest.raises(F.FeatureFileError):
        F.write_feature_file(tmp_path / "w.spdf", np.ones((2, 2)), width=2)
    with pytest.raises(F.FeatureFileError):
        F.write_feature_file(tmp_path / "w.spdf", np.ones(3))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([4, 8]), st.one_of(
    arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)),
           elements=st.floats(allow_nan=False, allow_infinity=False, width=32)),
    arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)),
           elements=st.floats(allow_nan=False, allow_infinity=False, width=32)),
), st.one_of(st.none(), st.integers(0, 1000)), st.booleans())
def test_round_trip_property(tmp_path_factory, width, data, label, failed):
    path = tmp_path_factory.mktemp("rt") / "p.spdf"
    F.write_feature_file(path, data, label=label, failed=failed, width=width)
    rec = F.read_feature_file(path)
    assert rec.data.shape == data.shape
    # width-32 elements are exact in either width
    assert np.array_equal(rec.data, data)
    assert rec.label == label and rec.failed == failed


# --- manifests


def test_manifest_round_trip(tmp_path):
    m = F.DatasetManifest([F.ManifestEntry("a.spdf", 0), F.ManifestEntry("-", 2, True)], classes=3, split="val")
    path = tmp_path / "m.tsv"
    F.write_manifest(path, m)
    assert path.read_text() == "# classes=3\n# split=val\na.spdf\t0\t0\n-\t2\t1\n"
    back = F.read_manifest(path)
    assert back.entries == m.entries
    assert (back.classes, back.split, back.base_dir) == (3, "val", tmp_path)


def test_manifest_ignores_comments_and_blank_lines(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text("# a note\n\nx\t1\t0\n")
    m = F.read_manifest(path)
    assert len(m) == 1 and m.classes is None


@pytest.mark.parametrize("body, msg", [
    ("x\t1\n", ":1: expected"),
    ("# classes=2\nx\t2\t0\n", ":2: label 2 out of range"),
    ("x\tone\t0\n", "integers"),
    ("x\t1\t2\n", "failed_flag must be 0 or 1"),
    ("# split=test\n", "split"),
])
def test_manifest_errors_carry_line_numbers(tmp_path, body, msg):
    path = tmp_path / "m.tsv"
    path.write_text(body)
    with pytest.raises(F.ManifestError, match=msg):
        F.read_manifest(path)


def test_load_samples(tmp_path):
    (tmp_path / "sub").mkdir()
    F.write_feature_file(tmp_path / "sub" / "a.spdf", np.ones((3, 2)), label=1)
    F.write_descriptor(tmp_path / "b.spdf", np.eye(2))
    F.write_feature_file(tmp_path / "c.spdf", np.ones((3, 2)), failed=True)
    path = tmp_path / "m.tsv"
    path.write_text("sub/a.spdf\t1\t0\nb.spdf\t0\t0\nc.spdf\t0\t0\n-\t1\t1\n")
    s = F.load_samples(F.read_manifest(path))
    assert [x.label for x in s] == [1, 0, 0, 1]
    assert [x.pooled for x in s] == [False, True, False, False]
    assert [x.failed for x in s] == [False, False, True, True]
    assert s[3].data is None


def test_load_samples_missing_file(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text("nope.spdf\t0\t0\n")
    with pytest.raises(F.ManifestError, match="missing"):
        F.load_samples(F.read_manifest(path))
