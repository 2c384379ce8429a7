"""Binary feature files and tab-separated dataset manifests.

Feature file layout (all little-endian)::

    offset  size  field
    0       4     magic b"SPDF"
    4       2     u16 version (1)
    6       1     u8 kind: 0 = spatial map, 1 = temporal sequence
    7       1     u8 scalar width in bytes: 4 (float32) or 8 (float64)
    8       16    4 x u32 dims; spatial (w, h, d, 0), temporal (n, d, 0, 0)
    24      4     u32 label, 0xFFFFFFFF when unlabeled
    28      1     u8 failed flag
    29      ...   payload; spatial maps run rows, then columns, channels fastest

A pooled d x d descriptor is stored as a 1 x 1 spatial map with d*d channels
and the fourth dim set to d, i.e. dims ``(1, 1, d*d, d)``.

Manifest lines are ``path<TAB>label<TAB>failed_flag``.  Lines starting with
``#`` are comments, except ``# classes=K`` and ``# split=train|val`` which
set the manifest's metadata.  Relative paths resolve against the manifest's
directory.  A failed entry may use ``-`` as its path.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .training import Sample

MAGIC = b"SPDF"
VERSION = 1
HEADER = struct.Struct("<4sHBB4IIB")
KIND_SPATIAL = 0
KIND_TEMPORAL = 1
KIND_NAMES = {KIND_SPATIAL: "spatial-map", KIND_TEMPORAL: "temporal-sequence"}
UNLABELED = 0xFFFFFFFF
DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}
U32_MAX = 0xFFFFFFFF


class FeatureFileError(ValueError):
    pass


class BadMagicError(FeatureFileError):
    pass


class UnsupportedVersionError(FeatureFileError):
    pass


class TruncatedPayloadError(FeatureFileError):
    pass


class ManifestError(ValueError):
    pass


@dataclass
class FeatureRecord:
    data: np.ndarray
    kind: str
    label: int | None = None
    failed: bool = False
    width: int = 8
    descriptor_dim: int = 0

    @property
    def is_descriptor(self) -> bool:
        return self.descriptor_dim > 0

    def matrix(self) -> np.ndarray:
        if not self.is_descriptor:
            raise FeatureFileError("record is not a pooled descriptor")
        d = self.descriptor_dim
        return self.data.reshape(d, d)


def _encode(path, kind: int, dims: tuple, payload: np.ndarray, label, failed: bool, width: int) -> None:
    if width not in DTYPES:
        raise FeatureFileError(f"scalar width must be 4 or 8 bytes, got {width}")
    if any(not 0 <= int(v) <= U32_MAX for v in dims):
        raise FeatureFileError(f"dims {dims} do not fit in u32")
    if label is None:
        label = UNLABELED
    elif not 0 <= label < UNLABELED:
        raise FeatureFileError(f"label {label} cannot be encoded")
    header = HEADER.pack(MAGIC, VERSION, kind, width, *dims, label, int(bool(failed)))
    body = np.ascontiguousarray(payload, dtype=DTYPES[width]).tobytes()
    with open(path, "wb") as fh:
        fh.write(header + body)


def write_feature_file(path, data, label: int | None = None, failed: bool = False, width: int = 8) -> None:
    """Write a feature map ``(h, w, d)`` or a feature set ``(n, d)``."""
    data = np.asarray(data)
    if data.ndim == 3:
        h, w, d = data.shape
        _encode(path, KIND_SPATIAL, (w, h, d, 0), data, label, failed, width)
    elif data.ndim == 2:
        n, d = data.shape
        _encode(path, KIND_TEMPORAL, (n, d, 0, 0), data, label, failed, width)
    else:
        raise FeatureFileError(f"expected a 2-D or 3-D array, got shape {data.shape}")


def write_descriptor(path, matrix, label: int | None = None, failed: bool = False, width: int = 8) -> None:
    matrix = np.asarray(matrix)
    d = matrix.shape[0]
    if matrix.shape != (d, d):
        raise FeatureFileError(f"descriptor must be square, got {matrix.shape}")
    _encode(path, KIND_SPATIAL, (1, 1, d * d, d), matrix, label, failed, width)


def read_feature_file(path) -> FeatureRecord:
    """Read a feature file; 32-bit payloads are widened to float64."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic")
    if len(raw) < HEADER.size:
        raise TruncatedPayloadError(f"{path}: truncated header")
    _, version, kind, width, d0, d1, d2, d3, label, failed = HEADER.unpack_from(raw)
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unknown version {version}")
    if kind not in KIND_NAMES:
        raise FeatureFileError(f"{path}: unknown kind code {kind}")
    if width not in DTYPES:
        raise FeatureFileError(f"{path}: unknown scalar width {width}")
    if kind == KIND_SPATIAL:
        shape = (d1, d0, d2)
    else:
        shape = (d0, d1)
    expected = int(np.prod(shape)) * width
    payload = raw[HEADER.size:]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    if len(payload) > expected:
        raise FeatureFileError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    data = np.frombuffer(payload, dtype=DTYPES[width]).astype(np.float64).reshape(shape)
    descriptor_dim = d3 if kind == KIND_SPATIAL else 0
    if descriptor_dim and (d0, d1, d2) != (1, 1, descriptor_dim ** 2):
        raise FeatureFileError(f"{path}: inconsistent descriptor dims {(d0, d1, d2, d3)}")
    return FeatureRecord(
        data=data,
        kind=KIND_NAMES[kind],
        label=None if label == UNLABELED else label,
        failed=bool(failed),
        width=width,
        descriptor_dim=descriptor_dim,
    )


@dataclass
class ManifestEntry:
    path: str
    label: int
    failed: bool = False


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    classes: int | None = None
    split: str | None = None
    base_dir: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.base_dir / p


def write_manifest(path, manifest: DatasetManifest) -> None:
    lines = []
    if manifest.classes is not None:
        lines.append(f"# classes={manifest.classes}")
    if manifest.split is not None:
        lines.append(f"# split={manifest.split}")
    for e in manifest.entries:
        lines.append(f"{e.path}\t{e.label}\t{int(e.failed)}")
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    manifest = DatasetManifest(base_dir=path.parent)
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key == "classes":
                manifest.classes = int(value)
            elif key == "split":
                if value not in ("train", "val"):
                    raise ManifestError(f"{path}:{lineno}: split must be train or val, got {value!r}")
                manifest.split = value
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ManifestError(f"{path}:{lineno}: expected path<TAB>label<TAB>failed_flag")
        try:
            label, failed = int(parts[1]), int(parts[2])
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: label and failed_flag must be integers") from None
        if failed not in (0, 1):
            raise ManifestError(f"{path}:{lineno}: failed_flag must be 0 or 1")
        if label < 0 or (manifest.classes is not None and label >= manifest.classes):
            raise ManifestError(f"{path}:{lineno}: label {label} out of range")
        manifest.entries.append(ManifestEntry(parts[0], label, bool(failed)))
    return manifest


def load_samples(manifest: DatasetManifest) -> list[Sample]:
    """Read every file named by the manifest into :class:`Sample` objects."""
    samples = []
    for entry in manifest.entries:
        if entry.failed and entry.path == "-":
            samples.append(Sample(None, entry.label, failed=True))
            continue
        path = manifest.resolve(entry)
        if not path.exists():
            raise ManifestError(f"missing feature file {path}")
        rec = read_feature_file(path)
        failed = entry.failed or rec.failed
        if rec.is_descriptor:
            samples.append(Sample(rec.matrix(), entry.label, failed=failed, pooled=True))
        else:
            samples.append(Sample(rec.data, entry.label, failed=failed))
    return samples
