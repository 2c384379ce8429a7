"""Zero-mean synthetic datasets whose classes differ only in covariance.

Class ``c`` draws each feature vector from ``N(0, Q_c D Q_c^T)`` with a
class-specific random rotation ``Q_c`` and a shared log-spaced spectrum
``D``, so the mean carries no class information at all.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import DatasetManifest, ManifestEntry, write_feature_file, write_manifest
from .optim import random_stiefel
from .rng import make_rng
from .training import Sample


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 3
    dim: int = 16
    samples_per_class: int = 100
    frames: int = 64
    seed: int = 0
    spectrum_max: float = 1.0
    spectrum_min: float = 1e-2
    kind: str = "temporal"

    def __post_init__(self):
        if min(self.classes, self.dim, self.samples_per_class, self.frames) < 1:
            raise ValueError("classes, dim, samples_per_class and frames must all be positive")
        if not 0 < self.spectrum_min <= self.spectrum_max:
            raise ValueError("need 0 < spectrum_min <= spectrum_max")
        if self.kind not in ("temporal", "spatial"):
            raise ValueError(f"kind must be 'temporal' or 'spatial', got {self.kind!r}")

    @property
    def val_per_class(self) -> int:
        return self.samples_per_class // 5

    @property
    def train_per_class(self) -> int:
        return self.samples_per_class - self.val_per_class

    def spectrum(self) -> np.ndarray:
        return np.logspace(np.log10(self.spectrum_max), np.log10(self.spectrum_min), self.dim)

    def map_shape(self) -> tuple[int, int]:
        """(h, w) with h * w == frames and h the largest divisor <= sqrt(frames)."""
        h = max(k for k in range(1, int(np.sqrt(self.frames)) + 1) if self.frames % k == 0)
        return h, self.frames // h


def _rotations(spec: SyntheticSpec, rng: np.random.Generator) -> list[np.ndarray]:
    return [random_stiefel(spec.dim, spec.dim, rng) for _ in range(spec.classes)]


def class_covariances(spec: SyntheticSpec) -> list[np.ndarray]:
    """The population covariance of each class."""
    d = spec.spectrum()
    return [(q * d) @ q.T for q in _rotations(spec, make_rng(spec.seed))]


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[Sample], list[Sample]]:
    """Return ``(train, val)`` sample lists, split 80/20 within each class."""
    rng = make_rng(spec.seed)
    scale = np.sqrt(spec.spectrum())
    # rotations are drawn first so class_covariances() can replay them
    rotations = _rotations(spec, rng)
    train, val = [], []
    for c, q in enumerate(rotations):
        mix = q * scale
        for i in range(spec.samples_per_class):
            x = rng.standard_normal((spec.frames, spec.dim)) @ mix.T
            if spec.kind == "spatial":
                x = x.reshape(*spec.map_shape(), spec.dim)
            (train if i < spec.train_per_class else val).append(Sample(x, c))
    return train, val


def write_synthetic(spec: SyntheticSpec, out_dir, width: int = 8) -> tuple[Path, Path]:
    """Write feature files plus ``train.tsv`` and ``val.tsv``; return the manifest paths."""
    out_dir = Path(out_dir)
    train, val = generate_synthetic(spec)
    paths = []
    for split, samples in (("train", train), ("val", val)):
        (out_dir / split).mkdir(parents=True, exist_ok=True)
        manifest = DatasetManifest(classes=spec.classes, split=split)
        counts = [0] * spec.classes
        for s in samples:
            rel = f"{split}/c{s.label}_{counts[s.label]:05d}.spdf"
            counts[s.label] += 1
            write_feature_file(out_dir / rel, s.data, label=s.label, width=width)
            manifest.entries.append(ManifestEntry(rel, s.label))
        path = out_dir / f"{split}.tsv"
        write_manifest(path, manifest)
        paths.append(path)
    return paths[0], paths[1]
