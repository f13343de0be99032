"""Synthetic object-centric tiles and the fixed concept bank.

Each class owns one texture: a base colour plus an oriented sinusoid. The
texture depends only on ``(corpus seed, class)``; a tile's own seed only
drives its pixel noise. Every patch of a tile carries the tile's class.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GenerationError, ParameterError

MAX_CONCEPT_ATTEMPTS = 10_000
MAX_CONCEPT_COSINE = 0.5


@dataclass(frozen=True)
class CorpusConfig:
    num_classes: int = 16
    samples_per_class: int = 256
    noise_std: float = 0.05
    seed: int = 0
    image_side: int = 32
    patch_size: int = 8

    def __post_init__(self):
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be >= 1")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")

    @property
    def patches_per_tile(self) -> int:
        return (self.image_side // self.patch_size) ** 2


@dataclass
class ConceptBank:
    vectors: np.ndarray  # (num_classes, d), unit rows

    @property
    def num_classes(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class TileSample:
    image: np.ndarray  # (3, side, side)
    class_id: int
    patch_labels: np.ndarray  # (n,), all equal to class_id


def derive_seed(*keys: int) -> int:
    """Stable 64-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint64)[0])


def gen_concepts(num_classes: int, d: int, seed: int) -> ConceptBank:
    """Unit concept vectors with pairwise cosine <= 0.5.

    Orthonormal (QR of a Gaussian matrix) when ``num_classes <= d``, otherwise
    rejection sampling with a bounded number of draws.
    """
    if num_classes < 2:
        raise ParameterError("need at least 2 classes")
    rng = np.random.default_rng(derive_seed(seed, 0xC0C))
    if num_classes <= d:
        q, r = np.linalg.qr(rng.normal(size=(d, num_classes)))
        vectors = (q * np.sign(np.diag(r))).T
        vectors = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
        return ConceptBank(np.ascontiguousarray(vectors))
    rows = []
    attempts = 0
    while len(rows) < num_classes:
        attempts += 1
        if attempts > MAX_CONCEPT_ATTEMPTS:
            raise GenerationError(
                f"could not place {num_classes} concepts in {d} dims with cosine <= {MAX_CONCEPT_COSINE}"
            )
        v = rng.normal(size=d)
        v /= np.linalg.norm(v)
        if all(float(v @ u) <= MAX_CONCEPT_COSINE for u in rows):
            rows.append(v)
    return ConceptBank(np.stack(rows))


def class_texture(class_id: int, config: CorpusConfig) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(config.seed, 0x7E7, class_id))
    side = config.image_side
    base = rng.uniform(0.15, 0.85, size=3)
    freq = rng.uniform(0.5, 3.0)
    angle = rng.uniform(0.0, math.pi)
    phase = rng.uniform(0.0, 2 * math.pi, size=3)
    amp = rng.uniform(0.1, 0.3, size=3)
    yy, xx = np.mgrid[0:side, 0:side] / side
    wave = 2 * math.pi * freq * (xx * math.cos(angle) + yy * math.sin(angle))
    return base[:, None, None] + amp[:, None, None] * np.sin(wave[None] + phase[:, None, None])


def gen_tile(class_id: int, config: CorpusConfig, seed: int) -> TileSample:
    if not 0 <= class_id < config.num_classes:
        raise ParameterError(f"class_id {class_id} outside [0, {config.num_classes})")
    image = class_texture(class_id, config)
    if config.noise_std > 0:
        image = image + np.random.default_rng(seed).normal(0.0, config.noise_std, size=image.shape)
    return TileSample(image, class_id, np.full(config.patches_per_tile, class_id, dtype=np.int64))


def sample_seed(config: CorpusConfig, class_id: int, index: int, split: int = 0) -> int:
    return derive_seed(config.seed, class_id, index, split)


def gen_corpus(config: CorpusConfig, split: int = 0) -> list[TileSample]:
    """Class-balanced tiles ordered by (class, index). ``split`` selects an independent noise stream."""
    return [
        gen_tile(c, config, sample_seed(config, c, i, split))
        for c in range(config.num_classes)
        for i in range(config.samples_per_class)
    ]


def corpus_arrays(corpus):
    return np.stack([t.image for t in corpus]), np.array([t.class_id for t in corpus], dtype=np.int64)


def export_corpus(corpus, directory) -> str:
    """Write raw little-endian f64 tiles plus ``manifest.txt`` lines ``<filename> <class_id>``."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for i, tile in enumerate(corpus):
        name = f"tile_{i:06d}.f64"
        np.ascontiguousarray(tile.image, dtype="<f8").tofile(os.path.join(directory, name))
        lines.append(f"{name} {tile.class_id}")
    manifest = os.path.join(directory, "manifest.txt")
    with open(manifest, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


def load_exported_corpus(directory, image_side=32, patch_size=8) -> list[TileSample]:
    n = (image_side // patch_size) ** 2
    out = []
    with open(os.path.join(directory, "manifest.txt")) as fh:
        for line in fh:
            if not line.strip():
                continue
            name, cid = line.split()
            image = np.fromfile(os.path.join(directory, name), dtype="<f8").reshape(3, image_side, image_side)
            out.append(TileSample(image, int(cid), np.full(n, int(cid), dtype=np.int64)))
    return out
