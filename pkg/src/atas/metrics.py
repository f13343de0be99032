"""Semantic-coherence AUROC, patch-level alignment accuracy, patch similarity maps."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateInputError, MetricUndefinedError, ParameterError, ShapeError

DEFAULT_NUM_PAIRS = 20_000


@dataclass
class EvalReport:
    coherence_auroc: float
    alignment_accuracy: float
    per_class_accuracy: list = field(default_factory=list)
    num_pairs_evaluated: int = 0
    seed: int = 0
    cls_accuracy: float = float("nan")

    def csv_row(self, run_id, step):
        return [run_id, step, f"{self.coherence_auroc:.10f}", f"{self.alignment_accuracy:.10f}"] + [
            f"{a:.10f}" for a in self.per_class_accuracy
        ]


def _unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if (norms == 0).any():
        raise DegenerateInputError("zero-norm embedding")
    return x / norms


def auroc(scores, positive) -> float:
    """Rank-statistic AUROC; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUROC needs at least one positive and one negative pair")
    ranks = rankdata(scores, method="average")
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def sample_pairs(n: int, num_pairs: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Unordered index pairs i < j, uniform without replacement (all pairs if fewer exist)."""
    iu, ju = np.triu_indices(n, k=1)
    if num_pairs >= iu.size:
        return iu, ju
    pick = np.sort(np.random.default_rng(seed).choice(iu.size, size=num_pairs, replace=False))
    return iu[pick], ju[pick]


def pair_scores(patches, labels, num_pairs=DEFAULT_NUM_PAIRS, seed=0):
    """Cosine scores and same-label flags for sampled within-image patch pairs."""
    patches = np.asarray(patches.data if hasattr(patches, "data") else patches, dtype=np.float64)
    labels = np.asarray(labels)
    if patches.ndim != 2 or patches.shape[0] != labels.shape[0]:
        raise ShapeError(f"patches {patches.shape} vs labels {labels.shape}")
    if patches.shape[0] < 2:
        raise MetricUndefinedError("need at least 2 patches")
    unit = _unit_rows(patches)
    i, j = sample_pairs(patches.shape[0], num_pairs, seed)
    return np.einsum("kd,kd->k", unit[i], unit[j]), labels[i] == labels[j]


def coherence_auroc(patches, labels, num_pairs=DEFAULT_NUM_PAIRS, seed=0) -> float:
    scores, same = pair_scores(patches, labels, num_pairs, seed)
    return auroc(scores, same)


def pooled_coherence_auroc(patch_sets, label_sets, num_pairs=DEFAULT_NUM_PAIRS, seed=0):
    """Pool within-image pair scores over several images, then one AUROC. Returns (auroc, pairs)."""
    scores, same = [], []
    for k, (p, l) in enumerate(zip(patch_sets, label_sets)):
        s, y = pair_scores(p, l, num_pairs, seed + k)
        scores.append(s)
        same.append(y)
    scores, same = np.concatenate(scores), np.concatenate(same)
    return auroc(scores, same), int(scores.size)


def classify(patches, bank) -> np.ndarray:
    """Nearest concept by cosine; ties go to the lowest class index."""
    vectors = bank.vectors if hasattr(bank, "vectors") else np.asarray(bank)
    sims = _unit_rows(patches) @ _unit_rows(vectors).T
    return np.argmax(sims, axis=-1)


def alignment_accuracy(patches, labels, bank) -> float:
    patches = np.asarray(patches.data if hasattr(patches, "data") else patches, dtype=np.float64)
    labels = np.asarray(labels)
    vectors = bank.vectors if hasattr(bank, "vectors") else np.asarray(bank)
    if labels.size and (labels.min() < 0 or labels.max() >= vectors.shape[0]):
        raise ParameterError(f"labels must lie in [0, {vectors.shape[0]})")
    return float((classify(patches.reshape(-1, patches.shape[-1]), vectors) == labels.reshape(-1)).mean())


def per_class_accuracy(patches, labels, bank) -> list:
    vectors = bank.vectors if hasattr(bank, "vectors") else np.asarray(bank)
    labels = np.asarray(labels).reshape(-1)
    pred = classify(np.asarray(patches).reshape(-1, vectors.shape[1]), vectors)
    out = []
    for c in range(vectors.shape[0]):
        mask = labels == c
        out.append(float((pred[mask] == c).mean()) if mask.any() else float("nan"))
    return out


def similarity_map(patches, anchor_index: int) -> np.ndarray:
    """Cosine similarity of every patch to the anchor patch, laid out on the patch grid."""
    patches = np.asarray(patches.data if hasattr(patches, "data") else patches, dtype=np.float64)
    n = patches.shape[0]
    side = math.isqrt(n)
    if side * side != n:
        raise ShapeError(f"{n} patches do not form a square grid")
    if not 0 <= anchor_index < n:
        raise ParameterError(f"anchor index {anchor_index} outside [0, {n})")
    unit = _unit_rows(patches)
    sims = unit @ unit[anchor_index]
    sims[anchor_index] = 1.0
    return sims.reshape(side, side)


def write_map(sim_map, stem) -> tuple[str, str]:
    """Write ``<stem>.txt`` (numeric matrix) and ``<stem>.pgm`` (8-bit, [-1, 1] -> [0, 255])."""
    os.makedirs(os.path.dirname(stem) or ".", exist_ok=True)
    txt, pgm = stem + ".txt", stem + ".pgm"
    np.savetxt(txt, sim_map, fmt="%.8f")
    pixels = np.clip(np.rint((np.clip(sim_map, -1.0, 1.0) + 1.0) * 127.5), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(pgm, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(pixels.tobytes())
    return txt, pgm


def append_report(path, run_id, step, report: EvalReport):
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            header = ["run_id", "step", "coherence_auroc", "alignment_accuracy"]
            writer.writerow(header + [f"class_{c}" for c in range(len(report.per_class_accuracy))])
        writer.writerow(report.csv_row(run_id, step))
