"""Global-to-local, local-to-local and global-to-global self-distillation losses.

Notation follows the training loop: a batch holds N mosaics, each made of K
tiles and n patches. Teacher tensors are constants; only student tensors
carry gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError, ShapeError
from .numerics import Tensor

GLD_OBJECTIVES = ("contrastive", "cosine")
GLD_ANCHORS = ("tile", "mosaic")


@dataclass(frozen=True)
class DistillConfig:
    lambda_gld: float = 1.0
    lambda_lld: float = 0.01
    lambda_ggd: float = 1.0
    tau: float = 1.0
    symmetric_contrastive: bool = False
    gld_objective: str = "contrastive"
    gld_weighted: bool = True
    gld_anchor: str = "tile"

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if min(self.lambda_gld, self.lambda_lld, self.lambda_ggd) < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.gld_objective not in GLD_OBJECTIVES:
            raise ConfigError(f"gld_objective must be one of {GLD_OBJECTIVES}")
        if self.gld_anchor not in GLD_ANCHORS:
            raise ConfigError(f"gld_anchor must be one of {GLD_ANCHORS}")


@dataclass
class BatchViews:
    student_patches: Tensor  # (N, n, d)
    student_cls: Tensor  # (N, d), student on the mosaic
    teacher_patches: Tensor  # (N, n, d), teacher on the same mosaic
    teacher_cls: Tensor  # (N, d), teacher on the mosaic
    teacher_tile_cls: Tensor  # (N, K, d), teacher on each source tile
    tile_patch_map: np.ndarray  # (K, n // K)

    def __post_init__(self):
        for name in ("teacher_patches", "teacher_cls", "teacher_tile_cls"):
            t = nx.as_tensor(getattr(self, name))
            if t.requires_grad:
                raise ContractError(f"{name} must not carry gradients")
            setattr(self, name, t)
        self.tile_patch_map = np.asarray(self.tile_patch_map, dtype=np.intp)
        n_, n, d = self.student_patches.shape
        k = self.tile_patch_map.shape[0]
        if self.teacher_patches.shape != (n_, n, d):
            raise ShapeError(f"student patches {self.student_patches.shape} vs teacher patches {self.teacher_patches.shape}")
        if self.student_cls.shape != (n_, d) or self.teacher_cls.shape != (n_, d):
            raise ShapeError(f"cls shapes {self.student_cls.shape} / {self.teacher_cls.shape}, expected {(n_, d)}")
        if self.teacher_tile_cls.shape != (n_, k, d):
            raise ShapeError(f"teacher tile cls {self.teacher_tile_cls.shape}, expected {(n_, k, d)}")
        if self.tile_patch_map.size != n:
            raise ShapeError(f"tile_patch_map covers {self.tile_patch_map.size} patches, mosaic has {n}")

    @property
    def num_anchors(self) -> int:
        return self.student_patches.shape[0] * self.tile_patch_map.shape[0]


@dataclass
class LossBreakdown:
    gld: float
    lld: float
    ggd: float
    total: float
    objective: Tensor  # differentiable total
    aggregated_locals: np.ndarray  # (N*K, d) or (N, d) for mosaic anchors

    def as_row(self):
        return {"gld": self.gld, "lld": self.lld, "ggd": self.ggd, "total": self.total}


def weighted_pool(student_patches, teacher_cls, tau: float, weighted: bool = True) -> Tensor:
    """Softmax(cos(patch, teacher cls) / tau)-weighted sum of patches.

    Works on (m, d) patches with a (d,) target, or batched (..., m, d) with (..., d).
    ``weighted=False`` gives the plain patch mean.
    """
    patches = nx.as_tensor(student_patches)
    cls = nx.as_tensor(teacher_cls)
    if patches.ndim < 2 or patches.shape[-2] < 1:
        raise ShapeError(f"weighted_pool: need (..., m>=1, d) patches, got {patches.shape}")
    if cls.shape != patches.shape[:-2] + patches.shape[-1:]:
        raise ShapeError(f"weighted_pool: patches {patches.shape} vs target {cls.shape}")
    if not weighted:
        return patches.mean(axis=-2)
    lead, m, d = patches.shape[:-2], patches.shape[-2], patches.shape[-1]
    sims = nx.l2_normalize(patches) @ nx.l2_normalize(cls).reshape(*lead, d, 1)  # (..., m, 1)
    weights = nx.softmax(sims.reshape(*lead, 1, m), temperature=tau)  # (..., 1, m)
    return (weights @ patches).reshape(*lead, d)


def contrastive(anchors, targets, tau: float, symmetric: bool = False) -> Tensor:
    """Mean over rows of -log softmax_j(cos(anchor_i, target_j) / tau)[i]."""
    anchors, targets = nx.as_tensor(anchors), nx.as_tensor(targets)
    if anchors.ndim != 2 or anchors.shape != targets.shape:
        raise ShapeError(f"contrastive: anchors {anchors.shape} vs targets {targets.shape}")
    m = anchors.shape[0]
    diag = (np.arange(m), np.arange(m))
    logits = nx.pairwise_cosine(anchors, targets) / tau
    loss = -(nx.log_softmax(logits)[diag].mean())
    if symmetric:
        loss = 0.5 * (loss - nx.log_softmax(logits.T)[diag].mean())
    return loss


def _gld(views: BatchViews, config: DistillConfig):
    if config.gld_anchor == "tile":
        grouped = nx.take(views.student_patches, views.tile_patch_map, axis=1)  # (N, K, m, d)
        pooled = weighted_pool(grouped, views.teacher_tile_cls, config.tau, config.gld_weighted)
        d = pooled.shape[-1]
        anchors = pooled.reshape(-1, d)
        targets = views.teacher_tile_cls.reshape(-1, d)
    else:
        anchors = weighted_pool(views.student_patches, views.teacher_cls, config.tau, config.gld_weighted)
        targets = views.teacher_cls
    if config.gld_objective == "cosine":
        cos = (nx.l2_normalize(anchors) * nx.l2_normalize(targets)).sum(axis=-1)
        loss = 1.0 - cos.mean()
    else:
        loss = contrastive(anchors, targets, config.tau, config.symmetric_contrastive)
    return loss, anchors


def gld_loss(views: BatchViews, config: DistillConfig = DistillConfig()) -> Tensor:
    return _gld(views, config)[0]


def lld_loss(student_patches, teacher_patches) -> Tensor:
    """Mean squared gap between student and teacher patch cosine-similarity matrices."""
    s = nx.as_tensor(student_patches)
    t = nx.as_tensor(teacher_patches).detach()
    if s.shape != t.shape or s.ndim < 2:
        raise ShapeError(f"lld_loss: student {s.shape} vs teacher {t.shape}")
    gap = nx.pairwise_cosine(s, s) - nx.pairwise_cosine(t, t)
    return (gap * gap).mean()


def ggd_loss(student_cls, teacher_cls, tau: float = 1.0, symmetric: bool = False) -> Tensor:
    return contrastive(student_cls, nx.as_tensor(teacher_cls).detach(), tau, symmetric)


def total_loss(views: BatchViews, config: DistillConfig = DistillConfig()) -> LossBreakdown:
    """Weighted sum of the three losses. Zero-weight terms are evaluated without a tape."""

    def run(weight, fn):
        if weight > 0:
            return fn()
        with nx.no_grad():
            return fn()

    gld, anchors = run(config.lambda_gld, lambda: _gld(views, config))
    lld = run(config.lambda_lld, lambda: lld_loss(views.student_patches, views.teacher_patches))
    ggd = run(
        config.lambda_ggd,
        lambda: ggd_loss(views.student_cls, views.teacher_cls, config.tau, config.symmetric_contrastive),
    )
    terms = [(w, v) for w, v in ((config.lambda_gld, gld), (config.lambda_lld, lld), (config.lambda_ggd, ggd)) if w > 0]
    objective = Tensor(0.0)
    for weight, value in terms:
        objective = objective + value * weight
    return LossBreakdown(
        gld=gld.item(),
        lld=lld.item(),
        ggd=ggd.item(),
        total=objective.item(),
        objective=objective,
        aggregated_locals=anchors.data,
    )
