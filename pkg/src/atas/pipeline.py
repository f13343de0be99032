"""Teacher pretraining, student distillation, evaluation, ablations.

Every random draw is keyed by ``derive_seed(run seed, purpose, step)``, so a
run is a pure function of its :class:`RunConfig` and a resumed run replays
the same batches as an unbroken one.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import numerics as nx
from .augment import sample_mosaic_batch
from .data import ConceptBank, CorpusConfig, corpus_arrays, derive_seed, gen_concepts, gen_corpus
from .distill import BatchViews, DistillConfig, total_loss
from .errors import CheckpointError, ConfigError, DivergenceError, NonFiniteLossError
from .metrics import EvalReport, alignment_accuracy, append_report, per_class_accuracy, pooled_coherence_auroc
from .model import (
    ModelConfig,
    ModelParams,
    encode_arrays,
    encode_batch,
    freeze,
    init_params,
    load_params,
    save_params,
)
from .optim import AdamW

log = logging.getLogger(__name__)

# purpose tags for derive_seed
_INIT, _PRETRAIN, _DISTILL, _EVAL, _CONCEPTS = 1, 2, 3, 4, 5

LOSS_COLUMNS = ("step", "gld", "lld", "ggd", "total")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    grid_side: int = 2
    batch_size: int = 4
    steps: int = 400
    learning_rate: float = 1e-4
    weight_decay: float = 0.05
    eval_every: int = 100
    seed: int = 0
    output_dir: str = ""
    # teacher pretraining
    pretrain_steps: int = 1500
    pretrain_batch_size: int = 64
    pretrain_learning_rate: float = 1e-3
    pretrain_tau: float = 0.1
    pretrain_eval_every: int = 50
    pretrain_target_accuracy: float = 0.95
    # evaluation
    heldout_per_class: int = 16
    eval_mosaics: int = 128
    eval_num_pairs: int = 20_000

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.grid_side < 1:
            raise ConfigError("grid_side must be >= 1")
        if self.model.image_side != self.corpus.image_side or self.model.patch_size != self.corpus.patch_size:
            raise ConfigError("model and corpus disagree on image_side / patch_size")

    def with_seed(self, seed: int) -> RunConfig:
        """Same config with both the run seed and the corpus seed set to ``seed``."""
        return replace(self, seed=seed, corpus=replace(self.corpus, seed=seed))

    # flat key=value form ----------------------------------------------------

    def to_flat(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                for g in fields(value):
                    out[f"{f.name}.{g.name}"] = getattr(value, g.name)
            else:
                out[f.name] = value
        return out

    @classmethod
    def from_flat(cls, entries: dict, base: RunConfig | None = None) -> RunConfig:
        base = base or cls()
        nested = {f.name: {} for f in fields(base) if dataclasses.is_dataclass(getattr(base, f.name))}
        top = {}
        known = base.to_flat()
        for key, raw in entries.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            value = _coerce(raw, known[key], key)
            head, _, tail = key.partition(".")
            if tail:
                nested[head][tail] = value
            else:
                top[key] = value
        for name, values in nested.items():
            top[name] = replace(getattr(base, name), **values)
        return replace(base, **top)


def _coerce(raw, like, key):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def read_config_file(path, base: RunConfig | None = None) -> RunConfig:
    entries = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            entries[key.strip()] = value
    return RunConfig.from_flat(entries, base)


def write_config_file(path, config: RunConfig) -> None:
    with open(path, "w") as fh:
        for key, value in config.to_flat().items():
            fh.write(f"{key}={str(value).lower() if isinstance(value, bool) else value}\n")


# --- shared setup -------------------------------------------------------------


@dataclass
class Testbed:
    """Everything derived from a config before any training: corpora, concepts, evaluation mosaics."""

    __test__ = False  # not a pytest class

    config: RunConfig
    corpus: list
    heldout: list
    bank: ConceptBank
    eval_mosaics: list

    @classmethod
    def build(cls, config: RunConfig) -> Testbed:
        corpus = gen_corpus(config.corpus)
        heldout = gen_corpus(replace(config.corpus, samples_per_class=config.heldout_per_class), split=1)
        bank = gen_concepts(config.corpus.num_classes, config.model.embed_dim, derive_seed(config.seed, _CONCEPTS))
        mosaics = sample_mosaic_batch(
            heldout, config.eval_mosaics, config.grid_side, derive_seed(config.seed, _EVAL), config.model.patch_size
        )
        return cls(config, corpus, heldout, bank, mosaics)


def cls_accuracy(params: ModelParams, tiles, bank: ConceptBank) -> float:
    images, labels = corpus_arrays(tiles)
    cls, _ = encode_arrays(images, params)
    return alignment_accuracy(cls, labels, bank)


def evaluate(params: ModelParams, testbed: Testbed, tile_accuracy: bool = True) -> EvalReport:
    """Coherence and alignment on the held-out mosaics (plus cls accuracy on held-out tiles)."""
    cfg = testbed.config
    images = np.stack([m.image for m in testbed.eval_mosaics])
    labels = np.stack([m.patch_labels() for m in testbed.eval_mosaics])
    _, patches = encode_arrays(images, params)
    seed = derive_seed(cfg.seed, _EVAL, 1)
    coherence, pairs = pooled_coherence_auroc(patches, labels, cfg.eval_num_pairs, seed)
    return EvalReport(
        coherence_auroc=coherence,
        alignment_accuracy=alignment_accuracy(patches, labels, testbed.bank),
        per_class_accuracy=per_class_accuracy(patches, labels, testbed.bank),
        num_pairs_evaluated=pairs,
        seed=seed,
        cls_accuracy=cls_accuracy(params, testbed.heldout, testbed.bank) if tile_accuracy else float("nan"),
    )


# --- teacher ------------------------------------------------------------------


def concept_contrastive_loss(cls: nx.Tensor, labels: np.ndarray, bank: ConceptBank, tau: float) -> nx.Tensor:
    logits = nx.pairwise_cosine(cls, nx.Tensor(bank.vectors)) / tau
    return -(nx.log_softmax(logits)[np.arange(labels.size), labels].mean())


def pretrain_teacher(corpus, bank: ConceptBank, config: RunConfig, heldout=None, trace=None) -> ModelParams:
    """Train a fresh encoder so tile class tokens match their class concept; patches get no signal.

    Stops once held-out tile accuracy reaches ``pretrain_target_accuracy`` or the
    step budget runs out. Returns frozen parameters.
    """
    if not corpus:
        raise ConfigError("cannot pretrain on an empty corpus")
    heldout = heldout if heldout is not None else corpus
    params = init_params(config.model, derive_seed(config.seed, _INIT))
    if config.pretrain_steps == 0:
        return freeze(params)
    images, labels = corpus_arrays(corpus)
    opt = AdamW(config.pretrain_learning_rate, weight_decay=config.weight_decay)
    losses = []
    accuracy = 0.0
    for step in range(1, config.pretrain_steps + 1):
        rng = np.random.default_rng(derive_seed(config.seed, _PRETRAIN, step))
        pick = rng.integers(0, len(corpus), size=config.pretrain_batch_size)
        out = encode_batch(images[pick], params)
        loss = concept_contrastive_loss(out.cls, labels[pick], bank, config.pretrain_tau)
        params.zero_grad()
        nx.backward(loss)
        opt.step(params)
        losses.append(loss.item())
        if not np.isfinite(losses[-1]):
            raise DivergenceError(f"pretraining loss became non-finite at step {step}", losses)
        if step % config.pretrain_eval_every == 0 or step == config.pretrain_steps:
            accuracy = cls_accuracy(params, heldout, bank)
            log.info("pretrain step %d loss %.4f heldout cls accuracy %.3f", step, losses[-1], accuracy)
            if trace is not None:
                trace.append((step, losses[-1], accuracy))
            if accuracy >= config.pretrain_target_accuracy:
                break
    if accuracy < 0.5:
        raise DivergenceError(
            f"teacher reached only {accuracy:.3f} held-out accuracy in {config.pretrain_steps} steps", losses
        )
    return freeze(params)


# --- student ------------------------------------------------------------------


@dataclass
class TrainState:
    params: ModelParams
    optimizer: AdamW
    step: int = 0
    loss_history: list = field(default_factory=list)  # (step, gld, lld, ggd, total)

    def save(self, path, config: RunConfig) -> None:
        extra = {"step": self.step, "optim.t": self.optimizer.t, "run.seed": config.seed}
        tensors = dict(self.optimizer.state_tensors())
        history = np.asarray(self.loss_history, dtype=np.float64).reshape(-1, len(LOSS_COLUMNS))
        tensors["train.loss_history"] = history
        save_params(path, self.params, extra, tensors)

    @classmethod
    def load(cls, path, config: RunConfig) -> TrainState:
        params, entries, tensors = load_params(path, trainable=True)
        if "step" not in entries:
            raise CheckpointError(f"{path} is not a training-state checkpoint")
        opt = AdamW(config.learning_rate, weight_decay=config.weight_decay)
        opt.load_state_tensors(tensors, entries["optim.t"])
        history = [tuple(row) for row in tensors["train.loss_history"].tolist()]
        history = [(int(r[0]),) + tuple(r[1:]) for r in history]
        return cls(params, opt, int(entries["step"]), history)


def teacher_tile_cls(teacher: ModelParams, corpus) -> np.ndarray:
    """Teacher class tokens of every corpus tile (the teacher is frozen, so compute once)."""
    images, _ = corpus_arrays(corpus)
    return encode_arrays(images, teacher)[0]


def batch_seed(config: RunConfig, step: int) -> int:
    return derive_seed(config.seed, _DISTILL, step)


def distill_step(state: TrainState, teacher: ModelParams, corpus, tile_cls: np.ndarray, config: RunConfig):
    step = state.step + 1
    seed = batch_seed(config, step)
    mosaics = sample_mosaic_batch(corpus, config.batch_size, config.grid_side, seed, config.model.patch_size)
    images = np.stack([m.image for m in mosaics])
    picks = np.stack([m.tile_indices for m in mosaics])
    with nx.no_grad():
        t_out = encode_batch(images, teacher, role="teacher")
    s_out = encode_batch(images, state.params, role="student")
    views = BatchViews(
        student_patches=s_out.patches,
        student_cls=s_out.cls,
        teacher_patches=t_out.patches,
        teacher_cls=t_out.cls,
        teacher_tile_cls=nx.Tensor(tile_cls[picks]),
        tile_patch_map=mosaics[0].tile_patch_map,
    )
    losses = total_loss(views, config.distill)
    if not all(np.isfinite(v) for v in (losses.gld, losses.lld, losses.ggd, losses.total)):
        raise NonFiniteLossError(f"non-finite loss at step {step} (batch seed {seed})", step=step, batch_seed=seed)
    state.params.zero_grad()
    nx.backward(losses.objective)
    state.optimizer.step(state.params)
    state.step = step
    state.loss_history.append((step, losses.gld, losses.lld, losses.ggd, losses.total))
    return losses


def _write_losses(path, rows, append):
    new = not append or not os.path.exists(path)
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(LOSS_COLUMNS)
        for row in rows:
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def distill_student(
    teacher: ModelParams,
    corpus,
    config: RunConfig,
    testbed: Testbed | None = None,
    state: TrainState | None = None,
    on_eval=None,
    run_id: str = "distill",
) -> TrainState:
    """Train a student copy of ``teacher`` on mosaics for ``config.steps`` total steps.

    Pass ``state`` to resume. Evaluation fires every ``eval_every`` steps when a
    testbed is supplied; with ``output_dir`` set, losses, metrics and student
    checkpoints are written there.
    """
    if not teacher.frozen:
        raise ConfigError("teacher parameters must be frozen")
    if state is None:
        state = TrainState(teacher.copy(trainable=True), AdamW(config.learning_rate, weight_decay=config.weight_decay))
    tile_cls = teacher_tile_cls(teacher, corpus)
    out = config.output_dir
    if out:
        os.makedirs(out, exist_ok=True)
    pending = []
    while state.step < config.steps:
        losses = distill_step(state, teacher, corpus, tile_cls, config)
        pending.append(state.loss_history[-1])
        if state.step % config.eval_every == 0 or state.step == config.steps:
            log.info("step %d total %.5f (gld %.5f lld %.5f ggd %.5f)", state.step, losses.total, losses.gld, losses.lld, losses.ggd)
            if out:
                _write_losses(os.path.join(out, "loss.csv"), pending, append=state.step > len(pending))
                state.save(os.path.join(out, f"student_{state.step}.ckpt"), config)
            pending = []
            if testbed is not None:
                report = evaluate(state.params, testbed, tile_accuracy=False)
                if out:
                    append_report(os.path.join(out, "metrics.csv"), run_id, state.step, report)
                if on_eval is not None:
                    on_eval(state.step, report)
    return state


# --- ablations ----------------------------------------------------------------

VARIANTS = {
    "full": {},
    "gld_only": {"lambda_lld": 0.0, "lambda_ggd": 0.0},
    "gld_lld": {"lambda_ggd": 0.0},
    "cosine_unweighted": {"gld_objective": "cosine", "gld_weighted": False},
    "cosine_weighted": {"gld_objective": "cosine", "gld_weighted": True},
    "contrastive_unweighted": {"gld_objective": "contrastive", "gld_weighted": False},
    "contrastive_weighted": {"gld_objective": "contrastive", "gld_weighted": True},
    "whole_mosaic_anchor": {"gld_anchor": "mosaic"},
}


def variant_config(base: RunConfig, variant: str) -> RunConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    return replace(base, distill=replace(base.distill, **VARIANTS[variant]))


def run_ablation(base: RunConfig, variant: str, testbed: Testbed | None = None, teacher: ModelParams | None = None):
    """Train one variant; returns (teacher report, student report, final train state)."""
    config = variant_config(base, variant)
    testbed = testbed or Testbed.build(config)
    teacher = teacher or pretrain_teacher(testbed.corpus, testbed.bank, config, testbed.heldout)
    state = distill_student(teacher, testbed.corpus, config, testbed, run_id=variant)
    return evaluate(teacher, testbed), evaluate(state.params, testbed), state
