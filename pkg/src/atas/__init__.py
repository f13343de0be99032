"""Patch-level vision-language alignment by self-distillation, on a synthetic desk-scale testbed."""

from .augment import MosaicSample, make_mosaic, sample_mosaic_batch
from .data import ConceptBank, CorpusConfig, TileSample, gen_concepts, gen_corpus, gen_tile
from .distill import BatchViews, DistillConfig, LossBreakdown, ggd_loss, gld_loss, lld_loss, total_loss, weighted_pool
from .errors import AtasError
from .metrics import EvalReport, alignment_accuracy, coherence_auroc, similarity_map
from .model import EncoderOutput, ModelConfig, ModelParams, encode, freeze, init_params, patchify
from .pipeline import RunConfig, TrainState, distill_student, pretrain_teacher, run_ablation

__version__ = "0.1.0"
