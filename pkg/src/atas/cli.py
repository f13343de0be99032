"""Command-line entry point: ``atas {pretrain,distill,eval,ablate,viz}``.

Every subcommand builds the same testbed from ``--config``/``--seed``, so a
teacher written by ``pretrain`` is reused by later commands pointed at the
same output directory.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .errors import AtasError, CheckpointError, ConfigError
from .metrics import append_report, similarity_map, write_map
from .model import encode_arrays, load_params, save_params
from .pipeline import (
    VARIANTS,
    RunConfig,
    Testbed,
    TrainState,
    distill_student,
    evaluate,
    pretrain_teacher,
    read_config_file,
    variant_config,
)

log = logging.getLogger("atas")


def _config(args) -> RunConfig:
    config = read_config_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.out:
        config = replace(config, output_dir=args.out)
    return config


def _report_line(name, report) -> str:
    line = f"{name}: coherence_auroc={report.coherence_auroc:.6f} alignment_accuracy={report.alignment_accuracy:.6f}"
    if not np.isnan(report.cls_accuracy):
        line += f" cls_accuracy={report.cls_accuracy:.6f}"
    return line


def _teacher(config: RunConfig, testbed: Testbed, path: str | None):
    """Load the teacher from ``path`` or ``<out>/teacher.ckpt``; pretrain (and save) if neither exists."""
    candidate = path or (os.path.join(config.output_dir, "teacher.ckpt") if config.output_dir else None)
    if candidate and os.path.exists(candidate):
        params, _, _ = load_params(candidate, trainable=False)
        if params.config != config.model:
            raise ConfigError(f"{candidate} was trained with a different model config")
        return params
    if path:
        raise CheckpointError(f"no such checkpoint: {path}")
    teacher = pretrain_teacher(testbed.corpus, testbed.bank, config, testbed.heldout)
    if config.output_dir:
        os.makedirs(config.output_dir, exist_ok=True)
        save_params(os.path.join(config.output_dir, "teacher.ckpt"), teacher)
    return teacher


def cmd_pretrain(args) -> None:
    config = _config(args)
    testbed = Testbed.build(config)
    teacher = pretrain_teacher(testbed.corpus, testbed.bank, config, testbed.heldout)
    report = evaluate(teacher, testbed)
    if config.output_dir:
        os.makedirs(config.output_dir, exist_ok=True)
        save_params(os.path.join(config.output_dir, "teacher.ckpt"), teacher)
        append_report(os.path.join(config.output_dir, "metrics.csv"), "teacher", 0, report)
    print(_report_line("teacher", report))


def _train(args, config: RunConfig, run_id: str) -> None:
    testbed = Testbed.build(config)
    teacher = _teacher(config, testbed, args.teacher)
    state = TrainState.load(args.resume, config) if args.resume else None
    if state is not None and state.params.config != config.model:
        raise ConfigError(f"{args.resume} was trained with a different model config")
    state = distill_student(teacher, testbed.corpus, config, testbed, state=state, run_id=run_id)
    print(_report_line("teacher", evaluate(teacher, testbed)))
    print(_report_line(run_id, evaluate(state.params, testbed)))


def cmd_distill(args) -> None:
    _train(args, _config(args), "distill")


def cmd_ablate(args) -> None:
    _train(args, variant_config(_config(args), args.variant), args.variant)


def cmd_eval(args) -> None:
    config = _config(args)
    params, _, _ = load_params(args.checkpoint, trainable=False)
    config = replace(config, model=params.config)
    report = evaluate(params, Testbed.build(config))
    if config.output_dir:
        os.makedirs(config.output_dir, exist_ok=True)
        name = os.path.splitext(os.path.basename(args.checkpoint))[0]
        append_report(os.path.join(config.output_dir, "metrics.csv"), name, 0, report)
    print(_report_line(args.checkpoint, report))


def cmd_viz(args) -> None:
    config = _config(args)
    params, _, _ = load_params(args.checkpoint, trainable=False)
    testbed = Testbed.build(replace(config, model=params.config))
    if not 0 <= args.image < len(testbed.eval_mosaics):
        raise ConfigError(f"--image must lie in [0, {len(testbed.eval_mosaics)})")
    _, patches = encode_arrays(testbed.eval_mosaics[args.image].image[None], params)
    sim = similarity_map(patches[0], args.anchor)
    out = config.output_dir or "."
    txt, pgm = write_map(sim, os.path.join(out, "maps", f"{args.image}_{args.anchor}"))
    print(pgm)
    print(txt)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atas", description="Patch-level alignment distillation on a synthetic testbed.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value file overriding RunConfig defaults")
        p.add_argument("--seed", type=int, help="run and corpus seed")
        p.add_argument("--out", help="output directory")
        return p

    common(sub.add_parser("pretrain", help="train the teacher")).set_defaults(func=cmd_pretrain)
    for name, func, text in (
        ("distill", cmd_distill, "distill a student from the teacher"),
        ("ablate", cmd_ablate, "distill one loss variant"),
    ):
        p = common(sub.add_parser(name, help=text))
        p.add_argument("--teacher", help="teacher checkpoint (default: <out>/teacher.ckpt, else pretrain)")
        p.add_argument("--resume", help="student checkpoint to resume from")
        if name == "ablate":
            p.add_argument("--variant", required=True, help="one of " + ", ".join(sorted(VARIANTS)))
        p.set_defaults(func=func)
    p = common(sub.add_parser("eval", help="evaluate a checkpoint on the held-out mosaics"))
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)
    p = common(sub.add_parser("viz", help="write a patch similarity map"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", type=int, default=0, help="index into the evaluation mosaics")
    p.add_argument("--anchor", type=int, default=0, help="anchor patch index")
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except AtasError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 2
    return 0
