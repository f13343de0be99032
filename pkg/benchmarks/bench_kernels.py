"""Compiled vs pure-Python row kernels, per kernel and for one distillation step.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from atas.data import CorpusConfig, gen_corpus
from atas.model import ModelConfig, freeze, init_params
from atas.numerics import kernels
from atas.pipeline import RunConfig, TrainState, distill_step, teacher_tile_cls
from atas.optim import AdamW


def kernel_cases(rng):
    # shapes seen in a default step: (batch * tokens, width)
    x = rng.normal(size=(16 * 65, 64))
    wide = rng.normal(size=(16 * 65, 256))
    att = rng.normal(size=(16 * 4 * 65, 65))
    gamma, beta = rng.normal(size=64), rng.normal(size=64)
    y, xhat, rstd = kernels.K.layer_norm_fwd(x, gamma, beta, 1e-5)
    s = kernels.K.softmax_fwd(att)
    return {
        "layer_norm_fwd": lambda: kernels.K.layer_norm_fwd(x, gamma, beta, 1e-5),
        "layer_norm_bwd": lambda: kernels.K.layer_norm_bwd(x, xhat, rstd, gamma),
        "softmax_fwd": lambda: kernels.K.softmax_fwd(att),
        "softmax_bwd": lambda: kernels.K.softmax_bwd(att, s),
        "log_softmax_fwd": lambda: kernels.K.log_softmax_fwd(att),
        "gelu_fwd": lambda: kernels.K.gelu_fwd(wide),
        "gelu_bwd": lambda: kernels.K.gelu_bwd(wide, wide),
    }


def training_step():
    config = RunConfig(steps=1)
    corpus = gen_corpus(CorpusConfig(samples_per_class=8))
    teacher = freeze(init_params(ModelConfig(), 0))
    tile_cls = teacher_tile_cls(teacher, corpus)

    def run():
        state = TrainState(teacher.copy(trainable=True), AdamW(config.learning_rate))
        distill_step(state, teacher, corpus, tile_cls, config)

    return run


def best_ms(fn, repeat):
    return 1e3 * min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    backends = ["python"] + (["compiled"] if kernels.compiled_available() else [])
    if len(backends) == 1:
        print("compiled kernels not built; timing the fallback only")
    rng = np.random.default_rng(0)
    results = {}
    before = kernels.active_backend()
    try:
        for backend in backends:
            kernels.use_backend(backend)
            for name, fn in kernel_cases(rng).items():
                results[(name, backend)] = best_ms(fn, args.repeat)
            results[("distill_step", backend)] = best_ms(training_step(), max(3, args.repeat // 5))
    finally:
        kernels.use_backend(before)
    names = sorted({k[0] for k in results}, key=lambda n: (n == "distill_step", n))
    print(f"{'kernel':<18}" + "".join(f"{b + ' ms':>14}" for b in backends) + ("      speedup" if len(backends) == 2 else ""))
    for name in names:
        row = [results[(name, b)] for b in backends]
        line = f"{name:<18}" + "".join(f"{v:>14.3f}" for v in row)
        if len(row) == 2:
            line += f"{row[0] / row[1]:>12.2f}x"
        print(line)


if __name__ == "__main__":
    main()
