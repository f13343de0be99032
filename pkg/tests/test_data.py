import itertools
from dataclasses import replace

import numpy as np
import pytest

from atas.data import (
    CorpusConfig,
    corpus_arrays,
    derive_seed,
    export_corpus,
    gen_concepts,
    gen_corpus,
    gen_tile,
    load_exported_corpus,
)
from atas.errors import GenerationError, ParameterError

# concepts --------------------------------------------------------------------------


def test_two_concepts_in_two_dims_are_orthogonal():
    bank = gen_concepts(2, 2, seed=0)
    assert abs(float(bank.vectors[0] @ bank.vectors[1])) < 1e-12
    np.testing.assert_allclose(np.linalg.norm(bank.vectors, axis=1), 1.0, atol=1e-10)


def test_concepts_deterministic_in_seed():
    assert np.array_equal(gen_concepts(16, 64, 3).vectors, gen_concepts(16, 64, 3).vectors)
    assert not np.array_equal(gen_concepts(16, 64, 3).vectors, gen_concepts(16, 64, 4).vectors)


@pytest.mark.parametrize("k,d", [(16, 64), (8, 6), (12, 8)])
def test_concept_bound_by_exhaustive_pair_scan(k, d):
    v = gen_concepts(k, d, seed=1).vectors
    assert v.shape == (k, d)
    for i in range(k):
        assert abs(np.linalg.norm(v[i]) - 1.0) <= 1e-10
    for i, j in itertools.combinations(range(k), 2):
        assert float(v[i] @ v[j]) <= 0.5


def test_concepts_unsatisfiable_raises_generation_error():
    with pytest.raises(GenerationError):
        gen_concepts(50, 2, seed=0)


def test_concepts_need_two_classes():
    with pytest.raises(ParameterError):
        gen_concepts(1, 4, seed=0)


# tiles -----------------------------------------------------------------------------


def test_zero_noise_tile_depends_only_on_class():
    cfg = CorpusConfig(noise_std=0.0)
    a, b = gen_tile(3, cfg, seed=1), gen_tile(3, cfg, seed=2)
    assert np.array_equal(a.image, b.image)
    assert a.image.shape == (3, 32, 32)
    assert (a.patch_labels == 3).all() and a.patch_labels.size == 16


def test_different_classes_differ_without_noise():
    cfg = CorpusConfig(noise_std=0.0)
    diff = np.abs(gen_tile(0, cfg, 0).image - gen_tile(1, cfg, 0).image).mean()
    assert diff > 0


def test_noise_has_requested_scale():
    cfg = CorpusConfig(noise_std=0.05)
    clean = gen_tile(2, replace(cfg, noise_std=0.0), 0).image
    noisy = gen_tile(2, cfg, 11).image
    assert abs((noisy - clean).std() - 0.05) < 0.005


def test_tile_class_range_checked():
    with pytest.raises(ParameterError):
        gen_tile(16, CorpusConfig(), 0)


def test_classes_linearly_separable_from_pixels():
    cfg = CorpusConfig(samples_per_class=32)
    train_x, train_y = corpus_arrays(gen_corpus(cfg))
    test_x, test_y = corpus_arrays(gen_corpus(replace(cfg, samples_per_class=16), split=1))
    x = train_x.reshape(len(train_x), -1)
    x = np.hstack([x, np.ones((len(x), 1))])
    y = np.eye(cfg.num_classes)[train_y]
    w = np.linalg.solve(x.T @ x + 1e-2 * np.eye(x.shape[1]), x.T @ y)
    xt = np.hstack([test_x.reshape(len(test_x), -1), np.ones((len(test_x), 1))])
    assert (np.argmax(xt @ w, axis=1) == test_y).mean() > 0.95


# corpus ----------------------------------------------------------------------------


def test_minimal_corpus():
    corpus = gen_corpus(CorpusConfig(num_classes=3, samples_per_class=1))
    assert [t.class_id for t in corpus] == [0, 1, 2]


def test_corpus_deterministic_and_splits_differ():
    cfg = CorpusConfig(num_classes=4, samples_per_class=3)
    a, b = gen_corpus(cfg), gen_corpus(cfg)
    assert all(np.array_equal(x.image, y.image) for x, y in zip(a, b))
    held = gen_corpus(cfg, split=1)
    assert not any(np.array_equal(x.image, y.image) for x, y in zip(a, held))


def test_label_histogram_exactly_uniform():
    corpus = gen_corpus(CorpusConfig(num_classes=16, samples_per_class=128, noise_std=0.0))
    counts = np.bincount([t.class_id for t in corpus], minlength=16)
    assert (counts == 128).all()


def test_derive_seed_is_stable_and_key_sensitive():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(2, 1)


def test_export_round_trip(tmp_path):
    corpus = gen_corpus(CorpusConfig(num_classes=3, samples_per_class=2))
    manifest = export_corpus(corpus, tmp_path)
    lines = open(manifest).read().split()
    assert lines[:2] == ["tile_000000.f64", "0"]
    loaded = load_exported_corpus(tmp_path)
    assert [t.class_id for t in loaded] == [t.class_id for t in corpus]
    assert all(np.array_equal(a.image, b.image) for a, b in zip(corpus, loaded))
