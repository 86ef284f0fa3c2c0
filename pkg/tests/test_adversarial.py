"""Delta encoding, the numpy discriminator, and ROC utilities."""
from __future__ import annotations

import math

import numpy as np
import pytest

from lobeval.adversarial import (
    Discriminator,
    DiscriminatorConfig,
    encode,
    make_windows,
    roc_auc,
    roc_curve,
    score,
    slice_windows,
    train,
)
from lobeval.lobster import BookArray

SENT_A = 9_999_999_999
SENT_B = -9_999_999_999


def books(rows) -> BookArray:
    data = np.asarray(rows, dtype=np.int64)
    return BookArray(data, n_levels=data.shape[1] // 4)


def steps(rows):
    """Wrap raw (T, 3) step arrays for the training helpers."""
    return np.asarray(rows, dtype=np.float64)


# ------------------------------------------------------------------ encode

def test_encode_identical_snapshots():
    b = books([[1_000_100, 10, 1_000_000, 10]] * 3)
    enc = encode(b, tick=100)
    assert np.array_equal(enc.steps, np.zeros((2, 3)))
    assert enc.multi_changes == 0


def test_encode_best_ask_shrinks():
    b = books([[1_000_100, 5, 1_000_000, 10],
               [1_000_100, 3, 1_000_000, 10]])
    enc = encode(b, tick=100)
    assert enc.steps.tolist() == [[0.0, 1.0, -2.0]]


def test_encode_new_best_bid_one_tick_up():
    b = books([[1_000_200, 10, 1_000_000, 10, SENT_A, 0, SENT_B, 0],
               [1_000_200, 10, 1_000_100, 7, SENT_A, 0, 1_000_000, 10]])
    enc = encode(b, tick=100)
    assert enc.steps.tolist() == [[0.5, -1.0, 7.0]]
    assert enc.multi_changes == 0


def test_encode_vanished_price_located_in_pre_book():
    b = books([[1_000_100, 5, 1_000_000, 10, 1_000_200, 8, SENT_B, 0],
               [1_000_200, 8, 1_000_000, 10, SENT_A, 0, SENT_B, 0]])
    enc = encode(b, tick=100)
    assert enc.steps.tolist() == [[0.5, 1.0, -5.0]]


def test_encode_multi_change_keeps_dominant():
    b = books([[1_000_100, 9, 1_000_000, 4],
               [1_000_100, 7, 1_000_000, 9]])
    enc = encode(b, tick=100)
    assert enc.steps.tolist() == [[0.0, -1.0, 5.0]]
    assert enc.multi_changes == 1


def test_encode_equal_magnitude_tie_prefers_ask():
    b = books([[1_000_100, 9, 1_000_000, 4],
               [1_000_100, 6, 1_000_000, 7]])
    enc = encode(b, tick=100)
    assert enc.steps.tolist() == [[0.0, 1.0, -3.0]]


def test_encode_translation_invariant():
    rng = np.random.default_rng(3)
    base = np.empty((40, 4))
    px = 1_000_000 + 100 * np.cumsum(rng.integers(-1, 2, size=40))
    base[:, 0] = px + 100
    base[:, 1] = rng.integers(1, 30, size=40)
    base[:, 2] = px
    base[:, 3] = rng.integers(1, 30, size=40)
    shifted = base.copy()
    shifted[:, 0] += 50_000
    shifted[:, 2] += 50_000
    a = encode(books(base), tick=100)
    b = encode(books(shifted), tick=100)
    assert np.array_equal(a.steps, b.steps)
    assert a.multi_changes == b.multi_changes


def test_encode_needs_two_snapshots():
    with pytest.raises(ValueError):
        encode(books([[1_000_100, 5, 1_000_000, 10]]), tick=100)


def test_encode_one_sided_book_mid_nan_counted():
    b = books([[1_000_100, 5, SENT_B, 0],
               [1_000_100, 3, SENT_B, 0]])
    enc = encode(b, tick=100)
    assert enc.steps[0, 0] == 0.0
    assert enc.nan_mid_steps == 1


# ----------------------------------------------------------------- windows

def test_make_windows_pads_and_truncates():
    short = steps([[1, 1, 1]] * 3)
    long = steps([[2, 2, 2]] * 8)
    x = make_windows([short, long], window=5)
    assert x.shape == (2, 5, 3)
    assert np.array_equal(x[0, :3], short)
    assert np.array_equal(x[0, 3:], np.zeros((2, 3)))
    assert np.array_equal(x[1], long[:5])


def test_slice_windows_drops_tail():
    enc = steps(np.arange(23 * 3).reshape(23, 3))
    cuts = slice_windows(enc, window=5)
    assert len(cuts) == 4
    assert all(len(c) == 5 for c in cuts)
    assert np.array_equal(cuts[0], enc[:5])
    assert np.array_equal(cuts[3], enc[15:20])
    assert slice_windows(steps([[1, 1, 1]] * 4), window=5) == []


# --------------------------------------------------------------------- ROC

def test_roc_auc_worked_example():
    auc = roc_auc(np.array([1, 1, 0, 0]), np.array([0.9, 0.4, 0.6, 0.1]))
    assert auc == pytest.approx(0.75)


def test_roc_auc_all_tied_is_half():
    assert roc_auc(np.array([1, 0, 1, 0]), np.zeros(4)) == pytest.approx(0.5)


def test_roc_auc_separated_is_one():
    labels = np.array([0] * 5 + [1] * 5)
    scores_ = np.concatenate([np.arange(5), np.arange(10, 15)])
    assert roc_auc(labels, scores_) == 1.0
    assert roc_auc(labels, -scores_) == 0.0


def test_roc_auc_monotone_transform_invariant():
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 2, size=50)
    labels[:2] = [0, 1]
    s = rng.normal(size=50)
    base = roc_auc(labels, s)
    assert roc_auc(labels, 3.0 * s + 7.0) == pytest.approx(base)
    assert roc_auc(labels, np.exp(s)) == pytest.approx(base)


def test_roc_auc_needs_both_classes():
    with pytest.raises(ValueError):
        roc_auc(np.ones(4), np.arange(4.0))


def test_roc_curve_endpoints_and_steps():
    fpr, tpr, thr = roc_curve(np.array([1, 0]), np.array([0.9, 0.1]))
    assert fpr.tolist() == [0.0, 0.0, 1.0]
    assert tpr.tolist() == [0.0, 1.0, 1.0]
    assert thr[0] == np.inf
    assert np.trapezoid(tpr, fpr) == pytest.approx(1.0)


def test_roc_curve_merges_ties():
    fpr, tpr, _ = roc_curve(np.array([1, 0, 1, 0]), np.array([0.5] * 4))
    assert fpr.tolist() == [0.0, 1.0]
    assert tpr.tolist() == [0.0, 1.0]


# ---------------------------------------------------------------- training

def noise_encodings(rng, n, length=60, scale=1.0):
    out = []
    for _ in range(n):
        e = np.zeros((length, 3))
        e[:, 0] = rng.choice([-0.5, 0.0, 0.5], size=length)
        e[:, 1] = rng.integers(-3, 4, size=length)
        e[:, 2] = scale * rng.integers(-20, 21, size=length)
        out.append(e)
    return out


def quick_config(**over):
    base = dict(window=40, conv_width=3, n_filters=8, epochs=6,
                batch_size=16, seed=0)
    base.update(over)
    return DiscriminatorConfig(**base)


def test_initial_loss_near_ln2():
    rng = np.random.default_rng(0)
    res = train(noise_encodings(rng, 16), noise_encodings(rng, 16),
                quick_config(epochs=1))
    assert abs(res.initial_loss - math.log(2.0)) < 0.02


def test_train_is_deterministic():
    rng = np.random.default_rng(5)
    real = noise_encodings(rng, 14)
    gen = noise_encodings(rng, 14, scale=2.5)
    a = train(real, gen, quick_config())
    b = train(real, gen, quick_config())
    assert np.array_equal(a.test_logits, b.test_logits)
    for k in a.model.params:
        assert np.array_equal(a.model.params[k], b.model.params[k])
    c = train(real, gen, quick_config(seed=1))
    assert not np.array_equal(a.test_logits, c.test_logits)


def test_train_separates_scaled_sizes():
    rng = np.random.default_rng(2)
    real = noise_encodings(rng, 40)
    gen = noise_encodings(rng, 40, scale=3.0)
    res = train(real, gen, quick_config(epochs=25))
    assert res.auc_train > 0.9
    assert res.auc_test > 0.9
    assert res.losses[-1] < res.initial_loss


def test_train_split_is_stratified_and_disjoint():
    rng = np.random.default_rng(4)
    res = train(noise_encodings(rng, 20), noise_encodings(rng, 20),
                quick_config(epochs=1, test_fraction=0.2))
    assert len(np.intersect1d(res.train_index, res.test_index)) == 0
    assert len(res.test_index) == 8
    assert set(np.unique(res.test_labels)) == {0.0, 1.0}
    assert len(res.losses) == 1


def test_pooled_architecture_trains():
    rng = np.random.default_rng(6)
    real = noise_encodings(rng, 24)
    gen = noise_encodings(rng, 24, scale=3.0)
    res = train(real, gen, quick_config(architecture="pooled", epochs=15,
                                        learning_rate=5e-2))
    assert res.auc_test > 0.9


def test_train_needs_ten_per_class():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        train(noise_encodings(rng, 9), noise_encodings(rng, 20),
              quick_config())


def test_unknown_architecture_rejected():
    with pytest.raises(ValueError):
        Discriminator.initialize(quick_config(architecture="mlp"),
                                 np.random.default_rng(0))


def test_score_shape_and_determinism():
    rng = np.random.default_rng(7)
    real = noise_encodings(rng, 12)
    gen = noise_encodings(rng, 12, scale=2.0)
    res = train(real, gen, quick_config(epochs=2))
    s1 = score(res.model, real[:5])
    s2 = score(res.model, real[:5])
    assert s1.shape == (5,)
    assert np.array_equal(s1, s2)


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    real = noise_encodings(rng, 12)
    gen = noise_encodings(rng, 12, scale=2.0)
    res = train(real, gen, quick_config(epochs=2))
    path = tmp_path / "model.bin"
    res.model.save(path)
    again = Discriminator.load(path)
    assert again.config == res.model.config
    assert np.array_equal(again.channel_mean, res.model.channel_mean)
    probe = real[:4] + gen[:4]
    assert np.array_equal(score(again, probe), score(res.model, probe))


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTAMODEL" + b"\x00" * 64)
    with pytest.raises(ValueError):
        Discriminator.load(path)
