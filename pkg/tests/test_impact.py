"""Price-response curves and their comparison."""
from __future__ import annotations

import numpy as np
import pytest

from lobeval.impact import (
    CLASS_NAMES,
    DeltaR,
    ResponseCurve,
    classify_events,
    delta_r,
    epsilon,
    lag_grid,
    response_curves,
    response_function,
)

from conftest import build_pair, mirror_pair

SENT_A = 9_999_999_999
SENT_B = -9_999_999_999


def curve(name, lags, values):
    lags = np.asarray(lags, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    return ResponseCurve(class_name=name, lags=lags, values=values,
                         ci_low=values, ci_high=values,
                         counts=np.full(len(lags), 5, dtype=np.int64))


# ----------------------------------------------------------------- epsilon

def test_epsilon_all_six_cases():
    assert epsilon("MO", 1) == 1
    assert epsilon("MO", -1) == -1
    assert epsilon("LO", 1) == 1
    assert epsilon("LO", -1) == -1
    assert epsilon("CA", 1) == -1
    assert epsilon("CA", -1) == 1


def test_epsilon_rejects_bad_input():
    with pytest.raises(ValueError):
        epsilon("XX", 1)
    with pytest.raises(ValueError):
        epsilon("MO", 0)


# ---------------------------------------------------------------- lag grid

def test_lag_grid_shape():
    g = lag_grid()
    assert g[0] == 1 and g[-1] == 200
    assert g.dtype == np.int64
    assert np.all(np.diff(g) > 0)
    assert len(g) <= 20


def test_lag_grid_two_points():
    assert lag_grid(200, 2).tolist() == [1, 200]


def test_lag_grid_validation():
    with pytest.raises(ValueError):
        lag_grid(200, 1)


# ---------------------------------------------------------- classification

def classified_example():
    rows = [
        (34_200.0, 1, 11, 10, 1_000_000, 1),
        (34_201.0, 1, 12, 7, 1_000_050, 1),   # new best bid, mid moves
        (34_202.0, 4, 12, 3, 1_000_050, 1),   # partial fill at the touch
        (34_203.0, 2, 12, 2, 1_000_050, 1),   # partial cancel at the touch
        (34_204.0, 3, 12, 2, 1_000_050, 1),   # delete, mid falls back
        (34_205.0, 1, 13, 6, 999_900, 1),     # level-2 bid, not a touch event
        (34_206.0, 5, 99, 1, 1_000_100, -1),  # hidden execution, excluded
        (34_207.0, 1, 14, 5, 1_000_100, -1),  # join best ask
    ]
    books = [
        [1_000_100, 10, 1_000_000, 10, SENT_A, 0, SENT_B, 0],
        [1_000_100, 10, 1_000_050, 7, SENT_A, 0, 1_000_000, 10],
        [1_000_100, 10, 1_000_050, 4, SENT_A, 0, 1_000_000, 10],
        [1_000_100, 10, 1_000_050, 2, SENT_A, 0, 1_000_000, 10],
        [1_000_100, 10, 1_000_000, 10, SENT_A, 0, SENT_B, 0],
        [1_000_100, 10, 1_000_000, 10, SENT_A, 0, 999_900, 6],
        [1_000_100, 9, 1_000_000, 10, SENT_A, 0, 999_900, 6],
        [1_000_100, 14, 1_000_000, 10, SENT_A, 0, 999_900, 6],
    ]
    return build_pair(rows, books)


def test_classify_worked_example():
    te = classify_events(classified_example(), tick=100)
    names = [CLASS_NAMES[c] for c in te.cls]
    assert names == ["LO1", "MO0", "CA0", "CA1", "LO0"]
    assert te.eps.tolist() == [1, 1, -1, -1, -1]
    assert te.premid.tolist() == [10_000.5, 10_000.75, 10_000.75,
                                  10_000.75, 10_000.5]
    assert te.skipped_no_mid == 0
    assert te.dual_side_touches == 0


def test_classify_dual_side_touch_uses_message_side():
    rows = [
        (34_200.0, 1, 1, 10, 1_000_000, 1),
        (34_201.0, 1, 2, 5, 1_000_100, -1),
    ]
    books = [
        [1_000_100, 10, 1_000_000, 10],
        [1_000_100, 15, 1_000_000, 8],  # both touches change at once
    ]
    te = classify_events(build_pair(rows, books), tick=100)
    assert [CLASS_NAMES[c] for c in te.cls] == ["LO0"]
    assert te.eps.tolist() == [-1]
    assert te.dual_side_touches == 1


def test_classify_skips_one_sided_books():
    rows = [
        (34_200.0, 1, 1, 10, 1_000_100, -1),
        (34_201.0, 1, 2, 2, 1_000_100, -1),
    ]
    books = [
        [1_000_100, 10, SENT_B, 0],
        [1_000_100, 12, SENT_B, 0],
    ]
    te = classify_events(build_pair(rows, books), tick=100)
    assert len(te) == 0
    assert te.skipped_no_mid == 1


# ------------------------------------------------------- response function

def single_jump_example():
    rows = [(34_200.0, 1, 1, 10, 1_000_000, 1),
            (34_201.0, 1, 2, 5, 1_000_200, 1)]
    books = [[1_000_300, 10, 1_000_000, 10],
             [1_000_300, 10, 1_000_200, 5]]
    for k in range(5):
        rows.append((34_202.0 + k, 2, 9, 1, 1_000_300, -1))
        books.append([1_000_300, 9 - k, 1_000_200, 5])
    return build_pair(rows, books)


def test_single_event_response_is_one_at_every_lag():
    # one bid improvement lifts the mid a full tick and it never moves again
    te = classify_events(single_jump_example(), tick=100)
    rc = response_function([te], "LO1", lags=np.arange(1, 9))
    assert rc.lags.tolist() == [1, 2, 3, 4, 5]  # deeper lags unreachable
    assert np.allclose(rc.values, 1.0)
    assert rc.counts.tolist() == [1] * 5
    assert np.allclose(rc.ci_low, 1.0) and np.allclose(rc.ci_high, 1.0)


def test_constant_mid_class_response_is_zero():
    te = classify_events(single_jump_example(), tick=100)
    rc = response_function([te], "CA0", lags=np.arange(1, 5))
    assert np.allclose(rc.values, 0.0)
    assert rc.counts[0] == 4  # five cancels, the last one has no successor


def test_response_empty_class_flagged():
    te = classify_events(single_jump_example(), tick=100)
    rc = response_function([te], "MO1")
    assert len(rc) == 0
    assert "no_events" in rc.flags


def test_response_mirror_invariance(small_sims):
    pair = small_sims[0].pair
    real = response_curves([pair], tick=100)
    mirr = response_curves([mirror_pair(pair)], tick=100)
    assert set(real) == set(CLASS_NAMES)
    for name in CLASS_NAMES:
        a, b = real[name], mirr[name]
        assert a.lags.tolist() == b.lags.tolist()
        assert a.counts.tolist() == b.counts.tolist()
        assert np.allclose(a.values, b.values, atol=1e-9)


# ----------------------------------------------------------------- delta R

def test_delta_r_zero_on_self(small_sims):
    curves = response_curves([small_sims[0].pair], tick=100)
    d = delta_r(curves, curves)
    assert d.mean == 0.0
    assert all(v == 0.0 for v in d.per_class.values())


def test_delta_r_constant_offset():
    lags = [1, 3, 9]
    real = {n: curve(n, lags, [0.1, 0.2, 0.3]) for n in CLASS_NAMES}
    gen = {n: curve(n, lags, [0.35, 0.45, 0.55]) for n in CLASS_NAMES}
    d = delta_r(real, gen)
    assert d.mean == pytest.approx(0.25, abs=1e-15)
    assert all(v == pytest.approx(0.25, abs=1e-15)
               for v in d.per_class.values())


def test_delta_r_symmetry():
    rng = np.random.default_rng(0)
    lags = [1, 2, 5, 20]
    real = {n: curve(n, lags, rng.normal(size=4)) for n in CLASS_NAMES}
    gen = {n: curve(n, lags, rng.normal(size=4)) for n in CLASS_NAMES}
    assert delta_r(real, gen).mean == pytest.approx(delta_r(gen, real).mean)


def test_delta_r_missing_class_scores_other_sides_level():
    real = {"MO0": curve("MO0", [1, 2], [0.5, -0.7])}
    gen = {}
    d = delta_r(real, gen)
    assert d.per_class["MO0"] == pytest.approx(0.6)
    assert d.class_flags["MO0"] == ("missing_in_generated",)
    # everything else is absent from both sides and skipped
    assert set(d.per_class) == {"MO0"}
    assert d.class_flags["LO0"] == ("missing_both",)


def test_delta_r_partial_lag_overlap():
    real = {"LO1": curve("LO1", [1, 2, 4], [1.0, 2.0, 3.0])}
    gen = {"LO1": curve("LO1", [2, 4, 8], [2.5, 3.5, 9.0])}
    d = delta_r(real, gen)
    assert d.per_class["LO1"] == pytest.approx(0.5)
    assert "partial_lag_overlap" in d.class_flags["LO1"]


def test_delta_r_serialization():
    real = {"MO0": curve("MO0", [1], [0.2])}
    d = delta_r(real, real)
    out = d.to_dict()
    assert out["mean"] == 0.0
    assert out["per_class"] == {"MO0": 0.0}
