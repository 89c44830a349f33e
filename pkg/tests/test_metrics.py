import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import f1_score

from geostance.data import STANCES
from geostance.metrics import aggregate, f1_per_class, f_avg, f_m, macro_f1, micro_f1, score

GOLDS = ["favor", "favor", "against", "none"]
PREDS = ["favor", "against", "against", "none"]


def test_hand_case_per_class():
    per = f1_per_class(PREDS, GOLDS)
    assert per["favor"] == pytest.approx(2 / 3, abs=1e-12)
    assert per["against"] == pytest.approx(2 / 3, abs=1e-12)
    assert per["none"] == 1.0


def test_hand_case_aggregates():
    assert f_avg(PREDS, GOLDS) == pytest.approx(2 / 3, abs=1e-12)
    assert micro_f1(PREDS, GOLDS) == pytest.approx(3 / 4, abs=1e-12)
    assert macro_f1(PREDS, GOLDS) == pytest.approx(7 / 9, abs=1e-12)
    assert f_m(PREDS, GOLDS) == pytest.approx(float(Fraction(55, 72)), abs=1e-12)


def test_perfect_and_disjoint():
    golds = ["favor", "against", "none", "favor"]
    assert all(v == 1.0 for v in f1_per_class(golds, golds).values())
    assert f_avg(golds, golds) == 1.0 and f_m(golds, golds) == 1.0
    assert all(v == 0.0 for v in f1_per_class(["favor"] * 3, ["against"] * 3).values())
    assert f_avg(["none"] * 4, golds) == 0.0


def test_single_class_degenerate():
    golds = ["against"] * 5
    assert micro_f1(golds, golds) == 1.0
    assert macro_f1(golds, golds) == pytest.approx(1 / 3)
    assert f_m(golds, golds) == pytest.approx(2 / 3)


def test_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        f1_per_class(["favor"], [])


def test_against_sklearn_oracle():
    rng = random.Random(0)
    for _ in range(100):
        n = rng.randint(1, 50)
        golds = [rng.choice(STANCES) for _ in range(n)]
        preds = [rng.choice(STANCES) for _ in range(n)]
        per = f1_score(golds, preds, labels=list(STANCES), average=None, zero_division=0)
        micro = f1_score(golds, preds, labels=list(STANCES), average="micro", zero_division=0)
        assert abs(f_avg(preds, golds) - (per[0] + per[1]) / 2) <= 1e-9
        assert abs(f_m(preds, golds) - (micro + per.mean()) / 2) <= 1e-9
        assert abs(f_avg(preds, golds, classes=3) - per.mean()) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(STANCES), st.sampled_from(STANCES)), min_size=1, max_size=40),
       st.randoms())
def test_permutation_invariance(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    p, g = zip(*pairs)
    sp, sg = zip(*shuffled)
    assert f_avg(p, g) == pytest.approx(f_avg(sp, sg), abs=1e-12)
    assert f_m(p, g) == pytest.approx(f_m(sp, sg), abs=1e-12)


def test_aggregate_mean_and_singleton():
    a, b = score(PREDS, GOLDS), score(GOLDS, GOLDS)
    one = aggregate([a], [3])
    assert one.f_avg == a.f_avg and one.f_m == a.f_m and one.seed_list == [3]
    two = aggregate([a, b], [0, 1])
    assert two.f_avg == pytest.approx((a.f_avg + 1.0) / 2)
    with pytest.raises(ValueError):
        aggregate([], [])
