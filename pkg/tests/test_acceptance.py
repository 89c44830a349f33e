"""One test per acceptance criterion; each prints a PASS/FAIL line with its measured values."""
import time

import pytest

from geostance import acceptance as acc


@pytest.fixture
def check(capsys):
    def run(number, name, fn, budget=None):
        res = acc._timed(number, name, fn, budget)
        with capsys.disabled():
            print("\n" + res.line())
        assert res.passed, res.line()
    return run


def test_criterion_1_separation_identity(check):
    check(1, "separation identity", acc.separation_identity, 10.0)


def test_criterion_2_grl_gradient_law(check):
    check(2, "GRL gradient law", acc.grl_gradient_law, 30.0)


def test_criterion_3_combined_gradient(check):
    check(3, "combined-objective gradient", acc.combined_gradient)


def test_criterion_4_metric_oracle(check):
    check(4, "metric oracle", acc.metric_oracle)


def test_criterion_5_gcn_reach(check):
    check(5, "GCN reach", acc.gcn_reach)


def test_criterion_6_overfit_sanity(check):
    check(6, "overfit sanity", acc.overfit_sanity, 120.0)


def test_criterion_7_adversarial_transfer(check):
    check(7, "adversarial transfer", lambda: acc.adversarial_transfer(table_out=print), 900.0)


def test_criterion_8_suite_determinism(check):
    check(8, "suite cardinality & determinism", acc.suite_determinism)


def test_criterion_9_parameter_count(check):
    check(9, "parameter count", acc.parameter_count)


def test_ablation_rejects_unknown_key():
    with pytest.raises(ValueError, match="unknown config keys"):
        acc.AblationSpec("bad", {"alphaa": 0}).apply(acc.TRANSFER_TRAIN)
    cfg = acc.NO_GEO.apply(acc.TRANSFER_TRAIN)
    assert cfg.use_geo is False and acc.TRANSFER_TRAIN.use_geo is True
