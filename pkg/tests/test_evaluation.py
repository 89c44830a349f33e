import pytest

from geostance.data import DataError, TaskSpec, build_splits, save_geo_graph
from geostance.evaluation import (Corpora, format_table, load_corpora, report_lines, run_suite, run_task,
                                  suite_tasks)
from geostance.metrics import score
from geostance.synth import SynthConfig, synth_generate
from geostance.training import TrainConfig, fit, predict_labels

FAST = TrainConfig(learning_rate=1e-3, max_epochs=2, patience=2, seeds=(0,))


@pytest.fixture(scope="module")
def corpora():
    c = synth_generate(SynthConfig(n_topics=3, n_per_topic=30, n_unlabeled_per_topic=20, seed=4))
    return Corpora(c.labeled, c.unlabeled, c.descriptions, c.graph)


def test_suite_cardinality():
    topics = ["SH", "WM", "VA"]
    cross = suite_tasks("cross_target", topics, [0])
    zero = suite_tasks("zero_shot", topics, [0])
    assert len(cross) == 6 and len({(t.source_topics, t.destination_topic) for t in cross}) == 6
    assert [t.destination_topic for t in zero] == topics
    assert all(set(t.source_topics) == set(topics) - {t.destination_topic} for t in zero)


def test_zero_shot_needs_three_topics():
    with pytest.raises(DataError):
        suite_tasks("zero_shot", ["SH", "WM"], [0])
    with pytest.raises(DataError):
        suite_tasks("cross_target", ["SH"], [0])


def test_singleton_seed_equals_run(corpora):
    spec = TaskSpec("cross_target", ("T0",), "T1", (2,))
    res = run_task(spec, FAST, corpora)
    splits = build_splits(spec, corpora.labeled, corpora.unlabeled, FAST.train_fraction, 2)
    fr = fit(splits, FAST, 2, corpora.descriptions, corpora.graph)
    direct = score(predict_labels(fr.model, fr.featurizer, splits.test_labeled),
                   [ex.stance for ex in splits.test_labeled])
    assert res.report.f_avg == direct.f_avg and res.report.f_m == direct.f_m


def test_run_task_deterministic(corpora):
    spec = TaskSpec("zero_shot", ("T0", "T1"), "T2", (0, 1))
    a, b = run_task(spec, FAST, corpora), run_task(spec, FAST, corpora)
    assert report_lines([a]) == report_lines([b])
    assert len(report_lines([a])) == 1 + 2 + 1


def test_suite_table_layout(corpora):
    results = run_suite("cross_target", corpora, FAST)
    table = format_table(results).splitlines()
    assert len(results) == 6 and len(table) == 7
    assert table[0].split()[:4] == ["task", "mode", "F_avg", "F_m"]


def test_load_corpora_round_trip(tmp_path):
    c = synth_generate(SynthConfig(n_topics=2, n_per_topic=10, n_unlabeled_per_topic=5, seed=0))
    c.write(tmp_path)
    back = load_corpora(tmp_path)
    assert back.topics == ["T0", "T1"]
    assert back.labeled == {t: list(v) for t, v in c.labeled.items()}
    assert back.graph.regions == c.graph.regions
