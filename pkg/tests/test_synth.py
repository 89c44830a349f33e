import pytest

from geostance.synth import SynthConfig, marker_tokens, oracle_stance, synth_generate


def test_seeded_determinism(tmp_path):
    cfg = SynthConfig(n_topics=2, n_per_topic=200, seed=7)
    a, b = tmp_path / "a", tmp_path / "b"
    synth_generate(cfg).write(a)
    synth_generate(cfg).write(b)
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()


@pytest.mark.parametrize("spurious", [0, 2])
def test_oracle_agrees_with_labels(spurious):
    corpus = synth_generate(SynthConfig(n_topics=3, n_per_topic=150, spurious_strength=spurious, seed=1))
    for examples in corpus.labeled.values():
        assert all(oracle_stance(ex.text) == ex.stance for ex in examples)


def test_topic_markers_disjoint():
    cfg = SynthConfig(n_topics=2, n_per_topic=200, seed=2)
    corpus = synth_generate(cfg)
    m0 = set(marker_tokens(cfg, 0))
    seen = set()
    for ex in list(corpus.labeled["T1"]) + list(corpus.unlabeled["T1"]):
        seen |= set(ex.text.split())
    assert not (m0 & seen)


def test_degenerate_config():
    with pytest.raises(ValueError):
        synth_generate(SynthConfig(n_cue_tokens=0))
    with pytest.raises(ValueError):
        synth_generate(SynthConfig(n_topics=1))


def test_shapes():
    cfg = SynthConfig(n_topics=3, n_per_topic=30, n_unlabeled_per_topic=20, n_regions=5, seed=0)
    c = synth_generate(cfg)
    assert list(c.labeled) == cfg.topics() and all(len(v) == 30 for v in c.labeled.values())
    assert all(len(v) == 20 for v in c.unlabeled.values())
    assert c.graph.n == 5 and set(c.descriptions) == set(cfg.topics())
