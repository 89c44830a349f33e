import random

import pytest
import torch

from geostance.data import LabeledExample, UnlabeledExample, save_corpus, save_descriptions, PolicyDescription

# topic -> (unlabeled count, favor, against, none)
TABLE2 = {"SH": (778, 194, 113, 113), "WM": (1030, 173, 288, 295), "VA": (1535, 106, 194, 226)}


def _table2_examples(topic, seed=0):
    rng = random.Random(f"{topic}-{seed}")
    n_unl, fav, ag, non = TABLE2[topic]
    labeled = [LabeledExample(topic, f"{topic.lower()} post {i} w{rng.randrange(99)}", stance)
               for i, stance in enumerate(["favor"] * fav + ["against"] * ag + ["none"] * non)]
    rng.shuffle(labeled)
    unlabeled = [UnlabeledExample(topic, f"{topic.lower()} chatter {i}") for i in range(n_unl)]
    return labeled, unlabeled


@pytest.fixture(scope="session")
def table2_corpora():
    labeled, unlabeled = {}, {}
    for t in TABLE2:
        labeled[t], unlabeled[t] = _table2_examples(t)
    return labeled, unlabeled


@pytest.fixture(scope="session")
def table2_dir(tmp_path_factory, table2_corpora):
    d = tmp_path_factory.mktemp("table2")
    labeled, unlabeled = table2_corpora
    for t in TABLE2:
        save_corpus(d / f"{t}.labeled.tsv", labeled[t])
        save_corpus(d / f"{t}.unlabeled.tsv", unlabeled[t])
    save_descriptions(d / "descriptions.tsv", [PolicyDescription(t, f"policy about {t.lower()}") for t in TABLE2])
    return d


@pytest.fixture(autouse=True)
def _threads():
    torch.set_num_threads(1)
