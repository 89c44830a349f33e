import math

import numpy as np
import pytest
import torch

from geostance.data import GeoGraph
from geostance.model import (HEAD_DTYPE, Checkpoint, CheckpointError, FeatureBundle, GeoEncoder, build_model,
                             count_parameters, discriminate_topic, geo_encode, grl_apply, predict_stance,
                             separate)
from geostance.acceptance import base_parameter_count


def _graph(n=4):
    regions = [f"r{i}" for i in range(n)]
    return GeoGraph.from_edges(regions, [(regions[i], regions[i + 1]) for i in range(n - 1)])


# --------------------------------------------------------------------------- separation

def test_zero_map():
    h = torch.randn(3, 8)
    f_s, f_i = separate(h, torch.zeros(8, 8), torch.zeros(8))
    assert (f_s == 0).all() and torch.equal(f_i, h.to(HEAD_DTYPE))


def test_identity_map():
    h = torch.randn(3, 8)
    f_s, f_i = separate(h, torch.eye(8), torch.zeros(8))
    assert torch.equal(f_s, h.to(HEAD_DTYPE)) and (f_i == 0).all()


def test_exact_reconstruction_random_draws():
    g = torch.Generator().manual_seed(0)
    for _ in range(100):
        h = torch.randn(4, 16, generator=g) * 10
        f_s, f_i = separate(h, torch.randn(16, 16, generator=g), torch.randn(16, generator=g))
        assert torch.equal(f_s + f_i, h.to(HEAD_DTYPE))


def test_separation_shape_mismatch():
    with pytest.raises(ValueError):
        separate(torch.randn(2, 8), torch.randn(8, 4), torch.zeros(8))


# --------------------------------------------------------------------------- geo encoder

def test_single_node_fixed_point():
    geo = GeoEncoder(np.array([[1]]), dim=4, layers=2)
    e = torch.tensor([[0.5, 0.0, 2.0, 1.0]], dtype=HEAD_DTYPE)
    with torch.no_grad():
        geo.embedding.copy_(e)
        for w in geo.weights:
            w.copy_(torch.eye(4, dtype=HEAD_DTYPE))
    g = GeoGraph(("only",), np.array([[1]], dtype=np.int8))
    assert torch.equal(geo_encode("only", g, geo), e[0])


def _positive_geo(graph, dim=6, seed=0):
    torch.manual_seed(seed)
    geo = GeoEncoder(graph.adjacency, dim=dim, layers=2)
    with torch.no_grad():
        geo.embedding.uniform_(0.1, 1.0)
        for w in geo.weights:
            w.uniform_(0.05, 0.5)
    return geo


def test_two_hop_reach():
    graph = GeoGraph.from_edges(["a", "b", "c"], [("a", "b"), ("b", "c")])
    geo = _positive_geo(graph)
    before = geo_encode("a", graph, geo).detach().clone()
    with torch.no_grad():
        geo.embedding[2] += 1
    assert not torch.equal(before, geo_encode("a", graph, geo))


def test_isolated_nodes_invariant():
    graph = GeoGraph.from_edges(["a", "b"], [])
    geo = _positive_geo(graph)
    before = geo_encode("a", graph, geo).detach().clone()
    with torch.no_grad():
        geo.embedding[1] += 5
    assert torch.equal(before, geo_encode("a", graph, geo))


def test_geo_encode_unknown_region():
    graph = _graph(3)
    with pytest.raises(KeyError):
        geo_encode("nowhere", graph, GeoEncoder(graph.adjacency, dim=4))


def test_symmetric_normalisation_option():
    graph = GeoGraph.from_edges(["a", "b"], [("a", "b")])
    geo = GeoEncoder(graph.adjacency, dim=2, normalize=True)
    assert torch.allclose(geo.adjacency, torch.full((2, 2), 0.5, dtype=HEAD_DTYPE))


# --------------------------------------------------------------------------- heads

def _bundle(b=5, d=6, f=4, seed=0):
    g = torch.Generator().manual_seed(seed)
    mk = lambda n: torch.randn(b, n, generator=g, dtype=HEAD_DTYPE)
    return FeatureBundle(None, mk(d), mk(d), mk(f))


def test_stance_zero_params_uniform():
    p = predict_stance(_bundle(), torch.zeros(3, 16, dtype=HEAD_DTYPE), torch.zeros(3, dtype=HEAD_DTYPE))
    assert torch.allclose(p, torch.full_like(p, 1 / 3))


def test_stance_saturation():
    b = torch.tensor([1e4, 0, 0], dtype=HEAD_DTYPE)
    p = predict_stance(_bundle(), torch.zeros(3, 16, dtype=HEAD_DTYPE), b)
    assert torch.allclose(p[:, 0], torch.ones(5, dtype=HEAD_DTYPE))


def _softmax_oracle(x, w, b):
    out = []
    for row in x.tolist():
        logits = [sum(wi * xi for wi, xi in zip(wr, row)) + bi for wr, bi in zip(w.tolist(), b.tolist())]
        m = max(logits)
        z = sum(math.exp(v - m) for v in logits)
        out.append([math.exp(v - m) / z for v in logits])
    return torch.tensor(out, dtype=HEAD_DTYPE)


def test_stance_matches_oracle():
    bundle = _bundle(seed=3)
    g = torch.Generator().manual_seed(4)
    w, b = torch.randn(3, 16, generator=g, dtype=HEAD_DTYPE), torch.randn(3, generator=g, dtype=HEAD_DTYPE)
    x = torch.cat([bundle.f_i, bundle.f_s, bundle.f_geo], dim=1)
    assert torch.allclose(predict_stance(bundle, w, b), _softmax_oracle(x, w, b), atol=1e-6, rtol=0)


def test_stance_shape_mismatch():
    with pytest.raises(ValueError):
        predict_stance(_bundle(), torch.zeros(3, 12, dtype=HEAD_DTYPE), torch.zeros(3, dtype=HEAD_DTYPE))


def test_topic_uniform_and_saturation():
    f_i = _bundle().f_i
    p = discriminate_topic(f_i, torch.zeros(3, 6, dtype=HEAD_DTYPE), torch.zeros(3, dtype=HEAD_DTYPE))
    assert torch.allclose(p, torch.full_like(p, 1 / 3))
    p = discriminate_topic(f_i, torch.zeros(2, 6, dtype=HEAD_DTYPE), torch.tensor([0, 1e4], dtype=HEAD_DTYPE))
    assert torch.allclose(p[:, 1], torch.ones(5, dtype=HEAD_DTYPE))


def test_topic_matches_oracle():
    f_i = _bundle(seed=7).f_i
    g = torch.Generator().manual_seed(8)
    w, b = torch.randn(4, 6, generator=g, dtype=HEAD_DTYPE), torch.randn(4, generator=g, dtype=HEAD_DTYPE)
    assert torch.allclose(discriminate_topic(f_i, w, b), _softmax_oracle(f_i, w, b), atol=1e-6, rtol=0)
    with pytest.raises(ValueError):
        discriminate_topic(f_i, torch.zeros(4, 5, dtype=HEAD_DTYPE), b)


# --------------------------------------------------------------------------- GRL

@pytest.mark.parametrize("lam", [0.0, 0.1, 1.0])
def test_grl_forward_identity_and_scaled_gradient(lam):
    x = torch.randn(7, dtype=torch.float64, requires_grad=True)
    y = grl_apply(x, lam)
    assert torch.equal(y.detach(), x.detach())
    (y * torch.arange(7.0, dtype=torch.float64)).sum().backward()
    assert torch.equal(x.grad, -lam * torch.arange(7.0, dtype=torch.float64))


def test_grl_zero_lambda_gradient_exactly_zero():
    x = torch.randn(3, dtype=torch.float64, requires_grad=True)
    torch.sin(grl_apply(x, 0.0)).sum().backward()
    assert (x.grad == 0).all()


def test_grl_finite_difference():
    x0 = torch.randn(5, dtype=torch.float64)
    f = lambda v: (torch.tanh(v) ** 2).sum() + v.prod()
    x = x0.clone().requires_grad_(True)
    f(grl_apply(x, 0.1)).backward()
    eps = 1e-6
    fd = torch.stack([(f(x0 + eps * e) - f(x0 - eps * e)) / (2 * eps) for e in torch.eye(5, dtype=torch.float64)])
    assert torch.allclose(x.grad, -0.1 * fd, rtol=1e-5, atol=1e-9)


def test_discriminator_gradient_not_reversed():
    model = build_model("tiny", _graph(), 3, vocab_size=50)
    f_i = torch.randn(4, 32, dtype=HEAD_DTYPE, requires_grad=True)
    target = torch.tensor([0, 1, 2, 0])
    loss = torch.nn.functional.cross_entropy(model.topic_logits(f_i), target)
    g_rev = torch.autograd.grad(loss, [model.topic_head.weight, f_i])
    plain = torch.nn.functional.cross_entropy(model.topic_head(f_i), target)
    g_plain = torch.autograd.grad(plain, [model.topic_head.weight, f_i])
    assert torch.allclose(g_rev[0], g_plain[0])
    assert torch.allclose(g_rev[1], -0.1 * g_plain[1])


# --------------------------------------------------------------------------- parameter counts

def _tiny_analytic(v, d=32, layers=2, inter=128, pos=160, types=2, n=5, f=128, k=3):
    emb = v * d + pos * d + types * d + 2 * d
    layer = 4 * (d * d + d) + 2 * d + (d * inter + inter) + (inter * d + d) + 2 * d
    return emb + layers * layer + (d * d + d) + (n * f + 2 * f * f) + (3 * (2 * d + f) + 3) + (k * d + k)


def test_tiny_count_matches_analytic_sum():
    model = build_model("tiny", _graph(5), 3, vocab_size=500)
    assert count_parameters(model) == _tiny_analytic(500)


def test_freezing_encoder_drops_its_count():
    model = build_model("tiny", _graph(5), 3, vocab_size=500)
    total, enc = count_parameters(model), count_parameters(model.encoder)
    for p in model.encoder.parameters():
        p.requires_grad_(False)
    assert count_parameters(model) == total - enc


def test_base_configuration_near_110m():
    n = base_parameter_count(geo_dim=256, n_regions=52, n_topics=3)
    assert abs(n / 1e6 - 110.1) / 110.1 <= 0.02


# --------------------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    graph = _graph()
    torch.manual_seed(0)
    model = build_model("tiny", graph, 2, vocab_size=60)
    ck = Checkpoint.from_model(model, graph, ["A", "B"], {"kind": "word", "vocab": []}, {"A": "x"}, seed=3)
    ck.save(tmp_path / "m.pt")
    back = Checkpoint.load(tmp_path / "m.pt")
    rebuilt = back.build_model()
    assert back.meta == {"seed": 3} and back.topics == ["A", "B"]
    for k, v in model.state_dict().items():
        assert torch.equal(v, rebuilt.state_dict()[k])


def test_checkpoint_shape_mismatch_names_tensor():
    graph = _graph()
    model = build_model("tiny", graph, 2, vocab_size=60)
    ck = Checkpoint.from_model(model, graph, ["A", "B"], {}, {})
    ck.state_dict["topic_head.weight"] = torch.zeros(5, 32, dtype=HEAD_DTYPE)
    with pytest.raises(CheckpointError, match="topic_head.weight"):
        ck.build_model()
