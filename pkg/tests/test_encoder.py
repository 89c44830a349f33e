import pytest
import torch

from geostance.encoder import (MAX_DESC_TOKENS, WordTokenizer, build_encoder, build_pair, collate_pairs, encode,
                               tokenizer_from_state)


@pytest.fixture
def tok():
    words = [f"w{i}" for i in range(80)]
    return WordTokenizer.build([" ".join(words), "policy text"], vocab_size=200)


def test_description_truncated_to_50(tok):
    desc = " ".join(f"w{i}" for i in range(60))
    pair = build_pair(desc, "w1 w2", tok)
    first_sep = pair.token_ids.index(tok.sep_id)
    assert first_sep - 1 == MAX_DESC_TOKENS
    assert list(pair.token_ids[1:first_sep]) == tok.tokenize(desc)[:50]


def test_text_truncated_independently(tok):
    text = " ".join(f"w{i % 80}" for i in range(150))
    pair = build_pair("policy", text, tok)
    assert len(pair) == 1 + 1 + 1 + 100 + 1


def test_empty_description_one_token(tok):
    pair = build_pair("", "w3", tok)
    assert len(pair) == 4
    assert pair.token_ids == (tok.cls_id, tok.sep_id, tok.tokenize("w3")[0], tok.sep_id)
    assert pair.segment_ids == (0, 0, 1, 1)


def test_empty_text_rejected(tok):
    with pytest.raises(ValueError):
        build_pair("policy", "   ", tok)


def test_mask_counts_non_padding(tok):
    pairs = [build_pair("policy", "w1", tok), build_pair("policy text", "w1 w2 w3 w4", tok)]
    batch = collate_pairs(pairs, tok.pad_id)
    assert batch["attention_mask"].sum(1).tolist() == [len(p) for p in pairs]
    assert (batch["input_ids"][batch["attention_mask"] == 0] == tok.pad_id).all()


def test_truncation_deterministic(tok):
    assert build_pair("policy", "w1 w9", tok) == build_pair("policy", "w1 w9", tok)


def test_tokenizer_state_round_trip(tok):
    back = tokenizer_from_state(tok.state())
    assert back.tokenize("w5 unknownword") == tok.tokenize("w5 unknownword")


def _encoder(tok):
    torch.manual_seed(0)
    enc = build_encoder("tiny", vocab_size=len(tok))
    enc.eval()
    return enc


def test_identical_pairs_identical_vectors(tok):
    enc = _encoder(tok)
    p = build_pair("policy", "w1 w2 w3", tok)
    with torch.no_grad():
        h = encode(enc, [p, p, build_pair("", "w4", tok)], tok.pad_id)
    assert h.shape == (3, 32)
    assert torch.equal(h[0], h[1])


def test_permutation_equivariance(tok):
    enc = _encoder(tok)
    g = torch.Generator().manual_seed(1)
    pairs = [build_pair("policy", " ".join(f"w{int(i)}" for i in torch.randint(0, 80, (n,), generator=g)), tok)
             for n in (3, 9, 1, 20, 6)]
    perm = [3, 0, 4, 2, 1]
    with torch.no_grad():
        a = encode(enc, pairs, tok.pad_id)
        b = encode(enc, [pairs[i] for i in perm], tok.pad_id)
    assert torch.allclose(a[perm], b, atol=1e-6, rtol=0)


def test_backprop_reaches_embeddings(tok):
    enc = _encoder(tok)
    enc.train()
    encode(enc, [build_pair("policy", "w1 w2", tok)], tok.pad_id).sum().backward()
    assert enc.bert.embeddings.word_embeddings.weight.grad.abs().sum() > 0


def test_capacity_error(tok):
    enc = _encoder(tok)
    n = enc.max_positions + 1
    ids = torch.full((1, n), 5)
    with pytest.raises(ValueError, match="capacity"):
        enc(ids, torch.zeros_like(ids), torch.ones_like(ids))
