from __future__ import annotations

import json
import math

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autostega.errors import ConfigError, DataError, TransportError
from autostega.hashing import context_hash
from autostega.lm import NgramModel, RemoteModel, TokenContext, UniformModel, Vocabulary, train_ngram

from .oracles import fnv1a64_ref


@pytest.fixture
def demo():
    return train_ngram("a b a b a", order=1, alpha=1.0)


class TestTrain:
    def test_alpha_zero_rejected(self):
        with pytest.raises(ConfigError):
            train_ngram("a b a b", order=1, alpha=0)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ConfigError):
            train_ngram("  \n ", order=1, alpha=1)

    @pytest.mark.parametrize("order", [0, 5])
    def test_order_bounds(self, order):
        with pytest.raises(ConfigError):
            train_ngram("a b", order=order, alpha=1)

    def test_hand_count_oracle(self, demo):
        a, b = demo.vocab.id("a"), demo.vocab.id("b")
        assert len(demo.vocab) == 2
        dist = demo.next_token_distribution([a])
        assert dist.probs[b] == pytest.approx(0.75, abs=1e-15)
        assert dist.probs[a] == pytest.approx(0.25, abs=1e-15)

    def test_unseen_context_is_uniform(self):
        # "z" ends the corpus, so nothing was ever counted after it
        model = train_ngram("x y z", order=1, alpha=0.5)
        dist = model.next_token_distribution([model.vocab.id("z")])
        assert np.allclose(dist.probs, 1 / 3)

    def test_short_context_is_uniform(self, bigram_model):
        dist = bigram_model.next_token_distribution([0])
        assert np.allclose(dist.probs, 1 / len(bigram_model.vocab))

    def test_deterministic_training(self, corpus_text):
        m1 = train_ngram(corpus_text[:20000], order=2, alpha=0.3)
        m2 = train_ngram(corpus_text[:20000], order=2, alpha=0.3)
        ctx = m1.vocab.tokenize("the city")
        assert m1.next_token_distribution(ctx).probs.tobytes() == m2.next_token_distribution(ctx).probs.tobytes()

    def test_unk_absorbs_unknown_words(self):
        model = train_ngram("a b a", order=1, alpha=1, unk=True)
        assert model.vocab.tokenize("a zebra") == [model.vocab.id("a"), model.vocab.unk_id]


class TestDistribution:
    def test_uniform_model(self):
        vocab = Vocabulary(tuple(f"w{i}" for i in range(16)))
        dist = UniformModel(vocab).next_token_distribution([3, 4])
        assert np.allclose(dist.probs, 1 / 16)
        assert dist.entropy_bits == pytest.approx(4.0, abs=1e-12)

    def test_same_context_twice_identical(self, bigram_model):
        ctx = bigram_model.vocab.tokenize("the big city")
        d1 = bigram_model.next_token_distribution(ctx)
        d2 = bigram_model.next_token_distribution(ctx)
        assert d1.probs.tobytes() == d2.probs.tobytes()
        assert d1.context_hash == d2.context_hash

    def test_unknown_id_is_input_error(self, demo):
        with pytest.raises(DataError):
            demo.next_token_distribution([7])

    def test_probs_read_only(self, demo):
        dist = demo.next_token_distribution([0])
        with pytest.raises(ValueError):
            dist.probs[0] = 1.0

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 201), max_size=6))
    def test_full_support_and_normalized(self, bigram_model, ctx):
        ctx = [c % len(bigram_model.vocab) for c in ctx]
        dist = bigram_model.next_token_distribution(ctx)
        assert np.all(dist.probs > 0)
        assert abs(dist.probs.sum() - 1.0) <= 1e-9
        p = dist.probs
        assert dist.entropy_bits == pytest.approx(float(-(p * np.log2(p)).sum()), abs=1e-9)

    def test_canonical_order_ties_by_id(self):
        from autostega.lm import TokenDistribution

        dist = TokenDistribution(np.array([0.2, 0.3, 0.2, 0.3]))
        assert dist.canonical_order.tolist() == [1, 3, 0, 2]


class TestTokenize:
    def test_empty(self, demo):
        assert demo.vocab.tokenize("") == []
        assert demo.vocab.detokenize([]) == ""

    def test_whitespace_split(self, bigram_model):
        v = bigram_model.vocab
        ids = v.tokenize("the city")
        assert ids == [v.id("the"), v.id("city")]
        assert v.detokenize(ids) == "the city"

    def test_whitespace_normalization(self, bigram_model):
        v = bigram_model.vocab
        assert v.tokenize("the  city") == v.tokenize("the city")
        assert v.detokenize(v.tokenize("the \t city\n")) == "the city"

    def test_oov_without_unk_is_error(self, demo):
        with pytest.raises(DataError):
            demo.vocab.tokenize("a zebra")

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(ConfigError):
            Vocabulary(("a", "a"))


class TestContextHash:
    def test_rolling_hash_matches_reference(self):
        ids = [5, 0, 2**40, 7]
        expected = 14695981039346656037
        ref = b"".join(i.to_bytes(8, "little") for i in ids)
        assert context_hash(ids) == fnv1a64_ref(ref)
        ctx = TokenContext()
        for i in ids:
            ctx.push(i)
        assert ctx.hash == context_hash(ids)
        assert context_hash([]) == expected


class TestArtifact:
    def test_save_load_bit_exact(self, tmp_path, bigram_model):
        path = tmp_path / "m.json"
        bigram_model.save(path)
        loaded = NgramModel.load(path)
        for text in ["the city", "a big river sees", "the"]:
            ctx = bigram_model.vocab.tokenize(text)
            assert (
                loaded.next_token_distribution(ctx).probs.tobytes()
                == bigram_model.next_token_distribution(ctx).probs.tobytes()
            )

    def test_missing_artifact_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            NgramModel.load(tmp_path / "nope.json")

    def test_wrong_version_rejected(self, tmp_path, demo):
        doc = demo.to_json()
        doc["version"] = 99
        path = tmp_path / "m.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ConfigError):
            NgramModel.load(path)


def _server(vocab_size, fail_first=0, payload=None):
    calls = {"n": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        calls["n"] += 1
        body = json.loads(request.content)
        assert set(body) == {"context_ids", "model_name"}
        if calls["n"] <= fail_first:
            return httpx.Response(503)
        if payload is not None:
            return httpx.Response(200, json=payload)
        probs = np.full(vocab_size, 1.0 / vocab_size)
        return httpx.Response(200, json={"probs": probs.tolist()})

    return httpx.Client(transport=httpx.MockTransport(handler)), calls


class TestRemoteModel:
    vocab = Vocabulary(tuple(f"t{i}" for i in range(8)))

    def test_full_vocab_response(self):
        client, calls = _server(8)
        model = RemoteModel("http://lm/next", self.vocab, "demo", client=client)
        dist = model.next_token_distribution([1, 2])
        assert np.allclose(dist.probs, 1 / 8)
        model.next_token_distribution([1, 2])
        assert calls["n"] == 1  # cached per context

    def test_retries_then_succeeds(self):
        client, calls = _server(8, fail_first=2)
        model = RemoteModel("http://lm/next", self.vocab, "demo", client=client, sleep=lambda s: None)
        model.next_token_distribution([0])
        assert calls["n"] == 3

    def test_retry_exhaustion_is_transport_error(self):
        client, _ = _server(8, fail_first=10)
        model = RemoteModel("http://lm/next", self.vocab, "demo", retries=2, client=client, sleep=lambda s: None)
        with pytest.raises(TransportError) as info:
            model.next_token_distribution([0])
        assert info.value.attempts == 2 and info.value.status == 503

    def test_truncated_response_refused(self):
        client, _ = _server(8, payload={"probs": [0.5, 0.5]})
        model = RemoteModel("http://lm/next", self.vocab, "demo", client=client)
        with pytest.raises(TransportError):
            model.next_token_distribution([0])

    def test_top_k_below_vocab_refused(self):
        with pytest.raises(ConfigError):
            RemoteModel("http://lm/next", self.vocab, "demo", top_k=4)

    def test_bad_sum_refused(self):
        client, _ = _server(8, payload={"probs": [0.2] * 8})
        model = RemoteModel("http://lm/next", self.vocab, "demo", client=client)
        with pytest.raises(TransportError):
            model.next_token_distribution([0])


def test_demo_perplexity_matches_chain_rule(demo):
    from autostega.metrics import perplexity

    # first token has no context (uniform 1/2), then b|a = 0.75, a|b = 0.75, b|a = 0.75
    expected = math.exp(-(math.log(0.5) + 3 * math.log(0.75)) / 4)
    assert perplexity("a b a b", demo) == pytest.approx(expected, rel=1e-12)
