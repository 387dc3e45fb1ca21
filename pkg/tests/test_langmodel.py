import math

import pytest
import torch

from attnhtr.attention import AttentionConfig
from attnhtr.decoder import CharDecoder, DecoderConfig
from attnhtr.encoder import EncoderConfig
from attnhtr.errors import DimensionMismatch, EmptyCorpus, IndexOutOfRange, InvalidConfig
from attnhtr.langmodel import (CharLM, DeepFusionHead, FusionConfig, LMConfig,
                               candidate_step, fuse_deep, fuse_shallow,
                               inject_activation, lm_pretrain, lm_step)
from attnhtr.model import Recognizer
from attnhtr.vocab import build_vocabulary

from oracles import check_gradients


@pytest.fixture(scope="module")
def ab_model():
    """LM trained on a strictly alternating corpus: after 'a' comes 'b'."""
    vocab = build_vocabulary(["ab"])
    corpus = "ab" * 5000
    result = lm_pretrain(corpus, vocab, LMConfig(embedding_dim=16, state_dim=32, layers=1),
                         epochs=5, window=32, batch_size=32, seed=0)
    return vocab, corpus, result


class TestPretrain:
    def test_bigram_probability_matches_count_oracle(self, ab_model):
        vocab, corpus, result = ab_model
        # count-based oracle: P(b | a) in the corpus
        follows = {}
        for prev, nxt in zip(corpus, corpus[1:]):
            follows.setdefault(prev, []).append(nxt)
        count_p = follows["a"].count("b") / len(follows["a"])
        assert count_p == 1.0

        lm = result.model
        state = lm.initial_state(1)
        prob = None
        for ch in "ababa":  # warm the state, then query after 'a'
            out, state = lm_step(torch.tensor([vocab.char_to_index[ch]]), state, lm)
            prob = torch.softmax(out.logits, dim=-1)[0, vocab.char_to_index["b"]]
        assert float(prob) > 0.9

    def test_perplexity_beats_uniform(self, ab_model):
        vocab, _, result = ab_model
        assert result.perplexity < vocab.size

    def test_loss_descends(self, ab_model):
        _, _, result = ab_model
        assert result.epoch_losses[4] < result.epoch_losses[0]

    def test_empty_corpus(self):
        vocab = build_vocabulary(["ab"])
        with pytest.raises(EmptyCorpus):
            lm_pretrain("", vocab, LMConfig())

    def test_unknown_characters_dropped_with_warning(self, caplog):
        vocab = build_vocabulary(["ab"])
        with caplog.at_level("WARNING"):
            lm_pretrain("aXbXaXb" * 10, vocab, LMConfig(embedding_dim=4, state_dim=8, layers=1),
                        epochs=1, window=4)
        assert any("dropped" in r.message for r in caplog.records)


class TestLMStep:
    def test_softmax_normalizes(self):
        lm = CharLM(9, LMConfig(embedding_dim=4, state_dim=8, layers=2))
        out, _ = lm_step(torch.tensor([3]), lm.initial_state(1), lm)
        assert abs(float(torch.softmax(out.logits, -1).sum()) - 1.0) < 1e-6

    def test_deterministic(self):
        lm = CharLM(9, LMConfig(embedding_dim=4, state_dim=8, layers=1))
        lm.eval()
        s = lm.initial_state(1)
        a, sa = lm_step(torch.tensor([2]), s, lm)
        b, sb = lm_step(torch.tensor([2]), s, lm)
        assert torch.equal(a.logits, b.logits) and torch.equal(sa, sb)

    def test_index_out_of_range(self):
        lm = CharLM(9, LMConfig())
        with pytest.raises(IndexOutOfRange):
            lm_step(torch.tensor([9]), lm.initial_state(1), lm)


class TestShallowFusion:
    def test_beta_zero_is_recognizer_argmax(self):
        torch.manual_seed(1)
        for _ in range(50):
            rec = torch.randn(1, 9)
            lm = torch.randn(1, 9)
            assert int(fuse_shallow(rec, lm, 0.0)) == int(rec.max(-1).indices)

    def test_flat_recognizer_defers_to_lm(self):
        rec = torch.zeros(1, 5)
        lm = torch.randn(1, 5)
        assert int(fuse_shallow(rec, lm, 1.0)) == int(lm.max(-1).indices)

    def test_hand_arithmetic(self):
        rec = torch.log(torch.tensor([[0.6, 0.4]]))
        lm = torch.log(torch.tensor([[0.1, 0.9]]))
        # softmax recovers the probabilities; sums are (0.7, 1.3)
        assert int(fuse_shallow(rec, lm, 1.0)) == 1

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            fuse_shallow(torch.zeros(1, 4), torch.zeros(1, 5), 0.5)


class TestDeepFusion:
    def test_input_width_is_sum_of_parts(self):
        head = DeepFusionHead(state_dim=6, lm_state_dim=8, feature_dim=5, hidden=7, vocab_size=9)
        assert head.fc1.in_features == 6 + 8 + 5

    def test_zeroed_lm_columns_ignore_lm_state(self):
        torch.manual_seed(0)
        head = DeepFusionHead(6, 8, 5, hidden=7, vocab_size=9).double()
        with torch.no_grad():
            head.fc1.weight[:, 6:14] = 0.0
        s = torch.randn(1, 6, dtype=torch.double)
        c = torch.randn(1, 5, dtype=torch.double)
        out1 = fuse_deep(s, torch.randn(1, 8, dtype=torch.double), c, head)
        out2 = fuse_deep(s, torch.randn(1, 8, dtype=torch.double), c, head)
        assert float((out1 - out2).abs().max()) == 0.0

    def test_gradients(self):
        torch.manual_seed(2)
        head = DeepFusionHead(6, 8, 5, hidden=7, vocab_size=9).double()
        s = torch.randn(1, 6, dtype=torch.double)
        s_lm = torch.randn(1, 8, dtype=torch.double)
        c = torch.randn(1, 5, dtype=torch.double)
        target = torch.randn(1, 9, dtype=torch.double)

        def loss_fn():
            return ((fuse_deep(s, s_lm, c, head) - target) ** 2).sum()

        assert check_gradients(loss_fn, list(head.parameters()), h=1e-4) < 1e-3

    def test_dimension_check(self):
        head = DeepFusionHead(6, 8, 5, hidden=7, vocab_size=9)
        with pytest.raises(DimensionMismatch):
            fuse_deep(torch.zeros(1, 5), torch.zeros(1, 8), torch.zeros(1, 5), head)


class TestInjectActivation:
    def test_softmax_normalizes(self):
        out = inject_activation(torch.randn(3, 8), "softmax")
        assert torch.allclose(out.sum(-1), torch.ones(3), atol=1e-6)

    def test_raw_is_bitwise_identity(self):
        p = torch.randn(2, 8)
        assert inject_activation(p, "raw") is p
        assert inject_activation(p, "raw_batchnorm") is p

    def test_sigmoid_range(self):
        out = inject_activation(torch.randn(3, 8) * 10, "sigmoid")
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0

    def test_embedding_selects_best_hypothesis(self):
        emb = torch.nn.Embedding(3, 4)
        logits = torch.tensor([[0.1, 5.0, -2.0]])
        out = inject_activation(logits, "embedding", emb)
        assert torch.equal(out[0], emb.weight[1])

    def test_unknown_variant(self):
        with pytest.raises(InvalidConfig):
            inject_activation(torch.zeros(1, 3), "fourier")


def _sibling_decoders(vocab=9, feature_dim=5, state_dim=6, emb=4, lm_dim=9):
    """A plain decoder and a fusion decoder sharing all common weights."""
    torch.manual_seed(3)
    cfg = DecoderConfig(state_dim=state_dim, layers=1, embedding_dim=emb, dropout=0.0)
    plain = CharDecoder(vocab, feature_dim, cfg).double()
    fused = CharDecoder(vocab, feature_dim, cfg, lm_input_dim=lm_dim).double()
    with torch.no_grad():
        fused.embedding.weight.copy_(plain.embedding.weight)
        fused.out.weight.copy_(plain.out.weight)
        fused.out.bias.copy_(plain.out.bias)
        fused.gru.weight_hh_l0.copy_(plain.gru.weight_hh_l0)
        fused.gru.bias_ih_l0.copy_(plain.gru.bias_ih_l0)
        fused.gru.bias_hh_l0.copy_(plain.gru.bias_hh_l0)
        fused.gru.weight_ih_l0.zero_()
        fused.gru.weight_ih_l0[:, :feature_dim + emb] = plain.gru.weight_ih_l0
    return plain, fused


class TestCandidateStep:
    def test_zero_lm_block_matches_plain_step(self):
        plain, fused = _sibling_decoders()
        plain.eval(); fused.eval()
        c = torch.randn(1, 5, dtype=torch.double)
        emb = torch.randn(1, 4, dtype=torch.double)
        s0 = torch.randn(1, 1, 6, dtype=torch.double)
        s_plain = plain.step(c, emb, s0)
        s_fused = candidate_step(c, emb, torch.zeros(1, 9, dtype=torch.double),
                                 s0, "raw", fused)
        assert float((s_plain - s_fused).abs().max()) < 1e-6

    def test_gradient_sparsity_reveals_block_layout(self):
        _, fused = _sibling_decoders()
        torch.manual_seed(4)
        with torch.no_grad():  # restore a dense input weight for this check
            fused.gru.weight_ih_l0.normal_(0, 0.1)
        fused.eval()
        s0 = torch.zeros(1, 1, 6, dtype=torch.double)
        blocks = {
            "context": (0, 5),
            "embedding": (5, 9),
            "lm": (9, 18),
        }
        for name, (lo, hi) in blocks.items():
            c = torch.zeros(1, 5, dtype=torch.double)
            emb = torch.zeros(1, 4, dtype=torch.double)
            p_lm = torch.zeros(1, 9, dtype=torch.double)
            vec = {"context": c, "embedding": emb, "lm": p_lm}[name]
            vec += torch.randn_like(vec)
            fused.zero_grad()
            out = candidate_step(c, emb, p_lm, s0, "raw", fused)
            out.sum().backward()
            grad = fused.gru.weight_ih_l0.grad
            complement = [j for j in range(grad.shape[1]) if not lo <= j < hi]
            assert float(grad[:, lo:hi].abs().sum()) > 0.0
            assert float(grad[:, complement].abs().sum()) == 0.0

    def test_lm_gradient_flow_controlled_by_flag(self):
        vocab = build_vocabulary(["abcdef"])
        enc = EncoderConfig(backbone="tiny", positional_mode="positional_encoding",
                            feature_dim=8, input_height=8, dropout=0.0)
        dec = DecoderConfig(state_dim=6, layers=1, embedding_dim=4, dropout=0.0, max_steps=6)
        for trainable in (True, False):
            torch.manual_seed(0)
            fusion = FusionConfig(mode="candidate", injection="raw", lm_trainable=trainable,
                                  lm=LMConfig(embedding_dim=4, state_dim=8, layers=1))
            model = Recognizer(vocab, enc, AttentionConfig(variant="content"), dec, fusion)
            model.train()
            images = torch.rand(2, 1, 8, 32)
            inputs = torch.tensor([[0, 3, 4], [0, 5, 6]])
            logits = model.forward_teacher(images, [32, 32], inputs)
            logits.sum().backward()
            lm_grads = [p.grad for p in model.lm.parameters()]
            if trainable:
                assert any(g is not None and float(g.abs().sum()) > 0 for g in lm_grads)
            else:
                assert all(g is None for g in lm_grads)

    def test_width_mismatch_rejected(self):
        _, fused = _sibling_decoders()
        with pytest.raises(DimensionMismatch):
            candidate_step(torch.zeros(1, 5, dtype=torch.double),
                           torch.zeros(1, 4, dtype=torch.double),
                           torch.zeros(1, 5, dtype=torch.double),  # wrong LM width
                           torch.zeros(1, 1, 6, dtype=torch.double), "raw", fused)


class TestBatchNormInjection:
    def test_normalizes_concatenated_input_pre_affine(self):
        torch.manual_seed(5)
        cfg = DecoderConfig(state_dim=6, layers=1, embedding_dim=4, dropout=0.0)
        dec = CharDecoder(9, 5, cfg, lm_input_dim=9, input_batchnorm=True).double()
        dec.train()
        captured = {}
        dec.input_bn.register_forward_hook(lambda m, i, o: captured.update(out=o))

        c = torch.randn(64, 5, dtype=torch.double)
        emb = torch.randn(64, 4, dtype=torch.double) * 3 + 1
        p_lm = torch.randn(64, 9, dtype=torch.double) * 10
        s0 = torch.zeros(1, 64, 6, dtype=torch.double)
        candidate_step(c, emb, p_lm, s0, "raw_batchnorm", dec)

        normalized = captured["out"]  # affine is still identity (gamma=1, beta=0)
        mean = normalized.mean(dim=0)
        var = normalized.var(dim=0, unbiased=False)
        assert float(mean.abs().max()) < 1e-5
        assert float((var - 1).abs().max()) < 1e-3


class TestRecognizerFusionModes:
    def _tiny_model(self, mode, seed=0, **fusion_kwargs):
        torch.manual_seed(seed)
        vocab = build_vocabulary(["abcd"])
        fusion = FusionConfig(mode=mode, lm=LMConfig(embedding_dim=4, state_dim=8, layers=1),
                              **fusion_kwargs)
        model = Recognizer(
            vocab,
            EncoderConfig(backbone="tiny", positional_mode="positional_encoding",
                          feature_dim=8, input_height=8, dropout=0.0),
            AttentionConfig(variant="content"),
            DecoderConfig(state_dim=6, layers=1, embedding_dim=4, dropout=0.0, max_steps=8),
            fusion)
        model.eval()
        return model, vocab

    def test_shallow_beta_zero_equals_none_transcriptions(self):
        model, vocab = self._tiny_model("shallow", shallow_weight=0.0)
        none_cfg = FusionConfig(mode="none")
        torch.manual_seed(6)
        for _ in range(25):
            H = torch.randn(2, 5, 8)
            with_lm = model.greedy_from_features(H)
            without = model.greedy_from_features(H, fusion=none_cfg)
            assert [r.tokens for r in with_lm] == [r.tokens for r in without]

    def test_deep_fusion_head_drives_output(self):
        model, vocab = self._tiny_model("deep")
        H = torch.randn(1, 5, 8)
        results = model.greedy_from_features(H)
        assert len(results) == 1 and len(results[0].tokens) >= 1

    def test_candidate_logits_remain_vocab_sized(self):
        for injection in ("softmax", "sigmoid", "embedding", "raw", "raw_batchnorm"):
            model, vocab = self._tiny_model("candidate", injection=injection)
            inputs = torch.tensor([[vocab.go_index, 3, 4]])
            logits = model.logits_from_features(torch.randn(1, 5, 8), None, inputs)
            assert logits.shape == (1, 3, vocab.size)
