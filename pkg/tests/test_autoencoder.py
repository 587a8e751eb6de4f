"""Tests for the seq2seq autoencoder and its reconstruction score."""

import math

import numpy as np
import pytest

from aehcn.autoencoder import (
    AutoencoderConfig, AutoencoderModel, load_autoencoder, mean_score,
    pretrain, score_corpus, write_histogram_csv,
)
from aehcn.checkpoint import CheckpointError
from aehcn.corpus import Dialog, Turn, Vocabulary, build_catalog, rebuild_prev_actions, tokenize
from aehcn.nn import RngStream
from gradcheck import assert_gradients_match

SMALL = AutoencoderConfig(embed_dim=5, hidden=6, latent=4, seed=3)


@pytest.fixture
def vocab():
    return Vocabulary.from_utterances([tuple("abcdef")])  # V = 4 reserved + 6


def make_dialogs(texts, dialog_id="d0"):
    catalog = build_catalog(["act"])
    turns = [Turn(user_text=t, gold_action_id=0, prev_action_id=0,
                  tokens=tokenize(t), context_features=np.zeros(0)) for t in texts]
    d = Dialog(dialog_id, turns)
    rebuild_prev_actions(d, catalog)
    return [d]


class TestForward:
    def test_zero_weights_encode_gives_bias(self, vocab):
        model = AutoencoderModel(vocab, SMALL)
        for p in model.parameters():
            p.data[:] = 0.0
        model.b_z.data[:] = np.arange(4, dtype=float)
        z = model.encode(("a", "b"))
        np.testing.assert_array_equal(z.data, np.arange(4, dtype=float))

    def test_order_sensitivity(self, vocab):
        model = AutoencoderModel(vocab, SMALL)
        z1 = model.encode(("a", "b", "c")).data
        z2 = model.encode(("c", "b", "a")).data
        assert not np.allclose(z1, z2)

    def test_logprob_count_and_sign(self, vocab):
        model = AutoencoderModel(vocab, SMALL)
        tokens = ("a", "b", "c")
        logprobs = model.teacher_forced_logprobs(tokens, model.encode(tokens))
        assert len(logprobs) == len(tokens) + 1
        assert all(float(lp.data) <= 0.0 for lp in logprobs)

    def test_oov_maps_to_unk_not_error(self, vocab):
        model = AutoencoderModel(vocab, SMALL)
        score = model.reconstruction_score(("zzz", "a"))
        assert math.isfinite(score)

    def test_score_is_mean_of_logprobs(self, vocab):
        model = AutoencoderModel(vocab, SMALL)
        tokens = ("a", "b")
        logprobs = model.teacher_forced_logprobs(tokens, model.encode(tokens))
        total = sum(float(lp.data) for lp in logprobs)
        score = model.reconstruction_score(tokens)
        assert abs(score - (-total / len(logprobs))) < 1e-12


class TestScoreAnchors:
    def test_uniform_decoder_gives_log_vocab(self, vocab):
        # zero output weights: every step is a uniform softmax over V words
        model = AutoencoderModel(vocab, SMALL)
        model.w_out.data[:] = 0.0
        model.b_out.data[:] = 0.0
        v = len(vocab)
        for tokens in [("a",), ("a", "b", "c"), ("f", "e", "d", "c", "b", "a")]:
            score = model.reconstruction_score(tokens)
            assert abs(score - math.log(v)) < 1e-12

    def test_score_nonnegative_and_repeatable(self, vocab):
        model = AutoencoderModel(vocab, SMALL)
        model.freeze()
        first = model.reconstruction_score(("a", "c", "e"))
        assert first >= 0.0
        assert model.reconstruction_score(("a", "c", "e")) == first


class TestGradients:
    @pytest.mark.parametrize("seed", range(3))
    def test_full_path(self, seed):
        # V = 10 with the reserved tokens; three-token utterance
        vocab = Vocabulary.from_utterances([tuple("abcdef")])
        assert len(vocab) == 10
        model = AutoencoderModel(vocab, AutoencoderConfig(
            embed_dim=4, hidden=5, latent=3, seed=seed))
        tokens = ("a", "d", "f")

        def loss():
            return model.sequence_nll(tokens)

        assert_gradients_match(loss, model.parameters())


class TestPretrain:
    def test_memorizes_tiny_corpus(self, vocab):
        dialogs = make_dialogs(["a b c", "a b c"])
        config = AutoencoderConfig(embed_dim=8, hidden=16, latent=8,
                                   max_epochs=150, patience=150, seed=0)
        model, log = pretrain(dialogs, dialogs, vocab, config)
        assert model.frozen
        assert log[-1]["dev_score"] < 0.2
        assert log[0]["dev_score"] > log[-1]["dev_score"]

    def test_early_stopping_contract(self, vocab):
        dialogs = make_dialogs(["a b", "c d", "e f"])
        config = AutoencoderConfig(embed_dim=4, hidden=6, latent=3,
                                   max_epochs=4, patience=2, seed=1)
        model, log = pretrain(dialogs, dialogs, vocab, config)
        best = min(entry["dev_score"] for entry in log)
        assert mean_score(model, [("a", "b"), ("c", "d"), ("e", "f")]) == pytest.approx(best)
        assert log[0]["dev_score"] >= best

    def test_deterministic_given_seed(self, vocab):
        dialogs = make_dialogs(["a b c", "d e"])
        config = AutoencoderConfig(embed_dim=4, hidden=5, latent=3,
                                   max_epochs=2, patience=2, seed=7)
        _, log1 = pretrain(dialogs, dialogs, vocab, config)
        _, log2 = pretrain(dialogs, dialogs, vocab, config)
        assert log1 == log2

    def test_empty_training_data_rejected(self, vocab):
        with pytest.raises(ValueError):
            pretrain([], [], vocab, SMALL)


class TestScoreCorpus:
    def test_counts_and_bins(self, vocab, tmp_path):
        model = AutoencoderModel(vocab, SMALL)
        model.freeze()
        dialogs = make_dialogs(["a b", "c", "e f a"])
        records, histogram = score_corpus(model, dialogs, beta=30.0, bin_width=0.5)
        assert len(records) == 3
        assert sum(row["ind_count"] + row["ood_count"] for row in histogram) == 3
        assert len(histogram) == 60
        csv_path = tmp_path / "hist.csv"
        write_histogram_csv(histogram, csv_path)
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "bin_low,bin_high,ind_count,ood_count"
        assert len(lines) == 61

    def test_out_of_range_scores_fall_in_last_bin(self, vocab):
        model = AutoencoderModel(vocab, SMALL)
        model.freeze()
        dialogs = make_dialogs(["a b"])
        records, histogram = score_corpus(model, dialogs, beta=0.5, bin_width=0.5)
        assert records[0]["score"] > 0.5
        assert histogram[-1]["ind_count"] == 1


class TestCheckpoint:
    def test_roundtrip_bit_identical_scores(self, vocab, tmp_path):
        model = AutoencoderModel(vocab, SMALL)
        model.freeze()
        path = tmp_path / "ae.ckpt"
        model.save(path)
        loaded = load_autoencoder(path, vocab)
        for tokens in [("a",), ("b", "c", "d"), ("zzz",)]:
            assert loaded.reconstruction_score(tokens) == model.reconstruction_score(tokens)

    def test_vocab_hash_mismatch(self, vocab, tmp_path):
        model = AutoencoderModel(vocab, SMALL)
        path = tmp_path / "ae.ckpt"
        model.save(path)
        other = Vocabulary.from_utterances([("x", "y")])
        with pytest.raises(CheckpointError, match="hash"):
            load_autoencoder(path, other)

    def test_corrupted_header(self, vocab, tmp_path):
        model = AutoencoderModel(vocab, SMALL)
        path = tmp_path / "ae.ckpt"
        model.save(path)
        raw = bytearray(path.read_bytes())
        raw[0] = 0
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            load_autoencoder(path, vocab)

    def test_truncated_payload(self, vocab, tmp_path):
        model = AutoencoderModel(vocab, SMALL)
        path = tmp_path / "ae.ckpt"
        model.save(path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(CheckpointError, match="truncated"):
            load_autoencoder(path, vocab)
