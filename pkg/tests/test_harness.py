"""Tests for metrics, evaluation reports, training and the sweep analyses."""

import json

import numpy as np
import pytest

from aehcn.autoencoder import AutoencoderConfig, AutoencoderModel
from aehcn.corpus import (
    DatasetBundle, Dialog, SlotLexicon, Turn, Vocabulary, build_catalog,
    rebuild_prev_actions, tokenize,
)
from aehcn.harness import (
    EvalReport, TrainConfig, TurnRecord, evaluate, mean_precision_at_k,
    ood_prf, precision_at_k, rho_sweep, threshold_sweep, train_policy,
)
from aehcn.models import PolicyModel, make_indep
from aehcn.nn import RngStream

FALLBACK = 9

# 20 hand-labeled turns: (gold, top-3 ranking, ood label)
# P@1 hits: rows 0,3,5,8,10,13,15,16,18            -> 9/20
# P@3 hits: every row except 4, 7, 12              -> 17/20
# OOD:      TP rows 15,16,18; FN rows 17,19; FP row 6
#           P = 3/4, R = 3/5, F1 = 2*(3/4)*(3/5)/((3/4)+(3/5)) = 2/3
FIXTURE = [
    (0, (0, 1, 2), False),
    (1, (0, 1, 2), False),
    (2, (3, 4, 2), False),
    (3, (3, 0, 1), False),
    (4, (5, 6, 7), False),
    (5, (5, 2, 0), False),
    (6, (9, 6, 1), False),
    (7, (1, 2, 3), False),
    (8, (8, 9, 0), False),
    (0, (1, 0, 3), False),
    (1, (1, 2, 9), False),
    (2, (0, 3, 2), False),
    (3, (4, 5, 6), False),
    (4, (4, 1, 2), False),
    (5, (0, 5, 2), False),
    (9, (9, 0, 1), True),
    (9, (9, 2, 3), True),
    (9, (0, 9, 1), True),
    (9, (9, 1, 0), True),
    (9, (2, 3, 9), True),
]


def fixture_records():
    return [TurnRecord(f"f:{i}", gold, top, None, ood, False)
            for i, (gold, top, ood) in enumerate(FIXTURE)]


class TestPrecisionAtK:
    def test_single_turn_cases(self):
        assert precision_at_k((3, 1, 2), 3, 1) == 1
        assert precision_at_k((1, 2, 3), 3, 3) == 1
        assert precision_at_k((1, 2, 0), 3, 3) == 0

    def test_fixture_matches_hand_computation(self):
        records = fixture_records()
        assert mean_precision_at_k(records, 1) == 9 / 20
        assert mean_precision_at_k(records, 3) == 17 / 20

    def test_monotone_in_k(self):
        records = fixture_records()
        assert mean_precision_at_k(records, 1) <= mean_precision_at_k(records, 2) \
            <= mean_precision_at_k(records, 3)

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            precision_at_k((1, 2), 1, 0)


class TestOodF1:
    def test_fixture_matches_hand_computation(self):
        precision, recall, f1 = ood_prf(fixture_records(), FALLBACK)
        assert precision == 0.75
        assert recall == 0.6
        assert f1 == pytest.approx(2 / 3, abs=1e-15)

    def test_all_correct_gives_one(self):
        records = [TurnRecord("a", 9, (9, 1), None, True, False),
                   TurnRecord("b", 0, (0, 1), None, False, False)]
        assert ood_prf(records, FALLBACK) == (1.0, 1.0, 1.0)

    def test_never_fallback_gives_zero_f1(self):
        # the plain dialog model never produces fallback: recall 0, F1 0
        records = [TurnRecord(f"x:{i}", gold, tuple(a for a in top if a != 9)[:2] or (0,),
                              None, ood, False)
                   for i, (gold, top, ood) in enumerate(FIXTURE)]
        precision, recall, f1 = ood_prf(records, FALLBACK)
        assert precision == 0.0 and recall == 0.0 and f1 == 0.0

    def test_no_positive_labels_gives_none(self):
        records = [TurnRecord("a", 0, (0,), None, False, False)]
        assert ood_prf(records, FALLBACK) is None

    def test_segment_turns_count_as_ind(self):
        records = [TurnRecord("a", 0, (9,), None, False, True),
                   TurnRecord("b", 9, (9,), None, True, False)]
        precision, recall, f1 = ood_prf(records, FALLBACK)
        assert precision == 0.5 and recall == 1.0


class TestEvalReport:
    def test_report_roundtrips_and_recomputes(self):
        report = EvalReport.from_records(fixture_records(), k=3, fallback_id=FALLBACK)
        data = json.loads(json.dumps(report.to_dict(), sort_keys=True))
        again = EvalReport.from_dict(data)
        assert again.precision_at_k == report.precision_at_k == 17 / 20
        assert again.ood_f1 == report.ood_f1
        assert again.n_turns == 20

    def test_no_positives_reported_as_none(self):
        records = [TurnRecord("a", 0, (0,), None, False, False)]
        report = EvalReport.from_records(records, k=1, fallback_id=FALLBACK)
        assert report.ood_f1 is None and report.ood_precision is None


# ---------------------------------------------------------------------------
# a tiny trainable bundle
# ---------------------------------------------------------------------------

LEXICON = SlotLexicon({"area": ["west", "east"]})


def grammar_dialog(dialog_id, rng):
    # two-step pattern: a request turn answered with ask_area, then an area
    # answer ("west"/"east") answered with api_call, then thanks -> bye
    catalog = build_catalog(["ask_area", "api_call", "bye"])
    area = ["west", "east"][rng.integers(2)]
    opener = ["hello i need a place", "hi find me a restaurant"][rng.integers(2)]
    closer = ["thank you bye", "thanks good bye"][rng.integers(2)]
    texts_actions = [(opener, 0), (f"in the {area} please", 1), (closer, 2)]
    turns = []
    for text, action in texts_actions:
        turns.append(Turn(user_text=text, gold_action_id=action, prev_action_id=0,
                          tokens=tokenize(text), context_features=np.zeros(1)))
    d = Dialog(dialog_id, turns)
    rebuild_prev_actions(d, catalog)
    from aehcn.corpus import attach_context_features
    attach_context_features(d, LEXICON)
    return d


@pytest.fixture(scope="module")
def tiny_bundle():
    rng = RngStream(11)
    catalog = build_catalog(["ask_area", "api_call", "bye"])
    train = [grammar_dialog(f"tr{i}", rng.derive(f"tr{i}")) for i in range(12)]
    dev = [grammar_dialog(f"dv{i}", rng.derive(f"dv{i}")) for i in range(4)]
    test = [grammar_dialog(f"te{i}", rng.derive(f"te{i}")) for i in range(4)]
    utterances = [t.tokens for d in train for t in d.turns]
    vocab = Vocabulary.from_utterances(utterances)
    return DatasetBundle(train=train, dev=dev, test=test, test_ood=None,
                         catalog=catalog, vocabulary=vocab, lexicon=LEXICON,
                         precision_k=1)


@pytest.fixture(scope="module")
def tiny_ae(tiny_bundle):
    from aehcn.autoencoder import pretrain
    config = AutoencoderConfig(embed_dim=6, hidden=10, latent=5,
                               max_epochs=3, patience=3, seed=0)
    model, _ = pretrain(tiny_bundle.train, tiny_bundle.dev,
                        tiny_bundle.vocabulary, config)
    return model


def small_cfg(**kwargs):
    defaults = dict(max_epochs=4, patience=4, seed=0)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


class TestTrainPolicy:
    def test_hcn_learns_without_counterfeits(self, tiny_bundle):
        model, log = train_policy(tiny_bundle, "hcn", small_cfg(rho=0.0))
        assert log[-1]["train_loss"] < log[1]["train_loss"]
        report = evaluate(model, tiny_bundle.test, 1)
        assert report.precision_at_k > 0.5
        assert log[0]["alpha"] == 0.0

    def test_deterministic_given_seed(self, tiny_bundle):
        _, log1 = train_policy(tiny_bundle, "hcn", small_cfg(rho=0.0, max_epochs=2))
        _, log2 = train_policy(tiny_bundle, "hcn", small_cfg(rho=0.0, max_epochs=2))
        assert log1 == log2

    def test_ae_variant_trains_with_counterfeits(self, tiny_bundle, tiny_ae):
        model, log = train_policy(tiny_bundle, "ae-hcn",
                                  small_cfg(rho=0.3, max_epochs=2), tiny_ae)
        assert model.config.uses_reconstruction_score
        assert log[0]["alpha"] > 0.0
        report = evaluate(model, tiny_bundle.test, 1, tiny_ae)
        assert report.n_turns == sum(len(d.turns) for d in tiny_bundle.test)

    def test_ae_variant_requires_autoencoder(self, tiny_bundle):
        with pytest.raises(ValueError, match="autoencoder"):
            train_policy(tiny_bundle, "ae-hcn", small_cfg())

    def test_indep_not_directly_trainable(self, tiny_bundle):
        with pytest.raises(ValueError, match="make_indep"):
            train_policy(tiny_bundle, "ae-hcn-indep", small_cfg())

    def test_batch_size_fixed_to_one(self):
        with pytest.raises(ValueError, match="mini-batches"):
            TrainConfig(batch_size=2)


class TestEvaluate:
    def test_turn_count_and_determinism(self, tiny_bundle):
        model = PolicyModel(tiny_bundle.vocabulary, _config(tiny_bundle, "hcn"))
        r1 = evaluate(model, tiny_bundle.test, 1)
        r2 = evaluate(model, tiny_bundle.test, 1)
        assert r1.n_turns == sum(len(d.turns) for d in tiny_bundle.test)
        assert r1.to_dict() == r2.to_dict()

    def test_clean_split_has_no_ood_metrics(self, tiny_bundle):
        model = PolicyModel(tiny_bundle.vocabulary, _config(tiny_bundle, "hcn"))
        report = evaluate(model, tiny_bundle.test, 1)
        assert report.ood_f1 is None


def _config(bundle, variant, seed=0):
    from aehcn.models import PolicyConfig
    return PolicyConfig(variant=variant, n_actions=len(bundle.catalog),
                        n_context=len(bundle.lexicon),
                        fallback_action_id=bundle.catalog.fallback_id,
                        start_action_id=bundle.catalog.start_id,
                        embed_dim=6, hidden=8, filters=4, dropout=0.0, seed=seed)


class TestSweeps:
    def test_threshold_sweep_rows_and_extremes(self, tiny_bundle, tiny_ae):
        model = PolicyModel(tiny_bundle.vocabulary, _config(tiny_bundle, "hcn", seed=5))
        # give the sweep a split that contains OOD labels
        ood_dialog = grammar_dialog("ood0", RngStream(3))
        ood_dialog.turns[1].ood_label = True
        ood_dialog.turns[1].gold_action_id = tiny_bundle.catalog.fallback_id
        rebuilt = [ood_dialog]
        from aehcn.corpus import rebuild_prev_actions
        rebuild_prev_actions(ood_dialog, tiny_bundle.catalog)
        thresholds = [float("-inf"), 1.0, 5.0, float("inf")]
        rows = threshold_sweep(model, tiny_ae, rebuilt, thresholds, k=1)
        assert len(rows) == 4
        assert rows[0]["ood_recall"] == 1.0  # -inf forces fallback everywhere
        plain = evaluate(model, rebuilt, 1)
        assert rows[-1]["precision_at_k"] == plain.precision_at_k
        recalls = [row["ood_recall"] for row in rows]
        assert recalls == sorted(recalls, reverse=True)

    def test_threshold_sweep_requires_ascending(self, tiny_bundle, tiny_ae):
        model = PolicyModel(tiny_bundle.vocabulary, _config(tiny_bundle, "hcn"))
        with pytest.raises(ValueError, match="ascending"):
            threshold_sweep(model, tiny_ae, tiny_bundle.test, [5.0, 1.0], k=1)

    def test_rho_sweep_shape(self, tiny_bundle, tiny_ae):
        bundle = DatasetBundle(
            train=tiny_bundle.train, dev=tiny_bundle.dev, test=tiny_bundle.test,
            test_ood=tiny_bundle.test, catalog=tiny_bundle.catalog,
            vocabulary=tiny_bundle.vocabulary, lexicon=tiny_bundle.lexicon,
            precision_k=1)
        rows = rho_sweep(bundle, tiny_ae, [0.0, 0.2],
                         small_cfg(max_epochs=1, patience=1), variant="ae-hcn")
        assert [row["rho"] for row in rows] == [0.0, 0.2]
        assert all("test_precision_at_k" in row and "test_ood_precision_at_k" in row
                   for row in rows)

    def test_rho_sweep_needs_test_ood(self, tiny_bundle, tiny_ae):
        with pytest.raises(ValueError, match="OOD-augmented"):
            rho_sweep(tiny_bundle, tiny_ae, [0.1], small_cfg())
