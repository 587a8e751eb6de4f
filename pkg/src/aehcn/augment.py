"""The two stochastic augmentation procedures.

Test-side: controlled OOD insertion — before each original turn, with
probability p_ood_start an OOD run starts (one foreign-domain turn, then
more with probability p_ood_cont each); the original turn that follows a
run gets a mistake-affirmation prefix and stays in-domain. Previous-action
ids are rewritten to the realized history, so turns after a run see the
fallback action.

Train-side: counterfeit turns — with probability rho per turn, insert one
synthetic turn before it that copies the turn's previous action and context
features, borrows a random user utterance from the same dialog, carries the
fallback action as gold, and gets a reconstruction score sampled uniformly
from [alpha, beta].
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .corpus import ActionCatalog, Dialog, Turn, rebuild_prev_actions, tokenize
from .nn import RngStream


@dataclass(frozen=True)
class TestAugmentConfig:
    __test__ = False  # not a pytest class, despite the name

    p_ood_start: float = 0.2
    p_ood_cont: float = 0.4
    seed: int = 0

    def __post_init__(self):
        for name in ("p_ood_start", "p_ood_cont"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {p}")


@dataclass(frozen=True)
class CounterfeitConfig:
    rho: float = 0.15
    alpha: float = 0.0
    beta: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must be in [0, 1), got {self.rho}")
        if not self.alpha < self.beta:
            raise ValueError(f"alpha ({self.alpha}) must be below beta ({self.beta})")


class UtterancePool:
    """Plain-text utterance pool, one per line; optionally source-tagged."""

    def __init__(self, utterances, sources=None):
        self.utterances = tuple(utterances)
        if not self.utterances:
            raise ValueError("utterance pool must not be empty")
        self.sources = tuple(sources) if sources else ("unknown",) * len(self.utterances)
        if len(self.sources) != len(self.utterances):
            raise ValueError("one source tag per utterance")

    def __len__(self) -> int:
        return len(self.utterances)

    @classmethod
    def from_file(cls, path, source: str | None = None) -> "UtterancePool":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [line.strip() for line in fh if line.strip()]
        return cls(lines, [source or str(path)] * len(lines))

    def draw(self, rng: RngStream) -> str:
        return self.utterances[rng.integers(len(self.utterances))]


# ---------------------------------------------------------------------------
# test-side OOD augmentation
# ---------------------------------------------------------------------------

def _ood_turn(text: str, catalog: ActionCatalog, context: np.ndarray) -> Turn:
    return Turn(user_text=text, gold_action_id=catalog.fallback_id, prev_action_id=0,
                tokens=tokenize(text), context_features=context.copy(), ood_label=True)


def augment_test_dialog(dialog: Dialog, ood_pool: UtterancePool, segment_pool: UtterancePool,
                        cfg: TestAugmentConfig, rng: RngStream,
                        catalog: ActionCatalog) -> Dialog:
    """Insert OOD runs and segment prefixes into one dialog.

    Inserted turns carry the running context flags of the preceding history;
    original turns keep their features. The prev-action chain is rebuilt
    from the realized augmented sequence.
    """
    new_turns: list[Turn] = []
    prev_context = None
    for original in dialog.turns:
        turn = replace(original, context_features=original.context_features.copy())
        if rng.random() < cfg.p_ood_start:
            context = (np.zeros_like(turn.context_features) if prev_context is None
                       else prev_context)
            new_turns.append(_ood_turn(ood_pool.draw(rng), catalog, context))
            while rng.random() < cfg.p_ood_cont:
                new_turns.append(_ood_turn(ood_pool.draw(rng), catalog, context))
            prefix = segment_pool.draw(rng)
            turn.segment_prefix = prefix
            turn.tokens = tokenize(turn.effective_text)
        new_turns.append(turn)
        prev_context = turn.context_features
    augmented = Dialog(dialog.id, new_turns)
    rebuild_prev_actions(augmented, catalog)
    return augmented


def augment_test_corpus(dialogs, ood_pool: UtterancePool, segment_pool: UtterancePool,
                        cfg: TestAugmentConfig, catalog: ActionCatalog) -> list[Dialog]:
    """Augment every dialog with a per-dialog RNG substream (parallel-safe)."""
    root = RngStream(cfg.seed)
    return [augment_test_dialog(d, ood_pool, segment_pool, cfg,
                                root.derive(f"test-augment/{d.id}"), catalog)
            for d in dialogs]


def strip_augmentation(dialog: Dialog, catalog: ActionCatalog) -> Dialog:
    """Undo augmentation: drop inserted turns, clear prefixes, rebuild chains."""
    kept = []
    for turn in dialog.turns:
        if turn.ood_label:
            continue
        restored = replace(turn, segment_prefix=None,
                           context_features=turn.context_features.copy(),
                           preset_score=None)
        restored.tokens = tokenize(restored.user_text)
        kept.append(restored)
    original = Dialog(dialog.id, kept)
    rebuild_prev_actions(original, catalog)
    return original


def expected_length_report(original, augmented) -> dict:
    """Average turns per dialog before and after augmentation."""
    def avg(dialogs):
        return sum(len(d.turns) for d in dialogs) / len(dialogs) if dialogs else 0.0

    return {
        "original_dialogs": len(original),
        "augmented_dialogs": len(augmented),
        "original_avg_turns": round(avg(original), 2),
        "augmented_avg_turns": round(avg(augmented), 2),
    }


# ---------------------------------------------------------------------------
# train-side counterfeit augmentation
# ---------------------------------------------------------------------------

def sample_counterfeit_score(alpha: float, beta: float, rng: RngStream) -> float:
    """Uniform draw from [alpha, beta] — the most uninformed score choice."""
    if not alpha < beta:
        raise ValueError(f"alpha ({alpha}) must be below beta ({beta})")
    return rng.uniform(alpha, beta)


def counterfeit_augment(dialog: Dialog, cfg: CounterfeitConfig, rng: RngStream,
                        catalog: ActionCatalog) -> Dialog:
    """Insert counterfeit OOD turns before randomly selected turns.

    The counterfeit copies the selected turn's previous action and context
    features; its utterance is another user utterance of the same dialog
    (never the selected turn's own, when the dialog has more than one turn).
    The selected turn itself is left untouched, original prev ids included.
    """
    new_turns: list[Turn] = []
    n = len(dialog.turns)
    for idx, turn in enumerate(dialog.turns):
        if rng.random() < cfg.rho:
            if n > 1:
                j = rng.integers(n - 1)
                if j >= idx:
                    j += 1
            else:
                j = idx
            source = dialog.turns[j]
            new_turns.append(Turn(
                user_text=source.effective_text,
                gold_action_id=catalog.fallback_id,
                prev_action_id=turn.prev_action_id,
                tokens=source.tokens,
                context_features=turn.context_features.copy(),
                ood_label=True,
                preset_score=sample_counterfeit_score(cfg.alpha, cfg.beta, rng),
            ))
        new_turns.append(turn)
    return Dialog(dialog.id, new_turns)


def counterfeit_augment_corpus(dialogs, cfg: CounterfeitConfig,
                               catalog: ActionCatalog) -> list[Dialog]:
    root = RngStream(cfg.seed)
    return [counterfeit_augment(d, cfg, root.derive(f"counterfeit/{d.id}"), catalog)
            for d in dialogs]


def compute_alpha(train_dialogs, autoencoder) -> float:
    """Maximum reconstruction score over all training user utterances."""
    scores = [autoencoder.reconstruction_score(turn.tokens)
              for dialog in train_dialogs for turn in dialog.turns]
    if not scores:
        raise ValueError("cannot compute the score ceiling of an empty corpus")
    return max(scores)
