"""The four dialog policy variants over one recurrent skeleton.

hcn          — bag-of-words + average-embedding utterance encoding, LSTM
               state tracker, softmax over the action catalog.
ae-hcn       — same, with the autoencoder reconstruction score appended to
               the LSTM input.
ae-hcn-cnn   — ae-hcn with a conv+maxpool utterance encoder instead of
               bag-of-words + average embedding.
ae-hcn-indep — a trained hcn plus a post-hoc rule: when the reconstruction
               score exceeds a threshold, the fallback action is forced to
               rank one.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import ActionCatalog, Dialog, EmbeddingTable, Vocabulary
from .nn import Parameter, RngStream, Tensor

VARIANTS = ("hcn", "ae-hcn", "ae-hcn-cnn", "ae-hcn-indep")


@dataclass(frozen=True)
class PolicyConfig:
    variant: str
    n_actions: int
    n_context: int
    fallback_action_id: int
    start_action_id: int
    embed_dim: int = 100
    hidden: int = 200
    kernel_sizes: tuple[int, ...] = (2, 3)
    filters: int = 100
    dropout: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")

    @property
    def uses_reconstruction_score(self) -> bool:
        return self.variant in ("ae-hcn", "ae-hcn-cnn")

    @property
    def uses_cnn(self) -> bool:
        return self.variant == "ae-hcn-cnn"


@dataclass
class DialogState:
    """LSTM state plus the previous system action, reset at dialog start."""

    h: Tensor
    c: Tensor
    prev_action_id: int | None


@dataclass
class TurnPrediction:
    ranked: np.ndarray            # all catalog actions, best first
    score: float | None = None    # reconstruction score used, if any


def rank_actions(probs: np.ndarray) -> np.ndarray:
    """Action ids by descending probability; ties broken by ascending id."""
    return np.lexsort((np.arange(len(probs)), -probs))


def indep_override(ranked: np.ndarray, score: float, threshold: float,
                   fallback_id: int) -> np.ndarray:
    """Force fallback to rank one when the score strictly exceeds the threshold."""
    if score is None or not score > threshold:
        return ranked
    rest = ranked[ranked != fallback_id]
    return np.concatenate([[fallback_id], rest])


class PolicyModel:
    def __init__(self, vocab: Vocabulary, config: PolicyConfig,
                 embeddings: EmbeddingTable | None = None,
                 indep_threshold: float | None = None):
        if indep_threshold is not None and config.variant != "ae-hcn-indep":
            raise ValueError("only the ae-hcn-indep variant takes a threshold")
        self.vocab = vocab
        self.config = config
        self.indep_threshold = indep_threshold
        rng = RngStream(config.seed).derive("policy-init")
        if embeddings is not None:
            if embeddings.dim != config.embed_dim:
                raise ValueError(f"embedding table dim {embeddings.dim} != {config.embed_dim}")
            emb = embeddings.vectors.copy()
        else:
            emb = EmbeddingTable.random(vocab, rng.derive("embedding"),
                                        dim=config.embed_dim).vectors
        self.embedding = Parameter(emb, "policy.embedding")
        if config.uses_cnn:
            self.conv = nn.init_conv_maxpool(config.embed_dim, rng.derive("cnn"),
                                             config.kernel_sizes, config.filters, "policy.cnn")
            x_dim = self.conv.output_dim
        else:
            self.conv = None
            x_dim = len(vocab) + config.embed_dim
        input_dim = (x_dim + config.n_actions + config.n_context
                     + (1 if config.uses_reconstruction_score else 0))
        self.lstm = nn.init_lstm(input_dim, config.hidden, rng.derive("lstm"), "policy.lstm")
        self.w_out = Parameter(rng.derive("output").uniform_array(
            -0.08, 0.08, (config.n_actions, config.hidden)), "policy.w_out")
        self.b_out = Parameter(np.zeros(config.n_actions), "policy.b_out")
        self.training = False
        self._dropout_rng = RngStream(config.seed).derive("policy-dropout")

    def parameters(self) -> list[Parameter]:
        params = [self.embedding]
        if self.conv is not None:
            params.extend(self.conv.parameters())
        params.extend(self.lstm.parameters())
        params.extend([self.w_out, self.b_out])
        return params

    def train(self) -> None:
        self.training = True

    def eval(self) -> None:
        self.training = False

    def initial_state(self) -> DialogState:
        hidden = self.config.hidden
        return DialogState(Tensor(np.zeros(hidden)), Tensor(np.zeros(hidden)),
                           self.config.start_action_id)

    # -- forward --------------------------------------------------------

    def encode_utterance(self, tokens) -> Tensor:
        ids = self.vocab.ids(tokens)
        if self.conv is not None:
            return nn.conv1d_maxpool(nn.embedding_rows(self.embedding, ids), self.conv)
        bow = np.zeros(len(self.vocab))
        bow[ids] = 1.0
        avg = nn.embedding_rows(self.embedding, ids).mean(axis=0)
        return nn.concat([Tensor(bow), avg])

    def step(self, state: DialogState, tokens, context_features,
             score: float | None = None) -> tuple[Tensor, DialogState]:
        """One policy turn: encode, update the LSTM, return the action distribution.

        The new state's previous action is left unset; the caller decides
        what history to thread (evaluation feeds the gold chain).
        """
        cfg = self.config
        if cfg.uses_reconstruction_score and score is None:
            raise ValueError(f"variant {cfg.variant!r} requires a reconstruction score")
        if not cfg.uses_reconstruction_score and score is not None:
            raise ValueError(f"variant {cfg.variant!r} does not take a reconstruction score")
        if state.prev_action_id is None:
            raise ValueError("dialog state has no previous action id")
        context = np.asarray(context_features, dtype=np.float64)
        if context.shape != (cfg.n_context,):
            raise ValueError(f"context features have shape {context.shape}, "
                             f"expected ({cfg.n_context},)")
        x = nn.dropout(self.encode_utterance(tokens), cfg.dropout, self.training,
                       self._dropout_rng)
        prev = np.zeros(cfg.n_actions)
        prev[state.prev_action_id] = 1.0
        parts = [x, Tensor(prev), Tensor(context)]
        if cfg.uses_reconstruction_score:
            parts.append(Tensor(np.array([score])))
        h, c = nn.lstm_cell(nn.concat(parts), state.h, state.c, self.lstm)
        probs = nn.softmax(self.w_out @ h + self.b_out)
        return probs, DialogState(h, c, None)

    # -- persistence ------------------------------------------------------

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(p.name, p.data) for p in self.parameters()]

    def save(self, path) -> None:
        meta = {
            "variant": self.config.variant,
            "n_actions": self.config.n_actions,
            "n_context": self.config.n_context,
            "fallback_action_id": self.config.fallback_action_id,
            "start_action_id": self.config.start_action_id,
            "embed_dim": self.config.embed_dim,
            "hidden": self.config.hidden,
            "kernel_sizes": list(self.config.kernel_sizes),
            "filters": self.config.filters,
            "dropout": self.config.dropout,
            "seed": self.config.seed,
            "indep_threshold": self.indep_threshold,
        }
        save_checkpoint(path, kind="policy", meta=meta,
                        vocab_hash=self.vocab.content_hash(),
                        named_params=self.named_arrays())


def load_policy(path, vocab: Vocabulary,
                catalog: ActionCatalog | None = None) -> PolicyModel:
    """Load a policy checkpoint, validating vocab (and optionally catalog)."""
    kind, meta, vocab_hash, arrays = load_checkpoint(path)
    if kind != "policy":
        raise CheckpointError(f"{path}: checkpoint holds a {kind!r}, not a policy")
    if vocab_hash != vocab.content_hash():
        raise CheckpointError(f"{path}: vocabulary hash mismatch")
    threshold = meta.pop("indep_threshold", None)
    meta["kernel_sizes"] = tuple(meta.get("kernel_sizes", (2, 3)))
    config = PolicyConfig(**meta)
    if catalog is not None:
        if (len(catalog) != config.n_actions
                or catalog.fallback_id != config.fallback_action_id
                or catalog.start_id != config.start_action_id):
            raise CheckpointError(f"{path}: action catalog mismatch")
    model = PolicyModel(vocab, config, indep_threshold=threshold)
    for param in model.parameters():
        stored = arrays.get(param.name)
        if stored is None or stored.shape != param.data.shape:
            raise CheckpointError(f"{path}: missing or misshaped tensor {param.name!r}")
        param.data[...] = stored
    return model


def make_indep(hcn_model: PolicyModel, threshold: float) -> PolicyModel:
    """Wrap a trained hcn with the independent threshold rule (shared weights)."""
    if hcn_model.config.variant != "hcn":
        raise ValueError("the independent rule wraps a plain hcn model")
    model = copy.copy(hcn_model)
    model.config = replace(hcn_model.config, variant="ae-hcn-indep")
    model.indep_threshold = float(threshold)
    return model


# ---------------------------------------------------------------------------
# inference over a dialog
# ---------------------------------------------------------------------------

def predict_dialog(model: PolicyModel, dialog: Dialog,
                   autoencoder=None) -> list[TurnPrediction]:
    """Rank actions for every turn, threading teacher-forced gold history.

    AE variants (and the indep rule) score each utterance with the frozen
    autoencoder unless the turn carries a presampled score.
    """
    cfg = model.config
    needs_score = cfg.uses_reconstruction_score or model.indep_threshold is not None
    if needs_score and autoencoder is None:
        raise ValueError(f"variant {cfg.variant!r} needs an autoencoder at inference")
    was_training = model.training
    model.eval()
    predictions = []
    state = model.initial_state()
    with nn.no_grad():
        for turn in dialog.turns:
            score = None
            if needs_score:
                score = turn.preset_score
                if score is None:
                    score = autoencoder.reconstruction_score(turn.tokens)
            state = DialogState(state.h, state.c, turn.prev_action_id)
            probs, state = model.step(state, turn.tokens, turn.context_features,
                                      score if cfg.uses_reconstruction_score else None)
            ranked = rank_actions(probs.data)
            if model.indep_threshold is not None:
                ranked = indep_override(ranked, score, model.indep_threshold,
                                        cfg.fallback_action_id)
            predictions.append(TurnPrediction(ranked=ranked, score=score))
    if was_training:
        model.train()
    return predictions
