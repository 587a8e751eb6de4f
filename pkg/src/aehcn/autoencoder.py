"""Seq2seq GRU autoencoder over user utterances and its reconstruction score.

The encoder GRU reads the token embeddings and its final state is projected
to a latent vector; the decoder GRU is initialized from the latent vector
and predicts the utterance back under teacher forcing, followed by EOS.
The reconstruction score of an utterance is its mean per-token negative
log-likelihood (tokens plus EOS) — nonnegative, and larger for utterances
the model reconstructs poorly.

The model is pretrained on in-domain data only, then frozen; scoring a
frozen model is cached and bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import nn
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import EmbeddingTable, Vocabulary
from .nn import Adam, Parameter, RngStream, Tensor


@dataclass(frozen=True)
class AutoencoderConfig:
    embed_dim: int = 100
    hidden: int = 512
    latent: int = 200
    lr: float = 1e-3
    clip_norm: float = 5.0
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0


class AutoencoderModel:
    """GRU encoder -> latent projection -> GRU decoder -> vocab softmax."""

    def __init__(self, vocab: Vocabulary, config: AutoencoderConfig,
                 embeddings: EmbeddingTable | None = None):
        self.vocab = vocab
        self.config = config
        rng = RngStream(config.seed).derive("ae-init")
        v = len(vocab)
        d, h, z = config.embed_dim, config.hidden, config.latent
        if embeddings is not None:
            if embeddings.dim != d:
                raise ValueError(f"embedding table dim {embeddings.dim} != {d}")
            emb = embeddings.vectors.copy()
        else:
            emb = EmbeddingTable.random(vocab, rng.derive("embedding"), dim=d).vectors
        self.embedding = Parameter(emb, "ae.embedding")
        self.encoder = nn.init_gru(d, h, rng.derive("encoder"), "ae.encoder")
        self.w_z = Parameter(rng.derive("latent").uniform_array(-0.08, 0.08, (z, h)), "ae.w_z")
        self.b_z = Parameter(np.zeros(z), "ae.b_z")
        self.w_dec_init = Parameter(
            rng.derive("dec-init").uniform_array(-0.08, 0.08, (h, z)), "ae.w_dec_init")
        self.b_dec_init = Parameter(np.zeros(h), "ae.b_dec_init")
        self.decoder = nn.init_gru(d, h, rng.derive("decoder"), "ae.decoder")
        self.w_out = Parameter(rng.derive("output").uniform_array(-0.08, 0.08, (v, h)), "ae.w_out")
        self.b_out = Parameter(np.zeros(v), "ae.b_out")
        self.frozen = False
        self._score_cache: dict[tuple[str, ...], float] = {}

    def parameters(self) -> list[Parameter]:
        return ([self.embedding] + self.encoder.parameters()
                + [self.w_z, self.b_z, self.w_dec_init, self.b_dec_init]
                + self.decoder.parameters() + [self.w_out, self.b_out])

    def freeze(self) -> None:
        self.frozen = True
        self._score_cache = {}

    # -- forward --------------------------------------------------------

    def encode(self, tokens) -> Tensor:
        """Run the encoder GRU over the utterance; project the final state."""
        ids = self.vocab.ids(tokens)
        if not ids:
            raise ValueError("cannot encode an empty utterance")
        embs = nn.embedding_rows(self.embedding, ids)
        h = Tensor(np.zeros(self.config.hidden))
        for i in range(len(ids)):
            h = nn.gru_cell(embs[i], h, self.encoder)
        return self.w_z @ h + self.b_z

    def teacher_forced_logprobs(self, tokens, z: Tensor) -> list[Tensor]:
        """Log-probabilities of each token (then EOS) under teacher forcing."""
        ids = self.vocab.ids(tokens)
        input_ids = [self.vocab.sos_id] + ids
        target_ids = ids + [self.vocab.eos_id]
        h = self.w_dec_init @ z + self.b_dec_init
        logprobs = []
        for inp, tgt in zip(input_ids, target_ids):
            x = self.embedding[inp]
            h = nn.gru_cell(x, h, self.decoder)
            logits = self.w_out @ h + self.b_out
            logprobs.append(nn.log_softmax(logits).pick(tgt))
        return logprobs

    def sequence_nll(self, tokens) -> Tensor:
        """Mean per-token negative log-likelihood (the reconstruction score)."""
        logprobs = self.teacher_forced_logprobs(tokens, self.encode(tokens))
        total = logprobs[0]
        for lp in logprobs[1:]:
            total = total + lp
        return -(total * Tensor(1.0 / len(logprobs)))

    def reconstruction_score(self, tokens) -> float:
        tokens = tuple(tokens)
        if self.frozen:
            cached = self._score_cache.get(tokens)
            if cached is not None:
                return cached
        with nn.no_grad():
            score = float(self.sequence_nll(tokens).data)
        if self.frozen:
            self._score_cache[tokens] = score
        return score

    # -- persistence ------------------------------------------------------

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(p.name, p.data) for p in self.parameters()]

    def save(self, path) -> None:
        save_checkpoint(path, kind="autoencoder", meta=asdict(self.config),
                        vocab_hash=self.vocab.content_hash(),
                        named_params=self.named_arrays())


def load_autoencoder(path, vocab: Vocabulary) -> AutoencoderModel:
    """Load a frozen autoencoder, validating the vocabulary hash."""
    kind, meta, vocab_hash, arrays = load_checkpoint(path)
    if kind != "autoencoder":
        raise CheckpointError(f"{path}: checkpoint holds a {kind!r}, not an autoencoder")
    if vocab_hash != vocab.content_hash():
        raise CheckpointError(f"{path}: vocabulary hash mismatch")
    model = AutoencoderModel(vocab, AutoencoderConfig(**meta))
    for param in model.parameters():
        stored = arrays.get(param.name)
        if stored is None or stored.shape != param.data.shape:
            raise CheckpointError(f"{path}: missing or misshaped tensor {param.name!r}")
        param.data[...] = stored
    model.freeze()
    return model


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------

def _utterances(dialogs) -> list[tuple[str, ...]]:
    return [tuple(turn.tokens) for dialog in dialogs for turn in dialog.turns]


def mean_score(model: AutoencoderModel, utterances) -> float:
    return float(np.mean([model.reconstruction_score(u) for u in utterances]))


def pretrain(train_dialogs, dev_dialogs, vocab: Vocabulary, config: AutoencoderConfig,
             embeddings: EmbeddingTable | None = None,
             progress=None) -> tuple[AutoencoderModel, list[dict]]:
    """Pretrain on in-domain utterances; early-stop on dev mean score.

    Returns the frozen best-epoch model and the per-epoch log.
    """
    train_utts = _utterances(train_dialogs)
    if not train_utts:
        raise ValueError("autoencoder pretraining needs a non-empty training corpus")
    dev_utts = _utterances(dev_dialogs)
    model = AutoencoderModel(vocab, config, embeddings)
    params = model.parameters()
    optimizer = Adam(params, lr=config.lr)
    rng = RngStream(config.seed).derive("ae-train")

    def dev_metric() -> float:
        return mean_score(model, dev_utts) if dev_utts else mean_score(model, train_utts)

    best_score = dev_metric()
    best_state = [p.data.copy() for p in params]
    log = [{"epoch": 0, "train_loss": None, "dev_score": best_score}]
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.derive(f"shuffle/{epoch}").permutation(len(train_utts))
        total = 0.0
        for idx in order:
            loss = model.sequence_nll(train_utts[int(idx)])
            optimizer.zero_grad()
            loss.backward()
            nn.clip_by_global_norm([p.grad for p in params if p.grad is not None],
                                   config.clip_norm)
            optimizer.step()
            total += float(loss.data)
        dev_score = dev_metric()
        log.append({"epoch": epoch, "train_loss": total / len(train_utts),
                    "dev_score": dev_score})
        if progress is not None:
            progress(log[-1])
        if dev_score < best_score:
            best_score = dev_score
            best_state = [p.data.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    for p, data in zip(params, best_state):
        p.data[...] = data
    model.freeze()
    return model, log


# ---------------------------------------------------------------------------
# corpus scoring / histograms
# ---------------------------------------------------------------------------

def score_corpus(model: AutoencoderModel, dialogs, beta: float = 30.0,
                 bin_width: float = 0.5) -> tuple[list[dict], list[dict]]:
    """Score every user utterance; bin the scores for plotting.

    Bins are fixed-width over [0, beta]; scores at or above beta land in the
    last bin so the counts always sum to the utterance count.
    """
    records = []
    for dialog in dialogs:
        for i, turn in enumerate(dialog.turns):
            records.append({"id": f"{dialog.id}:{i}",
                            "score": model.reconstruction_score(turn.tokens),
                            "ood": turn.ood_label})
    n_bins = int(np.ceil(beta / bin_width))
    histogram = [{"bin_low": round(i * bin_width, 6),
                  "bin_high": round(min((i + 1) * bin_width, beta), 6),
                  "ind_count": 0, "ood_count": 0} for i in range(n_bins)]
    for record in records:
        idx = min(int(record["score"] / bin_width), n_bins - 1)
        histogram[idx]["ood_count" if record["ood"] else "ind_count"] += 1
    return records, histogram


def write_histogram_csv(histogram, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_low,bin_high,ind_count,ood_count\n")
        for row in histogram:
            fh.write(f"{row['bin_low']},{row['bin_high']},{row['ind_count']},"
                     f"{row['ood_count']}\n")
