"""Dialog data model, ingestion, tokenization, vocabulary and encodings.

Dialogs live in JSONL files, one dialog per line:

    {"id": "d1", "turns": [{"user": "...", "action": "...",
                            "ood": false, "segment_prefix": "..."}]}

`ood` defaults to false; `segment_prefix` is optional interjection text that
is prepended (space-joined) to the user text before tokenization. Action
strings must resolve against an :class:`ActionCatalog` built from the
training split. Context features come from a slot lexicon (JSON mapping
slot type -> surface forms) and are cumulative binary flags per dialog.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, replace

import numpy as np

from .nn import RngStream

UNK = "<unk>"
PAD = "<pad>"
SOS = "<sos>"
EOS = "<eos>"
RESERVED_TOKENS = (UNK, PAD, SOS, EOS)

START_ACTION = "<start>"
DEFAULT_FALLBACK = "sorry i did not catch that . can you please repeat ?"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class DialogFileError(ValueError):
    """Raised when a dialog file is malformed; carries the offending line."""


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase, split on whitespace, detach punctuation as separate tokens.

    Underscores count as word characters (api_call stays one token). Empty
    input yields a single UNK token so every utterance is non-empty.
    """
    tokens = tuple(_TOKEN_RE.findall(text.lower()))
    return tokens if tokens else (UNK,)


# ---------------------------------------------------------------------------
# turns and dialogs
# ---------------------------------------------------------------------------

@dataclass
class Turn:
    """One user utterance paired with the system action that answers it.

    `preset_score` is only set on counterfeit training turns, where the
    reconstruction score is sampled rather than computed.
    """

    user_text: str
    gold_action_id: int
    prev_action_id: int
    tokens: tuple[str, ...]
    context_features: np.ndarray
    ood_label: bool = False
    segment_prefix: str | None = None
    preset_score: float | None = None

    @property
    def effective_text(self) -> str:
        if self.segment_prefix:
            return f"{self.segment_prefix} {self.user_text}"
        return self.user_text


@dataclass
class Dialog:
    id: str
    turns: list[Turn]

    def __post_init__(self):
        if not self.turns:
            raise ValueError(f"dialog {self.id!r} has no turns")


@dataclass(frozen=True)
class ActionCatalog:
    """Closed set of system action templates plus fallback and start ids."""

    templates: tuple[str, ...]
    fallback_id: int
    start_id: int

    def __len__(self) -> int:
        return len(self.templates)

    def action_id(self, template: str) -> int:
        try:
            return self._index[template]
        except KeyError:
            raise KeyError(f"unknown action template: {template!r}") from None

    def __post_init__(self):
        if len(set(self.templates)) != len(self.templates):
            raise ValueError("action templates must be distinct")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.templates)})

    def content_hash(self) -> str:
        payload = "\n".join(self.templates) + f"\n#{self.fallback_id}#{self.start_id}"
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_catalog(action_templates, fallback_template: str = DEFAULT_FALLBACK) -> ActionCatalog:
    """Catalog from templates in first-appearance order; fallback is appended
    as a dedicated template if absent, and a reserved start pseudo-action is
    always appended last."""
    templates: list[str] = []
    for t in action_templates:
        if t == START_ACTION:
            raise ValueError(f"{START_ACTION!r} is reserved and may not appear as an action")
        if t not in templates:
            templates.append(t)
    if fallback_template not in templates:
        templates.append(fallback_template)
    templates.append(START_ACTION)
    return ActionCatalog(tuple(templates), templates.index(fallback_template),
                         len(templates) - 1)


# ---------------------------------------------------------------------------
# vocabulary and embeddings
# ---------------------------------------------------------------------------

class Vocabulary:
    """Token-to-index map with reserved UNK/PAD/SOS/EOS entries.

    Built from training-split user utterances only; out-of-vocabulary
    tokens map to UNK everywhere else.
    """

    def __init__(self, tokens):
        self.tokens: tuple[str, ...] = tuple(RESERVED_TOKENS) + tuple(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be distinct")
        self._index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def from_utterances(cls, utterances, min_count: int = 1) -> "Vocabulary":
        counts: dict[str, int] = {}
        order: list[str] = []
        for tokens in utterances:
            for tok in tokens:
                if tok in RESERVED_TOKENS:
                    continue
                if tok not in counts:
                    order.append(tok)
                counts[tok] = counts.get(tok, 0) + 1
        return cls([t for t in order if counts[t] >= min_count])

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, self._index[UNK])

    def ids(self, tokens) -> list[int]:
        return [self.id(t) for t in tokens]

    @property
    def unk_id(self) -> int:
        return self._index[UNK]

    @property
    def sos_id(self) -> int:
        return self._index[SOS]

    @property
    def eos_id(self) -> int:
        return self._index[EOS]

    @property
    def pad_id(self) -> int:
        return self._index[PAD]

    def content_hash(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


@dataclass
class EmbeddingTable:
    """Row-per-token embedding matrix; rows missing from a pretrained file
    are initialized uniform [-0.08, 0.08] from the seeded RNG."""

    vectors: np.ndarray
    coverage: float = 0.0

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def row(self, token_id: int) -> np.ndarray:
        return self.vectors[token_id]

    @classmethod
    def random(cls, vocab: Vocabulary, rng: RngStream, dim: int = 100) -> "EmbeddingTable":
        vectors = rng.uniform_array(-0.08, 0.08, (len(vocab), dim))
        vectors[vocab.pad_id] = 0.0
        return cls(vectors, coverage=0.0)


def load_embeddings(path, vocab: Vocabulary, rng: RngStream, dim: int = 100) -> EmbeddingTable:
    """Load pretrained vectors (token + `dim` floats per line) for the vocab.

    Tokens absent from the file keep their seeded-random rows; the returned
    table records the fraction of non-reserved tokens that were covered.
    """
    table = EmbeddingTable.random(vocab, rng, dim=dim)
    found = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts[0] == "":
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise DialogFileError(
                    f"{path}: line {lineno}: expected {dim} values, got {len(values)}")
            if token in vocab:
                table.vectors[vocab.id(token)] = np.asarray(values, dtype=np.float64)
                found += 1
    denom = max(len(vocab) - len(RESERVED_TOKENS), 1)
    table.coverage = found / denom
    return table


# ---------------------------------------------------------------------------
# utterance encodings
# ---------------------------------------------------------------------------

def encode_bow(tokens, vocab: Vocabulary) -> np.ndarray:
    """Binary bag-of-words over the vocabulary (OOV collapses onto UNK)."""
    vec = np.zeros(len(vocab))
    for tok in tokens:
        vec[vocab.id(tok)] = 1.0
    return vec


def encode_avg_embedding(tokens, vocab: Vocabulary, table: EmbeddingTable) -> np.ndarray:
    """Arithmetic mean of the token embedding rows."""
    if not tokens:
        raise ValueError("cannot average embeddings of an empty utterance")
    ids = vocab.ids(tokens)
    return table.vectors[ids].mean(axis=0)


def encode_utterance_bowavg(tokens, vocab: Vocabulary, table: EmbeddingTable) -> np.ndarray:
    """Concatenated bag-of-words and average-embedding encoding."""
    return np.concatenate([encode_bow(tokens, vocab),
                           encode_avg_embedding(tokens, vocab, table)])


# ---------------------------------------------------------------------------
# context features
# ---------------------------------------------------------------------------

class SlotLexicon:
    """Slot type -> surface forms; drives the default context extractor."""

    def __init__(self, slots: dict[str, list[str]]):
        self.slot_names = tuple(slots.keys())
        self._forms = {name: tuple(tokenize(form) for form in forms)
                       for name, forms in slots.items()}

    def __len__(self) -> int:
        return len(self.slot_names)

    @classmethod
    def from_file(cls, path) -> "SlotLexicon":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def matches(self, slot: str, tokens) -> bool:
        tokens = tuple(tokens)
        for form in self._forms[slot]:
            k = len(form)
            if any(tokens[i:i + k] == form for i in range(len(tokens) - k + 1)):
                return True
        return False


EMPTY_LEXICON = SlotLexicon({})


def extract_context_features(tokens, lexicon: SlotLexicon,
                             prev: np.ndarray | None = None) -> np.ndarray:
    """One cumulative binary flag per slot type: set once any surface form
    matches, and carried forward from `prev` for the rest of the dialog."""
    flags = np.zeros(len(lexicon)) if prev is None else prev.copy()
    for i, slot in enumerate(lexicon.slot_names):
        if flags[i] == 0.0 and lexicon.matches(slot, tokens):
            flags[i] = 1.0
    return flags


def attach_context_features(dialog: Dialog, lexicon: SlotLexicon) -> None:
    """Recompute cumulative context flags over a dialog, in place.

    OOD-labeled turns do not update the flag state (foreign input does not
    feed the domain-specific feature code); they carry the running flags.
    """
    prev: np.ndarray | None = None
    for turn in dialog.turns:
        if turn.ood_label:
            turn.context_features = np.zeros(len(lexicon)) if prev is None else prev.copy()
        else:
            turn.context_features = extract_context_features(turn.tokens, lexicon, prev)
        prev = turn.context_features


def rebuild_prev_actions(dialog: Dialog, catalog: ActionCatalog) -> None:
    """Re-derive every turn's previous-action id from the realized sequence."""
    prev = catalog.start_id
    for turn in dialog.turns:
        turn.prev_action_id = prev
        prev = turn.gold_action_id


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def read_dialog_records(path) -> list[dict]:
    """Parse and schema-check raw JSONL records, reporting line numbers."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DialogFileError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict) or "id" not in record or "turns" not in record:
                raise DialogFileError(f"{path}: line {lineno}: expected an object "
                                      "with 'id' and 'turns'")
            if not isinstance(record["turns"], list) or not record["turns"]:
                raise DialogFileError(f"{path}: line {lineno}: 'turns' must be a non-empty list")
            for turn in record["turns"]:
                if not isinstance(turn, dict) or "user" not in turn or "action" not in turn:
                    raise DialogFileError(f"{path}: line {lineno}: every turn needs "
                                          "'user' and 'action'")
            record["_line"] = lineno
            records.append(record)
    return records


def load_dialog_file(path, catalog: ActionCatalog,
                     lexicon: SlotLexicon = EMPTY_LEXICON) -> list[Dialog]:
    """Load dialogs from JSONL, validating actions against the catalog."""
    dialogs = []
    for record in read_dialog_records(path):
        lineno = record["_line"]
        turns = []
        for raw in record["turns"]:
            try:
                gold = catalog.action_id(raw["action"])
            except KeyError as exc:
                raise DialogFileError(f"{path}: line {lineno}: {exc.args[0]}") from None
            ood = bool(raw.get("ood", False))
            if ood and gold != catalog.fallback_id:
                raise DialogFileError(f"{path}: line {lineno}: OOD turns must carry "
                                      "the fallback action")
            prefix = raw.get("segment_prefix") or None
            text = raw["user"]
            full = f"{prefix} {text}" if prefix else text
            turns.append(Turn(user_text=text, gold_action_id=gold, prev_action_id=0,
                              tokens=tokenize(full), context_features=np.zeros(len(lexicon)),
                              ood_label=ood, segment_prefix=prefix))
        dialog = Dialog(id=str(record["id"]), turns=turns)
        rebuild_prev_actions(dialog, catalog)
        attach_context_features(dialog, lexicon)
        dialogs.append(dialog)
    return dialogs


def dialog_to_record(dialog: Dialog, catalog: ActionCatalog) -> dict:
    turns = []
    for turn in dialog.turns:
        raw: dict = {"user": turn.user_text, "action": catalog.templates[turn.gold_action_id]}
        if turn.ood_label:
            raw["ood"] = True
        if turn.segment_prefix:
            raw["segment_prefix"] = turn.segment_prefix
        turns.append(raw)
    return {"id": dialog.id, "turns": turns}


def write_dialog_file(dialogs, catalog: ActionCatalog, path) -> None:
    """Write dialogs back to the JSONL schema (round-trips with load)."""
    with open(path, "w", encoding="utf-8") as fh:
        for dialog in dialogs:
            fh.write(json.dumps(dialog_to_record(dialog, catalog), sort_keys=True))
            fh.write("\n")


def corpus_stats(dialogs) -> dict:
    """Dialog count and average turns per dialog (ingestion sanity report)."""
    n = len(dialogs)
    turns = sum(len(d.turns) for d in dialogs)
    return {"dialogs": n, "turns": turns,
            "avg_turns": round(turns / n, 2) if n else 0.0}


# ---------------------------------------------------------------------------
# dataset bundle
# ---------------------------------------------------------------------------

@dataclass
class DatasetBundle:
    """Everything one experiment needs: splits, catalog, vocab, lexicon."""

    train: list[Dialog]
    dev: list[Dialog]
    test: list[Dialog]
    test_ood: list[Dialog] | None
    catalog: ActionCatalog
    vocabulary: Vocabulary
    lexicon: SlotLexicon
    precision_k: int = 1

    def __post_init__(self):
        if self.precision_k not in (1, 3):
            raise ValueError("precision_k must be 1 or 3")
        ids: set[str] = set()
        for split in (self.train, self.dev, self.test):
            for dialog in split:
                if dialog.id in ids:
                    raise ValueError(f"dialog id {dialog.id!r} appears in multiple splits")
                ids.add(dialog.id)


def load_bundle(train_path, dev_path, test_path, test_ood_path=None,
                lexicon: SlotLexicon = EMPTY_LEXICON,
                fallback_template: str = DEFAULT_FALLBACK,
                precision_k: int = 1, min_count: int = 1) -> DatasetBundle:
    """Build catalog and vocabulary from the training file, then load all splits."""
    train_records = read_dialog_records(train_path)
    actions = [turn["action"] for record in train_records for turn in record["turns"]]
    catalog = build_catalog(actions, fallback_template)
    utterances = (tokenize(turn["user"]) for record in train_records
                  for turn in record["turns"])
    vocab = Vocabulary.from_utterances(utterances, min_count=min_count)
    return DatasetBundle(
        train=load_dialog_file(train_path, catalog, lexicon),
        dev=load_dialog_file(dev_path, catalog, lexicon),
        test=load_dialog_file(test_path, catalog, lexicon),
        test_ood=(load_dialog_file(test_ood_path, catalog, lexicon)
                  if test_ood_path else None),
        catalog=catalog, vocabulary=vocab, lexicon=lexicon, precision_k=precision_k,
    )


def copy_dialog(dialog: Dialog) -> Dialog:
    """Deep-enough copy for augmentation: turns are fresh, arrays duplicated."""
    return Dialog(dialog.id, [replace(t, context_features=t.context_features.copy())
                              for t in dialog.turns])
