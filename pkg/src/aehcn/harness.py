"""Training loop, evaluation metrics and the sweep analyses.

Training runs one Adam update per dialog (backpropagation through the full
dialog), clips gradients by global norm, re-draws counterfeit augmentation
every epoch, and early-stops on dev Precision@K. Evaluation produces
per-turn records from which Precision@K and OOD precision/recall/F1 are
pure recomputations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .augment import CounterfeitConfig, compute_alpha, counterfeit_augment_corpus
from .corpus import DatasetBundle, Dialog
from .models import DialogState, PolicyConfig, PolicyModel, make_indep, predict_dialog
from .nn import Adam, RngStream


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 1
    clip_norm: float = 5.0
    dropout: float = 0.3
    max_epochs: int = 50
    patience: int = 5
    rho: float = 0.15
    beta: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size != 1:
            raise ValueError("training uses mini-batches of one dialog")
        for name in ("lr", "clip_norm", "max_epochs", "patience", "beta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must be in [0, 1), got {self.rho}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class TurnRecord:
    turn_id: str
    gold_action_id: int
    top_actions: tuple[int, ...]
    score: float | None
    ood_label: bool
    segment: bool


def precision_at_k(ranked, gold: int, k: int) -> int:
    """1 iff the gold action appears among the first k ranked actions."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return int(gold in tuple(ranked[:k]))


def mean_precision_at_k(records, k: int) -> float:
    if not records:
        return 0.0
    return float(np.mean([precision_at_k(r.top_actions, r.gold_action_id, k)
                          for r in records]))


def ood_prf(records, fallback_id: int) -> tuple[float, float, float] | None:
    """Binary precision/recall/F1 for OOD detection over user turns.

    A turn is predicted OOD iff its rank-one action is the fallback; the
    gold label is the turn's OOD flag (segment-prefixed turns are gold IND).
    Returns None when the records contain no positive labels.
    """
    tp = fp = fn = 0
    for r in records:
        predicted = r.top_actions[0] == fallback_id
        if r.ood_label and predicted:
            tp += 1
        elif r.ood_label:
            fn += 1
        elif predicted:
            fp += 1
    if tp + fn == 0:
        return None
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class EvalReport:
    k: int
    fallback_id: int
    n_turns: int
    precision_at_k: float
    ood_precision: float | None
    ood_recall: float | None
    ood_f1: float | None
    records: list[TurnRecord] = field(default_factory=list)

    @classmethod
    def from_records(cls, records, k: int, fallback_id: int) -> "EvalReport":
        prf = ood_prf(records, fallback_id)
        return cls(
            k=k, fallback_id=fallback_id, n_turns=len(records),
            precision_at_k=mean_precision_at_k(records, k),
            ood_precision=None if prf is None else prf[0],
            ood_recall=None if prf is None else prf[1],
            ood_f1=None if prf is None else prf[2],
            records=list(records),
        )

    def to_dict(self, include_records: bool = True) -> dict:
        out = {
            "k": self.k,
            "fallback_id": self.fallback_id,
            "n_turns": self.n_turns,
            "precision_at_k": self.precision_at_k,
            "ood_precision": self.ood_precision,
            "ood_recall": self.ood_recall,
            "ood_f1": self.ood_f1,
        }
        if include_records:
            out["records"] = [{
                "turn_id": r.turn_id,
                "gold_action_id": r.gold_action_id,
                "top_actions": list(r.top_actions),
                "score": r.score,
                "ood_label": r.ood_label,
                "segment": r.segment,
            } for r in self.records]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        records = [TurnRecord(r["turn_id"], r["gold_action_id"],
                              tuple(r["top_actions"]), r["score"],
                              r["ood_label"], r["segment"])
                   for r in data.get("records", [])]
        return cls.from_records(records, data["k"], data["fallback_id"])


def evaluate(model: PolicyModel, dialogs, k: int, autoencoder=None) -> EvalReport:
    """Predict every dialog and compute Precision@K plus OOD metrics."""
    records = []
    for dialog in dialogs:
        predictions = predict_dialog(model, dialog, autoencoder)
        for i, (turn, pred) in enumerate(zip(dialog.turns, predictions)):
            records.append(TurnRecord(
                turn_id=f"{dialog.id}:{i}",
                gold_action_id=turn.gold_action_id,
                top_actions=tuple(int(a) for a in pred.ranked[:k]),
                score=pred.score,
                ood_label=turn.ood_label,
                segment=turn.segment_prefix is not None,
            ))
    return EvalReport.from_records(records, k, model.config.fallback_action_id)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def dialog_loss(model: PolicyModel, dialog: Dialog, autoencoder=None) -> nn.Tensor:
    """Mean per-turn cross-entropy on the gold actions, BPTT across the dialog."""
    uses_score = model.config.uses_reconstruction_score
    state = model.initial_state()
    losses = []
    for turn in dialog.turns:
        score = None
        if uses_score:
            score = turn.preset_score
            if score is None:
                score = autoencoder.reconstruction_score(turn.tokens)
        state = DialogState(state.h, state.c, turn.prev_action_id)
        probs, state = model.step(state, turn.tokens, turn.context_features, score)
        losses.append(nn.cross_entropy(probs, turn.gold_action_id))
    total = losses[0]
    for extra in losses[1:]:
        total = total + extra
    return total * nn.Tensor(1.0 / len(losses))


def train_policy(bundle: DatasetBundle, variant: str, cfg: TrainConfig,
                 autoencoder=None, embeddings=None,
                 progress=None) -> tuple[PolicyModel, list[dict]]:
    """Train one policy variant on the bundle's training split.

    Counterfeit augmentation is re-drawn each epoch when rho > 0; AE variants
    score real turns with the frozen autoencoder and counterfeit turns with
    their presampled scores. Early stopping maximizes dev Precision@K and
    the best-epoch parameters are restored before returning.
    """
    if variant == "ae-hcn-indep":
        raise ValueError("ae-hcn-indep is a trained hcn plus a rule; train 'hcn' "
                         "and wrap it with make_indep")
    config = PolicyConfig(
        variant=variant,
        n_actions=len(bundle.catalog),
        n_context=len(bundle.lexicon),
        fallback_action_id=bundle.catalog.fallback_id,
        start_action_id=bundle.catalog.start_id,
        dropout=cfg.dropout,
        seed=cfg.seed,
    )
    if config.uses_reconstruction_score and autoencoder is None:
        raise ValueError(f"variant {variant!r} needs a pretrained autoencoder")
    model = PolicyModel(bundle.vocabulary, config, embeddings)
    params = model.parameters()
    optimizer = Adam(params, lr=cfg.lr)
    rng = RngStream(cfg.seed).derive("policy-train")
    k = bundle.precision_k

    alpha = 0.0
    if cfg.rho > 0.0 and autoencoder is not None:
        alpha = compute_alpha(bundle.train, autoencoder)

    def dev_metric() -> float:
        return evaluate(model, bundle.dev, k,
                        autoencoder if config.uses_reconstruction_score else None
                        ).precision_at_k

    best_metric = dev_metric()
    best_state = [p.data.copy() for p in params]
    log = [{"epoch": 0, "train_loss": None, "dev_precision_at_k": best_metric,
            "alpha": alpha}]
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        if cfg.rho > 0.0:
            cf_cfg = CounterfeitConfig(
                rho=cfg.rho, alpha=alpha, beta=cfg.beta,
                seed=rng.derive(f"counterfeit/{epoch}").seed)
            train_dialogs = counterfeit_augment_corpus(bundle.train, cf_cfg, bundle.catalog)
        else:
            train_dialogs = bundle.train
        order = rng.derive(f"shuffle/{epoch}").permutation(len(train_dialogs))
        model.train()
        total = 0.0
        for idx in order:
            loss = dialog_loss(model, train_dialogs[int(idx)], autoencoder)
            optimizer.zero_grad()
            loss.backward()
            nn.clip_by_global_norm([p.grad for p in params if p.grad is not None],
                                   cfg.clip_norm)
            optimizer.step()
            total += float(loss.data)
        model.eval()
        metric = dev_metric()
        log.append({"epoch": epoch, "train_loss": total / len(train_dialogs),
                    "dev_precision_at_k": metric})
        if progress is not None:
            progress(log[-1])
        if metric > best_metric:
            best_metric = metric
            best_state = [p.data.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    for p, data in zip(params, best_state):
        p.data[...] = data
    model.eval()
    return model, log


# ---------------------------------------------------------------------------
# the paper-style analyses
# ---------------------------------------------------------------------------

def threshold_sweep(hcn_model: PolicyModel, autoencoder, dialogs, thresholds,
                    k: int) -> list[dict]:
    """Evaluate the independent threshold rule at each threshold (ascending)."""
    thresholds = list(thresholds)
    if thresholds != sorted(thresholds):
        raise ValueError("thresholds must be ascending")
    rows = []
    for threshold in thresholds:
        indep = make_indep(hcn_model, threshold)
        report = evaluate(indep, dialogs, k, autoencoder)
        rows.append({"threshold": threshold,
                     "precision_at_k": report.precision_at_k,
                     "ood_precision": report.ood_precision,
                     "ood_recall": report.ood_recall,
                     "ood_f1": report.ood_f1})
    return rows


def rho_sweep(bundle: DatasetBundle, autoencoder, rhos, cfg: TrainConfig,
              variant: str = "ae-hcn-cnn", embeddings=None,
              progress=None) -> list[dict]:
    """Retrain the variant at each counterfeit rate from the same base seed."""
    if bundle.test_ood is None:
        raise ValueError("rho sweep needs an OOD-augmented test split")
    rows = []
    for rho in rhos:
        model, _ = train_policy(bundle, variant, replace(cfg, rho=float(rho)),
                                autoencoder, embeddings, progress=progress)
        uses_score = model.config.uses_reconstruction_score
        test = evaluate(model, bundle.test, bundle.precision_k,
                        autoencoder if uses_score else None)
        test_ood = evaluate(model, bundle.test_ood, bundle.precision_k,
                            autoencoder if uses_score else None)
        rows.append({"rho": float(rho),
                     "test_precision_at_k": test.precision_at_k,
                     "test_ood_precision_at_k": test_ood.precision_at_k,
                     "test_ood_f1": test_ood.ood_f1})
    return rows
