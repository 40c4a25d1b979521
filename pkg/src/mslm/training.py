"""Batch assembly, the training loop, model-backed evaluation and checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .corpus import DatasetSplit, TokenSequence, TokenVocabulary, build_vocabulary
from .masking import MaskConfig, MaskPlan, derive_rng, plan_corpus, plans_digest
from .metrics import EvalReport, PredictedSpan, PredictionRecord, build_report, decode_spans, perplexity
from .model import Batch, EncoderConfig, MSLMModel, pool_spans, total_loss
from .pmi_vocab import PmiVocabulary
from .weighting import MaskWeights, compute_mask_weights, count_masks, per_token_weights

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    epochs: int = 20
    optimizer: str = "adam"
    learning_rate: float = 5e-5
    seed: int = 0
    use_mask_weights: bool = True
    threshold: float = 0.5
    remask_each_epoch: bool = True
    reduction: str = "mean"
    min_freq: int = 1
    eval_every_epoch: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.learning_rate <= 0:
            raise ValueError("batch_size, epochs and learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Labels:
    bio: tuple[str, ...]
    classes: tuple[str, ...]

    def bio_id(self, tag: str) -> int:
        try:
            return self.bio.index(tag)
        except ValueError:
            raise ValueError(f"unknown BIO tag {tag!r}") from None

    def class_id(self, label: str) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise ValueError(f"unknown entity class {label!r}") from None


def make_batch(seqs: Sequence[TokenSequence], plans: Sequence[MaskPlan | None],
               weights: Sequence[Sequence[float]], vocab: TokenVocabulary, labels: Labels,
               dtype=torch.float32) -> Batch:
    """Pad a list of sequences, replacing planned positions with ``[MASK]``."""
    t = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), t), vocab.pad_id, dtype=torch.long)
    bio = torch.full((len(seqs), t), -1, dtype=torch.long)
    att = torch.zeros((len(seqs), t), dtype=torch.bool)
    mlm_index, mlm_targets, mlm_weights, spans, span_labels = [], [], [], [], []
    for b, (s, plan, w) in enumerate(zip(seqs, plans, weights)):
        n = len(s)
        tok_ids = vocab.encode(s.tokens)
        ids[b, :n] = torch.tensor(tok_ids)
        att[b, :n] = True
        bio[b, :n] = torch.tensor([labels.bio_id(g) for g in s.tags])
        if plan is not None:
            for p, wt in zip(plan.positions, w):
                ids[b, p] = vocab.mask_id
                mlm_index.append((b, p))
                mlm_targets.append(tok_ids[p])
                mlm_weights.append(wt)
        for sp in s.spans:
            spans.append((b, sp.start, sp.end))
            span_labels.append(labels.class_id(sp.label))
    return Batch(
        input_ids=ids,
        attention_mask=att,
        mlm_index=torch.tensor(mlm_index, dtype=torch.long).reshape(-1, 2),
        mlm_targets=torch.tensor(mlm_targets, dtype=torch.long),
        mlm_weights=torch.tensor(mlm_weights, dtype=dtype),
        bio=bio,
        spans=spans,
        span_labels=torch.tensor(span_labels, dtype=torch.long),
    )


def epoch_weights(plans: Sequence[MaskPlan], train_cfg: TrainConfig) -> MaskWeights | None:
    """Mask-specific weights for one epoch's plans, or None when not applicable."""
    if not plans or plans[0].strategy != "joint":
        return None
    counts = count_masks(plans)
    if counts.total == 0:
        return None
    return compute_mask_weights(counts, train_cfg.threshold)


def plan_weights(plans, weights: MaskWeights | None, enabled: bool) -> list[list[float]]:
    if weights is None:
        return [[1.0] * len(p) for p in plans]
    return [per_token_weights(p, weights, enabled) for p in plans]


@dataclass
class TrainResult:
    model: MSLMModel
    vocab: TokenVocabulary
    labels: Labels
    encoder_config: EncoderConfig
    train_config: TrainConfig
    mask_config: MaskConfig
    log: list[dict] = field(default_factory=list)
    weights: list[dict | None] = field(default_factory=list)
    plan_digests: list[str] = field(default_factory=list)
    pmi_vocab: PmiVocabulary | None = None


def train(dataset: DatasetSplit, mask_config: MaskConfig, train_config: TrainConfig = TrainConfig(),
          encoder_config: EncoderConfig = EncoderConfig(), pmi_vocab: PmiVocabulary | None = None,
          dtype=torch.float32) -> TrainResult:
    """Train from scratch; deterministic given the configs' seeds.

    The epoch log holds mean loss components over the epoch and, when a
    validation split exists, its EM, macro-F1 and perplexity.
    """
    seed = train_config.seed
    torch.manual_seed(seed)
    vocab = build_vocabulary(dataset.train, train_config.min_freq)
    labels = Labels(dataset.bio_label_set, dataset.class_set)
    max_len = max(len(s) for s in (*dataset.train, *dataset.val, *dataset.test))
    cfg = replace(encoder_config, vocab_size=len(vocab), n_bio=len(labels.bio),
                  n_classes=max(len(labels.classes), 1),
                  max_seq_len=max(encoder_config.max_seq_len, max_len))
    model = MSLMModel(cfg, seed=seed).to(dtype)
    if train_config.optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=train_config.learning_rate)
    else:
        opt = torch.optim.SGD(model.parameters(), lr=train_config.learning_rate)

    result = TrainResult(model, vocab, labels, cfg, train_config, mask_config, pmi_vocab=pmi_vocab)
    train_seqs = list(dataset.train)
    for epoch in range(train_config.epochs):
        mask_epoch = epoch if train_config.remask_each_epoch else 0
        plans = plan_corpus(train_seqs, mask_config, mask_epoch, pmi_vocab)
        weights = epoch_weights(plans, train_config)
        per_tok = plan_weights(plans, weights, train_config.use_mask_weights)
        result.weights.append(weights.to_dict() if weights else None)
        result.plan_digests.append(plans_digest(plans))

        order = derive_rng(seed, "shuffle", epoch).permutation(len(train_seqs))
        model.train()
        sums = dict.fromkeys(("l_mslm", "l_ed", "l_el", "total"), 0.0)
        n_batches = 0
        for lo in range(0, len(order), train_config.batch_size):
            idx = order[lo:lo + train_config.batch_size]
            batch = make_batch([train_seqs[i] for i in idx], [plans[i] for i in idx],
                               [per_tok[i] for i in idx], vocab, labels, dtype)
            parts = total_loss(model, batch, train_config.reduction)
            loss = parts.total
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {n_batches}: "
                                            f"{parts.as_floats()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            for k, v in parts.as_floats().items():
                if k in sums:
                    sums[k] += v
            n_batches += 1

        entry = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
        if dataset.val and train_config.eval_every_epoch:
            report = evaluate(result, dataset.val)
            entry.update(val_em=report.em, val_f1=report.macro_f1, val_ppl=report.perplexity)
        result.log.append(entry)
        log.debug("epoch %d %s", epoch, entry)
    return result


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@torch.no_grad()
def predict(result: TrainResult, seqs: Sequence[TokenSequence], batch_size: int = 64) -> list[PredictionRecord]:
    """Decode entity spans from unmasked input; attach classifier confidence."""
    model, vocab, labels = result.model, result.vocab, result.labels
    model.eval()
    records = []
    dtype = next(model.parameters()).dtype
    for lo in range(0, len(seqs), batch_size):
        chunk = list(seqs[lo:lo + batch_size])
        batch = make_batch(chunk, [None] * len(chunk), [[]] * len(chunk), vocab, labels, dtype)
        h = model.encode(batch.input_ids, batch.attention_mask)
        bio_probs = model.ed_log_probs(h).exp().numpy()
        decoded = [decode_spans(bio_probs[b, :len(s)], labels.bio) for b, s in enumerate(chunk)]
        flat = [(b, sp.start, sp.end) for b, spans in enumerate(decoded) for sp in spans]
        conf = model.el_log_probs(pool_spans(h, flat)).exp().numpy() if flat else np.zeros((0, 1))
        k = 0
        for b, s in enumerate(chunk):
            preds = []
            for sp in decoded[b]:
                row = conf[k]
                k += 1
                preds.append(PredictedSpan(sp.start, sp.end, sp.label, float(row.max()),
                                           labels.classes[int(row.argmax())] if labels.classes else None))
            records.append(PredictionRecord(s.id, s.tokens, tuple(preds), tuple(s.spans)))
    return records


@torch.no_grad()
def masked_nlls(result: TrainResult, seqs: Sequence[TokenSequence], mask_config: MaskConfig,
                pmi_vocab: PmiVocabulary | None = None, batch_size: int = 64) -> list[float]:
    """Negative log-likelihood of every masked token under a fixed-seed masking."""
    model = result.model
    model.eval()
    plans = plan_corpus(seqs, mask_config, epoch=0, vocab=pmi_vocab)
    dtype = next(model.parameters()).dtype
    out: list[float] = []
    for lo in range(0, len(seqs), batch_size):
        chunk, cplans = list(seqs[lo:lo + batch_size]), plans[lo:lo + batch_size]
        batch = make_batch(chunk, cplans, [[1.0] * len(p) for p in cplans], result.vocab, result.labels, dtype)
        if not len(batch.mlm_targets):
            continue
        h = model.encode(batch.input_ids, batch.attention_mask)
        lp = model.mlm_log_probs(h[batch.mlm_index[:, 0], batch.mlm_index[:, 1]])
        out.extend((-lp.gather(-1, batch.mlm_targets[:, None]).squeeze(-1)).tolist())
    return out


def model_perplexity(result: TrainResult, seqs: Sequence[TokenSequence], mask_config: MaskConfig | None = None,
                     pmi_vocab: PmiVocabulary | None = None) -> float:
    return perplexity(masked_nlls(result, seqs, mask_config or result.mask_config, pmi_vocab or result.pmi_vocab))


def evaluate(result: TrainResult, seqs: Sequence[TokenSequence], pmi_vocab: PmiVocabulary | None = None,
             config_echo: dict | None = None) -> EvalReport:
    records = predict(result, seqs)
    try:
        ppl = model_perplexity(result, seqs, pmi_vocab=pmi_vocab)
    except ValueError:
        ppl = None
    return build_report(records, result.labels.classes, ppl, config_echo)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(result: TrainResult, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "encoder": result.encoder_config.to_dict(),
        "train": asdict(result.train_config),
        "mask": asdict(result.mask_config),
        "vocab": list(result.vocab.itos),
        "bio_labels": list(result.labels.bio),
        "classes": list(result.labels.classes),
        "dtype": str(next(result.model.parameters()).dtype).replace("torch.", ""),
        "weights": result.weights,
    }
    (directory / "config.json").write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    torch.save(result.model.state_dict(), directory / "model.pt")
    with open(directory / "epoch_log.jsonl", "w", encoding="utf-8") as fh:
        for entry in result.log:
            fh.write(json.dumps(entry) + "\n")
    return directory


def load_checkpoint(directory: str | Path) -> TrainResult:
    directory = Path(directory)
    header = json.loads((directory / "config.json").read_text(encoding="utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
    cfg = EncoderConfig(**header["encoder"])
    model = MSLMModel(cfg).to(getattr(torch, header.get("dtype", "float32")))
    model.load_state_dict(torch.load(directory / "model.pt", weights_only=True))
    model.eval()
    log_path = directory / "epoch_log.jsonl"
    epoch_log = [json.loads(l) for l in log_path.read_text().splitlines()] if log_path.exists() else []
    return TrainResult(
        model=model,
        vocab=TokenVocabulary(tuple(header["vocab"])),
        labels=Labels(tuple(header["bio_labels"]), tuple(header["classes"])),
        encoder_config=cfg,
        train_config=TrainConfig(**header["train"]),
        mask_config=MaskConfig(**header["mask"]),
        log=epoch_log,
        weights=header.get("weights", []),
    )

