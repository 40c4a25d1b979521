"""Small masked-LM encoder with entity detection and classification heads.

The encoder turns a (partially masked) token sequence into a matrix of
hidden vectors, one row per token. Three heads read it: a masked-token
predictor, a per-token BIO tagger and a span-level entity classifier. The
loss functions take log-probabilities so they can be checked directly
against closed forms.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .corpus import EntitySpan


class SequenceTooLongError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = 0
    n_bio: int = 3
    n_classes: int = 1
    hidden_dim: int = 128
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 256
    max_seq_len: int = 128
    ed_proj_dim: int = 100
    el_proj_dim: int = 100
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden_dim % self.n_heads:
            raise ValueError("hidden_dim must be divisible by n_heads")
        if self.ed_proj_dim < 1 or self.el_proj_dim < 1:
            raise ValueError("ed_proj_dim and el_proj_dim must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        dh = d // self.n_heads
        q, k, v = self.qkv(x).view(b, t, 3, self.n_heads, dh).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = self.drop(scores.softmax(-1))
        ctx = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.out(ctx)


class EncoderLayer(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.hidden_dim)
        self.attn = SelfAttention(cfg.hidden_dim, cfg.n_heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.hidden_dim)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.hidden_dim, cfg.ffn_dim),
            nn.GELU(),
            nn.Linear(cfg.ffn_dim, cfg.hidden_dim),
        )
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, mask):
        x = x + self.drop(self.attn(self.norm1(x), mask))
        return x + self.drop(self.ffn(self.norm2(x)))


class MSLMModel(nn.Module):
    def __init__(self, cfg: EncoderConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden_dim
        self.tok_emb = nn.Embedding(cfg.vocab_size, h)
        self.pos_emb = nn.Embedding(cfg.max_seq_len, h)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_layers))
        self.final_norm = nn.LayerNorm(h)
        self.emb_drop = nn.Dropout(cfg.dropout)

        self.mlm_out = nn.Linear(h, cfg.vocab_size)
        # trainable vectors concatenated to every hidden state / span vector
        self.w_ed = nn.Parameter(torch.empty(cfg.ed_proj_dim))
        self.ed_out = nn.Linear(h + cfg.ed_proj_dim, cfg.n_bio)
        self.w_ec = nn.Parameter(torch.empty(cfg.el_proj_dim))
        self.el_out = nn.Linear(h + cfg.el_proj_dim, cfg.n_classes)
        self.reset_parameters(seed)

    @torch.no_grad()
    def reset_parameters(self, seed: int) -> None:
        """Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit norms."""
        g = torch.Generator().manual_seed(seed)
        for name, p in self.named_parameters():
            if "norm" in name:
                p.fill_(1.0 if name.endswith("weight") else 0.0)
            elif name.endswith("bias"):
                p.zero_()
            else:
                fan_in = p.shape[-1]
                bound = 1.0 / math.sqrt(fan_in)
                p.copy_(torch.rand(p.shape, generator=g, dtype=p.dtype) * 2 * bound - bound)

    # -- encoder -----------------------------------------------------------

    def encode(self, input_ids: torch.Tensor, attention_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Hidden matrix of shape (batch, n, hidden_dim)."""
        if input_ids.dim() == 1:
            input_ids = input_ids[None]
        b, t = input_ids.shape
        if t > self.cfg.max_seq_len:
            raise SequenceTooLongError(f"sequence length {t} exceeds max_seq_len {self.cfg.max_seq_len}")
        if attention_mask is None:
            attention_mask = torch.ones(b, t, dtype=torch.bool)
        pos = torch.arange(t)
        x = self.emb_drop(self.tok_emb(input_ids) + self.pos_emb(pos)[None])
        for layer in self.layers:
            x = layer(x, attention_mask)
        return self.final_norm(x)

    # -- heads (all return log-probabilities) ------------------------------

    def mlm_log_probs(self, h: torch.Tensor) -> torch.Tensor:
        return F.log_softmax(self.mlm_out(h), dim=-1)

    def ed_log_probs(self, h: torch.Tensor) -> torch.Tensor:
        w = self.w_ed.expand(*h.shape[:-1], -1)
        return F.log_softmax(self.ed_out(torch.tanh(torch.cat([h, w], dim=-1))), dim=-1)

    def el_log_probs(self, e: torch.Tensor) -> torch.Tensor:
        w = self.w_ec.expand(*e.shape[:-1], -1)
        return F.log_softmax(self.el_out(torch.tanh(torch.cat([e, w], dim=-1))), dim=-1)


def entity_representation(h: torch.Tensor, span: EntitySpan) -> torch.Tensor:
    """Mean of the span's rows of a single (n, hidden) matrix."""
    return h[span.start:span.end].mean(dim=0)


def pool_spans(h: torch.Tensor, spans: list[tuple[int, int, int]]) -> torch.Tensor:
    """Mean-pool ``(batch_index, start, end)`` spans of a batched hidden tensor."""
    b, t, d = h.shape
    if not spans:
        return h.new_zeros(0, d)
    pool = h.new_zeros(len(spans), b * t)
    for row, (bi, s, e) in enumerate(spans):
        pool[row, bi * t + s: bi * t + e] = 1.0 / (e - s)
    return pool @ h.reshape(b * t, d)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _gather_nll(log_probs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    if log_probs.shape[0] != targets.shape[0]:
        raise ValueError(f"{log_probs.shape[0]} predictions vs {targets.shape[0]} targets")
    if targets.numel() and (targets.min() < 0 or targets.max() >= log_probs.shape[-1]):
        raise ValueError("target id outside the label space")
    return -log_probs.gather(-1, targets[:, None]).squeeze(-1)


def mslm_loss(log_probs: torch.Tensor, targets: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Weighted sum of masked-token negative log-likelihoods."""
    nll = _gather_nll(log_probs, targets)
    if weights.shape != nll.shape:
        raise ValueError(f"{weights.shape[0]} weights for {nll.shape[0]} masked tokens")
    return (weights * nll).sum()


def ed_loss(log_probs: torch.Tensor, gold: torch.Tensor) -> torch.Tensor:
    """Token-level BIO cross-entropy, summed over positions."""
    return _gather_nll(log_probs, gold).sum()


def el_loss(log_probs: torch.Tensor, gold: torch.Tensor) -> torch.Tensor:
    """Entity-type cross-entropy, summed over entities."""
    return _gather_nll(log_probs, gold).sum()


@dataclass
class Batch:
    input_ids: torch.Tensor           # (B, T), masked tokens already replaced
    attention_mask: torch.Tensor      # (B, T) bool
    mlm_index: torch.Tensor           # (M, 2) batch/position of masked tokens
    mlm_targets: torch.Tensor         # (M,)
    mlm_weights: torch.Tensor         # (M,)
    bio: torch.Tensor                 # (B, T), -1 on padding
    spans: list[tuple[int, int, int]]  # gold (batch_index, start, end)
    span_labels: torch.Tensor         # (E,)


@dataclass
class LossParts:
    l_mslm: torch.Tensor
    l_ed: torch.Tensor
    l_el: torch.Tensor
    mslm_sum: float
    n_masked: int
    n_tokens: int
    n_entities: int

    @property
    def total(self) -> torch.Tensor:
        return self.l_mslm + self.l_ed + self.l_el

    def as_floats(self) -> dict[str, float]:
        return {"l_mslm": float(self.l_mslm.detach()), "l_ed": float(self.l_ed.detach()), "l_el": float(self.l_el.detach()),
                "total": float(self.total.detach()), "mslm_sum": self.mslm_sum}


def total_loss(model: MSLMModel, batch: Batch, reduction: str = "mean") -> LossParts:
    """Joint objective: masked-token, entity-detection and classification losses.

    With ``reduction="mean"`` each term is divided by its own element count
    (masked tokens, real tokens, gold entities); ``"sum"`` leaves them as sums.
    Gold spans feed the classifier (teacher forcing).
    """
    h = model.encode(batch.input_ids, batch.attention_mask)

    bi, ti = batch.mlm_index[:, 0], batch.mlm_index[:, 1]
    l_mslm = mslm_loss(model.mlm_log_probs(h[bi, ti]), batch.mlm_targets, batch.mlm_weights)

    valid = batch.attention_mask
    l_ed = ed_loss(model.ed_log_probs(h[valid]), batch.bio[valid])

    e = pool_spans(h, batch.spans)
    l_el = el_loss(model.el_log_probs(e), batch.span_labels)

    n_masked, n_tokens, n_ent = len(batch.mlm_targets), int(valid.sum()), len(batch.spans)
    mslm_sum = float(l_mslm.detach())
    if reduction == "mean":
        l_mslm = l_mslm / max(n_masked, 1)
        l_ed = l_ed / max(n_tokens, 1)
        l_el = l_el / max(n_ent, 1)
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return LossParts(l_mslm, l_ed, l_el, mslm_sum, n_masked, n_tokens, n_ent)
