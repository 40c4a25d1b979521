"""Mask-specific loss weights derived from corpus-level ELM/BLM mask counts."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable

from .masking import MaskKind, MaskPlan

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class MaskCounts:
    n_elm: int
    n_blm: int

    @property
    def total(self) -> int:
        return self.n_elm + self.n_blm


def count_masks(plans: Iterable[MaskPlan]) -> MaskCounts:
    """Count tokens actually masked as ELM and BLM across ``plans``."""
    n_elm = n_blm = 0
    for plan in plans:
        for k in plan.kinds:
            if k is MaskKind.ELM:
                n_elm += 1
            elif k is MaskKind.BLM:
                n_blm += 1
    return MaskCounts(n_elm, n_blm)


def raw_weights(counts: MaskCounts) -> tuple[float, float]:
    """``(w_blm, w_elm)`` with ``w_x = 1 - N_x / (N_blm + N_elm)``."""
    if counts.total <= 0:
        raise ValueError("no ELM or BLM masks counted; weights are undefined")
    total = counts.total
    return 1.0 - counts.n_blm / total, 1.0 - counts.n_elm / total


def clamp_weights(raw: tuple[float, float], threshold: float = DEFAULT_THRESHOLD) -> tuple[float, float]:
    """Cap the BLM weight at ``threshold`` and floor the ELM weight at it."""
    w_blm, w_elm = raw
    return min(w_blm, threshold), max(w_elm, threshold)


def normalize(clamped: tuple[float, float]) -> tuple[float, float]:
    """Two-way softmax, computed through the gap for stability."""
    w_blm, w_elm = clamped
    p_elm = 1.0 / (1.0 + math.exp(w_blm - w_elm))
    return 1.0 - p_elm, p_elm


@dataclass(frozen=True)
class MaskWeights:
    counts: MaskCounts
    raw_blm: float
    raw_elm: float
    clamped_blm: float
    clamped_elm: float
    final_blm: float
    final_elm: float
    threshold: float = DEFAULT_THRESHOLD

    @property
    def final(self) -> tuple[float, float]:
        return self.final_blm, self.final_elm

    def for_kind(self, kind: MaskKind) -> float:
        if kind is MaskKind.ELM:
            return self.final_elm
        if kind is MaskKind.BLM:
            return self.final_blm
        raise ValueError(f"mask-specific weights are defined for ELM/BLM only, not {kind.value}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counts"] = asdict(self.counts)
        return d


def compute_mask_weights(counts: MaskCounts, threshold: float = DEFAULT_THRESHOLD) -> MaskWeights:
    raw = raw_weights(counts)
    clamped = clamp_weights(raw, threshold)
    final = normalize(clamped)
    return MaskWeights(counts, *raw, *clamped, *final, threshold=threshold)


def per_token_weights(plan: MaskPlan, weights: MaskWeights | None, enabled: bool = True) -> list[float]:
    """Loss weight for each masked position of ``plan``, in position order.

    With ``enabled=False`` (the ablation) or for SPAN/PMI plans under
    ``weights=None`` every position gets 1.
    """
    if not enabled:
        return [1.0] * len(plan)
    if weights is None:
        if any(k in (MaskKind.ELM, MaskKind.BLM) for k in plan.kinds):
            raise ValueError("ELM/BLM plan needs mask weights")
        return [1.0] * len(plan)
    return [weights.for_kind(k) for k in plan.kinds]
