"""Experiment driver: rate-grid sweeps, strategy comparison, length strata, weight ablation.

Every run is a *cell*: a dataset source, a mask config, a train config and an
encoder config. A cell's content hash names its result file, which is what
makes sweeps resumable and any logged run reproducible from its JSON alone.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import csv
import json
import logging
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import torch

from .corpus import DatasetSplit, compute_dataset_stats, load_dataset, to_conll
from .masking import MaskConfig, MaskKind, masking_budget, plan_corpus
from .metrics import EvalReport, PredictionRecord, exact_match
from .model import EncoderConfig
from .pmi_vocab import PmiVocabulary, build_vocabulary as build_pmi_vocabulary
from .synthetic import SyntheticConfig, generate
from .training import TrainConfig, TrainingDivergedError, TrainResult, evaluate, predict, train

log = logging.getLogger(__name__)

DEFAULT_ELM_RATES = (0.25, 0.5, 0.75, 1.0)
DEFAULT_BLM_RATES = (0.0, 0.075, 0.15, 0.225)
N_DEFAULT_SEEDS = 5

# Sizes that train a 1k-sentence synthetic corpus in well under a minute on one core.
DESK_ENCODER = EncoderConfig(hidden_dim=64, n_layers=2, n_heads=4, ffn_dim=128, ed_proj_dim=32, el_proj_dim=32)
DESK_TRAIN = TrainConfig(learning_rate=1e-3, epochs=20, eval_every_epoch=False)


def default_seed() -> int:
    """Base seed, overridable through ``MSLM_SEED``."""
    return int(os.environ.get("MSLM_SEED", "0"))


def default_seeds(n: int = N_DEFAULT_SEEDS) -> tuple[int, ...]:
    base = default_seed()
    return tuple(range(base, base + n))


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

def config_from_dict(cls, data: dict | None, base=None):
    """Build a frozen dataclass from a (TOML/JSON) dict, rejecting unknown keys."""
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    data = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return replace(base, **data) if base is not None else cls(**data)


def read_toml(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


@dataclass(frozen=True)
class DatasetSource:
    """Either a manifest path or a synthetic generator config."""

    manifest: str | None = None
    synthetic: SyntheticConfig | None = None

    def __post_init__(self):
        if (self.manifest is None) == (self.synthetic is None):
            raise ValueError("give exactly one of manifest / synthetic")

    def load(self) -> DatasetSplit:
        if self.synthetic is not None:
            return generate(self.synthetic)
        split, repairs = load_dataset(self.manifest)
        if repairs:
            log.warning("%s: %d BIO repairs", self.manifest, repairs)
        return split

    def to_dict(self) -> dict:
        if self.synthetic is not None:
            return {"synthetic": asdict(self.synthetic)}
        return {"manifest": str(self.manifest)}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSource":
        if "synthetic" in d:
            return cls(synthetic=config_from_dict(SyntheticConfig, d["synthetic"]))
        if "manifest" in d:
            return cls(manifest=d["manifest"])
        raise ValueError("dataset section needs 'manifest' or 'synthetic'")


def dataset_fingerprint(split: DatasetSplit) -> str:
    h = hashlib.sha256()
    for name, seqs in split.splits().items():
        h.update(name.encode())
        h.update(to_conll(seqs).encode())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class CellSpec:
    """Everything needed to reproduce one trained-and-evaluated model."""

    mask: MaskConfig
    train: TrainConfig
    encoder: EncoderConfig
    dataset: dict
    dataset_hash: str
    pmi_min_count: int = 5

    def to_dict(self) -> dict:
        return {"mask": asdict(self.mask), "train": asdict(self.train), "encoder": asdict(self.encoder),
                "dataset": self.dataset, "dataset_hash": self.dataset_hash, "pmi_min_count": self.pmi_min_count}

    @classmethod
    def from_dict(cls, d: dict) -> "CellSpec":
        return cls(MaskConfig(**d["mask"]), config_from_dict(TrainConfig, d["train"]),
                   config_from_dict(EncoderConfig, d["encoder"]), d["dataset"], d["dataset_hash"],
                   d.get("pmi_min_count", 5))

    @property
    def key(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:20]

    @property
    def seed(self) -> int:
        return self.train.seed


def make_cell(source: DatasetSource, split: DatasetSplit, mask: MaskConfig, train_cfg: TrainConfig,
              encoder: EncoderConfig, seed: int, pmi_min_count: int = 5) -> CellSpec:
    """Cell with ``seed`` driving both the mask streams and the model."""
    return CellSpec(replace(mask, seed=seed), replace(train_cfg, seed=seed), encoder,
                    source.to_dict(), dataset_fingerprint(split), pmi_min_count)


def train_cell(spec: CellSpec, split: DatasetSplit, pmi_vocab: PmiVocabulary | None = None) -> TrainResult:
    if spec.mask.strategy == "pmi" and pmi_vocab is None:
        pmi_vocab = build_pmi_vocabulary(split.train, spec.pmi_min_count, source_dataset=split.name)
    torch.set_num_threads(1)
    return train(split, spec.mask, spec.train, spec.encoder, pmi_vocab)


def run_cell(spec: CellSpec, split: DatasetSplit | None = None,
             pmi_vocab: PmiVocabulary | None = None) -> tuple[EvalReport, TrainResult]:
    """Train and evaluate on the test split. The report echoes the cell config."""
    if split is None:
        split = DatasetSource.from_dict(spec.dataset).load()
    if dataset_fingerprint(split) != spec.dataset_hash:
        raise ValueError("dataset content differs from the one the cell was logged with")
    result = train_cell(spec, split, pmi_vocab)
    echo = {"cell": spec.key, **spec.to_dict()}
    return evaluate(result, split.test, config_echo=echo), result


def reproduce(logged: dict | str | Path) -> EvalReport:
    """Re-run a logged cell (its result JSON or path) and return the fresh report."""
    if not isinstance(logged, dict):
        logged = json.loads(Path(logged).read_text(encoding="utf-8"))
    spec = CellSpec.from_dict(logged.get("spec", logged))
    return run_cell(spec)[0]


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    dataset: DatasetSource = DatasetSource(synthetic=SyntheticConfig())
    elm_rates: tuple[float, ...] = DEFAULT_ELM_RATES
    blm_rates: tuple[float, ...] = DEFAULT_BLM_RATES
    # Total rates for the span/pmi strategies; defaults to blm_rates.
    rates: tuple[float, ...] | None = None
    seeds: tuple[int, ...] = field(default_factory=default_seeds)
    strategies: tuple[str, ...] = ("joint",)
    train: TrainConfig = DESK_TRAIN
    encoder: EncoderConfig = DESK_ENCODER
    pmi_min_count: int = 5
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        for r in (*self.elm_rates, *self.blm_rates, *(self.rates or ())):
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"rate {r} outside [0, 1]")
        for s in self.strategies:
            MaskConfig(strategy=s)

    @property
    def total_rates(self) -> tuple[float, ...]:
        return self.rates if self.rates is not None else self.blm_rates

    def mask_configs(self) -> list[MaskConfig]:
        out = []
        for strategy in self.strategies:
            if strategy == "joint":
                out += [MaskConfig("joint", e, b) for e in self.elm_rates for b in self.blm_rates]
            else:
                out += [MaskConfig(strategy, rate=r) for r in self.total_rates]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        kw: dict[str, Any] = {}
        if "dataset" in d:
            kw["dataset"] = DatasetSource.from_dict(d.pop("dataset"))
        if "train" in d:
            kw["train"] = config_from_dict(TrainConfig, d.pop("train"), DESK_TRAIN)
        if "encoder" in d:
            kw["encoder"] = config_from_dict(EncoderConfig, d.pop("encoder"), DESK_ENCODER)
        n_seeds = d.pop("n_seeds", N_DEFAULT_SEEDS)
        kw["seeds"] = tuple(int(s) for s in d.pop("seeds", default_seeds(n_seeds)))
        for key in ("elm_rates", "blm_rates", "rates"):
            if key in d:
                kw[key] = tuple(float(r) for r in d.pop(key))
        if "strategies" in d:
            kw["strategies"] = tuple(d.pop("strategies"))
        for key in ("pmi_min_count", "workers"):
            if key in d:
                kw[key] = int(d.pop(key))
        if d:
            raise ValueError(f"unknown sweep config keys: {sorted(d)}")
        return cls(**kw)

    @classmethod
    def from_toml(cls, path: str | Path) -> "SweepConfig":
        return cls.from_dict(read_toml(path))


@dataclass
class CellResult:
    spec: CellSpec
    status: str  # "ok" | "failed"
    report: EvalReport | None = None
    error: str | None = None
    plan_digests: list[str] = field(default_factory=list)
    trained: bool = True  # False when loaded from a previous run

    @property
    def strategy(self) -> str:
        return self.spec.mask.strategy

    @property
    def elm(self) -> float | None:
        return self.spec.mask.elm_rate if self.strategy == "joint" else None

    @property
    def blm(self) -> float:
        m = self.spec.mask
        return m.blm_rate if self.strategy == "joint" else m.rate

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "key": self.spec.key, "status": self.status,
                "report": self.report.to_dict() if self.report else None, "error": self.error,
                "plan_digests": self.plan_digests}

    @classmethod
    def from_dict(cls, d: dict) -> "CellResult":
        report = EvalReport(**d["report"]) if d.get("report") else None
        return cls(CellSpec.from_dict(d["spec"]), d["status"], report, d.get("error"),
                   d.get("plan_digests", []), trained=False)


GRID_COLUMNS = ("elm", "blm", "strategy", "seed", "em", "f1", "ppl")


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


@dataclass
class SweepResult:
    cells: list[CellResult]

    def grid_rows(self) -> list[dict]:
        rows = []
        for c in self.cells:
            ok = c.status == "ok"
            rows.append({"elm": _fmt(c.elm), "blm": _fmt(c.blm), "strategy": c.strategy, "seed": c.spec.seed,
                         "em": _fmt(c.report.em) if ok else "failed",
                         "f1": _fmt(c.report.macro_f1) if ok else "failed",
                         "ppl": _fmt(c.report.perplexity) if ok else "failed"})
        return rows

    def grid_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, GRID_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(self.grid_rows())
        return buf.getvalue()

    def aggregate(self) -> list[dict]:
        """Mean ± std over seeds for every (strategy, elm, blm) cell."""
        groups: dict[tuple, list[CellResult]] = {}
        for c in self.cells:
            groups.setdefault((c.strategy, c.elm, c.blm), []).append(c)
        out = []
        for (strategy, elm, blm), cs in groups.items():
            ok = [c.report for c in cs if c.status == "ok"]
            row = {"strategy": strategy, "elm": elm, "blm": blm, "n_seeds": len(cs), "n_failed": len(cs) - len(ok)}
            for name, get in (("em", lambda r: r.em), ("f1", lambda r: r.macro_f1), ("ppl", lambda r: r.perplexity)):
                vals = [get(r) for r in ok if get(r) is not None]
                row[f"{name}_mean"] = statistics.fmean(vals) if vals else None
                row[f"{name}_std"] = statistics.stdev(vals) if len(vals) > 1 else (0.0 if vals else None)
            out.append(row)
        return out

    def cell(self, strategy: str, elm: float | None, blm: float, seed: int) -> CellResult:
        for c in self.cells:
            if (c.strategy, c.elm, c.blm, c.spec.seed) == (strategy, elm, blm, seed):
                return c
        raise KeyError((strategy, elm, blm, seed))

    @property
    def n_trained(self) -> int:
        return sum(c.trained for c in self.cells)


def _execute(spec: CellSpec, split: DatasetSplit, pmi_vocab: PmiVocabulary | None) -> CellResult:
    try:
        report, result = run_cell(spec, split, pmi_vocab)
    except TrainingDivergedError as exc:
        log.warning("cell %s diverged: %s", spec.key, exc)
        return CellResult(spec, "failed", error=str(exc))
    return CellResult(spec, "ok", report, plan_digests=result.plan_digests)


def run_sweep(config: SweepConfig, out_dir: str | Path | None = None) -> SweepResult:
    """Train one model per (mask config, seed); skip cells whose result file exists.

    With ``out_dir`` each cell lands in ``cells/<hash>.json`` as soon as it
    finishes; ``grid.csv`` and ``summary.json`` are written at the end.
    """
    split = config.dataset.load()
    pmi_vocab = None
    if "pmi" in config.strategies:
        pmi_vocab = build_pmi_vocabulary(split.train, config.pmi_min_count, source_dataset=split.name)
    specs = [make_cell(config.dataset, split, m, config.train, config.encoder, seed, config.pmi_min_count)
             for m in config.mask_configs() for seed in config.seeds]

    cell_dir = Path(out_dir) / "cells" if out_dir is not None else None
    if cell_dir is not None:
        cell_dir.mkdir(parents=True, exist_ok=True)
    results: dict[str, CellResult] = {}
    todo = []
    for spec in specs:
        path = cell_dir / f"{spec.key}.json" if cell_dir else None
        if path is not None and path.exists():
            results[spec.key] = CellResult.from_dict(json.loads(path.read_text(encoding="utf-8")))
        else:
            todo.append(spec)
    log.info("sweep: %d cells, %d to train", len(specs), len(todo))

    def store(res: CellResult):
        results[res.spec.key] = res
        if cell_dir is not None:
            (cell_dir / f"{res.spec.key}.json").write_text(json.dumps(res.to_dict(), indent=2, sort_keys=True),
                                                          encoding="utf-8")

    if config.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            for res in pool.map(_execute, todo, [split] * len(todo), [pmi_vocab] * len(todo)):
                store(res)
    else:
        for spec in todo:
            store(_execute(spec, split, pmi_vocab))

    sweep = SweepResult([results[s.key] for s in specs])
    if out_dir is not None:
        out = Path(out_dir)
        (out / "grid.csv").write_text(sweep.grid_csv(), encoding="utf-8")
        (out / "summary.json").write_text(json.dumps(sweep.aggregate(), indent=2) + "\n", encoding="utf-8")
    return sweep


def best_joint_cell(sweep: SweepResult) -> tuple[float, float]:
    """(elm, blm) of the joint cell with the highest mean EM."""
    rows = [r for r in sweep.aggregate() if r["strategy"] == "joint" and r["em_mean"] is not None]
    if not rows:
        raise ValueError("sweep has no successful joint cells")
    best = max(rows, key=lambda r: (r["em_mean"], -r["elm"], -r["blm"]))
    return best["elm"], best["blm"]


# ---------------------------------------------------------------------------
# Strategy comparison under matched budgets
# ---------------------------------------------------------------------------

class BudgetParityError(AssertionError):
    pass


def budget_log(seqs, joint: MaskConfig, others: Sequence[MaskConfig], pmi_vocab=None) -> list[dict]:
    """Per-config masking accounting on epoch-0 plans, checked per sequence.

    Each plan must stay within ceil(rate * |s|) of its own strategy; the joint
    cell's per-sequence bound (whole entities + BLM budget) is logged alongside.
    """
    joint_plans = plan_corpus(seqs, joint, 0)
    joint_bound = [sum(len(sp) for sp in s.spans) + masking_budget(joint.blm_rate, len(s)) for s in seqs]
    rows = [{"strategy": "joint", "rate": None, "masked": sum(len(p) for p in joint_plans),
             "budget": sum(joint_bound), "joint_masked": sum(len(p) for p in joint_plans)}]
    for j, (s, p) in enumerate(zip(seqs, joint_plans)):
        if len(p.positions_of(MaskKind.BLM)) > masking_budget(joint.blm_rate, len(s)) or len(p) > joint_bound[j]:
            raise BudgetParityError(f"joint plan for {s.id} exceeds its budget")
    for cfg in others:
        plans = plan_corpus(seqs, cfg, 0, pmi_vocab)
        budget = 0
        for s, p in zip(seqs, plans):
            mb = masking_budget(cfg.rate, len(s))
            if len(p) > mb:
                raise BudgetParityError(f"{cfg.strategy} plan for {s.id} masks {len(p)} > budget {mb}")
            budget += mb
        rows.append({"strategy": cfg.strategy, "rate": cfg.rate, "masked": sum(len(p) for p in plans),
                     "budget": budget, "joint_masked": rows[0]["masked"]})
    return rows


@dataclass
class ComparisonResult:
    table: list[dict]  # one row per (strategy, rate)
    budgets: list[dict]
    cells: list[CellResult]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ("strategy", "rate", "em_mean", "em_std", "n_seeds"), lineterminator="\n")
        w.writeheader()
        w.writerows(self.table)
        return buf.getvalue()


def compare_strategies(source: DatasetSource, joint_cell: tuple[float, float],
                       rates: Sequence[float] = DEFAULT_BLM_RATES, seeds: Sequence[int] | None = None,
                       strategies: Sequence[str] = ("joint", "span", "pmi"),
                       pmi_vocab: PmiVocabulary | None = None, train_cfg: TrainConfig = DESK_TRAIN,
                       encoder: EncoderConfig = DESK_ENCODER, pmi_min_count: int = 5,
                       split: DatasetSplit | None = None) -> ComparisonResult:
    """EM per strategy per rate, joint held at ``joint_cell``; budgets checked first."""
    split = split or source.load()
    seeds = tuple(seeds) if seeds is not None else default_seeds()
    if "pmi" in strategies and pmi_vocab is None:
        pmi_vocab = build_pmi_vocabulary(split.train, pmi_min_count, source_dataset=split.name)
    joint = MaskConfig("joint", *joint_cell)
    others = [MaskConfig(s, rate=r) for s in strategies if s != "joint" for r in rates]
    budgets = budget_log(split.train, joint, others, pmi_vocab)
    for row in budgets:
        log.info("budget %s", row)

    cells: list[CellResult] = []
    ems: dict[tuple, list[float]] = {}
    configs = ([joint] if "joint" in strategies else []) + others
    for cfg in configs:
        for seed in seeds:
            spec = make_cell(source, split, cfg, train_cfg, encoder, seed, pmi_min_count)
            res = _execute(spec, split, pmi_vocab)
            cells.append(res)
            if res.status == "ok":
                ems.setdefault((cfg.strategy, None if cfg.strategy == "joint" else cfg.rate), []).append(res.report.em)

    table = []
    for strategy in strategies:
        for r in rates:
            vals = ems.get((strategy, None if strategy == "joint" else r), [])
            table.append({"strategy": strategy, "rate": r,
                          "em_mean": statistics.fmean(vals) if vals else None,
                          "em_std": statistics.stdev(vals) if len(vals) > 1 else (0.0 if vals else None),
                          "n_seeds": len(vals)})
    return ComparisonResult(table, budgets, cells)


# ---------------------------------------------------------------------------
# Length strata
# ---------------------------------------------------------------------------

NA = "n/a"


def length_stratified_eval(records: Sequence[PredictionRecord], cutoff: float) -> dict:
    """EM for sentences shorter than ``cutoff`` and for the rest (length >= cutoff).

    A stratum with no sentences, or no gold spans, reports ``"n/a"``.
    """
    strata = {"short": [r for r in records if len(r.tokens) < cutoff],
              "long": [r for r in records if len(r.tokens) >= cutoff]}
    out: dict[str, Any] = {"cutoff": cutoff}
    for name, rs in strata.items():
        has_gold = any(r.gold for r in rs)
        out[name] = {"n": len(rs), "em": exact_match(rs) if has_gold else NA}
    return out


def stratified_report(result: TrainResult, split: DatasetSplit) -> dict:
    """One prediction pass over the test split, cut at the train AvgSentLen."""
    cutoff = compute_dataset_stats(split).avg_sent_len
    return length_stratified_eval(predict(result, split.test), cutoff)


# ---------------------------------------------------------------------------
# Weight ablation
# ---------------------------------------------------------------------------

def mean_correct_confidence(records: Iterable[PredictionRecord]) -> float | None:
    """Mean classifier confidence on decoded spans that exactly match a gold DS-term."""
    vals = []
    for r in records:
        gold = {(g.start, g.end, g.label) for g in r.gold}
        vals += [p.confidence for p in r.predicted if (p.start, p.end, p.label) in gold]
    return statistics.fmean(vals) if vals else None


@dataclass
class AblationPair:
    seed: int
    on: EvalReport
    off: EvalReport
    digests_on: list[str]
    digests_off: list[str]
    confidence_on: float | None = None
    confidence_off: float | None = None

    @property
    def plans_identical(self) -> bool:
        return self.digests_on == self.digests_off

    @property
    def on_wins(self) -> bool:
        return self.on.em >= self.off.em

    def to_dict(self) -> dict:
        return {"seed": self.seed, "em_on": self.on.em, "em_off": self.off.em,
                "f1_on": self.on.macro_f1, "f1_off": self.off.macro_f1,
                "confidence_on": self.confidence_on, "confidence_off": self.confidence_off,
                "plans_identical": self.plans_identical, "plan_digest": self.digests_on[-1] if self.digests_on else None}


@dataclass
class AblationResult:
    elm: float
    blm: float
    pairs: list[AblationPair]

    @property
    def wins(self) -> int:
        return sum(p.on_wins for p in self.pairs)

    def to_dict(self) -> dict:
        return {"elm": self.elm, "blm": self.blm, "wins": self.wins, "n_seeds": len(self.pairs),
                "pairs": [p.to_dict() for p in self.pairs]}


def run_ablation(source: DatasetSource, elm: float, blm: float, seeds: Sequence[int] | None = None,
                 train_cfg: TrainConfig = DESK_TRAIN, encoder: EncoderConfig = DESK_ENCODER,
                 split: DatasetSplit | None = None) -> AblationResult:
    """Weights on vs off per seed; the pair shares seeds and therefore mask plans."""
    split = split or source.load()
    seeds = tuple(seeds) if seeds is not None else default_seeds()
    pairs = []
    for seed in seeds:
        runs = {}
        for enabled in (True, False):
            spec = make_cell(source, split, MaskConfig("joint", elm, blm), replace(train_cfg, use_mask_weights=enabled),
                             encoder, seed)
            runs[enabled] = run_cell(spec, split)
        (rep_on, res_on), (rep_off, res_off) = runs[True], runs[False]
        pair = AblationPair(seed, rep_on, rep_off, res_on.plan_digests, res_off.plan_digests,
                            mean_correct_confidence(predict(res_on, split.test)),
                            mean_correct_confidence(predict(res_off, split.test)))
        if not pair.plans_identical:
            raise AssertionError(f"seed {seed}: mask plans differ between the ablation pair")
        log.info("ablation seed %d: on %.2f off %.2f", seed, rep_on.em, rep_off.em)
        pairs.append(pair)
    return AblationResult(elm, blm, pairs)
