"""Command-line entry point: ``mslm <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import harness
from .corpus import compute_dataset_stats, load_dataset, write_dataset
from .harness import DESK_ENCODER, DESK_TRAIN, DatasetSource, SweepConfig, config_from_dict, read_toml
from .masking import MaskConfig, plan_corpus
from .metrics import confidence_report
from .model import EncoderConfig
from .pmi_vocab import PmiVocabulary, build_vocabulary as build_pmi_vocabulary, overlap_with_ds_terms
from .synthetic import SyntheticConfig, generate
from .training import TrainConfig, evaluate, load_checkpoint, predict, save_checkpoint, train

log = logging.getLogger("mslm")


def _rates(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


def _dataset(manifest: str):
    split, repairs = load_dataset(manifest)
    if repairs:
        log.warning("%d malformed BIO transitions repaired", repairs)
    return split


def _run_configs(path: str | None) -> tuple[TrainConfig, EncoderConfig]:
    """[train] and [encoder] tables of a TOML file, on top of the desk-scale defaults."""
    if path is None:
        return DESK_TRAIN, DESK_ENCODER
    cfg = read_toml(path)
    return (config_from_dict(TrainConfig, cfg.get("train"), DESK_TRAIN),
            config_from_dict(EncoderConfig, cfg.get("encoder"), DESK_ENCODER))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_stats(args) -> int:
    stats = compute_dataset_stats(_dataset(args.dataset))
    _write(args.out, json.dumps(stats.display() if args.display else json.loads(stats.to_json()),
                                indent=2, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    cfg = SyntheticConfig(n_train=args.n_train, n_val=args.n_val, n_test=args.n_test, min_len=args.min_len,
                          max_len=args.max_len, seed=args.seed)
    manifest = write_dataset(generate(cfg), args.out)
    print(manifest)
    return 0


def cmd_build_pmi_vocab(args) -> int:
    split = _dataset(args.dataset)
    vocab = build_pmi_vocabulary(split.train, args.min_count, scorer=args.scorer, source_dataset=split.name)
    vocab.save(args.out)
    summary = {"n_entries": len(vocab), "by_length": {n: len(g) for n, g in vocab.groups.items()}}
    if any(s.spans for seqs in split.splits().values() for s in seqs) and len(vocab):
        summary["overlap"] = asdict(overlap_with_ds_terms(vocab, split))
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_mask(args) -> int:
    split = _dataset(args.dataset)
    cfg = MaskConfig(args.strategy, args.elm_rate, args.blm_rate, args.rate, args.seed)
    vocab = PmiVocabulary.load(args.vocab) if args.vocab else None
    plans = plan_corpus(split.splits()[args.split], cfg, args.epoch, vocab)
    _write(args.out, "".join(p.to_json() + "\n" for p in plans))
    return 0


def load_run_config(path: str | Path) -> dict:
    """A run file: [dataset], [mask], [train], [encoder] tables plus optional ``pmi_vocab``."""
    raw = read_toml(path)
    base = Path(path).parent
    ds = dict(raw.get("dataset", {}))
    if "manifest" in ds:
        ds["manifest"] = str((base / ds["manifest"]).resolve()) if not Path(ds["manifest"]).is_absolute() \
            else ds["manifest"]
    seed = raw.get("seed", harness.default_seed())
    mask = MaskConfig(**{"seed": seed, **raw.get("mask", {})})
    train_cfg = config_from_dict(TrainConfig, {"seed": seed, **raw.get("train", {})}, DESK_TRAIN)
    vocab_path = raw.get("pmi_vocab")
    return {
        "source": DatasetSource.from_dict(ds),
        "mask": mask,
        "train": train_cfg,
        "encoder": config_from_dict(EncoderConfig, raw.get("encoder"), DESK_ENCODER),
        "pmi_vocab": PmiVocabulary.load(base / vocab_path) if vocab_path else None,
    }


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    split = run["source"].load()
    vocab = run["pmi_vocab"]
    if run["mask"].strategy == "pmi" and vocab is None:
        vocab = build_pmi_vocabulary(split.train, source_dataset=split.name)
    result = train(split, run["mask"], run["train"], run["encoder"], vocab)
    out = save_checkpoint(result, args.out)
    if vocab is not None:
        vocab.save(out / "pmi_vocab.jsonl")
    report = {"dataset": run["source"].to_dict(), "mask": asdict(run["mask"]), "train": asdict(run["train"]),
              "final": result.log[-1], "weights": result.weights[-1], "plan_digests": result.plan_digests}
    (out / "train_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(result.log[-1], sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    result = load_checkpoint(args.ckpt)
    vocab_path = Path(args.vocab) if args.vocab else Path(args.ckpt) / "pmi_vocab.jsonl"
    if vocab_path.exists():
        result.pmi_vocab = PmiVocabulary.load(vocab_path)
    split = _dataset(args.dataset)
    seqs = split.splits()[args.split]
    echo = {"ckpt": str(args.ckpt), "split": args.split, "mask": asdict(result.mask_config)}
    report = evaluate(result, seqs, config_echo=echo)
    _write(args.out, report.to_json())
    if args.confidence_csv:
        _write(args.confidence_csv, confidence_report(predict(result, seqs)))
    if args.stratify:
        strata = harness.length_stratified_eval(predict(result, seqs), compute_dataset_stats(split).avg_sent_len)
        print(json.dumps(strata, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    cfg = SweepConfig.from_toml(args.config)
    if args.workers:
        cfg = replace(cfg, workers=args.workers)
    res = harness.run_sweep(cfg, args.out)
    failed = sum(c.status != "ok" for c in res.cells)
    print(f"{len(res.cells)} cells ({res.n_trained} trained, {failed} failed) -> {Path(args.out) / 'grid.csv'}")
    return 0


def cmd_compare(args) -> int:
    train_cfg, enc = _run_configs(args.run_config)
    source = DatasetSource(manifest=args.dataset)
    vocab = PmiVocabulary.load(args.vocab) if args.vocab else None
    seeds = harness.default_seeds(args.seeds)
    res = harness.compare_strategies(source, (args.elm, args.blm), _rates(args.rates), seeds,
                                     pmi_vocab=vocab, train_cfg=train_cfg, encoder=enc)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.csv").write_text(res.to_csv(), encoding="utf-8")
        (out / "budgets.json").write_text(json.dumps(res.budgets, indent=2) + "\n", encoding="utf-8")
    sys.stdout.write(res.to_csv())
    return 0


def cmd_ablate(args) -> int:
    train_cfg, enc = _run_configs(args.run_config)
    source = DatasetSource(manifest=args.dataset)
    res = harness.run_ablation(source, args.elm, args.blm, harness.default_seeds(args.seeds), train_cfg, enc)
    _write(args.out, json.dumps(res.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_reproduce(args) -> int:
    logged = json.loads(Path(args.cell).read_text(encoding="utf-8"))
    fresh = harness.reproduce(logged)
    same = logged.get("report") is not None and fresh.to_dict() == logged["report"]
    _write(args.out, fresh.to_json())
    print("identical" if same else "DIFFERENT", file=sys.stderr)
    return 0 if same else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mslm", description="Mask-specific language modeling at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stats", help="dataset statistics as JSON")
    s.add_argument("--dataset", required=True, help="manifest (JSON or TOML)")
    s.add_argument("--display", action="store_true", help="round to 2 decimals")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("synth", help="write a synthetic planted-entity dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n-train", type=int, default=1000)
    s.add_argument("--n-val", type=int, default=200)
    s.add_argument("--n-test", type=int, default=200)
    s.add_argument("--min-len", type=int, default=6)
    s.add_argument("--max-len", type=int, default=12)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("build-pmi-vocab", help="collocation vocabulary from the train split")
    s.add_argument("--dataset", required=True)
    s.add_argument("--min-count", type=int, default=5)
    s.add_argument("--scorer", choices=("pmi", "segment-min"), default="pmi")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_pmi_vocab)

    s = sub.add_parser("mask", help="emit mask plans as JSON lines")
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", choices=("train", "val", "test"), default="train")
    s.add_argument("--strategy", choices=("joint", "span", "pmi"), default="joint")
    s.add_argument("--elm-rate", type=float, default=1.0)
    s.add_argument("--blm-rate", type=float, default=0.075)
    s.add_argument("--rate", type=float, default=0.15)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--epoch", type=int, default=0)
    s.add_argument("--vocab")
    s.add_argument("--out")
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("train", help="train from a run TOML and write a checkpoint")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="EvalReport JSON for a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", choices=("train", "val", "test"), default="test")
    s.add_argument("--vocab", help="PMI vocabulary (defaults to the one stored with the checkpoint)")
    s.add_argument("--out")
    s.add_argument("--confidence-csv")
    s.add_argument("--stratify", action="store_true", help="also print length-stratified EM")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="rate-grid sweep from a TOML config (resumable)")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=0)
    s.set_defaults(func=cmd_sweep)

    for name, func, help_ in (("compare", cmd_compare, "joint vs SPAN vs PMI at matched budgets"),
                              ("ablate", cmd_ablate, "mask-specific weights on vs off")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--dataset", required=True)
        s.add_argument("--elm", type=float, default=1.0 if name == "ablate" else 0.5)
        s.add_argument("--blm", type=float, default=0.075)
        s.add_argument("--seeds", type=int, default=harness.N_DEFAULT_SEEDS, help="number of seeds")
        s.add_argument("--run-config", help="TOML with [train]/[encoder] overrides")
        s.add_argument("--out")
        if name == "compare":
            s.add_argument("--vocab")
            s.add_argument("--rates", default="0,0.075,0.15,0.225")
        s.set_defaults(func=func)

    s = sub.add_parser("reproduce", help="re-run a logged sweep cell and compare its report")
    s.add_argument("--cell", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_reproduce)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", 0) is None:
        args.seed = harness.default_seed()
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
