"""Command-line entry point: ``ptsearch {generate,validate,search,train,ablate}``.

Exit codes: 0 success, 2 usage/config error, 3 dataset error, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .graph import DatasetError, load_dataset
from .metrics import format_table
from .pipeline import ArchConfig, GenotypeError, parse_genotype, save_checkpoint
from .search import SearchConfig, run_search
from .synthetic import generate_synthetic
from .train import ABLATION_MODES, FINAL_TRAIN, TrainConfig, TrainingEvaluator, run_ablation_table, run_seeds

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
SEED_ENV = "PTSEARCH_SEED"


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def dataset_checksum(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    for f in sorted(Path(path).iterdir()):
        if f.is_file():
            h.update(f.name.encode())
            h.update(f.read_bytes())
    return h.hexdigest()


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Manifest:
    """manifest.json, written before any result file and completed at the end."""

    def __init__(self, out: Path, command: str, config: dict, seed: int, data: str | None = None):
        self.path = out / "manifest.json"
        self.body = {
            "command": command,
            "config": config,
            "seed": seed,
            "code_version": __version__,
            "dataset_checksum": dataset_checksum(data) if data else None,
            "started": _now(),
            "finished": None,
            "outputs": [],
        }
        _dump_json(self.path, self.body)

    def finish(self, outputs: list[str]) -> None:
        self.body["finished"] = _now()
        self.body["outputs"] = sorted(outputs)
        _dump_json(self.path, self.body)


def _resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer")


def _arch(args) -> ArchConfig:
    try:
        return ArchConfig(hidden=args.hidden, gate=not args.no_gate, skip=not args.no_skip, p_weights=args.p_weights)
    except ValueError as e:
        raise UsageError(str(e))


def _load(path: str, seed: int):
    return load_dataset(path, split_seed=seed).normalized()


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tables").mkdir(exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    seed = _resolve_seed(args.seed)
    if args.nodes < 20 or not 0 < args.bot_fraction < 1 or args.separation < 0 or args.relations < 1:
        raise UsageError("need --nodes >= 20, 0 < --bot-fraction < 1, --separation >= 0, --relations >= 1")
    generate_synthetic(args.nodes, args.bot_fraction, args.relations, args.separation, seed, args.out,
                       embed_dim=args.embed_dim, unlabeled_fraction=args.unlabeled_fraction)
    print(f"wrote dataset to {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    graph, feats, split, meta = load_dataset(args.data)
    print(json.dumps({"num_nodes": meta.num_nodes, "num_edges": graph.num_edges,
                      "relations": list(meta.relations), "dims": meta.dims, "splits": split.sizes()}))
    return EXIT_OK


def cmd_search(args) -> int:
    seed = _resolve_seed(args.seed)
    arch = _arch(args)
    try:
        scfg = SearchConfig(k=args.k, m=args.m, generations=args.generations, epochs=args.epochs,
                            max_len=args.max_len, seed=seed, workers=args.workers)
        tcfg = TrainConfig(epochs=args.epochs, lr=args.lr, weight_decay=args.weight_decay,
                           precision=args.precision, seed=seed)
    except ValueError as e:
        raise UsageError(str(e))
    dataset = _load(args.data, seed)
    out = _out_dir(args.out)
    config = {"search": asdict(scfg), "train": asdict(tcfg), "arch": asdict(arch), "data": str(args.data),
              "gate_enabled": arch.gate, "skip_enabled": arch.skip}
    manifest = Manifest(out, "search", config, seed, args.data)

    result = run_search(scfg, TrainingEvaluator(dataset, tcfg, arch))
    if all(ind.diverged for ind in result.history):
        raise RuntimeFailure("every candidate diverged")

    result.log.to_ndjson(out / "searchlog.ndjson")

    def entry(ind):
        return {"genotype": ind.genotype, "val_acc": ind.val_accuracy, "test_acc": ind.test_accuracy,
                "birth_index": ind.birth_index}

    _dump_json(out / "top5.json", {
        "best": entry(result.best),
        "top5": [entry(i) for i in result.top5],
        "evaluated": len(result.history),
        "gate_enabled": arch.gate,
        "skip_enabled": arch.skip,
    })
    lines = [f"{i + 1}. {ind.genotype:<24} val={ind.val_accuracy:.4f} test={ind.test_accuracy:.4f}"
             for i, ind in enumerate(result.top5)]
    (out / "tables" / "top5.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest.finish(["searchlog.ndjson", "top5.json", "tables/top5.txt"])
    print(f"best {result.best.genotype} val={result.best.val_accuracy:.4f} test={result.best.test_accuracy:.4f}")
    return EXIT_OK


def _final_cfg(args, seed) -> TrainConfig:
    try:
        return TrainConfig(epochs=args.epochs, lr=args.lr, weight_decay=args.weight_decay,
                           precision=args.precision, seed=seed)
    except ValueError as e:
        raise UsageError(str(e))


def cmd_train(args) -> int:
    seed = _resolve_seed(args.seed)
    try:
        genotype = parse_genotype(args.genotype)
    except GenotypeError as e:
        raise UsageError(str(e))
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    arch = _arch(args)
    cfg = _final_cfg(args, seed)
    dataset = _load(args.data, seed)
    out = _out_dir(args.out)
    manifest = Manifest(out, "train", {"train": asdict(cfg), "arch": asdict(arch), "genotype": genotype,
                                       "runs": args.runs, "data": str(args.data)}, seed, args.data)
    summary, models = run_seeds(genotype, dataset, cfg, arch, args.runs)
    if not models:
        raise RuntimeFailure("every run diverged")
    _dump_json(out / "metrics.json", {"genotype": genotype, **summary.to_json()})
    (out / "tables" / "final.txt").write_text(format_table([(genotype, summary)], "Final training (test split)"),
                                              encoding="utf-8")
    save_checkpoint(models[0], out / "checkpoint.npz")
    manifest.finish(["metrics.json", "tables/final.txt", "checkpoint.npz"])
    print(format_table([(genotype, summary)]), end="")
    return EXIT_OK


def cmd_ablate(args) -> int:
    seed = _resolve_seed(args.seed)
    try:
        genotype = parse_genotype(args.genotype)
    except GenotypeError as e:
        raise UsageError(str(e))
    if args.mode not in ABLATION_MODES:
        raise UsageError(f"unknown mode {args.mode!r}; expected one of {ABLATION_MODES}")
    arch = _arch(args)
    cfg = _final_cfg(args, seed)
    dataset = _load(args.data, seed)
    out = _out_dir(args.out)
    manifest = Manifest(out, "ablate", {"train": asdict(cfg), "arch": asdict(arch), "genotype": genotype,
                                        "mode": args.mode, "runs": args.runs, "data": str(args.data)},
                        seed, args.data)
    rows = run_ablation_table(args.mode, genotype, dataset, cfg, arch, args.runs)
    name = f"ablation_{args.mode}"
    _dump_json(out / f"{name}.json", {"genotype": genotype, "mode": args.mode,
                                      "rows": [{"variant": v, **s.to_json()} for v, s in rows]})
    table = format_table(rows, f"Ablation ({args.mode}) for {genotype}")
    (out / "tables" / f"{name}.txt").write_text(table, encoding="utf-8")
    manifest.finish([f"{name}.json", f"tables/{name}.txt"])
    print(table, end="")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden", type=int, default=32, help="hidden width D (multiple of 4)")
    p.add_argument("--no-gate", action="store_true", help="disable P-layer gating")
    p.add_argument("--no-skip", action="store_true", help="disable T-layer skip-connections")
    p.add_argument("--p-weights", choices=("identity", "relational"), default="identity")
    p.add_argument("--weight-decay", type=float, default=2e-4)
    p.add_argument("--precision", choices=("float64", "float32"), default="float64")
    p.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptsearch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic bot/human dataset")
    g.add_argument("--nodes", type=int, default=1000)
    g.add_argument("--bot-fraction", type=float, default=0.5)
    g.add_argument("--relations", type=int, default=2)
    g.add_argument("--separation", type=float, default=3.0)
    g.add_argument("--embed-dim", type=int, default=16)
    g.add_argument("--unlabeled-fraction", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser("validate", help="check a dataset directory")
    v.add_argument("--data", required=True)
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("search", help="aging-evolution architecture search")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int, default=15, help="population size")
    s.add_argument("--m", type=int, default=3, help="tournament sample size")
    s.add_argument("--generations", type=int, default=80)
    s.add_argument("--epochs", type=int, default=70, help="training epochs per candidate")
    s.add_argument("--lr", type=float, default=0.04)
    s.add_argument("--max-len", type=int, default=20)
    s.add_argument("--workers", type=int, default=1)
    _model_flags(s)
    s.set_defaults(func=cmd_search)

    t = sub.add_parser("train", help="retrain one genotype over several seeds")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--genotype", required=True)
    t.add_argument("--runs", type=int, default=5)
    t.add_argument("--epochs", type=int, default=FINAL_TRAIN.epochs)
    t.add_argument("--lr", type=float, default=FINAL_TRAIN.lr)
    _model_flags(t)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="feature / gate / skip ablation tables")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--genotype", required=True)
    a.add_argument("--mode", required=True, help="features | gate | skip")
    a.add_argument("--runs", type=int, default=5)
    a.add_argument("--epochs", type=int, default=FINAL_TRAIN.epochs)
    a.add_argument("--lr", type=float, default=FINAL_TRAIN.lr)
    _model_flags(a)
    a.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DatasetError as e:
        print(f"dataset error: {e}", file=sys.stderr)
        return EXIT_DATA
    except RuntimeFailure as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
