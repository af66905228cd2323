"""Desk-scale search experiment on a synthetic dataset.

Runs several seeded searches, compares the winner against random genotypes
trained with the same budget, then writes gate/skip ablation tables for the
overall winner.

    python3 scripts/desk_experiment.py --out runs/desk
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from ptsearch.metrics import format_table
from ptsearch.pipeline import ArchConfig
from ptsearch.search import SearchConfig, random_genotype, run_search
from ptsearch.synthetic import make_synthetic
from ptsearch.train import FINAL_TRAIN, TrainConfig, TrainingEvaluator, run_ablation_table


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--nodes", type=int, default=1000)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--relations", type=int, default=2)
    p.add_argument("--data-seed", type=int, default=7)
    p.add_argument("--search-seeds", type=int, default=3)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--generations", type=int, default=20)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--baseline", type=int, default=8, help="random genotypes per seed")
    p.add_argument("--ablation-runs", type=int, default=5)
    return p.parse_args()


def main():
    args = parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    dataset = make_synthetic(args.nodes, 0.5, args.relations, args.separation, seed=args.data_seed).normalized()
    arch = ArchConfig(hidden=args.hidden)

    per_seed = []
    for seed in range(args.search_seeds):
        cfg = SearchConfig(k=args.k, generations=args.generations, epochs=args.epochs, seed=seed)
        evaluator = TrainingEvaluator(dataset, TrainConfig(epochs=args.epochs, seed=seed), arch)
        result = run_search(cfg, evaluator)
        rng = np.random.default_rng([seed, 99])
        baseline = [evaluator(random_genotype(rng, 2, 8), seed)[1] for _ in range(args.baseline)]
        per_seed.append({
            "seed": seed,
            "best": result.best.genotype,
            "best_val": result.best.val_accuracy,
            "best_test": result.best.test_accuracy,
            "random_test_mean": float(np.mean(baseline)),
            "top5": [i.genotype for i in result.top5],
        })
        print(f"seed {seed}: {result.best.genotype} test={result.best.test_accuracy:.3f} "
              f"random={np.mean(baseline):.3f}")

    winner = max(per_seed, key=lambda r: r["best_val"])["best"]
    tables = {}
    for mode in ("gate", "skip"):
        rows = run_ablation_table(mode, winner, dataset, FINAL_TRAIN, arch, runs=args.ablation_runs)
        tables[mode] = {name: s.to_json() for name, s in rows}
        text = format_table(rows, f"{mode} ablation, {winner}")
        (out / f"ablation_{mode}.txt").write_text(text, encoding="utf-8")
        print(text, end="")

    summary = {
        "searches": per_seed,
        "mean_best_test": float(np.mean([r["best_test"] for r in per_seed])),
        "mean_random_test": float(np.mean([r["random_test_mean"] for r in per_seed])),
        "ablation_genotype": winner,
        "ablation": tables,
        "seconds": time.perf_counter() - start,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"mean best test {summary['mean_best_test']:.3f} vs random {summary['mean_random_test']:.3f} "
          f"in {summary['seconds']:.0f}s")


if __name__ == "__main__":
    main()
