#!/usr/bin/env python3
"""Run the desk-scale ordering experiment and write experiments/desk_ordering.md."""

import argparse
import logging
from pathlib import Path

from hybridflow.experiment import DeskExperimentConfig, run_desk_experiment

REPO_ROOT = Path(__file__).resolve().parent.parent


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--data-root", default=str(REPO_ROOT / "data"))
    parser.add_argument("--log", default=str(REPO_ROOT / "experiments" / "desk_ordering.md"))
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    cfg = DeskExperimentConfig(seed=args.seed, data_root=args.data_root,
                               threads=args.threads)
    results = run_desk_experiment(cfg, log_path=args.log)
    for res in results:
        print(f"{res.split_style}: " + ", ".join(
            f"{k} {v:.5f}" for k, v in sorted(res.rmse.items())))
    gen = next(r for r in results if r.split_style == "generalization")
    ok = gen.hybrid_beats_ucm and gen.hybrid_beats_gcn
    print(f"generalization ordering (hybrid <= ucm and hybrid <= gcn): {ok}")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
