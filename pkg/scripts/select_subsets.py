"""Minimal antenna / body-part search plus the hand-picked comparison configurations.

The full default layout has 15 antenna sets times 511 part sets, each scored
by k-fold CV; expect hours at k=10.  ``--max-parts`` and ``--folds`` trade
coverage for time.
"""
import argparse
import logging

from rfidar import svm
from rfidar.evaluation import write_rows_csv
from rfidar.model import PipelineConfig
from rfidar.pipeline import build_instances
from rfidar.selection import evaluate_subsets, manual_configurations, select_min
from rfidar.sim import load_scenario, simulate_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--rho", type=float, default=0.85)
    p.add_argument("--window", type=float, default=5.0)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--manual-only", action="store_true")
    p.add_argument("--out", default="selection.csv")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    sc = load_scenario()
    traces = [t for t, _ in simulate_dataset(sc, args.seed)]
    inst = build_instances(traces, PipelineConfig(window_len_s=args.window), sc.layout,
                           sc.activities)
    rows = evaluate_subsets(inst, manual_configurations(sc.layout), sc.layout, args.folds)
    for r in rows:
        print(f"{r['name']:>16}  {r['accuracy']:.3f}  antennas={r['antennas']}  parts={r['parts']}")
    write_rows_csv(args.out, rows)
    if args.manual_only:
        return
    res = select_min(inst, args.rho, sc.layout, args.folds, params=svm.SvmParams())
    print("\n".join(res.report_lines(sc.layout)))
    print(f"# {res.evaluations} evaluations, best {res.best_accuracy:.3f}")


if __name__ == "__main__":
    main()
