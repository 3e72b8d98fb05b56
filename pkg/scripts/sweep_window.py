"""Accuracy against window length on the simulated default scenario."""
import argparse
import logging

from rfidar.evaluation import sweep_window, write_rows_csv
from rfidar.sim import load_scenario, simulate_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--windows", default="1,2,3,5,10,20")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--instances", type=int, default=None,
                   help="keep only this many instances per class and subject (faster)")
    p.add_argument("--out", default="sweep_window.csv")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    sc = load_scenario()
    reps = sc.instances_per_class
    traces = [t for i, (t, _) in enumerate(simulate_dataset(sc, args.seed))
              if args.instances is None or i % reps < args.instances]
    rows = sweep_window(traces, [float(v) for v in args.windows.split(",")],
                        layout=sc.layout, class_names=sc.activities, k=args.folds)
    for r in rows:
        print(f"L={r['window_s']:>4g}s  windows={r['n_instances']:>6}  accuracy={r['accuracy']:.3f}")
    write_rows_csv(args.out, rows)


if __name__ == "__main__":
    main()
