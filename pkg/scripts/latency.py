"""Train at a given window length and report per-window processing latency."""
import argparse
import logging

from rfidar import svm
from rfidar.cli import bench_segments
from rfidar.evaluation import bench_latency
from rfidar.model import PipelineConfig
from rfidar.pipeline import build_instances
from rfidar.sim import load_scenario, simulate_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--window", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--max-windows", type=int, default=300)
    p.add_argument("--train-instances", type=int, default=None,
                   help="train on this many instances per class and subject (faster)")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    sc = load_scenario()
    data = list(simulate_dataset(sc, args.seed))
    reps = sc.instances_per_class
    train_traces = [t for i, (t, _) in enumerate(data)
                    if args.train_instances is None or i % reps < args.train_instances]
    cfg = PipelineConfig(window_len_s=args.window)
    model = svm.train(build_instances(train_traces, cfg, sc.layout, sc.activities))
    segments = bench_segments([t for t, _ in data], cfg.window_len_s)[:args.max_windows]
    print(bench_latency(model, segments, cfg, sc.layout).summary())


if __name__ == "__main__":
    main()
