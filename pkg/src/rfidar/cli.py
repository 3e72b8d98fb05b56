"""Command-line entry point: simulate, train, eval, recognize, select, bench.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 real-time contract failure (``bench`` only).
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import evaluation, selection, sim, svm
from .model import BodyLayout, LayoutError, PipelineConfig
from .pipeline import Recognizer, build_instances, load_dataset
from .stream import ParseError, StreamOrderError, iter_records, open_source, segment_trace

log = logging.getLogger("rfidar")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_REALTIME = 0, 1, 2, 3

# PipelineConfig field -> (flag, type, help)
CONFIG_FLAGS = {
    "window_len_s": ("--window", float, "window length L in seconds"),
    "history_span_s": ("--history-span", float, "history buffer span in seconds"),
    "overlap_threshold": ("--overlap-threshold", float, "completion overlap threshold"),
    "resample_len": ("--resample-len", int, "resampled length K for spectral features"),
    "rss_floor_dbm": ("--rss-floor", float, "RSS floor / empty-series sentinel in dBm"),
    "normalize_per_subject": ("--normalize", None, "z-score RSS per subject before segmentation"),
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_config_flags(p: argparse.ArgumentParser, skip: tuple[str, ...] = ()) -> None:
    p.add_argument("--config", help="file of key=value PipelineConfig overrides")
    for name, (flag, typ, help_) in CONFIG_FLAGS.items():
        if name in skip:
            continue
        if typ is None:
            p.add_argument(flag, dest=name, action="store_true", default=None, help=help_)
        else:
            p.add_argument(flag, dest=name, type=typ, default=None, help=help_)


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines naming PipelineConfig fields."""
    types = {f.name: f.type for f in fields(PipelineConfig)}
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise DataError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            if types[key] in (bool, "bool"):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                out[key] = value.lower() in ("true", "1", "yes")
            elif types[key] in (int, "int"):
                out[key] = int(value)
            else:
                out[key] = float(value)
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def resolve_config(args, base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    """Defaults < ``base`` < config file < explicit flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in CONFIG_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    try:
        cfg = replace(base, **values)
        if "window_len_s" in values and "history_span_s" not in values \
                and cfg.history_span_s < cfg.window_len_s:
            cfg = replace(cfg, history_span_s=cfg.window_len_s)
        return replace(cfg)
    except ValueError as e:
        raise DataError(f"invalid pipeline configuration: {e}") from None


def _config_metadata(cfg: PipelineConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(PipelineConfig)}


def _layout_metadata(layout: BodyLayout) -> dict:
    return {"antennas": list(layout.antennas), "parts": list(layout.body_parts),
            "tags_per_part": layout.tags_per_part, "tag_to_part": list(layout.tag_to_part)}


def _model_context(model: svm.SvmModel) -> tuple[PipelineConfig, BodyLayout]:
    meta = model.metadata
    try:
        cfg = PipelineConfig(**meta["config"])
        lay = meta["layout"]
        layout = BodyLayout(tuple(lay["antennas"]), tuple(lay["parts"]), lay["tags_per_part"],
                            tuple(lay["tag_to_part"]))
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"model metadata lacks pipeline settings: {e}") from None
    return cfg, layout


def _load_model(path: str) -> svm.SvmModel:
    try:
        return svm.load_model(path)
    except OSError as e:
        raise DataError(f"cannot read model: {e}") from None


def _floats_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise UsageError("empty list")
    return vals


def _emit_rows(rows: list[dict], out: str | None) -> None:
    if out:
        evaluation.write_rows_csv(out, rows)
    if rows:
        keys = list(rows[0])
        print(",".join(keys))
        for r in rows:
            print(",".join(f"{r[k]:.6g}" if isinstance(r[k], float) else str(r[k])
                           for k in keys))


# -- subcommands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    text = sim.default_scenario_text() if args.scenario is None \
        else Path(args.scenario).read_text()
    scenario = sim.parse_scenario(text, args.scenario or "default_scenario.ini")
    rows = sim.generate_dataset(scenario, args.out, args.seed, scenario_text=text)
    print(f"wrote {len(rows)} traces to {args.out}")
    return EXIT_OK


def _dataset(args, cfg: PipelineConfig):
    traces, layout, names = load_dataset(args.data)
    if not traces:
        raise DataError(f"{args.data}: manifest lists no traces")
    if cfg.normalize_per_subject:
        traces = evaluation.normalize_rss(traces, "per_subject_zscore")
    return traces, layout, names


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    traces, layout, names = _dataset(args, cfg)
    inst = build_instances(traces, cfg, layout, names, completion=not args.no_completion)
    params = svm.SvmParams(C=args.C, gamma=args.gamma)
    meta = {"config": _config_metadata(cfg), "layout": _layout_metadata(layout),
            "completion": not args.no_completion, "n_instances": len(inst)}
    model = svm.train(inst, params, meta)
    svm.save_model(model, args.out)
    print(f"trained on {len(inst)} windows, {len(model.support_vectors)} support vectors "
          f"-> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params = svm.SvmParams(C=args.C, gamma=args.gamma)
    if args.model:
        model = _load_model(args.model)
        cfg, _ = _model_context(model)
        cfg = resolve_config(args, cfg)
    else:
        cfg = resolve_config(args)
        if args.kfold is None and not args.loso and args.sweep_window is None \
                and args.ablate_completion is None:
            raise UsageError("choose one of --kfold, --loso, --sweep-window, "
                             "--ablate-completion or pass --model")
    if args.loso:
        raw, layout, names = load_dataset(args.data)
        study = evaluation.loso_normalization_study(raw, cfg, layout, names, params)
        rows = []
        for mode, r in study.items():
            rows += [{"normalization": mode, "subject": s, "accuracy": a}
                     for s, a in zip(r.subjects, r.accuracies)]
            rows.append({"normalization": mode, "subject": "mean", "accuracy": r.mean})
        _emit_rows(rows, args.out)
        return EXIT_OK
    traces, layout, names = _dataset(args, cfg)
    if args.model:
        inst = build_instances(traces, cfg, layout, model.class_names)
        if inst.fingerprint != model.fingerprint:
            raise DataError("dataset layout does not match the model")
        pred, _ = svm.predict_many(model, inst.X)
        acc = evaluation.overall_accuracy(pred, inst.y)
        _emit_rows([{"windows": len(inst), "accuracy": acc}], args.out)
        return EXIT_OK
    if args.kfold is not None:
        res = evaluation.kfold_cv(build_instances(traces, cfg, layout, names), args.kfold,
                                  args.seed, params)
        _emit_rows([{"k": args.kfold, "window_s": cfg.window_len_s,
                     "accuracy": res.accuracy}], args.out)
    elif args.sweep_window is not None:
        rows = evaluation.sweep_window(traces, _floats_list(args.sweep_window), cfg, layout,
                                       names, args.folds, args.seed, params)
        _emit_rows(rows, args.out)
    else:
        rows = evaluation.ablate_completion(traces, _floats_list(args.ablate_completion), cfg,
                                            layout, names, args.folds, args.seed, params)
        _emit_rows(rows, args.out)
    return EXIT_OK


def _rss_stats(args, lines: list[str] | None, layout: BodyLayout):
    if args.rss_stats:
        vals = _floats_list(args.rss_stats)
        if len(vals) != 2 or vals[1] <= 0:
            raise UsageError("--rss-stats expects MEAN,STD with STD > 0")
        return vals[0], vals[1]
    if lines is None:
        raise DataError("model expects per-subject normalization; pass --rss-stats MEAN,STD "
                        "for stream input")
    rss = np.array([r.rss_dbm for r, _ in iter_records(lines, layout)])
    if len(rss) < 2 or not rss.std() > 0:
        raise DataError("cannot estimate normalization statistics from the input")
    return float(rss.mean()), float(rss.std())


def cmd_recognize(args) -> int:
    model = _load_model(args.model)
    cfg, layout = _model_context(model)
    cfg = resolve_config(args, cfg)
    transform = None
    lines = None
    if cfg.normalize_per_subject:
        if args.input != "-" and not args.input.startswith("tcp:") and not args.rss_stats:
            lines = Path(args.input).read_text().splitlines()
        mu, sd = _rss_stats(args, lines, layout)
        cfg = replace(cfg, rss_floor_dbm=(cfg.rss_floor_dbm - mu) / sd)
        transform = lambda v: (v - mu) / sd  # noqa: E731
    rec = Recognizer(model, cfg, layout, completion=model.metadata.get("completion", True),
                     rss_transform=transform)
    source = lines if lines is not None else open_source(args.input)
    out = sys.stdout
    for reading, _ in iter_records(source, layout):
        for res in rec.push(reading):
            out.write(f"{res.window_end_ms},{model.label_name(res.label)},{res.votes.max()}\n")
            out.flush()
    for res in rec.flush():
        out.write(f"{res.window_end_ms},{model.label_name(res.label)},{res.votes.max()}\n")
        out.flush()
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = resolve_config(args)
    traces, layout, names = _dataset(args, cfg)
    inst = build_instances(traces, cfg, layout, names)
    params = svm.SvmParams(C=args.C, gamma=args.gamma)
    res = selection.select_min(inst, args.rho, layout, args.folds, args.seed,
                               args.granularity, params)
    lines = res.report_lines(layout)
    if not res.subsets:
        lines.append(f"# no subset reached rho={args.rho:g}; best accuracy "
                     f"{res.best_accuracy:.4f}")
    lines.append(f"# {res.evaluations} subset evaluations, {res.protocol}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def bench_segments(traces, window_len_s: float, gap_ms: int = 0):
    """Concatenate traces on one clock (each shifted past the previous) and cut windows."""
    from .model import Trace

    parts, offset = [], 0
    for t in traces:
        if len(t) == 0:
            continue
        ts = t.timestamps - t.timestamps[0] + offset
        parts.append((ts, t.antennas, t.tags, t.rss))
        offset = int(ts[-1]) + 1 + gap_ms
    if not parts:
        return []
    joined = Trace(*(np.concatenate(col) for col in zip(*parts)))
    return segment_trace(joined, window_len_s)


def cmd_bench(args) -> int:
    model = _load_model(args.model)
    cfg, layout = _model_context(model)
    cfg = resolve_config(args, cfg)
    traces, data_layout, _ = load_dataset(args.data)
    if data_layout != layout:
        raise DataError("dataset layout does not match the model")
    if cfg.normalize_per_subject:
        traces = evaluation.normalize_rss(traces, "per_subject_zscore")
        cfg = replace(cfg, rss_floor_dbm=traces[0].rss_floor)
    segments = bench_segments(traces, cfg.window_len_s)[:args.max_windows]
    report = evaluation.bench_latency(model, segments, cfg, layout,
                                      extra_delay_s=args.inject_delay_ms / 1000.0)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_REALTIME


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rfidar", description="RFID-based activity recognition toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--scenario", help="scenario INI file (default: shipped scenario)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=cmd_simulate)

    def svm_flags(q):
        q.add_argument("--C", type=float, default=10.0)
        q.add_argument("--gamma", type=float, default=None)

    s = sub.add_parser("train", help="train a model on a dataset directory")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--no-completion", action="store_true")
    _add_config_flags(s)
    svm_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="cross-validate, sweep or score a saved model")
    s.add_argument("--data", required=True)
    s.add_argument("--model", help="score this saved model on the dataset")
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--kfold", type=int)
    mode.add_argument("--loso", action="store_true")
    mode.add_argument("--sweep-window", metavar="LIST")
    mode.add_argument("--ablate-completion", nargs="?", const="5,20", metavar="LIST")
    s.add_argument("--folds", type=int, default=10, help="folds for sweeps")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="also write the CSV here")
    _add_config_flags(s)
    svm_flags(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("recognize", help="classify a reading stream window by window")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True, help="file path, '-' for stdin or tcp:PORT")
    s.add_argument("--rss-stats", metavar="MEAN,STD",
                   help="subject RSS statistics for normalized models")
    _add_config_flags(s, skip=("normalize_per_subject",))
    s.set_defaults(func=cmd_recognize)

    s = sub.add_parser("select", help="search the minimal antenna and body-part set")
    s.add_argument("--data", required=True)
    s.add_argument("--rho", type=float, required=True)
    s.add_argument("--granularity", choices=selection.GRANULARITIES, default="part")
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    _add_config_flags(s)
    svm_flags(s)
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("bench", help="measure per-window processing latency")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--max-windows", type=int, default=300)
    s.add_argument("--inject-delay-ms", type=float, default=0.0, help=argparse.SUPPRESS)
    _add_config_flags(s, skip=("normalize_per_subject",))
    s.set_defaults(func=cmd_bench)
    return p


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"rfidar {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ParseError, StreamOrderError, LayoutError, sim.ScenarioError,
            svm.ModelFormatError, svm.FingerprintMismatch, evaluation.FoldError,
            OSError, ValueError) as e:
        print(f"rfidar {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
