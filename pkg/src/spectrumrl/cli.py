"""Command line entry point: ``train``, ``test``, ``benchmark`` and ``table``.

Every subcommand writes delimited CSV outputs into ``--out`` and renders the
matching PNG figure next to them.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import harness, plotting
from .harness import (
    CHECKPOINT_FILE,
    LEARNING_SCHEMES,
    METRICS_DUMP_FILE,
    SCHEMES,
    TEST_TABLE_FILE,
    TRAINING_CURVE_FILE,
    ExperimentConfig,
)

log = logging.getLogger("spectrumrl")


def parse_schemes(text, default):
    if not text:
        return list(default)
    schemes = [s.strip() for s in text.split(",") if s.strip()]
    for s in schemes:
        if s not in SCHEMES:
            raise ValueError(f"unknown scheme {s!r}; expected one of {', '.join(SCHEMES)}")
    return schemes


def load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seeds"] = [args.seed]
    if getattr(args, "scheme", None) and "," not in args.scheme:
        changes["scheme"] = args.scheme
    return cfg.replace(**changes) if changes else cfg


def find_checkpoint(out_dir, scheme, explicit=None):
    candidates = [explicit] if explicit else [os.path.join(out_dir, scheme, CHECKPOINT_FILE), os.path.join(out_dir, CHECKPOINT_FILE)]
    for path in candidates:
        if path and os.path.exists(path):
            learner, norm = harness.load_trained(path)
            if learner.scheme == scheme:
                return learner, norm
            if explicit:
                raise ValueError(f"{path} holds a {learner.scheme!r} checkpoint, not {scheme!r}")
    raise FileNotFoundError(f"no trained checkpoint for {scheme!r} under {out_dir}; run `train` first")


def cmd_train(args):
    cfg = load_config(args)
    seed = cfg.seeds[0]
    os.makedirs(args.out, exist_ok=True)
    record, _, _ = harness.run_training(cfg, seed=seed, out_dir=args.out)
    cfg.save(os.path.join(args.out, "config.json"))
    plotting.plot_training_curves(
        {cfg.scheme: os.path.join(args.out, TRAINING_CURVE_FILE)},
        os.path.join(args.out, "training_curve.png"),
        cfg.slots_per_episode,
    )
    tail = float(np.mean(record.sum_rate_per_link[-cfg.ma_window :]))
    print(f"trained {cfg.scheme} for {len(record.sum_rate_per_link)} slots; final moving-average sum-rate/link {tail:.3f}")
    return 0


def _write_test_outputs(records, out_dir):
    harness.emit_table(records, os.path.join(out_dir, TEST_TABLE_FILE))
    for r in records:
        harness.save_record(r, os.path.join(out_dir, f"record_{r.scheme}.json"))
    plotting.plot_test_table(
        harness.read_table(os.path.join(out_dir, TEST_TABLE_FILE)), os.path.join(out_dir, "test_table.png")
    )


def _print_records(records):
    for r in records:
        print(f"{r.scheme:>10}  K={r.K} N={r.N} M={r.M}  sum-rate/link {r.test_score:.4f} bps/Hz")


def cmd_test(args):
    cfg = load_config(args)
    schemes = parse_schemes(args.scheme, [cfg.scheme])
    learners = {s: find_checkpoint(args.out, s, args.checkpoint) for s in schemes if s in LEARNING_SCHEMES}
    os.makedirs(args.out, exist_ok=True)
    dump = os.path.join(args.out, METRICS_DUMP_FILE) if args.dump else None
    records = harness.run_test(cfg, schemes, seed=cfg.seeds[0], learners=learners, dump_path=dump)
    ordered = [records[s] for s in schemes]
    _write_test_outputs(ordered, args.out)
    _print_records(ordered)
    return 0


def _train_worker(cfg_dict, seed, scheme, out_dir):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    record, _, _ = harness.run_training(cfg, seed=seed, out_dir=out_dir, scheme=scheme)
    return scheme, seed, record.wall_clock_s


def cmd_benchmark(args):
    cfg = load_config(args)
    schemes = parse_schemes(args.scheme, SCHEMES)
    learning = [s for s in schemes if s in LEARNING_SCHEMES]
    seeds = list(cfg.seeds)
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "config.json"))

    def run_dir(seed, scheme=None):
        base = os.path.join(args.out, f"seed_{seed}") if len(seeds) > 1 else args.out
        return os.path.join(base, scheme) if scheme else base

    jobs = [(cfg.to_dict(), seed, s, run_dir(seed, s)) for seed in seeds for s in learning]
    if jobs:
        workers = max(1, min(args.workers or os.cpu_count() or 1, len(jobs)))
        if workers == 1:
            done = [_train_worker(*j) for j in jobs]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                done = list(pool.map(_train_worker, *zip(*jobs)))
        for scheme, seed, secs in done:
            log.info("trained %s (seed %d) in %.1f s", scheme, seed, secs)

    per_seed = []
    for seed in seeds:
        learners = {s: find_checkpoint(run_dir(seed), s) for s in learning}
        records = harness.run_test(cfg, schemes, seed=seed, learners=learners)
        per_seed.append(records)
        if len(seeds) > 1:
            _write_test_outputs([records[s] for s in schemes], run_dir(seed))
    merged = []
    for s in schemes:
        rec = per_seed[0][s]
        rec.test_score = float(np.mean([r[s].test_score for r in per_seed]))
        rec.fp_iterations = [it for r in per_seed for it in r[s].fp_iterations]
        merged.append(rec)
    _write_test_outputs(merged, args.out)
    if learning:
        plotting.plot_training_curves(
            {s: os.path.join(run_dir(seeds[0], s), TRAINING_CURVE_FILE) for s in learning},
            os.path.join(args.out, "training_curves.png"),
            cfg.slots_per_episode,
        )
    _print_records(merged)
    return 0


def _collect_tables(paths):
    found = []
    for p in paths:
        if os.path.isdir(p):
            for root, _, files in sorted(os.walk(p)):
                if TEST_TABLE_FILE in files:
                    found.append(os.path.join(root, TEST_TABLE_FILE))
        elif os.path.exists(p):
            found.append(p)
        else:
            raise FileNotFoundError(p)
    return found


def cmd_table(args):
    out_path = os.path.join(args.out, TEST_TABLE_FILE)
    inputs = [p for p in _collect_tables(args.inputs or [args.out]) if os.path.abspath(p) != os.path.abspath(out_path)]
    rows = {}
    for path in inputs:
        for row in harness.read_table(path):
            key = (int(row["K"]), int(row["N"]), int(row["M"]), row["scheme"])
            if key in rows:
                log.warning("duplicate row %s in %s replaces an earlier one", key, path)
            rows[key] = row
    order = {s: i for i, s in enumerate(SCHEMES)}
    ordered = [rows[k] for k in sorted(rows, key=lambda k: (k[0], k[1], k[2], order.get(k[3], 99)))]
    os.makedirs(args.out, exist_ok=True)
    harness.atomic_write_text(
        out_path,
        harness._csv_text(harness.TABLE_COLUMNS, [[r[c] for c in harness.TABLE_COLUMNS] for r in ordered]),
    )
    plotting.plot_test_table(ordered, os.path.join(args.out, "test_table.png"))
    print(f"wrote {len(ordered)} rows from {len(inputs)} table(s) to {out_path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="spectrumrl", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scheme_help):
        p.add_argument("--config", help="JSON experiment config (defaults built in)")
        p.add_argument("--seed", type=int, help="master seed; overrides the config's seed list")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--scheme", help=scheme_help)

    p = sub.add_parser("train", help="train one learning scheme")
    common(p, "proposed or joint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("test", help="evaluate schemes on fresh test deployments")
    common(p, "comma-separated schemes")
    p.add_argument("--checkpoint", help="checkpoint file (default: found under --out)")
    p.add_argument("--dump", action="store_true", help="also write the per-slot metrics dump")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("benchmark", help="train the learners, then test every scheme")
    common(p, "comma-separated schemes (default: all)")
    p.add_argument("--workers", type=int, help="parallel training processes")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("table", help="merge test tables and render the bar chart")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("inputs", nargs="*", help="test_table.csv files or directories to search")
    p.set_defaults(func=cmd_table)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
