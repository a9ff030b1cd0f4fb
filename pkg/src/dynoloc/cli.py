"""Command line entry point: run, compare and validate scenarios."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .ranging import simulate_link
from .scenario import Scenario, ScenarioError, load_scenario, scenario_to_dict
from .scheduler import STRATEGIES
from .simulator import EpochRecord, evaluate_run, run_simulation

log = logging.getLogger("dynoloc")

EPOCH_COLUMNS = [
    "epoch", "node_id", "truth_x", "truth_y", "est_x", "est_y",
    "error_m", "localized", "component_id", "core_number",
]
COMPARE_COLUMNS = ["strategy", "refresh_rate", "seed", "median", "mean", "p90", "pct_localized"]
AGGREGATE_COLUMNS = [
    "strategy", "refresh_rate", "runs", "median", "mean", "p90", "pct_localized", "low_confidence",
]
# fewer seeds than this and the aggregate row is flagged
MIN_CONFIDENT_SEEDS = 5

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2


def _setup_logging() -> None:
    level = os.environ.get("DYNOLOC_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def _csv_list(text: str, kind=str) -> list:
    return [kind(v.strip()) for v in text.split(",") if v.strip()]


def write_epochs_csv(records: list[EpochRecord], path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPOCH_COLUMNS)
        for r in records:
            for n in sorted(r.truth):
                est = r.estimates.get(n)
                w.writerow([
                    r.epoch, n, _fmt(r.truth[n].x), _fmt(r.truth[n].y),
                    _fmt(est.x if est else None), _fmt(est.y if est else None),
                    _fmt(r.errors.get(n)), int(r.localized.get(n, False)),
                    r.component_of.get(n, -1), r.core_number.get(n, 0),
                ])


def write_trace(records: list[EpochRecord], path: Path) -> None:
    with path.open("w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def _apply_overrides(s: Scenario, args, strategy=None, rate=None, seed=None) -> Scenario:
    kw = {}
    if strategy is not None:
        kw["strategy"] = strategy
    if rate is not None:
        kw["refresh_rate"] = rate
    if seed is not None:
        kw["seed"] = seed
    if getattr(args, "epochs", None) is not None:
        kw["epochs"] = args.epochs
    return s.with_(**kw) if kw else s


def _load(path: str) -> Scenario | None:
    try:
        return load_scenario(path)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
    except ScenarioError as e:
        for p in e.problems:
            print(f"error: {path}: {p}", file=sys.stderr)
    return None


def cmd_run(args) -> int:
    s = _load(args.scenario)
    if s is None:
        return EXIT_INVALID
    strategies = _csv_list(args.strategy) if args.strategy else [None]
    rates = _csv_list(args.refresh_rate, float) if args.refresh_rate else [None]
    if len(strategies) > 1 or len(rates) > 1:
        print("error: run takes a single strategy and refresh rate; use compare for sweeps", file=sys.stderr)
        return EXIT_INVALID
    try:
        s = _apply_overrides(s, args, strategies[0], rates[0], args.seed)
    except ScenarioError as e:
        for p in e.problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_INVALID

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.info("running %s seed=%d epochs=%d", s.strategy, s.seed, s.epochs)
    records = run_simulation(s)
    summary = evaluate_run(records, s.strategy)
    summary["seed"] = s.seed
    summary["refresh_rate"] = s.refresh_rate
    summary["scenario"] = scenario_to_dict(s)
    summary["metadata"] = {
        "version": __version__,
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    write_epochs_csv(records, out / "epochs.csv")
    write_trace(records, out / "trace.jsonl")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    med = summary["median_error"]
    print(f"median error: {med:.3f} m" if med is not None else "median error: n/a (nothing localized)")
    return EXIT_OK


def _one_run(s: Scenario) -> tuple[dict, list[float]]:
    records = run_simulation(s)
    errs = [
        r.errors[n] for r in records for n, ok in r.localized.items()
        if ok and n != r.reference and n in r.errors
    ]
    return evaluate_run(records, s.strategy), errs


def cmd_compare(args) -> int:
    s = _load(args.scenario)
    if s is None:
        return EXIT_INVALID
    strategies = _csv_list(args.strategy) if args.strategy else ["dynoloc", "h-agnos"]
    bad = [x for x in strategies if x not in STRATEGIES]
    if bad:
        print(f"error: --strategy: unknown {', '.join(bad)} (choose from {', '.join(STRATEGIES)})", file=sys.stderr)
        return EXIT_INVALID
    if len(strategies) < 2:
        print("error: --strategy: compare needs at least two strategies", file=sys.stderr)
        return EXIT_INVALID
    rates = _csv_list(args.refresh_rate, float) if args.refresh_rate else [s.refresh_rate]
    base_seed = args.seed if args.seed is not None else s.seed
    seeds = [base_seed + k for k in range(args.seeds)]

    jobs = []
    try:
        for strat, rate, seed in itertools.product(strategies, rates, seeds):
            jobs.append(((strat, rate, seed), _apply_overrides(s, args, strat, rate, seed)))
    except ScenarioError as e:
        for p in e.problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_INVALID

    log.info("compare: %d runs", len(jobs))
    with ThreadPoolExecutor(max_workers=args.workers) as ex:
        results = list(ex.map(lambda job: _one_run(job[1]), jobs))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "compare.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        for ((strat, rate, seed), _), (summ, _) in zip(jobs, results):
            w.writerow([
                strat, rate, seed, _fmt(summ["median_error"]), _fmt(summ["mean_error"]),
                _fmt(summ["p90_error"]), _fmt(summ["pct_localized"]),
            ])

    rows = []
    for strat, rate in itertools.product(strategies, rates):
        group = [res for (key, _), res in zip(jobs, results) if key[0] == strat and key[1] == rate]
        pooled = np.concatenate([np.asarray(e, dtype=float) for _, e in group]) if group else np.array([])
        rows.append([
            strat, rate, len(group),
            _fmt(float(np.median(pooled)) if pooled.size else None),
            _fmt(float(np.mean(pooled)) if pooled.size else None),
            _fmt(float(np.percentile(pooled, 90)) if pooled.size else None),
            _fmt(float(np.mean([g["pct_localized"] for g, _ in group]))),
            int(len(group) < MIN_CONFIDENT_SEEDS),
        ])
    with (out / "aggregate.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        w.writerows(rows)

    print(f"{'strategy':<10} {'rate':>5} {'runs':>5} {'median':>8} {'mean':>8} {'p90':>8} {'loc%':>6}")
    for r in rows:
        flag = "  (low confidence)" if r[-1] else ""
        print(f"{r[0]:<10} {r[1]:>5g} {r[2]:>5} {r[3] or 'n/a':>8.8} {r[4] or 'n/a':>8.8} "
              f"{r[5] or 'n/a':>8.8} {float(r[6]):>6.1f}{flag}")
    return EXIT_OK


def cmd_validate(args) -> int:
    s = _load(args.scenario)
    if s is None:
        return EXIT_INVALID
    pos = {n.id: n.position for n in s.nodes}
    edges = sum(
        simulate_link(pos, s.walls, (a, b), s.radio)[0] for a, b in itertools.combinations(sorted(pos), 2)
    )
    mobile = sum(n.mobile for n in s.nodes)
    ref = s.reference
    print(f"{args.scenario}: ok")
    print(f"  nodes: {len(s.nodes)} ({mobile} mobile), reference: {ref.id if ref else 'none'}")
    print(f"  links at t=0: {edges}")
    print(f"  arena: {s.width:g} x {s.height:g} m ({s.width * s.height:g} m^2), walls: {len(s.walls)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynoloc", description="Latency-bounded infrastructure-free localization simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, multi: bool):
        sp.add_argument("--scenario", required=True, help="scenario TOML file")
        sp.add_argument("--seed", type=int, help="override run.seed (compare: first seed)")
        sp.add_argument("--epochs", type=int, help="override run.epochs")
        sp.add_argument(
            "--strategy", help="strategy name" + (", comma separated" if multi else "") + f" ({', '.join(STRATEGIES)})"
        )
        sp.add_argument("--refresh-rate", help="refresh rate in Hz" + (", comma separated" if multi else ""))
        sp.add_argument("--out", default="out", help="output directory (default: out)")

    run = sub.add_parser("run", help="simulate one scenario and write per-epoch outputs")
    common(run, multi=False)
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="cross product of strategies, refresh rates and seeds")
    common(cmp_, multi=True)
    cmp_.add_argument("--seeds", type=int, default=20, help="number of consecutive seeds (default: 20)")
    cmp_.add_argument("--workers", type=int, default=None, help="worker threads")
    cmp_.set_defaults(func=cmd_compare)

    val = sub.add_parser("validate", help="check a scenario file without simulating")
    val.add_argument("--scenario", required=True)
    val.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "seeds", 1) < 1:
        print("error: --seeds must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    if getattr(args, "seed", None) is not None and not (0 <= args.seed < 2**64):
        print("error: --seed must fit in an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
