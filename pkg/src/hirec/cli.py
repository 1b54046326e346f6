"""Command-line entry point: ``hirec <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 checkpoint error,
4 controller constraint violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .config import ConfigError, ExperimentConfig, load_config
from .env import ConstraintViolation
from .netgen import GraphGenConfig, generate_scale_free

log = logging.getLogger("hirec")

EXIT_CONFIG, EXIT_CHECKPOINT, EXIT_CONSTRAINT = 2, 3, 4


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.master_seed = args.seed
        cfg.training.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    cfg.validate()
    return cfg


def cmd_gen(cfg, args):
    out = Path(cfg.out_dir) / "graphs"
    out.mkdir(parents=True, exist_ok=True)
    for rep in range(args.count):
        seed = harness.replication_seeds(cfg.master_seed, rep)["graph"]
        net = generate_scale_free(GraphGenConfig(cfg.n, cfg.avg_degree, seed))
        net.save_edgelist(out / f"graph_{rep:04d}.txt")
    print(f"wrote {args.count} graphs to {out}")


def cmd_train_explore(cfg, args):
    _, train_log, elapsed = harness.train_explore_module(cfg, args.episodes)
    tail = train_log.episode_returns[-10:]
    mean = sum(tail) / len(tail) if tail else float("nan")
    print(f"explore module saved to {cfg.explore_checkpoint} ({elapsed:.1f}s, last-10 return {mean:.2f})")


def cmd_train_policy(cfg, args):
    _, train_log, elapsed = harness.train_policy_module(cfg, episodes=args.episodes)
    tail = train_log.episode_ra[-20:]
    mean = sum(tail) / len(tail) if tail else float("nan")
    print(f"policy module saved to {cfg.policy_checkpoint} ({elapsed:.1f}s, last-20 r_a {mean:.4f})")


def cmd_eval(cfg, args):
    controller = harness.build_controller(cfg)
    label = {"setup": cfg.setup, "method": controller.name, "M1": cfg.m1, "M2": cfg.m2,
             "P_r": cfg.p_reveal or 0.0}
    per_rep: list = []
    summary = harness.evaluate(cfg, controller, label, p_reveal=cfg.p_reveal, jobs=args.jobs, per_rep=per_rep)
    out = Path(cfg.out_dir)
    harness.write_csv(out / "eval.csv", [summary.row()], harness.SUMMARY_COLUMNS)
    harness.write_csv(out / "eval_replications.csv", per_rep, harness.REPLICATION_COLUMNS)
    if args.records:
        rec_dir = out / "episodes"
        rec_dir.mkdir(parents=True, exist_ok=True)
        for rep in range(min(args.records, cfg.replications)):
            seeds = harness.replication_seeds(cfg.master_seed, rep)
            rec = harness.run_episode(cfg, controller, seeds, p_reveal=cfg.p_reveal)
            rec.save(rec_dir / f"rep_{rep:04d}.jsonl")
    print(f"{controller.name}: mean r_a {summary.mean:.4f} +- {summary.ci95:.4f} "
          f"over {len(summary.ra)} replications ({summary.wall_clock:.1f}s)")


def cmd_compare(cfg, args):
    setup = args.setup or cfg.setup
    per_rep: list = []
    run = harness.run_setup1 if setup == 1 else harness.run_setup2
    summaries = run(cfg, jobs=args.jobs, per_rep=per_rep)
    out = Path(cfg.out_dir)
    path = out / f"compare_setup{setup}.csv"
    harness.write_csv(path, [s.row() for s in summaries], harness.SUMMARY_COLUMNS)
    harness.write_csv(out / f"compare_setup{setup}_replications.csv", per_rep, harness.REPLICATION_COLUMNS)
    for s in summaries:
        r = s.row()
        print(f"{r['method']:>15} M1={r['M1']:<3} M2={r['M2']} P_r={r['P_r']:.2f}  "
              f"r_a={r['mean_ra']:.4f} +- {r['ci95']:.4f}")
    print(f"wrote {path}")


def cmd_plot_data(cfg, args):
    rows = []
    for path in args.inputs:
        rows += harness.summarize_replications(path)
    rows.sort(key=lambda r: (r["setup"], r["method"], r["M1"], r["M2"], r["P_r"]))
    dest = Path(args.dest) if args.dest else Path(cfg.out_dir) / "plot_data.csv"
    harness.write_csv(dest, rows, harness.SUMMARY_COLUMNS[:9])
    print(f"wrote {len(rows)} rows to {dest}")


def cmd_replay(cfg, args):
    record = harness.EpisodeRecord.load(args.record)
    again = harness.replay(record)
    same = again.to_jsonl() == record.to_jsonl()
    print(json.dumps({"stored_ra": record.final_ra, "replayed_ra": again.final_ra, "identical": same}))
    if args.dest:
        again.save(args.dest)
    if not same:
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hirec", description="Epidemic control by exploring and quarantining")
    parser.add_argument("--config", help="TOML experiment config")
    parser.add_argument("--seed", type=int, help="master seed (also used for training)")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--jobs", type=int, default=1, help="parallel replication workers")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write generated contact networks as edge lists")
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train-explore", help="train the explore module")
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_train_explore)

    p = sub.add_parser("train-policy", help="train the policy module on a saved explore module")
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_train_policy)

    p = sub.add_parser("eval", help="evaluate the configured controller")
    p.add_argument("--records", type=int, default=0, help="also store the first N episodes as JSONL")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="run the setup-1 or setup-2 comparison grid")
    p.add_argument("--setup", type=int, choices=(1, 2))
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot-data", help="tidy summary CSV from per-replication CSVs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--dest")
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("replay", help="re-run a stored episode record")
    p.add_argument("record")
    p.add_argument("--dest", help="write the replayed record here")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return args.func(cfg, args) or 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except harness.CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except ConstraintViolation as exc:
        print(f"constraint violation: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT


if __name__ == "__main__":
    sys.exit(main())
