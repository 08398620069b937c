"""Command-line entry point: ``aiig {train,evaluate,meta,trace,report,matrix}``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import MODES, VARIANTS, ExperimentConfig, resolve_output_dir
from .ensemble import (load_models, load_member, load_population, load_protagonist,
                       train_full)
from .env import ConfigError, ScriptKind, TagGame, write_trace
from .meta import anneal, evaluate_ensemble, write_trace_csv
from .report import write_report
from .rollout import LearnedOpponent, ScriptedOpponentPolicy, run_episode
from .seeding import Streams, deterministic_mode


class CliError(Exception):
    pass


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {"seed": args.seed, "mode": getattr(args, "mode", None),
                 "variant": getattr(args, "variant", None),
                 "single_gamma": getattr(args, "gamma", None)}
    return cfg.with_overrides(**overrides)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return resolve_output_dir(args.out, os.environ.get("AIIG_OUT"), cfg.output_dir)


def _checkpoint(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"checkpoint not found: {p}")
    return p


def _active_k(run_dir: Path) -> int:
    manifest = run_dir / "manifest.json"
    if manifest.exists():
        return len(json.loads(manifest.read_text(encoding="utf-8"))["active"])
    return 1


# -- subcommands -----------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    result = train_full(cfg, out, deterministic=args.deterministic)
    print(f"trained {cfg.mode}/{cfg.variant} seed={cfg.seed}: {len(result.rows)} epochs -> {out}")
    return 0


def run_evaluation(checkpoint: Path, cfg: ExperimentConfig, out: Path) -> dict:
    protagonist = load_protagonist(checkpoint, cfg.learner, cfg.env)
    models = load_models(checkpoint.parent, cfg.env)
    k = _active_k(checkpoint.parent)
    result = evaluate_ensemble(protagonist, models, k, cfg.env, cfg.meta, cfg.learner,
                               Streams(cfg.seed)["evaluate"])
    out.mkdir(parents=True, exist_ok=True)
    rep = result.report
    summary = {"r_p": rep.r_p, "r_o": rep.r_o, "K": rep.K, "rho": rep.rho,
               "lambda1": cfg.meta.lambda1, "lambda2": cfg.meta.lambda2,
               "opponent_gamma": result.opponent_gamma,
               "opponent_train_steps": result.train_steps,
               "episodes": len(result.episodes), "seed": cfg.seed}
    (out / "evaluation.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    with (out / "eval_episodes.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        cols = ["episode", "opponent_type", "outcome", "length", "protagonist_return",
                "opponent_return"]
        w.writerow(cols)
        for row in result.episodes:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    return summary


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    ckpt = _checkpoint(args.checkpoint)
    out = Path(args.out) if args.out else ckpt.parent
    summary = run_evaluation(ckpt, cfg, out)
    print(f"r_p={summary['r_p']:.3f} r_o={summary['r_o']:.3f} K={summary['K']} "
          f"rho={summary['rho']:.3f}")
    return 0


def cmd_meta(args) -> int:
    cfg = _load_config(args)
    ckpt = _checkpoint(args.checkpoint)
    run_dir = ckpt.parent
    out = Path(args.out) if args.out else run_dir
    protagonist = load_protagonist(ckpt, cfg.learner, cfg.env)
    models = load_models(run_dir, cfg.env)
    try:
        pop = load_population(run_dir, cfg.learner)
    except FileNotFoundError as exc:
        raise CliError(f"population files missing next to the checkpoint: {exc.filename}") from None
    # the protagonist is fixed here, so members enter only through the ensemble size
    streams = Streams(cfg.seed)

    def evaluator(p):
        return evaluate_ensemble(protagonist, models, p.K, cfg.env, cfg.meta, cfg.learner,
                                 streams["meta"]).report.rho

    out.mkdir(parents=True, exist_ok=True)
    pop, trace = anneal(pop, evaluator, cfg.meta, streams["anneal"])
    write_trace_csv(out / "meta_trace.csv", trace)
    (out / "meta_population.json").write_text(
        json.dumps({"active": pop.active, "deactivated": pop.deactivated}, indent=2) + "\n",
        encoding="utf-8")
    print(f"{len(trace)} proposals; final active ensemble {pop.active}")
    return 0


def _trace_opponent(spec: str, run_dir: Path, cfg: ExperimentConfig):
    if spec.startswith("member:"):
        try:
            learners = load_member(run_dir, int(spec.split(":", 1)[1]), cfg.learner)
        except (FileNotFoundError, ValueError) as exc:
            raise CliError(f"cannot load opponent {spec!r}: {exc}") from None
        return LearnedOpponent(learners, cfg.env)
    try:
        return ScriptedOpponentPolicy(ScriptKind(spec), cfg.env)
    except ValueError:
        raise CliError(f"unknown opponent {spec!r}; use rush, deceive, random or member:<id>") from None


def cmd_trace(args) -> int:
    cfg = _load_config(args)
    ckpt = _checkpoint(args.checkpoint)
    protagonist = load_protagonist(ckpt, cfg.learner, cfg.env)
    models = load_models(ckpt.parent, cfg.env)
    opponent = _trace_opponent(args.opponent, ckpt.parent, cfg)
    streams = Streams(cfg.seed)
    game = TagGame(cfg.env, rng=streams["trace-env"])
    res = run_episode(game, protagonist, opponent, models, protagonist.mode, streams["trace"],
                      explore=False, record_trace=True)
    out = Path(args.out) if args.out else ckpt.parent
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"trace-seed{cfg.seed}.jsonl"
    write_trace(path, res.trace)
    print(f"{res.length} steps, outcome {res.outcome}, opponent {res.opponent_type.name} -> {path}")
    return 0


def cmd_report(args) -> int:
    dirs = [Path(d) for d in args.runs]
    expanded = []
    for d in dirs:
        if (d / "manifest.json").exists():
            expanded.append(d)
        else:
            expanded += sorted(p.parent for p in d.glob("*/manifest.json"))
    if not expanded:
        raise CliError("no run directories with a manifest.json were found")
    out = Path(args.out) if args.out else Path(os.environ.get("AIIG_OUT", "."))
    table, notes = write_report(expanded, out)
    print((out / "summary.txt").read_text(encoding="utf-8"), end="")
    return 0


def cmd_matrix(args) -> int:
    """Train and evaluate every (mode, variant) cell, then write the summary."""
    base = _load_config(args)
    root = _out_dir(args, base)
    modes = args.modes or list(MODES)
    dirs = []
    for mode in modes:
        for variant in VARIANTS:
            cfg = base.with_overrides(mode=mode, variant=variant)
            run_dir = root / f"{mode}-{variant}"
            print(f"== {mode}/{variant}", flush=True)
            train_full(cfg, run_dir, deterministic=args.deterministic)
            run_evaluation(run_dir / "protagonist.ckpt", cfg, run_dir)
            dirs.append(run_dir)
    write_report(dirs, root)
    print((root / "summary.txt").read_text(encoding="utf-8"), end="")
    return 0


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aiig", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, variant=False):
        p.add_argument("--config", help="TOML experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (beats AIIG_OUT and the config)")
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded, no wall-clock columns")
        if variant:
            p.add_argument("--variant", choices=VARIANTS)
            p.add_argument("--mode", choices=MODES)
            p.add_argument("--gamma", type=float, help="discount for --variant single_gamma")

    p = sub.add_parser("train", help="ensemble self-play training")
    common(p, variant=True)
    p.set_defaults(func=cmd_train)

    for name, func, text in (("evaluate", cmd_evaluate, "robustness evaluation of a protagonist"),
                             ("meta", cmd_meta, "anneal the ensemble of a finished run")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--checkpoint", required=True, help="path to protagonist.ckpt")
        p.set_defaults(func=func)

    p = sub.add_parser("trace", help="log one episode as JSON lines")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--opponent", default="rush", help="rush, deceive, random or member:<id>")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("report", help="summarize run directories")
    p.add_argument("runs", nargs="+", help="run directories or parents of run directories")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("matrix", help="train + evaluate every mode x variant cell, then report")
    common(p)
    p.add_argument("--modes", nargs="+", choices=MODES)
    p.set_defaults(func=cmd_matrix)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with deterministic_mode(getattr(args, "deterministic", False)):
            return args.func(args)
    except (ConfigError, CliError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
