"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Set ``LEO_HANDOVER_LOG`` (DEBUG, INFO, WARNING, ...) for log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, metrics, plotting
from .agents import LEARNED, POLICIES
from .agents.controllers import make_controller
from .agents.sac import TrainingDiverged
from .agents.training import load_training, save_training, train
from .scenario import ConfigError, build_env, config_hash, dump_config, load_config, run_matrix

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
LOG_ENV = "LEO_HANDOVER_LOG"

log = logging.getLogger("leo_handover")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _policies(arg):
    if arg is None:
        return None
    return list(POLICIES) if arg == "all" else [arg]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="leo-handover", description="LEO satellite handover simulator")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, matrix=True):
        sp.add_argument("--config", required=True, help="YAML file or shipped name (default, desk)")
        sp.add_argument("--out", default="results", help="output directory")
        sp.add_argument("--episodes", type=int, help="training episodes for learned policies")
        if matrix:
            sp.add_argument("--policy", choices=list(POLICIES) + ["all"])
            sp.add_argument("--L", type=_int_list, help="comma-separated channels per satellite")
            sp.add_argument("--scenario", choices=["s1", "s2", "both"])
            sp.add_argument("--seed", type=_int_list, help="comma-separated seeds")
            sp.add_argument("--workers", type=int, default=1)

    for name, help_ in (("run", "run the policy x L x scenario x seed matrix"),
                        ("evaluate", "same as run, restricted to one policy"),
                        ("compare", "run all policies and print the headline deltas")):
        common(sub.add_parser(name, help=help_))

    t = sub.add_parser("train", help="train one learned policy and write checkpoints")
    common(t, matrix=False)
    t.add_argument("--policy", choices=list(LEARNED))
    t.add_argument("--seed", type=int)
    t.add_argument("--L", type=int)
    t.add_argument("--scenario", choices=["s1", "s2"])
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")

    pl = sub.add_parser("plot", help="draw SVG figures from a run directory")
    pl.add_argument("metrics_dir")
    pl.add_argument("--out", help="figure directory (default: METRICS_DIR/figures)")

    v = sub.add_parser("validate-config", help="load a config and print the resolved form")
    v.add_argument("--config", required=True)
    return p


# ---------------------------------------------------------------------------

def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "episodes", None) is not None:
        if args.episodes < 0:
            raise UsageError("--episodes must be >= 0")
        cfg = cfg.with_overrides(**{"training.episodes": args.episodes})
    return cfg


def _matrix_args(args, cfg, policies=None):
    policies = policies or _policies(args.policy) or [cfg.policy]
    Ls = args.L or [cfg.reward.capacity]
    if args.scenario == "both":
        scenarios = ["s1", "s2"]
    else:
        scenarios = [args.scenario] if args.scenario else [cfg.scenario]
    seeds = args.seed or list(cfg.seeds)
    if any(L < 1 for L in Ls):
        raise UsageError("--L values must be >= 1")
    return policies, Ls, scenarios, seeds


def _summary_table(rows) -> str:
    agg = {}
    for r in rows:
        agg.setdefault((r["policy"], r["L"], r["scenario"]), []).append(r)
    lines = [f"{'policy':<10} {'L':>3} {'scen':>4} {'seeds':>5} {'handovers':>10} {'blocking':>9} {'psi':>10}"]
    order = {p: i for i, p in enumerate(POLICIES)}
    for (p, L, sc), rs in sorted(agg.items(), key=lambda kv: (kv[0][1], kv[0][2], order.get(kv[0][0], 99))):
        lines.append(f"{p:<10} {L:>3} {sc:>4} {len(rs):>5} {np.mean([r['total_handovers'] for r in rs]):>10.2f} "
                     f"{np.mean([r['blocking'] for r in rs]):>9.2f} {np.mean([r['psi_total'] for r in rs]):>10.3f}")
    return "\n".join(lines)


def cmd_run(args, policies=None) -> int:
    cfg = _load(args)
    policies, Ls, scenarios, seeds = _matrix_args(args, cfg, policies)
    res = run_matrix(cfg, policies, Ls, scenarios, seeds, args.out, workers=args.workers)
    print(_summary_table(res.rows))
    for f in res.failures:
        print(f"FAILED {f[0]} policy={f[1]} seed={f[2]} L={f[3]} scenario={f[4]}: {f[5]}", file=sys.stderr)
    return EXIT_OK if res.ok else EXIT_FAILURE


def compare_rows(rows) -> list[str]:
    """Headline deltas of Nash-SAC against the baselines, per (L, scenario)."""
    out = []
    groups = {}
    for r in rows:
        groups.setdefault((r["L"], r["scenario"]), {}).setdefault(r["policy"], []).append(r)
    for (L, sc), by in sorted(groups.items()):
        mean = {p: {k: float(np.mean([r[k] for r in rs])) for k in ("total_handovers", "blocking", "psi_total")}
                for p, rs in by.items()}
        out.append(f"L={L} {sc}")
        if "nash-sac" in mean and "qlearning" in mean:
            ho = metrics.relative_reduction(mean["nash-sac"]["total_handovers"], mean["qlearning"]["total_handovers"])
            bl = metrics.relative_reduction(mean["nash-sac"]["blocking"], mean["qlearning"]["blocking"])
            out.append(f"  handover reduction vs qlearning: {100 * ho:.1f}%")
            out.append(f"  blocking reduction vs qlearning: {100 * bl:.1f}%")
        ranking = sorted(mean, key=lambda p: -mean[p]["psi_total"])
        out.append("  utility ordering: " + " > ".join(f"{p} ({mean[p]['psi_total']:.3f})" for p in ranking))
        if "nash-sac" in mean:
            worst = ranking[-1]
            gain = metrics.relative_improvement(mean["nash-sac"]["psi_total"], mean[worst]["psi_total"])
            out.append(f"  nash-sac utility vs worst ({worst}): {100 * gain:+.1f}%")
    return out


def cmd_compare(args) -> int:
    if args.policy not in (None, "all"):
        raise UsageError("compare always runs every policy; drop --policy")
    code = cmd_run(args, policies=list(POLICIES))
    rows = metrics.read_metrics_csv(Path(args.out) / "summary.csv")
    print("\n".join(compare_rows(rows)))
    return code


def cmd_evaluate(args) -> int:
    if args.policy == "all":
        raise UsageError("evaluate takes a single --policy")
    return cmd_run(args)


def cmd_train(args) -> int:
    cfg = _load(args)
    over = {}
    if args.policy:
        over["policy"] = args.policy
    if args.seed is not None:
        over["seeds"] = [args.seed]
    if args.L is not None:
        over["reward.capacity"] = args.L
    if args.scenario:
        over["scenario"] = args.scenario
    cfg = cfg.with_overrides(**over) if over else cfg
    if cfg.policy not in LEARNED:
        raise UsageError(f"policy {cfg.policy!r} has nothing to train")
    seed = cfg.seeds[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    env = build_env(cfg, seed)
    ctrl = make_controller(cfg.policy, env, seed, cfg.training.episodes, deep=cfg.training.deep,
                           qcfg=cfg.training.qlearning)
    start, curve = 0, []
    if args.resume:
        start, curve = load_training(out / "checkpoint", ctrl)
        log.info("resuming %s from episode %d", cfg.policy, start)
    (out / "config.yaml").write_text(dump_config(cfg))
    rows = train(lambda ep: env, ctrl, cfg.training.episodes, checkpoint_dir=out / "checkpoint",
                 checkpoint_every=cfg.training.checkpoint_every, start_episode=start, curve=curve)
    if not rows or start >= cfg.training.episodes:
        save_training(out / "checkpoint", ctrl, max(start, cfg.training.episodes), rows)
    (out / "curve.csv").write_bytes((out / "checkpoint" / "curve.csv").read_bytes())
    print(f"trained {cfg.policy} for {cfg.training.episodes} episodes (config {config_hash(cfg)[:12]}); "
          f"curve at {out / 'curve.csv'}")
    return EXIT_OK


def cmd_plot(args) -> int:
    paths = plotting.plot_all(args.metrics_dir, args.out)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    sys.stdout.write(dump_config(cfg))
    print(f"# config hash {config_hash(cfg)}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "evaluate": cmd_evaluate, "compare": cmd_compare, "train": cmd_train,
            "plot": cmd_plot, "validate-config": cmd_validate}


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:
        log.debug("unhandled error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
