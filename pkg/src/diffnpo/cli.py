"""Command-line entry point: ``diffnpo <subcommand> ...``.

Exit codes: 0 success, 1 input or validation error, 2 non-convergence.
Config-driven subcommands take trailing ``section.key=value`` overrides.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .denoiser import load_checkpoint, save_checkpoint
from .evaluation import ABLATION_GAMMAS, ablation_sweep, median_by_gamma, winrate
from .plotting import PLOT_KINDS, PlotInputError, plot
from .tabular import GameParams, load_matrix, solve_nash, uniform

log = logging.getLogger("diffnpo")

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


def _load(args) -> RunConfig:
    return load_config(args.config, args.overrides)


def _prepare_out(cfg: RunConfig, override=None) -> Path:
    out = Path(override) if override else cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.yaml").write_text(cfg.dump())
    return out


def cmd_tabular_solve(args) -> int:
    P = load_matrix(args.game)
    ref = uniform(P.N) if args.ref is None else np.array([float(v) for v in args.ref.split(",")])
    if ref.shape != (P.N,):
        raise UsageError(f"--ref has {ref.size} entries, the game has {P.N} actions")
    ref = ref / ref.sum()
    res = solve_nash(P, GameParams(args.tau, args.eta, ref), max_iters=args.max_iters, tol=args.tol)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "gap_history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "gap"])
        w.writerows((i, repr(g)) for i, g in enumerate(res.gap_history))
    with open(out / "policy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["action", "probability"])
        w.writerows((i, repr(float(p))) for i, p in enumerate(res.policy))
    print("policy:", " ".join(f"{p:.10f}" for p in res.policy))
    print(f"gap: {res.gap:.3e} after {res.iterations} iterations")
    if not res.converged:
        print(f"did not reach tol={args.tol} within {args.max_iters} iterations", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from .trainer import build_experiment, checkpoint_meta, mixture_coverage, pretrain_reference

    cfg = _load(args)
    out = _prepare_out(cfg, args.out_dir)
    exp = build_experiment(cfg)
    ref = pretrain_reference(exp, cfg)
    save_checkpoint(out / "ref.ckpt", ref, **checkpoint_meta(cfg, 0, "ref"))
    for c in range(exp.prompts.n_prompts):
        counts, p = mixture_coverage(ref, exp, c, 400, cfg.eval.seed, cfg.train.inference_steps)
        print(f"prompt {c}: component counts {counts.tolist()} chi-square p={p:.3g}")
    print(f"wrote {out / 'ref.ckpt'}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import build_experiment, load_reference, run_training

    cfg = _load(args)
    out = _prepare_out(cfg, args.out_dir)
    ref = None
    if args.ref:
        ref = load_reference(args.ref, build_experiment(cfg))
    res = run_training(cfg, ref=ref, out_dir=out)
    last = res.metrics[-1] if res.metrics else {}
    print(f"trained {len(res.metrics)} steps, final loss {last.get('loss', float('nan')):.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    a, _ = load_checkpoint(args.checkpoint_a)
    b, _ = load_checkpoint(args.checkpoint_b)
    if a.arch != b.arch:
        raise UsageError("checkpoints have different architectures")
    sched = cfg.build_schedule()
    report = winrate(a, b, range(cfg.build_prompts().n_prompts), cfg.build_oracles(),
                     cfg.eval.n_per_prompt, cfg.eval.seed, sched, cfg.eval.inference_steps)
    for row in report.rows():
        print(f"{row['oracle']}: winrate {row['winrate']:.4f} ± {row['ci_halfwidth']:.4f}")
    out = Path(args.out) if args.out else _prepare_out(cfg) / "eval.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load(args)
    out = _prepare_out(cfg, args.out_dir)
    gammas = ABLATION_GAMMAS if args.gammas is None else [float(g) for g in args.gammas.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = ablation_sweep(cfg, gammas=gammas, seeds=seeds, out_csv=out / "ablation.csv",
                          out_dir=out / "runs" if args.keep_runs else None)
    plot("ablation", out / "ablation.csv", out / "ablation.svg")
    for g, m in median_by_gamma(rows).items():
        print(f"gamma={g:.4f} median winrate {m:.4f}")
    print(f"wrote {out / 'ablation.csv'} and {out / 'ablation.svg'}")
    return EXIT_OK


def cmd_plot(args) -> int:
    n = plot(args.kind, args.input, args.out)
    print(f"wrote {args.out} ({n} {'bars' if args.kind == 'ablation' else 'points'})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffnpo", description="Nash preference optimisation toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", help="YAML run configuration")
        sp.add_argument("overrides", nargs="*", help="dotted overrides, e.g. loss.gamma=0.5")

    sp = sub.add_parser("tabular-solve", help="solve a tabular preference game")
    sp.add_argument("game", help="matrix file: N, then N rows")
    sp.add_argument("--tau", type=float, default=0.5)
    sp.add_argument("--eta", type=float, default=1.0)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--max-iters", type=int, default=10_000)
    sp.add_argument("--ref", help="comma-separated reference policy (default uniform)")
    sp.add_argument("--out-dir", default=".")
    sp.set_defaults(func=cmd_tabular_solve)

    sp = sub.add_parser("pretrain", help="pretrain the reference denoiser")
    with_config(sp)
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("train", help="pretrain (or load) the reference, then run online training")
    with_config(sp)
    sp.add_argument("--ref", help="reference checkpoint to reuse instead of pretraining")
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="paired win rate of checkpoint A against checkpoint B")
    sp.add_argument("checkpoint_a")
    sp.add_argument("checkpoint_b")
    with_config(sp)
    sp.add_argument("--out", help="CSV path (default <output.dir>/eval.csv)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="gamma sweep over several seeds")
    with_config(sp)
    sp.add_argument("--gammas", help="comma-separated gammas (default the standard six)")
    sp.add_argument("--seeds", default="0,1,2,3,4")
    sp.add_argument("--keep-runs", action="store_true", help="keep per-run metrics and checkpoints")
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("plot", help="render metrics or CSV output as SVG")
    sp.add_argument("input")
    sp.add_argument("--kind", required=True, help=f"one of {', '.join(PLOT_KINDS)}")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PlotInputError, UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
