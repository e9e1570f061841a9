"""Paired-seed win-rate evaluation and the gamma ablation sweep."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .denoiser import DenoiserParams
from .rng import stream
from .sampling import draw_sampling_noise, sample_with_noise
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

ABLATION_GAMMAS = (0.0, 1 / 9, 1 / 3, 1 / 2, 8 / 9, 1.0)
ABLATION_COLUMNS = ("gamma", "seed", "winrate", "ci_halfwidth", "mean_score_a", "mean_score_b")


@dataclass
class OracleResult:
    winrate: float
    ci_halfwidth: float
    wins: float
    comparisons: int
    mean_score_a: float | None = None
    mean_score_b: float | None = None


@dataclass
class EvalReport:
    results: dict
    prompts: list
    n_per_prompt: int
    seed: int
    samples_a: dict = field(default_factory=dict, repr=False)
    samples_b: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, oracle_name) -> OracleResult:
        return self.results[oracle_name]

    def rows(self):
        for name, r in self.results.items():
            yield {"oracle": name, "winrate": r.winrate, "ci_halfwidth": r.ci_halfwidth,
                   "wins": r.wins, "comparisons": r.comparisons,
                   "mean_score_a": r.mean_score_a, "mean_score_b": r.mean_score_b}

    def write_csv(self, path) -> None:
        rows = list(self.rows())
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


def _sample_dim(*models) -> int:
    for m in models:
        if isinstance(m, DenoiserParams):
            return m.arch.dim
        if hasattr(m, "dim"):
            return int(m.dim)
    raise ValueError("cannot infer the sample dimension; give a model with .dim")


def paired_samples(model_a, model_b, prompts, n_per_prompt: int, seed: int,
                   sched: NoiseSchedule, inference_steps: int):
    """Generate from both models with identical noise per prompt."""
    out_a, out_b = {}, {}
    dim = _sample_dim(model_a, model_b)
    for c in prompts:
        rng = stream(seed, "eval", int(c))
        noise = draw_sampling_noise(rng, n_per_prompt, dim, inference_steps)
        out_a[c] = _generate(model_a, c, sched, inference_steps, noise)
        out_b[c] = _generate(model_b, c, sched, inference_steps, noise)
    return out_a, out_b


def _generate(model, c, sched, inference_steps, noise):
    if isinstance(model, DenoiserParams):
        return sample_with_noise(model, c, sched, inference_steps, noise)
    # any callable (c, noise) -> samples, e.g. a fixed generator
    return np.asarray(model(c, noise), dtype=np.float64)


def winrate(model_a, model_b, prompts, oracles, n_per_prompt: int, seed: int,
            sched: NoiseSchedule, inference_steps: int) -> EvalReport:
    """Fraction of paired generations where A's sample beats B's; ties count 1/2.

    ``oracles`` may be one oracle or a list. ``model_a``/``model_b`` are
    parameter sets or callables ``(c, noise) -> samples``.
    """
    if n_per_prompt < 1:
        raise ValueError("n_per_prompt must be >= 1")
    if isinstance(model_a, DenoiserParams) and isinstance(model_b, DenoiserParams):
        if model_a.arch != model_b.arch:
            raise ValueError("models have different architectures")
    if not isinstance(oracles, (list, tuple)):
        oracles = [oracles]
    prompts = [int(c) for c in prompts]
    xa, xb = paired_samples(model_a, model_b, prompts, n_per_prompt, seed, sched, inference_steps)
    results = {}
    for o in oracles:
        wins, n = 0.0, 0
        sa, sb = [], []
        for c in prompts:
            p = o.pairwise_pref(xa[c], xb[c], c)
            wins += float(np.sum(p > 0.5) + 0.5 * np.sum(p == 0.5))
            n += p.size
            if o.has_scores:
                sa.append(o.score(xa[c], c))
                sb.append(o.score(xb[c], c))
        wr = wins / n
        half = 1.96 * np.sqrt(wr * (1.0 - wr) / n)
        results[o.name] = OracleResult(
            wr, float(half), wins, n,
            float(np.mean(np.concatenate(sa))) if sa else None,
            float(np.mean(np.concatenate(sb))) if sb else None,
        )
    return EvalReport(results, prompts, n_per_prompt, seed, xa, xb)


def ablation_sweep(base_config, gammas=ABLATION_GAMMAS, seeds=(0, 1, 2, 3, 4), out_csv=None,
                   oracle_name: str | None = None, refs: dict | None = None, out_dir=None):
    """Train one run per (gamma, seed) from a shared per-seed reference and score it vs that reference.

    Only ``loss.gamma`` and ``train.seed`` vary between rows. ``refs`` may
    carry pretrained references keyed by seed; missing ones are pretrained
    once and reused across gammas.
    """
    from .config import config_from_dict
    from .trainer import build_experiment, pretrain_reference, run_training

    for g in gammas:
        if not 0.0 <= g <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {g}")
    refs = {} if refs is None else refs
    base = base_config.to_dict()
    rows = []
    for seed in seeds:
        for g in gammas:
            raw = dict(base)
            raw["loss"] = {**base["loss"], "gamma": float(g), "tau": None}
            raw["train"] = {**base["train"], "seed": int(seed)}
            cfg = config_from_dict(raw)
            if seed not in refs:
                refs[seed] = pretrain_reference(build_experiment(cfg), cfg)
            run_dir = None if out_dir is None else f"{out_dir}/gamma{g:.4f}_seed{seed}"
            result = run_training(cfg, ref=refs[seed], out_dir=run_dir)
            exp = build_experiment(cfg)
            report = winrate(result.policy, refs[seed], range(exp.prompts.n_prompts), exp.oracles,
                             cfg.eval.n_per_prompt, cfg.eval.seed, exp.sched, cfg.eval.inference_steps)
            r = report[oracle_name or exp.oracles[0].name]
            row = {"gamma": float(g), "seed": int(seed), "winrate": r.winrate,
                   "ci_halfwidth": r.ci_halfwidth, "mean_score_a": r.mean_score_a,
                   "mean_score_b": r.mean_score_b}
            log.info("ablation gamma=%.4f seed=%d winrate=%.4f", g, seed, r.winrate)
            rows.append(row)
    if out_csv is not None:
        write_ablation_csv(out_csv, rows)
    return rows


def write_ablation_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(ABLATION_COLUMNS))
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row[k] is None else repr(row[k]) if isinstance(row[k], float) else row[k])
                        for k in ABLATION_COLUMNS})


def read_ablation_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({k: (int(v) if k == "seed" else float(v) if v != "" else None) for k, v in r.items()})
    return out


def median_by_gamma(rows) -> dict:
    by = {}
    for r in rows:
        by.setdefault(r["gamma"], []).append(r["winrate"])
    return {g: float(np.median(v)) for g, v in sorted(by.items())}
