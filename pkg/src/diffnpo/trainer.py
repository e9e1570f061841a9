"""Reference pretraining and the online Nash preference optimisation loop.

One online step:

1. draw ``n`` prompts;
2. generate ``k`` candidates per prompt from the previous policy;
3. rank them with the average-rank oracle; best -> x+, worst -> x-;
4. noise each pair with one shared t and independent noises;
5. take ``inner_iters`` optimiser steps on the current parameters;
6. soft-update the previous policy towards the current parameters with
   weight ``min(0.001 s, 0.5)`` on the old previous policy.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .config import RunConfig
from .denoiser import (
    Architecture, DenoiserParams, PromptSet, init_params, load_checkpoint, save_checkpoint,
    soft_update, soft_update_lambda,
)
from .evaluation import winrate
from .losses import LossConfig, compute_loss, denoising_loss, sample_pair_batch
from .oracles import rank_candidates
from .rng import stream
from .sampling import ancestral_sample
from .schedule import NoiseSchedule, forward_marginal
from .toydata import MixtureSpec, nearest_component

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


# ---- optimisers ------------------------------------------------------------------


class SGD:
    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr, self.momentum = lr, momentum
        self.velocity = None

    def step(self, vec: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.momentum:
            self.velocity = grad if self.velocity is None else self.momentum * self.velocity + grad
            grad = self.velocity
        return vec - self.lr * grad


class Adam:
    def __init__(self, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, vec: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(vec)
            self.v = np.zeros_like(vec)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad ** 2
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return vec - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name: str, lr: float, momentum: float = 0.0):
    if name == "sgd":
        return SGD(lr, momentum)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")


# ---- experiment objects -------------------------------------------------------------


@dataclass
class Experiment:
    sched: NoiseSchedule
    arch: Architecture
    mixture: MixtureSpec
    prompts: PromptSet
    oracles: list
    loss_cfg: LossConfig


def build_experiment(cfg: RunConfig) -> Experiment:
    return Experiment(cfg.build_schedule(), cfg.build_architecture(), cfg.build_mixture(),
                      cfg.build_prompts(), cfg.build_oracles(), cfg.build_loss_config())


def checkpoint_meta(cfg: RunConfig, step: int, role: str) -> dict:
    s = cfg.schedule
    return {"schedule": {"T": s.T, "beta_start": s.beta_start, "beta_end": s.beta_end},
            "seed": cfg.train.seed, "step": step, "role": role}


# ---- pretraining --------------------------------------------------------------------


def _mixture_batch(spec: MixtureSpec, prompts: PromptSet, rng, n: int):
    c = prompts.sample(rng, n)
    u = rng.random(n)
    cdf = np.cumsum(spec.weights[c], axis=1)
    comp = np.minimum((u[:, None] > cdf).sum(axis=1), spec.means.shape[1] - 1)
    x = spec.means[c, comp] + spec.std * rng.standard_normal((n, spec.dim))
    return c, x


def pretrain_reference(exp: Experiment, cfg: RunConfig, plateau_window: int = 10,
                       plateau_tol: float = 1e-3, holdout: int = 4096,
                       ema: float = 0.995) -> DenoiserParams:
    """Fit the reference model with the denoising loss on the toy mixture.

    The plateau test uses a fixed held-out noised batch (the running training
    loss is too noisy): stop once it improves by less than ``plateau_tol``
    (relative) over ``plateau_window`` epochs, or after ``train.pretrain_epochs``.
    Returns an exponential moving average of the iterates (decay ``ema``).
    """
    t = cfg.train
    params = init_params(exp.arch, t.seed)
    if t.pretrain_epochs == 0:
        return params
    opt = make_optimizer(t.pretrain_optimizer, t.pretrain_lr, t.momentum)
    rng = stream(t.seed, "pretrain", "holdout")
    hc, hx0 = _mixture_batch(exp.mixture, exp.prompts, rng, holdout)
    ht = rng.integers(1, exp.sched.T + 1, size=holdout)
    heps = rng.standard_normal(hx0.shape)
    hxt = forward_marginal(hx0, ht, heps, exp.sched)
    history = []
    avg = params.vector.copy()
    for epoch in range(t.pretrain_epochs):
        for i in range(t.pretrain_steps_per_epoch):
            rng = stream(t.seed, "pretrain", epoch, i)
            c, x0 = _mixture_batch(exp.mixture, exp.prompts, rng, t.pretrain_batch)
            ts = rng.integers(1, exp.sched.T + 1, size=t.pretrain_batch)
            eps = rng.standard_normal(x0.shape)
            xt = forward_marginal(x0, ts, eps, exp.sched)
            loss, grad = denoising_loss(params, xt, ts, c, eps)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"pretraining loss non-finite at epoch {epoch}, step {i}")
            params = params.replace(opt.step(params.vector, grad))
            avg = ema * avg + (1.0 - ema) * params.vector
        history.append(denoising_loss(params.replace(avg), hxt, ht, hc, heps)[0])
        if len(history) > plateau_window:
            old = history[-1 - plateau_window]
            if (old - history[-1]) / old < plateau_tol:
                log.info("pretraining plateaued at epoch %d (held-out loss %.4f)", epoch, history[-1])
                break
    log.info("pretraining finished after %d epochs, held-out loss %.4f", len(history), history[-1])
    return params.replace(avg)


def mixture_coverage(params: DenoiserParams, exp: Experiment, c: int, n: int, seed: int,
                     inference_steps: int | None = None):
    """Chi-square test of generated component frequencies against the mixture weights.

    Returns (counts, p_value); samples are assigned to their nearest component.
    """
    steps = exp.sched.T if inference_steps is None else inference_steps
    x = ancestral_sample(params, c, exp.sched, steps, seed, n=n, stream_keys=("coverage", c))
    comp = nearest_component(exp.mixture, x, c)
    M = exp.mixture.means.shape[1]
    counts = np.bincount(comp, minlength=M)
    expected = exp.mixture.weights[c] * n
    return counts, float(stats.chisquare(counts, expected).pvalue)


# ---- online loop --------------------------------------------------------------------


@dataclass
class TrainerState:
    step: int
    theta: DenoiserParams
    prev: DenoiserParams
    ref: DenoiserParams
    optimizer: object
    metrics: list = field(default_factory=list)


@dataclass
class StepPairs:
    prompts: np.ndarray
    x_pos: np.ndarray
    x_neg: np.ndarray
    best: np.ndarray
    worst: np.ndarray


def init_state(ref: DenoiserParams, cfg: RunConfig) -> TrainerState:
    t = cfg.train
    return TrainerState(1, ref, ref, ref, make_optimizer(t.optimizer, t.lr, t.momentum))


def _candidates_for_prompt(prev, c, i, step, exp, cfg):
    t = cfg.train
    rng = stream(t.seed, "candidates", step, i)
    cands = ancestral_sample(prev, c, exp.sched, t.inference_steps, rng, n=t.candidates)
    rank = rank_candidates(cands, c, exp.oracles)
    return cands, rank


def build_pairs(state: TrainerState, exp: Experiment, cfg: RunConfig) -> StepPairs:
    """Prompts, candidates and best/worst selection for the current step."""
    t = cfg.train
    prompts = exp.prompts.sample(stream(t.seed, "prompts", state.step), t.prompts_per_step)
    jobs = [(state.prev, int(c), i, state.step, exp, cfg) for i, c in enumerate(prompts)]
    if t.workers > 1:
        with ThreadPoolExecutor(max_workers=t.workers) as pool:
            results = list(pool.map(lambda a: _candidates_for_prompt(*a), jobs))
    else:
        results = [_candidates_for_prompt(*a) for a in jobs]
    x_pos = np.stack([cands[r.best] for cands, r in results])
    x_neg = np.stack([cands[r.worst] for cands, r in results])
    best = np.array([r.best for _, r in results])
    worst = np.array([r.worst for _, r in results])
    return StepPairs(prompts, x_pos, x_neg, best, worst)


def npo_step(state: TrainerState, exp: Experiment, cfg: RunConfig, loss_name: str | None = None,
             monitor: bool = False) -> TrainerState:
    """One iteration of the online loop; returns the new state (inputs are not mutated)."""
    t = cfg.train
    start = time.perf_counter()
    name = loss_name or cfg.loss.name
    pairs = build_pairs(state, exp, cfg)
    batch = sample_pair_batch(stream(t.seed, "pairs", state.step), pairs.prompts,
                              pairs.x_pos, pairs.x_neg, exp.sched)
    assert np.array_equal(batch.t, batch.t.astype(np.int64)) and batch.t.shape == (len(batch),)

    theta = state.theta
    first = None
    for _ in range(t.inner_iters):
        loss, grad, logits = compute_loss(name, theta, state.ref, state.prev, batch,
                                          exp.loss_cfg, cfg.loss.target_margin)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingDiverged(f"non-finite loss at step {state.step}")
        if first is None:
            first = (loss, logits)
        theta = theta.replace(state.optimizer.step(theta.vector, grad))

    lam = soft_update_lambda(state.step)
    prev = soft_update(state.prev, theta, lam)
    loss, logits = first
    record = {
        "step": state.step,
        "loss": float(loss),
        "mean_logit": None if logits is None else float(np.mean(logits)),
        "winrate_vs_ref": None,
        "lambda": lam,
        "wallclock_ms": None,
    }
    if monitor:
        rep = winrate(prev, state.ref, range(exp.prompts.n_prompts), exp.oracles[0],
                      t.winrate_samples, t.seed, exp.sched, t.inference_steps)
        record["winrate_vs_ref"] = rep[exp.oracles[0].name].winrate
    if t.log_wallclock:
        record["wallclock_ms"] = round(1000 * (time.perf_counter() - start), 3)
    return TrainerState(state.step + 1, theta, prev, state.ref, state.optimizer,
                        state.metrics + [record])


@dataclass
class TrainResult:
    policy: DenoiserParams     # soft-updated policy after the last step
    theta: DenoiserParams
    ref: DenoiserParams
    metrics: list
    out_dir: Path | None = None


def run_training(cfg: RunConfig, ref: DenoiserParams | None = None, out_dir=None,
                 exp: Experiment | None = None) -> TrainResult:
    """Pretrain (unless ``ref`` is given) and run ``train.steps`` online steps.

    With ``out_dir`` set, writes ``metrics.jsonl`` (flushed every step),
    ``ref.ckpt``, ``theta.ckpt``, ``final.ckpt`` (the output policy) and
    periodic ``checkpoints/step_XXXXXX.ckpt``.
    """
    exp = exp or build_experiment(cfg)
    t = cfg.train
    if ref is None:
        ref = pretrain_reference(exp, cfg)
    elif ref.arch != exp.arch:
        raise ValueError("reference architecture does not match the configuration")
    out = Path(out_dir) if out_dir is not None else None
    fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "ref.ckpt", ref, **checkpoint_meta(cfg, 0, "ref"))
        fh = open(out / "metrics.jsonl", "w")
    state = init_state(ref, cfg)
    try:
        for s in range(1, t.steps + 1):
            monitor = t.winrate_every > 0 and (s % t.winrate_every == 0 or s == t.steps)
            state = npo_step(state, exp, cfg, monitor=monitor)
            if fh is not None:
                fh.write(json.dumps(state.metrics[-1]) + "\n")
                fh.flush()
                if t.checkpoint_every and s % t.checkpoint_every == 0:
                    (out / "checkpoints").mkdir(exist_ok=True)
                    save_checkpoint(out / "checkpoints" / f"step_{s:06d}.ckpt", state.prev,
                                    **checkpoint_meta(cfg, s, "policy"))
    finally:
        if fh is not None:
            fh.close()
    if out is not None:
        save_checkpoint(out / "final.ckpt", state.prev, **checkpoint_meta(cfg, t.steps, "policy"))
        save_checkpoint(out / "theta.ckpt", state.theta, **checkpoint_meta(cfg, t.steps, "theta"))
    return TrainResult(state.prev, state.theta, ref, state.metrics, out)


def load_reference(path, exp: Experiment) -> DenoiserParams:
    params, _ = load_checkpoint(path)
    if params.arch != exp.arch:
        raise ValueError(f"{path}: architecture does not match the configuration")
    return params
