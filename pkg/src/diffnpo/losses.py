"""Pairwise preference losses on noised (preferred, rejected) samples.

All losses return ``(loss, grad)`` with ``grad`` the gradient with respect to
the trainable parameters ``theta`` only; reference and previous models are
treated as constants.

The per-pair implicit reward is::

    delta(c, x_t+, x_t-) = -(||eps+ - f(x_t+)||^2 - ||eps- - f(x_t-)||^2)

and the Nash loss for a pair is ``-log sigmoid(z)`` with logit::

    z = w * (delta_theta - gamma * delta_ref - (1 - gamma) * delta_prev)

where ``gamma = tau / eta`` and ``w`` is the folded timestep weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserParams, backward_cached, forward_cached
from .schedule import NoiseSchedule, forward_marginal

LOSS_NAMES = ("npo", "dpo", "selfplay", "sft", "inpo_sq")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, index: int, what: str = "loss term"):
        super().__init__(f"non-finite {what} at batch index {index}")
        self.index = index


@dataclass(frozen=True)
class LossConfig:
    """KL strength, game regularisation and the folded timestep weight.

    ``effective_weight`` multiplies every logit; it stands in for the product
    of KL strength, number of steps and timestep weighting. ``beta`` is kept
    for bookkeeping only.
    """

    beta: float = 1.0
    tau: float = 0.5
    eta: float = 1.0
    effective_weight: float = 500.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 0 <= self.tau <= self.eta:
            raise ValueError(f"need 0 <= tau <= eta, got tau={self.tau}, eta={self.eta}")
        if self.effective_weight <= 0:
            raise ValueError("effective_weight must be positive")

    @property
    def gamma(self) -> float:
        return self.tau / self.eta

    @classmethod
    def from_gamma(cls, gamma: float, eta: float = 1.0, **kw) -> "LossConfig":
        if not 0.0 <= gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
        return cls(tau=gamma * eta, eta=eta, **kw)


@dataclass(frozen=True)
class NoisedPairBatch:
    c: np.ndarray
    t: np.ndarray
    x0_pos: np.ndarray
    x0_neg: np.ndarray
    eps_pos: np.ndarray
    eps_neg: np.ndarray
    xt_pos: np.ndarray
    xt_neg: np.ndarray

    def __len__(self) -> int:
        return self.c.shape[0]

    def swapped(self) -> "NoisedPairBatch":
        return NoisedPairBatch(self.c, self.t, self.x0_neg, self.x0_pos,
                               self.eps_neg, self.eps_pos, self.xt_neg, self.xt_pos)


def make_pair_batch(c, x0_pos, x0_neg, t, eps_pos, eps_neg, sched: NoiseSchedule) -> NoisedPairBatch:
    """Noise both members of every pair at the same timestep."""
    x0_pos = np.atleast_2d(np.asarray(x0_pos, dtype=np.float64))
    x0_neg = np.atleast_2d(np.asarray(x0_neg, dtype=np.float64))
    eps_pos = np.atleast_2d(np.asarray(eps_pos, dtype=np.float64))
    eps_neg = np.atleast_2d(np.asarray(eps_neg, dtype=np.float64))
    B = x0_pos.shape[0]
    if not (x0_neg.shape == eps_pos.shape == eps_neg.shape == x0_pos.shape):
        raise ValueError("pair arrays must share one shape")
    c = np.broadcast_to(np.asarray(c, dtype=np.int64), (B,)).copy()
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (B,)).copy()
    xt_pos = forward_marginal(x0_pos, t, eps_pos, sched)
    xt_neg = forward_marginal(x0_neg, t, eps_neg, sched)
    return NoisedPairBatch(c, t, x0_pos, x0_neg, eps_pos, eps_neg, xt_pos, xt_neg)


def sample_pair_batch(rng: np.random.Generator, c, x0_pos, x0_neg, sched: NoiseSchedule) -> NoisedPairBatch:
    """Draw one shared t ~ U{1..T} per pair and independent noises for each side."""
    x0_pos = np.atleast_2d(x0_pos)
    B, d = x0_pos.shape
    t = rng.integers(1, sched.T + 1, size=B)
    eps = rng.standard_normal((2, B, d))
    return make_pair_batch(c, x0_pos, x0_neg, t, eps[0], eps[1], sched)


def log_sigmoid(z):
    """log σ(z) without overflow: min(z, 0) - log1p(exp(-|z|))."""
    z = np.asarray(z, dtype=np.float64)
    return np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _pair_forward(params: DenoiserParams, batch: NoisedPairBatch):
    x = np.concatenate([batch.xt_pos, batch.xt_neg])
    t = np.concatenate([batch.t, batch.t])
    c = np.concatenate([batch.c, batch.c])
    out, acts = forward_cached(params, x, t, c)
    B = len(batch)
    return out[:B], out[B:], acts


def delta(params: DenoiserParams, batch: NoisedPairBatch) -> np.ndarray:
    """Per-pair implicit reward (B,): large when the model fits the preferred noise better."""
    f_pos, f_neg, _ = _pair_forward(params, batch)
    err_pos = np.sum((batch.eps_pos - f_pos) ** 2, axis=1)
    err_neg = np.sum((batch.eps_neg - f_neg) ** 2, axis=1)
    return -(err_pos - err_neg)


def _delta_with_grad_fn(theta: DenoiserParams, batch: NoisedPairBatch):
    """δ_θ per pair plus a closure mapping per-pair dL/dδ to dL/dθ."""
    f_pos, f_neg, acts = _pair_forward(theta, batch)
    r_pos = batch.eps_pos - f_pos
    r_neg = batch.eps_neg - f_neg
    d = -(np.sum(r_pos ** 2, axis=1) - np.sum(r_neg ** 2, axis=1))

    def grad(dl_ddelta):
        g = dl_ddelta[:, None]
        # dδ/df+ = 2 r+, dδ/df- = -2 r-
        upstream = np.concatenate([2.0 * r_pos * g, -2.0 * r_neg * g])
        return backward_cached(theta, acts, upstream)

    return d, grad


def _check_finite(values, what):
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NonFiniteLossError(int(bad[0]), what)


def _check_arch(*models):
    arch = models[0].arch
    for m in models[1:]:
        if m.arch != arch:
            raise ValueError("all models must share one architecture")


def _logistic(theta, batch, baseline, w):
    """Mean -log σ(w (δ_θ - baseline)) and its θ-gradient; also returns the logits."""
    d_theta, grad_fn = _delta_with_grad_fn(theta, batch)
    z = w * (d_theta - baseline)
    _check_finite(z, "logit")
    loss = float(np.mean(-log_sigmoid(z)))
    dl_dz = -sigmoid(-z) / len(batch)
    return loss, grad_fn(w * dl_dz), z


def _nash_baseline(ref, prev, batch, gamma):
    """γ δ_ref + (1-γ) δ_prev, skipping any model whose weight is exactly zero."""
    baseline = np.zeros(len(batch))
    if gamma > 0:
        baseline = baseline + gamma * delta(ref, batch)
    if gamma < 1:
        baseline = baseline + (1.0 - gamma) * delta(prev, batch)
    _check_finite(baseline, "baseline delta")
    return baseline


def diff_npo_loss(theta: DenoiserParams, ref: DenoiserParams, prev: DenoiserParams,
                  batch: NoisedPairBatch, cfg: LossConfig, return_logits: bool = False):
    """Nash preference loss: -log σ(w[δ_θ - γ δ_ref - (1-γ) δ_prev]) averaged over pairs.

    A model whose weight in the baseline is exactly zero is never evaluated,
    so at γ=0 the result does not depend on ``ref`` and at γ=1 not on ``prev``.
    """
    _check_arch(theta, ref, prev)
    baseline = _nash_baseline(ref, prev, batch, cfg.gamma)
    loss, grad, z = _logistic(theta, batch, baseline, cfg.effective_weight)
    return (loss, grad, z) if return_logits else (loss, grad)


def diff_dpo_loss(theta: DenoiserParams, ref: DenoiserParams, batch: NoisedPairBatch,
                  cfg: LossConfig, return_logits: bool = False):
    """Diffusion-DPO: -log σ(w[δ_θ - δ_ref])."""
    _check_arch(theta, ref)
    baseline = delta(ref, batch)
    _check_finite(baseline, "baseline delta")
    loss, grad, z = _logistic(theta, batch, baseline, cfg.effective_weight)
    return (loss, grad, z) if return_logits else (loss, grad)


def selfplay_loss(theta: DenoiserParams, prev: DenoiserParams, batch: NoisedPairBatch,
                  cfg: LossConfig, return_logits: bool = False):
    """Pure self-play: -log σ(w[δ_θ - δ_prev])."""
    _check_arch(theta, prev)
    baseline = delta(prev, batch)
    _check_finite(baseline, "baseline delta")
    loss, grad, z = _logistic(theta, batch, baseline, cfg.effective_weight)
    return (loss, grad, z) if return_logits else (loss, grad)


def inpo_square_loss(theta: DenoiserParams, ref: DenoiserParams, prev: DenoiserParams,
                     batch: NoisedPairBatch, cfg: LossConfig, target_margin: float | None = None,
                     return_logits: bool = False):
    """Squared-distance variant: mean (z - target_margin)^2 with z the Nash logit.

    ``target_margin`` defaults to 1 / (2 eta).
    """
    _check_arch(theta, ref, prev)
    if target_margin is None:
        target_margin = 1.0 / (2.0 * cfg.eta)
    if not np.isfinite(target_margin):
        raise ValueError("target_margin must be finite")
    baseline = _nash_baseline(ref, prev, batch, cfg.gamma)
    d_theta, grad_fn = _delta_with_grad_fn(theta, batch)
    w = cfg.effective_weight
    z = w * (d_theta - baseline)
    _check_finite(z, "logit")
    resid = z - target_margin
    loss = float(np.mean(resid ** 2))
    grad = grad_fn(w * 2.0 * resid / len(batch))
    return (loss, grad, z) if return_logits else (loss, grad)


def denoising_loss(theta: DenoiserParams, x_t, t, c, eps):
    """Unweighted mean over the batch of ||eps - ε̂(x_t, t, c)||^2."""
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    out, acts = forward_cached(theta, np.atleast_2d(x_t), t, c)
    resid = out - eps
    per_item = np.sum(resid ** 2, axis=1)
    _check_finite(per_item, "denoising error")
    B = eps.shape[0]
    loss = float(np.mean(per_item))
    grad = backward_cached(theta, acts, 2.0 * resid / B)
    return loss, grad


def preferred_sft_loss(theta: DenoiserParams, batch: NoisedPairBatch):
    """Online SFT baseline: denoising loss on the preferred member of every pair."""
    return denoising_loss(theta, batch.xt_pos, batch.t, batch.c, batch.eps_pos)


def compute_loss(name: str, theta, ref, prev, batch, cfg: LossConfig, target_margin=None):
    """Dispatch by loss name; returns (loss, grad, logits-or-None)."""
    if name == "npo":
        return diff_npo_loss(theta, ref, prev, batch, cfg, return_logits=True)
    if name == "dpo":
        return diff_dpo_loss(theta, ref, batch, cfg, return_logits=True)
    if name == "selfplay":
        return selfplay_loss(theta, prev, batch, cfg, return_logits=True)
    if name == "inpo_sq":
        return inpo_square_loss(theta, ref, prev, batch, cfg, target_margin, return_logits=True)
    if name == "sft":
        loss, grad = preferred_sft_loss(theta, batch)
        return loss, grad, None
    raise ValueError(f"unknown loss {name!r}; expected one of {', '.join(LOSS_NAMES)}")
