"""Discrete-time DDPM forward process.

Timesteps are 1-based throughout: ``t = 1`` is the least noisy step and
``t = T`` the most. Tables are stored 0-based, so ``betas[t - 1]`` is beta_t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Coefficient tables for ``T`` diffusion steps.

    ``sigma2s[0]`` is set to ``betas[0]`` so that a variance exists at t=1.
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    bar_alphas: np.ndarray
    sigma2s: np.ndarray

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        betas = np.array(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D sequence")
        if not np.all((betas > 0) & (betas < 1)):
            raise ValueError("every beta must lie in the open interval (0, 1)")
        alphas = 1.0 - betas
        bar_alphas = np.cumprod(alphas)
        sigma2s = np.empty_like(betas)
        sigma2s[0] = betas[0]
        sigma2s[1:] = (1.0 - bar_alphas[:-1]) / (1.0 - bar_alphas[1:]) * betas[1:]
        for arr in (betas, alphas, bar_alphas, sigma2s):
            arr.setflags(write=False)
        return cls(int(betas.size), betas, alphas, bar_alphas, sigma2s)

    def check_t(self, t, lo: int = 1) -> None:
        t = np.asarray(t)
        if np.any(t < lo) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [{lo}, {self.T}]: {t}")

    def bar_alpha(self, t):
        """ᾱ_t with the convention ᾱ_0 = 1 (t may be an int or int array)."""
        t = np.asarray(t)
        padded = np.concatenate(([1.0], self.bar_alphas))
        return padded[t]


def build_linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly spaced betas from ``beta_start`` to ``beta_end`` inclusive."""
    if int(T) != T or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, int(T)))


def forward_marginal(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """Sample of q(x_t | x_0) given the noise: √ᾱ_t·x0 + √(1-ᾱ_t)·eps.

    ``t`` may be a scalar or a per-row integer array when ``x0`` is a batch.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} does not match eps shape {eps.shape}")
    sched.check_t(t)
    ab = sched.bar_alpha(t)
    if np.ndim(ab) == 1 and x0.ndim == 2:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_mean_coeffs(t: int, sched: NoiseSchedule) -> tuple[float, float, float]:
    """Coefficients of q(x_{t-1} | x_t, x_0) = N(a·x0 + b·x_t, var·I) for t >= 2."""
    if t < 2 or t > sched.T:
        raise ValueError(f"posterior coefficients need 2 <= t <= {sched.T}, got {t}")
    beta = sched.betas[t - 1]
    alpha = sched.alphas[t - 1]
    ab_t = sched.bar_alphas[t - 1]
    ab_prev = sched.bar_alphas[t - 2]
    coeff_x0 = np.sqrt(ab_prev) * beta / (1.0 - ab_t)
    coeff_xt = np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t)
    return float(coeff_x0), float(coeff_xt), float(sched.sigma2s[t - 1])


def strided_coeffs(t: int, t_prev: int, sched: NoiseSchedule) -> tuple[float, float, float]:
    """Posterior coefficients for a jump from ``t`` down to ``t_prev < t``.

    With ``t_prev = t - 1`` this equals :func:`posterior_mean_coeffs`. For
    ``t_prev = 0`` the mean collapses onto x0 and the variance is zero.
    """
    ab_t = float(sched.bar_alpha(t))
    ab_prev = float(sched.bar_alpha(t_prev))
    if t_prev == t - 1 and t >= 2:
        return posterior_mean_coeffs(t, sched)
    beta = 1.0 - ab_t / ab_prev
    alpha = 1.0 - beta
    coeff_x0 = np.sqrt(ab_prev) * beta / (1.0 - ab_t)
    coeff_xt = np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t)
    var = (1.0 - ab_prev) / (1.0 - ab_t) * beta
    return float(coeff_x0), float(coeff_xt), float(var)


def timestep_subsequence(T: int, n_steps: int) -> np.ndarray:
    """Uniformly spaced increasing timesteps ending at ``T``; all of 1..T when n_steps == T."""
    if not 1 <= n_steps <= T:
        raise ValueError(f"inference steps must be in [1, {T}], got {n_steps}")
    grid = np.linspace(T / n_steps, T, n_steps)
    return np.floor(grid + 0.5).astype(np.int64)
