"""Ancestral (DDPM) sampling over a possibly subsampled timestep sequence."""

from __future__ import annotations

import numpy as np

from .denoiser import DenoiserParams, denoise_forward
from .rng import stream
from .schedule import NoiseSchedule, strided_coeffs, timestep_subsequence


def draw_sampling_noise(rng: np.random.Generator, n: int, dim: int, inference_steps: int) -> np.ndarray:
    """All noise one sampling run consumes: x_T plus one draw per noisy step."""
    return rng.standard_normal((inference_steps, n, dim))


def sample_with_noise(params: DenoiserParams, c, sched: NoiseSchedule, inference_steps: int,
                      noise: np.ndarray) -> np.ndarray:
    """Deterministic reverse process given pre-drawn ``noise`` of shape (K, n, d).

    ``noise[0]`` is x_T; ``noise[i]`` perturbs the i-th transition. The last
    transition (down to t=0) is noise-free, so only K-1 perturbations are used.
    """
    ts = timestep_subsequence(sched.T, inference_steps)
    x = noise[0].copy()
    n = x.shape[0]
    c = np.broadcast_to(np.asarray(c, dtype=np.int64), (n,))
    prevs = np.concatenate([[0], ts[:-1]])
    for i in range(len(ts) - 1, -1, -1):
        t, t_prev = int(ts[i]), int(prevs[i])
        eps_hat = denoise_forward(params, x, t, c)
        ab_t = sched.bar_alpha(t)
        x0_hat = (x - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
        a, b, var = strided_coeffs(t, t_prev, sched)
        x = a * x0_hat + b * x
        if t_prev > 0:
            x = x + np.sqrt(var) * noise[len(ts) - i]
    return x


def ancestral_sample(params: DenoiserParams, c, sched: NoiseSchedule, inference_steps: int,
                     seed, n: int = 1, stream_keys: tuple = ()) -> np.ndarray:
    """Generate ``n`` clean samples for prompt ``c``.

    ``seed`` is either an int (combined with ``stream_keys`` into a named
    stream) or a ready ``np.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, "sample", *stream_keys)
    noise = draw_sampling_noise(rng, n, params.arch.dim, inference_steps)
    return sample_with_noise(params, c, sched, inference_steps, noise)
