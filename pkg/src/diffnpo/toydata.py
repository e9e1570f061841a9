"""Per-prompt isotropic Gaussian mixtures used to pretrain the reference model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream


@dataclass(frozen=True)
class MixtureSpec:
    """``means`` has shape (C, M, d); ``weights`` (C, M); one shared std."""

    means: np.ndarray
    std: float
    weights: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        if means.ndim != 3:
            raise ValueError("means must have shape (prompts, components, dim)")
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape != means.shape[:2]:
            raise ValueError(f"weights shape {weights.shape} does not match means {means.shape[:2]}")
        if np.any(weights < 0) or np.any(np.abs(weights.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("each prompt's component weights must form a probability vector")
        if self.std < 0:
            raise ValueError("std must be non-negative")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)

    @property
    def n_prompts(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[2]

    @classmethod
    def two_component_ring(cls, n_prompts: int = 4, radius: float = 1.5, std: float = 0.3) -> "MixtureSpec":
        """Default toy data: for prompt c, two equal-weight modes at ±radius along angle πc/C."""
        means = []
        for c in range(n_prompts):
            a = np.pi * c / n_prompts
            u = radius * np.array([np.cos(a), np.sin(a)])
            means.append([u, -u])
        return cls(np.array(means), std, np.full((n_prompts, 2), 0.5))


def sample_data(spec: MixtureSpec, c: int, n: int, seed: int, *stream_keys,
                return_components: bool = False):
    """Draw ``n`` samples for prompt ``c``: component first, then Gaussian noise.

    Extra ``stream_keys`` select an independent stream under the same seed.
    """
    if not 0 <= c < spec.n_prompts:
        raise ValueError(f"unknown prompt {c}; spec has {spec.n_prompts}")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = stream(seed, "data", c, *stream_keys)
    comp = rng.choice(spec.means.shape[1], size=n, p=spec.weights[c])
    x = spec.means[c, comp] + spec.std * rng.standard_normal((n, spec.dim))
    return (x, comp) if return_components else x


def nearest_component(spec: MixtureSpec, x, c: int) -> np.ndarray:
    d2 = np.sum((np.asarray(x)[:, None, :] - spec.means[c][None]) ** 2, axis=-1)
    return np.argmin(d2, axis=1)
