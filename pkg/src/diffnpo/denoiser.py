"""Conditional noise-prediction MLP with hand-written backpropagation.

The network maps ``[x_t ‖ time-embedding(t) ‖ one-hot(c)]`` through ``depth``
tanh layers of width ``hidden`` to a predicted noise of the same dimension as
``x_t``. Parameters live in one flat float64 vector so that the current,
reference and previous models are plain interchangeable values.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"DNPOCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    dim: int
    n_prompts: int
    hidden: int = 64
    depth: int = 2
    time_dim: int = 8

    def __post_init__(self):
        for name in ("dim", "n_prompts", "hidden", "depth", "time_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"architecture field {name} must be >= 1")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even (sin/cos pairs)")

    @property
    def input_dim(self) -> int:
        return self.dim + self.time_dim + self.n_prompts

    def layer_shapes(self) -> list[tuple[int, int]]:
        widths = [self.input_dim] + [self.hidden] * self.depth + [self.dim]
        return list(zip(widths[:-1], widths[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes())


@dataclass(frozen=True, eq=False)
class DenoiserParams:
    arch: Architecture
    vector: np.ndarray

    def __post_init__(self):
        vec = np.array(self.vector, dtype=np.float64).ravel()
        if vec.size != self.arch.n_params:
            raise ValueError(
                f"parameter count {vec.size} does not match architecture ({self.arch.n_params})"
            )
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        out, pos = [], 0
        for i, o in self.arch.layer_shapes():
            W = self.vector[pos:pos + i * o].reshape(i, o)
            pos += i * o
            b = self.vector[pos:pos + o]
            pos += o
            out.append((W, b))
        return out

    def replace(self, vector) -> "DenoiserParams":
        return DenoiserParams(self.arch, vector)

    def __len__(self) -> int:
        return self.vector.size


@dataclass(frozen=True)
class PromptSet:
    """Discrete prompts with one-hot conditioning and a sampling distribution."""

    n_prompts: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.shape != (self.n_prompts,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("prompt weights must be a probability vector of length n_prompts")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n_prompts: int) -> "PromptSet":
        return cls(n_prompts, np.full(n_prompts, 1.0 / n_prompts))

    def embedding(self, c) -> np.ndarray:
        return np.eye(self.n_prompts)[np.asarray(c)]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(self.n_prompts, size=n, p=self.weights)


def init_params(arch: Architecture, seed: int) -> DenoiserParams:
    """Uniform(-1/√fan_in, 1/√fan_in) for every weight and bias."""
    from .rng import stream

    rng = stream(seed, "init")
    chunks = []
    for i, o in arch.layer_shapes():
        bound = 1.0 / np.sqrt(i)
        chunks.append(rng.uniform(-bound, bound, size=i * o))
        chunks.append(rng.uniform(-bound, bound, size=o))
    return DenoiserParams(arch, np.concatenate(chunks))


def zeros_like(params: DenoiserParams) -> DenoiserParams:
    return DenoiserParams(params.arch, np.zeros(params.arch.n_params))


def time_embedding(t, dim: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _batch_inputs(arch: Architecture, x_t, t, c):
    x = np.asarray(x_t, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != arch.dim:
        raise ValueError(f"sample dimension {x.shape[1]} does not match architecture dim {arch.dim}")
    B = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (B,))
    c = np.broadcast_to(np.asarray(c, dtype=np.int64), (B,))
    if np.any(t < 0):
        raise ValueError("timesteps must be non-negative")
    if np.any(c < 0) or np.any(c >= arch.n_prompts):
        raise ValueError(f"prompt id out of range [0, {arch.n_prompts})")
    onehot = np.zeros((B, arch.n_prompts))
    onehot[np.arange(B), c] = 1.0
    inp = np.concatenate([x, time_embedding(t, arch.time_dim), onehot], axis=1)
    return inp, single


def forward_cached(params: DenoiserParams, x_t, t, c):
    """Batched forward pass returning (output, activations) for backprop."""
    inp, single = _batch_inputs(params.arch, x_t, t, c)
    acts = [inp]
    layers = params.layers()
    h = inp
    for W, b in layers[:-1]:
        h = np.tanh(h @ W + b)
        acts.append(h)
    W, b = layers[-1]
    out = h @ W + b
    return (out[0] if single else out), acts


def backward_cached(params: DenoiserParams, acts, upstream) -> np.ndarray:
    """Gradient of sum(upstream * output) w.r.t. the flat parameter vector."""
    g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    layers = params.layers()
    if g.shape != (acts[0].shape[0], params.arch.dim):
        raise ValueError(f"upstream gradient shape {g.shape} does not match output")
    grads = [None] * len(layers)
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        h_in = acts[li]
        grads[li] = (h_in.T @ g, g.sum(axis=0))
        if li > 0:
            g = (g @ W.T) * (1.0 - acts[li] ** 2)
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def denoise_forward(params: DenoiserParams, x_t, t, c) -> np.ndarray:
    """Predicted noise ε̂(x_t, t, c); accepts a single sample or a batch."""
    out, _ = forward_cached(params, x_t, t, c)
    return out


def denoise_backward(params: DenoiserParams, x_t, t, c, upstream_grad) -> np.ndarray:
    _, acts = forward_cached(params, x_t, t, c)
    return backward_cached(params, acts, upstream_grad)


def soft_update(target: DenoiserParams, source: DenoiserParams, lam: float) -> DenoiserParams:
    """Elementwise ``lam * target + (1 - lam) * source``."""
    if target.arch != source.arch:
        raise ValueError("soft update between different architectures")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if lam == 0.0:
        return source
    if lam == 1.0:
        return target
    return target.replace(lam * target.vector + (1.0 - lam) * source.vector)


def soft_update_lambda(step: int) -> float:
    """Interpolation weight on the old policy at online step ``step`` (1-based)."""
    return min(0.001 * step, 0.5)


def save_checkpoint(path, params: DenoiserParams, **meta) -> None:
    """Write header + little-endian float64 parameters.

    ``meta`` (schedule parameters, seed, step, ...) must be JSON-serialisable.
    """
    header = {"format_version": CHECKPOINT_VERSION, "architecture": asdict(params.arch), **meta}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(params.vector.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[DenoiserParams, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", data, pos)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    arch = Architecture(**header["architecture"])
    payload = data[pos:]
    if len(payload) != 8 * arch.n_params:
        raise ValueError(
            f"{path}: expected {arch.n_params} parameters, found {len(payload) / 8:g}"
        )
    vec = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return DenoiserParams(arch, vec), header
