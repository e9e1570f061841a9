import numpy as np
import pytest

from diffnpo.denoiser import Architecture, init_params
from diffnpo.losses import sample_pair_batch
from diffnpo.schedule import build_linear_schedule


@pytest.fixture
def sched():
    return build_linear_schedule(100, 1e-3, 0.2)


@pytest.fixture
def small_arch():
    return Architecture(dim=2, n_prompts=4, hidden=16, depth=2, time_dim=8)


@pytest.fixture
def models(small_arch):
    """Independent theta, ref and prev parameter sets."""
    return tuple(init_params(small_arch, s) for s in (1, 2, 3))


def random_batch(rng, sched, B=8, n_prompts=4, dim=2):
    c = rng.integers(0, n_prompts, B)
    return sample_pair_batch(rng, c, rng.normal(size=(B, dim)), rng.normal(size=(B, dim)), sched)


def central_difference(f, x, idx, h=1e-5):
    out = np.empty(len(idx))
    for n, i in enumerate(idx):
        e = np.zeros_like(x)
        e[i] = h
        out[n] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)


# ---- acceptance reporting ----------------------------------------------------------

ACCEPTANCE_RESULTS = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    """Store and print one acceptance line, then fail the calling test if ``ok`` is false."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
