"""Exact KL-regularised two-player preference game on a finite action set.

Game value for max-player ``p1`` and min-player ``p2``::

    J(p1, p2) = p1' P p2 - tau KL(p1 || ref) + tau KL(p2 || ref)

Policies are plain probability vectors. Exponential-weights maps are computed
in log space with max-subtraction so very small ``tau`` cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

class SupportError(ValueError):
    pass


@dataclass(frozen=True)
class PreferenceMatrix:
    P: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
            raise ValueError(f"preference matrix must be square, got shape {P.shape}")
        if not np.all(np.isfinite(P)) or np.any(P < 0) or np.any(P > 1):
            bad = np.argwhere(~(np.isfinite(P) & (P >= 0) & (P <= 1)))[0]
            raise ValueError(f"entry outside [0, 1] at ({bad[0]},{bad[1]})")
        N = P.shape[0]
        for i in range(N):
            if abs(P[i, i] - 0.5) > 1e-12:
                raise ValueError(f"diagonal entry at ({i},{i}) must be 0.5, got {P[i, i]}")
            for j in range(i + 1, N):
                if abs(P[i, j] + P[j, i] - 1.0) > 1e-9:
                    raise ValueError(
                        f"complement violation at ({i},{j}): "
                        f"P[{i}][{j}] + P[{j}][{i}] = {float(P[i, j] + P[j, i])!r}"
                    )
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def N(self) -> int:
        return self.P.shape[0]

    @classmethod
    def from_scores(cls, r) -> "PreferenceMatrix":
        """Bradley-Terry matrix P[i][j] = σ(r_i - r_j)."""
        r = np.asarray(r, dtype=np.float64)
        return cls(1.0 / (1.0 + np.exp(-(r[:, None] - r[None, :]))))


def rock_paper_scissors() -> PreferenceMatrix:
    """Actions ordered (rock, scissors, paper): each beats the next one cyclically."""
    return PreferenceMatrix(np.array([[0.5, 1.0, 0.0],
                                      [0.0, 0.5, 1.0],
                                      [1.0, 0.0, 0.5]]))


def load_matrix(path) -> PreferenceMatrix:
    """Read ``N`` on the first line, then ``N`` whitespace-separated rows."""
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty matrix file")
    try:
        N = int(lines[0])
    except ValueError:
        raise ValueError(f"{path}: first line must be the integer N, got {lines[0]!r}") from None
    rows = lines[1:]
    if len(rows) != N:
        raise ValueError(f"{path}: expected {N} rows, found {len(rows)}")
    P = np.empty((N, N))
    for i, row in enumerate(rows):
        vals = row.split()
        if len(vals) != N:
            raise ValueError(f"{path}: row {i} has {len(vals)} entries, expected {N}")
        try:
            P[i] = [float(v) for v in vals]
        except ValueError:
            raise ValueError(f"{path}: non-numeric entry in row {i}") from None
    return PreferenceMatrix(P)


def save_matrix(path, P: PreferenceMatrix) -> None:
    rows = [" ".join(repr(float(v)) for v in row) for row in P.P]
    Path(path).write_text("\n".join([str(P.N), *rows]) + "\n")


@dataclass(frozen=True)
class GameParams:
    tau: float
    eta: float
    p_ref: np.ndarray

    def __post_init__(self):
        if not (self.tau > 0 and self.eta > 0):
            raise ValueError("tau and eta must be positive")
        if self.tau > self.eta:
            raise ValueError(f"need tau <= eta, got tau={self.tau}, eta={self.eta}")
        ref = check_policy(self.p_ref)
        object.__setattr__(self, "p_ref", ref)

    @property
    def gamma(self) -> float:
        return self.tau / self.eta


def uniform(N: int) -> np.ndarray:
    return np.full(N, 1.0 / N)


def check_policy(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
        raise ValueError("policy must be a probability vector")
    return p


def _check_support(p, ref):
    off = np.flatnonzero((p > 0) & (ref == 0))
    if off.size:
        raise SupportError(f"policy puts mass on action {off[0]} outside the reference support")


def _normalize_log(logits: np.ndarray) -> np.ndarray:
    finite = np.isfinite(logits)
    out = np.zeros_like(logits)
    z = logits[finite] - logits[finite].max()
    w = np.exp(z)
    out[finite] = w / w.sum()
    return out


def _safe_log(p):
    with np.errstate(divide="ignore"):
        return np.log(p)


def kl(p, q) -> float:
    """KL(p || q) with 0 log 0 = 0; +inf if p has mass where q has none."""
    p, q = np.asarray(p), np.asarray(q)
    m = p > 0
    if np.any(q[m] == 0):
        return float("inf")
    return float(np.sum(p[m] * (np.log(p[m]) - np.log(q[m]))))


def win_prob(p, q, P: PreferenceMatrix) -> float:
    p, q = check_policy(p), check_policy(q)
    if p.size != P.N or q.size != P.N:
        raise ValueError("policy size does not match the preference matrix")
    return float(p @ P.P @ q)


def game_value(p1, p2, P: PreferenceMatrix, params: GameParams) -> float:
    _check_support(check_policy(p1), params.p_ref)
    _check_support(check_policy(p2), params.p_ref)
    return (win_prob(p1, p2, P)
            - params.tau * kl(p1, params.p_ref)
            + params.tau * kl(p2, params.p_ref))


def omd_update(p_s, P: PreferenceMatrix, params: GameParams) -> np.ndarray:
    """One entropic mirror-descent step against the current policy.

    p_next ∝ exp((P p_s)/eta) · ref^(tau/eta) · p_s^(1 - tau/eta)
    """
    p_s = check_policy(p_s)
    ref = params.p_ref
    _check_support(p_s, ref)
    g = params.gamma
    logits = (P.P @ p_s) / params.eta + g * _safe_log(ref)
    if g < 1.0:
        logits = logits + (1.0 - g) * _safe_log(p_s)
    return _normalize_log(logits)


def best_response(p_opp, P: PreferenceMatrix, params: GameParams) -> np.ndarray:
    """argmax_p  p' P p_opp - tau KL(p || ref), i.e. p ∝ ref · exp((P p_opp)/tau)."""
    p_opp = check_policy(p_opp)
    _check_support(p_opp, params.p_ref)
    return _normalize_log((P.P @ p_opp) / params.tau + _safe_log(params.p_ref))


def duality_gap(p, P: PreferenceMatrix, params: GameParams) -> float:
    """max_{p1} J(p1, p) - min_{p2} J(p, p2), both extrema in closed form.

    The min-player's problem is a max-player problem on the transformed matrix
    1 - P', which is again a valid preference matrix.
    """
    p = check_policy(p)
    _check_support(p, params.p_ref)
    br_max = best_response(p, P, params)
    br_min = _normalize_log(((1.0 - P.P.T) @ p) / params.tau + _safe_log(params.p_ref))
    gap = game_value(br_max, p, P, params) - game_value(p, br_min, P, params)
    if gap < -1e-10:
        raise ArithmeticError(f"negative duality gap {gap}")
    return max(gap, 0.0)


@dataclass
class NashResult:
    policy: np.ndarray
    gap_history: list
    converged: bool
    iterations: int

    @property
    def gap(self) -> float:
        return self.gap_history[-1]


def solve_nash(P: PreferenceMatrix, params: GameParams, max_iters: int = 10_000,
               tol: float = 1e-8, init=None) -> NashResult:
    """Self-play mirror descent from ``init`` (default the reference policy).

    Returns the first iterate whose duality gap is at most ``tol``, else the
    last iterate. ``gap_history[i]`` is the gap of the i-th iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    p = params.p_ref.copy() if init is None else check_policy(init).copy()
    history = [duality_gap(p, P, params)]
    it = 0
    while history[-1] > tol and it < max_iters:
        p = omd_update(p, P, params)
        history.append(duality_gap(p, P, params))
        it += 1
    return NashResult(p, history, history[-1] <= tol, it)


@dataclass
class BTFit:
    fits: bool
    residual: float
    scores: np.ndarray

    def __bool__(self) -> bool:
        return self.fits


def bt_fit_test(P: PreferenceMatrix, tol: float = 1e-6, clip: float = 1e-6) -> BTFit:
    """Least-squares fit of logit P[i][j] ≈ r_i - r_j over all ordered pairs i != j.

    ``residual`` is the largest absolute logit error of the best additive fit;
    the matrix is Bradley-Terry representable iff it is at most ``tol``.
    """
    N = P.N
    Q = np.clip(P.P, clip, 1.0 - clip)
    logits = np.log(Q) - np.log1p(-Q)
    i, j = np.where(~np.eye(N, dtype=bool))
    A = np.zeros((i.size, N))
    A[np.arange(i.size), i] = 1.0
    A[np.arange(i.size), j] = -1.0
    y = logits[i, j]
    r, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = r - r.mean()
    resid = float(np.max(np.abs(A @ r - y))) if y.size else 0.0
    return BTFit(resid <= tol, resid, r)
