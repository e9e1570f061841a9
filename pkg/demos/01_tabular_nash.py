"""Exact Nash policies for small preference games.

Rock-paper-scissors has no Bradley-Terry reward that explains it, yet the
regularised game still has a unique equilibrium. This script solves it with
mirror-descent self-play, does the same for a biased two-action game, and
compares both matrices against the best additive reward fit.
"""

import numpy as np

from diffnpo.tabular import (
    GameParams, PreferenceMatrix, bt_fit_test, duality_gap, rock_paper_scissors, solve_nash, uniform,
)

# Rock-paper-scissors, starting away from the equilibrium so the iterates have work to do.
rps = rock_paper_scissors()
params = GameParams(tau=0.5, eta=1.0, p_ref=uniform(3))
res = solve_nash(rps, params, init=[0.7, 0.2, 0.1])
print("RPS equilibrium:", np.round(res.policy, 6), f"after {res.iterations} iterations")
print("gap history (first 6):", [f"{g:.2e}" for g in res.gap_history[:6]])

# A transitive game: action 0 wins 80% of the time. The KL term to the uniform
# reference keeps the equilibrium from collapsing onto action 0.
biased = PreferenceMatrix([[0.5, 0.8], [0.2, 0.5]])
for tau in (0.1, 0.5, 1.0):
    res = solve_nash(biased, GameParams(tau=tau, eta=2.0, p_ref=uniform(2)))
    print(f"tau={tau}: policy {np.round(res.policy, 4)}  gap {res.gap:.1e}")

# Any policy can be exploited unless it is the equilibrium: the gap measures by how much.
for p in ([1.0, 0.0], [0.5, 0.5], [0.5744, 0.4256]):
    print("gap of", p, "=", f"{duality_gap(np.array(p), biased, GameParams(1.0, 2.0, uniform(2))):.2e}")

# Which matrices does a single scalar reward explain?
for name, P in [("biased", biased), ("scores", PreferenceMatrix.from_scores([0.0, 1.0, -2.0])), ("RPS", rps)]:
    fit = bt_fit_test(P)
    print(f"{name:7s} Bradley-Terry representable: {fit.fits}  (max logit residual {fit.residual:.2e})")
