"""Sweep gamma = tau / eta between pure self-play (0) and DPO (1).

Each seed pretrains one reference that all gammas share, so the rows differ
only in the loss. Pass a seed count as the first argument (default 5); the
CSV and bar chart go to ``demo_output/ablation``.
"""

import sys
from pathlib import Path

from diffnpo.config import default_config
from diffnpo.evaluation import ABLATION_GAMMAS, ablation_sweep, median_by_gamma
from diffnpo.plotting import plot

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5
out = Path("demo_output/ablation")
out.mkdir(parents=True, exist_ok=True)

rows = ablation_sweep(default_config(), gammas=ABLATION_GAMMAS, seeds=range(n_seeds), out_csv=out / "ablation.csv")
plot("ablation", out / "ablation.csv", out / "ablation.svg")
for gamma, med in median_by_gamma(rows).items():
    print(f"gamma={gamma:.3f}  median win rate vs reference {med:.3f}")
