"""Nash preference optimisation for a toy conditional diffusion model.

Tabular game engine, denoiser and losses, synthetic preference oracles,
online trainer, evaluation and ablations.
"""

from .config import ConfigError, RunConfig, default_config, load_config
from .denoiser import Architecture, DenoiserParams, init_params, load_checkpoint, save_checkpoint
from .evaluation import ablation_sweep, winrate
from .losses import LossConfig, compute_loss, diff_dpo_loss, diff_npo_loss
from .oracles import IntransitiveOracle, ScoreOracle, rank_candidates
from .sampling import ancestral_sample
from .schedule import NoiseSchedule, build_linear_schedule
from .tabular import GameParams, PreferenceMatrix, bt_fit_test, duality_gap, solve_nash
from .trainer import build_experiment, pretrain_reference, run_training

__version__ = "0.1.0"
