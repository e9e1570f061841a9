import numpy as np
import pytest

from diffnpo.config import default_config
from diffnpo.denoiser import init_params
from diffnpo.evaluation import (
    ABLATION_COLUMNS, ABLATION_GAMMAS, ablation_sweep, median_by_gamma, read_ablation_csv, winrate,
    write_ablation_csv,
)
from diffnpo.oracles import IntransitiveOracle, ScoreOracle

TARGETS = np.array([[1.0, 0.0], [0.0, 1.0]])


class FixedModel:
    """Emits the target (plus an offset) for every noise draw."""

    dim = 2

    def __init__(self, offset):
        self.offset = np.asarray(offset, dtype=float)

    def __call__(self, c, noise):
        return np.tile(TARGETS[c] + self.offset, (noise.shape[1], 1))


class TestWinrate:
    def test_identical_models_tie(self, small_arch, sched):
        p = init_params(small_arch, 0)
        rep = winrate(p, p, range(4), ScoreOracle(np.zeros((4, 2))), 16, 0, sched, 10)
        assert rep["score"].winrate == 0.5

    def test_dominance(self, sched):
        rep = winrate(FixedModel([0, 0]), FixedModel([5, 5]), [0, 1], ScoreOracle(TARGETS), 10, 0, sched, 10)
        r = rep["score"]
        assert r.winrate == 1.0 and r.ci_halfwidth == 0.0 and r.comparisons == 20
        assert r.mean_score_a == 0.0 and r.mean_score_b == -50.0

    def test_complement_law(self, models, sched):
        a, b, _ = models
        oracles = [ScoreOracle(np.zeros((4, 2))), IntransitiveOracle(np.zeros((4, 2)), name="cyc")]
        ab = winrate(a, b, range(4), oracles, 32, 5, sched, 10)
        ba = winrate(b, a, range(4), oracles, 32, 5, sched, 10)
        for name in ("score", "cyc"):
            assert ab[name].winrate + ba[name].winrate == 1.0
        assert ab["cyc"].mean_score_a is None

    def test_hand_count_and_ci(self, sched):
        # prompt 0: A wins; prompt 1: A loses -> 0.5 overall
        class Split(FixedModel):
            def __call__(self, c, noise):
                return np.tile(TARGETS[c] + (0.0 if c == 0 else 3.0), (noise.shape[1], 1))
        rep = winrate(Split([0, 0]), FixedModel([1, 1]), [0, 1], ScoreOracle(TARGETS), 50, 0, sched, 10)
        r = rep["score"]
        assert r.wins == 50 and r.winrate == 0.5
        np.testing.assert_allclose(r.ci_halfwidth, 1.96 * np.sqrt(0.25 / 100))

    def test_deterministic_and_seeded(self, models, sched):
        a, b, _ = models
        o = ScoreOracle(np.zeros((4, 2)))
        w1 = winrate(a, b, range(4), o, 64, 1, sched, 10)["score"].winrate
        assert w1 == winrate(a, b, range(4), o, 64, 1, sched, 10)["score"].winrate

    def test_errors(self, models, sched, small_arch):
        from diffnpo.denoiser import Architecture
        a = models[0]
        with pytest.raises(ValueError):
            winrate(a, a, [0], ScoreOracle(TARGETS), 0, 0, sched, 10)
        other = init_params(Architecture(2, 4, hidden=8, depth=2, time_dim=8), 0)
        with pytest.raises(ValueError, match="architectures"):
            winrate(a, other, [0], ScoreOracle(TARGETS), 4, 0, sched, 10)

    def test_csv(self, sched, tmp_path):
        rep = winrate(FixedModel([0, 0]), FixedModel([1, 0]), [0], ScoreOracle(TARGETS), 4, 0, sched, 10)
        rep.write_csv(tmp_path / "e.csv")
        lines = (tmp_path / "e.csv").read_text().splitlines()
        assert lines[0].startswith("oracle,winrate") and lines[1].startswith("score,1.0")


class TestAblation:
    def test_defaults(self):
        np.testing.assert_allclose(ABLATION_GAMMAS, [0, 1 / 9, 1 / 3, 1 / 2, 8 / 9, 1])

    def test_single_row_and_reproducible(self, tmp_path):
        cfg = default_config(seed=0, model={"hidden": 16},
                             train={"steps": 3, "prompts_per_step": 4, "candidates": 4, "pretrain_epochs": 2,
                                    "pretrain_steps_per_epoch": 5, "pretrain_batch": 32, "winrate_every": 0},
                             eval={"n_per_prompt": 16})
        rows = ablation_sweep(cfg, gammas=[0.5], seeds=[0], out_csv=tmp_path / "a.csv")
        assert len(rows) == 1 and rows[0]["gamma"] == 0.5 and rows[0]["seed"] == 0
        assert read_ablation_csv(tmp_path / "a.csv") == rows
        assert ablation_sweep(cfg, gammas=[0.5], seeds=[0]) == rows

    def test_gamma_range_checked(self):
        with pytest.raises(ValueError):
            ablation_sweep(default_config(), gammas=[1.5], seeds=[0])

    def test_csv_columns_and_median(self, tmp_path):
        rows = [{"gamma": g, "seed": s, "winrate": w, "ci_halfwidth": 0.01, "mean_score_a": None,
                 "mean_score_b": -1.0} for g, s, w in [(0.0, 0, 0.6), (0.0, 1, 0.8), (0.0, 2, 0.7), (1.0, 0, 0.5)]]
        write_ablation_csv(tmp_path / "a.csv", rows)
        assert (tmp_path / "a.csv").read_text().splitlines()[0] == ",".join(ABLATION_COLUMNS)
        assert read_ablation_csv(tmp_path / "a.csv") == rows
        assert median_by_gamma(rows) == {0.0: 0.7, 1.0: 0.5}
