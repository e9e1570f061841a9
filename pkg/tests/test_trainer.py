import json

import numpy as np
import pytest
from scipy import stats

from diffnpo.config import default_config
from diffnpo.denoiser import init_params, load_checkpoint, soft_update
from diffnpo.losses import compute_loss
from diffnpo.oracles import ScoreOracle
from diffnpo.sampling import ancestral_sample
from diffnpo.toydata import sample_data
from diffnpo.trainer import (
    SGD, Adam, TrainingDiverged, build_experiment, build_pairs, init_state, mixture_coverage,
    npo_step, pretrain_reference, run_training,
)

TINY = dict(model={"hidden": 16, "depth": 2},
            train={"steps": 5, "prompts_per_step": 4, "candidates": 4, "pretrain_epochs": 3,
                   "pretrain_steps_per_epoch": 10, "pretrain_batch": 64, "winrate_every": 0})


def tiny_config(seed=0, loss="npo", **extra):
    sections = {k: dict(v) for k, v in TINY.items()}
    for name, values in extra.items():
        sections.setdefault(name, {}).update(values)
    sections["train"]["seed"] = seed
    return default_config(seed=seed, loss={"name": loss}, **sections)


@pytest.fixture(scope="module")
def tiny_ref():
    cfg = tiny_config()
    return pretrain_reference(build_experiment(cfg), cfg)


class TestOptimizers:
    def test_sgd_momentum_by_hand(self):
        opt = SGD(0.1, momentum=0.5)
        x = opt.step(np.array([1.0]), np.array([2.0]))      # v = 2
        np.testing.assert_allclose(x, [0.8])
        x = opt.step(x, np.array([2.0]))                     # v = 3
        np.testing.assert_allclose(x, [0.5])

    def test_adam_first_step_is_lr_sign(self):
        x = Adam(0.01).step(np.array([1.0, 1.0]), np.array([5.0, -0.1]))
        np.testing.assert_allclose(x, [0.99, 1.01], rtol=1e-6)

    def test_adam_minimises_quadratic(self):
        opt, x = Adam(0.05), np.array([3.0, -2.0])
        for _ in range(2000):
            x = opt.step(x, 2 * x)
        np.testing.assert_allclose(x, 0.0, atol=1e-3)


class TestPretrain:
    def test_zero_epochs_returns_init(self):
        cfg = tiny_config(train={"pretrain_epochs": 0})
        ref = pretrain_reference(build_experiment(cfg), cfg)
        np.testing.assert_array_equal(ref.vector, init_params(ref.arch, 0).vector)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_aborts(self):
        cfg = tiny_config(train={"pretrain_lr": 1e6, "pretrain_optimizer": "sgd", "momentum": 0.0})
        with pytest.raises((TrainingDiverged, FloatingPointError)):
            pretrain_reference(build_experiment(cfg), cfg)

    @pytest.mark.slow
    def test_single_component_mean(self):
        mu = [0.8, -0.4]
        errs = []
        for seed in range(5):
            cfg = default_config(seed=seed, data={"means": [[mu]], "weights": [[1.0]], "std": 0.1})
            exp = build_experiment(cfg)
            ref = pretrain_reference(exp, cfg)
            x = ancestral_sample(ref, 0, exp.sched, exp.sched.T, seed, n=1000)
            errs.append(np.linalg.norm(x.mean(axis=0) - mu))
        assert np.median(errs) < 0.1

    @pytest.mark.slow
    def test_default_coverage(self):
        cfg = default_config(seed=0)
        exp = build_experiment(cfg)
        ref = pretrain_reference(exp, cfg)
        for c in range(exp.prompts.n_prompts):
            counts, p = mixture_coverage(ref, exp, c, 400, 1, 10)
            assert counts.min() > 0 and p > 1e-3

    @pytest.mark.slow
    def test_one_dimensional_ks(self):
        cfg = default_config(seed=0, data={"means": [[[-1.0], [1.0]]], "weights": [[0.5, 0.5]]})
        exp = build_experiment(cfg)
        ref = pretrain_reference(exp, cfg)
        gen = ancestral_sample(ref, 0, exp.sched, exp.sched.T, 3, n=2000)[:, 0]
        data = sample_data(exp.mixture, 0, 2000, 4)[:, 0]
        assert stats.ks_2samp(gen, data).statistic < 0.1


class TestNPOStep:
    def test_prev_contracts_at_first_step(self, tiny_ref):
        cfg = tiny_config()
        exp = build_experiment(cfg)
        s0 = init_state(tiny_ref, cfg)
        s0.prev = tiny_ref.replace(tiny_ref.vector + 0.01)   # distinct opponent
        s1 = npo_step(s0, exp, cfg)
        assert s1.step == 2 and s1.metrics[-1]["lambda"] == 0.001
        np.testing.assert_allclose(np.linalg.norm(s1.prev.vector - s1.theta.vector),
                                   0.001 * np.linalg.norm(s0.prev.vector - s1.theta.vector), rtol=1e-9)

    def test_replay_and_frozen_ref(self, tiny_ref):
        cfg = tiny_config()
        exp = build_experiment(cfg)
        state = init_state(tiny_ref, cfg)
        ref_bytes = tiny_ref.vector.tobytes()
        thetas = []
        for _ in range(5):
            state = npo_step(state, exp, cfg)
            thetas.append(state.theta)
        prev = tiny_ref
        for s, th in enumerate(thetas, start=1):
            prev = soft_update(prev, th, min(0.001 * s, 0.5))
        np.testing.assert_array_equal(prev.vector, state.prev.vector)
        assert state.ref.vector.tobytes() == ref_bytes

    def test_zero_lr_theta_fixed_prev_converges(self, tiny_ref):
        cfg = tiny_config(train={"lr": 0.0})
        exp = build_experiment(cfg)
        state = init_state(tiny_ref, cfg)
        state.prev = tiny_ref.replace(tiny_ref.vector + 1.0)
        gaps = []
        for _ in range(4):
            state = npo_step(state, exp, cfg)
            gaps.append(np.linalg.norm(state.prev.vector - state.theta.vector))
        np.testing.assert_array_equal(state.theta.vector, tiny_ref.vector)
        lams = [0.001 * s for s in range(1, 5)]
        np.testing.assert_allclose(gaps, np.sqrt(len(tiny_ref)) * np.cumprod(lams), rtol=1e-9, atol=1e-15)

    def test_k2_pair_is_better_then_worse(self, tiny_ref):
        cfg = tiny_config(train={"candidates": 2})
        exp = build_experiment(cfg)
        state = init_state(tiny_ref, cfg)
        pairs = build_pairs(state, exp, cfg)
        o = exp.oracles[0]
        for c, xp, xn in zip(pairs.prompts, pairs.x_pos, pairs.x_neg):
            assert o.score(xp, c) >= o.score(xn, c)
        assert sorted({int(b) for b in pairs.best} | {int(w) for w in pairs.worst}) == [0, 1]
        assert np.all(pairs.best != pairs.worst)

    def test_candidates_come_from_prev(self, tiny_ref):
        cfg = tiny_config()
        exp = build_experiment(cfg)
        state = init_state(tiny_ref, cfg)
        a = build_pairs(state, exp, cfg)
        state.theta = tiny_ref.replace(tiny_ref.vector * 2)
        np.testing.assert_array_equal(build_pairs(state, exp, cfg).x_pos, a.x_pos)
        state.prev = state.theta
        assert not np.array_equal(build_pairs(state, exp, cfg).x_pos, a.x_pos)

    @pytest.mark.parametrize("loss, ignored", [("dpo", "prev"), ("selfplay", "ref")])
    def test_loss_ignores_model(self, tiny_ref, loss, ignored, sched):
        cfg = tiny_config(loss=loss)
        exp = build_experiment(cfg)
        rng = np.random.default_rng(0)
        from conftest import random_batch
        b = random_batch(rng, exp.sched)
        th = tiny_ref.replace(tiny_ref.vector + 1e-3)
        other = init_params(tiny_ref.arch, 42)
        base = compute_loss(loss, th, tiny_ref, th, b, exp.loss_cfg)
        kw = {"ref": other, "prev": th} if ignored == "ref" else {"ref": tiny_ref, "prev": other}
        pert = compute_loss(loss, th, kw["ref"], kw["prev"], b, exp.loss_cfg)
        assert base[0] == pert[0]
        np.testing.assert_array_equal(base[1], pert[1])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_aborts(self, tiny_ref):
        cfg = tiny_config(loss="inpo_sq", train={"lr": 1e30, "momentum": 0.0, "steps": 3})
        with pytest.raises(FloatingPointError):
            run_training(cfg, ref=tiny_ref)


class TestRunTraining:
    def test_zero_steps_outputs_ref(self, tiny_ref, tmp_path):
        res = run_training(tiny_config(train={"steps": 0}), ref=tiny_ref, out_dir=tmp_path)
        assert res.policy is tiny_ref and res.metrics == []
        assert load_checkpoint(tmp_path / "final.ckpt")[0].vector.tobytes() == tiny_ref.vector.tobytes()
        assert (tmp_path / "metrics.jsonl").read_text() == ""

    def test_outputs_and_metrics(self, tiny_ref, tmp_path):
        cfg = tiny_config(train={"checkpoint_every": 2, "winrate_every": 5, "winrate_samples": 8})
        res = run_training(cfg, ref=tiny_ref, out_dir=tmp_path)
        recs = [json.loads(l) for l in (tmp_path / "metrics.jsonl").read_text().splitlines()]
        assert [r["step"] for r in recs] == [1, 2, 3, 4, 5]
        assert set(recs[0]) == {"step", "loss", "mean_logit", "winrate_vs_ref", "lambda", "wallclock_ms"}
        assert recs[0]["winrate_vs_ref"] is None and 0 <= recs[4]["winrate_vs_ref"] <= 1
        assert sorted(p.name for p in (tmp_path / "checkpoints").iterdir()) == ["step_000002.ckpt", "step_000004.ckpt"]
        final, header = load_checkpoint(tmp_path / "final.ckpt")
        assert final.vector.tobytes() == res.policy.vector.tobytes() and header["role"] == "policy"
        assert load_checkpoint(tmp_path / "theta.ckpt")[0].vector.tobytes() == res.theta.vector.tobytes()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_partial_log_flushed_on_abort(self, tiny_ref, tmp_path):
        cfg = tiny_config(loss="inpo_sq", train={"lr": 1e30, "momentum": 0.0, "steps": 4})
        with pytest.raises(FloatingPointError):
            run_training(cfg, ref=tiny_ref, out_dir=tmp_path)
        lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
        assert len(lines) >= 1 and all(json.loads(l)["step"] == i + 1 for i, l in enumerate(lines))

    def test_deterministic_across_workers(self, tiny_ref, tmp_path):
        outs = []
        for i, workers in enumerate((1, 1, 3)):
            run_training(tiny_config(train={"workers": workers}), ref=tiny_ref, out_dir=tmp_path / str(i))
            outs.append((tmp_path / str(i) / "metrics.jsonl").read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_wallclock_optional(self, tiny_ref):
        res = run_training(tiny_config(train={"log_wallclock": True, "steps": 1}), ref=tiny_ref)
        assert res.metrics[0]["wallclock_ms"] > 0

    def test_reference_architecture_checked(self, tiny_ref):
        with pytest.raises(ValueError):
            run_training(tiny_config(model={"hidden": 8}), ref=tiny_ref)

    @pytest.mark.parametrize("loss", ["npo", "dpo", "selfplay", "sft", "inpo_sq"])
    def test_every_loss_runs(self, tiny_ref, loss):
        res = run_training(tiny_config(loss=loss, train={"steps": 2}), ref=tiny_ref)
        assert len(res.metrics) == 2 and np.isfinite(res.metrics[-1]["loss"])
