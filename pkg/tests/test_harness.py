import os

import numpy as np
import pytest

from uatrpo import envs as envs_mod
from uatrpo import harness
from uatrpo.envs import EnvSpec, LqrEnv
from uatrpo.estimation import GradientEstimate
from uatrpo.harness import (CSV_COLUMNS, ExperimentConfig, IterationRecord, RunRecord,
                            SeedRun, adversarial_noise, cvar, emit_plots,
                            kl_ratio_histogram, read_metrics_csv, run_experiment,
                            run_seed, seed_csv_path, write_summary)
from uatrpo.linalg import SeededRng


def tiny_config(**overrides):
    base = dict(env="lqr", algo="trpo", total_steps=3000, batch_steps=1000,
                seeds=(0,), eval_episodes=2, policy_hidden=(4,), value_hidden=(4,),
                horizon=20)
    base.update(overrides)
    return ExperimentConfig(**base)


class ZeroRewardEnv(LqrEnv):
    """Stable dynamics with no reward signal anywhere."""

    A = 0.5 * np.eye(4)

    def step(self, state, action, rng):
        next_state, _, done = super().step(state, action, rng)
        return next_state, 0.0, done


class BlowUpEnv(LqrEnv):
    """Produces non-finite observations after a few steps to force divergence."""

    def step(self, state, action, rng):
        next_state, reward, done = super().step(state, action, rng)
        return next_state * np.nan, reward, done


class TestCvar:
    def test_table_examples(self):
        values = [10.0, 20.0, 30.0, 40.0, 50.0]
        assert abs(cvar(values, 1.0) - 30.0) <= 1e-12
        assert abs(cvar(values, 0.2) - 10.0) <= 1e-12
        assert abs(cvar(values, 0.4) - 15.0) <= 1e-12

    def test_kappa_one_is_mean(self):
        values = SeededRng(70).standard_normal(37)
        assert abs(cvar(values, 1.0) - values.mean()) <= 1e-12

    def test_monotone_in_kappa(self):
        values = SeededRng(71).standard_normal(50)
        levels = [cvar(values, k) for k in np.linspace(0.02, 1.0, 25)]
        assert all(a <= b + 1e-12 for a, b in zip(levels, levels[1:]))

    def test_validation(self):
        with pytest.raises(ValueError):
            cvar([], 0.5)
        with pytest.raises(ValueError):
            cvar([1.0], 0.0)
        with pytest.raises(ValueError):
            cvar([1.0], 1.5)


class TestAdversarialNoise:
    def test_positive_coordinate(self):
        est = GradientEstimate(np.array([2.0]), 10, np.array([0.5]))
        assert np.allclose(adversarial_noise(est), [1.5], atol=1e-15)

    def test_zero_coordinate_untouched(self):
        est = GradientEstimate(np.array([0.0]), 10, np.array([0.5]))
        assert np.array_equal(adversarial_noise(est), [0.0])

    def test_sign_can_flip(self):
        est = GradientEstimate(np.array([-1.0]), 10, np.array([3.0]))
        assert np.allclose(adversarial_noise(est), [2.0], atol=1e-15)

    def test_perturbation_bounded_by_stderr(self):
        rng = SeededRng(72, 0)
        g = rng.standard_normal(30)
        stderr = np.abs(rng.standard_normal(30))
        est = GradientEstimate(g, 10, stderr)
        moved = np.abs(adversarial_noise(est) - g)
        assert np.all(moved <= stderr + 1e-15)
        nonzero = g != 0
        assert np.allclose(moved[nonzero], stderr[nonzero], atol=1e-15)


def make_row(**overrides):
    base = dict(seed=0, iteration=0, env_steps=1000, mean_return=-1.0,
                cvar_eval_return=-2.0, eta=0.1, est_kl=0.01, actual_kl=0.01,
                kl_ratio=1.0, surrogate_improvement=0.5, accepted=True, ls_steps=0,
                rn2=0.0, ell=0)
    base.update(overrides)
    return IterationRecord(**base)


class TestKlRatioHistogram:
    def test_all_ones_single_bin(self):
        rows = [make_row(actual_kl=0.01, est_kl=0.01) for _ in range(5)]
        counts = kl_ratio_histogram(rows)
        assert counts.tolist() == [0, 0, 5, 0, 0, 0, 0]

    def test_three_ratio_example(self):
        rows = [make_row(est_kl=1.0, actual_kl=r) for r in (0.4, 1.2, 3.7)]
        counts = kl_ratio_histogram(rows)
        assert counts.tolist() == [1, 0, 1, 0, 0, 0, 1]

    def test_hand_counted_synthetic(self):
        ratios = [0.1, 0.49, 0.5, 0.99, 1.0, 1.49, 1.5, 2.0, 2.49, 2.5, 3.0, 100.0]
        rows = [make_row(est_kl=1.0, actual_kl=r) for r in ratios]
        assert kl_ratio_histogram(rows).tolist() == [2, 2, 2, 1, 2, 1, 2]

    def test_skipped_rows_excluded(self):
        rows = [make_row(est_kl=0.0, actual_kl=0.0), make_row(est_kl=1.0, actual_kl=1.0)]
        assert kl_ratio_histogram(rows).sum() == 1

    def test_accepts_run_records(self):
        runs = [RunRecord(0, [make_row()], False)]
        assert kl_ratio_histogram(runs).sum() == 1


class TestRunExperiment:
    def test_single_iteration_when_total_equals_batch(self):
        cfg = tiny_config(total_steps=1000)
        records = run_experiment(cfg)
        assert len(records) == 1
        assert len(records[0].rows) == 1
        assert records[0].rows[0].env_steps == 1000

    def test_same_seed_identical(self):
        cfg = tiny_config(algo="ua_trpo")
        assert run_experiment(cfg) == run_experiment(cfg)

    def test_distinct_seeds_differ(self):
        cfg = tiny_config(seeds=(0, 1))
        a, b = run_experiment(cfg)
        assert a.rows[0].mean_return != b.rows[0].mean_return

    def test_parallel_matches_serial(self):
        cfg = tiny_config(seeds=(0, 1), total_steps=2000)
        assert run_experiment(cfg, jobs=2) == run_experiment(cfg, jobs=1)

    def test_csv_roundtrip(self, tmp_path):
        cfg = tiny_config(algo="ua_trpo", total_steps=2000)
        records = run_experiment(cfg, out_dir=str(tmp_path))
        path = seed_csv_path(str(tmp_path), 0)
        rows, skipped = read_metrics_csv(path)
        assert skipped == 0
        assert rows == records[0].rows

    def test_rerun_reproduces_csv_bytes(self, tmp_path):
        cfg = tiny_config(algo="ua_trpo", total_steps=2000)
        run_experiment(cfg, out_dir=str(tmp_path / "a"))
        run_experiment(cfg, out_dir=str(tmp_path / "b"))
        a = (tmp_path / "a" / "seed_0.csv").read_bytes()
        b = (tmp_path / "b" / "seed_0.csv").read_bytes()
        assert a == b

    def test_zero_reward_env_flat_curve(self, monkeypatch):
        monkeypatch.setitem(envs_mod.ENV_REGISTRY, "zeroreward", ZeroRewardEnv)
        cfg = tiny_config(env="zeroreward", total_steps=3000)
        record = run_experiment(cfg)[0]
        returns = {row.mean_return for row in record.rows}
        assert returns == {0.0}

    def test_zero_gradient_iterations_are_noops(self, monkeypatch):
        # zero rewards and a zero value function force a zero gradient: every
        # update is an accepted no-op and the curve stays flat at 0
        monkeypatch.setitem(envs_mod.ENV_REGISTRY, "zeroreward", ZeroRewardEnv)
        cfg = tiny_config(env="zeroreward", total_steps=3000)
        run = SeedRun(cfg, 0)
        run.vf.theta[:] = 0.0
        theta_before = run.theta.copy()
        for k in range(3):
            result = run.iteration(k)
            assert result.record.eta == 0.0
            assert result.record.accepted
            assert result.record.mean_return == 0.0
        assert np.array_equal(run.theta, theta_before)

    def test_diverged_run_padded_and_marked(self, monkeypatch, tmp_path):
        monkeypatch.setitem(envs_mod.ENV_REGISTRY, "blowup", BlowUpEnv)
        cfg = tiny_config(env="blowup", total_steps=4000)
        record = run_seed(cfg, 0, csv_path=str(tmp_path / "seed_0.csv"))
        assert record.diverged
        assert len(record.rows) == 4
        assert [r.iteration for r in record.rows] == [0, 1, 2, 3]
        assert all(not r.accepted for r in record.rows)
        rows, skipped = read_metrics_csv(str(tmp_path / "seed_0.csv"))
        assert skipped == 0 and len(rows) == 4

    def test_vf_untouched_by_policy_step(self):
        cfg = tiny_config(algo="ua_trpo")
        run = SeedRun(cfg, 0)
        result = run.iteration(0)
        vf_after_fit = run.vf.theta.copy()
        # the recorded update happened after the value fit; re-applying the
        # step machinery must not touch value parameters
        assert np.array_equal(run.vf.theta, vf_after_fit)
        assert result.record.env_steps == cfg.batch_steps


class TestSummaryAndPlots:
    def synth_runs(self, n_seeds=3, n_iters=4, offset=0.0):
        runs = []
        for s in range(n_seeds):
            rows = [make_row(seed=s, iteration=k, env_steps=1000 * (k + 1),
                             mean_return=offset - s - 10.0 / (k + 1),
                             est_kl=0.01, actual_kl=0.005 * (s + 1))
                    for k in range(n_iters)]
            runs.append(RunRecord(s, rows, False))
        return runs

    def test_write_summary_matches_cvar(self, tmp_path):
        runs = {"a": self.synth_runs(), "b": self.synth_runs(offset=5.0)}
        path = tmp_path / "summary.csv"
        write_summary(runs, str(path))
        text = path.read_text().strip().splitlines()
        assert text[0] == "record_type,label,seed,kappa,value"
        finals = harness.final_returns(runs["a"])
        expected = cvar(finals, 0.2)
        matching = [line for line in text if line.startswith("cvar,a,,0.2,")]
        assert len(matching) == 1
        assert float(matching[0].rsplit(",", 1)[1]) == expected

    def test_emit_plots_files_and_determinism(self, tmp_path):
        runs = {"trpo": self.synth_runs(), "ua_trpo": self.synth_runs(offset=2.0)}
        out1 = tmp_path / "p1"
        out2 = tmp_path / "p2"
        paths1 = emit_plots(runs, str(out1))
        paths2 = emit_plots(runs, str(out2))
        assert [os.path.basename(p) for p in paths1] == [
            "cvar_final.svg", "cvar_training.svg", "mean_return.svg", "kl_ratio.svg"]
        for p1, p2 in zip(paths1, paths2):
            assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_single_seed_zero_width_band(self, tmp_path):
        runs = {"solo": self.synth_runs(n_seeds=1)}
        paths = emit_plots(runs, str(tmp_path))
        assert all(os.path.exists(p) for p in paths)

    def test_axis_ranges_cover_data(self, tmp_path):
        runs = {"a": self.synth_runs()}
        paths = emit_plots(runs, str(tmp_path))
        mean_plot = [p for p in paths if p.endswith("mean_return.svg")][0]
        text = open(mean_plot).read()
        y_line = [ln for ln in text.splitlines() if ln.startswith("<!-- y-range")][0]
        lo, hi = (float(tok) for tok in y_line.split()[2:4])
        values = [row.mean_return for run in runs["a"] for row in run.rows]
        assert lo <= min(values) and hi >= max(values)

    def test_empty_records_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_plots({}, str(tmp_path))
        with pytest.raises(ValueError):
            emit_plots({"x": []}, str(tmp_path))

    def test_golden_file(self, tmp_path):
        golden = os.path.join(os.path.dirname(__file__), "data", "golden_kl_ratio.svg")
        runs = {"trpo": self.synth_runs(), "ua_trpo": self.synth_runs(offset=2.0)}
        paths = emit_plots(runs, str(tmp_path))
        produced = open(paths[-1], "rb").read()
        with open(golden, "rb") as fh:
            assert produced == fh.read()


class TestConfigValidation:
    def test_unknown_algo(self):
        with pytest.raises(ValueError):
            tiny_config(algo="ppo")

    def test_unknown_env(self):
        with pytest.raises(ValueError):
            tiny_config(env="humanoid")

    def test_empty_seeds(self):
        with pytest.raises(ValueError):
            tiny_config(seeds=())

    def test_csv_columns_contract(self):
        assert CSV_COLUMNS == ("seed", "iter", "env_steps", "mean_return",
                               "cvar_eval_return", "eta", "est_kl", "actual_kl",
                               "kl_ratio", "surrogate_improvement", "accepted",
                               "ls_steps", "rn2", "ell")
