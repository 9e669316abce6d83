"""Experiment orchestration: multi-seed training runs, robustness metrics,
CSV logs, and figure emission.

Each seed trains independently from its own derived random streams, so
seeds can run in parallel processes and results are bit-reproducible for a
fixed (config, seed) pair. Per-iteration metrics stream to one CSV per
seed; summaries and figures are built from the merged records.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from . import envs, estimation, linalg, optimizers, svgplot, trust_region
from .envs import ObsNormalizer, collect, evaluate, make_env
from .estimation import (GradientEstimate, TrustRegionOperator, ValueFunction, fit_value,
                         gae, policy_gradient, standardize_advantages, subsample)
from .optimizers import StepReport, TrpoConfig, UaTrpoConfig, trpo_step, ua_trpo_step
from .policy import GaussianMlpPolicy, PolicyDivergedError

# Stream ids per purpose: extra draws in one stream never shift another.
STREAM_INIT = 0
STREAM_OMEGA = 1
STREAM_ROLLOUT = 2
STREAM_EVAL = 3
STREAM_SUBSAMPLE = 4

ALGORITHMS = ("trpo", "ua_trpo")

CSV_COLUMNS = ("seed", "iter", "env_steps", "mean_return", "cvar_eval_return", "eta",
               "est_kl", "actual_kl", "kl_ratio", "surrogate_improvement", "accepted",
               "ls_steps", "rn2", "ell")

KL_RATIO_EDGES = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, float("inf"))

EVAL_CVAR_KAPPA = 0.2
SUMMARY_KAPPAS = tuple(round(0.05 * k, 2) for k in range(1, 21))


def cvar(values, kappa: float) -> float:
    """Mean of the lowest ceil(kappa * n) values (discrete tail average)."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    if len(values) == 0:
        raise ValueError("cvar of empty values")
    if not 0.0 < kappa <= 1.0:
        raise ValueError("kappa must be in (0, 1]")
    k = int(np.ceil(kappa * len(values)))
    return float(np.mean(values[:k]))


def adversarial_noise(estimate: GradientEstimate) -> np.ndarray:
    """Perturb each gradient coordinate against its own sign by one standard
    error (zero coordinates stay zero)."""
    g = estimate.g_hat
    return g - np.sign(g) * estimate.per_dim_stderr


@dataclass
class ExperimentConfig:
    env: str = "lqr"
    algo: str = "trpo"
    total_steps: int = 50_000
    batch_steps: int = 1000
    seeds: tuple[int, ...] = tuple(range(20))
    eval_episodes: int = 5
    adversarial_noise: bool = False
    policy_hidden: tuple[int, ...] = (16, 16)
    value_hidden: tuple[int, ...] = (16, 16)
    gamma: float | None = None      # None: the environment's default
    gae_lambda: float = 0.97
    vf_step_size: float = 1e-3
    vf_iters: int = 5
    subsample_factor: int = 10
    horizon: int | None = None      # None: the environment's default
    trpo: TrpoConfig = field(default_factory=TrpoConfig)
    ua: UaTrpoConfig = field(default_factory=UaTrpoConfig)

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algo!r}; choose from {ALGORITHMS}")
        if self.env not in envs.ENV_REGISTRY:
            raise ValueError(f"unknown environment {self.env!r}")
        if self.batch_steps < 1:
            raise ValueError("batch_steps must be >= 1")
        if not self.seeds:
            raise ValueError("need at least one seed")
        self.seeds = tuple(int(s) for s in self.seeds)

    @property
    def iterations(self) -> int:
        return self.total_steps // self.batch_steps


@dataclass
class IterationRecord:
    seed: int
    iteration: int
    env_steps: int
    mean_return: float
    cvar_eval_return: float
    eta: float
    est_kl: float
    actual_kl: float
    kl_ratio: float
    surrogate_improvement: float
    accepted: bool
    ls_steps: int
    rn2: float
    ell: int


@dataclass
class RunRecord:
    seed: int
    rows: list[IterationRecord]
    diverged: bool

    @property
    def final_return(self) -> float:
        return self.rows[-1].mean_return if self.rows else float("-inf")


@dataclass
class IterationResult:
    """One training iteration plus the internals tests need to audit it."""
    record: IterationRecord
    report: StepReport
    operator: TrustRegionOperator
    delta_theta: np.ndarray


class SeedRun:
    """Training state for a single seed of one experiment."""

    def __init__(self, cfg: ExperimentConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.env = make_env(cfg.env, horizon=cfg.horizon, gamma=cfg.gamma)
        self.gamma = self.env.spec.gamma
        base = linalg.SeededRng(seed)
        self.rng_rollout = base.split(STREAM_ROLLOUT)
        self.rng_eval = base.split(STREAM_EVAL)
        self.rng_subsample = base.split(STREAM_SUBSAMPLE)
        init_rng = base.split(STREAM_INIT)
        self.policy = GaussianMlpPolicy(self.env.spec.state_dim, self.env.spec.action_dim,
                                        cfg.policy_hidden)
        self.theta = self.policy.init_params(init_rng)
        self.vf = ValueFunction(self.env.spec.state_dim, cfg.value_hidden, rng=init_rng)
        self.normalizer = ObsNormalizer(self.env.spec.state_dim)
        self.env_steps = 0
        if cfg.algo == "ua_trpo":
            d = self.policy.num_params
            m = cfg.ua.projection_count(d)
            self.omega = linalg.gaussian_matrix(base.split(STREAM_OMEGA), d, m)
            self.ema = trust_region.EmaSketch(d, m, cfg.ua.beta)
        else:
            self.omega = None
            self.ema = None

    def iteration(self, k: int) -> IterationResult:
        cfg = self.cfg
        batch = collect(self.policy, self.theta, self.env, self.normalizer,
                        cfg.batch_steps, self.rng_rollout)
        adv_raw, targets = gae(batch, self.vf, self.gamma, cfg.gae_lambda)
        advantages = standardize_advantages(adv_raw)
        fit_value(self.vf, batch.states, targets, cfg.vf_step_size, cfg.vf_iters)
        gradient, scores = policy_gradient(batch, self.policy, self.theta, advantages)
        sub = subsample(scores, cfg.subsample_factor, self.rng_subsample)
        operator = TrustRegionOperator(sub)
        g_vec = adversarial_noise(gradient) if cfg.adversarial_noise else gradient.g_hat

        theta_before = self.theta
        if cfg.algo == "trpo":
            self.theta, report = trpo_step(self.policy, theta_before, batch, advantages,
                                           g_vec, operator, cfg.trpo)
        else:
            self.theta, report = ua_trpo_step(self.policy, theta_before, batch, advantages,
                                              g_vec, operator, self.omega, cfg.ua,
                                              ema=self.ema)
        self.env_steps += batch.n_steps
        eval_returns = evaluate(self.policy, self.theta, self.env, self.normalizer,
                                cfg.eval_episodes, self.rng_eval)
        record = IterationRecord(
            seed=self.seed,
            iteration=k,
            env_steps=self.env_steps,
            mean_return=float(np.mean(eval_returns)),
            cvar_eval_return=cvar(eval_returns, EVAL_CVAR_KAPPA),
            eta=float(report.eta),
            est_kl=float(report.est_kl),
            actual_kl=float(report.actual_kl),
            kl_ratio=float(report.actual_kl / max(report.est_kl, 1e-12)),
            surrogate_improvement=float(report.surrogate_improvement),
            accepted=bool(report.accepted),
            ls_steps=int(report.ls_steps),
            rn2=float(report.rn2),
            ell=int(report.ell),
        )
        return IterationResult(record, report, operator, self.theta - theta_before)


def _padded_record(seed: int, k: int, env_steps: int, carried: IterationRecord | None
                   ) -> IterationRecord:
    mean_return = carried.mean_return if carried else float("-inf")
    cvar_return = carried.cvar_eval_return if carried else float("-inf")
    return IterationRecord(seed, k, env_steps, mean_return, cvar_return,
                           0.0, 0.0, 0.0, 0.0, 0.0, False, 0, 0.0, 0)


def run_seed(cfg: ExperimentConfig, seed: int, csv_path: str | None = None) -> RunRecord:
    """Train one seed to completion, streaming rows to CSV if a path is given.

    A diverged policy stops training; the remaining iterations are padded
    with the last recorded evaluation so the seed still counts toward
    robustness metrics at full length.
    """
    run = SeedRun(cfg, seed)
    rows: list[IterationRecord] = []
    diverged = False
    writer = _CsvWriter(csv_path) if csv_path else None
    try:
        for k in range(cfg.iterations):
            try:
                result = run.iteration(k)
                rows.append(result.record)
            except PolicyDivergedError:
                diverged = True
                carried = rows[-1] if rows else None
                for pad_k in range(k, cfg.iterations):
                    rows.append(_padded_record(seed, pad_k, (pad_k + 1) * cfg.batch_steps,
                                               carried))
                if writer:
                    for row in rows[k:]:
                        writer.write(row)
                break
            if writer:
                writer.write(rows[-1])
    finally:
        if writer:
            writer.close()
    return RunRecord(seed, rows, diverged)


def _run_seed_job(args):
    cfg, seed, csv_path = args
    return run_seed(cfg, seed, csv_path)


def seed_csv_path(out_dir: str, seed: int) -> str:
    return os.path.join(out_dir, f"seed_{seed}.csv")


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None,
                   jobs: int = 1) -> list[RunRecord]:
    """Train every seed in the config; one CSV per seed under out_dir.

    ``jobs > 1`` runs seeds in parallel worker processes; per-seed results
    are unaffected by scheduling since no state is shared.
    """
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    tasks = [(cfg, seed, seed_csv_path(out_dir, seed) if out_dir else None)
             for seed in cfg.seeds]
    if jobs > 1 and len(tasks) > 1:
        with get_context("fork").Pool(min(jobs, len(tasks))) as pool:
            records = pool.map(_run_seed_job, tasks)
    else:
        records = [_run_seed_job(t) for t in tasks]
    return records


class _CsvWriter:
    def __init__(self, path: str):
        self._fh = open(path, "w", newline="", encoding="ascii")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(CSV_COLUMNS)
        self._fh.flush()

    def write(self, row: IterationRecord) -> None:
        self._writer.writerow([
            row.seed, row.iteration, row.env_steps, row.mean_return,
            row.cvar_eval_return, row.eta, row.est_kl, row.actual_kl, row.kl_ratio,
            row.surrogate_improvement, int(row.accepted), row.ls_steps, row.rn2, row.ell,
        ])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_metrics_csv(path: str) -> tuple[list[IterationRecord], int]:
    """Parse a per-seed metrics CSV; malformed rows are skipped and counted."""
    rows: list[IterationRecord] = []
    skipped = 0
    with open(path, "r", newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(CSV_COLUMNS):
            raise ValueError(f"{path}: unexpected CSV header")
        for raw in reader:
            try:
                if len(raw) != len(CSV_COLUMNS):
                    raise ValueError("wrong column count")
                rows.append(IterationRecord(
                    seed=int(raw[0]), iteration=int(raw[1]), env_steps=int(raw[2]),
                    mean_return=float(raw[3]), cvar_eval_return=float(raw[4]),
                    eta=float(raw[5]), est_kl=float(raw[6]), actual_kl=float(raw[7]),
                    kl_ratio=float(raw[8]), surrogate_improvement=float(raw[9]),
                    accepted=bool(int(raw[10])), ls_steps=int(raw[11]),
                    rn2=float(raw[12]), ell=int(raw[13])))
            except (ValueError, IndexError):
                skipped += 1
    return rows, skipped


def _flatten_rows(records) -> list[IterationRecord]:
    rows = []
    for item in records:
        rows.extend(item.rows if isinstance(item, RunRecord) else [item])
    return rows


def kl_ratio_histogram(records) -> np.ndarray:
    """Counts of actual/estimated KL ratios in the fixed bins.

    Only rows with a real proposed update (positive estimated KL) count;
    padded and skipped iterations are ignored.
    """
    edges = np.array(KL_RATIO_EDGES)
    counts = np.zeros(len(edges) - 1, dtype=np.int64)
    for row in _flatten_rows(records):
        if row.est_kl > 0.0:
            ratio = row.actual_kl / max(row.est_kl, 1e-12)
            idx = int(np.searchsorted(edges, ratio, side="right")) - 1
            counts[min(max(idx, 0), len(counts) - 1)] += 1
    return counts


def final_returns(runs: list[RunRecord]) -> np.ndarray:
    return np.array([run.final_return for run in runs])


def write_summary(runs_by_label: dict[str, list[RunRecord]], path: str) -> None:
    """Per-seed final returns plus the tail-average table over kappa."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record_type", "label", "seed", "kappa", "value"])
        for label in sorted(runs_by_label):
            for run in runs_by_label[label]:
                writer.writerow(["final_return", label, run.seed, "", run.final_return])
        for label in sorted(runs_by_label):
            finals = final_returns(runs_by_label[label])
            for kappa in SUMMARY_KAPPAS:
                writer.writerow(["cvar", label, "", kappa, cvar(finals, kappa)])


def emit_plots(runs_by_label: dict[str, list[RunRecord]], out_dir: str) -> list[str]:
    """Write the four standard figures as deterministic SVG files.

    Final-return tail average vs kappa; the 20% tail average over training;
    mean return with a one-standard-error band; and the KL-ratio histogram.
    """
    labels = sorted(runs_by_label)
    if not labels or any(not runs_by_label[lbl] for lbl in labels):
        raise ValueError("no run records to plot")
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    kappas = np.array(SUMMARY_KAPPAS)
    series = []
    for label in labels:
        finals = final_returns(runs_by_label[label])
        series.append((label, kappas, [cvar(finals, k) for k in kappas]))
    paths.append(svgplot.line_plot(
        os.path.join(out_dir, "cvar_final.svg"), series,
        title="Tail-average final return vs kappa", xlabel="kappa",
        ylabel="tail-average return"))

    series = []
    for label in labels:
        runs = runs_by_label[label]
        steps = [row.env_steps for row in runs[0].rows]
        per_iter = np.array([[run.rows[i].mean_return for run in runs]
                             for i in range(len(steps))])
        series.append((label, steps, [cvar(r, EVAL_CVAR_KAPPA) for r in per_iter]))
    paths.append(svgplot.line_plot(
        os.path.join(out_dir, "cvar_training.svg"), series,
        title="20% tail-average return over training", xlabel="environment steps",
        ylabel="tail-average return"))

    series = []
    for label in labels:
        runs = runs_by_label[label]
        steps = [row.env_steps for row in runs[0].rows]
        per_iter = np.array([[run.rows[i].mean_return for run in runs]
                             for i in range(len(steps))])
        mean = per_iter.mean(axis=1)
        if per_iter.shape[1] > 1:
            stderr = per_iter.std(axis=1, ddof=1) / np.sqrt(per_iter.shape[1])
        else:
            stderr = np.zeros_like(mean)
        series.append((label, steps, mean, mean - stderr, mean + stderr))
    paths.append(svgplot.line_plot(
        os.path.join(out_dir, "mean_return.svg"), series,
        title="Mean return over training (one standard error)",
        xlabel="environment steps", ylabel="mean return"))

    bin_labels = ["[0,.5)", "[.5,1)", "[1,1.5)", "[1.5,2)", "[2,2.5)", "[2.5,3)", ">=3"]
    groups = []
    for label in labels:
        counts = kl_ratio_histogram(runs_by_label[label])
        total = max(int(counts.sum()), 1)
        groups.append((label, [c / total for c in counts]))
    paths.append(svgplot.bar_plot(
        os.path.join(out_dir, "kl_ratio.svg"), bin_labels, groups,
        title="Actual / estimated KL of proposed updates", xlabel="ratio bin",
        ylabel="fraction of updates"))
    return paths
