r"""
Experiments measuring test power, convergence and sample quality.

Every experiment returns an :class:`ExperimentReport` whose rows are grid
cells (or Monte Carlo trials). Independent cells run on a thread pool whose
size is capped by the ``MMD_FORGE_THREADS`` environment variable; each cell
draws from its own :class:`numpy.random.SeedSequence` child, so results do
not depend on scheduling.
"""
import csv
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import spearmanr

from mmdforge.dataset import (
    DatasetSpec,
    NoiseSpec,
    centers,
    sample,
    sample_noise,
)
from mmdforge.errors import ContractError, MmdForgeError
from mmdforge.kernels import (
    Composed,
    KernelSpec,
    MixtureRBF,
    describe_kernel,
)
from mmdforge.mmd import permutation_test
from mmdforge.networks import Mlp, MlpConfig, ModelSpec
from mmdforge.tensor_engine import no_grad
from mmdforge.training import (
    TrainConfig,
    build_bundle,
    critic_step,
    fit_critic,
    generator_step,
    train,
)


logger = logging.getLogger(__name__)

THREADS_ENV = "MMD_FORGE_THREADS"
EXPERIMENTS = ("power", "weakstar", "timing", "coverage")


def thread_count() -> int:
    r"""
    Worker count for trial pools: ``MMD_FORGE_THREADS`` when set, otherwise
    the number of CPUs.
    """
    value = os.environ.get(THREADS_ENV)
    if value is None or not value.strip():
        return os.cpu_count() or 1
    try:
        count = int(value)
    except ValueError:
        raise ContractError(f"{THREADS_ENV} must be an integer, got '{value}'.")
    if count < 1:
        raise ContractError(f"{THREADS_ENV} must be >= 1, got {count}.")
    return count


def run_cells(fn: Callable, cells: Sequence, workers: Optional[int] = None):
    r"""
    Applies `fn` to every cell on a thread pool and returns results in cell
    order. A cell raising a library error yields a failure marker
    ``{"status": "failed: <message>"}`` instead of a result.
    """
    def guarded(cell):
        try:
            return fn(cell)
        except MmdForgeError as error:
            logger.warning("Cell %r failed: %s", cell, error)
            return {"status": f"failed: {error}"}

    workers = workers if workers is not None else thread_count()
    if workers <= 1 or len(cells) <= 1:
        return [guarded(cell) for cell in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(guarded, cells))


@dataclass
class ExperimentReport(object):
    r"""
    Result of one experiment.

    Args:
        name (str): Experiment name.
        grid (dict): Parameter grid (and fixed settings).
        columns (list): CSV columns of `rows`.
        rows (list): One dict per cell or trial; failed cells carry a
            ``status`` starting with ``"failed"``.
        seed (int): Root seed.
        wall_clock (float): Seconds spent.
        summary (dict): Aggregated metrics.
    """
    name: str
    grid: Dict[str, Any]
    columns: List[str]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    seed: int = 0
    wall_clock: float = 0.0
    summary: Dict[str, Any] = field(default_factory=dict)

    def ok_rows(self) -> List[Dict[str, Any]]:
        return [row for row in self.rows if row.get("status", "ok") == "ok"]

    def to_dict(self):
        return {
            "experiment": self.name,
            "grid": self.grid,
            "seed": self.seed,
            "wall_clock": self.wall_clock,
            "summary": self.summary,
            "cells": len(self.rows),
            "failed": len(self.rows) - len(self.ok_rows()),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.DictWriter(
                handle, fieldnames=list(self.columns) + ["status"],
                extrasaction="ignore",
            )
            writer.writeheader()
            for row in self.rows:
                values = {key: row.get(key, "") for key in self.columns}
                values["status"] = row.get("status", "ok")
                writer.writerow(values)

    def write_json(self, path) -> None:
        with open(path, "w") as handle:
            json.dump(self.to_dict(), handle, sort_keys=True, indent=2,
                      default=json_default)

    def write(self, out_dir) -> None:
        r"""
        Writes ``<name>.csv`` and ``<name>.json`` into `out_dir`.
        """
        os.makedirs(out_dir, exist_ok=True)
        self.write_csv(os.path.join(out_dir, f"{self.name}.csv"))
        self.write_json(os.path.join(out_dir, f"{self.name}.json"))


def json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if dataclasses.is_dataclass(value):
        return dataclasses.asdict(value)
    return repr(value)


@dataclass
class CoverageReport(object):
    covered: int
    high_quality_fraction: float
    counts: np.ndarray


def mode_coverage(samples, mode_centers, radius: float) -> CoverageReport:
    r"""
    Counts the mixture modes that received a fair share of samples.

    A center is covered when at least :math:`N / (10 M)` of the `N` samples
    lie within `radius` of it; the high-quality fraction is the share of
    samples within `radius` of any center.

    Args:
        samples (array): ``(N, d)`` generated points.
        mode_centers (array): ``(M, d)`` ground-truth centers.
        radius (float): Positive acceptance radius.
    """
    if not radius > 0:
        raise ContractError(f"Coverage radius must be positive, got {radius}.")
    samples = np.asarray(samples, dtype=np.float64)
    mode_centers = np.asarray(mode_centers, dtype=np.float64)
    if samples.shape[0] == 0 or mode_centers.shape[0] == 0:
        return CoverageReport(0, 0.0, np.zeros(mode_centers.shape[0], dtype=int))
    near = cdist(samples, mode_centers) <= radius
    counts = near.sum(axis=0)
    needed = samples.shape[0] / (10.0 * mode_centers.shape[0])
    return CoverageReport(
        covered=int(np.count_nonzero(counts >= needed)),
        high_quality_fraction=float(np.mean(near.any(axis=1))),
        counts=counts,
    )


def _encoder(dim, hidden, code_dim, seed) -> Mlp:
    return Mlp(
        MlpConfig((dim, hidden, code_dim), "relu"),
        np.random.default_rng(seed),
    )


def power_experiment(
    p_spec: DatasetSpec,
    q_spec: DatasetSpec,
    n: int,
    trials: int,
    fixed_kernel: KernelSpec,
    learn_budget: int,
    learn_kernel: Optional[KernelSpec] = None,
    alpha: float = 0.05,
    n_permutations: int = 200,
    hidden: int = 16,
    code_dim: int = 16,
    learning_rate: float = 1e-3,
    clip: float = 0.01,
    seed: int = 0,
    workers: Optional[int] = None,
) -> ExperimentReport:
    r"""
    Rejection rates of a fixed-kernel test and a learned-kernel test.

    Each trial draws ``2n`` fresh points from each distribution. The learned
    arm maximizes :math:`\hat{M}^2` over a clipped encoder on the first
    halves for `learn_budget` steps; both arms then run
    :func:`mmdforge.mmd.permutation_test` on the second halves, so the
    learned kernel never sees its test data.

    `learn_kernel` defaults to a relative-bandwidth mixture, which keeps
    the clipped encoder's small codes at a usable scale.

    Returns:
        :class:`ExperimentReport`: One row per trial; ``summary`` holds
        ``fixed_power`` and ``learned_power``.
    """
    if trials < 50:
        raise ContractError(f"The power experiment needs >= 50 trials, got {trials}.")
    if p_spec.dim != q_spec.dim:
        raise ContractError("P and Q must share a dimension.")
    learn_kernel = (learn_kernel if learn_kernel is not None
                    else MixtureRBF(relative=True))
    started = time.perf_counter()
    children = np.random.SeedSequence(seed).spawn(trials)

    def run(index):
        data_seq, encoder_seq, fixed_seq, learned_seq = children[index].spawn(4)
        rng = np.random.default_rng(data_seq)
        x = sample(p_spec, 2 * n, rng)
        y = sample(q_spec, 2 * n, rng)
        x_fit, x_test = x[:n], x[n:]
        y_fit, y_test = y[:n], y[n:]
        perm_seed = int(fixed_seq.generate_state(1)[0])
        fixed = permutation_test(
            x_test, y_test, fixed_kernel, alpha, n_permutations, perm_seed
        )
        encoder = _encoder(p_spec.dim, hidden, code_dim, encoder_seq)
        fit_critic(encoder, x_fit, y_fit, learn_kernel, learn_budget,
                   learning_rate=learning_rate, clip=clip)
        learned = permutation_test(
            x_test, y_test, Composed(learn_kernel, encoder), alpha,
            n_permutations, int(learned_seq.generate_state(1)[0]),
        )
        return {
            "trial": index,
            "fixed_statistic": fixed.statistic,
            "fixed_reject": int(fixed.reject),
            "learned_statistic": learned.statistic,
            "learned_reject": int(learned.reject),
        }

    rows = run_cells(run, list(range(trials)), workers)
    for index, row in enumerate(rows):
        row.setdefault("trial", index)
    report = ExperimentReport(
        name="power",
        grid={
            "p": dataclasses.asdict(p_spec),
            "q": dataclasses.asdict(q_spec),
            "n": n,
            "trials": trials,
            "alpha": alpha,
            "n_permutations": n_permutations,
            "learn_budget": learn_budget,
            "fixed_kernel": describe_kernel(fixed_kernel),
            "learn_kernel": describe_kernel(learn_kernel),
        },
        columns=["trial", "fixed_statistic", "fixed_reject",
                 "learned_statistic", "learned_reject"],
        rows=rows,
        seed=seed,
    )
    done = report.ok_rows()

    def rate(key):
        return float(np.mean([row[key] for row in done])) if done else math.nan
    report.summary = {
        "fixed_power": rate("fixed_reject"),
        "learned_power": rate("learned_reject"),
        "completed_trials": len(done),
    }
    report.wall_clock = time.perf_counter() - started
    logger.info("Power experiment: %s", report.summary)
    return report


MIN_STEP_DECREASE = 0.01


def weakstar_summary(
    values, limit_value=None, limit_null_std=None
) -> Dict[str, Any]:
    r"""
    Flags of a weak* curve: ``strictly_decreasing`` holds when every value
    is at least 1% below its predecessor, ``endpoint_within_3sd`` when the
    :math:`\mu = 0` statistic lies within three permutation-null standard
    deviations of zero.
    """
    values = [float(value) for value in values]
    summary = {
        "values": values,
        "strictly_decreasing": bool(all(
            later <= (1.0 - MIN_STEP_DECREASE) * earlier
            for earlier, later in zip(values, values[1:])
        )),
    }
    if limit_value is not None:
        summary["limit_value"] = float(limit_value)
        summary["limit_null_std"] = limit_null_std
        summary["endpoint_within_3sd"] = bool(
            limit_null_std is not None
            and abs(limit_value) <= 3.0 * limit_null_std
        )
    return summary


def weakstar_experiment(
    kernel: KernelSpec,
    length: int,
    mu0: Sequence[float] = (4.0, 0.0),
    n: int = 200,
    steps: int = 50,
    learning_rate: float = 1e-3,
    clip: float = 0.01,
    hidden: int = 16,
    code_dim: int = 16,
    seed: int = 0,
    include_limit: bool = False,
    n_permutations: int = 200,
    workers: Optional[int] = None,
) -> ExperimentReport:
    r"""
    Critic-maximized :math:`\hat{M}^2` between :math:`P_X = N(0, I)` and
    :math:`P_n = N(\mu_0 / 2^n, I)` for :math:`n = 0, \dots, L-1`.

    Every :math:`P_n` sample is the target draw shifted by :math:`\mu_n`,
    and every point of the curve starts from the same encoder
    initialisation, so the curve reflects the distribution gap alone.

    With `include_limit` a final :math:`\mu = 0` row is added. Its critic
    is fitted on two independent draws of :math:`P_X`; the endpoint is the
    unbiased statistic of that kernel on a fresh pair of draws, reported
    with the standard deviation of its permutation null.
    """
    if length < 3:
        raise ContractError(f"The weak* curve needs length >= 3, got {length}.")
    mu0 = np.asarray(mu0, dtype=np.float64)
    dim = mu0.shape[0]
    started = time.perf_counter()
    data_seq, encoder_seq, perm_seq = np.random.SeedSequence(seed).spawn(3)
    rng = np.random.default_rng(data_seq)
    target = rng.standard_normal((n, dim))
    encoder_seed = int(encoder_seq.generate_state(1)[0])

    def fit_encoder(x, y):
        encoder = _encoder(dim, hidden, code_dim, encoder_seed)
        history = fit_critic(encoder, x, y, kernel, steps,
                             learning_rate=learning_rate, clip=clip)
        return encoder, history[-1]

    def run(index):
        mu = mu0 / 2.0 ** index
        _, value = fit_encoder(target, target + mu)
        return {"n": index, "mu_norm": float(np.linalg.norm(mu)),
                "max_mmd2": value}

    rows = run_cells(run, list(range(length)), workers)
    if include_limit:
        base = rng.standard_normal((n, dim))
        encoder, value = fit_encoder(target, base)
        decision = permutation_test(
            rng.standard_normal((n, dim)), rng.standard_normal((n, dim)),
            Composed(kernel, encoder), 0.05, n_permutations,
            int(perm_seq.generate_state(1)[0]),
        )
        rows.append({
            "n": length,
            "mu_norm": 0.0,
            "max_mmd2": value,
            "limit_statistic": decision.statistic,
            "null_std": decision.null_std,
        })
    values = [row.get("max_mmd2", math.nan) for row in rows[:length]]
    report = ExperimentReport(
        name="weakstar",
        grid={
            "kernel": describe_kernel(kernel),
            "length": length,
            "mu0": mu0.tolist(),
            "n": n,
            "steps": steps,
            "clip": clip,
        },
        columns=["n", "mu_norm", "max_mmd2", "limit_statistic", "null_std"],
        rows=rows,
        seed=seed,
    )
    if include_limit:
        report.summary = weakstar_summary(
            values, rows[-1]["limit_statistic"], rows[-1]["null_std"]
        )
    else:
        report.summary = weakstar_summary(values)
    report.wall_clock = time.perf_counter() - started
    logger.info("Weak* curve: %s", values)
    return report


def timing_bench(
    batch_sizes: Sequence[int],
    kernel: KernelSpec,
    repetitions: int = 5,
    modes: Sequence[str] = ("mmdgan",),
    data_dim: int = 2,
    noise: Optional[NoiseSpec] = None,
    model: Optional[ModelSpec] = None,
    n_critic: int = 5,
    seed: int = 0,
) -> ExperimentReport:
    r"""
    Median wall-clock seconds of one full iteration (`n_critic` critic
    steps and one generator step) per batch size and mode, plus the
    least-squares exponent of time against :math:`B` on a log-log scale.
    Cells run sequentially.
    """
    if not batch_sizes or any(size < 2 for size in batch_sizes):
        raise ContractError(f"Every batch size must be >= 2, got {batch_sizes}.")
    if repetitions < 1:
        raise ContractError("repetitions must be >= 1.")
    noise = noise if noise is not None else NoiseSpec()
    started = time.perf_counter()
    rows = []
    exponents = {}
    for mode in modes:
        medians = []
        for size in batch_sizes:
            cfg = TrainConfig(mode=mode, kernel=kernel, batch_size=size,
                              n_critic=n_critic, seed=seed)
            bundle = build_bundle(cfg, data_dim, noise, model)
            rng = np.random.default_rng(seed)
            times = []
            for _ in range(repetitions):
                real = rng.standard_normal((size, data_dim))
                start = time.perf_counter()
                if cfg.has_critic:
                    for _ in range(n_critic):
                        critic_step(bundle, real, sample_noise(noise, size, rng),
                                    cfg, rng)
                generator_step(bundle, real, sample_noise(noise, size, rng), cfg)
                times.append(time.perf_counter() - start)
            median = float(np.median(times))
            medians.append(median)
            rows.append({"mode": mode, "batch_size": size,
                         "secs_per_iter": median})
            logger.info("timing mode=%s B=%d: %.4gs", mode, size, median)
        if len(batch_sizes) >= 2:
            slope, _ = np.polyfit(np.log(batch_sizes), np.log(medians), 1)
            exponents[mode] = float(slope)
    return ExperimentReport(
        name="timing",
        grid={
            "batch_sizes": list(batch_sizes),
            "modes": list(modes),
            "kernel": describe_kernel(kernel),
            "repetitions": repetitions,
            "n_critic": n_critic,
        },
        columns=["mode", "batch_size", "secs_per_iter"],
        rows=rows,
        seed=seed,
        wall_clock=time.perf_counter() - started,
        summary={"exponents": exponents},
    )


@dataclass
class CurveReport(object):
    iterations: np.ndarray
    smoothed: np.ndarray
    trend: float


def moving_average(values, window: int) -> np.ndarray:
    r"""
    Trailing mean over at most `window` entries; output has the input's
    length.
    """
    values = np.asarray(values, dtype=np.float64)
    sums = np.cumsum(np.concatenate([[0.0], values]))
    ends = np.arange(1, values.shape[0] + 1)
    starts = np.maximum(ends - window, 0)
    return (sums[ends] - sums[starts]) / (ends - starts)


def curve_correlation(trace, window: int = 5) -> CurveReport:
    r"""
    Smooths the held-out :math:`\hat{M}^2` column of a trace with a moving
    average and reports the Spearman rank correlation between iteration
    and smoothed value. A constant curve has no trend and reports 0.

    Args:
        trace (:class:`mmdforge.training.TrainTrace`): Non-empty trace.
        window (int): Moving-average window, at least 1.
    """
    if window < 1:
        raise ContractError(f"window must be >= 1, got {window}.")
    if len(trace) == 0:
        raise ContractError("Cannot correlate an empty trace.")
    smoothed = moving_average(trace.held_out, window)
    iterations = trace.iterations
    trend = 0.0
    if len(smoothed) >= 2 and np.ptp(smoothed) > 0:
        trend = float(spearmanr(iterations, smoothed)[0])
    return CurveReport(iterations=iterations, smoothed=smoothed, trend=trend)


def coverage_experiment(
    dataset: DatasetSpec,
    cfg: TrainConfig,
    modes: Sequence[str] = ("mmdgan", "gmmn_d"),
    batch_sizes: Sequence[int] = (64,),
    seeds: Sequence[int] = (0, 1, 2),
    noise: Optional[NoiseSpec] = None,
    model: Optional[ModelSpec] = None,
    radius: Optional[float] = None,
    n_generated: int = 2000,
    window: int = 5,
    workers: Optional[int] = None,
) -> ExperimentReport:
    r"""
    Trains one run per (mode, batch size, seed) cell and reports the final
    held-out :math:`\hat{M}^2`, mode coverage of `n_generated` samples and
    the trend of the held-out curve.

    Args:
        radius (float, optional): Coverage radius; defaults to three times
            the dataset's :math:`\sigma`.
    """
    noise = noise if noise is not None else NoiseSpec()
    radius = radius if radius is not None else 3.0 * dataset.sigma
    mode_centers = centers(dataset)
    started = time.perf_counter()
    cells = [
        (mode, size, seed)
        for mode in modes for size in batch_sizes for seed in seeds
    ]

    def run(cell):
        mode, size, seed = cell
        cell_cfg = dataclasses.replace(
            cfg, mode=mode, batch_size=size, seed=seed, progress=False
        )
        result = train(cell_cfg, dataset, noise=noise, model=model)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
        with no_grad():
            generated = result.bundle.generator(
                sample_noise(noise, n_generated, rng)
            ).data
        coverage = mode_coverage(generated, mode_centers, radius)
        rows = result.trace.rows
        return {
            "mode": mode,
            "batch_size": size,
            "seed": seed,
            "initial_held_out_mmd2": rows[0].held_out_mmd2,
            "final_held_out_mmd2": rows[-1].held_out_mmd2,
            "covered": coverage.covered,
            "high_quality_fraction": coverage.high_quality_fraction,
            "trend": curve_correlation(result.trace, window).trend,
            "critic_updates": result.trace.critic_updates,
        }

    rows = run_cells(run, cells, workers)
    for (mode, size, seed), row in zip(cells, rows):
        row.setdefault("mode", mode)
        row.setdefault("batch_size", size)
        row.setdefault("seed", seed)
        logger.info("coverage cell %s/%d/%d: %s", mode, size, seed, row)
    return ExperimentReport(
        name="coverage",
        grid={
            "dataset": dataclasses.asdict(dataset),
            "modes": list(modes),
            "batch_sizes": list(batch_sizes),
            "seeds": list(seeds),
            "iterations": cfg.iterations,
            "radius": radius,
        },
        columns=["mode", "batch_size", "seed", "initial_held_out_mmd2",
                 "final_held_out_mmd2", "covered", "high_quality_fraction",
                 "trend", "critic_updates"],
        rows=rows,
        seed=seeds[0] if seeds else 0,
        wall_clock=time.perf_counter() - started,
    )


ALTERNATIVES = ("null", "mean_shift", "mixture")


@dataclass
class EvalSpec(object):
    r"""
    Settings of the ``[eval]`` config section shared by the experiments.

    Args:
        alpha (float): Test level.
        n_permutations (int): Permutations per test.
        trials (int): Monte Carlo trials of the power experiment.
        sample_size (int): Points per sample and per half in a trial.
        alternative (str): ``"null"`` (:math:`Q = P`), ``"mean_shift"``
            (:math:`Q = N(s e_1, I)`) or ``"mixture"`` (equal-weight
            Gaussians at :math:`\pm s e_1` with the covariance trace of
            :math:`P`).
        shift (float): :math:`s`.
        learn_budget (int): Critic steps of the learned arm.
        learning_rate (float): Critic RMSProp step in experiments.
        clip (float): Critic clipping bound in experiments.
        hidden (int): Hidden width of experiment encoders.
        length (int): Weak* curve length :math:`L`.
        mu0 (tuple): Initial weak* mean offset.
        steps (int): Critic steps per weak* point.
        include_limit (bool): Append the :math:`\mu = 0` weak* row.
        batch_sizes (tuple): Timing grid.
        repetitions (int): Timing repetitions per cell.
        timing_modes (tuple): Modes timed.
        modes (tuple): Modes of the coverage grid.
        seeds (tuple): Seeds of the coverage grid.
        coverage_batch_sizes (tuple): Batch sizes of the coverage grid.
        radius (float): Coverage radius; ``0`` means three data sigmas.
        window (int): Moving-average window of the trend statistic.
        n_generated (int): Generated points per coverage cell.
        seed (int): Root seed.
    """
    alpha: float = 0.05
    n_permutations: int = 500
    trials: int = 100
    sample_size: int = 100
    alternative: str = "mixture"
    shift: float = 1.0
    learn_budget: int = 50
    learning_rate: float = 1e-3
    clip: float = 0.01
    hidden: int = 16
    length: int = 5
    mu0: Tuple[float, ...] = (4.0, 0.0)
    steps: int = 50
    include_limit: bool = False
    batch_sizes: Tuple[int, ...] = (16, 64, 256, 1024)
    repetitions: int = 5
    timing_modes: Tuple[str, ...] = ("mmdgan",)
    modes: Tuple[str, ...] = ("mmdgan", "gmmn_d")
    seeds: Tuple[int, ...] = (0, 1, 2)
    coverage_batch_sizes: Tuple[int, ...] = (64,)
    radius: float = 0.0
    window: int = 5
    n_generated: int = 2000
    seed: int = 0

    def __post_init__(self):
        self.mu0 = tuple(float(v) for v in self.mu0)
        self.batch_sizes = tuple(int(v) for v in self.batch_sizes)
        self.timing_modes = tuple(self.timing_modes)
        self.modes = tuple(self.modes)
        self.seeds = tuple(int(v) for v in self.seeds)
        self.coverage_batch_sizes = tuple(int(v) for v in self.coverage_batch_sizes)
        if not 0.0 < self.alpha < 1.0:
            raise ContractError(f"alpha must lie in (0, 1), got {self.alpha}.")
        if self.alternative not in ALTERNATIVES:
            raise ContractError(
                f"Unknown alternative '{self.alternative}', expected one of "
                f"{list(ALTERNATIVES)}."
            )
        if self.radius < 0:
            raise ContractError("radius must be non-negative.")


def power_pair(spec: EvalSpec, dim: int = 2):
    r"""
    The :math:`(P, Q)` source pair of the power experiment, with
    :math:`P = N(0, I_d)`.
    """
    zero = (0.0,) * dim
    p_spec = DatasetSpec(source="gaussian", mean=zero, sigma=1.0, dim=dim,
                         seed=spec.seed)
    if spec.alternative == "null":
        return p_spec, p_spec
    if spec.alternative == "mean_shift":
        mean = (spec.shift,) + zero[1:]
        return p_spec, dataclasses.replace(p_spec, mean=mean)
    # per-component variance chosen so the mixture's covariance trace is d
    variance = 1.0 - spec.shift ** 2 / dim
    if not variance > 0:
        raise ContractError(
            f"shift {spec.shift} is too large for a trace-matched mixture."
        )
    return p_spec, DatasetSpec(
        source="symmetric_mixture", offset=spec.shift,
        sigma=math.sqrt(variance), dim=dim, mean=zero, seed=spec.seed,
    )
