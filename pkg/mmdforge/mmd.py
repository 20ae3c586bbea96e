r"""
Maximum mean discrepancy estimators and the permutation two-sample test.

Two estimators of the squared MMD are provided: the unbiased U-statistic

.. math::
    \hat{M}^2_u = \frac{1}{n(n-1)}\sum_{i \ne i'} k(x_i, x_{i'})
        - \frac{2}{nm}\sum_{i,j} k(x_i, y_j)
        + \frac{1}{m(m-1)}\sum_{j \ne j'} k(y_j, y_{j'})

and the biased plug-in norm of the difference of empirical mean embeddings,
which keeps the diagonal and normalises by :math:`n^2` and :math:`m^2`.
"""
import json
import math
from dataclasses import dataclass
from functools import reduce
from typing import List, Optional

import numpy as np

from mmdforge.errors import ContractError, InsufficientSampleError
from mmdforge.kernels import (
    Composed,
    KernelSpec,
    Polynomial,
    describe_kernel,
    encode_pair,
    encode_samples,
    gram_components,
    gram_tensor,
)
from mmdforge.tensor_engine import Tensor, as_tensor, concat_rows, mul, sum


ESTIMATORS = ("biased", "unbiased")


@dataclass
class MmdReport(object):
    r"""
    Result of one MMD estimate.

    Args:
        estimate (float): :math:`\hat{M}^2`.
        estimator_kind (str): ``"biased"`` or ``"unbiased"``.
        kernel: Kernel the estimate was computed with.
        n (int): Size of the first sample.
        m (int): Size of the second sample.
        per_component (list, optional): Per-bandwidth estimates of a
            mixture kernel; they sum to `estimate`.
    """
    estimate: float
    estimator_kind: str
    kernel: KernelSpec
    n: int
    m: int
    per_component: Optional[List[float]] = None

    def to_dict(self):
        return {
            "estimate": self.estimate,
            "estimator": self.estimator_kind,
            "kernel": describe_kernel(self.kernel),
            "n": self.n,
            "m": self.m,
            "per_component": self.per_component,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class TestDecision(object):
    r"""
    Outcome of a permutation two-sample test; ``reject`` is
    ``statistic > threshold``.
    """
    __test__ = False

    statistic: float
    threshold: float
    alpha: float
    n_permutations: int
    reject: bool
    p_value: float = float("nan")
    null_std: float = float("nan")

    def to_dict(self):
        return {
            "statistic": self.statistic,
            "threshold": self.threshold,
            "alpha": self.alpha,
            "n_permutations": self.n_permutations,
            "reject": self.reject,
            "p_value": self.p_value,
            "null_std": self.null_std,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class MomentReport(object):
    r"""
    First/second moment gaps next to the degree-2 polynomial MMD. The
    identity ``poly_mmd2 == 2 * first_moment_gap + second_moment_gap``
    holds exactly in exact arithmetic.
    """
    first_moment_gap: float
    second_moment_gap: float
    poly_mmd2: float

    @property
    def residual(self) -> float:
        return abs(
            self.poly_mmd2 - (2.0 * self.first_moment_gap + self.second_moment_gap)
        )

    def to_dict(self):
        return {
            "first_moment_gap": self.first_moment_gap,
            "second_moment_gap": self.second_moment_gap,
            "poly_mmd2": self.poly_mmd2,
        }


def _as_samples(values, name) -> np.ndarray:
    data = values.data if isinstance(values, Tensor) else values
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    if data.ndim != 2:
        raise ContractError(f"{name} must be an (n, d) matrix, got {data.shape}.")
    return data


def _check_sizes(n, m, minimum, estimator):
    if n < minimum or m < minimum:
        raise InsufficientSampleError(
            f"The {estimator} estimator needs at least {minimum} points per "
            f"sample, got n={n}, m={m}."
        )


def _off_diagonal_sum(matrix: np.ndarray) -> float:
    mask = ~np.eye(matrix.shape[0], dtype=bool)
    return math.fsum(matrix[mask])


def _combine(kxx, kyy, kxy, estimator) -> float:
    # fsum is order independent, so swapping the samples gives the same bits
    n, m = kxx.shape[0], kyy.shape[0]
    if estimator == "unbiased":
        term_x = _off_diagonal_sum(kxx) / (n * (n - 1))
        term_y = _off_diagonal_sum(kyy) / (m * (m - 1))
    else:
        term_x = math.fsum(kxx.ravel()) / (n * n)
        term_y = math.fsum(kyy.ravel()) / (m * m)
    term_xy = math.fsum(kxy.ravel()) / (n * m)
    return (term_x + term_y) - 2.0 * term_xy


def _report(x, y, kernel, estimator) -> MmdReport:
    fx, fy, inner, spread = encode_samples(x, y, kernel)
    parts_xx = gram_components(fx, fx, inner, spread)
    parts_yy = gram_components(fy, fy, inner, spread)
    parts_xy = gram_components(fx, fy, inner, spread)
    kxx = reduce(np.add, parts_xx)
    kyy = reduce(np.add, parts_yy)
    kxy = reduce(np.add, parts_xy)
    per_component = None
    if len(parts_xx) > 1:
        per_component = [
            _combine(a, b, c, estimator)
            for a, b, c in zip(parts_xx, parts_yy, parts_xy)
        ]
    return MmdReport(
        estimate=_combine(kxx, kyy, kxy, estimator),
        estimator_kind=estimator,
        kernel=kernel,
        n=x.shape[0],
        m=y.shape[0],
        per_component=per_component,
    )


def mmd2_unbiased(x, y, kernel: KernelSpec) -> MmdReport:
    r"""
    Unbiased U-statistic estimate of the squared MMD.

    Args:
        x (array): ``(n, d)`` sample, ``n >= 2``.
        y (array): ``(m, d)`` sample, ``m >= 2``.
        kernel: Kernel spec.

    Returns:
        :class:`MmdReport`: The estimate, which may be negative.
    """
    x, y = _as_samples(x, "X"), _as_samples(y, "Y")
    _check_sizes(x.shape[0], y.shape[0], 2, "unbiased")
    return _report(x, y, kernel, "unbiased")


def mmd2_biased(x, y, kernel: KernelSpec) -> MmdReport:
    r"""
    Biased (V-statistic) estimate: the squared RKHS distance between the
    two empirical mean embeddings. Never negative beyond round-off.
    """
    x, y = _as_samples(x, "X"), _as_samples(y, "Y")
    _check_sizes(x.shape[0], y.shape[0], 1, "biased")
    return _report(x, y, kernel, "biased")


def estimator_weights(n: int, m: int, estimator: str = "biased") -> np.ndarray:
    r"""
    Matrix :math:`W` with :math:`\hat{M}^2 = \sum_{ij} W_{ij} K_{ij}` for
    the Gram matrix :math:`K` of the pooled sample whose first `n` rows
    come from :math:`P`.
    """
    total = n + m
    weights = np.empty((total, total))
    if estimator == "unbiased":
        weights[:n, :n] = 1.0 / (n * (n - 1))
        weights[n:, n:] = 1.0 / (m * (m - 1))
        np.fill_diagonal(weights, 0.0)
    else:
        weights[:n, :n] = 1.0 / (n * n)
        weights[n:, n:] = 1.0 / (m * m)
    weights[:n, n:] = -1.0 / (n * m)
    weights[n:, :n] = -1.0 / (n * m)
    return weights


def mmd2_pooled(
    z, n: int, kernel: KernelSpec, estimator: str = "biased"
) -> Tensor:
    r"""
    Differentiable :math:`\hat{M}^2` between the first `n` rows of `z` and
    the rest, built from one pooled Gram matrix.

    Args:
        z (:class:`Tensor`): ``(n + m, d)`` pooled sample (codes when the
            caller has already applied an encoder).
        n (int): Rows belonging to the first sample.
        kernel: Non-composed kernel; a :class:`Composed` kernel encodes the
            pooled sample once.
        estimator (str): ``"biased"`` or ``"unbiased"``.
    """
    if estimator not in ESTIMATORS:
        raise ContractError(
            f"Unknown estimator '{estimator}', expected one of {ESTIMATORS}."
        )
    z = as_tensor(z)
    m = z.shape[0] - n
    _check_sizes(n, m, 2 if estimator == "unbiased" else 1, estimator)
    if isinstance(kernel, Composed):
        z = encode_pair(z, z, kernel)[0]
        kernel = kernel.inner
    weights = Tensor(estimator_weights(n, m, estimator))
    return sum(mul(gram_tensor(z, z, kernel), weights))


def mmd2(x, y, kernel: KernelSpec, estimator: str = "biased") -> Tensor:
    r"""
    Differentiable squared-MMD estimate recorded on the active tape.

    Args:
        x (:class:`Tensor`): ``(n, d)`` sample.
        y (:class:`Tensor`): ``(m, d)`` sample.
        kernel: Kernel spec; the encoder of a :class:`Composed` kernel runs
            once on the pooled sample.
        estimator (str): ``"biased"`` or ``"unbiased"``.

    Returns:
        :class:`Tensor`: Scalar estimate.
    """
    x, y = as_tensor(x), as_tensor(y)
    return mmd2_pooled(concat_rows(x, y), x.shape[0], kernel, estimator)


def _permutation_statistics(pooled_gram, n, m, n_permutations, rng):
    total = n + m
    members = np.zeros((total, n_permutations))
    for column in range(n_permutations):
        members[rng.permutation(total)[:n], column] = 1.0
    row_sums = pooled_gram.sum(axis=1)
    diagonal = np.diag(pooled_gram)
    weighted = pooled_gram @ members
    sum_xx = np.sum(members * weighted, axis=0)
    sum_xy = np.sum(members * (row_sums[:, None] - weighted), axis=0)
    sum_yy = pooled_gram.sum() - sum_xx - 2.0 * sum_xy
    diag_x = diagonal @ members
    diag_y = diagonal.sum() - diag_x
    return (
        (sum_xx - diag_x) / (n * (n - 1))
        + (sum_yy - diag_y) / (m * (m - 1))
        - 2.0 * sum_xy / (n * m)
    )


def permutation_test(
    x,
    y,
    kernel: KernelSpec,
    alpha: float = 0.05,
    n_permutations: int = 500,
    seed: int = 0,
) -> TestDecision:
    r"""
    Kernel two-sample test of :math:`H_0: P = Q`.

    The statistic is :func:`mmd2_unbiased`. The pooled sample is re-split
    uniformly at random `n_permutations` times with a generator seeded by
    `seed`; the threshold :math:`c_\alpha` is the empirical
    :math:`(1-\alpha)` quantile of the permuted statistics.

    Args:
        x (array): ``(n, d)`` sample from :math:`P`.
        y (array): ``(m, d)`` sample from :math:`Q`.
        kernel: Kernel spec.
        alpha (float): Allowed false-rejection probability in (0, 1).
        n_permutations (int): Number of re-splits, at least 100.
        seed (int): Seed of the permutation stream.

    Returns:
        :class:`TestDecision`
    """
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"alpha must lie in (0, 1), got {alpha}.")
    if n_permutations < 100:
        raise ContractError(
            f"At least 100 permutations are required, got {n_permutations}."
        )
    x, y = _as_samples(x, "X"), _as_samples(y, "Y")
    n, m = x.shape[0], y.shape[0]
    _check_sizes(n, m, 2, "unbiased")
    statistic = mmd2_unbiased(x, y, kernel).estimate

    fx, fy, inner, spread = encode_samples(x, y, kernel)
    pooled = np.vstack([fx, fy])
    pooled_gram = reduce(np.add, gram_components(pooled, pooled, inner, spread))
    rng = np.random.default_rng(seed)
    null = _permutation_statistics(pooled_gram, n, m, n_permutations, rng)
    threshold = float(np.quantile(null, 1.0 - alpha))
    exceed = int(np.count_nonzero(null >= statistic))
    return TestDecision(
        statistic=statistic,
        threshold=threshold,
        alpha=alpha,
        n_permutations=n_permutations,
        reject=bool(statistic > threshold),
        p_value=(1.0 + exceed) / (1.0 + n_permutations),
        null_std=float(np.std(null, ddof=1)),
    )


def moment_diagnostic(x, y) -> MomentReport:
    r"""
    Compares first and second empirical moments with the MMD of the
    polynomial kernel :math:`(1 + x^\top y)^2`, which matches exactly the
    mean and the (uncentred) second moment.

    Args:
        x (array): ``(n, d)`` sample, ``n >= 2``.
        y (array): ``(m, d)`` sample, ``m >= 2``.
    """
    x, y = _as_samples(x, "X"), _as_samples(y, "Y")
    _check_sizes(x.shape[0], y.shape[0], 2, "moment")
    mean_gap = x.mean(axis=0) - y.mean(axis=0)
    second_x = x.T @ x / x.shape[0]
    second_y = y.T @ y / y.shape[0]
    return MomentReport(
        first_moment_gap=float(np.sum(mean_gap * mean_gap)),
        second_moment_gap=float(np.sum((second_x - second_y) ** 2)),
        poly_mmd2=mmd2_biased(x, y, Polynomial(2, 1.0)).estimate,
    )
