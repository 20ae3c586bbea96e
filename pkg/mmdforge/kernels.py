r"""
Positive-definite kernels and Gram-matrix construction.

Supported families are :class:`Gaussian`, :class:`MixtureRBF`,
:class:`Linear`, :class:`Polynomial` and :class:`Composed`, which evaluates an
inner kernel on the codes of a learned encoder,
:math:`\tilde{k}(x, x') = k(f(x), f(x'))`.
"""
import builtins
import warnings
from dataclasses import dataclass
from functools import reduce
from typing import Any, Dict, List, Tuple, Union

import numpy as np
from scipy.sparse.linalg import ArpackError, eigsh

from mmdforge.errors import ContractError, DimensionError
from mmdforge.tensor_engine import (
    Tensor,
    add,
    as_tensor,
    exp,
    matmul,
    mul,
    no_grad,
    pairwise_sqdist,
    power,
    square,
    sub,
    sum,
    transpose,
)


# Denominator applied to the squared distance for each bandwidth convention.
BANDWIDTH_FORMS = {
    "2sigma2": lambda sigma: 2.0 * sigma * sigma,
    "sigma2": lambda sigma: sigma * sigma,
    "sigma": lambda sigma: sigma,
}

DEFAULT_BANDWIDTHS = (1.0, 2.0, 4.0, 8.0, 16.0)

# Added to the pooled spread of relative kernels; keeps point masses finite.
SPREAD_FLOOR = 1e-20


def _check_form(form):
    if form not in BANDWIDTH_FORMS:
        raise ContractError(
            f"Unknown bandwidth form '{form}', expected one of "
            f"{sorted(BANDWIDTH_FORMS)}."
        )


@dataclass(frozen=True)
class Gaussian(object):
    r"""
    Gaussian kernel :math:`\exp(-\|x - y\|^2 / s(\sigma))` where
    :math:`s` is picked by `form` (``"2sigma2"`` gives :math:`2\sigma^2`).

    With `relative` the denominator is multiplied by the pooled spread
    :math:`\rho` of the two samples being compared (see
    :func:`pooled_spread`), so bandwidths are in units of the data scale.
    """
    bandwidth: float = 1.0
    form: str = "2sigma2"
    relative: bool = False

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ContractError(
                f"Gaussian bandwidth must be positive, got {self.bandwidth}."
            )
        _check_form(self.form)

    @property
    def scale(self) -> float:
        return BANDWIDTH_FORMS[self.form](float(self.bandwidth))


@dataclass(frozen=True)
class MixtureRBF(object):
    r"""
    Sum of :math:`K` Gaussian kernels sharing one distance matrix (and one
    pooled spread when `relative`).
    """
    bandwidths: Tuple[float, ...] = DEFAULT_BANDWIDTHS
    form: str = "2sigma2"
    relative: bool = False

    def __post_init__(self):
        bandwidths = tuple(float(sigma) for sigma in self.bandwidths)
        object.__setattr__(self, "bandwidths", bandwidths)
        if len(bandwidths) < 1:
            raise ContractError("A mixture needs at least one bandwidth.")
        if not all(sigma > 0 for sigma in bandwidths):
            raise ContractError(
                f"Mixture bandwidths must be positive, got {bandwidths}."
            )
        _check_form(self.form)

    def components(self) -> List[Gaussian]:
        return [
            Gaussian(sigma, self.form, self.relative) for sigma in self.bandwidths
        ]


@dataclass(frozen=True)
class Linear(object):
    r"""Linear kernel :math:`x^\top y`."""


@dataclass(frozen=True)
class Polynomial(object):
    r"""
    Polynomial kernel :math:`(c + x^\top y)^p` with `offset` :math:`c` and
    integer `degree` :math:`p`.
    """
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ContractError(
                f"Polynomial degree must be an integer >= 1, got {self.degree}."
            )
        if self.offset < 0:
            raise ContractError(
                f"Polynomial offset must be non-negative, got {self.offset}."
            )


@dataclass(frozen=True, eq=False)
class Composed(object):
    r"""
    Inner kernel evaluated on encoder codes.

    Args:
        inner: Any non-composed kernel.
        encoder: Callable mapping an ``(n, d)`` :class:`Tensor` to codes,
            exposing its input width as ``in_dim``
            (:class:`mmdforge.networks.Mlp`).
    """
    inner: Any
    encoder: Any

    def __post_init__(self):
        if isinstance(self.inner, Composed):
            raise ContractError(
                "Composed kernels nest at most once; the inner kernel must "
                "not itself be composed."
            )
        if not isinstance(self.inner, (Gaussian, MixtureRBF, Linear, Polynomial)):
            raise ContractError(f"Unsupported inner kernel {self.inner!r}.")


KernelSpec = Union[Gaussian, MixtureRBF, Linear, Polynomial, Composed]


def _as_constant(value) -> Tensor:
    data = value.data if isinstance(value, Tensor) else value
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    return Tensor(data)


def _check_pair(x: Tensor, y: Tensor):
    if x.ndim != 2 or y.ndim != 2:
        raise DimensionError(
            f"Gram inputs must be (n, d) matrices, got {x.shape} and {y.shape}."
        )
    if x.shape[1] != y.shape[1]:
        raise DimensionError(
            f"Feature dimensions differ: {x.shape[1]} vs {y.shape[1]}."
        )


def is_relative(kernel: KernelSpec) -> bool:
    if isinstance(kernel, Composed):
        kernel = kernel.inner
    return isinstance(kernel, (Gaussian, MixtureRBF)) and kernel.relative


def pooled_spread(*blocks: Tensor) -> Tensor:
    r"""
    Mean squared distance over all ordered pairs of rows of the pooled
    sample, :math:`\rho = \frac{2}{N}\sum_i \|z_i - \bar{z}\|^2`, plus
    :data:`SPREAD_FLOOR`. Recorded on the active tape.

    The value does not depend on the order of `blocks` or of their rows,
    and is unchanged when every row is negated.
    """
    if not blocks:
        raise ContractError("pooled_spread needs at least one block.")
    count = float(builtins.sum(block.shape[0] for block in blocks))
    center = mul(
        reduce(add, [sum(block, axis=0, keepdims=True) for block in blocks]),
        1.0 / count,
    )
    total = reduce(add, [sum(square(sub(block, center))) for block in blocks])
    return add(mul(total, 2.0 / count), SPREAD_FLOOR)


def encode_pair(x: Tensor, y: Tensor, kernel: KernelSpec):
    r"""
    Applies the encoder of a :class:`Composed` kernel to both samples.

    Returns:
        tuple: ``(codes_x, codes_y, inner_kernel)``; non-composed kernels
        pass through unchanged.
    """
    if not isinstance(kernel, Composed):
        return x, y, kernel
    _check_pair(x, y)
    in_dim = getattr(kernel.encoder, "in_dim", x.shape[1])
    if in_dim != x.shape[1]:
        raise DimensionError(
            f"Encoder expects inputs of width {in_dim}, data has width "
            f"{x.shape[1]}."
        )
    fx = kernel.encoder(x)
    fy = fx if y is x else kernel.encoder(y)
    return fx, fy, kernel.inner


def _gaussian(sqdist: Tensor, kernel: Gaussian, spread) -> Tensor:
    factor = -1.0 / kernel.scale
    if spread is None:
        return exp(mul(sqdist, factor))
    return exp(mul(sqdist, mul(power(spread, -1.0), factor)))


def _components(
    x: Tensor, y: Tensor, kernel: KernelSpec, spread=None
) -> List[Tensor]:
    _check_pair(x, y)
    x, y, kernel = encode_pair(x, y, kernel)
    if isinstance(kernel, (Gaussian, MixtureRBF)):
        if kernel.relative and spread is None:
            spread = pooled_spread(x) if y is x else pooled_spread(x, y)
        if not kernel.relative:
            spread = None
        sqdist = pairwise_sqdist(x, y)
        parts = [kernel] if isinstance(kernel, Gaussian) else kernel.components()
        return [_gaussian(sqdist, part, spread) for part in parts]
    if isinstance(kernel, Linear):
        return [matmul(x, transpose(y))]
    if isinstance(kernel, Polynomial):
        base = add(matmul(x, transpose(y)), kernel.offset)
        out = base
        for _ in range(int(kernel.degree) - 1):
            out = mul(out, base)
        return [out]
    raise ContractError(f"Unsupported kernel {kernel!r}.")


def gram_tensor(x, y, kernel: KernelSpec, spread=None) -> Tensor:
    r"""
    Tape-aware Gram matrix; used inside differentiable objectives.

    Args:
        spread (:class:`Tensor`, optional): Pooled spread of a relative
            kernel. Computed from `x` and `y` (their codes for a
            :class:`Composed` kernel) when omitted.
    """
    x, y = as_tensor(x), as_tensor(y)
    return reduce(add, _components(x, y, kernel, spread))


def gram(x, y, kernel: KernelSpec, differentiable: bool = False):
    r"""
    Builds the :math:`n \times m` matrix :math:`k(x_i, y_j)`.

    Args:
        x (array or :class:`Tensor`): ``(n, d)`` points.
        y (array or :class:`Tensor`): ``(m, d)`` points.
        kernel: A kernel spec.
        differentiable (bool): If `True`, returns a :class:`Tensor`
            recorded on the active tape (tracked through encoder
            parameters). Otherwise returns a plain :class:`numpy.ndarray`.
    """
    if differentiable:
        return gram_tensor(x, y, kernel)
    with no_grad():
        x = _as_constant(x)
        y = x if y is None else _as_constant(y)
        return gram_tensor(x, y, kernel).data


def gram_components(x, y, kernel: KernelSpec, spread=None) -> List[np.ndarray]:
    r"""
    Per-bandwidth Gram matrices of a mixture (a single matrix for other
    kernels), all built from one distance matrix.
    """
    with no_grad():
        return [part.data for part in _components(
            _as_constant(x), _as_constant(y), kernel, spread
        )]


def encode_samples(x, y, kernel: KernelSpec):
    r"""
    Untracked codes of both samples and the pooled spread a relative inner
    kernel needs.

    Returns:
        tuple: ``(codes_x, codes_y, inner_kernel, spread)``; `spread` is
        `None` for kernels with absolute bandwidths.
    """
    with no_grad():
        fx, fy, inner = encode_pair(_as_constant(x), _as_constant(y), kernel)
        spread = pooled_spread(fx, fy) if is_relative(inner) else None
    return fx.data, fy.data, inner, spread


def num_components(kernel: KernelSpec) -> int:
    if isinstance(kernel, Composed):
        kernel = kernel.inner
    if isinstance(kernel, MixtureRBF):
        return len(kernel.bandwidths)
    return 1


def check_psd(matrix, tol: float = 1e-12) -> float:
    r"""
    Estimates the smallest eigenvalue of a symmetric Gram matrix with the
    Lanczos iteration.

    Args:
        matrix (array): ``(n, n)`` Gram matrix of a sample against itself.
        tol (float): Allowed absolute asymmetry.

    Returns:
        float: Smallest eigenvalue.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionError(f"Expected a square matrix, got {matrix.shape}.")
    asymmetry = np.max(np.abs(matrix - matrix.T)) if matrix.size else 0.0
    if asymmetry > tol:
        raise ContractError(
            f"Gram matrix is not symmetric (max asymmetry {asymmetry:.3e})."
        )
    n = matrix.shape[0]
    if n <= 2:
        return float(np.linalg.eigvalsh(matrix)[0])
    start = np.random.default_rng(0).standard_normal(n)
    try:
        value = eigsh(
            matrix, k=1, which="SA", v0=start, tol=1e-12,
            return_eigenvectors=False,
        )
        return float(value[0])
    except (ArpackError, ValueError) as error:
        warnings.warn(
            f"Lanczos iteration failed ({error}); using a dense "
            "eigendecomposition."
        )
        return float(np.linalg.eigvalsh(matrix)[0])


def describe_kernel(kernel: KernelSpec) -> Dict[str, Any]:
    r"""
    JSON-friendly description of a kernel.
    """
    if isinstance(kernel, Gaussian):
        return {"kind": "gaussian", "bandwidth": kernel.bandwidth,
                "form": kernel.form, "relative": kernel.relative}
    if isinstance(kernel, MixtureRBF):
        return {"kind": "mixture", "bandwidths": list(kernel.bandwidths),
                "form": kernel.form, "relative": kernel.relative}
    if isinstance(kernel, Linear):
        return {"kind": "linear"}
    if isinstance(kernel, Polynomial):
        return {"kind": "polynomial", "degree": int(kernel.degree),
                "offset": kernel.offset}
    if isinstance(kernel, Composed):
        return {"kind": "composed", "inner": describe_kernel(kernel.inner),
                "encoder": repr(kernel.encoder)}
    raise ContractError(f"Unsupported kernel {kernel!r}.")


def kernel_from_dict(description: Dict[str, Any]) -> KernelSpec:
    r"""
    Inverse of :func:`describe_kernel` for non-composed kernels.
    """
    kind = description.get("kind")
    form = description.get("form", "2sigma2")
    relative = bool(description.get("relative", False))
    if kind == "gaussian":
        return Gaussian(float(description.get("bandwidth", 1.0)), form, relative)
    if kind == "mixture":
        return MixtureRBF(
            tuple(description.get("bandwidths", DEFAULT_BANDWIDTHS)),
            form,
            relative,
        )
    if kind == "linear":
        return Linear()
    if kind == "polynomial":
        return Polynomial(
            int(description.get("degree", 2)),
            float(description.get("offset", 1.0)),
        )
    raise ContractError(f"Cannot rebuild kernel of kind '{kind}'.")
