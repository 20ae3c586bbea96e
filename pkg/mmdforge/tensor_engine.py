r"""
Dense 64-bit arrays with define-by-run reverse-mode differentiation.

A :class:`Tape` records every primitive applied to a tracked
:class:`Tensor` while it is active. :meth:`Tape.gradient` walks the record
backwards. With ``create_graph=True`` the backward pass is itself recorded,
so gradients can be differentiated again (the gradient penalty needs this).

.. code-block:: python

    from mmdforge.tensor_engine import Tape, Tensor

    p = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = (p * p).sum()
    grad, = tape.gradient(loss, [p])
"""
import contextlib
import threading
from dataclasses import dataclass, field
from typing import (
    Callable,
    Dict,
    List,
    Optional,
    Sequence,
    Tuple,
    Union
)

import numpy as np

from mmdforge.errors import ContractError, DimensionError, NumericError


_local = threading.local()


def _active_tape():
    return getattr(_local, "tape", None)


def _is_recording():
    return getattr(_local, "recording", True)


@contextlib.contextmanager
def no_grad():
    r"""
    Suspends tape recording in the current thread. Primitives evaluated
    inside the block return untracked tensors.
    """
    previous = _is_recording()
    _local.recording = False
    try:
        yield
    finally:
        _local.recording = previous


class Tensor(object):
    r"""
    A dense real array, stored row-major in 64-bit floats, that can take
    part in a recorded computation.

    Args:
        data (array like): Values; copied into a fresh float64 buffer.
        requires_grad (bool): Whether the tensor is a differentiable leaf
            (a parameter). Leaves are registered lazily on the active
            tape the first time a primitive consumes them.
        name (str, optional): Label used in error messages.
    """
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.grad_id = None
        self._tape = None

    @classmethod
    def _wrap(cls, array):
        tensor = cls.__new__(cls)
        tensor.data = np.asarray(array, dtype=np.float64)
        tensor.requires_grad = False
        tensor.name = None
        tensor.grad_id = None
        tensor._tape = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self) -> np.ndarray:
        r"""
        Returns a copy of the underlying buffer.
        """
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(
                f"item() needs a single-element tensor, got shape {self.shape}."
            )
        return float(self.data.reshape(()))

    def detach(self):
        r"""
        Returns an untracked tensor sharing no state with the tape.
        """
        return Tensor(self.data)

    def is_tracked(self, tape=None) -> bool:
        tape = tape if tape is not None else _active_tape()
        if tape is None:
            return False
        return self.requires_grad or self._tape is tape

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        if exponent == 2:
            return square(self)
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def exp(self):
        return exp(self)

    def square(self):
        return square(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence]


def as_tensor(value: TensorLike) -> Tensor:
    r"""
    Returns `value` unchanged if it is a :class:`Tensor`, otherwise wraps
    it as an untracked constant.
    """
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class _Node(object):
    __slots__ = ("name", "parents", "vjp")

    def __init__(self, name, parents, vjp):
        self.name = name
        self.parents = parents
        self.vjp = vjp


class Tape(object):
    r"""
    Append-only record of primitive applications. Node order is a
    topological order, so the backward pass is a single reverse sweep that
    visits every node at most once.

    A tape is active inside its ``with`` block and confined to the thread
    that entered it. Build a new tape for every training step.
    """
    def __init__(self):
        self.nodes: List[_Node] = []
        self._leaves: List[Tensor] = []
        self._consumed = False
        self._previous = None

    def __enter__(self):
        self._previous = _active_tape()
        _local.tape = self
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        _local.tape = self._previous
        self._previous = None
        return False

    def __len__(self):
        return len(self.nodes)

    @staticmethod
    def current():
        r"""
        Returns the tape active in this thread, or `None`.
        """
        return _active_tape()

    @property
    def consumed(self) -> bool:
        return self._consumed

    def watch(self, tensor: Tensor) -> int:
        r"""
        Registers `tensor` as a leaf of this tape and returns its node id.
        """
        if tensor._tape is self:
            return tensor.grad_id
        self.nodes.append(_Node("leaf", (), None))
        tensor._tape = self
        tensor.grad_id = len(self.nodes) - 1
        self._leaves.append(tensor)
        return tensor.grad_id

    def _node_id(self, tensor: Tensor) -> Optional[int]:
        if tensor._tape is self:
            return tensor.grad_id
        if tensor.requires_grad:
            return self.watch(tensor)
        return None

    def _record(self, name, inputs, out, vjp):
        parents = tuple(self._node_id(tensor) for tensor in inputs)
        if all(parent is None for parent in parents):
            return
        self.nodes.append(_Node(name, parents, vjp))
        out._tape = self
        out.grad_id = len(self.nodes) - 1

    def gradient(
        self,
        target: Tensor,
        sources: Optional[Sequence[Tensor]] = None,
        create_graph: bool = False,
    ) -> List[Tensor]:
        r"""
        Computes the gradient of a scalar `target` with respect to each of
        `sources`.

        Args:
            target (:class:`Tensor`): Scalar recorded on this tape.
            sources (list, optional): Tensors to differentiate against.
                Defaults to every parameter leaf seen by the tape.
            create_graph (bool): Record the backward pass on this tape so the
                returned gradients are themselves differentiable. When
                `False` the tape is consumed.

        Returns:
            list: One gradient per source, zeros for sources the target does
            not depend on.
        """
        if self._consumed:
            raise ContractError(
                "The tape was consumed by an earlier backward pass."
            )
        if not isinstance(target, Tensor) or target.size != 1:
            shape = getattr(target, "shape", None)
            raise ContractError(
                f"Backward needs a scalar loss, got shape {shape}."
            )
        if target._tape is not self:
            raise ContractError("The loss is not recorded on this tape.")
        if sources is None:
            sources = [leaf for leaf in self._leaves if leaf.requires_grad]

        start = target.grad_id
        cotangents: Dict[int, Tensor] = {
            start: Tensor._wrap(np.ones_like(target.data))
        }
        previous_tape = _active_tape()
        _local.tape = self
        recording = no_grad() if not create_graph else contextlib.nullcontext()
        try:
            with recording:
                for index in range(start, -1, -1):
                    grad = cotangents.get(index)
                    node = self.nodes[index]
                    if grad is None or node.vjp is None:
                        continue
                    for parent, parent_grad in zip(
                        node.parents, node.vjp(grad)
                    ):
                        if parent is None or parent_grad is None:
                            continue
                        if parent in cotangents:
                            cotangents[parent] = add(
                                cotangents[parent], parent_grad
                            )
                        else:
                            cotangents[parent] = parent_grad
        finally:
            _local.tape = previous_tape

        grads = []
        for source in sources:
            grad = None
            if source._tape is self:
                grad = cotangents.get(source.grad_id)
            if grad is None:
                grad = Tensor._wrap(np.zeros_like(source.data))
            grads.append(grad)
        if not create_graph:
            self._consumed = True
        return grads


def backward(
    loss: Tensor,
    params: Optional[Sequence[Tensor]] = None,
) -> Dict[Tensor, Tensor]:
    r"""
    Differentiates a scalar `loss` on the tape that recorded it.

    Args:
        loss (:class:`Tensor`): Scalar, tape-tracked loss.
        params (list, optional): Parameters of interest. Defaults to every
            parameter leaf the tape has seen.

    Returns:
        dict: Map from each parameter to ``d loss / d param``. The tape is
        consumed.
    """
    tape = getattr(loss, "_tape", None)
    if tape is None:
        raise ContractError("The loss is not recorded on any tape.")
    if params is None:
        params = [leaf for leaf in tape._leaves if leaf.requires_grad]
    grads = tape.gradient(loss, params)
    return dict(zip(params, grads))


def _apply(name: str, inputs: Tuple[Tensor, ...], out_data, vjp: Callable):
    if not np.all(np.isfinite(out_data)):
        raise NumericError(name)
    out = Tensor._wrap(out_data)
    tape = _active_tape()
    if tape is not None and _is_recording() and not tape._consumed:
        tape._record(name, inputs, out, vjp)
    return out


def _broadcast_check(name, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"'{name}' cannot broadcast shapes {a.shape} and {b.shape}."
        )


def _errstate():
    return np.errstate(over="ignore", invalid="ignore", divide="ignore")


# primitives

def sum_to(x: TensorLike, shape: Tuple[int, ...]) -> Tensor:
    r"""
    Sums a broadcast tensor back down to `shape`.
    """
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = x.data
    lead = data.ndim - len(shape)
    if lead > 0:
        data = data.sum(axis=tuple(range(lead)))
    axes = tuple(
        i for i, size in enumerate(shape) if size == 1 and data.shape[i] != 1
    )
    if axes:
        data = data.sum(axis=axes, keepdims=True)
    if data.shape != shape:
        raise DimensionError(f"Cannot reduce shape {x.shape} to {shape}.")

    def vjp(g):
        return (broadcast_to(g, x.shape),)
    return _apply("sum_to", (x,), data, vjp)


def broadcast_to(x: TensorLike, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        data = np.array(np.broadcast_to(x.data, shape))
    except ValueError:
        raise DimensionError(f"Cannot broadcast shape {x.shape} to {shape}.")

    def vjp(g):
        return (sum_to(g, x.shape),)
    return _apply("broadcast_to", (x,), data, vjp)


def reshape(x: TensorLike, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"Cannot reshape {x.shape} into {shape}.")

    def vjp(g):
        return (reshape(g, x.shape),)
    return _apply("reshape", (x,), data, vjp)


def take_rows(x: TensorLike, start: int, stop: int) -> Tensor:
    r"""
    Rows ``start:stop`` of a matrix.
    """
    x = as_tensor(x)
    if x.ndim < 1 or not 0 <= start <= stop <= x.shape[0]:
        raise DimensionError(
            f"Cannot take rows {start}:{stop} of shape {x.shape}."
        )
    total = x.shape[0]

    def vjp(g):
        return (pad_rows(g, start, total),)
    return _apply("take_rows", (x,), np.array(x.data[start:stop]), vjp)


def pad_rows(x: TensorLike, start: int, total: int) -> Tensor:
    r"""
    Places `x` at row `start` of a zero matrix with `total` rows.
    """
    x = as_tensor(x)
    stop = start + x.shape[0]
    if start < 0 or stop > total:
        raise DimensionError(
            f"Cannot place {x.shape[0]} rows at {start} in {total} rows."
        )
    data = np.zeros((total,) + x.shape[1:])
    data[start:stop] = x.data

    def vjp(g):
        return (take_rows(g, start, stop),)
    return _apply("pad_rows", (x,), data, vjp)


def concat_rows(a: TensorLike, b: TensorLike) -> Tensor:
    r"""
    Stacks the rows of `a` on top of the rows of `b`.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim or a.shape[1:] != b.shape[1:]:
        raise DimensionError(
            f"'concat_rows' needs matching trailing shapes, got {a.shape} "
            f"and {b.shape}."
        )
    n, total = a.shape[0], a.shape[0] + b.shape[0]

    def vjp(g):
        return take_rows(g, 0, n), take_rows(g, n, total)
    return _apply("concat_rows", (a, b), np.concatenate([a.data, b.data]), vjp)


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)

    def vjp(g):
        return sum_to(g, a.shape), sum_to(g, b.shape)
    with _errstate():
        data = a.data + b.data
    return _apply("add", (a, b), data, vjp)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)

    def vjp(g):
        return sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)
    with _errstate():
        data = a.data * b.data
    return _apply("mul", (a, b), data, vjp)


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (neg(g),)
    return _apply("neg", (a,), -a.data, vjp)


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"'matmul' needs (n, k) @ (k, m), got {a.shape} @ {b.shape}."
        )

    def vjp(g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)
    with _errstate():
        data = a.data @ b.data
    return _apply("matmul", (a, b), data, vjp)


def transpose(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"'transpose' needs a matrix, got {a.shape}.")

    def vjp(g):
        return (transpose(g),)
    return _apply("transpose", (a,), np.ascontiguousarray(a.data.T), vjp)


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    with _errstate():
        data = np.exp(a.data)
    out = None

    def vjp(g):
        return (mul(g, out),)
    out = _apply("exp", (a,), data, vjp)
    return out


def square(a: TensorLike) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (mul(g, mul(a, 2.0)),)
    with _errstate():
        data = a.data * a.data
    return _apply("square", (a,), data, vjp)


def power(a: TensorLike, exponent: float) -> Tensor:
    r"""
    Elementwise ``a ** exponent`` for a constant real exponent.
    """
    a = as_tensor(a)
    exponent = float(exponent)

    def vjp(g):
        return (mul(g, mul(power(a, exponent - 1.0), exponent)),)
    with _errstate():
        data = np.power(a.data, exponent)
    return _apply("power", (a,), data, vjp)


def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out = None

    def vjp(g):
        return (mul(g, sub(1.0, square(out))),)
    out = _apply("tanh", (a,), np.tanh(a.data), vjp)
    return out


def _keepdims_shape(shape, axis):
    if axis is None:
        return tuple(1 for _ in shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    return tuple(1 if i in axes else size for i, size in enumerate(shape))


def sum(a: TensorLike, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    kept = _keepdims_shape(a.shape, axis)

    def vjp(g):
        return (broadcast_to(reshape(g, kept), a.shape),)
    with _errstate():
        data = np.sum(a.data, axis=axis, keepdims=keepdims)
    return _apply("sum", (a,), data, vjp)


def mean(a: TensorLike, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    kept = _keepdims_shape(a.shape, axis)
    count = int(np.prod(a.shape)) // int(np.prod(kept))
    if count == 0:
        raise DimensionError(f"'mean' over an empty axis of shape {a.shape}.")

    def vjp(g):
        return (mul(broadcast_to(reshape(g, kept), a.shape), 1.0 / count),)
    data = np.mean(a.data, axis=axis, keepdims=keepdims)
    return _apply("mean", (a,), data, vjp)


def maximum(a: TensorLike, c: float) -> Tensor:
    r"""
    Elementwise ``max(a, c)`` against a scalar. The subgradient at ``a == c``
    is taken as zero.
    """
    a = as_tensor(a)
    c = float(c)
    mask = Tensor._wrap((a.data > c).astype(np.float64))

    def vjp(g):
        return (mul(g, mask),)
    return _apply("maximum", (a,), np.maximum(a.data, c), vjp)


def pairwise_sqdist(x: TensorLike, y: TensorLike) -> Tensor:
    r"""
    Squared Euclidean distance matrix between the rows of `x` (n, d) and
    `y` (m, d), evaluated in the expanded form
    :math:`\|x\|^2 + \|y\|^2 - 2 x^\top y` and clamped at zero.

    The coordinates are accumulated one column at a time, so
    ``pairwise_sqdist(y, x)`` is exactly the transpose of
    ``pairwise_sqdist(x, y)`` and coincident rows give exactly zero.
    """
    x, y = as_tensor(x), as_tensor(y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise DimensionError(
            f"'pairwise_sqdist' needs (n, d) and (m, d), got {x.shape} "
            f"and {y.shape}."
        )
    n, m = x.shape[0], y.shape[0]
    x_norms = np.zeros(n)
    y_norms = np.zeros(m)
    cross = np.zeros((n, m))
    with _errstate():
        for k in range(x.shape[1]):
            xk = x.data[:, k]
            yk = y.data[:, k]
            x_norms += xk * xk
            y_norms += yk * yk
            cross += np.multiply.outer(xk, yk)
        raw = x_norms[:, None] + y_norms[None, :] - 2.0 * cross
    mask = Tensor._wrap((raw > 0).astype(np.float64))

    def vjp(g):
        gm = mul(g, mask)
        gx = mul(sub(mul(sum(gm, axis=1, keepdims=True), x), matmul(gm, y)), 2.0)
        gy = mul(
            sub(
                mul(transpose(sum(gm, axis=0, keepdims=True)), y),
                matmul(transpose(gm), x),
            ),
            2.0,
        )
        return gx, gy
    return _apply("pairwise_sqdist", (x, y), np.maximum(raw, 0.0), vjp)


# composites

def sub(a: TensorLike, b: TensorLike) -> Tensor:
    return add(a, neg(b))


def div(a: TensorLike, b: TensorLike) -> Tensor:
    if isinstance(b, Tensor):
        return mul(a, power(b, -1.0))
    return mul(a, 1.0 / float(b))


def sqrt(a: TensorLike) -> Tensor:
    return power(a, 0.5)


def minimum(a: TensorLike, c: float) -> Tensor:
    return neg(maximum(neg(a), -float(c)))


def relu(a: TensorLike) -> Tensor:
    return maximum(a, 0.0)


def elu(a: TensorLike) -> Tensor:
    # exp(-relu(-a)) - 1 equals exp(a) - 1 for a < 0 and vanishes otherwise
    return add(add(relu(a), exp(neg(relu(neg(a))))), -1.0)


# optimisation

@dataclass
class OptimState:
    r"""
    RMSProp state for one parameter group.

    Args:
        learning_rate (float): Step size :math:`\alpha`.
        decay (float): Running-average decay :math:`\rho`.
        eps (float): Denominator offset.
    """
    learning_rate: float = 5e-5
    decay: float = 0.9
    eps: float = 1e-8
    accumulators: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ContractError("Learning rate must be non-negative.")
        if not 0.0 <= self.decay < 1.0:
            raise ContractError("RMSProp decay must lie in [0, 1).")
        if self.eps <= 0:
            raise ContractError("RMSProp eps must be positive.")

    def reset(self):
        self.accumulators = []


def rmsprop_step(
    params: Sequence[Tensor],
    grads: Sequence[TensorLike],
    state: OptimState,
    sign: int = -1,
) -> Sequence[Tensor]:
    r"""
    One RMSProp update, in place:
    :math:`s \leftarrow \rho s + (1-\rho) g^2`,
    :math:`p \leftarrow p + \mathrm{sign}\cdot\alpha g / (\sqrt{s} + \epsilon)`.

    Args:
        params (list): Parameters to update.
        grads (list): Gradients aligned with `params`.
        state (:class:`OptimState`): Accumulators; zero-initialised on the
            first call.
        sign (int): ``+1`` for ascent (critic), ``-1`` for descent.

    Returns:
        list: `params`, updated.
    """
    if sign not in (1, -1):
        raise ContractError(f"sign must be +1 or -1, got {sign}.")
    if len(params) != len(grads):
        raise ContractError(
            f"Got {len(params)} parameters but {len(grads)} gradients."
        )
    if not state.accumulators:
        state.accumulators = [np.zeros_like(p.data) for p in params]
    if len(state.accumulators) != len(params):
        raise DimensionError(
            "Optimizer state was built for a different parameter list."
        )
    rho = state.decay
    for param, grad, acc in zip(params, grads, state.accumulators):
        g = grad.data if isinstance(grad, Tensor) else np.asarray(grad, float)
        if g.shape != param.shape or acc.shape != param.shape:
            raise DimensionError(
                f"Gradient shape {g.shape} does not match parameter shape "
                f"{param.shape}."
            )
        acc *= rho
        acc += (1.0 - rho) * g * g
        param.data += sign * state.learning_rate * g / (np.sqrt(acc) + state.eps)
    return params


def clip_params(params: Sequence[Tensor], c: float) -> Sequence[Tensor]:
    r"""
    Clips every entry of every parameter into :math:`[-c, c]`, in place.
    """
    if not c > 0:
        raise ContractError(f"Clipping bound must be positive, got {c}.")
    for param in params:
        np.clip(param.data, -c, c, out=param.data)
    return params
