r"""
Multilayer perceptrons for the generator :math:`g_\theta`, the encoder
:math:`f_{\phi_e}` and the decoder :math:`f_{\phi_d}`, plus the critic
regularizers and checkpoint storage.
"""
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from mmdforge.errors import CheckpointError, ContractError, DimensionError
from mmdforge.kernels import (
    Composed,
    KernelSpec,
    gram_tensor,
    is_relative,
    pooled_spread,
)
from mmdforge.tensor_engine import (
    OptimState,
    Tape,
    Tensor,
    add,
    as_tensor,
    elu,
    matmul,
    mean,
    relu,
    sqrt,
    square,
    sub,
    sum,
    tanh,
)


logger = logging.getLogger(__name__)

ACTIVATIONS = {"relu": relu, "tanh": tanh, "elu": elu}

NOISE_CODES = {"standard_normal": 0, "uniform": 1}

CHECKPOINT_MAGIC = b"MMDFORGE"
CHECKPOINT_VERSION = 1


@dataclass
class MlpConfig(object):
    r"""
    Layer widths from input to output and the hidden activation. The final
    layer is always affine.

    Args:
        widths (tuple): ``(in, hidden..., out)``; at least two entries.
        activation (str): ``"relu"``, ``"tanh"`` or ``"elu"``.
    """
    widths: Tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        self.widths = tuple(int(width) for width in self.widths)
        if len(self.widths) < 2:
            raise ContractError(
                f"An MLP needs at least one layer, got widths {self.widths}."
            )
        if not all(width >= 1 for width in self.widths):
            raise ContractError(f"All widths must be >= 1, got {self.widths}.")
        if self.activation not in ACTIVATIONS:
            raise ContractError(
                f"Unknown activation '{self.activation}', expected one of "
                f"{sorted(ACTIVATIONS)}."
            )

    @property
    def num_layers(self) -> int:
        return len(self.widths) - 1


class Mlp(object):
    r"""
    Affine layers ``h @ W + b`` with the configured activation between
    them. Weights are stored ``(fan_in, fan_out)``.

    Args:
        config (:class:`MlpConfig`): Architecture.
        rng (:class:`numpy.random.Generator`, optional): Source for the
            uniform fan-based initialisation. Biases start at zero.
        arrays (list, optional): Explicit ``[W0, b0, W1, b1, ...]`` buffers
            used instead of random initialisation.
    """
    def __init__(self, config: MlpConfig, rng=None, arrays=None):
        self.config = config
        self.weights: List[Tensor] = []
        self.biases: List[Tensor] = []
        if arrays is not None:
            self._set_arrays(arrays)
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        for layer, (fan_in, fan_out) in enumerate(
            zip(config.widths[:-1], config.widths[1:])
        ):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(Tensor(
                rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                requires_grad=True,
                name=f"W{layer}",
            ))
            self.biases.append(
                Tensor(np.zeros(fan_out), requires_grad=True, name=f"b{layer}")
            )

    def _set_arrays(self, arrays):
        arrays = list(arrays)
        if len(arrays) != 2 * self.config.num_layers:
            raise DimensionError(
                f"Expected {2 * self.config.num_layers} parameter arrays, got "
                f"{len(arrays)}."
            )
        for layer, (fan_in, fan_out) in enumerate(
            zip(self.config.widths[:-1], self.config.widths[1:])
        ):
            weight = np.array(arrays[2 * layer], dtype=np.float64)
            bias = np.array(arrays[2 * layer + 1], dtype=np.float64)
            if weight.shape != (fan_in, fan_out) or bias.shape != (fan_out,):
                raise DimensionError(
                    f"Layer {layer} expects weight {(fan_in, fan_out)} and bias "
                    f"{(fan_out,)}, got {weight.shape} and {bias.shape}."
                )
            self.weights.append(
                Tensor(weight, requires_grad=True, name=f"W{layer}")
            )
            self.biases.append(Tensor(bias, requires_grad=True, name=f"b{layer}"))

    @property
    def in_dim(self) -> int:
        return self.config.widths[0]

    @property
    def out_dim(self) -> int:
        return self.config.widths[-1]

    def parameters(self) -> List[Tensor]:
        r"""
        Parameters in declaration order ``[W0, b0, W1, b1, ...]``.
        """
        params = []
        for weight, bias in zip(self.weights, self.biases):
            params.extend([weight, bias])
        return params

    def arrays(self) -> List[np.ndarray]:
        return [param.data.copy() for param in self.parameters()]

    def __call__(self, batch) -> Tensor:
        batch = as_tensor(batch)
        if batch.ndim != 2 or batch.shape[1] != self.in_dim:
            raise DimensionError(
                f"Network expects (B, {self.in_dim}) input, got {batch.shape}."
            )
        activation = ACTIVATIONS[self.config.activation]
        hidden = batch
        last = len(self.weights) - 1
        for layer, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            hidden = add(matmul(hidden, weight), bias)
            if layer != last:
                hidden = activation(hidden)
        return hidden

    def copy(self) -> "Mlp":
        return Mlp(self.config, arrays=self.arrays())

    def flipped(self) -> "Mlp":
        r"""
        Copy with the final affine layer negated, so the copy computes
        :math:`-f(x)`.
        """
        arrays = self.arrays()
        arrays[-2] = -arrays[-2]
        arrays[-1] = -arrays[-1]
        return Mlp(self.config, arrays=arrays)

    def __repr__(self):
        return f"Mlp(widths={self.config.widths}, activation={self.config.activation})"


def forward(net: Mlp, batch) -> Tensor:
    r"""
    Applies `net` row-wise to a ``(B, in)`` batch.
    """
    return net(batch)


@dataclass
class ModelBundle(object):
    r"""
    Generator, encoder and decoder of one training run with their RMSProp
    states.

    Args:
        generator (:class:`Mlp`): :math:`d_z \to d`.
        encoder (:class:`Mlp`): :math:`d \to h`.
        decoder (:class:`Mlp`): :math:`h \to d`.
        noise_family (str): Family of :math:`P_Z`.
        gen_state (:class:`OptimState`): Optimizer state for :math:`\theta`.
        critic_state (:class:`OptimState`): Optimizer state for
            :math:`\phi = \{\phi_e, \phi_d\}`.
    """
    generator: Mlp
    encoder: Mlp
    decoder: Mlp
    noise_family: str = "standard_normal"
    gen_state: OptimState = field(default_factory=OptimState)
    critic_state: OptimState = field(default_factory=OptimState)

    def __post_init__(self):
        if self.encoder.in_dim != self.generator.out_dim:
            raise ContractError(
                f"Encoder input width {self.encoder.in_dim} differs from the "
                f"generator output width {self.generator.out_dim}."
            )
        if self.decoder.in_dim != self.encoder.out_dim:
            raise ContractError(
                f"Decoder input width {self.decoder.in_dim} differs from the "
                f"code width {self.encoder.out_dim}."
            )
        if self.decoder.out_dim != self.generator.out_dim:
            raise ContractError(
                f"Decoder output width {self.decoder.out_dim} differs from the "
                f"data width {self.generator.out_dim}."
            )
        if self.noise_family not in NOISE_CODES:
            raise ContractError(f"Unknown noise family '{self.noise_family}'.")

    @property
    def data_dim(self) -> int:
        return self.generator.out_dim

    @property
    def code_dim(self) -> int:
        return self.encoder.out_dim

    @property
    def noise_dim(self) -> int:
        return self.generator.in_dim

    def critic_parameters(self) -> List[Tensor]:
        return self.encoder.parameters() + self.decoder.parameters()


def default_configs(
    data_dim: int,
    noise_dim: int = 4,
    hidden: int = 64,
    code_dim: int = 16,
    depth: int = 2,
    activation: str = "relu",
):
    r"""
    Generator, encoder and decoder configs with `depth` hidden layers of
    width `hidden`; the decoder mirrors the encoder.

    Returns:
        tuple: ``(gen_cfg, enc_cfg, dec_cfg)``
    """
    hiddens = (hidden,) * depth
    return (
        MlpConfig((noise_dim,) + hiddens + (data_dim,), activation),
        MlpConfig((data_dim,) + hiddens + (code_dim,), activation),
        MlpConfig((code_dim,) + hiddens + (data_dim,), activation),
    )


@dataclass
class ModelSpec(object):
    r"""
    Architecture knobs of the ``[model]`` config section. See
    :func:`default_configs`.
    """
    hidden: int = 64
    code_dim: int = 16
    depth: int = 2
    activation: str = "relu"

    def __post_init__(self):
        if self.hidden < 1 or self.code_dim < 1 or self.depth < 0:
            raise ContractError(
                "hidden and code_dim must be >= 1 and depth >= 0."
            )
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"Unknown activation '{self.activation}'.")

    def configs(self, data_dim: int, noise_dim: int):
        return default_configs(
            data_dim,
            noise_dim=noise_dim,
            hidden=self.hidden,
            code_dim=self.code_dim,
            depth=self.depth,
            activation=self.activation,
        )


def init_model(
    gen_cfg: MlpConfig,
    enc_cfg: MlpConfig,
    dec_cfg: MlpConfig,
    seed: int = 0,
    noise_family: str = "standard_normal",
    learning_rate: float = 5e-5,
) -> ModelBundle:
    r"""
    Builds a :class:`ModelBundle` with independent initialisation streams
    per network derived from `seed`.

    Raises:
        :class:`mmdforge.errors.ContractError`: If the dimension chain
            ``noise -> data -> code -> data`` is inconsistent.
    """
    gen_seq, enc_seq, dec_seq = np.random.SeedSequence(seed).spawn(3)
    return ModelBundle(
        generator=Mlp(gen_cfg, np.random.default_rng(gen_seq)),
        encoder=Mlp(enc_cfg, np.random.default_rng(enc_seq)),
        decoder=Mlp(dec_cfg, np.random.default_rng(dec_seq)),
        noise_family=noise_family,
        gen_state=OptimState(learning_rate=learning_rate),
        critic_state=OptimState(learning_rate=learning_rate),
    )


def _check_batches(x_real: Tensor, x_fake: Tensor):
    if x_real.shape != x_fake.shape:
        raise DimensionError(
            f"Real and fake batches must share a shape, got {x_real.shape} and "
            f"{x_fake.shape}."
        )


def gradient_penalty(
    encoder: Mlp,
    x_real,
    x_fake,
    kernel: KernelSpec,
    rng: Optional[np.random.Generator] = None,
    weights=None,
) -> Tensor:
    r"""
    Penalty on the gradient of the empirical witness
    :math:`w(t) = \frac{1}{B}\sum_i \tilde{k}(t, x_i) -
    \frac{1}{B}\sum_j \tilde{k}(t, g_j)` at random interpolates
    :math:`\tilde{x} = u x_{real} + (1 - u) x_{fake}`:

    .. math::
        \frac{1}{B}\sum_r \left(\|\nabla_{\tilde{x}_r} w\| - 1\right)^2

    The input gradient is taken with ``create_graph=True``, so the penalty
    stays differentiable in the encoder parameters.

    Args:
        encoder (:class:`Mlp`): Critic encoder.
        x_real (array): ``(B, d)`` real batch.
        x_fake (array): ``(B, d)`` generated batch (treated as constant).
        kernel: Inner kernel on codes; a :class:`Composed` kernel is
            unwrapped.
        rng (:class:`numpy.random.Generator`, optional): Source of the
            per-row mixing weights.
        weights (array, optional): Explicit ``(B,)`` mixing weights.
    """
    x_real = as_tensor(x_real).detach()
    x_fake = as_tensor(x_fake).detach()
    _check_batches(x_real, x_fake)
    if isinstance(kernel, Composed):
        kernel = kernel.inner
    if weights is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        weights = rng.uniform(0.0, 1.0, size=x_real.shape[0])
    weights = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    mixed = weights * x_real.data + (1.0 - weights) * x_fake.data
    interpolates = Tensor(mixed, requires_grad=True, name="interpolates")

    tape = Tape.current()
    if tape is None:
        with Tape() as local:
            return _penalty(encoder, interpolates, x_real, x_fake, kernel, local)
    return _penalty(encoder, interpolates, x_real, x_fake, kernel, tape)


def _penalty(encoder, interpolates, x_real, x_fake, kernel, tape):
    codes = encoder(interpolates)
    codes_real = encoder(x_real)
    codes_fake = encoder(x_fake)
    spread = None
    if is_relative(kernel):
        spread = pooled_spread(codes_real, codes_fake)
    witness = sub(
        mean(gram_tensor(codes, codes_real, kernel, spread), axis=1),
        mean(gram_tensor(codes, codes_fake, kernel, spread), axis=1),
    )
    grad, = tape.gradient(sum(witness), [interpolates], create_graph=True)
    norms = sqrt(add(sum(square(grad), axis=1), 1e-12))
    return mean(square(add(norms, -1.0)))


def reconstruction_loss(
    encoder: Mlp, decoder: Mlp, batch, codes=None
) -> Tensor:
    r"""
    Mean over rows of :math:`\|y - f_{\phi_d}(f_{\phi_e}(y))\|^2`. Pass
    `codes` when the encoder output of `batch` is already on the tape.
    """
    batch = as_tensor(batch)
    if batch.ndim != 2 or batch.shape[1] != encoder.in_dim:
        raise DimensionError(
            f"Autoencoder expects (B, {encoder.in_dim}) input, got {batch.shape}."
        )
    if codes is None:
        codes = encoder(batch)
    residual = sub(batch, decoder(codes))
    return mean(sum(square(residual), axis=1))


# checkpoints

def _pack_net(net: Mlp) -> bytes:
    activation = sorted(ACTIVATIONS).index(net.config.activation)
    widths = net.config.widths
    return struct.pack(f"<II{len(widths)}I", activation, len(widths), *widths)


def save_checkpoint(bundle: ModelBundle, path) -> None:
    r"""
    Writes `bundle` as: magic, format version, data/code/noise widths,
    noise family, one layer table per network, then every parameter as raw
    little-endian float64 in declaration order (generator, encoder,
    decoder). The file is replaced atomically.
    """
    header = bytearray(CHECKPOINT_MAGIC)
    header += struct.pack(
        "<IIIII",
        CHECKPOINT_VERSION,
        bundle.data_dim,
        bundle.code_dim,
        bundle.noise_dim,
        NOISE_CODES[bundle.noise_family],
    )
    nets = (bundle.generator, bundle.encoder, bundle.decoder)
    for net in nets:
        header += _pack_net(net)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as handle:
        handle.write(bytes(header))
        for net in nets:
            for param in net.parameters():
                handle.write(param.data.astype("<f8").tobytes())
    os.replace(tmp_path, path)
    logger.debug("Wrote checkpoint %s", path)


class _Reader(object):
    def __init__(self, payload, path):
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, size):
        if self.offset + size > len(self.payload):
            raise CheckpointError(f"Checkpoint {self.path} is truncated.")
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_net_config(reader) -> MlpConfig:
    activation, count = reader.unpack("<II")
    names = sorted(ACTIVATIONS)
    if activation >= len(names) or count < 2:
        raise CheckpointError(f"Checkpoint {reader.path} has a bad layer table.")
    widths = reader.unpack(f"<{count}I")
    return MlpConfig(widths, names[activation])


def _read_net(reader, config) -> Mlp:
    arrays = []
    for fan_in, fan_out in zip(config.widths[:-1], config.widths[1:]):
        for shape in ((fan_in, fan_out), (fan_out,)):
            count = int(np.prod(shape))
            buffer = reader.take(8 * count)
            arrays.append(np.frombuffer(buffer, dtype="<f8").reshape(shape))
    return Mlp(config, arrays=arrays)


def load_checkpoint(path) -> ModelBundle:
    r"""
    Reads a checkpoint written by :func:`save_checkpoint`. Optimizer states
    start fresh.

    Raises:
        :class:`mmdforge.errors.CheckpointError`: On a wrong magic string,
            an unsupported version or a truncated file.
    """
    with open(path, "rb") as handle:
        payload = handle.read()
    reader = _Reader(payload, path)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not an mmdforge checkpoint.")
    version, data_dim, code_dim, noise_dim, noise_code = reader.unpack("<IIIII")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Checkpoint {path} has format version {version}, expected "
            f"{CHECKPOINT_VERSION}."
        )
    families = {code: name for name, code in NOISE_CODES.items()}
    if noise_code not in families:
        raise CheckpointError(f"Checkpoint {path} names an unknown noise family.")
    configs = [_read_net_config(reader) for _ in range(3)]
    nets = [_read_net(reader, config) for config in configs]
    if reader.offset != len(payload):
        raise CheckpointError(f"Checkpoint {path} has trailing bytes.")
    try:
        bundle = ModelBundle(*nets, noise_family=families[noise_code])
    except ContractError as error:
        raise CheckpointError(f"Checkpoint {path} is inconsistent: {error}")
    if (bundle.data_dim, bundle.code_dim, bundle.noise_dim) != (
        data_dim, code_dim, noise_dim
    ):
        raise CheckpointError(
            f"Checkpoint {path} header does not match its layer tables."
        )
    return bundle
