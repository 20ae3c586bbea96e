r"""
Adversarial kernel learning: the alternating critic / generator loop and
its baselines.

Modes:

* ``mmdgan``: the critic ascends the MMD of the composition kernel
  :math:`k \circ f_{\phi_e}` minus an autoencoder penalty plus a hinge that
  keeps :math:`\mathbb{E} f(x) \succeq \mathbb{E} f(g(z))`; the generator
  descends the same MMD through the frozen encoder.
* ``wgan_linear``: same loop with a linear kernel on codes, so the loss is
  the squared gap between mean codes.
* ``gmmn_d``: no critic; the generator descends a fixed-kernel MMD in data
  space.
* ``gmmn_c``: no critic; an autoencoder is pretrained and frozen, then the
  generator descends the MMD in its code space.
"""
import csv
import json
import logging
import math
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from tqdm import tqdm

from mmdforge.dataset import (
    DatasetSpec,
    NoiseSpec,
    load,
    sample_noise,
    split,
)
from mmdforge.errors import ContractError, DivergenceError, NumericError
from mmdforge.kernels import (
    DEFAULT_BANDWIDTHS,
    Composed,
    KernelSpec,
    Linear,
    MixtureRBF,
    describe_kernel,
)
from mmdforge.mmd import (
    ESTIMATORS,
    mmd2,
    mmd2_biased,
    mmd2_pooled,
    mmd2_unbiased,
)
from mmdforge.networks import (
    Mlp,
    ModelBundle,
    ModelSpec,
    gradient_penalty,
    init_model,
    reconstruction_loss,
    save_checkpoint,
)
from mmdforge.tensor_engine import (
    OptimState,
    Tape,
    Tensor,
    add,
    clip_params,
    concat_rows,
    matmul,
    mean,
    minimum,
    mul,
    no_grad,
    rmsprop_step,
    square,
    sub,
    sum,
)


logger = logging.getLogger(__name__)

MODES = ("mmdgan", "gmmn_d", "gmmn_c", "wgan_linear")
CRITIC_MODES = ("mmdgan", "wgan_linear")
LIPSCHITZ_KINDS = ("clip", "gradient_penalty", "none")

TRACE_COLUMNS = (
    "iter",
    "mmd2_critic",
    "ae_loss",
    "fsr_penalty",
    "held_out_mmd2",
    "secs_per_iter",
)


@dataclass
class LipschitzSpec(object):
    r"""
    How the critic is kept bounded.

    Args:
        kind (str): ``"clip"`` (weights clipped to ``[-clip, clip]`` after
            each step), ``"gradient_penalty"`` (``gp_weight`` times the
            witness gradient penalty is subtracted from the objective) or
            ``"none"``.
        clip (float): Clipping bound :math:`c`.
        gp_weight (float): :math:`\lambda_{gp}`.
    """
    kind: str = "clip"
    clip: float = 0.01
    gp_weight: float = 10.0

    def __post_init__(self):
        if self.kind not in LIPSCHITZ_KINDS:
            raise ContractError(
                f"Unknown Lipschitz control '{self.kind}', expected one of "
                f"{list(LIPSCHITZ_KINDS)}."
            )
        if not self.clip > 0:
            raise ContractError(f"Clipping bound must be positive, got {self.clip}.")
        if self.gp_weight < 0:
            raise ContractError("Gradient penalty weight must be >= 0.")


@dataclass
class TrainConfig(object):
    r"""
    Hyper-parameters of one training run.

    Args:
        mode (str): One of :data:`MODES`.
        kernel: Kernel on codes (``mmdgan``, ``gmmn_c``) or on raw data
            (``gmmn_d``). ``wgan_linear`` always uses :class:`Linear`.
        lipschitz (:class:`LipschitzSpec`): Critic bound.
        ae_weight (float): :math:`\lambda_{ae}`.
        fsr_weight (float): :math:`\lambda_{fsr}`.
        batch_size (int): :math:`B`.
        n_critic (int): Critic updates per generator update.
        iterations (int): Generator updates.
        learning_rate (float): RMSProp step :math:`\alpha`.
        decay (float): RMSProp :math:`\rho`.
        eps (float): RMSProp :math:`\epsilon`.
        seed (int): Seed of initialisation, batches and evaluation noise.
        estimator (str): Estimator of the training loss.
        eval_every (int): Held-out evaluation cadence in generator updates.
        eval_size (int): Maximum number of held-out rows evaluated.
        pretrain_steps (int): Autoencoder steps before ``gmmn_c``.
        pretrain_learning_rate (float): RMSProp step of the pretraining.
        record_timing (bool): Store wall-clock seconds per iteration in the
            trace; when `False` the column is 0.0 and reruns are
            byte-identical.
        progress (bool): Show a progress bar.
    """
    mode: str = "mmdgan"
    kernel: KernelSpec = field(
        default_factory=lambda: MixtureRBF(relative=True)
    )
    lipschitz: LipschitzSpec = field(default_factory=LipschitzSpec)
    ae_weight: float = 8.0
    fsr_weight: float = 16.0
    batch_size: int = 64
    n_critic: int = 5
    iterations: int = 20000
    learning_rate: float = 5e-5
    decay: float = 0.9
    eps: float = 1e-8
    seed: int = 0
    estimator: str = "biased"
    eval_every: int = 100
    eval_size: int = 1000
    pretrain_steps: int = 500
    pretrain_learning_rate: float = 1e-3
    record_timing: bool = False
    progress: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(
                f"Unknown mode '{self.mode}', expected one of {list(MODES)}."
            )
        if isinstance(self.kernel, Composed):
            raise ContractError(
                "The training kernel is applied to codes; pass the inner kernel."
            )
        if self.batch_size < 2:
            raise ContractError(f"Batch size must be >= 2, got {self.batch_size}.")
        if self.n_critic < 1:
            raise ContractError(f"n_critic must be >= 1, got {self.n_critic}.")
        if not self.learning_rate > 0:
            raise ContractError("Learning rate must be positive.")
        if self.ae_weight < 0 or self.fsr_weight < 0:
            raise ContractError("Penalty weights must be non-negative.")
        if self.iterations < 0:
            raise ContractError("iterations must be non-negative.")
        if self.eval_every < 1 or self.eval_size < 2:
            raise ContractError("eval_every must be >= 1 and eval_size >= 2.")
        if self.estimator not in ESTIMATORS:
            raise ContractError(
                f"Unknown estimator '{self.estimator}', expected one of "
                f"{list(ESTIMATORS)}."
            )
        if self.pretrain_steps < 0 or not self.pretrain_learning_rate > 0:
            raise ContractError("Invalid autoencoder pretraining settings.")

    @property
    def has_critic(self) -> bool:
        return self.mode in CRITIC_MODES

    def code_kernel(self) -> KernelSpec:
        return Linear() if self.mode == "wgan_linear" else self.kernel

    def code_estimator(self) -> str:
        return "biased" if self.mode == "wgan_linear" else self.estimator


@dataclass
class CriticTerms(object):
    r"""
    Tensors making up the critic objective.
    """
    mmd2: Tensor
    ae_loss: Tensor
    fsr_penalty: Tensor
    gp: Optional[Tensor]
    objective: Tensor


@dataclass
class CriticLosses(object):
    r"""
    Scalar values logged by one critic step, measured before the update.
    """
    mmd2: float
    ae_loss: float
    fsr_penalty: float
    gp: float = 0.0
    objective: float = 0.0

    def to_dict(self):
        return {
            "mmd2": self.mmd2,
            "ae_loss": self.ae_loss,
            "fsr_penalty": self.fsr_penalty,
            "gp": self.gp,
            "objective": self.objective,
        }


@dataclass
class TraceRow(object):
    iteration: int
    mmd2_critic: float
    ae_loss: float
    fsr_penalty: float
    held_out_mmd2: float
    secs_per_iter: float

    def values(self):
        return (
            self.iteration,
            self.mmd2_critic,
            self.ae_loss,
            self.fsr_penalty,
            self.held_out_mmd2,
            self.secs_per_iter,
        )


@dataclass
class TrainTrace(object):
    r"""
    Logged rows of one run plus update counters.
    """
    rows: List[TraceRow] = field(default_factory=list)
    critic_updates: int = 0
    generator_updates: int = 0

    def __len__(self):
        return len(self.rows)

    def append(self, row: TraceRow):
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ContractError(
                f"Trace iterations must increase, got {row.iteration} after "
                f"{self.rows[-1].iteration}."
            )
        if not all(math.isfinite(value) for value in row.values()):
            raise DivergenceError(
                f"Non-finite trace row at iteration {row.iteration}.",
                snapshot=dict(zip(TRACE_COLUMNS, row.values())),
            )
        self.rows.append(row)

    @property
    def iterations(self) -> np.ndarray:
        return np.array([row.iteration for row in self.rows])

    @property
    def held_out(self) -> np.ndarray:
        return np.array([row.held_out_mmd2 for row in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(TRACE_COLUMNS)
            for row in self.rows:
                writer.writerow(
                    [row.iteration] + [repr(float(v)) for v in row.values()[1:]]
                )

    @classmethod
    def from_csv(cls, path) -> "TrainTrace":
        trace = cls()
        with open(path, "r", newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if tuple(header or ()) != TRACE_COLUMNS:
                raise ContractError(f"{path} is not a training trace.")
            for fields in reader:
                trace.append(TraceRow(int(fields[0]), *map(float, fields[1:])))
        return trace


@dataclass
class TrainResult(object):
    trace: TrainTrace
    bundle: ModelBundle


def _as_matrix(values) -> Tensor:
    data = values.data if isinstance(values, Tensor) else values
    return Tensor(np.asarray(data, dtype=np.float64))


def _mean_gap_weights(n: int, m: int) -> Tensor:
    # row vector turning pooled codes into mean(real) - mean(fake)
    weights = np.concatenate([np.full(n, 1.0 / n), np.full(m, -1.0 / m)])
    return Tensor(weights[None, :])


def critic_objective(
    encoder: Mlp,
    decoder: Mlp,
    x_real,
    x_fake,
    cfg: TrainConfig,
    rng: Optional[np.random.Generator] = None,
) -> CriticTerms:
    r"""
    Builds :math:`L_\phi = \hat{M}^2_{k \circ f}(X, G) - \lambda_{ae}
    \mathrm{recon}(X \cup G) + \lambda_{fsr} \sum_c \min(\bar{f}_c(X) -
    \bar{f}_c(G), 0)` and, in gradient-penalty mode, subtracts
    :math:`\lambda_{gp}` times the penalty. Recorded on the active tape.

    Both batches go through the encoder as one pooled batch whose codes
    feed all three terms.
    """
    x_real, x_fake = _as_matrix(x_real), _as_matrix(x_fake)
    n_real, n_fake = x_real.shape[0], x_fake.shape[0]
    pooled = concat_rows(x_real, x_fake)
    codes = encoder(pooled)
    mmd = mmd2_pooled(codes, n_real, cfg.code_kernel(), cfg.code_estimator())
    ae_loss = reconstruction_loss(encoder, decoder, pooled, codes=codes)
    gap = matmul(_mean_gap_weights(n_real, n_fake), codes)
    fsr_penalty = sum(minimum(gap, 0.0))

    objective = add(
        sub(mmd, mul(ae_loss, cfg.ae_weight)),
        mul(fsr_penalty, cfg.fsr_weight),
    )
    gp = None
    if cfg.lipschitz.kind == "gradient_penalty":
        gp = gradient_penalty(encoder, x_real, x_fake, cfg.code_kernel(), rng)
        objective = sub(objective, mul(gp, cfg.lipschitz.gp_weight))
    return CriticTerms(mmd, ae_loss, fsr_penalty, gp, objective)


def _losses(terms: CriticTerms) -> CriticLosses:
    return CriticLosses(
        mmd2=terms.mmd2.item(),
        ae_loss=terms.ae_loss.item(),
        fsr_penalty=terms.fsr_penalty.item(),
        gp=terms.gp.item() if terms.gp is not None else 0.0,
        objective=terms.objective.item(),
    )


@contextmanager
def _diverge_on_nan(step):
    try:
        yield
    except NumericError as error:
        raise DivergenceError(
            f"The {step} step produced a non-finite value: {error}",
            snapshot={"step": step, "primitive": error.primitive},
        )


def _check_finite(step, values):
    if not all(math.isfinite(value) for value in values.values()):
        raise DivergenceError(
            f"The {step} step produced a non-finite loss.",
            snapshot=dict(values, step=step),
        )


def critic_step(
    bundle: ModelBundle,
    x_real,
    noise,
    cfg: TrainConfig,
    rng: Optional[np.random.Generator] = None,
) -> CriticLosses:
    r"""
    One RMSProp ascent step of the critic :math:`\phi = \{\phi_e, \phi_d\}`
    with the generator frozen, followed by clipping in ``clip`` mode.

    Args:
        bundle (:class:`ModelBundle`): Model, updated in place.
        x_real (array): ``(B, d)`` real batch.
        noise (array): ``(B, d_z)`` noise batch.
        cfg (:class:`TrainConfig`): Mode ``mmdgan`` or ``wgan_linear``.
        rng (:class:`numpy.random.Generator`, optional): Interpolation
            weights of the gradient penalty.

    Returns:
        :class:`CriticLosses`: Terms of the objective before the update.

    Raises:
        :class:`mmdforge.errors.DivergenceError`: On a non-finite loss.
    """
    if not cfg.has_critic:
        raise ContractError(f"Mode '{cfg.mode}' has no critic.")
    params = bundle.critic_parameters()
    with _diverge_on_nan("critic"), no_grad():
        fake = bundle.generator(noise)
    with _diverge_on_nan("critic"), Tape() as tape:
        terms = critic_objective(
            bundle.encoder, bundle.decoder, x_real, fake, cfg, rng
        )
        grads = tape.gradient(terms.objective, params)
    losses = _losses(terms)
    _check_finite("critic", losses.to_dict())
    rmsprop_step(params, grads, bundle.critic_state, sign=1)
    if cfg.lipschitz.kind == "clip":
        clip_params(params, cfg.lipschitz.clip)
    return losses


def generator_loss(bundle: ModelBundle, x_real, noise, cfg: TrainConfig) -> Tensor:
    r"""
    Generator objective on the active tape; the autoencoder term never
    enters it.
    """
    x_real = _as_matrix(x_real)
    fake = bundle.generator(noise)
    if cfg.mode == "gmmn_d":
        return mmd2(x_real, fake, cfg.kernel, cfg.estimator)
    n_real = x_real.shape[0]
    codes = bundle.encoder(concat_rows(x_real, fake))
    if cfg.mode == "wgan_linear":
        gap = matmul(_mean_gap_weights(n_real, fake.shape[0]), codes)
        return sum(square(gap))
    return mmd2_pooled(codes, n_real, cfg.code_kernel(), cfg.estimator)


def generator_step(bundle: ModelBundle, x_real, noise, cfg: TrainConfig) -> float:
    r"""
    One RMSProp descent step of :math:`\theta` with the critic frozen.

    Returns:
        float: Generator loss before the update.
    """
    params = bundle.generator.parameters()
    with _diverge_on_nan("generator"), Tape() as tape:
        loss = generator_loss(bundle, x_real, noise, cfg)
        grads = tape.gradient(loss, params)
    value = loss.item()
    _check_finite("generator", {"loss": value})
    rmsprop_step(params, grads, bundle.gen_state, sign=-1)
    return value


def pretrain_autoencoder(
    bundle: ModelBundle,
    data,
    steps: int,
    batch_size: int,
    learning_rate: float = 1e-3,
    rng: Optional[np.random.Generator] = None,
) -> List[float]:
    r"""
    Fits encoder and decoder as a plain autoencoder on `data` by RMSProp
    descent on the reconstruction loss.

    Returns:
        list: Reconstruction loss before each step.
    """
    data = np.asarray(data, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(0)
    params = bundle.critic_parameters()
    state = OptimState(learning_rate=learning_rate)
    losses = []
    for _ in range(steps):
        batch = data[rng.integers(data.shape[0], size=batch_size)]
        with Tape() as tape:
            loss = reconstruction_loss(bundle.encoder, bundle.decoder, batch)
            grads = tape.gradient(loss, params)
        rmsprop_step(params, grads, state, sign=-1)
        losses.append(loss.item())
    if losses:
        logger.info(
            "Autoencoder pretraining: %d steps, loss %.6g -> %.6g",
            steps, losses[0], losses[-1],
        )
    return losses


def fit_critic(
    encoder: Mlp,
    x,
    y,
    kernel: KernelSpec,
    steps: int,
    learning_rate: float = 1e-3,
    clip: Optional[float] = 0.01,
    estimator: str = "biased",
) -> List[float]:
    r"""
    Maximises :math:`\hat{M}^2_{k \circ f}(X, Y)` over the encoder
    parameters on fixed samples, in place.

    Args:
        encoder (:class:`Mlp`): Encoder, updated in place.
        x (array): First sample.
        y (array): Second sample.
        kernel: Inner kernel on codes.
        steps (int): RMSProp ascent steps.
        learning_rate (float): RMSProp step.
        clip (float, optional): Clipping bound applied after each step;
            `None` disables clipping.
        estimator (str): Estimator being maximised.

    Returns:
        list: The estimate before each step, followed by the final value.
    """
    pooled = concat_rows(_as_matrix(x), _as_matrix(y))
    n = len(x)
    params = encoder.parameters()
    state = OptimState(learning_rate=learning_rate)
    history = []
    for _ in range(steps):
        with Tape() as tape:
            value = mmd2_pooled(encoder(pooled), n, kernel, estimator)
            grads = tape.gradient(value, params)
        history.append(value.item())
        rmsprop_step(params, grads, state, sign=1)
        if clip is not None:
            clip_params(params, clip)
    with no_grad():
        history.append(mmd2_pooled(encoder(pooled), n, kernel, estimator).item())
    return history


def feasible_set_penalty(encoder: Mlp, x, y) -> float:
    r"""
    Value of :math:`\sum_c \min(\bar{f}_c(X) - \bar{f}_c(Y), 0)`; zero
    whenever the mean code of `x` dominates that of `y` coordinate-wise.
    """
    with no_grad():
        gap = sub(mean(encoder(x), axis=0), mean(encoder(y), axis=0))
        return sum(minimum(gap, 0.0)).item()


def sign_flip_check(
    bundle: ModelBundle,
    x_real,
    noise,
    kernel: KernelSpec,
    estimator: str = "biased",
) -> float:
    r"""
    Absolute change of :math:`\hat{M}^2_{k \circ f}` when the encoder's
    final affine layer is negated.
    """
    if isinstance(kernel, Composed):
        kernel = kernel.inner
    with no_grad():
        fake = bundle.generator(noise).data
    estimate = mmd2_unbiased if estimator == "unbiased" else mmd2_biased
    original = estimate(x_real, fake, Composed(kernel, bundle.encoder)).estimate
    flipped = estimate(
        x_real, fake, Composed(kernel, bundle.encoder.flipped())
    ).estimate
    return abs(original - flipped)


def _measure(bundle, x_real, noise, cfg) -> CriticLosses:
    if not cfg.has_critic:
        with _diverge_on_nan("evaluation"), no_grad():
            loss = generator_loss(bundle, x_real, noise, cfg)
        return CriticLosses(loss.item(), 0.0, 0.0)
    with _diverge_on_nan("evaluation"), no_grad():
        fake = bundle.generator(noise).data
    # the gradient penalty needs a live tape for its input gradient
    with _diverge_on_nan("evaluation"), Tape():
        terms = critic_objective(
            bundle.encoder, bundle.decoder, x_real, fake, cfg,
            np.random.default_rng(0),
        )
    return _losses(terms)


def _write_divergence(out_dir, iteration, error: DivergenceError):
    payload = dict(error.snapshot)
    payload["iteration"] = iteration
    payload["message"] = str(error)
    with open(os.path.join(out_dir, "divergence.json"), "w") as handle:
        json.dump(payload, handle, sort_keys=True, indent=2, default=repr)


def build_bundle(
    cfg: TrainConfig,
    data_dim: int,
    noise: NoiseSpec,
    model: Optional[ModelSpec] = None,
) -> ModelBundle:
    model = model if model is not None else ModelSpec()
    bundle = init_model(
        *model.configs(data_dim, noise.dim),
        seed=cfg.seed,
        noise_family=noise.family,
        learning_rate=cfg.learning_rate,
    )
    for state in (bundle.gen_state, bundle.critic_state):
        state.decay = cfg.decay
        state.eps = cfg.eps
    return bundle


def train(
    cfg: TrainConfig,
    dataset: DatasetSpec,
    out_dir=None,
    noise: Optional[NoiseSpec] = None,
    model: Optional[ModelSpec] = None,
    bundle: Optional[ModelBundle] = None,
) -> TrainResult:
    r"""
    Runs the alternating loop for ``cfg.iterations`` generator updates.

    The held-out :math:`\hat{M}^2_u` between a fixed held-out subset and a
    fixed batch of generated samples, under a mixture RBF kernel on raw
    data, is logged at iteration 0 and every ``cfg.eval_every`` updates
    (and at the last one). When `out_dir` is given, ``trace.csv`` and
    ``checkpoint.bin`` are written there; the checkpoint is refreshed at
    every logged row so a diverged run keeps its last good model next to a
    ``divergence.json`` snapshot.

    Args:
        cfg (:class:`TrainConfig`): Hyper-parameters.
        dataset (:class:`DatasetSpec`): Training data; its held-out split
            feeds the evaluation.
        out_dir (str, optional): Output directory, created if missing.
        noise (:class:`NoiseSpec`, optional): Base distribution.
        model (:class:`ModelSpec`, optional): Architecture.
        bundle (:class:`ModelBundle`, optional): Start from this model
            instead of a fresh initialisation.

    Returns:
        :class:`TrainResult`

    Raises:
        :class:`mmdforge.errors.DivergenceError`: On a non-finite loss.
    """
    noise = noise if noise is not None else NoiseSpec()
    data = load(dataset)
    train_data, held_out = split(dataset, data)
    if train_data.shape[0] < 1 or held_out.shape[0] < 2:
        raise ContractError(
            "The split leaves too few rows for training and evaluation."
        )
    held_out = held_out[:cfg.eval_size]
    if bundle is None:
        bundle = build_bundle(cfg, data.shape[1], noise, model)
    if bundle.data_dim != data.shape[1] or bundle.noise_dim != noise.dim:
        raise ContractError("Model widths do not match the data or noise.")

    batch_seq, eval_seq, penalty_seq, pretrain_seq = np.random.SeedSequence(
        cfg.seed
    ).spawn(4)
    batch_rng = np.random.default_rng(batch_seq)
    penalty_rng = np.random.default_rng(penalty_seq)
    eval_rng = np.random.default_rng(eval_seq)
    eval_noise = sample_noise(noise, held_out.shape[0], eval_rng)
    reference_rows = train_data[
        eval_rng.integers(train_data.shape[0], size=cfg.batch_size)
    ]
    reference_noise = sample_noise(noise, cfg.batch_size, eval_rng)
    eval_kernel = MixtureRBF(DEFAULT_BANDWIDTHS)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    checkpoint_path = (
        os.path.join(out_dir, "checkpoint.bin") if out_dir is not None else None
    )

    if cfg.mode == "gmmn_c":
        pretrain_autoencoder(
            bundle,
            train_data,
            cfg.pretrain_steps,
            cfg.batch_size,
            cfg.pretrain_learning_rate,
            np.random.default_rng(pretrain_seq),
        )

    def draw():
        rows = train_data[batch_rng.integers(train_data.shape[0], size=cfg.batch_size)]
        return rows, sample_noise(noise, cfg.batch_size, batch_rng)

    def held_out_mmd2():
        with _diverge_on_nan("evaluation"), no_grad():
            fake = bundle.generator(eval_noise)
            return mmd2(held_out, fake, eval_kernel, "unbiased").item()

    def log_row(iteration, losses, secs):
        row = TraceRow(
            iteration,
            losses.mmd2,
            losses.ae_loss,
            losses.fsr_penalty,
            held_out_mmd2(),
            secs if cfg.record_timing else 0.0,
        )
        trace.append(row)
        if checkpoint_path is not None:
            save_checkpoint(bundle, checkpoint_path)
        logger.info(
            "iter %d: mmd2_critic=%.6g ae=%.6g fsr=%.6g held_out=%.6g",
            iteration, row.mmd2_critic, row.ae_loss, row.fsr_penalty,
            row.held_out_mmd2,
        )

    logger.info(
        "Training mode=%s kernel=%s B=%d n_critic=%d iterations=%d",
        cfg.mode, describe_kernel(cfg.code_kernel()), cfg.batch_size,
        cfg.n_critic, cfg.iterations,
    )
    trace = TrainTrace()
    iteration = 0
    try:
        log_row(0, _measure(bundle, reference_rows, reference_noise, cfg), 0.0)
        for iteration in tqdm(
            range(1, cfg.iterations + 1), disable=not cfg.progress, desc=cfg.mode
        ):
            start = time.perf_counter()
            losses = None
            if cfg.has_critic:
                for _ in range(cfg.n_critic):
                    rows, z = draw()
                    losses = critic_step(bundle, rows, z, cfg, penalty_rng)
                    trace.critic_updates += 1
            rows, z = draw()
            gen_loss = generator_step(bundle, rows, z, cfg)
            trace.generator_updates += 1
            secs = time.perf_counter() - start
            if iteration % cfg.eval_every == 0 or iteration == cfg.iterations:
                if losses is None:
                    losses = CriticLosses(gen_loss, 0.0, 0.0)
                log_row(iteration, losses, secs)
    except DivergenceError as error:
        logger.error("Diverged at iteration %d: %s", iteration, error)
        if out_dir is not None:
            _write_divergence(out_dir, iteration, error)
            trace.to_csv(os.path.join(out_dir, "trace.csv"))
        raise

    if out_dir is not None:
        trace.to_csv(os.path.join(out_dir, "trace.csv"))
        save_checkpoint(bundle, checkpoint_path)
    return TrainResult(trace=trace, bundle=bundle)
