r"""
Synthetic distributions, the base noise source and CSV-backed datasets.

Samplers follow the on-the-fly :class:`Generator` pattern: each source is
a generator object, and multi-modal sources such as the Gaussian ring are an
:class:`EnsembleGenerator` over per-mode Gaussian generators.
"""
import csv
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from sklearn.datasets import make_moons, make_swiss_roll

from mmdforge.errors import ContractError, DimensionError, ParseError


SOURCES = (
    "gaussian_ring",
    "gaussian_grid",
    "two_moons",
    "swiss_roll_2d",
    "gaussian",
    "symmetric_mixture",
    "file",
)

NOISE_FAMILIES = ("standard_normal", "uniform")


@dataclass
class DatasetSpec(object):
    r"""
    Description of a data source.

    Args:
        source (str): One of :data:`SOURCES`.
        modes (int): Number of ring modes (``gaussian_ring``).
        radius (float): Ring radius (``gaussian_ring``).
        sigma (float): Isotropic standard deviation around each mode.
        rows (int): Grid rows (``gaussian_grid``).
        cols (int): Grid columns (``gaussian_grid``).
        spacing (float): Distance between neighbouring grid modes.
        noise (float): Noise level of ``two_moons`` / ``swiss_roll_2d``.
        mean (tuple): Mean of the ``gaussian`` source; its length is the
            dimension.
        offset (float): Half distance between the two components of
            ``symmetric_mixture`` along the first axis.
        path (str, optional): CSV file for the ``file`` source.
        dim (int): Data dimension.
        n_samples (int): Rows materialised by :func:`load` for synthetic
            sources.
        split (float): Training fraction used by :func:`split`.
        seed (int): Seed for materialisation and splitting.
    """
    source: str = "gaussian_ring"
    modes: int = 8
    radius: float = 2.0
    sigma: float = 0.02
    rows: int = 5
    cols: int = 5
    spacing: float = 2.0
    noise: float = 0.05
    mean: Tuple[float, ...] = (0.0, 0.0)
    offset: float = 1.0
    path: Optional[str] = None
    dim: int = 2
    n_samples: int = 10000
    split: float = 0.9
    seed: int = 0

    def __post_init__(self):
        self.mean = tuple(float(v) for v in self.mean)
        if self.source not in SOURCES:
            raise ContractError(
                f"Unknown data source '{self.source}', expected one of "
                f"{list(SOURCES)}."
            )
        if self.dim < 1:
            raise ContractError("Data dimension must be at least 1.")
        if not 0.0 < self.split < 1.0:
            raise ContractError(
                f"Split fraction must lie in (0, 1), got {self.split}."
            )
        if not self.sigma > 0:
            raise ContractError(f"sigma must be positive, got {self.sigma}.")
        if self.n_samples < 1:
            raise ContractError("n_samples must be at least 1.")
        if self.source == "file" and not self.path:
            raise ContractError("The file source needs a path.")
        if self.source == "gaussian" and len(self.mean) != self.dim:
            raise ContractError(
                f"Gaussian mean has {len(self.mean)} entries but dim is "
                f"{self.dim}."
            )
        if self.source in ("gaussian_ring", "gaussian_grid", "two_moons",
                           "swiss_roll_2d") and self.dim != 2:
            raise ContractError(f"Source '{self.source}' is two-dimensional.")
        if self.source == "gaussian_ring" and self.modes < 1:
            raise ContractError("A ring needs at least one mode.")
        if self.source == "gaussian_grid" and (self.rows < 1 or self.cols < 1):
            raise ContractError("A grid needs at least one row and column.")


@dataclass
class NoiseSpec(object):
    r"""
    Base distribution :math:`P_Z` of the generator input.

    Args:
        family (str): ``"standard_normal"`` or ``"uniform"`` on
            :math:`(-1, 1)`.
        dim (int): Noise dimension :math:`d_z`.
    """
    family: str = "standard_normal"
    dim: int = 4

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ContractError(
                f"Unknown noise family '{self.family}', expected one of "
                f"{list(NOISE_FAMILIES)}."
            )
        if self.dim < 1:
            raise ContractError("Noise dimension must be at least 1.")


class Generator(object):
    r"""
    Abstract sampler. Subclasses implement :meth:`generate`.

    Args:
        dim (int): Dimension of generated points.
    """
    def __init__(self, dim):
        self.dim = dim

    @property
    def centers(self) -> np.ndarray:
        r"""
        Mode centers, used by mode coverage. Empty for unimodal or
        continuous-manifold sources.
        """
        return np.zeros((0, self.dim))

    def generate(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        r"""
        Overwrite in subclass. Draws `batch_size` i.i.d. points.

        Returns:
            :class:`numpy.ndarray`: ``(batch_size, dim)`` matrix.
        """
        raise NotImplementedError


class GaussianGenerator(Generator):
    def __init__(self, mean, sigma):
        mean = np.asarray(mean, dtype=np.float64)
        super(GaussianGenerator, self).__init__(mean.shape[0])
        self.mean = mean
        self.sigma = float(sigma)

    @property
    def centers(self):
        return self.mean.reshape(1, -1)

    def generate(self, batch_size, rng):
        return self.mean + self.sigma * rng.standard_normal(
            (batch_size, self.dim)
        )


class EnsembleGenerator(Generator):
    def __init__(self, generators, gen_prob=None):
        r"""
        A generator that is an ensemble of many generators.

        Args:
            generators (List[:class:`Generator`]): Generators of equal
                dimension.
            gen_prob (array like): Probability of drawing from each
                generator. If it is `None`, generators are drawn uniformly.
        """
        dims = set(gen.dim for gen in generators)
        if len(dims) != 1:
            raise DimensionError("Ensemble members must share one dimension.")
        super(EnsembleGenerator, self).__init__(dims.pop())
        if gen_prob is None:
            self.gen_prob = np.ones(len(generators)) / len(generators)
        else:
            self.gen_prob = np.asarray(gen_prob, dtype=np.float64)
        self.generators = generators

    @property
    def centers(self):
        return np.vstack([gen.centers for gen in self.generators])

    def generate(self, batch_size, rng):
        choice = rng.choice(len(self.generators), size=batch_size, p=self.gen_prob)
        out = np.empty((batch_size, self.dim))
        for index, gen in enumerate(self.generators):
            rows = np.flatnonzero(choice == index)
            if rows.size:
                out[rows] = gen.generate(rows.size, rng)
        return out


class MoonsGenerator(Generator):
    def __init__(self, noise):
        super(MoonsGenerator, self).__init__(2)
        self.noise = noise

    def generate(self, batch_size, rng):
        points, _ = make_moons(
            n_samples=batch_size,
            noise=self.noise,
            random_state=int(rng.integers(2 ** 31 - 1)),
        )
        return points.astype(np.float64)


class SwissRollGenerator(Generator):
    def __init__(self, noise):
        super(SwissRollGenerator, self).__init__(2)
        self.noise = noise

    def generate(self, batch_size, rng):
        points, _ = make_swiss_roll(
            n_samples=batch_size,
            noise=self.noise,
            random_state=int(rng.integers(2 ** 31 - 1)),
        )
        # the roll lives in the x-z plane
        return points[:, [0, 2]].astype(np.float64)


class FileGenerator(Generator):
    def __init__(self, data):
        super(FileGenerator, self).__init__(data.shape[1])
        self.data = data

    def generate(self, batch_size, rng):
        if self.data.shape[0] == 0:
            raise ContractError("Cannot sample from an empty data file.")
        return self.data[rng.integers(self.data.shape[0], size=batch_size)]


def ring_centers(modes: int, radius: float) -> np.ndarray:
    angles = 2.0 * math.pi * np.arange(modes) / modes
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def grid_centers(rows: int, cols: int, spacing: float) -> np.ndarray:
    xs = (np.arange(cols) - (cols - 1) / 2.0) * spacing
    ys = (np.arange(rows) - (rows - 1) / 2.0) * spacing
    return np.array([(x, y) for y in ys for x in xs], dtype=np.float64)


def generator_from_spec(spec: DatasetSpec) -> Generator:
    r"""
    Builds the sampler described by `spec`.
    """
    if spec.source == "gaussian_ring":
        return EnsembleGenerator([
            GaussianGenerator(center, spec.sigma)
            for center in ring_centers(spec.modes, spec.radius)
        ])
    if spec.source == "gaussian_grid":
        return EnsembleGenerator([
            GaussianGenerator(center, spec.sigma)
            for center in grid_centers(spec.rows, spec.cols, spec.spacing)
        ])
    if spec.source == "two_moons":
        return MoonsGenerator(spec.noise)
    if spec.source == "swiss_roll_2d":
        return SwissRollGenerator(spec.noise)
    if spec.source == "gaussian":
        return GaussianGenerator(spec.mean, spec.sigma)
    if spec.source == "symmetric_mixture":
        axis = np.zeros(spec.dim)
        axis[0] = spec.offset
        return EnsembleGenerator([
            GaussianGenerator(-axis, spec.sigma),
            GaussianGenerator(axis, spec.sigma),
        ])
    data = load_csv(spec.path)
    if data.shape[1] != spec.dim:
        raise DimensionError(
            f"{spec.path} has {data.shape[1]} columns but dim is {spec.dim}."
        )
    return FileGenerator(data)


def sample(spec: DatasetSpec, batch_size: int, rng: np.random.Generator):
    r"""
    Draws `batch_size` i.i.d. points from the source of `spec`.

    Args:
        spec (:class:`DatasetSpec`): Source description.
        batch_size (int): Number of rows, at least 1.
        rng (:class:`numpy.random.Generator`): Owned random stream.

    Returns:
        :class:`numpy.ndarray`: ``(batch_size, d)`` matrix.
    """
    if batch_size < 1:
        raise ContractError(f"Batch size must be at least 1, got {batch_size}.")
    points = generator_from_spec(spec).generate(batch_size, rng)
    if not np.all(np.isfinite(points)):
        raise ContractError(f"Source '{spec.source}' produced non-finite rows.")
    return points


def centers(spec: DatasetSpec) -> np.ndarray:
    r"""
    Ground-truth mode centers of `spec` (empty for manifold sources).
    """
    if spec.source == "file":
        return np.zeros((0, spec.dim))
    return generator_from_spec(spec).centers


def sample_noise(spec: NoiseSpec, batch_size: int, rng: np.random.Generator):
    r"""
    Draws a ``(batch_size, d_z)`` noise batch from :math:`P_Z`.
    """
    if batch_size < 0:
        raise ContractError(f"Batch size must be non-negative, got {batch_size}.")
    if spec.family == "standard_normal":
        return rng.standard_normal((batch_size, spec.dim))
    return rng.uniform(-1.0, 1.0, size=(batch_size, spec.dim))


def load(spec: DatasetSpec) -> np.ndarray:
    r"""
    Materialises the full dataset: the CSV file, or `n_samples` draws
    from a synthetic source seeded by ``spec.seed``.
    """
    if spec.source == "file":
        data = load_csv(spec.path)
        if data.shape[1] != spec.dim:
            raise DimensionError(
                f"{spec.path} has {data.shape[1]} columns but dim is "
                f"{spec.dim}."
            )
        return data
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    return sample(spec, spec.n_samples, rng)


def split(spec: DatasetSpec, data: np.ndarray):
    r"""
    Seeded shuffle followed by a train / held-out partition.

    Returns:
        tuple: ``(train, held_out)``; disjoint and together exhaustive.
    """
    data = np.asarray(data, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    order = rng.permutation(data.shape[0])
    n_train = int(round(spec.split * data.shape[0]))
    return data[order[:n_train]], data[order[n_train:]]


def load_csv(path) -> np.ndarray:
    r"""
    Reads a headerless CSV of reals, one vector per row. Blank lines are
    skipped.

    Raises:
        :class:`mmdforge.errors.ParseError`: On a non-numeric field or a
            row whose width differs from the first row.
    """
    rows: List[List[float]] = []
    width = None
    with open(path, "r", newline="") as handle:
        for lineno, fields in enumerate(csv.reader(handle), start=1):
            if not fields or all(not item.strip() for item in fields):
                continue
            try:
                row = [float(item) for item in fields]
            except ValueError:
                raise ParseError(path, lineno, f"non-numeric field in {fields}")
            if not all(math.isfinite(value) for value in row):
                raise ParseError(path, lineno, "non-finite value")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(
                    path, lineno, f"expected {width} fields, found {len(row)}"
                )
            rows.append(row)
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def save_csv(path, data) -> None:
    r"""
    Writes a matrix as headerless CSV with round-trip exact precision.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    with open(path, "w", newline="") as handle:
        if data.shape[0]:
            np.savetxt(handle, data, delimiter=",", fmt="%.17g")
