r"""
Run configuration files.

A run is described by INI-style text with the sections ``[data]``,
``[noise]``, ``[model]``, ``[train]``, ``[kernel]`` and ``[eval]``. Every
key is optional; omitted keys take the library defaults. Unknown sections
or keys are rejected with the file, line and key.

.. code-block:: ini

    [data]
    source = gaussian_ring
    modes = 8

    [train]
    mode = mmdgan
    iterations = 20000

    [kernel]
    kind = mixture
    bandwidths = 1.0, 2.0, 4.0, 8.0, 16.0
"""
import configparser
import dataclasses
import re
import typing
import warnings
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

from mmdforge.dataset import DatasetSpec, NoiseSpec
from mmdforge.errors import ConfigError, MmdForgeError
from mmdforge.evaluation import EvalSpec
from mmdforge.kernels import DEFAULT_BANDWIDTHS, KernelSpec, kernel_from_dict
from mmdforge.networks import ModelSpec
from mmdforge.training import LipschitzSpec, TrainConfig


SECTIONS = ("data", "noise", "model", "train", "kernel", "eval")

# [train] keys that fill the nested LipschitzSpec
LIPSCHITZ_KEYS = {"lipschitz": "kind", "clip": "clip", "gp_weight": "gp_weight"}

GMMN_IGNORED = ("n_critic", "ae_weight", "fsr_weight")


@dataclass
class KernelSection(object):
    r"""
    The ``[kernel]`` section. Only the keys relevant to `kind` are used when
    the kernel is built.
    """
    kind: str = "mixture"
    bandwidth: float = 1.0
    bandwidths: Tuple[float, ...] = DEFAULT_BANDWIDTHS
    form: str = "2sigma2"
    relative: bool = True
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        self.bandwidths = tuple(float(v) for v in self.bandwidths)
        self.build()

    def build(self) -> KernelSpec:
        return kernel_from_dict(dataclasses.asdict(self))


@dataclass
class RunConfig(object):
    r"""
    Fully resolved run configuration.
    """
    data: DatasetSpec = field(default_factory=DatasetSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    kernel: KernelSection = field(default_factory=KernelSection)
    eval: EvalSpec = field(default_factory=EvalSpec)

    def kernel_spec(self) -> KernelSpec:
        return self.kernel.build()

    def train_config(self) -> TrainConfig:
        r"""
        The training config with the ``[kernel]`` section applied.
        """
        return dataclasses.replace(self.train, kernel=self.kernel_spec())


def _section_fields(section) -> Dict[str, dataclasses.Field]:
    cls = {
        "data": DatasetSpec,
        "noise": NoiseSpec,
        "model": ModelSpec,
        "train": TrainConfig,
        "kernel": KernelSection,
        "eval": EvalSpec,
    }[section]
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if section == "train":
        del fields["kernel"]
        del fields["lipschitz"]
        for key, name in LIPSCHITZ_KEYS.items():
            fields[key] = next(
                f for f in dataclasses.fields(LipschitzSpec) if f.name == name
            )
    return fields


def _locate(text, section, key=None) -> Optional[int]:
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        header = re.match(r"^\s*\[([^\]]+)\]", line)
        if header:
            current = header.group(1).strip()
            if key is None and current == section:
                return lineno
            continue
        entry = re.match(r"^\s*([^=:\s]+)\s*[=:]", line)
        if entry and current == section and entry.group(1).lower() == key:
            return lineno
    return None


def _convert(text: str, kind):
    if kind is bool:
        lowered = text.strip().lower()
        if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
            raise ValueError(f"not a boolean: '{text}'")
        return configparser.ConfigParser.BOOLEAN_STATES[lowered]
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is str:
        return text.strip()
    if kind == Optional[str]:
        text = text.strip()
        return None if text in ("", "none", "None") else text
    if typing.get_origin(kind) is tuple:
        item = typing.get_args(kind)[0]
        parts = [part.strip() for part in text.split(",")]
        return tuple(_convert(part, item) for part in parts if part)
    raise ValueError(f"unsupported field type {kind}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(item) for item in value)
    return str(value)


def _apply_overrides(parser, overrides: Iterable[str]):
    for override in overrides:
        target, sep, value = override.partition("=")
        section, dot, key = target.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(
                f"Override '{override}' is not of the form section.key=value."
            )
        key = key.strip().lower()
        if section not in SECTIONS:
            raise ConfigError(f"Unknown section '{section}' in override.",
                              key=target.strip())
        if key not in _section_fields(section):
            raise ConfigError("Unknown key in override.", key=f"{section}.{key}")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value.strip())


def parse_config(text: str, path: str = "<config>", overrides=()) -> RunConfig:
    r"""
    Parses run-config text.

    Args:
        text (str): INI text.
        path (str): Name used in error messages.
        overrides (list): ``section.key=value`` strings applied after the
            file.

    Raises:
        :class:`mmdforge.errors.ConfigError`: On malformed text, unknown
            sections or keys, unconvertible values or invalid settings.
    """
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as error:
        raise ConfigError(
            error.message if hasattr(error, "message") else str(error),
            path=path,
            line=getattr(error, "lineno", None),
        )
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(
                f"Unknown section [{section}], expected one of {list(SECTIONS)}.",
                path=path, line=_locate(text, section), key=section,
            )
    explicit = {
        section: set(parser.options(section)) for section in parser.sections()
    }
    _apply_overrides(parser, overrides)

    values = {}
    for section in SECTIONS:
        fields = _section_fields(section)
        values[section] = {}
        if not parser.has_section(section):
            continue
        for key in parser.options(section):
            where = dict(path=path, line=_locate(text, section, key),
                         key=f"{section}.{key}")
            if key not in fields:
                raise ConfigError("Unknown key.", **where)
            try:
                values[section][key] = _convert(
                    parser.get(section, key), fields[key].type
                )
            except ValueError as error:
                raise ConfigError(f"Bad value: {error}.", **where)

    try:
        train_values = dict(values["train"])
        lipschitz = {
            name: train_values.pop(key)
            for key, name in LIPSCHITZ_KEYS.items() if key in train_values
        }
        kernel = KernelSection(**values["kernel"])
        config = RunConfig(
            data=DatasetSpec(**values["data"]),
            noise=NoiseSpec(**values["noise"]),
            model=ModelSpec(**values["model"]),
            train=TrainConfig(
                kernel=kernel.build(),
                lipschitz=LipschitzSpec(**lipschitz),
                **train_values,
            ),
            kernel=kernel,
            eval=EvalSpec(**values["eval"]),
        )
    except MmdForgeError as error:
        if isinstance(error, ConfigError):
            raise
        raise ConfigError(str(error), path=path)

    if config.train.mode in ("gmmn_d", "gmmn_c"):
        defaults = TrainConfig()
        ignored = sorted(
            key for key in GMMN_IGNORED
            if key in explicit.get("train", ())
            and getattr(config.train, key) != getattr(defaults, key)
        )
        if ignored:
            warnings.warn(
                f"Mode '{config.train.mode}' has no critic; ignoring "
                f"{', '.join(ignored)}."
            )
    return config


def load_config(path, overrides=()) -> RunConfig:
    r"""
    Reads and parses a run-config file.
    """
    with open(path, "r") as handle:
        text = handle.read()
    return parse_config(text, path=str(path), overrides=overrides)


def dump_config(config: RunConfig) -> str:
    r"""
    Serializes every resolved field; :func:`parse_config` of the output
    reproduces `config`.
    """
    sections = {
        "data": dataclasses.asdict(config.data),
        "noise": dataclasses.asdict(config.noise),
        "model": dataclasses.asdict(config.model),
        "train": {
            f.name: getattr(config.train, f.name)
            for f in dataclasses.fields(config.train)
            if f.name not in ("kernel", "lipschitz")
        },
        "kernel": dataclasses.asdict(config.kernel),
        "eval": dataclasses.asdict(config.eval),
    }
    for key, name in LIPSCHITZ_KEYS.items():
        sections["train"][key] = getattr(config.train.lipschitz, name)
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for key, value in sections[section].items():
            lines.append(f"{key} = {_format(value)}")
        lines.append("")
    return "\n".join(lines)
