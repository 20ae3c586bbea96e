r"""
Command-line front end.

.. code-block:: bash

    mmdforge train run.ini --out runs/ring
    mmdforge test x.csv y.csv --alpha 0.05
    mmdforge gen runs/ring/checkpoint.bin --count 1000 --out samples.csv
    mmdforge bench --batch-sizes 64,1024 --out bench/
    mmdforge experiment weakstar --config run.ini --out results/

Exit codes: 0 success (or fail-to-reject for ``test``), 1 unexpected error,
2 usage or config error, 3 ``test`` rejected :math:`H_0`, 4 training
diverged, 5 I/O or checkpoint error.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from mmdforge import __version__
from mmdforge.config import RunConfig, dump_config, load_config, parse_config
from mmdforge.dataset import NoiseSpec, load_csv, sample_noise, save_csv
from mmdforge.errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
    DivergenceError,
    InsufficientSampleError,
    MmdForgeError,
    ParseError,
)
from mmdforge.evaluation import (
    EXPERIMENTS,
    THREADS_ENV,
    coverage_experiment,
    json_default,
    power_experiment,
    power_pair,
    timing_bench,
    weakstar_experiment,
)
from mmdforge.kernels import kernel_from_dict
from mmdforge.mmd import permutation_test
from mmdforge.networks import load_checkpoint
from mmdforge.tensor_engine import no_grad
from mmdforge.training import train


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_REJECT = 3
EXIT_DIVERGED = 4
EXIT_IO = 5

CONFIG_ECHO = "config.echo"


def _floats(text):
    return tuple(float(part) for part in text.split(",") if part.strip())


def _ints(text):
    return tuple(int(part) for part in text.split(",") if part.strip())


def _words(text):
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config, overrides=args.overrides)
    return parse_config("", path="<defaults>", overrides=args.overrides)


def _echo(config: RunConfig, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, CONFIG_ECHO), "w") as handle:
        handle.write(dump_config(config))


def _print_json(payload):
    print(json.dumps(payload, sort_keys=True, default=json_default))


def cmd_train(args) -> int:
    config = load_config(args.config, overrides=args.overrides)
    train_cfg = config.train_config()
    if args.progress:
        train_cfg.progress = True
    _echo(config, args.out)
    result = train(train_cfg, config.data, args.out, noise=config.noise,
                   model=config.model)
    last = result.trace.rows[-1]
    _print_json({
        "out": args.out,
        "rows": len(result.trace),
        "critic_updates": result.trace.critic_updates,
        "generator_updates": result.trace.generator_updates,
        "held_out_mmd2": last.held_out_mmd2,
    })
    return EXIT_OK


def cmd_test(args) -> int:
    x = load_csv(args.x)
    y = load_csv(args.y)
    if x.shape[1] != y.shape[1]:
        raise DimensionError(
            f"{args.x} has {x.shape[1]} columns but {args.y} has {y.shape[1]}."
        )
    kernel = kernel_from_dict({
        "kind": args.kernel,
        "bandwidth": args.bandwidth,
        "bandwidths": args.bandwidths,
        "form": args.form,
        "degree": args.degree,
        "offset": args.offset,
        "relative": args.relative,
    })
    decision = permutation_test(
        x, y, kernel, alpha=args.alpha, n_permutations=args.permutations,
        seed=args.seed,
    )
    print(decision.to_json())
    return EXIT_REJECT if decision.reject else EXIT_OK


def _echo_gen(args, noise: NoiseSpec):
    out_dir = os.path.dirname(os.path.abspath(args.out))
    lines = [
        "[gen]",
        f"checkpoint = {os.path.abspath(args.checkpoint)}",
        f"count = {args.count}",
        f"seed = {args.seed}",
        f"noise_family = {noise.family}",
        f"noise_dim = {noise.dim}",
        f"out = {os.path.abspath(args.out)}",
        "",
    ]
    with open(os.path.join(out_dir, CONFIG_ECHO), "w") as handle:
        handle.write("\n".join(lines))


def cmd_gen(args) -> int:
    if args.count < 0:
        raise ContractError(f"count must be non-negative, got {args.count}.")
    bundle = load_checkpoint(args.checkpoint)
    noise = NoiseSpec(bundle.noise_family, bundle.noise_dim)
    z = sample_noise(noise, args.count, np.random.default_rng(args.seed))
    with no_grad():
        samples = bundle.generator(z).data
    save_csv(args.out, samples)
    _echo_gen(args, noise)
    logger.info("Wrote %d samples to %s", args.count, args.out)
    return EXIT_OK


def _run_experiment(name, config: RunConfig, out_dir):
    spec = config.eval
    kernel = config.kernel_spec()
    if name == "power":
        p_spec, q_spec = power_pair(spec, config.data.dim)
        report = power_experiment(
            p_spec, q_spec, spec.sample_size, spec.trials, kernel,
            spec.learn_budget, learn_kernel=kernel, alpha=spec.alpha,
            n_permutations=spec.n_permutations, hidden=spec.hidden,
            code_dim=config.model.code_dim, learning_rate=spec.learning_rate,
            clip=spec.clip, seed=spec.seed,
        )
    elif name == "weakstar":
        report = weakstar_experiment(
            kernel, spec.length, mu0=spec.mu0, n=spec.sample_size,
            steps=spec.steps, learning_rate=spec.learning_rate, clip=spec.clip,
            hidden=spec.hidden, code_dim=config.model.code_dim, seed=spec.seed,
            include_limit=spec.include_limit,
            n_permutations=spec.n_permutations,
        )
    elif name == "timing":
        report = timing_bench(
            spec.batch_sizes, kernel, spec.repetitions,
            modes=spec.timing_modes, data_dim=config.data.dim,
            noise=config.noise, model=config.model,
            n_critic=config.train.n_critic, seed=spec.seed,
        )
    elif name == "coverage":
        report = coverage_experiment(
            config.data, config.train_config(), modes=spec.modes,
            batch_sizes=spec.coverage_batch_sizes, seeds=spec.seeds,
            noise=config.noise, model=config.model,
            radius=spec.radius or None, n_generated=spec.n_generated,
            window=spec.window,
        )
    else:
        raise ContractError(
            f"Unknown experiment '{name}', expected one of {list(EXPERIMENTS)}."
        )
    _echo(config, out_dir)
    report.write(out_dir)
    _print_json(report.to_dict())
    return EXIT_OK


def cmd_bench(args) -> int:
    overrides = list(args.overrides)
    if args.batch_sizes:
        overrides.append(f"eval.batch_sizes={','.join(map(str, args.batch_sizes))}")
    if args.repetitions is not None:
        overrides.append(f"eval.repetitions={args.repetitions}")
    if args.modes:
        overrides.append(f"eval.timing_modes={','.join(args.modes)}")
    args.overrides = overrides
    return _run_experiment("timing", _run_config(args), args.out)


def cmd_experiment(args) -> int:
    return _run_experiment(args.name, _run_config(args), args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmdforge",
        description="Kernel two-sample tests and MMD GAN training.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for INFO, -vv for DEBUG logging")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"cap worker threads (overrides {THREADS_ENV})")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_overrides(command):
        command.add_argument(
            "--set", dest="overrides", action="append", default=[],
            metavar="SECTION.KEY=VALUE", help="override a config value",
        )

    train_parser = sub.add_parser("train", help="train a generator")
    train_parser.add_argument("config", help="run config file")
    train_parser.add_argument("--out", required=True, help="output directory")
    train_parser.add_argument("--progress", action="store_true")
    with_overrides(train_parser)
    train_parser.set_defaults(func=cmd_train)

    test_parser = sub.add_parser("test", help="permutation two-sample test")
    test_parser.add_argument("x", help="CSV sample from P")
    test_parser.add_argument("y", help="CSV sample from Q")
    test_parser.add_argument(
        "--kernel", default="mixture",
        choices=("gaussian", "mixture", "linear", "polynomial"),
    )
    test_parser.add_argument("--bandwidth", type=float, default=1.0)
    test_parser.add_argument("--bandwidths", type=_floats,
                             default=(1.0, 2.0, 4.0, 8.0, 16.0))
    test_parser.add_argument("--form", default="2sigma2",
                             choices=("2sigma2", "sigma2", "sigma"))
    test_parser.add_argument("--degree", type=int, default=2)
    test_parser.add_argument("--offset", type=float, default=1.0)
    test_parser.add_argument(
        "--relative", action="store_true",
        help="scale Gaussian bandwidths by the pooled spread of x and y",
    )
    test_parser.add_argument("--alpha", type=float, default=0.05)
    test_parser.add_argument("--permutations", type=int, default=500)
    test_parser.add_argument("--seed", type=int, default=0)
    test_parser.set_defaults(func=cmd_test)

    gen_parser = sub.add_parser("gen", help="sample from a checkpoint")
    gen_parser.add_argument("checkpoint")
    gen_parser.add_argument("--count", type=int, default=1000)
    gen_parser.add_argument("--seed", type=int, default=0)
    gen_parser.add_argument("--out", required=True, help="output CSV")
    gen_parser.set_defaults(func=cmd_gen)

    bench_parser = sub.add_parser("bench", help="time iterations against B")
    bench_parser.add_argument("--config", default=None)
    bench_parser.add_argument("--batch-sizes", type=_ints, default=None)
    bench_parser.add_argument("--repetitions", type=int, default=None)
    bench_parser.add_argument("--modes", type=_words, default=None)
    bench_parser.add_argument("--out", required=True)
    with_overrides(bench_parser)
    bench_parser.set_defaults(func=cmd_bench)

    experiment_parser = sub.add_parser("experiment", help="run an experiment")
    experiment_parser.add_argument("name", choices=EXPERIMENTS)
    experiment_parser.add_argument("--config", default=None)
    experiment_parser.add_argument("--out", required=True)
    with_overrides(experiment_parser)
    experiment_parser.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return EXIT_USAGE if exit_.code else EXIT_OK

    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        level=level, format="%(asctime)s %(name)s %(levelname)s: %(message)s"
    )
    if args.threads is not None:
        if args.threads < 1:
            logger.error("--threads must be >= 1")
            return EXIT_USAGE
        os.environ[THREADS_ENV] = str(args.threads)

    try:
        return args.func(args)
    except DivergenceError as error:
        logger.error("%s", error)
        return EXIT_DIVERGED
    except (CheckpointError, ParseError, OSError) as error:
        logger.error("%s", error)
        return EXIT_IO
    except (ConfigError, ContractError, DimensionError,
            InsufficientSampleError) as error:
        logger.error("%s", error)
        return EXIT_USAGE
    except MmdForgeError as error:
        logger.error("%s", error)
        return EXIT_ERROR
    except Exception:
        logger.exception("Unexpected error")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
