import argparse
import logging

from mmdforge.dataset import NoiseSpec
from mmdforge.evaluation import timing_bench
from mmdforge.kernels import Gaussian, MixtureRBF
from mmdforge.networks import ModelSpec


def arg_parse():
    parser = argparse.ArgumentParser(description='Iteration time arguments.')
    parser.add_argument('--batch_sizes', type=str,
                        help='Comma separated batch sizes.')
    parser.add_argument('--modes', type=str,
                        help='Comma separated training modes.')
    parser.add_argument('--num_runs', type=int,
                        help='Repetitions per cell; the median is reported.')
    parser.add_argument('--n_critic', type=int,
                        help='Critic steps per generator step.')
    parser.add_argument('--hidden', type=int,
                        help='Hidden width of the networks.')
    parser.add_argument('--compare_single', action='store_true',
                        help='Also time a single Gaussian kernel.')
    parser.add_argument('--out', type=str,
                        help='Directory for timing.csv and timing.json.')
    parser.add_argument('--print_run', action='store_true',
                        help='Log every cell.')

    parser.set_defaults(
        batch_sizes='16,64,256,1024',
        modes='mmdgan,wgan_linear,gmmn_d',
        num_runs=5,
        n_critic=5,
        hidden=64,
        compare_single=False,
        out=None,
        print_run=False,
    )
    return parser.parse_args()


def run(args, kernel):
    return timing_bench(
        [int(size) for size in args.batch_sizes.split(',')],
        kernel,
        repetitions=args.num_runs,
        modes=args.modes.split(','),
        noise=NoiseSpec(dim=4),
        model=ModelSpec(hidden=args.hidden),
        n_critic=args.n_critic,
    )


def main():
    args = arg_parse()
    if args.print_run:
        logging.basicConfig(level=logging.INFO)
    mixture = run(args, MixtureRBF(relative=True))
    for row in mixture.rows:
        print("{:12s} B={:5d} {:.4f}s".format(
            row["mode"], row["batch_size"], row["secs_per_iter"]))
    for mode, exponent in mixture.summary["exponents"].items():
        print("{:12s} time ~ B^{:.2f}".format(mode, exponent))
    if args.out:
        mixture.write(args.out)

    if args.compare_single:
        single = run(args, Gaussian(1.0, relative=True))
        for a, b in zip(mixture.rows, single.rows):
            print("{:12s} B={:5d} mixture/single = {:.2f}".format(
                a["mode"], a["batch_size"],
                a["secs_per_iter"] / b["secs_per_iter"]))


if __name__ == '__main__':
    main()
