import configparser
import contextlib
import csv
import io
import json
import os
import shutil
import tempfile
import unittest
from unittest import mock

import numpy as np

from mmdforge.cli import (
    CONFIG_ECHO,
    EXIT_DIVERGED,
    EXIT_IO,
    EXIT_OK,
    EXIT_REJECT,
    EXIT_USAGE,
    main,
)
from mmdforge.dataset import load_csv, save_csv
from mmdforge.evaluation import THREADS_ENV


SMALL_RUN = """\
[data]
source = gaussian_ring
n_samples = 200
sigma = 0.1

[noise]
dim = 2

[model]
hidden = 6
code_dim = 2
depth = 1

[train]
iterations = 2
batch_size = 8
n_critic = 1
eval_every = 1
eval_size = 20

[kernel]
bandwidths = 1.0, 2.0
"""


def run(*argv):
    r"""
    Runs the CLI and returns the exit code and the printed JSON lines.
    """
    stdout, stderr = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
        code = main(list(argv))
    lines = [json.loads(line) for line in stdout.getvalue().splitlines() if line]
    return code, lines


def read_bytes(path):
    with open(path, "rb") as handle:
        return handle.read()


class CliTestCase(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.config = self.path("run.ini")
        with open(self.config, "w") as handle:
            handle.write(SMALL_RUN)

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def path(self, *parts):
        return os.path.join(self.tmp, *parts)


class TestTestCommand(CliTestCase):

    def setUp(self):
        super(TestTestCommand, self).setUp()
        rng = np.random.default_rng(0)
        self.x = self.path("x.csv")
        self.y = self.path("y.csv")
        save_csv(self.x, rng.standard_normal((30, 2)))
        save_csv(self.y, rng.standard_normal((30, 2)) + 5.0)

    def test_same_file_fails_to_reject(self):
        code, lines = run("test", self.x, self.x, "--permutations", "100")
        self.assertEqual(code, EXIT_OK)
        self.assertFalse(lines[0]["reject"])
        self.assertLessEqual(lines[0]["statistic"], 0.0)

    def test_separated_files_reject(self):
        code, lines = run("test", self.x, self.y, "--permutations", "100",
                          "--kernel", "gaussian", "--bandwidth", "2")
        self.assertEqual(code, EXIT_REJECT)
        self.assertTrue(lines[0]["reject"])
        self.assertEqual(lines[0]["n_permutations"], 100)

    def test_relative_bandwidths_ignore_units(self):
        code, lines = run("test", self.x, self.y, "--permutations", "100",
                          "--relative")
        self.assertEqual(code, EXIT_REJECT)
        big_x, big_y = self.path("big_x.csv"), self.path("big_y.csv")
        save_csv(big_x, 1000.0 * load_csv(self.x))
        save_csv(big_y, 1000.0 * load_csv(self.y))
        _, scaled = run("test", big_x, big_y, "--permutations", "100",
                        "--relative")
        self.assertAlmostEqual(scaled[0]["statistic"], lines[0]["statistic"], 6)

    def test_input_errors(self):
        wide = self.path("wide.csv")
        save_csv(wide, np.ones((5, 3)))
        self.assertEqual(run("test", self.x, wide)[0], EXIT_USAGE)
        broken = self.path("broken.csv")
        with open(broken, "w") as handle:
            handle.write("1.0,2.0\n1.0,oops\n")
        self.assertEqual(run("test", self.x, broken)[0], EXIT_IO)
        self.assertEqual(run("test", self.x, self.path("missing.csv"))[0],
                         EXIT_IO)
        self.assertEqual(run("test", self.x, self.y, "--alpha", "1.5")[0],
                         EXIT_USAGE)


class TestUsage(CliTestCase):

    def test_usage_errors(self):
        self.assertEqual(run()[0], EXIT_USAGE)
        self.assertEqual(run("test")[0], EXIT_USAGE)
        self.assertEqual(run("experiment", "nope", "--out", self.tmp)[0],
                         EXIT_USAGE)
        self.assertEqual(run("--version")[0], EXIT_OK)

    def test_threads_flag(self):
        with mock.patch.dict(os.environ, {}):
            self.assertEqual(run("--threads", "0", "test", "a", "b")[0],
                             EXIT_USAGE)
            run("--threads", "2", "test", self.config, self.config)
            self.assertEqual(os.environ[THREADS_ENV], "2")


class TestTrainAndGen(CliTestCase):

    def test_train_outputs_and_echo_rerun(self):
        first = self.path("first")
        code, lines = run("train", self.config, "--out", first)
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(lines[0]["rows"], 3)
        self.assertEqual(lines[0]["critic_updates"], 2)
        for name in ("trace.csv", "checkpoint.bin", CONFIG_ECHO):
            self.assertTrue(os.path.exists(os.path.join(first, name)))

        second = self.path("second")
        code, _ = run("train", os.path.join(first, CONFIG_ECHO), "--out", second)
        self.assertEqual(code, EXIT_OK)
        for name in ("trace.csv", "checkpoint.bin", CONFIG_ECHO):
            self.assertEqual(read_bytes(os.path.join(first, name)),
                             read_bytes(os.path.join(second, name)))

    def test_gmmn_mode_has_no_critic_updates(self):
        code, lines = run("train", self.config, "--out", self.path("gmmn"),
                          "--set", "train.mode=gmmn_d")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(lines[0]["critic_updates"], 0)
        with open(self.path("gmmn", "trace.csv"), newline="") as handle:
            header = next(csv.reader(handle))
        self.assertEqual(header, ["iter", "mmd2_critic", "ae_loss", "fsr_penalty",
                                  "held_out_mmd2", "secs_per_iter"])

    def test_config_errors(self):
        with open(self.config, "a") as handle:
            handle.write("learning_rat = 0.1\n")
        self.assertEqual(run("train", self.config, "--out", self.path("x"))[0],
                         EXIT_USAGE)
        self.assertEqual(
            run("train", self.path("missing.ini"), "--out", self.path("x"))[0],
            EXIT_IO,
        )

    def test_divergence_exit_code(self):
        out = self.path("diverged")
        code, _ = run("train", self.config, "--out", out,
                      "--set", "train.learning_rate=1e300")
        self.assertEqual(code, EXIT_DIVERGED)
        self.assertTrue(os.path.exists(os.path.join(out, "divergence.json")))
        self.assertTrue(os.path.exists(os.path.join(out, "checkpoint.bin")))

    def test_gen_from_checkpoint(self):
        out = self.path("run")
        self.assertEqual(run("train", self.config, "--out", out)[0], EXIT_OK)
        checkpoint = os.path.join(out, "checkpoint.bin")
        a, b, empty = self.path("a.csv"), self.path("b.csv"), self.path("e.csv")
        self.assertEqual(run("gen", checkpoint, "--count", "7", "--seed", "3",
                             "--out", a)[0], EXIT_OK)
        self.assertEqual(run("gen", checkpoint, "--count", "7", "--seed", "3",
                             "--out", b)[0], EXIT_OK)
        self.assertEqual(read_bytes(a), read_bytes(b))
        self.assertEqual(load_csv(a).shape, (7, 2))
        self.assertEqual(run("gen", checkpoint, "--count", "0", "--out", empty)[0],
                         EXIT_OK)
        self.assertEqual(read_bytes(empty), b"")

    def test_gen_echoes_its_settings(self):
        out = self.path("run")
        self.assertEqual(run("train", self.config, "--out", out)[0], EXIT_OK)
        checkpoint = os.path.join(out, "checkpoint.bin")
        samples = self.path("samples", "drawn.csv")
        os.makedirs(self.path("samples"))
        self.assertEqual(run("gen", checkpoint, "--count", "5", "--seed", "9",
                             "--out", samples)[0], EXIT_OK)
        parser = configparser.ConfigParser()
        parser.read(self.path("samples", CONFIG_ECHO))
        echo = parser["gen"]
        self.assertEqual(echo["checkpoint"], os.path.abspath(checkpoint))
        self.assertEqual(echo.getint("count"), 5)
        self.assertEqual(echo.getint("seed"), 9)
        self.assertEqual(echo["noise_family"], "standard_normal")
        self.assertEqual(echo.getint("noise_dim"), 2)
        self.assertEqual(echo["out"], os.path.abspath(samples))

    def test_gen_rejects_bad_checkpoint(self):
        bad = self.path("bad.bin")
        with open(bad, "wb") as handle:
            handle.write(b"garbage")
        self.assertEqual(run("gen", bad, "--out", self.path("o.csv"))[0], EXIT_IO)
        self.assertEqual(
            run("gen", self.path("none.bin"), "--out", self.path("o.csv"))[0],
            EXIT_IO,
        )


class TestExperiments(CliTestCase):

    def test_weakstar(self):
        out = self.path("weakstar")
        code, lines = run(
            "experiment", "weakstar", "--config", self.config, "--out", out,
            "--set", "eval.length=3", "--set", "eval.sample_size=20",
            "--set", "eval.steps=2", "--set", "eval.hidden=4",
            "--set", "eval.n_permutations=100",
        )
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(lines[0]["experiment"], "weakstar")
        with open(os.path.join(out, "weakstar.csv"), newline="") as handle:
            self.assertEqual(len(list(csv.DictReader(handle))), 3)
        self.assertTrue(os.path.exists(os.path.join(out, CONFIG_ECHO)))

    def test_bench(self):
        out = self.path("bench")
        code, lines = run(
            "bench", "--config", self.config, "--out", out,
            "--batch-sizes", "4,8", "--repetitions", "1", "--modes", "mmdgan",
        )
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(lines[0]["cells"], 2)
        with open(os.path.join(out, "timing.csv"), newline="") as handle:
            rows = list(csv.DictReader(handle))
        self.assertEqual([row["batch_size"] for row in rows], ["4", "8"])

    def test_coverage(self):
        out = self.path("coverage")
        code, lines = run(
            "experiment", "coverage", "--config", self.config, "--out", out,
            "--set", "eval.modes=gmmn_d", "--set", "eval.seeds=0",
            "--set", "eval.coverage_batch_sizes=8",
            "--set", "eval.n_generated=50", "--set", "eval.window=1",
        )
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(lines[0]["failed"], 0)
        self.assertEqual(lines[0]["cells"], 1)


if __name__ == "__main__":
    unittest.main()
