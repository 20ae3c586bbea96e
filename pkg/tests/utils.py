import math
import os
import unittest

import numpy as np

from mmdforge.kernels import Gaussian, Linear, MixtureRBF, Polynomial


slow = unittest.skipUnless(
    os.environ.get("MMD_FORGE_SLOW"), "set MMD_FORGE_SLOW=1 for Monte Carlo checks"
)


def random_samples(n, m, d, seed=0, shift=0.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    y = rng.standard_normal((m, d)) + shift
    return x, y


def loop_spread(x, y):
    pooled = [list(row) for row in x] + [list(row) for row in y]
    total = sum(
        sum((ai - bi) ** 2 for ai, bi in zip(a, b)) for a in pooled for b in pooled
    )
    return total / len(pooled) ** 2


def loop_kernel(kernel, spread=1.0):
    if isinstance(kernel, Gaussian):
        scale = kernel.scale * (spread if kernel.relative else 1.0)

        def k(a, b):
            return math.exp(-sum((ai - bi) ** 2 for ai, bi in zip(a, b)) / scale)
        return k
    if isinstance(kernel, MixtureRBF):
        parts = [loop_kernel(part, spread) for part in kernel.components()]
        return lambda a, b: sum(part(a, b) for part in parts)
    if isinstance(kernel, Linear):
        return lambda a, b: sum(ai * bi for ai, bi in zip(a, b))
    if isinstance(kernel, Polynomial):
        return lambda a, b: (
            kernel.offset + sum(ai * bi for ai, bi in zip(a, b))
        ) ** kernel.degree
    raise ValueError(kernel)


def loop_gram(x, y, kernel):
    k = loop_kernel(kernel, loop_spread(x, y))
    return np.array([[k(a, b) for b in y] for a in x])


def loop_mmd2(x, y, kernel, unbiased):
    k = loop_kernel(kernel, loop_spread(x, y))
    n, m = len(x), len(y)
    sxx = sum(k(x[i], x[j]) for i in range(n) for j in range(n)
              if not unbiased or i != j)
    syy = sum(k(y[i], y[j]) for i in range(m) for j in range(m)
              if not unbiased or i != j)
    sxy = sum(k(x[i], y[j]) for i in range(n) for j in range(m))
    if unbiased:
        return sxx / (n * (n - 1)) + syy / (m * (m - 1)) - 2.0 * sxy / (n * m)
    return sxx / (n * n) + syy / (m * m) - 2.0 * sxy / (n * m)


ACTIVATION_LOOPS = {
    "relu": lambda v: max(v, 0.0),
    "tanh": math.tanh,
    "elu": lambda v: v if v > 0 else math.exp(v) - 1.0,
}


def loop_mlp(net, x):
    act = ACTIVATION_LOOPS[net.config.activation]
    out = []
    last = len(net.weights) - 1
    for row in np.asarray(x):
        h = list(row)
        for layer, (weight, bias) in enumerate(zip(net.weights, net.biases)):
            w, b = weight.data, bias.data
            h = [
                b[j] + sum(h[i] * w[i, j] for i in range(w.shape[0]))
                for j in range(w.shape[1])
            ]
            if layer != last:
                h = [act(v) for v in h]
        out.append(h)
    return np.array(out)


def finite_difference(fn, array, eps=1e-6):
    r"""
    Central differences of the scalar `fn()` with respect to every entry
    of `array`, perturbed in place.
    """
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + eps
        upper = fn()
        array[index] = original - eps
        lower = fn()
        array[index] = original
        grad[index] = (upper - lower) / (2.0 * eps)
    return grad


def relative_error(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / scale)
