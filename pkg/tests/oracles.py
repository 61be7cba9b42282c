"""Reference implementations used by several test modules."""

import math

import numpy as np

from scarcut.graphcut import SegGraph
from scarcut.neural import Mlp, PairNet, init_mlp, mlp_gradient


def random_seg_graph(rng, n, density=0.4, lam=0.6, high=10.0):
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < density
    edges = np.c_[iu[keep], ju[keep]]
    return SegGraph(n, rng.uniform(0, high, n), rng.uniform(0, high, n), edges,
                    rng.uniform(0, high, len(edges)), lam)


def _loss(net, inputs, targets):
    return mlp_gradient(net, inputs, targets)[1]


def gradient_errors(net, inputs, targets, h=1e-5, floor=1e-9):
    """Elementwise ``|analytic - numeric| / max(|analytic|, |numeric|)`` over all parameters.

    Entries where both gradients are below ``floor`` count as exact.
    """
    grads, _ = mlp_gradient(net, inputs, targets)
    errs = []
    for p, g in zip(net.params(), grads):
        num = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = _loss(net, inputs, targets)
            p[idx] = old - h
            down = _loss(net, inputs, targets)
            p[idx] = old
            num[idx] = (up - down) / (2 * h)
        scale = np.maximum(np.abs(g), np.abs(num))
        err = np.where(scale < floor, 0.0, np.abs(g - num) / np.maximum(scale, floor))
        errs.append(err.ravel())
    return np.concatenate(errs)


def random_tlink_problem(rng, d=6, hidden=(5, 4), batch=8):
    net = init_mlp([d, *hidden, 2], "softmax", rng, 1.5)
    for b in net.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    x = rng.normal(size=(batch, d))
    return net, x, rng.integers(0, 2, batch)


def random_nlink_problem(rng, d=6, encoder=(5, 3), head=(4,), batch=8):
    enc = init_mlp([d, *encoder], "relu", rng, 1.5)
    hd = init_mlp([2 * encoder[-1] + 1, *head, 1], "logistic", rng, 1.5)
    for b in enc.biases + hd.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    net = PairNet(enc, hd, 1.2, 0.4)
    inputs = (rng.normal(size=(batch, d)), rng.normal(size=(batch, d)), rng.uniform(0.5, 2.0, batch))
    return net, inputs, rng.random(batch)


def otsu_exhaustive(values, bins=256):
    """Best interior bin edge by brute-force evaluation of the between-class variance.

    Class sums use ``math.fsum`` so edges separated only by empty bins score identically.
    """
    v = np.asarray(values, dtype=float)
    counts, edges = np.histogram(v, bins=bins, range=(v.min(), v.max()))
    centres = 0.5 * (edges[:-1] + edges[1:])
    best, best_k = -np.inf, None
    for k in range(1, bins):
        w0, w1 = math.fsum(counts[:k]), math.fsum(counts[k:])
        if w0 == 0 or w1 == 0:
            var = 0.0
        else:
            m0 = math.fsum(counts[:k] * centres[:k]) / w0
            m1 = math.fsum(counts[k:] * centres[k:]) / w1
            var = w0 * w1 * (m0 - m1) ** 2 / math.fsum(counts) ** 2
        if var > best:
            best, best_k = var, k
    return edges[best_k], best_k, best


__all__ = ["Mlp", "gradient_errors", "otsu_exhaustive", "random_nlink_problem", "random_seg_graph",
           "random_tlink_problem"]
