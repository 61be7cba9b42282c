"""Fully-connected networks for the unary (t-link) and pairwise (n-link) potentials.

Two model kinds share one dense-layer implementation:

* :class:`Mlp` -- a ReLU stack with a ``softmax`` (two-class), ``logistic``
  (scalar) or ``relu`` (feature encoder) output.
* :class:`PairNet` -- a shared encoder applied to both patches, followed by a
  logistic head on ``[enc(a), enc(b), z-scored distance]``.  Logits of both
  input orders are averaged, so the output is symmetric in ``(a, b)``.

Weights are stored ``(fan_in, fan_out)`` and applied as ``x @ W + b``.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

HEADS = ("softmax", "logistic", "relu")


@dataclass
class Mlp:
    weights: list
    biases: list
    head: str = "softmax"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: inconsistent weight/bias shapes")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input width does not match previous layer")
        if self.head == "logistic" and self.weights[-1].shape[1] != 1:
            raise ValueError("logistic head needs a single output")

    @property
    def widths(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.head)


@dataclass
class PairNet:
    encoder: Mlp
    head: Mlp
    dist_mean: float = 0.0
    dist_std: float = 1.0

    def __post_init__(self):
        if self.encoder.head != "relu" or self.head.head != "logistic":
            raise ValueError("PairNet needs a relu encoder and a logistic head")
        k = self.encoder.widths[-1]
        if self.head.widths[0] != 2 * k + 1:
            raise ValueError(f"head input must be 2*{k}+1 wide")

    def params(self):
        return self.encoder.params() + self.head.params()

    def copy(self):
        return PairNet(self.encoder.copy(), self.head.copy(), self.dist_mean, self.dist_std)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    batch_size: int = 64
    epochs: int = 20
    momentum: float = 0.9
    rng_seed: int = 0
    init_scale: float = 1.0
    val_fraction: float = 0.0

    def __post_init__(self):
        if not self.lr > 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("require lr > 0, batch_size >= 1, epochs >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass
class TrainReport:
    """Per-epoch losses on the fitted samples (and the held-out split, if any)."""

    losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def final_loss(self):
        return self.losses[-1] if self.losses else float("nan")


def init_mlp(widths, head, rng, scale=1.0):
    """Uniform init in +-scale/sqrt(fan_in), zero biases."""
    ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        lim = scale / np.sqrt(fan_in)
        ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Mlp(ws, bs, head)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _dense(net, x):
    """Forward through all layers; returns final pre-activation and cache."""
    acts, pre = [x], []
    a = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        pre.append(z)
        if i < last:
            a = np.maximum(z, 0.0)
            acts.append(a)
    return z, {"acts": acts, "pre": pre}


def mlp_forward(net, x):
    """Return ``(output, cache)``; ``cache["acts"][1:]`` are the hidden activations."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[1] != net.widths[0]:
        raise ValueError(f"input width {xb.shape[1]} != network input {net.widths[0]}")
    z, cache = _dense(net, xb)
    if net.head == "softmax":
        out = _softmax(z)
    elif net.head == "logistic":
        out = _sigmoid(z)
    else:
        out = np.maximum(z, 0.0)
    cache["out"] = out
    return (out[0] if single else out), cache


def _backward(net, cache, dz):
    """Backprop ``dLoss/d(final pre-activation)``; returns ``(grads, dx)``."""
    grads = [None] * (2 * len(net.weights))
    acts, pre = cache["acts"], cache["pre"]
    for i in range(len(net.weights) - 1, -1, -1):
        grads[2 * i] = acts[i].T @ dz
        grads[2 * i + 1] = dz.sum(axis=0)
        da = dz @ net.weights[i].T
        if i > 0:
            dz = da * (pre[i - 1] > 0)
    return grads, da


def _softmax_loss(z, y):
    logp = z - z.max(axis=1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
    return -np.mean(np.sum(y * logp, axis=1)), (np.exp(logp) - y) / len(y)


def _logistic_loss(z, y):
    # mean of softplus(z) - y*z, i.e. binary cross-entropy on logits
    z = z.ravel()
    loss = np.mean(np.logaddexp(0.0, z) - y * z)
    return loss, ((_sigmoid(z) - y) / len(y))[:, None]


def _as_targets(net, y):
    y = np.asarray(y, dtype=np.float64)
    if net.head == "softmax":
        if y.ndim == 1:
            y = np.stack([1.0 - y, y], axis=1)
        if y.shape[1] != net.widths[-1]:
            raise ValueError("one-hot targets do not match the output width")
    else:
        y = y.ravel()
        if np.any((y < 0) | (y > 1)):
            raise ValueError("logistic targets must lie in [0, 1]")
    return y


def mlp_gradient(net, inputs, targets):
    """Exact gradient of the mean loss; returns ``(grads, loss)``.

    For an :class:`Mlp`, ``inputs`` is an ``(B, d)`` array and ``targets`` are
    class indices / one-hot rows (softmax) or values in [0, 1] (logistic).  For
    a :class:`PairNet`, ``inputs`` is ``(patches_a, patches_b, distances)``.
    Gradients follow the order of ``net.params()``.
    """
    if isinstance(net, PairNet):
        return _pair_gradient(net, *inputs, targets)
    x = np.asarray(inputs, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite inputs")
    if net.head == "relu":
        raise ValueError("relu-headed networks have no loss")
    y = _as_targets(net, targets)
    z, cache = _dense(net, x)
    loss, dz = _softmax_loss(z, y) if net.head == "softmax" else _logistic_loss(z, y)
    grads, _ = _backward(net, cache, dz)
    return grads, float(loss)


def _pair_logits(net, a, b, d):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64).reshape(-1, 1)
    if a.shape != b.shape or a.shape[1] != net.encoder.widths[0]:
        raise ValueError("patch shapes do not match the encoder input")
    ea, ca = _dense(net.encoder, a)
    eb, cb = _dense(net.encoder, b)
    ea, eb = np.maximum(ea, 0.0), np.maximum(eb, 0.0)
    dn = (d - net.dist_mean) / net.dist_std
    xab = np.concatenate([ea, eb, dn], axis=1)
    xba = np.concatenate([eb, ea, dn], axis=1)
    zab, hab = _dense(net.head, xab)
    zba, hba = _dense(net.head, xba)
    z = 0.5 * (zab + zba)
    return z.ravel(), (ca, cb, hab, hba)


def _pair_gradient(net, a, b, d, targets):
    for arr in (a, b, d):
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite inputs")
    y = np.asarray(targets, dtype=np.float64).ravel()
    z, (ca, cb, hab, hba) = _pair_logits(net, a, b, d)
    loss, dz = _logistic_loss(z, y)
    g_ab, dx_ab = _backward(net.head, hab, 0.5 * dz)
    g_ba, dx_ba = _backward(net.head, hba, 0.5 * dz)
    k = net.encoder.widths[-1]
    dea = dx_ab[:, :k] + dx_ba[:, k:2 * k]
    deb = dx_ab[:, k:2 * k] + dx_ba[:, :k]
    g_a, _ = _backward(net.encoder, ca, dea * (ca["pre"][-1] > 0))
    g_b, _ = _backward(net.encoder, cb, deb * (cb["pre"][-1] > 0))
    enc = [p + q for p, q in zip(g_a, g_b)]
    head = [p + q for p, q in zip(g_ab, g_ba)]
    return enc + head, float(loss)


def predict_tlink_batch(net, x):
    """``(N, 2)`` array of ``(p_bg, p_scar)``."""
    out, _ = mlp_forward(net, np.atleast_2d(x))
    return out


def predict_tlink(net, patch):
    values = getattr(patch, "values", patch)
    p = predict_tlink_batch(net, np.asarray(values, dtype=np.float64)[None, :])[0]
    return float(p[0]), float(p[1])


def predict_nlink_batch(net, a, b, d):
    z, _ = _pair_logits(net, np.atleast_2d(a), np.atleast_2d(b), np.atleast_1d(d))
    return _sigmoid(z)


def predict_nlink(net, patch_i, patch_j, distance):
    a = np.asarray(getattr(patch_i, "values", patch_i), dtype=np.float64)[None, :]
    b = np.asarray(getattr(patch_j, "values", patch_j), dtype=np.float64)[None, :]
    return float(predict_nlink_batch(net, a, b, [distance])[0])


# -- training ---------------------------------------------------------------


def _split(n, cfg, rng):
    """Fit/validation index split; validation is empty when ``val_fraction == 0``."""
    order = rng.permutation(n)
    n_val = int(round(cfg.val_fraction * n))
    if n_val and n - n_val < 1:
        raise ValueError("validation split leaves no training samples")
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _sgd(net, fit, val, batch_grad, loss_on, cfg, rng):
    """Momentum SGD; with a validation split the best-validation epoch is restored."""
    params = net.params()
    velocity = [np.zeros_like(p) for p in params]
    report = TrainReport()
    best, best_params = np.inf, None
    for epoch in range(cfg.epochs):
        order = fit[rng.permutation(len(fit))]
        for s in range(0, len(order), cfg.batch_size):
            grads, _ = batch_grad(order[s:s + cfg.batch_size])
            for p, v, g in zip(params, velocity, grads):
                v *= cfg.momentum
                v -= cfg.lr * g
                p += v
        report.losses.append(loss_on(fit))
        if len(val):
            report.val_losses.append(loss_on(val))
            if report.val_losses[-1] < best:
                best, best_params = report.val_losses[-1], [p.copy() for p in params]
                report.best_epoch = epoch
    if best_params is not None:
        for p, q in zip(params, best_params):
            p[...] = q
    else:
        report.best_epoch = cfg.epochs - 1
    return report


def train_tlink(x, y, hidden=(128, 64), cfg=TrainConfig()):
    """Train the two-class unary network; returns ``(net, report)``."""
    x = np.asarray(x)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.rng_seed)
    net = init_mlp([x.shape[1], *hidden, 2], "softmax", rng, cfg.init_scale)
    onehot = np.eye(2)[y]
    fit, val = _split(len(y), cfg, rng)

    def batch_grad(idx):
        return mlp_gradient(net, x[idx].astype(np.float64), onehot[idx])

    def loss_on(idx):
        return mlp_gradient(net, x[idx].astype(np.float64), onehot[idx])[1]

    report = _sgd(net, fit, val, batch_grad, loss_on, cfg, rng)
    return net, report


def train_nlink(a, b, dist, sim, encoder=(64, 32), head_hidden=(32,), cfg=TrainConfig()):
    """Train the symmetric pairwise network; returns ``(net, report)``."""
    a, b = np.asarray(a), np.asarray(b)
    dist = np.asarray(dist, dtype=np.float64)
    sim = np.asarray(sim, dtype=np.float64)
    if len(sim) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.rng_seed)
    enc = init_mlp([a.shape[1], *encoder], "relu", rng, cfg.init_scale)
    head = init_mlp([2 * encoder[-1] + 1, *head_hidden, 1], "logistic", rng, cfg.init_scale)
    std = float(dist.std())
    net = PairNet(enc, head, float(dist.mean()), std if std > 1e-12 else 1.0)
    fit, val = _split(len(sim), cfg, rng)

    def batch_grad(idx):
        return mlp_gradient(net, (a[idx], b[idx], dist[idx]), sim[idx])

    def loss_on(idx):
        return batch_grad(idx)[1]

    report = _sgd(net, fit, val, batch_grad, loss_on, cfg, rng)
    return net, report


def accuracy_tlink(net, x, y):
    return float(np.mean(np.argmax(predict_tlink_batch(net, x), axis=1) == np.asarray(y)))


# -- model files ------------------------------------------------------------

_MAGIC = b"SCNET1\n\0"


def _mlp_arch(net):
    return {"widths": net.widths, "head": net.head}


def save_model(net, path):
    """JSON architecture header (length-prefixed) + f32le parameters in ``params()`` order."""
    if isinstance(net, PairNet):
        arch = {"kind": "nlink", "encoder": _mlp_arch(net.encoder), "head": _mlp_arch(net.head),
                "dist_mean": net.dist_mean, "dist_std": net.dist_std}
    else:
        arch = {"kind": "tlink" if net.head == "softmax" else "mlp", "net": _mlp_arch(net)}
    blob = json.dumps(arch).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in net.params():
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def _mlp_from(arch, flat, pos):
    ws, bs = [], []
    for fi, fo in zip(arch["widths"][:-1], arch["widths"][1:]):
        ws.append(flat[pos:pos + fi * fo].reshape(fi, fo).astype(np.float64))
        pos += fi * fo
        bs.append(flat[pos:pos + fo].astype(np.float64))
        pos += fo
    return Mlp(ws, bs, arch["head"]), pos


def load_model(path):
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a model file")
        (n,) = struct.unpack("<Q", fh.read(8))
        arch = json.loads(fh.read(n))
        flat = np.frombuffer(fh.read(), dtype="<f4")
    if arch["kind"] == "nlink":
        enc, pos = _mlp_from(arch["encoder"], flat, 0)
        head, pos = _mlp_from(arch["head"], flat, pos)
        net = PairNet(enc, head, float(arch["dist_mean"]), float(arch["dist_std"]))
    else:
        net, pos = _mlp_from(arch["net"], flat, 0)
    if pos != flat.size:
        raise ValueError(f"{path}: parameter payload size does not match architecture")
    return net


def round_to_f32(net):
    """Copy of ``net`` with parameters rounded as they would be on disk."""
    out = net.copy()
    for p in out.params():
        p[...] = p.astype(np.float32)
    if isinstance(out, PairNet):
        out.dist_mean, out.dist_std = float(out.dist_mean), float(out.dist_std)
    return out
