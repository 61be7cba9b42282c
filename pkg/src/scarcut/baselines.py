"""Intensity baselines on per-vertex wall features: Otsu threshold and a 1-D GMM fitted by EM."""

from dataclasses import dataclass

import numpy as np

from .volio import sample


@dataclass(frozen=True)
class WallProbe:
    """Normal segment sampled for the per-vertex feature, in mm along the outward normal."""

    start_mm: float = 0.5
    wall_thickness_mm: float = 2.0
    step_mm: float = 0.5


def _offsets(cfg):
    n = int(np.floor((cfg.wall_thickness_mm - cfg.start_mm) / cfg.step_mm + 1e-9)) + 1
    return cfg.start_mm + cfg.step_mm * np.arange(max(n, 1))


def node_intensities(vol, mesh, cfg=WallProbe()):
    """Maximum-intensity projection through the wall for every vertex."""
    t = _offsets(cfg)
    pts = mesh.vertices[:, None, :] + t[None, :, None] * mesh.normals[:, None, :]
    return sample(vol, pts).max(axis=1)


def node_intensity(vol, mesh, v, cfg=WallProbe()):
    t = _offsets(cfg)
    pts = mesh.vertices[v] + t[:, None] * mesh.normals[v]
    return float(sample(vol, pts).max())


# -- Otsu -------------------------------------------------------------------


def _between_class_variance(counts, centres):
    w0 = np.cumsum(counts)[:-1]
    m0 = np.cumsum(counts * centres)[:-1]
    total, mtotal = counts.sum(), (counts * centres).sum()
    w1 = total - w0
    m1 = mtotal - m0
    with np.errstate(divide="ignore", invalid="ignore"):
        var = w0 * w1 * (m0 / w0 - m1 / w1) ** 2 / total**2
    var[(w0 == 0) | (w1 == 0)] = -np.inf
    return var


def otsu_histogram(values, bins=256):
    values = np.asarray(values, dtype=np.float64).ravel()
    if bins < 2:
        raise ValueError("need at least 2 bins")
    lo, hi = values.min(), values.max()
    if not hi > lo:
        raise ValueError("Otsu threshold undefined for constant data")
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return counts.astype(np.float64), edges


def otsu_index(values, bins=256):
    """Index ``k`` (1..bins-1) of the interior bin edge chosen as threshold."""
    counts, edges = otsu_histogram(values, bins)
    centres = 0.5 * (edges[:-1] + edges[1:])
    var = _between_class_variance(counts, centres)
    return int(np.argmax(var)) + 1


def otsu_threshold(values, bins=256):
    """Bin edge maximising between-class variance (lowest on ties); scar is ``value >= threshold``."""
    _, edges = otsu_histogram(values, bins)
    return float(edges[otsu_index(values, bins)])


def otsu_classify(values, threshold):
    return (np.asarray(values) >= threshold).astype(np.int64)


# -- GMM --------------------------------------------------------------------


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if np.any(np.asarray(self.variances) < 1e-12):
            raise ValueError("variances must be >= 1e-12")

    @property
    def k(self):
        return len(self.weights)


@dataclass(frozen=True)
class EmConfig:
    max_iter: int = 200
    tol: float = 1e-8
    rng_seed: int = 0


def _log_joint(model, x):
    var = model.variances
    return (np.log(np.maximum(model.weights, 1e-300)) - 0.5 * np.log(2 * np.pi * var)
            - 0.5 * (x[:, None] - model.means) ** 2 / var)


def _loglik(lj):
    m = lj.max(axis=1, keepdims=True)
    return float(np.sum(m.ravel() + np.log(np.exp(lj - m).sum(axis=1))))


def gmm_em_fit(values, k=2, cfg=EmConfig()):
    """Fit a ``k``-component 1-D mixture; returns ``(model, loglik_per_iteration)``.

    Initialised deterministically: means at the quantiles ``(j + 1) / (k + 1)``,
    equal weights, pooled variance.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if k < 2 or len(x) < k:
        raise ValueError("need n >= k >= 2")
    if len(np.unique(x)) < k:
        raise ValueError(f"need at least {k} distinct values")
    means = np.quantile(x, (np.arange(k) + 1) / (k + 1))
    if len(np.unique(means)) < k:
        uniq = np.unique(x)
        means = uniq[np.linspace(0, len(uniq) - 1, k).round().astype(int)]
    model = GmmModel(np.full(k, 1.0 / k), means.astype(float), np.full(k, max(x.var(), 1e-12)))
    history = []
    for _ in range(cfg.max_iter):
        lj = _log_joint(model, x)
        ll = _loglik(lj)
        if history and ll - history[-1] < cfg.tol:
            history.append(ll)
            break
        history.append(ll)
        resp = np.exp(lj - lj.max(axis=1, keepdims=True))
        resp /= resp.sum(axis=1, keepdims=True)
        nk = resp.sum(axis=0)
        keep = nk > 1e-10
        w = nk / nk.sum()
        mu = np.where(keep, (resp * x[:, None]).sum(axis=0) / np.where(keep, nk, 1.0), model.means)
        var = np.where(keep, (resp * (x[:, None] - mu) ** 2).sum(axis=0) / np.where(keep, nk, 1.0),
                       model.variances)
        model = GmmModel(w / w.sum(), mu, np.maximum(var, 1e-12))
    else:
        history.append(_loglik(_log_joint(model, x)))
    return model, history


def gmm_posteriors(model, values):
    lj = _log_joint(model, np.asarray(values, dtype=np.float64).ravel())
    r = np.exp(lj - lj.max(axis=1, keepdims=True))
    return r / r.sum(axis=1, keepdims=True)


def gmm_classify(model, values):
    """1 where the largest-mean component has strictly the highest posterior."""
    lj = _log_joint(model, np.asarray(values, dtype=np.float64).ravel())
    scar = int(np.argmax(model.means))
    others = np.delete(lj, scar, axis=1).max(axis=1)
    return (lj[:, scar] > others).astype(np.int64)
