"""Binary MRF energy over the surface graph and its exact minimisation by min-cut.

Energy of a labelling ``l``::

    E(l) = sum_i t_{l_i}(i) + lam * sum_{(u, v)} w_uv * [l_u != l_v]

The pairwise term is a Potts penalty: an edge costs ``w_uv`` when its ends
disagree, so similar neighbours are expensive to separate.

Min-cut convention: nodes on the source side take label 0, sink side label 1.
Arc ``s -> i`` carries ``t1(i)`` (paid when ``i`` ends up labelled 1) and
``i -> t`` carries ``t0(i)``, both reduced by ``min(t0, t1)``; every edge is
a pair of arcs of capacity ``lam * w``.  Hence
``energy(l) = cut(l) + sum_i min(t0(i), t1(i))`` and the returned flow value
is the cut part only.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .case import CaseConfig, prepare_case
from .maxflow import FlowGraph
from .neural import predict_nlink_batch, predict_tlink_batch
from .patches import mesh_patches

EPS = 1e-6


@dataclass(frozen=True)
class SegGraph:
    n_nodes: int
    t0: np.ndarray
    t1: np.ndarray
    edges: np.ndarray
    w: np.ndarray
    lam: float = 0.6

    def __post_init__(self):
        t0 = np.asarray(self.t0, dtype=np.float64).ravel()
        t1 = np.asarray(self.t1, dtype=np.float64).ravel()
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        w = np.asarray(self.w, dtype=np.float64).ravel()
        if t0.shape != (self.n_nodes,) or t1.shape != (self.n_nodes,):
            raise ValueError("t0/t1 need one value per node")
        if w.shape != (len(edges),):
            raise ValueError("one n-link weight per edge required")
        for name, arr in (("t-link", np.r_[t0, t1]), ("n-link", w), ("lambda", np.r_[self.lam])):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} weights must be finite")
            if np.any(arr < 0):
                raise ValueError(f"negative {name} weight violates submodularity")
        if len(edges):
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ValueError("self-loop edge")
            if edges.min() < 0 or edges.max() >= self.n_nodes:
                raise ValueError("edge references an invalid node")
            if len(np.unique(np.sort(edges, axis=1), axis=0)) != len(edges):
                raise ValueError("duplicate undirected edge")
        object.__setattr__(self, "t0", t0)
        object.__setattr__(self, "t1", t1)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "lam", float(self.lam))

    def with_lambda(self, lam):
        return replace(self, lam=lam)


def _labels(g, labels):
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.shape != (g.n_nodes,):
        raise ValueError(f"labelling must have {g.n_nodes} entries")
    return labels


def energy_terms(g, labels):
    """``(unary, pairwise)`` where pairwise is the un-scaled cut weight sum."""
    l = _labels(g, labels)
    unary = float(np.sum(np.where(l == 1, g.t1, g.t0)))
    if len(g.edges):
        cut = l[g.edges[:, 0]] != l[g.edges[:, 1]]
        pair = float(np.sum(g.w[cut]))
    else:
        pair = 0.0
    return unary, pair


def energy(g, labels):
    unary, pair = energy_terms(g, labels)
    return unary + g.lam * pair


def cut_edge_count(g, labels):
    l = _labels(g, labels)
    return int(np.sum(l[g.edges[:, 0]] != l[g.edges[:, 1]])) if len(g.edges) else 0


def min_cut(g):
    """Global minimiser of :func:`energy`; returns ``(labels, flow)``.

    Nodes that are free to take either label (e.g. ties at ``lam = 0``) are
    labelled 0: a node is 1 only if it still reaches the sink in the residual
    network.
    """
    n = g.n_nodes
    s, t = n, n + 1
    fg = FlowGraph(n + 2)
    base = np.minimum(g.t0, g.t1)
    cs = g.t1 - base
    ct = g.t0 - base
    for i in range(n):
        if cs[i] > 0:
            fg.add_edge(s, i, cs[i])
        if ct[i] > 0:
            fg.add_edge(i, t, ct[i])
    if g.lam > 0:
        cap = g.lam * g.w
        for (u, v), c in zip(g.edges.tolist(), cap.tolist()):
            if c > 0:
                fg.add_edge(u, v, c, c)
    flow = fg.max_flow(s, t)
    reach = fg.reaches(t)
    labels = np.array(reach[:n], dtype=np.int64)
    return labels, flow


def brute_force_min(g):
    """Exhaustive minimum over all ``2**n`` labellings (small graphs only)."""
    n = g.n_nodes
    if n > 20:
        raise ValueError("brute force limited to 20 nodes")
    codes = np.arange(2 ** n, dtype=np.int64)
    l = (codes[:, None] >> np.arange(n)) & 1
    unary = np.where(l == 1, g.t1, g.t0).sum(axis=1)
    if len(g.edges):
        cut = l[:, g.edges[:, 0]] != l[:, g.edges[:, 1]]
        pair = (cut * g.w).sum(axis=1)
    else:
        pair = 0.0
    e = unary + g.lam * pair
    k = int(np.argmin(e))
    return float(e[k]), l[k]


# -- learned potentials -----------------------------------------------------


@dataclass(frozen=True)
class SegmentConfig:
    lam: float = 0.6
    size: tuple = (9, 9, 13)
    step_mm: tuple = None
    eps: float = EPS
    exclude: tuple = field(default_factory=tuple)


def tlink_weights(p0, p1, eps=EPS):
    return -np.log(np.maximum(p0, eps)), -np.log(np.maximum(p1, eps))


def build_seg_graph(mesh, flatmap, vol, tnet, nnet, cfg=SegmentConfig()):
    """Graph whose t-links are ``-ln p`` of the unary net and n-links the pairwise similarity."""
    size = tuple(cfg.size)
    p_len = int(np.prod(size))
    if tnet.widths[0] != p_len or nnet.encoder.widths[0] != p_len:
        raise ValueError(f"networks expect {tnet.widths[0]}/{nnet.encoder.widths[0]} inputs, "
                         f"patch size {size} gives {p_len}")
    if flatmap.edges.shape != mesh.edges.shape or not np.array_equal(flatmap.edges, mesh.edges):
        raise ValueError("flat map adjacency does not match the mesh")
    x = mesh_patches(vol, mesh, size, cfg.step_mm)
    p = predict_tlink_batch(tnet, x)
    t0, t1 = tlink_weights(p[:, 0], p[:, 1], cfg.eps)
    if cfg.exclude:
        ex = np.asarray(cfg.exclude, dtype=np.int64)
        t0[ex] = 0.0
        t1[ex] = -np.log(cfg.eps)
    u, v = flatmap.edges[:, 0], flatmap.edges[:, 1]
    w = predict_nlink_batch(nnet, x[u], x[v], flatmap.edge_lengths)
    return SegGraph(mesh.n_vertices, t0, t1, flatmap.edges, w, cfg.lam), p


def report(g, labels, flow=None):
    unary, pair = energy_terms(g, labels)
    out = {
        "lambda": g.lam,
        "energy": unary + g.lam * pair,
        "unary": unary,
        "pairwise": pair,
        "pairwise_scaled": g.lam * pair,
        "cut_edges": cut_edge_count(g, labels),
        "n_nodes": g.n_nodes,
        "n_edges": int(len(g.edges)),
    }
    if flow is not None:
        out["flow"] = flow
        out["constant"] = float(np.sum(np.minimum(g.t0, g.t1)))
    return out


@dataclass
class SegmentResult:
    labels: np.ndarray
    graph: SegGraph
    probs: np.ndarray
    report: dict
    case: object = None


def segment_case(case, tnet, nnet, cfg=SegmentConfig()):
    """Min-cut labelling of a prepared case (see :func:`scarcut.case.prepare_case`)."""
    g, probs = build_seg_graph(case.mesh, case.flatmap, case.volume, tnet, nnet, cfg)
    labels, flow = min_cut(g)
    return SegmentResult(labels, g, probs, report(g, labels, flow), case)


def segment(img, lab, tnet, nnet, cfg=SegmentConfig(), case_cfg=CaseConfig()):
    """Full test path: normalize, mesh, flatten, weight the graph and cut it."""
    return segment_case(prepare_case(img, lab, case_cfg), tnet, nnet, cfg)
