import numpy as np
import pytest

from oracles import random_seg_graph
from scarcut.graphcut import (
    EPS,
    SegGraph,
    SegmentConfig,
    brute_force_min,
    build_seg_graph,
    cut_edge_count,
    energy,
    energy_terms,
    min_cut,
    tlink_weights,
)
from scarcut.maxflow import FlowGraph
from scarcut.neural import Mlp, PairNet


def chain(n, t0, t1, w, lam):
    return SegGraph(n, t0, t1, [(i, i + 1) for i in range(n - 1)], w, lam)


def test_decoupled_energy_at_lambda_zero():
    rng = np.random.default_rng(0)
    g = random_seg_graph(rng, 10, lam=0.0)
    l = (g.t1 < g.t0).astype(int)
    assert energy(g, l) == pytest.approx(np.minimum(g.t0, g.t1).sum())


def test_two_node_hand_example():
    g = SegGraph(2, [0.0, 1.0], [1.0, 0.0], [(0, 1)], [1.0], 1.0)
    assert energy(g, [0, 1]) == 1.0
    assert energy(g, [0, 0]) == 1.0


def test_uniform_labelling_has_no_pairwise_cost():
    g = random_seg_graph(np.random.default_rng(1), 9)
    for c in (0, 1):
        assert energy_terms(g, np.full(9, c))[1] == 0.0


def test_min_cut_matches_brute_force_on_random_graphs():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(2, 17))
        g = random_seg_graph(rng, n, lam=float(rng.choice([0.3, 0.6, 1.0])))
        labels, flow = min_cut(g)
        best, _ = brute_force_min(g)
        e = energy(g, labels)
        assert abs(e - best) <= 1e-9 * max(1.0, abs(best))
        assert e == pytest.approx(flow + np.minimum(g.t0, g.t1).sum(), rel=1e-9)


def test_cut_edges_weakly_decrease_with_lambda():
    rng = np.random.default_rng(5)
    for _ in range(20):
        g = random_seg_graph(rng, 14)
        counts = [cut_edge_count(g, min_cut(g.with_lambda(lam))[0]) for lam in (0, 0.3, 0.6, 1.0, 10)]
        assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_min_cut_beats_random_labellings():
    rng = np.random.default_rng(6)
    g = random_seg_graph(rng, 40, density=0.2)
    e = energy(g, min_cut(g)[0])
    rand = rng.integers(0, 2, size=(1000, 40))
    assert all(e <= energy(g, l) + 1e-12 for l in rand)


def test_lambda_zero_ties_go_to_background():
    g = SegGraph(4, [1.0, 2.0, 0.5, 3.0], [1.0, 1.0, 0.5, 4.0], [(0, 1), (1, 2)], [1.0, 1.0], 0.0)
    labels, _ = min_cut(g)
    assert labels.tolist() == [0, 1, 0, 0]


def test_huge_lambda_gives_constant_labelling():
    rng = np.random.default_rng(7)
    t0, t1 = rng.uniform(0, 1, 12), rng.uniform(0, 1, 12)
    g = chain(12, t0, t1, np.ones(11), 1e6)
    labels, _ = min_cut(g)
    expect = 0 if t0.sum() <= t1.sum() else 1
    assert np.all(labels == expect)


def test_tlink_weights_from_probabilities():
    t0, t1 = tlink_weights(np.array([EPS, 0.5]), np.array([1 - EPS, 0.5]))
    assert t1[0] == pytest.approx(0.0, abs=1e-5)
    assert t0[0] == pytest.approx(-np.log(1e-6)) and t0[0] == pytest.approx(13.8155, abs=1e-4)
    assert t0[1] == t1[1] == pytest.approx(np.log(2))
    t0, _ = tlink_weights(np.array([0.0]), np.array([1.0]))
    assert np.isfinite(t0[0])


def test_zero_similarity_equals_lambda_zero_labelling():
    rng = np.random.default_rng(8)
    g = random_seg_graph(rng, 15)
    g = SegGraph(g.n_nodes, g.t0, g.t1, g.edges, np.zeros(len(g.edges)), 0.6)
    assert np.array_equal(min_cut(g)[0], min_cut(g.with_lambda(0.0))[0])


@pytest.mark.parametrize("bad", [
    dict(w=[-1.0]), dict(t0=[-0.1, 0.0]), dict(lam=-1.0), dict(edges=[(0, 0)]), dict(w=[np.inf]),
])
def test_invalid_graphs_rejected(bad):
    args = dict(n_nodes=2, t0=[0.0, 1.0], t1=[1.0, 0.0], edges=[(0, 1)], w=[1.0], lam=0.6)
    args.update(bad)
    with pytest.raises(ValueError):
        SegGraph(**args)


def test_duplicate_edge_rejected():
    with pytest.raises(ValueError):
        SegGraph(3, np.zeros(3), np.zeros(3), [(0, 1), (1, 0)], [1.0, 1.0])


def test_maxflow_textbook_network():
    fg = FlowGraph(6)
    for u, v, c in [(0, 1, 16), (0, 2, 13), (1, 2, 10), (2, 1, 4), (1, 3, 12), (3, 2, 9), (2, 4, 14),
                    (4, 3, 7), (3, 5, 20), (4, 5, 4)]:
        fg.add_edge(u, v, c)
    assert fg.max_flow(0, 5) == pytest.approx(23.0)


def constant_nets(p_scar, sim, n_in):
    logit = np.log(p_scar / (1 - p_scar))
    tnet = Mlp([np.zeros((n_in, 2))], [np.array([0.0, logit])], "softmax")
    enc = Mlp([np.zeros((n_in, 2))], [np.zeros(2)], "relu")
    head = Mlp([np.zeros((5, 1))], [np.array([np.log(sim / (1 - sim))])], "logistic")
    return tnet, PairNet(enc, head)


def test_build_seg_graph_weights(small_phantom):
    from scarcut.flatmap import equidistant_project
    _, img, _, mesh = small_phantom
    fm = equidistant_project(mesh, 0)
    tnet, nnet = constant_nets(0.8, 0.3, 27)
    g, p = build_seg_graph(mesh, fm, img, tnet, nnet, SegmentConfig(size=(3, 3, 3)))
    np.testing.assert_allclose(p[:, 1], 0.8)
    np.testing.assert_allclose(g.t0, -np.log(0.2))
    np.testing.assert_allclose(g.t1, -np.log(0.8))
    np.testing.assert_allclose(g.w, 0.3)
    assert g.lam == 0.6 and np.array_equal(g.edges, mesh.edges)
    with pytest.raises(ValueError):
        build_seg_graph(mesh, fm, img, tnet, nnet, SegmentConfig(size=(3, 3, 5)))


def test_segment_noiseless_phantoms_reach_090(noiseless_suite):
    from scarcut.evaluation import compute_metrics
    from scarcut.graphcut import segment_case
    from scarcut.neural import load_model
    from scarcut.pipeline import Runner, read_seg_documents

    cfg, out, _ = noiseless_suite
    docs = read_seg_documents(out / "seg.json")
    for doc in docs:
        assert compute_metrics(doc["labels"], doc["gt"]).dice >= 0.90
    r = Runner(cfg, out)
    res = segment_case(r.case(r.role("test")[0]), load_model(out / "tnet.bin"), load_model(out / "nnet.bin"),
                       cfg.segment_config())
    assert res.labels.tolist() == docs[0]["labels"]
