import numpy as np
import pytest

from oracles import gradient_errors, random_nlink_problem, random_tlink_problem
from scarcut.neural import (
    Mlp,
    PairNet,
    TrainConfig,
    accuracy_tlink,
    init_mlp,
    load_model,
    mlp_forward,
    mlp_gradient,
    predict_nlink,
    predict_nlink_batch,
    predict_tlink,
    predict_tlink_batch,
    round_to_f32,
    save_model,
    train_nlink,
    train_tlink,
)


def zero_mlp(widths, head):
    return Mlp([np.zeros((a, b)) for a, b in zip(widths[:-1], widths[1:])], [np.zeros(b) for b in widths[1:]], head)


def test_zero_softmax_net_is_uniform():
    out, _ = mlp_forward(zero_mlp([4, 3, 2], "softmax"), np.ones(4))
    np.testing.assert_allclose(out, [0.5, 0.5])


def test_zero_logistic_net_is_half():
    out, _ = mlp_forward(zero_mlp([4, 3, 1], "logistic"), np.ones(4))
    np.testing.assert_allclose(out, [0.5])


def test_identity_layer_rectifies():
    net = Mlp([np.eye(2), np.eye(2)], [np.zeros(2), np.zeros(2)], "softmax")
    _, cache = mlp_forward(net, np.array([-1.0, 2.0]))
    np.testing.assert_array_equal(cache["acts"][1][0], [0.0, 2.0])


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        mlp_forward(zero_mlp([4, 2], "softmax"), np.ones(3))
    with pytest.raises(ValueError):
        Mlp([np.zeros((4, 3)), np.zeros((2, 2))], [np.zeros(3), np.zeros(2)])


@pytest.mark.parametrize("seed", range(5))
def test_tlink_gradient_matches_finite_differences(seed):
    net, x, y = random_tlink_problem(np.random.default_rng(seed))
    assert gradient_errors(net, x, y).max() <= 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_nlink_gradient_matches_finite_differences(seed):
    net, inputs, y = random_nlink_problem(np.random.default_rng(100 + seed))
    assert gradient_errors(net, inputs, y).max() <= 1e-4


def test_logistic_head_gradient():
    rng = np.random.default_rng(9)
    net = init_mlp([5, 4, 1], "logistic", rng, 1.5)
    x = rng.normal(size=(7, 5))
    assert gradient_errors(net, x, rng.random(7)).max() <= 1e-4


def test_saturated_correct_batch_is_nearly_stationary():
    w = np.array([[-40.0, 40.0]])
    net = Mlp([w], [np.zeros(2)], "softmax")
    x = np.array([[-1.0], [-2.0], [1.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    grads, loss = mlp_gradient(net, x, y)
    norm = np.sqrt(sum(np.sum(g**2) for g in grads))
    assert loss < 1e-12
    # loss scale: ln 2, the loss of an uninformed two-class net
    assert norm <= np.log(2) * 1e-3


def test_duplicated_batch_same_gradient():
    net, x, y = random_tlink_problem(np.random.default_rng(3))
    g1, l1 = mlp_gradient(net, x, y)
    g2, l2 = mlp_gradient(net, np.r_[x, x], np.r_[y, y])
    assert l1 == pytest.approx(l2, rel=1e-12)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_non_finite_inputs_rejected():
    net, x, y = random_tlink_problem(np.random.default_rng(3))
    x[0, 0] = np.nan
    with pytest.raises(ValueError):
        mlp_gradient(net, x, y)


def separable_set(rng, n=400, d=10):
    x = rng.normal(size=(n, d))
    y = (x.mean(axis=1) > 0).astype(int)
    return x, y


def test_separable_unary_toy_after_50_epochs():
    x, y = separable_set(np.random.default_rng(0))
    net, rep = train_tlink(x, y, hidden=(16,), cfg=TrainConfig(lr=0.05, epochs=50, rng_seed=1))
    assert accuracy_tlink(net, x, y) >= 0.98
    assert len(rep.losses) == 50


def test_training_is_deterministic():
    x, y = separable_set(np.random.default_rng(1), n=100)
    cfg = TrainConfig(lr=0.05, epochs=5, rng_seed=4)
    a, _ = train_tlink(x, y, hidden=(8,), cfg=cfg)
    b, _ = train_tlink(x, y, hidden=(8,), cfg=cfg)
    for p, q in zip(a.params(), b.params()):
        assert np.array_equal(p, q)


def pairwise_set(rng, n, d=8):
    a = rng.normal(size=(n, d)) + rng.choice([-1.0, 1.0], size=(n, 1))
    b = rng.normal(size=(n, d)) + rng.choice([-1.0, 1.0], size=(n, 1))
    sim = (np.sign(a.mean(1)) == np.sign(b.mean(1))).astype(float)
    return a, b, rng.uniform(0.5, 1.5, n), sim


def test_pairwise_toy_held_out_accuracy():
    rng = np.random.default_rng(2)
    a, b, d, s = pairwise_set(rng, 2000)
    net, _ = train_nlink(a, b, d, s, encoder=(16, 8), head_hidden=(16,),
                         cfg=TrainConfig(lr=0.05, epochs=40, rng_seed=0))
    ta, tb, td, ts = pairwise_set(rng, 500)
    acc = np.mean((predict_nlink_batch(net, ta, tb, td) > 0.5) == (ts == 1))
    assert acc >= 0.95
    x = ta[0]
    assert predict_nlink(net, x, x, 0.0) > 0.5


def test_nlink_symmetric_exactly():
    net, (a, b, d), _ = random_nlink_problem(np.random.default_rng(5))
    assert np.array_equal(predict_nlink_batch(net, a, b, d), predict_nlink_batch(net, b, a, d))
    assert predict_nlink(net, a[0], b[0], d[0]) == predict_nlink(net, b[0], a[0], d[0])


def test_tlink_probabilities_sum_to_one():
    net, x, _ = random_tlink_problem(np.random.default_rng(6))
    p = predict_tlink_batch(net, x)
    assert np.all(p > 0)
    assert np.max(np.abs(p.sum(axis=1) - 1)) <= 1e-12
    p0, p1 = predict_tlink(net, x[0])
    assert abs(p0 + p1 - 1) <= 1e-12


def test_convex_logistic_loss_decreases_as_lr_halves():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(200, 3))
    y = (x @ [1.0, -2.0, 0.5] + 0.3 * rng.normal(size=200) > 0).astype(int)
    net = init_mlp([3, 2], "softmax", np.random.default_rng(0), 0.0)
    lr, losses = 0.4, []
    for _ in range(12):
        grads, loss = mlp_gradient(net, x, y)
        losses.append(loss)
        for p, g in zip(net.params(), grads):
            p -= lr * g
        lr *= 0.5
    losses.append(mlp_gradient(net, x, y)[1])
    assert np.all(np.diff(losses) <= 1e-12)


def test_train_config_validation_and_empty_sets():
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        train_tlink(np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(ValueError):
        train_nlink(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros(0))


def test_validation_split_keeps_best_epoch():
    x, y = separable_set(np.random.default_rng(1), n=200)
    _, rep = train_tlink(x, y, hidden=(8,), cfg=TrainConfig(lr=0.05, epochs=6, val_fraction=0.25))
    assert len(rep.val_losses) == 6
    assert rep.best_epoch == int(np.argmin(rep.val_losses))


@pytest.mark.parametrize("kind", ["tlink", "nlink"])
def test_model_file_round_trip(tmp_path, kind):
    rng = np.random.default_rng(11)
    net = random_tlink_problem(rng)[0] if kind == "tlink" else random_nlink_problem(rng)[0]
    save_model(net, tmp_path / "net.bin")
    back = load_model(tmp_path / "net.bin")
    assert type(back) is type(net)
    ref = round_to_f32(net)
    for p, q in zip(ref.params(), back.params()):
        assert np.array_equal(p, q)
    if isinstance(net, PairNet):
        assert (back.dist_mean, back.dist_std) == (net.dist_mean, net.dist_std)


def test_model_file_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"garbage!" * 4)
    with pytest.raises(ValueError):
        load_model(tmp_path / "x.bin")
