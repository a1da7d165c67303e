import numpy as np
import pytest

from qsynth.network import (
    Adam,
    NetConfig,
    PolicyValueNet,
    TrainBatch,
    TrainingDivergence,
    copy_net,
    gradient_check,
    load_checkpoint,
    loss,
    loss_and_grads,
    save_checkpoint,
    train_step,
)

TINY = NetConfig(dim=2, n_actions=4, channels=4, blocks=1, policy_channels=3, value_channels=2)


def random_batch(config, b, rng, legal_all=False):
    obs = rng.uniform(-1, 1, (b, 2, config.dim, config.dim))
    masks = np.ones((b, config.n_actions), dtype=bool)
    if not legal_all:
        masks[:, -1] = False
        masks[0, 0] = False
    t = rng.uniform(0.1, 1.0, (b, config.n_actions)) * masks
    t = t / t.sum(axis=1, keepdims=True)
    values = rng.uniform(-1, 1, b)
    return TrainBatch(obs=obs, policies=t, values=values, masks=masks)


def perturbed_net(config, seed=0, scale=0.05):
    # Random-ish parameters everywhere (incl. BN offsets) so gradient flow
    # through every layer is exercised.
    net = PolicyValueNet(config, rng=np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    for name, p in net.parameters().items():
        p += rng.normal(0, scale, p.shape)
    return net


def test_forward_shapes_and_masking():
    rng = np.random.default_rng(0)
    net = PolicyValueNet(TINY, rng=rng)
    batch = random_batch(TINY, 5, rng)
    p, v = net.forward(batch.obs, batch.masks)
    assert p.shape == (5, 4) and v.shape == (5,)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(p[~batch.masks] == 0.0)
    assert np.all(np.abs(v) <= 1.0)


def test_eval_mode_deterministic_and_batch_order_equivariant():
    rng = np.random.default_rng(1)
    net = perturbed_net(TINY, seed=1)
    batch = random_batch(TINY, 6, rng)
    p1, v1 = net.forward(batch.obs, batch.masks)
    p2, v2 = net.forward(batch.obs, batch.masks)
    assert np.array_equal(p1, p2) and np.array_equal(v1, v2)
    perm = rng.permutation(6)
    p3, v3 = net.forward(batch.obs[perm], batch.masks[perm])
    assert np.allclose(p3, p1[perm], atol=1e-12)
    assert np.allclose(v3, v1[perm], atol=1e-12)


def test_forward_rejects_bad_shapes():
    net = PolicyValueNet(TINY, rng=0)
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 2, 4, 4)), np.ones((1, 4), dtype=bool))
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 2, 2, 2)), np.ones((1, 7), dtype=bool))


def test_parameter_count_is_function_of_shape():
    a = PolicyValueNet(TINY, rng=0)
    b = PolicyValueNet(TINY, rng=123)
    assert a.n_parameters() == b.n_parameters()
    bigger = PolicyValueNet(NetConfig(dim=4, n_actions=12), rng=0)
    assert bigger.n_parameters() > a.n_parameters()


def test_loss_uniform_target_bound():
    # Loss with uniform target policy and value target 0 on a fresh init is
    # finite and below ln(actions) + 1 + l2 * (unit-scale weight count).
    rng = np.random.default_rng(3)
    net = PolicyValueNet(TINY, rng=rng)
    b = 8
    obs = rng.uniform(-1, 1, (b, 2, 2, 2))
    masks = np.ones((b, 4), dtype=bool)
    t = np.full((b, 4), 0.25)
    batch = TrainBatch(obs=obs, policies=t, values=np.zeros(b), masks=masks)
    val = loss(net, batch)
    n_weights = sum(net.parameters()[n].size for n in net.weight_names())
    assert np.isfinite(val)
    assert val <= np.log(4) + 1.0 + 1e-4 * n_weights


def test_l2_term_alone():
    # With all weights zeroed except k unit entries, the L2 term is 1e-4 * k.
    net = PolicyValueNet(TINY, rng=0)
    for name, p in net.parameters().items():
        p[...] = 0.0
    w = net.parameters()["policy.fc.w"]
    w.flat[:7] = 1.0
    batch = random_batch(TINY, 2, np.random.default_rng(0), legal_all=True)
    uniform = np.full((2, 4), 0.25)
    batch = TrainBatch(obs=batch.obs * 0, policies=uniform, values=np.zeros(2), masks=batch.masks)
    # zero observations + zero weights leave logits 0 => CE = ln 4, value = 0
    assert loss(net, batch) == pytest.approx(np.log(4) + 1e-4 * 7, abs=1e-9)


def test_gradient_check_tiny_net():
    rng = np.random.default_rng(11)
    net = perturbed_net(TINY, seed=11)
    batch = random_batch(TINY, 4, rng)
    err = gradient_check(net, batch, 60, rng)
    assert err < 1e-3


def test_gradient_check_batch_of_one_and_eight():
    for b, seed in ((1, 5), (8, 6)):
        rng = np.random.default_rng(seed)
        net = perturbed_net(TINY, seed=seed)
        batch = random_batch(TINY, b, rng)
        assert gradient_check(net, batch, 30, rng) < 1e-3


def test_gradient_check_linear_head_exact():
    # With the policy target equal to the prediction and value head linear in
    # its single weight coordinate, dense-layer gradients are exact to ~1e-6.
    rng = np.random.default_rng(7)
    net = perturbed_net(TINY, seed=7)
    batch = random_batch(TINY, 4, rng)
    _, grads = loss_and_grads(net, batch)
    p = net.parameters()["value.fc.b"]
    g = grads["value.fc.b"]
    h = 1e-6
    p[0] += h
    up = loss(net, batch)
    p[0] -= 2 * h
    down = loss(net, batch)
    p[0] += h
    numeric = (up - down) / (2 * h)
    assert abs(numeric - g[0]) / max(abs(g[0]), 1e-8) < 1e-5


def test_adam_converges_on_quadratic():
    # Scalar quadratic f(x) = (x - 3)^2 via the same update rule.
    class Shim:
        def parameters(self):
            return {"x": self.x}

        def __init__(self):
            self.x = np.array([0.0])

    shim = Shim()
    opt = Adam(shim, lr=1e-1)
    for _ in range(500):
        g = {"x": 2 * (shim.x - 3.0)}
        opt.update(shim.parameters(), g)
    assert abs(shim.x[0] - 3.0) < 1e-3


def test_train_step_decreases_loss_on_fixed_batch():
    rng = np.random.default_rng(13)
    net = PolicyValueNet(TINY, rng=rng)
    opt = Adam(net, lr=1e-3)
    batch = random_batch(TINY, 64 // 4, rng)
    first = loss(net, batch)
    last = None
    for _ in range(50):
        last = train_step(net, opt, batch)
    assert opt.step_count == 50
    assert last < first


def test_train_step_detects_divergence():
    rng = np.random.default_rng(17)
    net = PolicyValueNet(TINY, rng=rng)
    opt = Adam(net)
    batch = random_batch(TINY, 2, rng)
    net.parameters()["stem.conv.w"][...] = np.inf
    with pytest.raises(TrainingDivergence):
        train_step(net, opt, batch)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(19)
    net = perturbed_net(TINY, seed=19)
    opt = Adam(net, lr=3e-4)
    batch = random_batch(TINY, 4, rng)
    for _ in range(3):
        train_step(net, opt, batch)
    path = tmp_path / "ck.npz"
    save_checkpoint(path, net, opt, extra={"mu": 5, "note": "x"})
    net2, opt2, extra = load_checkpoint(path)
    assert extra == {"mu": 5, "note": "x"}
    for k, v in net.parameters().items():
        assert np.array_equal(net2.parameters()[k], v)
    for k, v in net.buffers().items():
        assert np.array_equal(net2.buffers()[k], v)
    assert opt2.step_count == opt.step_count
    for k in opt.m:
        assert np.array_equal(opt2.m[k], opt.m[k])
    # identical forwards after reload
    p1, v1 = net.forward(batch.obs, batch.masks)
    p2, v2 = net2.forward(batch.obs, batch.masks)
    assert np.array_equal(p1, p2) and np.array_equal(v1, v2)


def test_copy_net_is_independent():
    net = perturbed_net(TINY, seed=23)
    clone = copy_net(net)
    before = clone.parameters()["stem.conv.w"].copy()
    net.parameters()["stem.conv.w"][...] += 1.0
    assert np.array_equal(clone.parameters()["stem.conv.w"], before)
