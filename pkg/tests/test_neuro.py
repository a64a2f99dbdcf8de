import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chanrobust.errors import ShapeMismatch, ValidationError
from chanrobust.neuro import Adam, Checkpoint, ModelConfig, ModelGraph, Tensor, attentive_pool, grad_check, grl
from chanrobust.neuro import autograd as ag
from chanrobust.neuro.checkpoint import CheckpointError
from chanrobust.neuro.layers import AttentivePool, Conv1d, ItemNorm, Linear, ResBlock

TOY = ModelConfig(in_dims=60, widths=(4, 6, 8), embedding_dim=5, n_channels=3, ch_hidden=7)


def toy_batch(b=2, t=32, seed=0):
    return np.random.default_rng(seed).standard_normal((b, t, 60))


def test_grl_forward_identity_and_backward():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    y = grl(x, 0.5)
    assert np.sum(np.abs(y.data - x.data)) == 0
    y.backward(np.array([0.2, 0.4]))
    np.testing.assert_array_equal(x.grad, [-0.1, -0.2])


def test_grl_zero_lambda_detaches():
    x = Tensor(np.array([3.0, 4.0]), requires_grad=True)
    grl(x, 0.0).backward(np.array([1.0, 1.0]))
    assert np.all(x.grad == 0)
    with pytest.raises(ValueError):
        grl(x, -1.0)


def test_attentive_pool_oracle():
    rng = np.random.default_rng(3)
    h = rng.standard_normal((5, 4))
    W, b, v = rng.standard_normal((4, 3)), rng.standard_normal(3), rng.standard_normal(3)
    scores = [sum(v[a] * np.tanh(sum(h[t, c] * W[c, a] for c in range(4)) + b[a]) for a in range(3))
              for t in range(5)]
    m = max(scores)
    e = [np.exp(s - m) for s in scores]
    weights = [x / sum(e) for x in e]
    expected = [sum(weights[t] * h[t, c] for t in range(5)) for c in range(4)]
    np.testing.assert_allclose(attentive_pool(h, W, b, v), expected, atol=1e-12, rtol=0)

    layer = AttentivePool(4, 3, rng)
    layer.W.data, layer.b.data, layer.v.data = W, b, v
    out = layer(Tensor(h.T[None]))
    np.testing.assert_allclose(out.data[0], expected, atol=1e-12, rtol=0)


def test_attentive_pool_trivial_cases():
    rng = np.random.default_rng(0)
    W, b, v = rng.standard_normal((3, 2)), rng.standard_normal(2), rng.standard_normal(2)
    frame = np.array([0.5, -1.0, 2.0])
    np.testing.assert_allclose(attentive_pool(np.tile(frame, (7, 1)), W, b, v), frame, atol=1e-15)
    np.testing.assert_allclose(attentive_pool(frame[None], W, b, v), frame, atol=1e-15)


def test_embed_determinism_and_equivariance():
    g = ModelGraph(TOY, seed=1)
    x = toy_batch(4)
    x[1] = x[0]
    e = g.embed(x).data
    np.testing.assert_array_equal(e[0], e[1])
    perm = np.array([2, 0, 3, 1])
    np.testing.assert_allclose(g.embed(x[perm]).data, e[perm], atol=1e-13)
    # batch companions do not matter
    np.testing.assert_allclose(g.embed(x[2:3]).data[0], e[2], atol=1e-13)
    assert np.all(np.isfinite(e))


def test_embed_shape_errors():
    g = ModelGraph(TOY)
    with pytest.raises(ShapeMismatch):
        g.embed(np.zeros((2, 32, 59)))
    with pytest.raises(ShapeMismatch):
        g.embed(np.zeros(60))


def test_model_config_validation():
    with pytest.raises(ValidationError):
        ModelConfig(embedding_dim=1)
    with pytest.raises(ValidationError):
        ModelConfig(n_channels=1)
    assert ModelConfig.from_json(TOY.to_json()) == TOY


def test_jvp_matches_finite_difference():
    cfg = ModelConfig(widths=(4, 4, 4), embedding_dim=5)
    g = ModelGraph(cfg, seed=2)
    rng = np.random.default_rng(5)
    x0 = toy_batch(2, 24, seed=6)
    v = rng.standard_normal(x0.shape)
    u = rng.standard_normal((2, 5))
    # reverse mode gives u . J v via the input gradient
    xt = Tensor(x0, requires_grad=True)
    (g.embed(xt) * u).sum().backward()
    analytic = float(np.sum(xt.grad * v))
    h = 1e-5
    numeric = float(np.sum(u * (g.embed(x0 + h * v).data - g.embed(x0 - h * v).data)) / (2 * h))
    assert abs(analytic - numeric) / max(abs(analytic), abs(numeric)) < 1e-4


def test_linear_squared_loss_gradcheck():
    rng = np.random.default_rng(0)
    lin = Linear(4, 3, rng)
    x, y = rng.standard_normal((5, 4)), rng.standard_normal((5, 3))
    params = lin.named_parameters()
    rep = grad_check(params, lambda: ((lin(Tensor(x)) - y) * (lin(Tensor(x)) - y)).sum(), tol=1e-7)
    assert rep.passed, rep.worst()


@pytest.mark.parametrize("make", [
    lambda rng: (Conv1d(3, 4, 3, rng, stride=2, bias=True), (2, 3, 9)),
    lambda rng: (ItemNorm(3), (2, 3, 6)),
    lambda rng: (ResBlock(3, 5, 3, 2, rng), (2, 3, 8)),
    lambda rng: (ResBlock(3, 3, 3, 1, rng), (2, 3, 8)),
    lambda rng: (AttentivePool(3, 4, rng), (2, 3, 6)),
])
def test_layer_gradients(make):
    rng = np.random.default_rng(1)
    layer, shape = make(rng)
    # perturb norm affine params away from (1, 0) so their gradients are generic
    for p in layer.named_parameters().values():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    x = Tensor(rng.standard_normal(shape), requires_grad=True)
    target = rng.standard_normal(layer(x).shape)
    params = {**layer.named_parameters(), "input": x}
    rep = grad_check(params, lambda: (ag.tanh(layer(x)) * target).sum(), max_per_param=20)
    assert rep.passed, rep.worst()


@pytest.mark.parametrize("op", [
    lambda a, b: ag.div(a, ag.add(ag.exp(b), 1.0)),
    lambda a, b: ag.log(ag.add(ag.mul(a, a), 1.0)),
    lambda a, b: ag.softplus(ag.mul(a, 3.0)),
    lambda a, b: ag.softmax(a, axis=1) * b,
    lambda a, b: ag.l2_normalize(a, axis=1) * b,
    lambda a, b: ag.transpose(ag.reshape(a, (3, 4)), (1, 0)),
    lambda a, b: ag.matmul(a, ag.transpose(b, (1, 0))),
    lambda a, b: ag.mean(a, axis=0, keepdims=True) - b,
])
def test_elementary_op_gradients(op):
    rng = np.random.default_rng(2)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    w = rng.standard_normal(op(a, b).shape)
    rep = grad_check({"a": a, "b": b}, lambda: (op(a, b) * w).sum())
    assert rep.passed, rep.worst()


def test_frozen_parameter_gets_zero_gradient():
    rng = np.random.default_rng(0)
    used = Tensor(rng.standard_normal(3), requires_grad=True)
    frozen = Tensor(rng.standard_normal(3), requires_grad=True)
    rep = grad_check({"used": used, "frozen": frozen}, lambda: (used * used).sum())
    assert rep.per_param["frozen"] == 0.0
    (used * used).sum().backward()
    assert frozen.grad is None


def test_backward_clears_intermediates():
    x = Tensor(np.ones(3), requires_grad=True)
    mid = x * 2.0
    (mid * mid).sum().backward()
    assert mid.grad is None
    np.testing.assert_array_equal(x.grad, [8.0, 8.0, 8.0])
    x.grad = None
    mid = x * 2.0
    (mid * mid).sum().backward(keep_intermediate=True)
    np.testing.assert_array_equal(mid.grad, [4.0, 4.0, 4.0])


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(3, 10), st.integers(1, 2), st.integers(0, 2))
def test_conv1d_matches_loop(b, t, stride, padding):
    rng = np.random.default_rng(t * 7 + stride)
    x = rng.standard_normal((b, 2, t))
    w = rng.standard_normal((3, 2, 3))
    if t + 2 * padding < 3:
        return
    out = ag.conv1d(Tensor(x), Tensor(w), None, stride, padding).data
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    n_out = (t + 2 * padding - 3) // stride + 1
    ref = np.zeros((b, 3, n_out))
    for i in range(b):
        for o in range(3):
            for j in range(n_out):
                ref[i, o, j] = np.sum(w[o] * xp[i, :, j * stride : j * stride + 3])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    g = ModelGraph(TOY, seed=4)
    ck = Checkpoint.from_model(g, epoch=7, val_loss=0.25)
    path = tmp_path / "m.spck"
    ck.save(path)
    assert path.read_bytes()[:4] == b"SPCK"
    back = Checkpoint.load(path)
    assert back.epoch == 7 and back.val_loss == 0.25 and back.config == TOY
    x = toy_batch(3)
    m1, m2 = ck.to_model(), back.to_model()
    np.testing.assert_array_equal(m1.embed(x).data, m2.embed(x).data)
    np.testing.assert_array_equal(m1.cm_scores(m1.embed(x)).data, m2.cm_scores(m2.embed(x)).data)


def test_checkpoint_rejects_corruption(tmp_path):
    path = tmp_path / "m.spck"
    Checkpoint.from_model(ModelGraph(TOY)).save(path)
    blob = path.read_bytes()
    (tmp_path / "bad.spck").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        Checkpoint.load(tmp_path / "bad.spck")
    (tmp_path / "short.spck").write_bytes(blob[:-10])
    with pytest.raises(CheckpointError):
        Checkpoint.load(tmp_path / "short.spck")


def test_parameter_groups_and_seeding():
    g = ModelGraph(TOY, seed=3)
    names = g.named_parameters()
    assert set(names) == set(g.group("embedder")) | set(g.group("cm")) | set(g.group("ch"))
    # adding the channel head leaves the embedder and cm initialisation untouched
    plain = ModelGraph(ModelConfig(widths=(4, 6, 8), embedding_dim=5), seed=3)
    for k, v in plain.named_parameters().items():
        np.testing.assert_array_equal(v.data, names[k].data)


def test_adam_step_matches_formula():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    p.grad = np.array([0.5, -0.25])
    opt.step()
    # first step moves each coordinate by lr * sign(g) up to eps
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-7)
