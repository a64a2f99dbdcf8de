import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chanrobust.errors import DegenerateEmbedding, LabelOutOfRange, ValidationError
from chanrobust.losses import (
    CompositeWeights,
    OcSoftmaxParams,
    adv_objective,
    cross_entropy,
    mt_objective,
    oc_softmax,
    oc_softmax_from_cos,
)
from chanrobust.neuro import ModelConfig, ModelGraph, Tensor, grad_check
from chanrobust.neuro import autograd as ag


def _emb_with_cos(c, d=4):
    """Unit embedding at cosine c to the first axis."""
    e = np.zeros(d)
    e[0], e[1] = c, math.sqrt(max(0.0, 1 - c * c))
    return e[None], np.eye(d)[0]


def test_margin_boundaries_give_log2():
    emb, w = _emb_with_cos(0.9)
    loss, _ = oc_softmax(emb, [1], w)
    assert loss.item() == pytest.approx(math.log(2), abs=1e-12)
    emb, w = _emb_with_cos(0.2)
    loss, _ = oc_softmax(emb, ["spoof"], w)
    assert loss.item() == pytest.approx(math.log(2), abs=1e-12)


def test_perfect_bonafide_value():
    emb, w = _emb_with_cos(1.0)
    loss, cos = oc_softmax(emb, [True], w)
    assert cos.data[0] == pytest.approx(1.0)
    assert loss.item() == pytest.approx(math.log1p(math.exp(-2.0)), abs=1e-12)
    assert loss.item() == pytest.approx(0.12693, abs=1e-5)


def test_scores_are_scale_invariant():
    rng = np.random.default_rng(0)
    emb, w = rng.standard_normal((6, 5)), rng.standard_normal(5)
    _, c1 = oc_softmax(emb, np.arange(6) % 2, w)
    _, c2 = oc_softmax(emb * 37.5, np.arange(6) % 2, w * 0.01)
    np.testing.assert_allclose(c1.data, c2.data, atol=1e-14)


def test_oc_softmax_monotone_in_cos():
    cs = np.linspace(-0.99, 0.99, 50)
    bona = [oc_softmax_from_cos(Tensor(np.array([c])), [1]).item() for c in cs]
    spoof = [oc_softmax_from_cos(Tensor(np.array([c])), [0]).item() for c in cs]
    assert np.all(np.diff(bona) < 0)
    assert np.all(np.diff(spoof) > 0)


def test_oc_softmax_errors_and_params():
    with pytest.raises(DegenerateEmbedding):
        oc_softmax(np.zeros((1, 3)), [1], np.ones(3))
    with pytest.raises(ValidationError):
        OcSoftmaxParams(m_bonafide=0.2, m_spoof=0.9)
    with pytest.raises(ValidationError):
        OcSoftmaxParams(alpha=0)
    with pytest.raises(ValidationError):
        CompositeWeights(-0.1)


def test_oc_softmax_extreme_cos_is_finite():
    # alpha large enough to overflow a naive exp
    p = OcSoftmaxParams(alpha=1000.0)
    loss = oc_softmax_from_cos(Tensor(np.array([-1.0, 1.0])), [1, 0], p)
    assert np.isfinite(loss.item()) and loss.item() == pytest.approx(0.5 * (1900 + 800), rel=1e-12)


def test_cross_entropy_uniform_and_saturation():
    assert cross_entropy(np.zeros((3, 11)), [0, 5, 10]).item() == pytest.approx(math.log(11), abs=1e-12)
    assert cross_entropy(np.zeros((1, 11)), [0]).item() == pytest.approx(2.3979, abs=1e-4)
    logits = np.zeros((2, 4))
    logits[0, 1] = logits[1, 3] = 1000.0
    v = cross_entropy(logits, [1, 3]).item()
    assert np.isfinite(v) and 0 <= v < 1e-6


def test_cross_entropy_high_precision_oracle():
    rng = np.random.default_rng(9)
    logits = rng.standard_normal((4, 5)) * 3
    labels = np.array([0, 4, 2, 2])
    mpmath.mp.dps = 40
    ref = mpmath.mpf(0)
    for row, y in zip(logits, labels):
        lse = mpmath.log(mpmath.fsum(mpmath.exp(mpmath.mpf(float(v))) for v in row))
        ref += lse - mpmath.mpf(float(row[y]))
    ref /= 4
    assert abs(cross_entropy(logits, labels).item() - float(ref)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.floats(-50, 50), st.integers(0, 1000))
def test_cross_entropy_shift_invariance(k, shift, seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((3, k))
    labels = rng.integers(0, k, 3)
    a = cross_entropy(logits, labels).item()
    b = cross_entropy(logits + shift, labels).item()
    assert a >= 0
    assert abs(a - b) < 1e-9


def test_cross_entropy_label_range():
    with pytest.raises(LabelOutOfRange):
        cross_entropy(np.zeros((2, 3)), [0, 3])
    with pytest.raises(LabelOutOfRange):
        cross_entropy(np.zeros((1, 3)), [-1])


def test_mt_objective_arithmetic():
    w = CompositeWeights(0.1)
    assert mt_objective(Tensor(0.5), Tensor(0.2), w).item() == pytest.approx(0.52, abs=1e-15)
    assert mt_objective(Tensor(0.5), Tensor(0.2), CompositeWeights(0.0)).item() == 0.5


TOY = ModelConfig(widths=(4, 4), embedding_dim=6, n_channels=3, ch_hidden=5)


def _toy_losses(model, x, keys, ch, reverse=False, lam=None):
    emb = model.embed(x)
    l_cm, _ = oc_softmax(emb, keys, model.cm_w)
    l_ch = cross_entropy(model.channel_logits(emb, reverse=reverse, lam=lam), ch)
    return l_cm, l_ch


def _grads(model, loss):
    model.zero_grad()
    loss.backward()
    return {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
            for k, p in model.named_parameters().items()}


@pytest.fixture
def toy():
    rng = np.random.default_rng(4)
    return (ModelGraph(TOY, seed=5), rng.standard_normal((3, 20, 60)),
            np.array([1, 0, 1]), np.array([0, 2, 1]))


def test_mt_gradient_is_sum_of_terms(toy):
    model, x, keys, ch = toy
    lam = 0.3
    g_cm = _grads(model, _toy_losses(model, x, keys, ch)[0])
    g_ch = _grads(model, _toy_losses(model, x, keys, ch)[1])
    g_mt = _grads(model, mt_objective(*_toy_losses(model, x, keys, ch), CompositeWeights(lam)))
    for k in g_mt:
        np.testing.assert_allclose(g_mt[k], g_cm[k] + lam * g_ch[k], atol=1e-13)


def test_adv_gradients_are_reversed_on_embedder_only(toy):
    model, x, keys, ch = toy
    lam = 0.4
    plain = _grads(model, _toy_losses(model, x, keys, ch)[1])
    reversed_ = _grads(model, _toy_losses(model, x, keys, ch, reverse=True, lam=lam)[1])
    for k in model.group("embedder"):
        np.testing.assert_allclose(reversed_[k], -lam * plain[k], atol=1e-10, rtol=0)
    for k in model.group("ch"):
        np.testing.assert_array_equal(reversed_[k], plain[k])


def test_adv_objective_fields_and_lambda_zero(toy):
    model, x, keys, ch = toy
    l_cm, l_ch = _toy_losses(model, x, keys, ch, reverse=True, lam=0.2)
    obj = adv_objective(l_cm, l_ch, CompositeWeights(0.2))
    assert obj.total.item() == pytest.approx(l_cm.item() + l_ch.item())
    assert obj.embedder_objective == pytest.approx(l_cm.item() - 0.2 * l_ch.item())
    assert obj.channel_head_objective == l_ch.item()

    aug = _grads(model, _toy_losses(model, x, keys, ch)[0])
    adv = _grads(model, adv_objective(*_toy_losses(model, x, keys, ch, reverse=True, lam=0.0),
                                      CompositeWeights(0.0)).total)
    mt = _grads(model, mt_objective(*_toy_losses(model, x, keys, ch), CompositeWeights(0.0)))
    for k in list(model.group("embedder")) + ["cm.w"]:
        np.testing.assert_array_equal(adv[k], aug[k])
        np.testing.assert_array_equal(mt[k], aug[k])
    # the channel head still learns at lambda = 0
    assert any(np.any(adv[k] != 0) for k in model.group("ch"))


@pytest.mark.parametrize("objective", ["vanilla", "mt", "adv"])
def test_composite_gradcheck(toy, objective):
    model, x, keys, ch = toy

    def loss():
        if objective == "vanilla":
            return _toy_losses(model, x, keys, ch)[0]
        if objective == "mt":
            return mt_objective(*_toy_losses(model, x, keys, ch), CompositeWeights(0.3))
        # GRL flips theta_e gradients, so check against the explicit embedder objective
        l_cm, l_ch = _toy_losses(model, x, keys, ch, reverse=True, lam=0.3)
        return adv_objective(l_cm, l_ch, CompositeWeights(0.3)).total

    params = model.named_parameters()
    if objective == "adv":
        params = {k: v for k, v in params.items() if k.startswith(("ch.", "cm."))}
    rep = grad_check(params, loss, max_per_param=6)
    assert rep.passed, rep.worst()


def test_adv_embedder_gradient_matches_embedder_objective(toy):
    model, x, keys, ch = toy
    lam = 0.3
    g = _grads(model, adv_objective(*_toy_losses(model, x, keys, ch, reverse=True, lam=lam),
                                    CompositeWeights(lam)).total)

    def embedder_objective():
        l_cm, l_ch = _toy_losses(model, x, keys, ch)
        return ag.sub(l_cm, ag.mul(l_ch, lam))

    params = model.group("embedder")
    rng = np.random.default_rng(0)
    h = 1e-5
    for name in list(params)[:6]:
        flat = params[name].data.reshape(-1)
        i = int(rng.integers(flat.size))
        orig = flat[i]
        flat[i] = orig + h
        up = embedder_objective().item()
        flat[i] = orig - h
        down = embedder_objective().item()
        flat[i] = orig
        num = (up - down) / (2 * h)
        ana = g[name].reshape(-1)[i]
        assert abs(ana - num) / max(abs(ana), abs(num), 1e-8) < 1e-4
