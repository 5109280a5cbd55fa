import numpy as np
import pytest

from qat import autodiff as ad
from qat.matching import OMEGA1, OMEGA2, RpbMask
from qat.rasa import KG, LM, RasaStack, TokenSet, layer_forward, stack_forward

from oracles import single_head_layer


def tokens(rng, n_lm, n_kg, d):
    x = ad.Tensor(rng.standard_normal((n_lm + n_kg, d)))
    return TokenSet(x, [LM] * n_lm + [KG] * n_kg, [f"t{i}" for i in range(n_lm + n_kg)])


def randomize(stack, rng, scale=0.5):
    for _, p in stack.named_parameters():
        p.data[...] = rng.standard_normal(p.shape) * scale


def oracle_params(stack, l=0):
    layer = stack.layers[l]
    get = lambda t: t.data.tolist()
    return {
        "ln1_gain": get(layer.ln1.gain), "ln1_bias": get(layer.ln1.bias),
        "ln2_gain": get(layer.ln2.gain), "ln2_bias": get(layer.ln2.bias),
        "modality": get(stack.modality.table),
        "wq": get(layer.wq), "wk": get(layer.wk), "wv": get(layer.wv),
        "out_w": get(layer.out.weight), "out_b": get(layer.out.bias),
        "fc1_w": get(layer.ffn.fc1.weight), "fc1_b": get(layer.ffn.fc1.bias),
        "fc2_w": get(layer.ffn.fc2.weight), "fc2_b": get(layer.ffn.fc2.bias),
    }


def test_matches_dense_loop_oracle():
    rng = np.random.default_rng(0)
    stack = RasaStack(rng, 4, 1, 1)
    randomize(stack, rng)
    ts = tokens(rng, 4, 2, 4)
    mask = RpbMask(4, 2, {(4, 1): OMEGA1, (5, 2): OMEGA1, (1, 4): OMEGA2, (3, 5): OMEGA2})
    stack.omega.omega1.data[:] = 0.7
    stack.omega.omega2.data[:] = -0.4
    out = layer_forward(ts, stack, 0, mask)
    m1, m2 = mask.selectors()
    omega = (0.7 * m1 - 0.4 * m2).tolist()
    z, w = single_head_layer(ts.embeddings.data.tolist(), ts.modality.tolist(), oracle_params(stack), omega)
    np.testing.assert_allclose(out.embeddings.data, z, rtol=0, atol=1e-10)
    np.testing.assert_allclose(out.attention[0][0], w, rtol=0, atol=1e-10)


def test_zero_omega_equals_no_bias():
    rng = np.random.default_rng(1)
    stack = RasaStack(rng, 8, 1, 2)
    ts = tokens(rng, 3, 3, 8)
    mask = RpbMask(3, 3, {(3, 1): OMEGA1, (0, 5): OMEGA2})
    a = layer_forward(ts, stack, 0, mask).embeddings.data
    b = layer_forward(ts, stack, 0, None).embeddings.data
    np.testing.assert_array_equal(a, b)


def test_single_token_attends_to_itself():
    rng = np.random.default_rng(2)
    stack = RasaStack(rng, 6, 1, 2)
    ts = tokens(rng, 1, 0, 6)
    layer = stack.layers[0]
    x = ad.reshape(ts.embeddings, (1, 1, 6))
    h = layer.ln1(x)
    out, w = layer.attention(ad.add(h, stack.modality(ts.modality[None])), h, None, None)
    np.testing.assert_array_equal(w.data, np.ones((1, 2, 1, 1)))
    expect = layer.out(ad.matmul(h, layer.wv)).data
    np.testing.assert_allclose(out.data, expect, rtol=0, atol=1e-14)


def test_zero_layers_identity():
    rng = np.random.default_rng(3)
    ts = tokens(rng, 2, 2, 4)
    out = stack_forward(ts, RasaStack(rng, 4, 0, 2))
    assert out.embeddings.data.tobytes() == ts.embeddings.data.tobytes()


def test_two_layers_compose():
    rng = np.random.default_rng(4)
    stack = RasaStack(rng, 8, 2, 2)
    stack.omega.omega1.data[:] = [[0.3, -0.2], [1.1, 0.4]]
    ts = tokens(rng, 3, 2, 8)
    mask = RpbMask(3, 2, {(3, 1): OMEGA1, (2, 4): OMEGA2})
    both = stack_forward(ts, stack, mask)
    step = layer_forward(layer_forward(ts, stack, 0, mask), stack, 1, mask)
    np.testing.assert_allclose(both.embeddings.data, step.embeddings.data, rtol=0, atol=1e-13)


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(5)
    stack = RasaStack(rng, 8, 2, 4)
    randomize(stack, rng, 1.0)
    out = stack_forward(tokens(rng, 5, 7, 8), stack, RpbMask(5, 7, {(6, 2): OMEGA1}))
    for w in out.attention:
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_kg_permutation_equivariance():
    rng = np.random.default_rng(6)
    stack = RasaStack(rng, 8, 2, 2)
    randomize(stack, rng)
    n_lm, n_kg = 4, 5
    ts = tokens(rng, n_lm, n_kg, 8)
    mask = RpbMask(n_lm, n_kg, {(4, 1): OMEGA1, (7, 2): OMEGA1, (8, 3): OMEGA1, (1, 5): OMEGA2, (2, 8): OMEGA2})
    perm = np.array([3, 0, 4, 1, 2])
    x = ts.embeddings.data
    xp = np.concatenate([x[:n_lm], x[n_lm:][perm]])
    tp = TokenSet(ad.Tensor(xp), ts.modality)
    a = stack_forward(ts, stack, mask).embeddings.data
    b = stack_forward(tp, stack, mask.permute_kg(perm)).embeddings.data
    np.testing.assert_allclose(b[:n_lm], a[:n_lm], rtol=0, atol=1e-9)
    np.testing.assert_allclose(b[n_lm:], a[n_lm:][perm], rtol=0, atol=1e-9)


def test_large_bias_dominates_row():
    rng = np.random.default_rng(7)
    stack = RasaStack(rng, 8, 1, 1)
    ts = tokens(rng, 3, 3, 8)
    mask = RpbMask(3, 3, {(4, 1): OMEGA1})
    weights = []
    for w in (0.0, 5.0, 30.0):
        stack.omega.omega1.data[:] = w
        weights.append(layer_forward(ts, stack, 0, mask).attention[0][0, 4, 1])
    assert weights[0] < weights[1] < weights[2]
    assert weights[2] > 1 - 1e-9


def test_token_set_order_enforced():
    with pytest.raises(ValueError):
        TokenSet(ad.Tensor(np.zeros((3, 2))), [LM, KG, LM])


def test_two_layer_two_head_gradients():
    rng = np.random.default_rng(8)
    stack = RasaStack(rng, 4, 2, 2, ffn_mult=2)
    stack.omega.omega1.data[:] = rng.standard_normal((2, 2)) * 0.3
    stack.omega.omega2.data[:] = rng.standard_normal((2, 2)) * 0.3
    x = ad.Parameter(rng.standard_normal((5, 4)), name="x")
    mask = RpbMask(3, 2, {(3, 1): OMEGA1, (4, 2): OMEGA1, (0, 3): OMEGA2})
    target = rng.standard_normal((5, 4))

    def f():
        ts = TokenSet(x, [LM, LM, LM, KG, KG])
        z = stack_forward(ts, stack, mask).embeddings
        return ad.tsum(ad.mul(ad.tanh(z), ad.Tensor(target)))

    params = {"x": x, **dict(stack.named_parameters())}
    rep = ad.grad_check(f, params)
    assert rep.passed, rep
