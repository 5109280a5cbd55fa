import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qat import autodiff as ad
from qat.autodiff import Parameter, Tensor, grad_check


def P(rng, *shape, name=None):
    return Parameter(rng.standard_normal(shape), name=name)


def test_identity_matmul():
    a = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(2)), Tensor(a)).data, a)


def test_hand_matmul():
    # [[1, 2, 3], [4, 5, 6]] @ [[1], [0], [-1]] = [[1 - 3], [4 - 6]]
    a = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    b = Tensor([[1.0], [0.0], [-1.0]])
    np.testing.assert_array_equal(ad.matmul(a, b).data, [[-2.0], [-2.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(ad.ShapeMismatch):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ad.ShapeMismatch):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_grad_sum_of_product():
    rng = np.random.default_rng(0)
    a, b = P(rng, 3, 4), P(rng, 4, 2)
    ad.tsum(ad.matmul(a, b)).backward()
    np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T)


def test_shared_subexpression_accumulates():
    x = Parameter(np.array([2.0]))
    y = ad.mul(x, x)
    z = ad.add(y, y)  # 2 x^2
    z.backward(np.ones(1))
    np.testing.assert_allclose(x.grad, [8.0])


def test_softmax_closed_forms():
    np.testing.assert_allclose(ad.softmax_rows(Tensor(np.zeros((1, 5)))).data, 0.2)
    np.testing.assert_allclose(ad.softmax_rows(Tensor([[0.0, math.log(3.0)]])).data, [[0.25, 0.75]], rtol=1e-15)
    masked = ad.softmax_rows(Tensor([[1.0, -np.inf, 1.0]])).data
    np.testing.assert_array_equal(masked, [[0.5, 0.0, 0.5]])


@given(arrays(np.float64, (4, 4), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    out = ad.softmax_rows(Tensor(x)).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_layer_norm_cases():
    one, zero = Tensor(np.ones(2)), Tensor(np.zeros(2))
    np.testing.assert_array_equal(ad.layer_norm(Tensor([[3.0, 3.0]]), one, zero).data, [[0.0, 0.0]])
    np.testing.assert_allclose(ad.layer_norm(Tensor([[1.0, -1.0]]), one, zero, eps=0.0).data, [[1.0, -1.0]])


@given(arrays(np.float64, (7,), elements=st.floats(-100, 100)).filter(lambda r: np.ptp(r) > 1e-3))
def test_layer_norm_moments(row):
    out = ad.layer_norm(Tensor(row[None]), Tensor(np.ones(7)), Tensor(np.zeros(7)), eps=0.0).data[0]
    assert abs(out.mean()) <= 1e-12
    assert abs(out.var() - 1.0) <= 1e-9


def test_cross_entropy_cases():
    assert ad.cross_entropy(Tensor(np.zeros(5)), 2).item() == pytest.approx(math.log(5), abs=1e-15)
    assert ad.cross_entropy(Tensor([10.0, -10.0]), 0).item() == pytest.approx(0.0, abs=1e-4)
    with pytest.raises(ad.TargetOutOfRange):
        ad.cross_entropy(Tensor([0.0, 1.0]), 2)
    with pytest.raises(ad.TargetOutOfRange):
        ad.cross_entropy(Tensor([[0.0, -np.inf]]), [1])


def test_cross_entropy_gradient_matches_differences():
    rng = np.random.default_rng(3)
    z = P(rng, 6, name="z")
    rep = grad_check(lambda: ad.cross_entropy(z, 4), [z], tol=1e-5)
    assert rep.passed, rep


def test_batched_cross_entropy_is_row_mean():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 4))
    t = [0, 3, 1]
    rows = [ad.cross_entropy(Tensor(x[i]), t[i]).item() for i in range(3)]
    assert ad.cross_entropy(Tensor(x), t).item() == pytest.approx(np.mean(rows), rel=1e-14)


OPS = {
    "add": lambda a, b: ad.add(a, b),
    "sub": lambda a, b: ad.sub(a, b),
    "mul": lambda a, b: ad.mul(a, b),
    "matmul": lambda a, b: ad.matmul(a, ad.transpose(b)),
    "concat": lambda a, b: ad.concat([a, b], axis=1),
    "tanh": lambda a, b: ad.tanh(a),
    "log1p_abs": lambda a, b: ad.log1p_abs(ad.add(a, 0.05)),
    "gelu": lambda a, b: ad.gelu(a),
    "softmax": lambda a, b: ad.softmax(a, axis=-1),
    "log_softmax": lambda a, b: ad.log_softmax(a, axis=0),
    "layer_norm": lambda a, b: ad.layer_norm(a, b[0], b[1]),
    "scale": lambda a, b: ad.scale(a, -2.5),
    "reshape": lambda a, b: ad.reshape(a, (6, 2)),
    "index": lambda a, b: ad.index(a, (np.array([0, 2, 2]), np.array([1, 1, 3]))),
    "take_rows": lambda a, b: ad.take_rows(a, np.array([[2, 0], [2, 2]])),
    "mean": lambda a, b: ad.mean(a, axis=0),
    "broadcast_add": lambda a, b: ad.add(a, b[0]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    rng = np.random.default_rng(11)
    a, b = P(rng, 3, 4, name="a"), P(rng, 3, 4, name="b")
    w = rng.standard_normal(OPS[name](a, b).shape)
    f = lambda: ad.tsum(ad.mul(OPS[name](a, b), Tensor(w)))
    rep = grad_check(f, [a, b])
    assert rep.passed, rep


def test_batched_matmul_broadcast_gradient():
    rng = np.random.default_rng(2)
    a, b = P(rng, 2, 3, 4, name="a"), P(rng, 4, 5, name="b")
    rep = grad_check(lambda: ad.tsum(ad.tanh(ad.matmul(a, b))), [a, b])
    assert rep.passed, rep


def test_grad_check_trivial_functions():
    rng = np.random.default_rng(0)
    p = P(rng, 3, 2, name="p")
    ad.tsum(p).backward()
    np.testing.assert_array_equal(p.grad, 1.0)
    rep = grad_check(lambda: ad.tsum(p), [p])
    assert rep.max_rel_error < 1e-9
    rep = grad_check(lambda: Tensor(np.array(4.0)), [p])
    assert rep.max_rel_error == 0.0


def test_module_state_roundtrip(tmp_path):
    from qat.encoders import MLP

    rng = np.random.default_rng(0)
    m = MLP(rng, 3, 5, 2)
    names = [k for k, _ in m.named_parameters()]
    assert sorted(names) == ["fc1.bias", "fc1.weight", "fc2.bias", "fc2.weight"]
    path = tmp_path / "p.npz"
    ad.save_parameters(path, m.state_dict(), {"note": "x"})
    loaded, meta = ad.load_parameters(path)
    assert meta == {"note": "x"}
    for k, v in m.state_dict().items():
        assert loaded[k].tobytes() == v.tobytes() and loaded[k].shape == v.shape
    m2 = MLP(np.random.default_rng(5), 3, 5, 2)
    m2.load_state_dict(loaded)
    for (_, p1), (_, p2) in zip(m.named_parameters(), m2.named_parameters()):
        assert p1.data.tobytes() == p2.data.tobytes()


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=st.floats(allow_nan=False)))
def test_checkpoint_bit_exact(tmp_path_factory, x):
    path = tmp_path_factory.mktemp("ck") / "x.npz"
    ad.save_parameters(path, {"x": x})
    y, _ = ad.load_parameters(path)
    assert y["x"].tobytes() == x.tobytes()
