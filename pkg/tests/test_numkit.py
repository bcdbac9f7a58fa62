import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from langdrive import numkit as nk


def rand(rng, r, c, grad=True):
    return nk.Tensor(rng.normal(size=(r, c)), requires_grad=grad)


finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


def small_matrix(max_side=4):
    return st.tuples(st.integers(1, max_side), st.integers(1, max_side)).flatmap(
        lambda s: arrays(np.float64, s, elements=finite))


# --- matmul -----------------------------------------------------------------


def test_matmul_hand_example():
    out = nk.matmul(nk.Tensor([[1, 2], [3, 4]]), nk.Tensor([[1], [1]]))
    np.testing.assert_array_equal(out.data, [[3], [7]])


def test_matmul_identity_and_zero():
    a = nk.Tensor(np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal((a @ nk.Tensor(np.eye(3))).data, a.data)
    np.testing.assert_array_equal((a @ nk.zeros(3, 4)).data, np.zeros((2, 4)))


def test_matmul_shape_error():
    with pytest.raises(nk.ShapeError):
        nk.matmul(nk.zeros(2, 3), nk.zeros(2, 3))


def test_matmul_associative():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a, b, c = (nk.Tensor(rng.normal(size=s)) for s in ((3, 4), (4, 2), (2, 4)))
        np.testing.assert_allclose(((a @ b) @ c).data, (a @ (b @ c)).data, atol=1e-9, rtol=0)


# --- softmax ----------------------------------------------------------------


def test_softmax_closed_form():
    out = nk.softmax_rows(nk.Tensor([[0.0, math.log(2.0)]]))
    np.testing.assert_allclose(out.data, [[1 / 3, 2 / 3]], atol=1e-15)


def test_softmax_constant_row_is_uniform():
    out = nk.softmax_rows(nk.Tensor(np.full((2, 5), 3.7)))
    np.testing.assert_allclose(out.data, 0.2, atol=1e-15)


@given(small_matrix(), st.floats(-100, 100))
def test_softmax_rows_sum_to_one_and_shift_invariant(x, c):
    p = nk.softmax_rows(nk.Tensor(x)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    q = nk.softmax_rows(nk.Tensor(x + c)).data
    np.testing.assert_allclose(p, q, atol=1e-12)


def test_softmax_large_inputs_stay_finite():
    p = nk.softmax_rows(nk.Tensor([[1000.0, 999.0, -1000.0]])).data
    assert np.all(np.isfinite(p))


# --- attention --------------------------------------------------------------


def test_attention_hand_example():
    q = nk.Tensor([[1.0, 0.0]])
    kv = nk.Tensor([[1.0, 0.0], [0.0, 1.0]])
    out = nk.scaled_dot_attention(q, kv, kv).data
    a = math.exp(1 / math.sqrt(2))
    w = a / (a + 1.0)
    np.testing.assert_allclose(out, [[w, 1 - w]], atol=1e-15)


def test_attention_single_key_returns_its_value():
    rng = np.random.default_rng(1)
    q = nk.Tensor(rng.normal(size=(3, 4)))
    k = nk.Tensor(rng.normal(size=(1, 4)))
    v = nk.Tensor(rng.normal(size=(1, 4)))
    np.testing.assert_allclose(nk.scaled_dot_attention(q, k, v).data, np.repeat(v.data, 3, axis=0), atol=1e-15)


def test_attention_duplicated_keys_give_value_mean():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(1, 6))
        q = nk.Tensor(rng.normal(size=(3, 4)))
        k = nk.Tensor(np.repeat(rng.normal(size=(1, 4)), n, axis=0))
        v = nk.Tensor(rng.normal(size=(n, 4)))
        out = nk.scaled_dot_attention(q, k, v).data
        np.testing.assert_allclose(out, np.repeat(v.data.mean(axis=0, keepdims=True), 3, axis=0), atol=1e-12)


def test_attention_masked_keys_get_zero_weight():
    rng = np.random.default_rng(3)
    q, k, v = (nk.Tensor(rng.normal(size=s)) for s in ((2, 3), (4, 3), (4, 3)))
    mask = np.array([True, False, True, False])
    full = nk.scaled_dot_attention(q, k, v, mask=mask).data
    kept = nk.scaled_dot_attention(q, nk.take_rows(k, [0, 2]), nk.take_rows(v, [0, 2])).data
    np.testing.assert_allclose(full, kept, atol=1e-14)


def test_attention_all_masked_raises():
    z = nk.zeros(2, 3)
    with pytest.raises(nk.EmptyAttentionError, match="empty attention support"):
        nk.scaled_dot_attention(z, z, z, mask=[False, False])


def test_causal_attention_ignores_later_positions():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 3))
    out = nk.scaled_dot_attention(nk.Tensor(x), nk.Tensor(x), nk.Tensor(x), causal=True).data
    prefix = nk.scaled_dot_attention(nk.Tensor(x[:3]), nk.Tensor(x[:3]), nk.Tensor(x[:3]), causal=True).data
    np.testing.assert_allclose(out[:3], prefix, atol=1e-14)


# --- backward / tape --------------------------------------------------------


def test_backward_of_elementwise_product_sum():
    rng = np.random.default_rng(5)
    a, b = rand(rng, 3, 2), rand(rng, 3, 2)
    nk.backward(nk.sum(nk.mul(a, b)))
    np.testing.assert_array_equal(a.grad, b.data)
    np.testing.assert_array_equal(b.grad, a.data)


def test_backward_without_grad_inputs_leaves_no_gradient():
    c = nk.Tensor(np.ones((2, 2)))
    nk.backward(nk.sum(c))
    assert c.grad is None


def test_backward_requires_scalar():
    a = nk.Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(nk.ShapeError):
        nk.backward(nk.scale(a, 2.0))
    nk.get_tape().clear()


def test_tape_is_cleared_and_fanout_accumulates():
    a = nk.Tensor([[2.0]], requires_grad=True)
    y = nk.add(nk.mul(a, a), a)  # a used three times
    assert len(nk.get_tape()) == 2
    nk.backward(y)
    assert len(nk.get_tape()) == 0
    assert a.grad[0, 0] == pytest.approx(2 * 2.0 + 1)


def test_no_grad_records_nothing():
    a = nk.Tensor([[1.0]], requires_grad=True)
    with nk.no_grad():
        out = nk.tanh(a)
    assert not out.requires_grad
    assert len(nk.get_tape()) == 0


# --- gradient checks --------------------------------------------------------

OPS = {
    "matmul": (lambda a, b: nk.sum(nk.tanh(nk.matmul(a, b))), [(3, 4), (4, 2)]),
    "add": (lambda a, b: nk.sum(nk.tanh(nk.add(a, b))), [(3, 3), (3, 3)]),
    "sub": (lambda a, b: nk.sum(nk.tanh(nk.sub(a, b))), [(2, 3), (2, 3)]),
    "mul": (lambda a, b: nk.sum(nk.mul(a, b)), [(4, 4), (4, 4)]),
    "div": (lambda a, b: nk.sum(nk.div(a, nk.add(nk.mul(b, b), nk.Tensor(np.ones((2, 3)))))), [(2, 3), (2, 3)]),
    "scale": (lambda a: nk.sum(nk.tanh(nk.scale(a, -1.7))), [(3, 2)]),
    "add_row": (lambda a, b: nk.sum(nk.tanh(nk.add_row(a, b))), [(4, 3), (1, 3)]),
    "tanh": (lambda a: nk.sum(nk.tanh(a)), [(3, 3)]),
    "exp": (lambda a: nk.sum(nk.exp(nk.scale(a, 0.5))), [(2, 4)]),
    "log": (lambda a: nk.sum(nk.log(nk.add(nk.mul(a, a), nk.Tensor(np.ones((3, 2)))))), [(3, 2)]),
    "sqrt": (lambda a: nk.sum(nk.sqrt(nk.add(nk.mul(a, a), nk.Tensor(np.ones((2, 2)))))), [(2, 2)]),
    "transpose": (lambda a, b: nk.sum(nk.tanh(nk.matmul(nk.transpose(a), b))), [(3, 2), (3, 4)]),
    "reshape": (lambda a, b: nk.sum(nk.mul(nk.reshape(a, 2, 6), b)), [(4, 3), (2, 6)]),
    "mean": (lambda a: nk.mean(nk.mul(a, a)), [(3, 4)]),
    "sum_cols": (lambda a: nk.sum(nk.tanh(nk.sum_cols(a))), [(4, 3)]),
    "concat_rows": (lambda a, b: nk.sum(nk.tanh(nk.concat_rows([a, b]))), [(2, 3), (1, 3)]),
    "concat_cols": (lambda a, b: nk.sum(nk.tanh(nk.concat_cols([a, b]))), [(2, 3), (2, 1)]),
    "slice_cols": (lambda a: nk.sum(nk.tanh(nk.slice_cols(a, 1, 3))), [(3, 4)]),
    "take_rows": (lambda a: nk.sum(nk.tanh(nk.take_rows(a, [2, 0, 2]))), [(3, 3)]),
    "scatter_rows": (lambda a: nk.sum(nk.tanh(nk.scatter_rows(a, [3, 1], 4))), [(2, 3)]),
    "pick": (lambda a: nk.sum(nk.tanh(nk.pick(a, [0, 1, 1], [2, 0, 2]))), [(2, 3)]),
    "clamp": (lambda a: nk.sum(nk.clamp(a, -0.5, 0.5)), [(3, 3)]),
    "softmax_rows": (lambda a, b: nk.sum(nk.mul(nk.softmax_rows(a), b)), [(3, 4), (3, 4)]),
    "log_softmax_rows": (lambda a, b: nk.sum(nk.mul(nk.log_softmax_rows(a), b)), [(3, 4), (3, 4)]),
    "attention": (lambda q, k, v: nk.sum(nk.tanh(nk.scaled_dot_attention(q, k, v))), [(2, 3), (4, 3), (4, 3)]),
    "attention_masked": (lambda q, k, v: nk.sum(nk.tanh(nk.scaled_dot_attention(q, k, v, mask=[1, 0, 1, 1]))),
                         [(3, 2), (4, 2), (4, 2)]),
    "attention_causal": (lambda q, k, v: nk.sum(nk.tanh(nk.scaled_dot_attention(q, k, v, causal=True))),
                         [(4, 3), (4, 3), (4, 3)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_grad_check_every_op(name):
    fn, shapes = OPS[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    for _ in range(3):
        inputs = [rand(rng, *s) for s in shapes]
        if name == "clamp":
            # keep coordinates away from the kinks at +-0.5
            for t in inputs:
                t.data[np.abs(np.abs(t.data) - 0.5) < 1e-3] += 0.01
        assert nk.grad_check(fn, inputs, eps=1e-5) < 1e-4


def test_grad_check_linear_is_exact():
    rng = np.random.default_rng(6)
    a = rand(rng, 3, 3)
    w = nk.Tensor(rng.normal(size=(3, 3)))
    assert nk.grad_check(lambda x: nk.sum(nk.mul(x, w)), [a]) < 1e-9


def test_grad_check_softmax_cross_entropy():
    rng = np.random.default_rng(7)
    logits = rand(rng, 4, 5)
    targets = [1, 0, 4, 2]

    def ce(x):
        return nk.scale(nk.mean(nk.pick(nk.log_softmax_rows(x), range(4), targets)), -1.0)

    assert nk.grad_check(ce, [logits]) < 1e-4


def _buggy_square(x):
    xd = x.data
    return nk.custom_op(xd * xd, [x], lambda g: (2.0 * (2.0 * xd) * g,))


def test_grad_check_detects_corrupted_gradient():
    rng = np.random.default_rng(8)
    a = nk.Tensor(rng.uniform(1.0, 2.0, size=(3, 3)), requires_grad=True)
    assert nk.grad_check(lambda x: nk.sum(_buggy_square(x)), [a]) > 0.4


# --- tensor invariants ------------------------------------------------------


@settings(max_examples=50)
@given(small_matrix(), small_matrix())
def test_forward_ops_keep_shapes_and_finiteness(a, b):
    ta = nk.Tensor(a, requires_grad=True)
    out = nk.tanh(nk.add(ta, ta))
    assert out.shape == a.shape and out.grad.shape == a.shape
    assert np.all(np.isfinite(nk.softmax_rows(ta).data))
    if a.shape[1] == b.shape[0]:
        assert nk.matmul(ta, nk.Tensor(b)).shape == (a.shape[0], b.shape[1])
    nk.get_tape().clear()


def test_tensor_rejects_3d():
    with pytest.raises(nk.ShapeError):
        nk.Tensor(np.zeros((2, 2, 2)))


# --- checkpoints ------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    store = nk.ParamStore()
    store.add("a.W", rng.normal(size=(3, 4)))
    store.add("b", rng.normal(size=(1, 7)))
    path = tmp_path / "p.ckpt"
    nk.save_params(path, store.arrays(), b'{"x": 1}')
    arrays, meta = nk.load_params(path)
    assert meta == b'{"x": 1}'
    assert list(arrays) == ["a.W", "b"]
    for n, t in store.items():
        np.testing.assert_array_equal(arrays[n], t.data)
    raw = path.read_bytes()
    assert raw[:4] == nk.CKPT_MAGIC and raw[4] == nk.CKPT_VERSION


def test_checkpoint_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "p.ckpt"
    nk.save_params(path, {"w": np.ones((2, 2))})
    raw = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(nk.CheckpointError, match="magic"):
        nk.load_params(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-3])
    with pytest.raises(nk.CheckpointError):
        nk.load_params(tmp_path / "short")


def test_param_store_load_checks_names_and_shapes():
    store = nk.ParamStore()
    store.add("w", np.zeros((2, 2)))
    with pytest.raises(KeyError):
        store.load_arrays({"v": np.zeros((2, 2))})
    with pytest.raises(nk.ShapeError):
        store.load_arrays({"w": np.zeros((3, 2))})
