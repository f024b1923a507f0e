import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igrsr import tensor as T
from igrsr.tensor import DegenerateAttentionError, DimensionError, GraphError, Tensor, ZeroNormError, grad_check

TOL = 1e-4
SHAPES = [(3,), (2, 4), (2, 3, 5)]


def rand(rng, shape, positive=False):
    x = rng.normal(size=shape)
    return np.abs(x) + 0.5 if positive else x


def weighted(out: Tensor, seed: int = 99) -> Tensor:
    """Reduce a tensor to a scalar with fixed random weights (catches transposed gradients)."""
    w = np.random.default_rng(seed).normal(size=out.shape)
    return (out * Tensor(w)).sum()


UNARY = {
    "neg": lambda x: -x,
    "exp": lambda x: x.exp(),
    "tanh": lambda x: x.tanh(),
    "relu": T.relu,
    "gelu": T.gelu,
    "softmax": lambda x: T.softmax(x, axis=-1),
    "log_softmax": lambda x: T.log_softmax(x, axis=-1),
    "sum_axis0": lambda x: x.sum(axis=0),
    "mean_last": lambda x: T.mean(x, axis=-1, keepdims=True),
    "reshape": lambda x: x.reshape(-1),
    "transpose": lambda x: x.transpose(),
    "getitem": lambda x: x[..., :1],
    "pow3": lambda x: x**3,
    "mask": lambda x: T.apply_mask(x, np.indices(x.shape).sum(axis=0) % 2 == 0, scale=2.0),
}
POSITIVE_UNARY = {"log": lambda x: x.log(), "sqrt": lambda x: x.sqrt(), "rdiv": lambda x: 1.0 / x}


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name, shape):
    rng = np.random.default_rng(hash((name, shape)) % 2**32)
    x = Tensor(rand(rng, shape))
    assert grad_check(lambda a: weighted(UNARY[name](a)), [x]) < TOL


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("name", sorted(POSITIVE_UNARY))
def test_positive_domain_gradients(name, shape):
    rng = np.random.default_rng(len(name) + len(shape))
    x = Tensor(rand(rng, shape, positive=True))
    assert grad_check(lambda a: weighted(POSITIVE_UNARY[name](a)), [x]) < TOL


BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (b * b + 1.0),
}


@pytest.mark.parametrize("shapes", [((3,), (3,)), ((2, 4), (4,)), ((2, 3, 5), (3, 1))])
@pytest.mark.parametrize("name", sorted(BINARY))
def test_broadcasting_binary_gradients(name, shapes):
    rng = np.random.default_rng(7)
    a, b = Tensor(rand(rng, shapes[0])), Tensor(rand(rng, shapes[1]))
    assert grad_check(lambda x, y: weighted(BINARY[name](x, y)), [a, b]) < TOL


@pytest.mark.parametrize("sa,sb", [((3, 4), (4, 2)), ((2, 3, 4), (4, 5)), ((2, 3, 4), (2, 4, 2)), ((2, 1, 3, 4), (3, 4, 2))])
def test_matmul_gradients(sa, sb):
    rng = np.random.default_rng(3)
    a, b = Tensor(rand(rng, sa)), Tensor(rand(rng, sb))
    assert grad_check(lambda x, y: weighted(T.matmul(x, y)), [a, b]) < TOL


@pytest.mark.parametrize("shape", [(1, 4), (3, 5), (2, 3, 6)])
def test_layer_norm_gradients(shape):
    rng = np.random.default_rng(11)
    x, g, b = Tensor(rand(rng, shape)), Tensor(rand(rng, shape[-1:])), Tensor(rand(rng, shape[-1:]))
    assert grad_check(lambda a, gg, bb: weighted(T.layer_norm(a, gg, bb)), [x, g, b]) < TOL


@pytest.mark.parametrize("nq,nk,d", [(1, 1, 2), (3, 4, 5), (4, 4, 3)])
def test_attention_gradients(nq, nk, d):
    rng = np.random.default_rng(nq * 10 + nk)
    q, k, v = (Tensor(rand(rng, s)) for s in ((2, nq, d), (2, nk, d), (2, nk, d)))
    mask = rng.random((2, nq, nk)) < 0.7
    mask[..., 0] = True
    assert grad_check(lambda a, b, c: weighted(T.scaled_dot_attention(a, b, c, mask)), [q, k, v]) < TOL


@pytest.mark.parametrize("vocab,shape", [(3, (2,)), (5, (2, 3)), (7, (2, 2, 4))])
def test_embedding_lookup_gradients(vocab, shape):
    rng = np.random.default_rng(vocab)
    table = Tensor(rand(rng, (vocab, 3)))
    ids = rng.integers(0, vocab, size=shape)
    assert grad_check(lambda t: weighted(T.embedding_lookup(t, ids)), [table]) < TOL


@pytest.mark.parametrize("sa,sb", [((1, 3), (1, 3)), ((3, 4), (2, 4)), ((5, 2), (5, 2))])
def test_cosine_and_normalize_gradients(sa, sb):
    rng = np.random.default_rng(5)
    a, b = Tensor(rand(rng, sa)), Tensor(rand(rng, sb))
    assert grad_check(lambda x, y: weighted(T.cosine_similarity(x, y)), [a, b]) < TOL
    assert grad_check(lambda x: weighted(T.l2_normalize(x)), [a]) < TOL


@pytest.mark.parametrize("b,c", [(1, 2), (3, 5), (6, 4)])
def test_cross_entropy_gradients(b, c):
    rng = np.random.default_rng(b)
    logits = Tensor(rand(rng, (b, c)))
    targets = rng.integers(1, c, size=b)
    valid = np.arange(c) != 0
    assert grad_check(lambda x: T.cross_entropy_from_logits(x, targets, valid), [logits]) < TOL


@pytest.mark.parametrize("parts", [[(2, 3)], [(2, 3), (1, 3)], [(2, 3), (4, 3), (1, 3)]])
def test_concat_gradients(parts):
    rng = np.random.default_rng(len(parts))
    ts = [Tensor(rand(rng, s)) for s in parts]
    assert grad_check(lambda *xs: weighted(T.concat(list(xs), axis=0)), ts) < TOL


# -- engine semantics ---------------------------------------------------------


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = x * x + x
    y.sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_second_backward_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    y = (x * 2.0).sum()
    y.backward()
    with pytest.raises(GraphError):
        y.backward()


def test_no_requires_grad_is_noop():
    x = Tensor(np.ones(3))
    (x * 3.0).sum().backward()
    assert x.grad is None


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_fully_masked_attention_row_raises():
    q = Tensor(np.ones((2, 3)))
    mask = np.array([[True, False], [False, False]])
    with pytest.raises(DegenerateAttentionError):
        T.scaled_dot_attention(q, q, q, mask)


def test_zero_norm_raises():
    with pytest.raises(ZeroNormError):
        T.l2_normalize(Tensor(np.zeros((1, 3))))


def test_embedding_out_of_range():
    with pytest.raises(IndexError):
        T.embedding_lookup(Tensor(np.ones((3, 2))), np.array([3]))


def test_masked_logits_get_no_probability():
    logits = Tensor(np.array([[5.0, 1.0, 2.0]]))
    valid = np.array([False, True, True])
    loss = T.cross_entropy_from_logits(logits, [1], valid)
    expected = -(1.0 - np.log(np.exp(1.0) + np.exp(2.0)))
    assert loss.item() == pytest.approx(expected, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    rows=st.integers(1, 4),
    cols=st.integers(1, 5),
    seed=st.integers(0, 2**16),
)
def test_softmax_rows_sum_to_one_and_shift_invariant(rows, cols, seed):
    x = np.random.default_rng(seed).normal(scale=10, size=(rows, cols))
    p = T.softmax(Tensor(x)).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(T.softmax(Tensor(x + 123.0)).data, p, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**16), n=st.integers(1, 4), d=st.integers(1, 4))
def test_add_gradient_matches_broadcast_counts(seed, n, d):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(n, d)), requires_grad=True)
    b = Tensor(rng.normal(size=(d,)), requires_grad=True)
    (a + b).sum().backward()
    np.testing.assert_array_equal(a.grad, np.ones((n, d)))
    np.testing.assert_array_equal(b.grad, np.full(d, float(n)))
