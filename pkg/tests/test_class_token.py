import numpy as np
import pytest

from wsseg import tensor as T
from wsseg.class_token import ClassTokenBank, condition
from wsseg.tensor import Rng, ShapeError, Tensor
from wsseg.vit import TokenSequence


def test_copy_semantics():
    p = TokenSequence(Tensor([[1.0, 2.0], [3.0, 4.0]]), (1, 2))
    out = condition(p, ClassTokenBank(Tensor([[9.0], [7.0]])))
    np.testing.assert_array_equal(out.features.data[0], [[1, 2, 9], [3, 4, 9]])
    np.testing.assert_array_equal(out.features.data[1], [[1, 2, 7], [3, 4, 7]])
    assert out.grid == (1, 2) and out.embed_dim == 2


def test_degenerate_token():
    p = np.random.default_rng(0).normal(size=(4, 3))
    out = condition(Tensor(p), ClassTokenBank(Tensor(np.zeros((1, 0)))))
    assert out.features.shape == (1, 4, 3)
    np.testing.assert_array_equal(out.features.data[0], p)


@pytest.mark.parametrize("seed", range(5))
def test_slices_are_exact_copies(seed):
    rng = Rng(seed)
    p = rng.normal((2, 9, 6))
    bank = ClassTokenBank.init(4, 3, rng)
    f = condition(Tensor(p), bank).features.data
    assert f.shape == (2, 4, 9, 9)
    for c in range(4):
        assert np.array_equal(f[:, c, :, :6], p)
        assert np.array_equal(f[:, c, :, 6:], np.broadcast_to(bank.tokens.data[c], (2, 9, 3)))


def test_token_gradient_counts_patches():
    bank = ClassTokenBank(Tensor(np.zeros((3, 2)), requires_grad=True))
    p = Tensor(np.ones((5, 4)), requires_grad=True)
    T.backward(T.sum(condition(p, bank).features))
    np.testing.assert_array_equal(bank.tokens.grad, np.full((3, 2), 5.0))
    np.testing.assert_array_equal(p.grad, np.full((5, 4), 3.0))


def test_token_gradient_matches_finite_differences():
    rng = Rng(1)
    p = Tensor(rng.normal((6, 4)))
    toks = Tensor(rng.normal((3, 2)), requires_grad=True)
    w = Tensor(rng.normal((3, 6, 6)))

    def f(t):
        return T.sum(T.tanh(condition(p, ClassTokenBank(t)).features) * w)

    assert T.gradcheck(f, toks).passed


def test_other_token_leaves_stream_unchanged():
    rng = Rng(2)
    p = Tensor(rng.normal((6, 4)))
    bank = ClassTokenBank.init(3, 2, rng)
    before = condition(p, bank).features.data.copy()
    bank.tokens.data[2] += 5.0
    after = condition(p, bank).features.data
    assert after[:2].tobytes() == before[:2].tobytes()
    assert not np.array_equal(after[2], before[2])


def test_shape_errors():
    with pytest.raises(ShapeError):
        condition(Tensor(np.ones(4)), ClassTokenBank(Tensor(np.ones((2, 2)))))
    with pytest.raises(ShapeError):
        condition(Tensor(np.ones((4, 3))), Tensor(np.ones(2)))


def test_init_shape():
    bank = ClassTokenBank.init(5, 8, Rng(0))
    assert (bank.num_classes, bank.dim) == (5, 8) and bank.tokens.requires_grad
