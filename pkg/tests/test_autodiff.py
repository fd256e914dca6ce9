import numpy as np
import pytest
import scipy.sparse as sp

from drlab.autodiff import ShapeError, Tape

from conftest import central_difference, rel_error

TOL = 1e-6


def check(build, *shapes, seed=0, positive=False, eps=1e-6):
    """Compare tape gradients of ``sum(R * build(tape, *leaves))`` with central differences."""
    rng = np.random.default_rng(seed)
    values = [rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s) for s in shapes]
    probe = {}

    def scalar(tape, nodes):
        out = build(tape, *nodes)
        if "r" not in probe:
            probe["r"] = np.random.default_rng(seed + 1).normal(size=out.shape)
        return tape.sum(tape.mul(out, probe["r"]))

    tape = Tape()
    nodes = [tape.leaf(v) for v in values]
    loss = scalar(tape, nodes)
    tape.backward(loss)
    for i, v in enumerate(values):
        def f(xi, i=i):
            t = Tape()
            ns = [t.leaf(xi if j == i else values[j]) for j in range(len(values))]
            return scalar(t, ns).value[0, 0]

        fd = central_difference(f, v, eps)
        assert rel_error(nodes[i].grad, fd) <= TOL, f"input {i}"


def test_matmul():
    check(lambda t, a, b: t.matmul(a, b), (3, 4), (4, 2))


def test_spmm_against_dense_operand():
    m = sp.random(5, 4, density=0.5, random_state=0, format="csr")
    check(lambda t, b: t.spmm(m, b), (4, 3))


def test_transpose():
    check(lambda t, a: t.transpose(a), (3, 5))


def test_add_sub_mul():
    check(lambda t, a, b: t.add(a, b), (3, 3), (3, 3))
    check(lambda t, a, b: t.sub(a, b), (3, 3), (3, 3))
    check(lambda t, a, b: t.mul(a, b), (3, 3), (3, 3))


def test_scale():
    check(lambda t, a: t.scale(a, -2.5), (2, 4))


def test_broadcasts():
    check(lambda t, a, r: t.add_row(a, r), (4, 3), (1, 3))
    check(lambda t, a, c: t.mul_col(a, c), (4, 3), (4, 1))


def test_reductions():
    check(lambda t, a: t.rowsum(a), (4, 3))
    check(lambda t, a: t.sum(a), (4, 3))


def test_row_normalize():
    check(lambda t, a: t.row_normalize(a), (4, 5), positive=True)


@pytest.mark.parametrize("p", [-1.0, -0.5, 2.0])
def test_power(p):
    check(lambda t, a: t.power(a, p), (3, 2), positive=True)


def test_slice_take_and_stacking():
    check(lambda t, a: t.slice(a, rows=slice(1, 3), cols=slice(0, 2)), (4, 3))
    # repeated indices must accumulate
    check(lambda t, a: t.take(a, rows=[0, 2, 2], cols=[1, 1, 0]), (3, 3))
    check(lambda t, a, b: t.vstack([a, b]), (2, 3), (1, 3))
    check(lambda t, a, b: t.hstack([a, b]), (2, 3), (2, 1))


def test_relu_away_from_kink():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(4, 4))
    v[np.abs(v) < 0.1] = 0.5
    tape = Tape()
    a = tape.leaf(v)
    tape.backward(tape.sum(tape.relu(a)))
    assert np.array_equal(a.grad, (v > 0).astype(float))
    check(lambda t, a: t.relu(t.add(a, np.full((4, 4), 3.0))), (4, 4))


def test_dropout_mask():
    mask = np.random.default_rng(0).integers(0, 2, (3, 4)) * 2.0
    check(lambda t, a: t.dropout(a, mask), (3, 4))


def test_log_softmax_cross_entropy_margin():
    check(lambda t, a: t.log_softmax(a), (3, 4))
    check(lambda t, a: t.cross_entropy(a, [0, 2, 2], [1, 0, 3]), (3, 4))
    check(lambda t, a: t.margin_loss(a, 1, 2), (3, 4))


def test_margin_loss_value():
    tape = Tape()
    z = tape.leaf([[1.0, 3.0, 2.0]])
    assert tape.margin_loss(z, 0, 1).value[0, 0] == pytest.approx(1.0)
    assert tape.margin_loss(z, 0, 0).value[0, 0] == pytest.approx(-2.0)


def test_operator_overloads_and_reuse():
    # a node used twice must receive both contributions
    check(lambda t, a, b: (a * b + a) @ b.T - 2.0 * a @ b.T, (3, 3), (3, 3))


def test_docstring_example():
    tape = Tape()
    x = tape.leaf(np.ones((2, 3)))
    tape.backward(tape.sum(x * x))
    assert np.array_equal(x.grad, np.full((2, 3), 2.0))


def test_constants_get_no_gradient():
    tape = Tape()
    a = tape.leaf(np.ones((2, 2)))
    c = tape.const(np.ones((2, 2)))
    tape.backward(tape.sum(a * c))
    assert c.grad is None and a.grad is not None


def test_shape_errors():
    tape = Tape()
    a = tape.leaf(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        tape.matmul(a, a)
    with pytest.raises(ShapeError):
        tape.add(a, np.ones((3, 2)))
    with pytest.raises(ShapeError):
        tape.backward(a)
    with pytest.raises(ShapeError):
        tape.leaf(np.ones(3))


def test_backward_twice_needs_zero_grad():
    tape = Tape()
    a = tape.leaf(np.ones((1, 1)))
    loss = tape.sum(a * a)
    tape.backward(loss)
    with pytest.raises(RuntimeError):
        tape.backward(loss)
    tape.zero_grad()
    tape.backward(loss)
    assert a.grad[0, 0] == pytest.approx(2.0)


def test_row_normalize_rejects_empty_rows():
    tape = Tape()
    with pytest.raises(ValueError, match="row 1"):
        tape.row_normalize(tape.leaf([[1.0, 1.0], [0.0, 0.0]]))


def test_nodes_from_other_tapes_rejected():
    a = Tape().leaf(np.ones((1, 1)))
    with pytest.raises(ValueError):
        Tape().add(a, a)
