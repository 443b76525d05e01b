import numpy as np
import pytest

from dyninr.autodiff import (
    GradientVector,
    ShapeError,
    Tape,
    TapeStateError,
    Tensor,
    add,
    backward,
    concat,
    eval_graph,
    finite_diff_grad,
    matmul,
    mul,
    relu,
    scale,
    slice_,
    square,
    tcos,
    tsin,
    tsum,
)
from dyninr.rng import Xoshiro256


def test_tensor_rejects_nonfinite():
    with pytest.raises(ValueError):
        Tensor([1.0, np.nan])
    with pytest.raises(ValueError):
        Tensor([np.inf])
    t = Tensor([[1, 2], [3, 4]])
    assert t.shape == (2, 2) and t.asarray().dtype == np.float64


def test_program_relu_two_theta():
    tape = Tape()
    theta = tape.leaf(shape=(), block="params")
    out = relu(scale(theta, 2.0))
    assert float(eval_graph([Tensor(-1.0)], tape).asarray()) == 0.0
    assert float(eval_graph([Tensor(2.0)], tape).asarray()) == 4.0
    g = backward(tape, out)
    assert g["params"].tolist() == [2.0]


def test_program_sin_theta_at_zero():
    tape = Tape()
    theta = tape.leaf(shape=(), block="params")
    out = tsin(theta)
    assert float(eval_graph([Tensor(0.0)], tape).asarray()) == 0.0
    assert backward(tape, out)["params"].tolist() == [1.0]  # cos(0)


def test_program_x_times_x_plus_x():
    tape = Tape()
    x = tape.leaf(value=Tensor(3.0), block="params")
    out = add(mul(x, x), x)
    assert float(out.value) == 12.0
    assert backward(tape, out)["params"].tolist() == [7.0]  # 2x + 1


def test_square_and_product_rule():
    tape = Tape()
    a = tape.leaf(value=Tensor(3.0), block="p")
    out = square(a)
    assert float(out.value) == 9.0
    assert backward(tape, out)["p"].tolist() == [6.0]

    tape = Tape()
    a = tape.leaf(value=Tensor(2.0), block="a")
    b = tape.leaf(value=Tensor(5.0), block="b")
    out = mul(a, b)
    g = backward(tape, out)
    assert g["a"].tolist() == [5.0] and g["b"].tolist() == [2.0]


def test_relu_subgradient_at_zero_is_zero():
    tape = Tape()
    x = tape.leaf(value=Tensor(0.0), block="p")
    out = relu(x)
    assert backward(tape, out)["p"].tolist() == [0.0]


def _scalar_graph(op_name, arrs, tape_vals):
    """Build sum(op(leaves)) so every primitive reduces to a scalar loss."""
    tape = Tape()
    leaves = [tape.leaf(value=Tensor(a), block=f"p{i}") for i, a in enumerate(tape_vals)]
    if op_name == "add":
        node = add(leaves[0], leaves[1])
    elif op_name == "mul":
        node = mul(leaves[0], leaves[1])
    elif op_name == "matmul":
        node = matmul(leaves[0], leaves[1])
    elif op_name == "relu":
        node = relu(leaves[0])
    elif op_name == "sin":
        node = tsin(leaves[0])
    elif op_name == "cos":
        node = tcos(leaves[0])
    elif op_name == "square":
        node = square(leaves[0])
    elif op_name == "scale":
        node = scale(leaves[0], 1.7)
    elif op_name == "concat":
        node = concat(leaves[0], leaves[1], axis=1)
    elif op_name == "slice":
        node = slice_(leaves[0], 1, 1, 3)
    elif op_name == "sum0":
        node = tsum(leaves[0], axis=0)
    elif op_name == "sum1":
        node = tsum(leaves[0], axis=1)
    else:
        raise AssertionError(op_name)
    loss = tsum(square(node)) if node.shape != () else square(node)
    return tape, loss, leaves


PRIMS = ["add", "mul", "matmul", "relu", "sin", "cos", "square", "scale",
         "concat", "slice", "sum0", "sum1"]


@pytest.mark.parametrize("op_name", PRIMS)
def test_every_primitive_against_finite_differences(op_name):
    """Spec invariant: each primitive's backward matches the oracle on 100
    seeded random inputs (relative tolerance 1e-5)."""
    rng = Xoshiro256(hash(op_name) & 0xFFFF)
    checked = 0
    trial = 0
    while checked < 100:
        trial += 1
        shape = (3, 4)
        vals = [rng.normals(12).reshape(shape), rng.normals(12).reshape(shape)]
        if op_name == "matmul":
            vals[1] = rng.normals(4 * 2).reshape(4, 2)
        if op_name == "relu" and np.min(np.abs(vals[0])) < 1e-3:
            continue  # keep clear of the kink; subgradient tested separately
        n_in = 2 if op_name in ("add", "mul", "matmul", "concat") else 1
        vals = vals[:n_in]
        tape, loss, leaves = _scalar_graph(op_name, None, vals)
        grads = backward(tape, loss)
        flat0 = np.concatenate([v.ravel() for v in vals])

        def f(theta):
            arrs = []
            off = 0
            for v in vals:
                arrs.append(theta.asarray().ravel()[off:off + v.size].reshape(v.shape))
                off += v.size
            t2, l2, _ = _scalar_graph(op_name, None, arrs)
            return float(np.asarray(l2.value))

        fd = finite_diff_grad(f, Tensor(flat0), step=1e-6)["params"]
        got = np.concatenate([grads[f"p{i}"] for i in range(n_in)])
        denom = max(np.linalg.norm(fd), np.linalg.norm(got), 1e-12)
        assert np.linalg.norm(got - fd) / denom < 1e-5
        checked += 1
    assert trial < 200


def test_linearity_of_backward():
    rng = Xoshiro256(77)
    for _ in range(20):
        x0 = rng.normals(6).reshape(2, 3)
        a, b = 1.3, -0.7

        def build(alpha, beta):
            tape = Tape()
            x = tape.leaf(value=Tensor(x0), block="p")
            f = tsum(square(x))          # f = sum x^2
            g = tsum(tsin(x))            # g = sum sin x
            out = add(scale(f, alpha), scale(g, beta))
            return backward(tape, out)["p"]

        combined = build(a, b)
        fg = build(1.0, 0.0)
        gg = build(0.0, 1.0)
        assert np.allclose(combined, a * fg + b * gg, atol=1e-12, rtol=0)


def test_fanout_accumulation():
    # y = x*x + sin(x) + x : grad = 2x + cos(x) + 1
    tape = Tape()
    x = tape.leaf(value=Tensor(0.9), block="p")
    y = add(add(mul(x, x), tsin(x)), x)
    g = backward(tape, y)["p"][0]
    assert abs(g - (2 * 0.9 + np.cos(0.9) + 1)) < 1e-14


def test_bias_broadcast_add():
    rng = Xoshiro256(13)
    m = rng.normals(12).reshape(4, 3)
    b = rng.normals(3).reshape(1, 3)
    tape = Tape()
    mv = tape.leaf(value=Tensor(m), block="m")
    bv = tape.leaf(value=Tensor(b), block="b")
    out = tsum(square(add(mv, bv)))
    g = backward(tape, out)
    assert g["b"].shape == (3,)
    assert np.allclose(g["b"], (2 * (m + b)).sum(axis=0), atol=1e-12)


def test_matmul_hand_gradient():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0], [6.0]])
    tape = Tape()
    av = tape.leaf(value=Tensor(a), block="a")
    bv = tape.leaf(value=Tensor(b), block="b")
    out = tsum(matmul(av, bv))
    g = backward(tape, out)
    assert np.allclose(g["a"].reshape(2, 2), np.ones((2, 1)) @ b.T)
    assert np.allclose(g["b"].reshape(2, 1), a.T @ np.ones((2, 1)))


def test_concat_slice_adjoints_route_correctly():
    rng = Xoshiro256(21)
    a = rng.normals(6).reshape(2, 3)
    b = rng.normals(4).reshape(2, 2)
    tape = Tape()
    av = tape.leaf(value=Tensor(a), block="a")
    bv = tape.leaf(value=Tensor(b), block="b")
    cat = concat(av, bv, axis=1)
    left = slice_(cat, 1, 0, 3)     # recovers a
    out = tsum(square(left))
    g = backward(tape, out)
    assert np.allclose(g["a"], (2 * a).ravel())
    assert np.allclose(g["b"], 0.0)


def test_shape_errors_name_the_problem():
    tape = Tape()
    a = tape.leaf(value=Tensor(np.zeros((2, 3))))
    b = tape.leaf(value=Tensor(np.zeros((3, 3))))
    with pytest.raises(ShapeError, match="add"):
        add(a, b)
    with pytest.raises(ShapeError, match="matmul"):
        matmul(a, a)
    with pytest.raises(ShapeError, match="slice"):
        slice_(a, 1, 2, 9)


def test_eval_graph_errors_and_replay():
    tape = Tape()
    x = tape.leaf(shape=(2,), block="p")
    out = tsum(square(x))
    with pytest.raises(TapeStateError):
        backward(tape, out)  # before any forward
    v1 = eval_graph([Tensor([1.0, 2.0])], tape)
    assert float(v1.asarray()) == 5.0
    with pytest.raises(ShapeError):
        eval_graph([Tensor([1.0, 2.0, 3.0])], tape)
    with pytest.raises(ShapeError):
        eval_graph([], tape)
    v2 = eval_graph([Tensor([3.0, 4.0])], tape)
    assert float(v2.asarray()) == 25.0


def test_backward_is_single_use_per_evaluation():
    tape = Tape()
    x = tape.leaf(value=Tensor(2.0), block="p")
    out = square(x)
    backward(tape, out)
    with pytest.raises(TapeStateError):
        backward(tape, out)
    eval_graph([Tensor(2.0)], tape)  # replay re-arms
    assert backward(tape, out)["p"].tolist() == [4.0]


def test_backward_requires_scalar_output():
    tape = Tape()
    x = tape.leaf(value=Tensor([1.0, 2.0]), block="p")
    y = square(x)
    with pytest.raises(TapeStateError):
        backward(tape, y)


def test_bitwise_reproducible():
    def build():
        rng = Xoshiro256(2024)
        w = rng.normals(12).reshape(4, 3)
        x = rng.normals(8).reshape(2, 4)
        tape = Tape()
        wv = tape.leaf(value=Tensor(w), block="w")
        xv = tape.leaf(value=Tensor(x))
        out = tsum(square(relu(matmul(xv, wv))))
        return float(out.value), backward(tape, out)["w"]

    v1, g1 = build()
    v2, g2 = build()
    assert v1 == v2
    assert g1.tobytes() == g2.tobytes()


def test_gradient_vector_total_size():
    gv = GradientVector({"a": np.zeros(3), "b": np.zeros(5)})
    assert gv.total_size == 8
    assert gv.flat().shape == (8,)


def test_finite_diff_quadratic_and_constant():
    fd = finite_diff_grad(lambda t: float((t.asarray() ** 2).sum()), Tensor([3.0]), step=1e-4)
    assert abs(fd["params"][0] - 6.0) < 1e-7
    fd0 = finite_diff_grad(lambda t: 5.0, Tensor([1.0, 2.0]), step=1e-4)
    assert fd0["params"].tolist() == [0.0, 0.0]
    with pytest.raises(ValueError):
        finite_diff_grad(lambda t: float("nan"), Tensor([1.0]), step=1e-4)
    with pytest.raises(ValueError):
        finite_diff_grad(lambda t: 1.0, Tensor([1.0]), step=0.0)
