import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scenematch import numerics as nx
from oracles import matmul_loop

finite = st.floats(-50, 50, allow_nan=False)


def test_matmul_identity_and_zero(rng):
    A = rng.standard_normal((3, 3))
    assert np.array_equal(nx.matmul(np.eye(3), A).value, A)
    assert np.array_equal(nx.matmul(np.zeros((3, 3)), A).value, np.zeros((3, 3)))


def test_matmul_small_against_loop():
    a = [[1.0, 2.0], [3.0, 4.0]]
    b = [[5.0], [6.0]]
    assert np.array_equal(matmul_loop(a, b), [[17.0], [39.0]])
    assert np.array_equal(nx.matmul(a, b).value, [[17.0], [39.0]])


def test_matmul_shape_error():
    with pytest.raises(nx.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nx.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_associative(rng):
    for _ in range(20):
        a, b, c = (rng.standard_normal(s) for s in ((3, 4), (4, 5), (5, 2)))
        left = nx.matmul(nx.matmul(a, b), c).value
        right = nx.matmul(a, nx.matmul(b, c)).value
        assert np.linalg.norm(left - right) <= 1e-9 * np.linalg.norm(left)


def test_row_softmax_examples():
    assert np.allclose(nx.row_softmax([[0.0, 0.0, 0.0]]).value, 1 / 3, atol=1e-15)
    assert nx.row_softmax([[7.5]]).value[0, 0] == 1.0
    out = nx.row_softmax([[math.log(2.0), 0.0]]).value[0]
    assert out == pytest.approx([2 / 3, 1 / 3], abs=1e-15)


def test_row_softmax_empty():
    with pytest.raises(nx.DimensionError):
        nx.row_softmax(np.zeros((0, 3)))


@given(arrays(np.float64, (4, 6), elements=finite), st.floats(-100, 100))
def test_row_softmax_normalised_and_shift_invariant(m, c):
    p = nx.row_softmax(m).value
    assert np.all(p >= 0)
    assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)
    shifted = nx.row_softmax(m + c).value
    assert np.all(np.abs(shifted - p) <= 1e-12)


def test_row_softmax_huge_logits_stay_finite():
    p = nx.row_softmax([[1000.0, 999.0, -1000.0]]).value
    assert np.all(np.isfinite(p))


def test_leaky_relu():
    out = nx.leaky_relu([3.0, 0.0, -1.0], 0.2).value
    assert out.tolist() == [3.0, 0.0, -0.2]
    with pytest.raises(nx.ContractError):
        nx.leaky_relu([1.0], 1.5)


def test_backward_linear_sum(rng):
    x = nx.parameter(rng.standard_normal(5), "x")
    with nx.Tape() as tape:
        loss = nx.sum(x)
    g = tape.backward(loss)
    assert np.array_equal(g["x"], np.ones(5))


def test_backward_quadratic(rng):
    xv = rng.standard_normal(6)
    x = nx.parameter(xv, "x")
    with nx.Tape() as tape:
        loss = nx.matmul(x, x)
    assert np.allclose(tape.backward(loss)["x"], 2 * xv, rtol=0, atol=1e-15)


def test_backward_contract_errors(rng):
    x = nx.parameter(rng.standard_normal(3), "x")
    with nx.Tape() as tape:
        y = x * 2.0
    with pytest.raises(nx.ContractError, match="scalar"):
        tape.backward(y)
    with nx.Tape() as other:
        z = nx.sum(x)
    with pytest.raises(nx.ContractError, match="tape"):
        tape.backward(z)


def test_backward_fills_untouched_params():
    a = nx.parameter(np.ones(2), "a")
    b = nx.parameter(np.ones((2, 2)), "b")
    with nx.Tape() as tape:
        loss = nx.sum(a)
    g = tape.backward(loss, {"a": a, "b": b})
    assert set(g) == {"a", "b"}
    assert np.array_equal(g["b"], np.zeros((2, 2)))


def test_finite_diff_examples():
    c = nx.parameter(np.array([0.3, -1.0]), "c")
    g = nx.finite_diff_grad(lambda: 4.0, {"c": c})
    assert np.array_equal(g["c"], np.zeros(2))

    x = nx.parameter(np.array(2.0), "x")
    assert nx.finite_diff_grad(lambda: float(x.value), {"x": x})["x"] == pytest.approx(1.0, abs=1e-10)

    x = nx.parameter(np.array(3.0), "x")
    g = nx.finite_diff_grad(lambda: float(x.value) ** 2, {"x": x}, eps=1e-5)
    assert abs(g["x"] - 6.0) < 1e-9
    assert x.value == 3.0


def test_finite_diff_rejects_nonfinite_and_bad_eps():
    x = nx.parameter(np.array(1.0), "x")
    with pytest.raises(nx.NumericError):
        nx.finite_diff_grad(lambda: float("nan"), {"x": x})
    with pytest.raises(nx.ContractError):
        nx.finite_diff_grad(lambda: 0.0, {"x": x}, eps=0.0)


def _composite(params):
    A, B, v = params["A"], params["B"], params["v"]
    h = nx.elu(nx.matmul(A, B) + v)
    h = nx.leaky_relu(h) * nx.sigmoid(v)
    s = nx.row_softmax(nx.concat([h, nx.exp(h * 0.1)], axis=-1))
    left, right = nx.split(s, [3, 3], axis=-1)
    pooled = nx.mean(left, axis=0) + nx.sum(right[1:], axis=0)
    c = nx.cosine(pooled, nx.sqrt(nx.square(v) + 1.0))
    t = nx.stack([c, nx.log(nx.sum(nx.square(h)) + 1.0)])
    return nx.sum(t * nx.relu(t + 5.0)) + nx.sum(nx.place(t, slice(1, 3), (4,)))


def test_backward_matches_finite_differences_on_composite(rng):
    for trial in range(5):
        params = {
            "A": nx.parameter(rng.standard_normal((4, 3)), "A"),
            "B": nx.parameter(rng.standard_normal((3, 3)), "B"),
            "v": nx.parameter(rng.standard_normal(3), "v"),
        }
        with nx.Tape() as tape:
            loss = _composite(params)
        g_ad = tape.backward(loss, params)
        g_fd = nx.finite_diff_grad(lambda: _composite(params).value, params, 1e-5)
        for k in params:
            err = np.abs(g_ad[k] - g_fd[k]) / np.maximum(1.0, np.abs(g_fd[k]))
            assert err.max() < 1e-5, (k, err.max())


def test_broadcasting_gradients_reduce_to_operand_shape(rng):
    a = nx.parameter(rng.standard_normal((2, 1, 3)), "a")
    b = nx.parameter(rng.standard_normal((4, 3)), "b")
    with nx.Tape() as tape:
        loss = nx.sum(nx.square(a * b + nx.broadcast_to(b, (2, 4, 3))))
    g = tape.backward(loss, {"a": a, "b": b})
    assert g["a"].shape == (2, 1, 3) and g["b"].shape == (4, 3)
    fd = nx.finite_diff_grad(lambda: nx.sum(nx.square(a * b + nx.broadcast_to(b, (2, 4, 3)))).value,
                             {"a": a, "b": b})
    for k in ("a", "b"):
        assert np.allclose(g[k], fd[k], atol=1e-6)


def test_tape_is_topological_and_replays_bit_exactly(rng):
    params = {
        "A": nx.parameter(rng.standard_normal((4, 3)), "A"),
        "B": nx.parameter(rng.standard_normal((3, 3)), "B"),
        "v": nx.parameter(rng.standard_normal(3), "v"),
    }
    with nx.Tape() as tape:
        _composite(params)
    position = {id(node): k for k, node in enumerate(tape.nodes)}
    for k, node in enumerate(tape.nodes):
        for parent in node.parents:
            assert position.get(id(parent), -1) < k
    replayed = tape.replay()
    assert all(np.array_equal(r, node.value) for r, node in zip(replayed, tape.nodes))


def test_forward_passes_are_deterministic(rng):
    params = {
        "A": nx.parameter(rng.standard_normal((4, 3)), "A"),
        "B": nx.parameter(rng.standard_normal((3, 3)), "B"),
        "v": nx.parameter(rng.standard_normal(3), "v"),
    }
    first = _composite(params).value
    second = _composite(params).value
    assert first.tobytes() == second.tobytes()


def test_no_tape_means_no_recording(rng):
    x = nx.parameter(rng.standard_normal(3), "x")
    y = nx.sum(x * 2.0)
    assert y.parents == () and not y.requires_grad


def test_cosine_zero_norm_raises():
    with pytest.raises(nx.NumericError):
        nx.cosine(np.zeros(3), np.ones(3))


@settings(max_examples=50)
@given(arrays(np.float64, (3, 5), elements=finite))
def test_operations_keep_finite_values(m):
    out = [nx.row_softmax(m), nx.elu(m), nx.leaky_relu(m), nx.sigmoid(m), nx.matmul(m, m.T)]
    assert all(np.all(np.isfinite(o.value)) for o in out)
