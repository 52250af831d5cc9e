import numpy as np
import pytest
from hypothesis import given, strategies as st

from tns import interp
from tns.errors import ContractError
from tns.interp import (MessageMatrix, backward_indices, backward_messages, index_move_sign,
                        interpolate)


def dense_interpolate(rows, n):
    """Oracle: the kernel sum over every position o = 1..N."""
    o = np.arange(1, len(rows) + 1)
    w = np.maximum(0.0, 1.0 - np.abs(n - o))
    return w @ rows


def two_row_pair():
    # m(1) is a filler row; m(2) = [0, 2], m(3) = [4, 0]
    return MessageMatrix(np.array([[9.0, 9.0], [0.0, 2.0], [4.0, 0.0]]))


class TestForward:
    def test_integral_index_is_exact_row(self):
        rows = np.random.default_rng(0).standard_normal((5, 4))
        out, tape = interpolate(MessageMatrix(rows), [3.0])
        assert np.array_equal(out[0], rows[2])
        assert tape.integer_hit[0]

    def test_half_blend(self):
        out, _ = interpolate(two_row_pair(), [2.5])
        assert out[0].tolist() == [2.0, 1.0]

    def test_matches_dense_sum(self):
        rng = np.random.default_rng(1)
        rows = rng.standard_normal((8, 6))
        out, _ = interpolate(MessageMatrix(rows), [2.25])
        np.testing.assert_allclose(out[0], dense_interpolate(rows, 2.25), atol=1e-12, rtol=0)

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            interpolate(two_row_pair(), [3.5])
        with pytest.raises(ContractError):
            interpolate(two_row_pair(), [0.5])

    def test_partial_window(self):
        rows = np.arange(12.0).reshape(4, 3)
        m = MessageMatrix(rows, first=5, count=20)
        out, _ = interpolate(m, [6.5])
        np.testing.assert_allclose(out[0], 0.5 * rows[1] + 0.5 * rows[2])
        with pytest.raises(ContractError):
            interpolate(m, [9.5])

    def test_last_row_no_partner(self):
        rows = np.eye(3)
        out, _ = interpolate(MessageMatrix(rows), [3.0])
        assert out[0].tolist() == [0.0, 0.0, 1.0]


class TestBackward:
    def test_message_gradient_half_split(self):
        m = two_row_pair()
        _, tape = interpolate(m, [2.5])
        g = backward_messages(tape, [[1.0, 0.0]], m)
        assert g[1].tolist() == [0.5, 0.0] and g[2].tolist() == [0.5, 0.0]
        assert g[0].tolist() == [0.0, 0.0]

    def test_integral_index_one_row(self):
        m = two_row_pair()
        _, tape = interpolate(m, [2.0])
        g = backward_messages(tape, [[1.0, 3.0]], m)
        assert g[1].tolist() == [1.0, 3.0] and not g[[0, 2]].any()

    def test_index_gradient_and_sign(self):
        m = two_row_pair()
        _, tape = interpolate(m, [2.5])
        u = [[1.0, 0.0]]
        assert backward_indices(tape, m, u)[0] == 4.0
        # positive gradient: descent lowers n, i.e. contracts
        assert index_move_sign(tape, m, u)[0] == 1

    def test_orthogonal_upstream(self):
        m = MessageMatrix(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]))
        _, tape = interpolate(m, [1.5])
        assert backward_indices(tape, m, [[0.0, 0.0, 1.0]])[0] == 0.0
        assert index_move_sign(tape, m, [[0.0, 0.0, 1.0]])[0] == 0

    def test_integral_subgradient_zero(self):
        rows = np.random.default_rng(2).standard_normal((5, 3))
        m = MessageMatrix(rows)
        _, tape = interpolate(m, [1.0, 2.0, 4.0])
        assert not backward_indices(tape, m, np.ones((3, 3))).any()

    def test_shape_mismatch(self):
        m = two_row_pair()
        _, tape = interpolate(m, [2.5])
        with pytest.raises(ContractError):
            backward_messages(tape, np.ones((2, 2)), m)
        with pytest.raises(ContractError):
            backward_indices(tape, m, np.ones((1, 5)))

    def test_message_gradient_finite_difference(self):
        rng = np.random.default_rng(3)
        rows = rng.standard_normal((7, 4))
        n = np.array([1.3, 2.9, 4.5, 6.1])
        u = rng.standard_normal((4, 4))
        _, tape = interpolate(MessageMatrix(rows), n)
        g = backward_messages(tape, u, MessageMatrix(rows))
        h = 1e-5
        for idx in np.ndindex(rows.shape):
            p, q = rows.copy(), rows.copy()
            p[idx] += h
            q[idx] -= h
            fd = (np.sum(u * interpolate(MessageMatrix(p), n)[0])
                  - np.sum(u * interpolate(MessageMatrix(q), n)[0])) / (2 * h)
            assert abs(fd - g[idx]) <= 1e-4 * max(abs(fd), 1e-6) + 1e-9

    def test_index_gradient_finite_difference(self):
        rng = np.random.default_rng(4)
        rows = rng.standard_normal((9, 5))
        m = MessageMatrix(rows)
        for _ in range(50):
            n = rng.uniform(1, 9, size=3)
            n = n[np.abs(n - np.round(n)) > 1e-3]
            if not len(n):
                continue
            u = rng.standard_normal((len(n), 5))
            _, tape = interpolate(m, n)
            g = backward_indices(tape, m, u)
            h = 1e-4
            for k in range(len(n)):
                p, q = n.copy(), n.copy()
                p[k] += h
                q[k] -= h
                fd = (np.sum(u * interpolate(m, p)[0]) - np.sum(u * interpolate(m, q)[0])) / (2 * h)
                assert abs(fd - g[k]) <= 1e-3 * max(abs(fd), abs(g[k])) + 1e-6


class TestRateChain:
    def test_rate_gradient_weights(self):
        dn = np.array([[0.0, 2.0, -1.0, 0.5]])
        valid = np.array([[True, True, True, False]])
        # dr = sum_s dn_s * (s - 1) over valid positions
        assert interp.rate_grad(dn, valid)[0] == 0.0 * 0 + 2.0 * 1 - 1.0 * 2


index_st = st.floats(1.0, 12.0, allow_nan=False)


class TestProperties:
    @given(st.lists(index_st, min_size=1, max_size=8))
    def test_partition_of_unity_and_sparsity(self, n):
        lo, w_lo, w_hi, _ = interp.weights(np.array(n))
        np.testing.assert_allclose(w_lo + w_hi, 1.0, atol=1e-15)
        o = np.arange(1, 14)
        dense = np.maximum(0, 1 - np.abs(np.array(n)[:, None] - o))
        assert np.all((dense > 0).sum(1) <= 2)

    @given(st.lists(index_st, min_size=1, max_size=6), st.floats(-3, 3), st.floats(-3, 3),
           st.integers(0, 2**31))
    def test_linearity(self, n, a, b, seed):
        rng = np.random.default_rng(seed)
        A, B = rng.standard_normal((2, 13, 4))
        lhs, _ = interpolate(MessageMatrix(a * A + b * B), n)
        ra, _ = interpolate(MessageMatrix(A), n)
        rb, _ = interpolate(MessageMatrix(B), n)
        np.testing.assert_allclose(lhs, a * ra + b * rb, atol=1e-12, rtol=0)

    @given(st.lists(index_st, min_size=1, max_size=6), st.integers(0, 2**31))
    def test_adjoint(self, n, seed):
        rng = np.random.default_rng(seed)
        V = rng.standard_normal((13, 4))
        U = rng.standard_normal((len(n), 4))
        out, tape = interpolate(MessageMatrix(V), n)
        g = backward_messages(tape, U, MessageMatrix(V))
        assert abs(np.sum(g * V) - np.sum(U * out)) <= 1e-10

    @given(st.lists(st.integers(1, 13), min_size=1, max_size=6), st.integers(0, 2**31))
    def test_integer_exactness(self, n, seed):
        V = np.random.default_rng(seed).standard_normal((13, 4))
        out, _ = interpolate(MessageMatrix(V), np.array(n, dtype=float))
        assert np.array_equal(out, V[np.array(n) - 1])

    @given(st.floats(1.0, 12.0), st.integers(0, 2**31))
    def test_dense_oracle(self, n, seed):
        V = np.random.default_rng(seed).standard_normal((13, 3))
        out, _ = interpolate(MessageMatrix(V), [n])
        np.testing.assert_allclose(out[0], dense_interpolate(V, n), atol=1e-12, rtol=0)


def test_aggregated_sign_expands_on_planted_periods():
    """Signal sits in older bursts: the batch-aggregated rate gradient points to expansion."""
    from tns.model import ModelConfig
    from tns.synthetic import SyntheticConfig, gen_synthetic
    from tns.training import TrainConfig, Trainer

    users = 40
    data = gen_synthetic(SyntheticConfig(num_users=users, num_items=20, num_events=12000,
                                         p_max=8, periods=[8] * users, seed=1))
    g = data.graph
    cfg = ModelConfig(d_v=g.d_v, d_e=g.d_e, d_t=8, d_h=32, d_o=32, budget=5, strategy="tns")
    tr = Trainer(g, cfg, TrainConfig(task="node", epochs=3, lr=3e-3, alpha=0.0, seed=0))
    tr.params["l1.rate.b2"][:] = 1.5      # fractional indices, rate module frozen
    tr.fit()
    ids = tr.split.range("test")
    signs = []
    for start in range(0, len(ids), 200):
        out = tr.task.run(tr.params, ids[start:start + 200], tr.rng, grad=True,
                          sample_rng=tr.rng)
        t = out.tape.root
        signs.append(np.sign(interp.rate_grad(t.index_grads, t.valid).sum()))
    signs = np.array(signs)
    assert (signs < 0).sum() > len(signs) / 2
