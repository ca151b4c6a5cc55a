import numpy as np
import pytest

from tmepsr import tensor as T
from tmepsr import time_encoder as TE
from tmepsr.errors import ConfigError, DataError


class TestIntervals:
    def test_known_values(self):
        iv = TE.intervals([0, 100, 300])
        assert iv["adj"][0] == 0.0 and iv["abs"][0] == 0.0
        assert iv["adj"][1] == pytest.approx(np.log(101), abs=1e-12)
        assert iv["adj"][2] == pytest.approx(np.log(201), abs=1e-12)
        assert iv["abs"][2] == pytest.approx(np.log(301), abs=1e-12)

    def test_shift_invariance(self):
        t = np.array([5, 17, 120, 121])
        a = TE.intervals(t)
        b = TE.intervals(t + 10_000)
        np.testing.assert_array_equal(a["adj"], b["adj"])
        np.testing.assert_array_equal(a["abs"], b["abs"])

    def test_repeated_timestamps_give_zero(self):
        iv = TE.intervals([7, 7, 7])
        np.testing.assert_array_equal(iv["adj"], [0.0, 0.0, 0.0])

    def test_decreasing_rejected(self):
        with pytest.raises(DataError):
            TE.intervals([10, 5])

    def test_adj_equals_abs_for_two_steps(self):
        iv = TE.intervals([3, 50])
        assert iv["adj"][1] == iv["abs"][1]

    def test_batch_padding_stays_zero(self):
        times = np.array([[1, 2, 3, 0], [1, 5, 0, 0]])
        lengths = np.array([3, 2])
        adj, ab = TE.batch_intervals(times, lengths)
        assert adj[0, 3] == 0.0 and adj[1, 2] == 0.0 and ab[1, 3] == 0.0
        assert adj[1, 1] == pytest.approx(np.log(5.0), abs=1e-12)


class TestGru:
    def test_zero_params_give_zero_update_path(self):
        # all-zero weights: z = 1/2, cand = tanh(0) = 0, so h halves each step
        d = 3
        zero = lambda *s: T.Tensor(np.zeros(s), requires_grad=True)
        p = TE.GruCellParams(W_z=zero(1, d), U_z=zero(d, d), b_z=zero(1, d),
                             W_r=zero(1, d), U_r=zero(d, d), b_r=zero(1, d),
                             W_h=zero(1, d), U_h=zero(d, d), b_h=zero(1, d))
        out = TE.gru_encode(p, np.ones((1, 4)))
        np.testing.assert_array_equal(out.data, np.zeros((1, 4, d)))

    def test_matches_step_oracle(self):
        rng = np.random.default_rng(0)
        d = 4
        p = TE.init_gru(d, rng)
        deltas = rng.normal(size=(2, 6))
        out = TE.gru_encode(p, deltas).data

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        g = {k: t.data for k, t in p.tensors().items()}
        for b in range(2):
            h = np.zeros(d)
            for t in range(6):
                x = deltas[b, t]
                z = sig(x * g["W_z"][0] + h @ g["U_z"] + g["b_z"][0])
                r = sig(x * g["W_r"][0] + h @ g["U_r"] + g["b_r"][0])
                cand = np.tanh(x * g["W_h"][0] + (r * h) @ g["U_h"] + g["b_h"][0])
                h = z * h + (1.0 - z) * cand
                np.testing.assert_allclose(out[b, t], h, atol=1e-12)

    def test_gradcheck(self):
        rng = np.random.default_rng(1)
        p = TE.init_gru(3, rng)
        deltas = rng.normal(size=(2, 3))
        params = list(p.tensors().values())
        err = T.grad_check(lambda: T.tsum(T.tanh(TE.gru_encode(p, deltas))), params)
        assert err < 1e-5


class TestGateAndFuse:
    def test_gate_is_half_for_zero_mlp(self):
        d = 3
        zero = lambda *s: T.Tensor(np.zeros(s), requires_grad=True)
        p = TE.GateMlpParams(W1=zero(d, d), b1=zero(1, d), W2=zero(d, 1), b2=zero(1, 1))
        base = T.Tensor(np.random.default_rng(2).normal(size=(2, 4, d)))
        mask = np.ones((2, 4), dtype=bool)
        g = TE.gate(p, base, mask, np.array([4, 4]))
        np.testing.assert_array_equal(g.data, np.full((2, 1), 0.5))

    def test_gate_ignores_padded_rows(self):
        rng = np.random.default_rng(3)
        p = TE.init_gate_mlp(3, 3, rng)
        base = rng.normal(size=(1, 4, 3))
        mask = np.array([[True, True, False, False]])
        g1 = TE.gate(p, T.Tensor(base), mask, np.array([2])).data
        poked = base.copy()
        poked[0, 2:] = 99.0
        g2 = TE.gate(p, T.Tensor(poked), mask, np.array([2])).data
        np.testing.assert_array_equal(g1, g2)

    def test_gate_saturates_with_large_bias(self):
        d = 2
        zero = lambda *s: T.Tensor(np.zeros(s))
        p = TE.GateMlpParams(W1=zero(d, d), b1=zero(1, d), W2=zero(d, 1),
                             b2=T.Tensor(np.full((1, 1), 50.0)))
        base = T.Tensor(np.zeros((1, 2, d)))
        g = TE.gate(p, base, np.ones((1, 2), bool), np.array([2]))
        assert g.data[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_fuse_constants(self):
        rng = np.random.default_rng(4)
        a = T.Tensor(rng.normal(size=(2, 3, 4)))
        b = T.Tensor(rng.normal(size=(2, 3, 4)))
        np.testing.assert_array_equal(TE.fuse(a, b, 1.0).data, a.data)
        np.testing.assert_array_equal(TE.fuse(a, b, 0.0).data, b.data)
        np.testing.assert_allclose(TE.fuse(a, b, 0.5).data,
                                   (a.data + b.data) / 2, atol=1e-15)

    def test_fuse_tensor_gamma_interpolates(self):
        a = T.Tensor(np.ones((2, 3, 4)))
        b = T.Tensor(np.zeros((2, 3, 4)))
        gamma = T.Tensor(np.array([[0.25], [0.75]]))
        out = TE.fuse(a, b, gamma)
        np.testing.assert_allclose(out.data[0], 0.25, atol=1e-15)
        np.testing.assert_allclose(out.data[1], 0.75, atol=1e-15)


class TestBaseEmbeddings:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.M_V = T.Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        self.M_E = T.Tensor(rng.normal(size=(5, 4)), requires_grad=True)

    def test_alpha_one_is_pure_lookup(self):
        items = np.array([[1, 2]])
        expls = np.array([[3, 0]])
        e_rec, e_exp = TE.base_embeddings(items, expls, self.M_V, self.M_E, 1.0)
        np.testing.assert_array_equal(e_rec.data[0, 0], self.M_V.data[1])
        np.testing.assert_array_equal(e_exp.data[0, 1], self.M_E.data[0])

    def test_alpha_half_makes_branches_identical(self):
        items = np.array([[1, 2, 3]])
        expls = np.array([[0, 4, 1]])
        e_rec, e_exp = TE.base_embeddings(items, expls, self.M_V, self.M_E, 0.5)
        np.testing.assert_array_equal(e_rec.data, e_exp.data)

    def test_mix_formula(self):
        items = np.array([[2]])
        expls = np.array([[3]])
        e_rec, _ = TE.base_embeddings(items, expls, self.M_V, self.M_E, 0.9)
        expected = 0.9 * self.M_V.data[2] + 0.1 * self.M_E.data[3]
        np.testing.assert_allclose(e_rec.data[0, 0], expected, atol=1e-15)

    def test_alpha_out_of_range(self):
        with pytest.raises(ConfigError):
            TE.base_embeddings(np.array([[0]]), np.array([[0]]),
                               self.M_V, self.M_E, 1.5)


class TestTimeAwareEmbed:
    def run_pipeline(self, strategy, beta=0.1, seed=6):
        rng = np.random.default_rng(seed)
        d = 4
        kw = dict(
            M_V=T.Tensor(rng.normal(size=(6, d)), requires_grad=True),
            M_E=T.Tensor(rng.normal(size=(5, d)), requires_grad=True),
            gru_adj=TE.init_gru(d, rng), gru_abs=TE.init_gru(d, rng),
            gate_rec=TE.init_gate_mlp(d, d, rng),
            gate_exp=TE.init_gate_mlp(d, d, rng),
            alpha=0.9, beta=beta, strategy=strategy,
        )
        items = np.array([[1, 2, 3], [4, 5, 0]])
        expls = np.array([[1, 2, 3], [4, 0, 0]])
        times = np.array([[10, 20, 400], [5, 1000, 0]])
        mask = np.array([[True, True, True], [True, True, False]])
        lengths = np.array([3, 2])
        return TE.time_aware_embed(items, expls, times, mask, lengths, **kw)

    def test_disabled_returns_base_unchanged(self):
        out = self.run_pipeline("disabled")
        assert out["E_rec_time"] is out["E_rec"]
        assert out["E_exp_time"] is out["E_exp"]

    def test_beta_zero_matches_disabled(self):
        a = self.run_pipeline("gated", beta=0.0)
        b = self.run_pipeline("disabled", beta=0.0)
        np.testing.assert_array_equal(a["E_rec_time"].data, b["E_rec_time"].data)

    def test_gated_produces_gates(self):
        out = self.run_pipeline("gated")
        assert out["gamma_rec"].data.shape == (2, 1)
        assert np.all((out["gamma_rec"].data > 0) & (out["gamma_rec"].data < 1))

    def test_fixed_strategies_share_time_feature(self):
        # with a hard-set gamma both branches receive the same time feature
        out = self.run_pipeline("equal")
        diff_rec = out["E_rec_time"].data - out["E_rec"].data
        diff_exp = out["E_exp_time"].data - out["E_exp"].data
        np.testing.assert_allclose(diff_rec, diff_exp, atol=1e-15)
        assert out["gamma_rec"] is None

    def test_adj_abs_strategies_differ(self):
        a = self.run_pipeline("adj_only")
        b = self.run_pipeline("abs_only")
        assert np.abs(a["E_rec_time"].data - b["E_rec_time"].data).max() > 1e-8

    def test_beta_scales_time_residual_linearly(self):
        a = self.run_pipeline("equal", beta=0.1)
        b = self.run_pipeline("equal", beta=0.2)
        res_a = a["E_rec_time"].data - a["E_rec"].data
        res_b = b["E_rec_time"].data - b["E_rec"].data
        np.testing.assert_allclose(res_b, 2.0 * res_a, atol=1e-12)

    def test_unknown_strategy(self):
        with pytest.raises(ConfigError):
            self.run_pipeline("sometimes")
