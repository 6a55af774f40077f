import random

import numpy as np
import pytest

from ecad.hwmodel import SystolicConfig, block_geometry, compute_cycles
from ecad.nnsim import LayerParams
from ecad.sysarray import (
    ArrayState,
    SimulationError,
    block_pack,
    block_unpack,
    classify,
    run_network,
    simulate_flush,
    simulate_layer,
    tree_reduce,
)

from helpers import mlp_desc
from oracles import dense_oracle, max_rel_error, ordered_oracle, scalar_ordered_oracle


def random_case(rng):
    cfg = SystolicConfig(
        rows=rng.choice([1, 2, 4]), cols=rng.choice([1, 2, 4, 8]),
        vec=rng.choice([1, 2, 4, 8, 16]), interleave=rng.choice([1, 2, 4, 8, 16]),
        scale=rng.choice([1, 2, 3, 4]),
    )
    m, k, n = (rng.randint(1, 512) for _ in range(3))
    return cfg, m, k, n


class TestBlocking:
    def test_hand_checkable_3x3(self):
        a = np.arange(9, dtype=np.float32).reshape(3, 3)
        bm = block_pack(a, 2, 2)
        assert bm.data.shape == (2, 2, 2, 2)
        assert np.array_equal(bm.block(0, 0), [[0, 1], [3, 4]])
        assert np.array_equal(bm.block(1, 1), [[8, 0], [0, 0]])   # zero padding
        assert np.array_equal(block_unpack(bm), a)

    def test_common_dim_784_by_144(self):
        a = np.ones((4, 784), dtype=np.float32)
        bm = block_pack(a, 4, 144)
        assert bm.data.shape[1] == 6                       # six column blocks
        padded = bm.data.transpose(0, 2, 1, 3).reshape(4, 6 * 144)
        assert np.all(padded[:, 784:] == 0)                # final 80 columns are padding
        assert np.all(padded[:, :784] == 1)

    def test_round_trip_property(self):
        rng = random.Random(0)
        for _ in range(60):
            rows, cols = rng.randint(1, 97), rng.randint(1, 61)
            br, bc = rng.randint(1, 16), rng.randint(1, 16)
            a = np.random.default_rng(rng.randint(0, 10**6)).uniform(
                -1, 1, (rows, cols)).astype(np.float32)
            for transposed in (False, True):
                assert np.array_equal(block_unpack(block_pack(a, br, bc, transposed)), a)

    def test_pad_values_exactly_zero(self):
        a = np.full((5, 7), 3.5, dtype=np.float32)
        bm = block_pack(a, 4, 4)
        total = float(np.sum(bm.data))
        assert total == 5 * 7 * 3.5


class TestTreeReduce:
    def test_matches_scalar_tree(self):
        rng = np.random.default_rng(0)
        for n in [1, 2, 3, 4, 5, 7, 8, 11, 16, 30]:
            x = rng.uniform(-1, 1, (4, n)).astype(np.float32)
            got = tree_reduce(x)
            for i in range(4):
                vals = [np.float32(v) for v in x[i]]
                while len(vals) > 1:
                    nxt = [vals[j] + vals[j + 1] for j in range(0, len(vals) - 1, 2)]
                    if len(vals) % 2:
                        nxt.append(vals[-1])
                    vals = nxt
                assert got[i] == vals[0]


class TestSimulateLayer:
    def test_identity_operand(self):
        rng = np.random.default_rng(1)
        b = rng.uniform(-1, 1, (8, 8)).astype(np.float32)
        c, _ = simulate_layer(np.eye(8, dtype=np.float32), b, SystolicConfig(2, 2, 2, 2, 2))
        assert np.array_equal(c, b)

    def test_against_dense_oracle_reference_case(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(-1, 1, (64, 784)).astype(np.float32)
        b = rng.uniform(-1, 1, (784, 852)).astype(np.float32)
        c, _ = simulate_layer(a, b, SystolicConfig(2, 8, 16, 16, 2))
        assert max_rel_error(c, dense_oracle(a, b)) <= 1e-4

    def test_bit_exact_vs_ordered_oracle(self):
        rng = random.Random(11)
        for _ in range(25):
            cfg, m, k, n = random_case(rng)
            m, k, n = m % 120 + 1, k % 120 + 1, n % 120 + 1
            data = np.random.default_rng(rng.randint(0, 10**6))
            a = data.uniform(-1, 1, (m, k)).astype(np.float32)
            b = data.uniform(-1, 1, (k, n)).astype(np.float32)
            bias = data.uniform(-1, 1, n).astype(np.float32)
            relu = rng.random() < 0.5
            c, _ = simulate_layer(a, b, cfg, bias=bias, relu=relu)
            expected = ordered_oracle(a, b, cfg.vec, cfg.scale,
                                      cfg.rows * cfg.interleave, cfg.cols * cfg.interleave,
                                      bias=bias, relu=relu)
            assert np.array_equal(c, expected)

    def test_both_oracles_agree_on_tiny_cases(self):
        # validates the vectorized oracle itself against explicit scalar loops
        rng = random.Random(21)
        for _ in range(10):
            cfg = SystolicConfig(rng.choice([1, 2]), rng.choice([1, 2]),
                                 rng.choice([1, 2, 3]), rng.choice([1, 2]), rng.choice([1, 2]))
            m, k, n = rng.randint(1, 6), rng.randint(1, 9), rng.randint(1, 6)
            data = np.random.default_rng(rng.randint(0, 10**6))
            a = data.uniform(-1, 1, (m, k)).astype(np.float32)
            b = data.uniform(-1, 1, (k, n)).astype(np.float32)
            sim, _ = simulate_layer(a, b, cfg)
            vec_oracle = ordered_oracle(a, b, cfg.vec, cfg.scale,
                                        cfg.rows * cfg.interleave, cfg.cols * cfg.interleave)
            scal_oracle = scalar_ordered_oracle(a, b, cfg.vec, cfg.scale)
            assert np.array_equal(vec_oracle, scal_oracle)
            assert np.array_equal(sim, scal_oracle)

    def test_zero_weights_bias_relu(self):
        a = np.random.default_rng(3).uniform(-1, 1, (6, 12)).astype(np.float32)
        b = np.zeros((12, 5), dtype=np.float32)
        bias = np.array([-2.0, -0.5, 0.0, 0.5, 2.0], dtype=np.float32)
        c, _ = simulate_layer(a, b, SystolicConfig(2, 2, 2, 2, 2), bias=bias, relu=True)
        assert np.array_equal(c, np.tile(np.maximum(bias, 0), (6, 1)))

    def test_bias_bypass_equals_matmul(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(-1, 1, (9, 33)).astype(np.float32)
        b = rng.uniform(-1, 1, (33, 17)).astype(np.float32)
        c, _ = simulate_layer(a, b, SystolicConfig(2, 4, 4, 4, 2))
        assert max_rel_error(c, dense_oracle(a, b)) <= 1e-4

    def test_padding_neutrality(self):
        rng = np.random.default_rng(5)
        cfg = SystolicConfig(2, 2, 4, 4, 2)
        a = rng.uniform(-1, 1, (10, 20)).astype(np.float32)
        b = rng.uniform(-1, 1, (20, 12)).astype(np.float32)
        base, _ = simulate_layer(a, b, cfg)
        a_pad = np.zeros((17, 29), dtype=np.float32)
        b_pad = np.zeros((29, 23), dtype=np.float32)
        a_pad[:10, :20] = a
        b_pad[:20, :12] = b
        grown, _ = simulate_layer(a_pad, b_pad, cfg)
        assert np.array_equal(grown[:10, :12], base)

    def test_cycle_contract(self):
        rng = random.Random(6)
        for _ in range(40):
            cfg, m, k, n = random_case(rng)
            m, k, n = m % 200 + 1, k % 200 + 1, n % 200 + 1
            data = np.random.default_rng(0)
            a = data.uniform(-1, 1, (m, k)).astype(np.float32)
            b = data.uniform(-1, 1, (k, n)).astype(np.float32)
            _, stats = simulate_layer(a, b, cfg)
            assert stats.compute_cycles == compute_cycles(cfg, m, k, n)
            g = block_geometry(cfg, m, k, n)
            assert stats.drain_elements == g.m_pad * g.n_pad
            assert stats.a_blocks == stats.b_blocks == g.m_blocks * g.n_blocks * g.k_blocks

    def test_shape_mismatch(self):
        with pytest.raises(SimulationError):
            simulate_layer(np.zeros((2, 3), dtype=np.float32),
                           np.zeros((4, 2), dtype=np.float32), SystolicConfig(1, 1, 1, 1, 1))


class TestFlush:
    def test_flush_zeroes_accumulators(self):
        cfg = SystolicConfig(2, 2, 2, 2, 2)
        state = ArrayState(cfg)
        rng = np.random.default_rng(7)
        a = rng.uniform(-1, 1, (4, 8)).astype(np.float32)
        b = rng.uniform(-1, 1, (8, 4)).astype(np.float32)
        simulate_layer(a, b, cfg, state=state)
        simulate_flush(state)
        assert np.all(state.acc == 0)

    def test_layer_after_flush_sees_no_residue(self):
        cfg = SystolicConfig(2, 2, 2, 2, 2)
        state = ArrayState(cfg)
        rng = np.random.default_rng(8)
        a = rng.uniform(-1, 1, (4, 8)).astype(np.float32)
        b = rng.uniform(-1, 1, (8, 4)).astype(np.float32)
        simulate_layer(a, b, cfg, state=state)
        simulate_flush(state)
        bias = np.array([1.0, -1.0, 2.0, 0.0], dtype=np.float32)
        c, _ = simulate_layer(np.zeros((4, 8), dtype=np.float32), b, cfg,
                              bias=bias, state=state)
        assert np.array_equal(c, np.tile(bias, (4, 1)))

    def test_double_flush_idempotent(self):
        cfg = SystolicConfig(2, 2, 2, 2, 2)
        state = ArrayState(cfg)
        simulate_flush(state)
        acc_copy = state.acc.copy()
        simulate_flush(state)
        assert np.array_equal(state.acc, acc_copy)
        assert state.stats.flush_events == 2

    def test_mid_sequence_flush_differential(self):
        # run half a layer, flush, then a full layer: result equals a clean run
        cfg = SystolicConfig(2, 2, 2, 2, 2)
        rng = np.random.default_rng(9)
        a = rng.uniform(-1, 1, (4, 8)).astype(np.float32)
        b = rng.uniform(-1, 1, (8, 4)).astype(np.float32)
        state = ArrayState(cfg)
        simulate_layer(a[:2], b, cfg, state=state)      # partial work
        simulate_flush(state)
        c, _ = simulate_layer(a, b, cfg, state=state)
        clean, _ = simulate_layer(a, b, cfg)
        assert np.array_equal(c, clean)


class TestRunNetwork:
    def test_zero_weights_bias_relu(self):
        desc = mlp_desc([8, 6, 4], batch=5, cfg=(2, 2, 2, 2, 2))
        params = [
            LayerParams(np.zeros((8, 6), dtype=np.float32),
                        np.full(6, 0.5, dtype=np.float32)),
            LayerParams(np.zeros((6, 4), dtype=np.float32),
                        np.array([-1.0, 0.0, 1.0, 2.0], dtype=np.float32)),
        ]
        x = np.random.default_rng(10).uniform(0, 1, (5, 8)).astype(np.float32)
        out, stats = run_network(desc, params, x)
        assert np.array_equal(out, np.tile([-1.0, 0.0, 1.0, 2.0], (5, 1)))
        assert len(stats) == 2

    def test_matches_forward_small_net(self, small_dataset):
        from ecad.nnsim import forward, train
        desc = mlp_desc([784, 32, 10], batch=64, cfg=(2, 4, 8, 8, 2))
        mlp, _ = train(desc, small_dataset, epochs=1, batch_size=100, seed=5)
        x = small_dataset.test_x[:200]
        logits_sim, _ = run_network(desc, mlp.layers, x)
        logits_ref = forward(mlp, x)
        pred_sim = classify(logits_sim)
        pred_ref = np.argmax(logits_ref, axis=1)
        labels = np.argmax(small_dataset.test_y[:200], axis=1)
        assert np.mean(pred_sim == labels) == np.mean(pred_ref == labels)
        assert max_rel_error(logits_sim, logits_ref.astype(np.float64)) <= 1e-4

    def test_param_shape_mismatch(self):
        desc = mlp_desc([8, 4], batch=2, cfg=(1, 1, 1, 1, 1))
        bad = [LayerParams(np.zeros((8, 5), dtype=np.float32), np.zeros(5, dtype=np.float32))]
        with pytest.raises(SimulationError, match="weights shape"):
            run_network(desc, bad, np.zeros((2, 8), dtype=np.float32))

    def test_requires_systolic_config(self):
        desc = mlp_desc([8, 4], batch=2)
        params = [LayerParams(np.zeros((8, 4), dtype=np.float32), np.zeros(4, dtype=np.float32))]
        with pytest.raises(SimulationError, match="systolic"):
            run_network(desc, params, np.zeros((2, 8), dtype=np.float32))
