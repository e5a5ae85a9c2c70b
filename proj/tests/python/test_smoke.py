# Copyright (C) 2026 The mixkvq Authors
# SPDX-License-Identifier: Apache-2.0

import math

import numpy as np
import pytest

import mixkvq


def test_quantize_round_trip_against_numpy():
    rng = np.random.default_rng(0)
    x = rng.normal(size=37) * 5.0
    for bits in (2, 4):
        g = mixkvq.quantize_group(x.tolist(), bits)
        levels = (1 << bits) - 1
        scale = (x.max() - x.min()) / levels
        assert g["scale"] == pytest.approx(scale, rel=1e-12)
        assert g["zero_point"] == x.min()
        back = np.array(mixkvq.dequantize_group(g["codes"], g["scale"], g["zero_point"], bits))
        assert np.all(np.abs(back - x) <= scale / 2 + 1e-12)
        assert len(g["packed"]) == math.ceil(37 * bits / 8)


def test_pack_layout_and_corruption():
    assert mixkvq.pack_codes([0, 1, 2, 3], 2) == b"\xe4"
    assert mixkvq.unpack_codes(b"\xe4", 2, 4) == [0, 1, 2, 3]
    with pytest.raises(mixkvq.MixKVQError, match="CorruptBuffer"):
        mixkvq.unpack_codes(b"\xe4\x00", 2, 4)


def test_salience_pipeline():
    rng = np.random.default_rng(1)
    q = rng.normal(size=(20, 6))
    k = rng.normal(size=(20, 6))
    imp = np.array(mixkvq.importance_score(q))
    sens = np.array(mixkvq.sensitivity_score(k))
    np.testing.assert_allclose(imp, np.abs(q).mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(sens, (k.max(axis=0) - k.min(axis=0)) / 3, rtol=1e-12)
    sal = np.array(mixkvq.salience_score(imp.tolist(), sens.tolist()))
    np.testing.assert_allclose(sal, imp * sens)
    assert mixkvq.assign_precision([1.44, 0.79, 2.0], 1.44, 0.79) == ["uint4", "uint2", "bf16"]
    assert mixkvq.error_only_assignment([3.0, 1.0, 2.0], 1, 1) == ["bf16", "uint2", "uint4"]
    assert mixkvq.salience_topk_assignment([0.0, 5.0, 1.0], 1, 1) == ["uint2", "bf16", "uint4"]


def test_rope_preserves_pair_norms():
    x = np.arange(12, dtype=float).reshape(3, 4)
    y = mixkvq.apply_rope(x, [0.0, 1.0, 7.0])
    np.testing.assert_allclose(y[0], x[0])
    np.testing.assert_allclose(np.hypot(y[:, 0], y[:, 1]), np.hypot(x[:, 0], x[:, 1]))


def test_cache_streaming_and_snapshot():
    cfg = mixkvq.CacheConfig()
    cfg.group_size, cfg.residual_len, cfg.sink_len = 4, 8, 2
    rng = np.random.default_rng(2)
    k, v, q = (rng.normal(size=(20, 5)) for _ in range(3))
    cache = mixkvq.MixKVCache(cfg, 5, 5)
    for t in range(20):
        cache.append_kv(k[t], v[t], q[t], t)
    assert cache.flushed_tokens == 16
    assert cache.residual_size == 4
    rk = cache.reconstruct_keys()
    np.testing.assert_array_equal(rk[:2], k[:2])
    np.testing.assert_array_equal(rk[16:], k[16:])
    assert 2.0 < cache.effective_bitwidth() <= 16.0
    assert len(cache.assignments()) == 2
    assert mixkvq.MixKVCache.from_bytes(cache.to_bytes()) == cache

    empty = mixkvq.MixKVCache(cfg, 5, 5)
    with pytest.raises(mixkvq.MixKVQError, match="NothingToFlush"):
        empty.flush_block()
    with pytest.raises(mixkvq.MixKVQError, match="Undefined"):
        empty.effective_bitwidth()


def test_attention_helpers():
    rng = np.random.default_rng(3)
    q, k, v = rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=(5, 2))
    weights, out = mixkvq.attention_exact(q, k, v)
    logits = q @ k.T / 2.0
    ref = np.exp(logits - logits.max(axis=1, keepdims=True))
    ref /= ref.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(weights, ref, rtol=1e-12)
    np.testing.assert_allclose(out, ref @ v, rtol=1e-12)
    kt = k + 0.1
    np.testing.assert_allclose(mixkvq.attention_error(q, k, kt), q @ (k - kt).T, atol=1e-12)


def test_decode_and_search():
    spec = mixkvq.PlantedSpec(channels=16, tokens=64, scale_outliers=2, query_outliers=2)
    cfg = mixkvq.CacheConfig()
    cfg.group_size, cfg.residual_len, cfg.sink_len = 8, 16, 8
    full = mixkvq.decode_simulation(spec, 0, cfg, "full-precision", steps=64)
    assert full.output_error_frobenius == 0.0
    two = mixkvq.decode_simulation(spec, 0, cfg, "kv2", steps=64)
    four = mixkvq.decode_simulation(spec, 0, cfg, "kv4", steps=64)
    assert four.e_attn_frobenius < two.e_attn_frobenius
    assert two.policy_label == "kv2"

    result = mixkvq.pareto_search(spec, [0, 1], cfg, grid=3, steps=64, max_b_eff=16.0)
    assert len(result["evaluated"]) == 7
    assert result["frontier"] == mixkvq.pareto_frontier(result["evaluated"])
    assert result["selected"] is not None
    with pytest.raises(mixkvq.MixKVQError, match="BudgetInfeasible"):
        mixkvq.select_under_budget(result["frontier"], 0.5)


def test_dump_round_trip(tmp_path):
    path = str(tmp_path / "d.bin")
    data = np.arange(6, dtype=np.float32).reshape(2, 3)
    mixkvq.write_dump({"L0.H0.K": data}, path)
    back = mixkvq.read_dump(path)
    np.testing.assert_array_equal(back["L0.H0.K"], data)
    with open(path, "r+b") as f:
        f.write(b"X")
    with pytest.raises(mixkvq.MixKVQError, match="UnsupportedFormat"):
        mixkvq.read_dump(path)
