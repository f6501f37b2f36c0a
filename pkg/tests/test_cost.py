import csv
from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from dualprop.cost import (ATTENTION_STAGES, CostConfig, block_flops, cost_table, geometry,
                           model_curves, write_series_csv)
from dualprop.reference import reference_curves, reference_gflops

import oracles

SMALL = CostConfig(T=4, H=48, W=64, channels=2, token_channels=8, heads=2, ffn_ratio=2)


def test_zero_mask_ratio_zero_attention():
    for cfg in (CostConfig(), SMALL, replace(SMALL, expansion=False, global_tokens=False)):
        rep = block_flops(replace(cfg, mask_ratio=0.0))
        assert rep.attention_exact == 0 and rep.stages["projections"] == 0


def test_dense_qk_quadratic_in_T():
    base = CostConfig(kv_stride=1, mask_ratio=1.0)
    a = block_flops(replace(base, T=10)).stages["qk"]
    b = block_flops(replace(base, T=20)).stages["qk"]
    assert Fraction(b) / Fraction(a) == 4


@pytest.mark.parametrize("kv_stride", [1, 2, 3])
def test_sparse_dense_ratio_exact(kv_stride):
    base = CostConfig(T=12)
    total = geometry(base)["total_windows"]
    for k in range(total + 1):
        sparse = base.sparse(Fraction(k, total), kv_stride)
        s, d = block_flops(sparse), block_flops(base.dense())
        for stage in ATTENTION_STAGES:
            assert Fraction(s.stages[stage]) / Fraction(d.stages[stage]) == Fraction(k, total * kv_stride)


def test_sparse_scaling_with_T():
    base = CostConfig().sparse(Fraction(1, 4), 2)
    a = block_flops(replace(base, T=10)).stages["qk"]
    b = block_flops(replace(base, T=20)).stages["qk"]
    assert Fraction(b) / Fraction(a) == 4


def test_active_windows_round_up():
    g = geometry(CostConfig(mask_ratio=1 / 6))
    assert g["total_windows"] == 16 and g["active_windows"] == 3


@settings(max_examples=40)
@given(st.sampled_from(["T", "H", "W", "mask_ratio"]), st.integers(0, 6))
def test_monotone(field, step):
    base = CostConfig(T=6, H=96, W=128, mask_ratio=0.3, kv_stride=2)
    lo = getattr(base, field)
    hi = lo + (0.1 * step if field == "mask_ratio" else 2 * step)
    hi = min(hi, 1.0) if field == "mask_ratio" else hi
    assert block_flops(replace(base, **{field: hi})).total >= block_flops(base).total


@pytest.mark.parametrize("expansion,global_tokens,kv_stride,ratio",
                         [(True, True, 2, 0.5), (False, False, 1, 1.0), (True, False, 1, 0.25),
                          (False, True, 2, 0.0)])
def test_matches_loop_counter(expansion, global_tokens, kv_stride, ratio):
    cfg = replace(SMALL, expansion=expansion, global_tokens=global_tokens, kv_stride=kv_stride,
                  mask_ratio=ratio)
    rep = block_flops(cfg)
    g = rep.geometry
    mt, nt = g["tokens"]
    frames = list(range(0, cfg.T, kv_stride))
    macs = oracles.count_block_macs(cfg.T, mt, nt, cfg.window, cfg.token_channels,
                                    cfg.kernel[0] * cfg.kernel[1] * cfg.channels,
                                    cfg.ffn_ratio * cfg.token_channels, g["active_windows"],
                                    frames, expansion, global_tokens)
    for stage, count in macs.items():
        assert rep.stages[stage] == 2 * count, stage
    assert rep.total == sum(rep.stages.values())


def test_invalid_config():
    with pytest.raises(ValueError):
        CostConfig(mask_ratio=1.5)
    with pytest.raises(ValueError):
        CostConfig(T=0)


def test_reference_lookups():
    assert reference_gflops("Ours", length=10) == 25.77
    assert reference_gflops("Ours", length=60) == 253
    assert reference_gflops("FuseFormer", length=40) == 937
    assert reference_gflops("E2FGVI", length=10) == 37.65
    assert reference_gflops("Ours", resolution="480p") == 95
    assert reference_gflops("ours", resolution=960) == 374
    with pytest.raises(KeyError):
        reference_gflops("Ours", length=15)
    with pytest.raises(ValueError):
        reference_gflops("Ours")


def test_reference_orderings():
    ref = reference_curves()["length"]
    pts = {k: dict(v) for k, v in ref.items()}
    for t, ours in pts["Ours"].items():
        assert ours < pts["E2FGVI"][t] < pts["FGT"][t]
        if t in pts["FuseFormer"]:
            assert ours < pts["FuseFormer"][t]


def test_model_ordering_sparse_below_dense():
    curves = model_curves()
    for key in ("length", "resolution"):
        sparse, dense = curves[key]["model-sparse"], curves[key]["model-dense"]
        assert all(s < d for (_, s), (_, d) in zip(sparse, dense))
        ys = [y for _, y in sparse]
        assert ys == sorted(ys)


def test_csv_and_table(tmp_path):
    path = tmp_path / "series.csv"
    write_series_csv(path, {"a": [(10, 1.5), (20, 3.0)]})
    rows = list(csv.reader(open(path)))
    assert rows == [["method", "x", "gflops"], ["a", "10", "1.5"], ["a", "20", "3"]]
    table = cost_table()
    assert "25.77" in table and "model-sparse" in table.splitlines()[0]
