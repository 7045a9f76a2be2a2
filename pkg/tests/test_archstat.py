import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmnet import archstat
from mmnet.model import HDB, HDBConfig, build_model, get_variant
from mmnet.nn import Conv
from mmnet.synth import PAPER_DIMS


def test_conv_and_sam_arithmetic():
    assert archstat.conv_params(4, 8, (3, 3, 3)) == 872
    assert archstat.count_params("sam").total_params == 12
    # 1x1x1, 1->1 on V voxels: 2V multiply-adds plus V bias adds
    v = 5 * 6 * 7
    assert archstat.conv_flops(1, 1, (1, 1, 1), v) == 3 * v


def test_conv_params_match_built_layer():
    conv = Conv(4, 8, 3, nd=3)
    assert sum(p.size for p in conv.parameters()) == 872


def test_halving_in_plane_divides_conv2d_flops_by_four():
    cfg = HDBConfig(8, 8, 8, 1)
    big = archstat.block_report(cfg, "hdb", (8, 4, 32, 32))
    small = archstat.block_report(cfg, "hdb", (8, 4, 16, 16))
    for lb, ls in zip(big.layers, small.layers):
        if lb.kind == "conv2d":
            assert lb.flops == 4 * ls.flops


@pytest.mark.parametrize("variant", ["mmnet-tiny", "mmnet18", "mmnet34", "resnet3d34", "p3d34"])
def test_totals_are_sums_and_match_built_models(variant):
    spec = get_variant(variant)
    rep = archstat.count_params(spec)
    assert rep.total_params == sum(l.params for l in rep.layers)
    assert rep.total_flops == sum(l.flops for l in rep.layers)
    assert all(l.params >= 0 and l.flops >= 0 for l in rep.layers)
    if variant in ("mmnet-tiny", "mmnet18"):
        assert build_model(spec).num_parameters() == rep.total_params


def test_params_independent_of_input_shape_and_flops_linear_in_batch():
    spec = get_variant("mmnet-tiny")
    a = archstat.count_flops(spec, (8, 32, 32))
    b = archstat.count_flops(spec, (12, 48, 40))
    assert a.total_params == b.total_params
    assert archstat.count_flops(spec, (8, 32, 32), batch=3).total_flops == 3 * a.total_flops


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([4, 8, 16, 32]), st.sampled_from([2, 4, 8]), st.sampled_from([8, 16, 32]),
       st.sampled_from([1, 2]), st.integers(2, 20))
def test_hdb_cheaper_than_3d_block_and_depth_free(cin, mid, cout, stride, depth):
    cfg = HDBConfig(cin, mid, cout, stride)
    shape = (cin, depth, 16, 16)
    hdb = archstat.block_report(cfg, "hdb", shape).total_params
    res3d = archstat.block_report(cfg, "res3d", shape).total_params
    assert hdb < res3d
    assert hdb == archstat.block_report(cfg, "hdb", (cin, 3, 16, 16)).total_params
    assert hdb == HDB(cfg, np.random.default_rng(0)).num_parameters()


def test_table_one_ratios():
    cmp = archstat.compare(get_variant("mmnet34"), get_variant("resnet3d34"), PAPER_DIMS)
    assert cmp["param_ratio"] <= 0.9
    assert cmp["flop_ratio"] <= 0.5


def test_tiny_is_small():
    assert archstat.count_params(get_variant("mmnet-tiny")).total_params < 10**6


def test_report_serialisation():
    rep = archstat.count_flops(get_variant("mmnet-tiny"))
    d = rep.to_dict()
    assert d["total_params"] == rep.total_params
    assert sum(v["params"] for v in d["by_block"].values()) == rep.total_params
    assert "TOTAL" in rep.to_table(per_layer=True)


def test_block_report_rejects_channel_mismatch():
    with pytest.raises(Exception):
        archstat.block_report(HDBConfig(4, 4, 8, 1), "hdb", (5, 4, 8, 8))


def test_attention_params_counted_once_per_instance():
    base = get_variant("mmnet-tiny")
    none = archstat.count_params(dataclasses.replace(base, attention="none")).total_params
    maf = archstat.count_params(base).total_params
    n_points = len(base.attention_points())
    assert maf - none == 2 * n_points * 12
