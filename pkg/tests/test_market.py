from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vbid.errors import InvalidConfig, MissingCell, NoReferenceNode, ParseError, ShapeMismatch
from vbid.market import (
    CostSchedule,
    BidPriceConvention,
    SyntheticConfig,
    compute_spreads,
    generate_synthetic_market,
    load_dataset,
    load_lmp_csv,
    synthetic_truth,
    write_dataset,
    write_lmp_csv,
)


def write_lmp(path, rows):
    path.write_text("hour,node_id,da_lmp,rt_lmp\n" + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return path


def test_spread_from_literal(tmp_path):
    p = write_lmp(tmp_path / "lmp.csv", [("2017-01-01T00:00:00Z", "n1", "6.37", "0.0")])
    panel = load_lmp_csv(p)
    assert panel.spread[0, 0] == 6.37


def test_equal_prices_give_zero_spread(tmp_path):
    p = write_lmp(tmp_path / "lmp.csv", [("2017-01-01T00:00:00Z", "n1", "31.5", "31.5")])
    assert load_lmp_csv(p).spread[0, 0] == 0.0


def test_missing_cell(tmp_path):
    rows = [(f"2017-01-01T0{h}:00:00Z", n, "1", "2") for h in range(3) for n in ("a", "b")][:-1]
    with pytest.raises(MissingCell):
        load_lmp_csv(write_lmp(tmp_path / "lmp.csv", rows))


def test_rows_sorted_and_reference(tmp_path):
    rows = [("2017-01-01T01:00:00Z", "b", "3", "1"), ("2017-01-01T00:00:00Z", "b", "2", "1"),
            ("2017-01-01T01:00:00Z", "a", "5", "1"), ("2017-01-01T00:00:00Z", "a", "4", "1")]
    p = write_lmp(tmp_path / "lmp.csv", rows)
    panel = load_lmp_csv(p, ref_node="b")
    assert panel.nodes == ("a", "b")
    assert panel.ref_node == "b"
    np.testing.assert_array_equal(panel.spread, [[3, 4], [1, 2]])
    with pytest.raises(NoReferenceNode):
        load_lmp_csv(p, ref_node="zz")


@pytest.mark.parametrize("bad", [("2017-01-01 00:00", "a", "1", "2"), ("2017-01-01T00:00:00Z", "a", "x", "2"),
                                 ("2017-01-01T00:30:00Z", "a", "1", "2"), ("2017-01-01T00:00:00Z", "a", "nan", "2")])
def test_malformed_rows(tmp_path, bad):
    with pytest.raises(ParseError):
        load_lmp_csv(write_lmp(tmp_path / "lmp.csv", [bad]))


def test_compute_spreads():
    assert compute_spreads([[10]], [[4]]).tolist() == [[6]]
    x = np.random.default_rng(0).normal(size=(3, 4))
    assert not compute_spreads(x, x).any()
    with pytest.raises(ShapeMismatch):
        compute_spreads(np.zeros((2, 2)), np.zeros((2, 3)))


def test_compute_spreads_elementwise_oracle():
    rng = np.random.default_rng(11)
    da, rt = rng.normal(30, 10, (5, 24)), rng.normal(30, 10, (5, 24))
    out = compute_spreads(da, rt)
    for i in range(5):
        for h in range(24):
            assert out[i, h] == da[i, h] - rt[i, h]


def test_cost_and_convention_validation():
    with pytest.raises(InvalidConfig):
        CostSchedule(gamma_inc=-1)
    with pytest.raises(InvalidConfig):
        BidPriceConvention(10, 10)
    conv = BidPriceConvention()
    assert conv.inc_clears(-150) and conv.dec_clears(1000)


@given(st.lists(st.tuples(st.decimals(-999, 9999, places=2), st.decimals(-999, 9999, places=2)),
                min_size=1, max_size=30))
def test_ingest_identity_exact(tmp_path_factory, prices):
    d = tmp_path_factory.mktemp("lmp")
    rows = [(f"2017-01-{1 + t // 24:02d}T{t % 24:02d}:00:00Z", "n", da, rt) for t, (da, rt) in enumerate(prices)]
    panel = load_lmp_csv(write_lmp(d / "lmp.csv", rows))
    np.testing.assert_array_equal(panel.spread_units + panel.rt_units, panel.da_units)
    for t, (da, rt) in enumerate(prices):
        assert panel.spread[0, t] == float(Decimal(da) - Decimal(rt))


def test_round_trip(tmp_path):
    ds = generate_synthetic_market(SyntheticConfig(n_nodes=3, n_days=3), 5)
    write_dataset(ds, tmp_path / "a")
    back = load_dataset(tmp_path / "a" / "lmp.csv", tmp_path / "a" / "features.csv", tmp_path / "a" / "vbids.csv")
    assert back.panel == ds.panel
    np.testing.assert_array_equal(back.features.values, ds.features.values)
    np.testing.assert_array_equal(back.vbids.inc, ds.vbids.inc)
    write_lmp_csv(back.panel, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == (tmp_path / "a" / "lmp.csv").read_bytes()


def test_synthetic_deterministic():
    cfg = SyntheticConfig(n_nodes=2, n_days=4)
    a, b = generate_synthetic_market(cfg, 9), generate_synthetic_market(cfg, 9)
    assert a.panel == b.panel
    np.testing.assert_array_equal(a.features.values, b.features.values)
    np.testing.assert_array_equal(a.vbids.dec, b.vbids.dec)
    assert not np.array_equal(generate_synthetic_market(cfg, 10).panel.da, a.panel.da)


def test_synthetic_bounded_without_spikes():
    cfg = SyntheticConfig(n_days=30, spike_prob=0.0, base_range=20.0)
    ds = generate_synthetic_market(cfg, 1)
    # cent rounding of DA and RT can add at most one cent
    assert np.abs(ds.panel.spread).max() <= cfg.base_range + 0.01


def test_synthetic_slope_recovered():
    cfg = SyntheticConfig(spike_prob=0.0, n_days=120)
    net = np.random.default_rng(1).normal(0, 10, 24 * cfg.n_days)
    ds = generate_synthetic_market(cfg, 3, net_override=net)
    A = np.column_stack([np.ones_like(net), net])
    slope = np.linalg.lstsq(A, ds.panel.ref_spread, rcond=None)[0][1]
    assert abs(slope - cfg.sensitivity_slope) <= 0.05


def test_synthetic_strictly_decreasing_in_net():
    cfg = SyntheticConfig(n_days=5)
    base = synthetic_truth(cfg, 2).net_quantity
    lo = synthetic_truth(cfg, 2, net_override=base).spread
    hi = synthetic_truth(cfg, 2, net_override=base + 1.0).spread
    assert np.all(hi < lo)


def test_synthetic_mean_within_three_standard_errors():
    cfg = SyntheticConfig(spike_prob=0.0, n_days=500)
    s = generate_synthetic_market(cfg, 0).panel.spread.ravel()
    assert s.size >= 10_000
    assert abs(s.mean() - cfg.spread_mean) <= 3 * s.std() / np.sqrt(s.size)


@pytest.mark.parametrize("kw", [dict(n_nodes=0), dict(n_days=0), dict(spike_prob=1.5), dict(sensitivity_slope=0.1)])
def test_synthetic_config_validation(kw):
    with pytest.raises(InvalidConfig):
        SyntheticConfig(**kw)
