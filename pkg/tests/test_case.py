import json
import math

import pytest

from mosfet_pinn.case import (BUNDLED_CASES, CaseConfig, bundled_case, case_from_dict, case_to_dict,
                              parse_case_file, write_case_file)
from mosfet_pinn.errors import SchemaError


def test_a13_4_values():
    c = bundled_case("A13_4")
    assert c.power_w == 259.2
    assert (c.t_in_c, c.t_out_c) == (10.0226, 12.5535)
    assert c.probes_c["In1"] == 25.8598 and c.probes_c["In2"] == 25.9011
    assert c.training_probes == ("Face", "Side")
    assert c.delta_t2 == pytest.approx(2.5309)
    assert c.t_w_k == pytest.approx((10.0226 + 12.5535) / 2 + 273.15)


def test_v_exp_from_flow_rate():
    c = bundled_case("A13_4")
    v = 1.3951e-3 / 60.0 / (math.pi * 0.005 ** 2)
    assert c.v_exp == pytest.approx(v, rel=1e-12)
    assert round(c.v_exp, 3) == 0.296


def test_every_bundled_case_loads():
    for cid in BUNDLED_CASES:
        c = bundled_case(cid)
        assert c.case_id == cid and c.t_out_c > c.t_in_c


def test_a13_3_carries_the_per_run_power_with_a_note():
    c = bundled_case("A13_3")
    assert c.power_w == 201.4
    assert any("259.2" in n for n in c.notes)


def test_round_trip(tmp_path):
    c = bundled_case("A12_2")
    path = tmp_path / "c.json"
    write_case_file(c, path)
    assert parse_case_file(path) == c
    assert case_from_dict(case_to_dict(c)) == c


def test_parse_accepts_bundled_id():
    assert parse_case_file("A13_4") == bundled_case("A13_4")


def test_outlet_below_inlet_is_rejected():
    with pytest.raises(SchemaError):
        CaseConfig("bad", 100.0, 12.0, 10.0)


def test_missing_field_is_named():
    d = case_to_dict(bundled_case("A13_4"))
    del d["t_in_c"]
    with pytest.raises(SchemaError, match="t_in_c"):
        case_from_dict(d)


def test_unknown_probe_is_rejected():
    d = case_to_dict(bundled_case("A13_4"))
    d["probes_c"]["T9"] = 20.0
    with pytest.raises(SchemaError):
        case_from_dict(d)


def test_bad_files(tmp_path):
    with pytest.raises(SchemaError):
        parse_case_file(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(SchemaError):
        parse_case_file(p)
    p.write_text(json.dumps({**case_to_dict(bundled_case("A13_4")), "power_w": "lots"}))
    with pytest.raises(SchemaError):
        parse_case_file(p)
    with pytest.raises(SchemaError):
        bundled_case("Z99")
