import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mosfet_pinn import domain as dm
from mosfet_pinn.case import bundled_case
from mosfet_pinn.errors import ConfigurationError, GeometryError, SamplingError, SchemaError


@pytest.fixture(scope="module")
def rig():
    return dm.default_rig()


def test_default_rig_layers_tile_the_stack(rig):
    assert [L.id for L in rig.layers] == [0, 1, 2, 3, 4]
    assert rig.layers[0].y_bottom == 0.0
    for a, b in zip(rig.layers, rig.layers[1:]):
        assert a.y_top == b.y_bottom
    assert rig.y_N == pytest.approx(0.0256)
    assert [L.k for L in rig.layers] == [200.0, 0.842, 142.0, 0.842, 142.0]
    assert all(p.k_pipe == 16.2 and p.r_inner == 0.005 for p in rig.pipes)


def test_overlapping_layers_are_rejected(rig):
    bad = list(rig.layers)
    bad[1] = dataclasses.replace(bad[1], y_bottom=bad[1].y_bottom - 1e-3)
    with pytest.raises(GeometryError):
        dataclasses.replace(rig, layers=tuple(bad))


def test_pipe_outside_cold_plate_is_rejected(rig):
    p = dataclasses.replace(rig.pipes[0], center=(0.025, 0.02))
    with pytest.raises(GeometryError):
        dataclasses.replace(rig, pipes=(p,) + rig.pipes[1:])


def test_nondim_point_examples():
    s = dm.NondimScales(0.1, 0.02, 300.0)
    assert dm.nondim_point((0.0, 0.0), s) == (0.0, 0.0)
    assert dm.nondim_point((0.1, 0.02), s) == (1.0, 1.0)
    assert dm.nondim_point((0.05, 0.0), s)[0] == 0.5


def test_nondim_temp_examples():
    s = dm.NondimScales(1.0, 1.0, 283.15)
    assert dm.nondim_temp(283.15, s) == 0.0
    assert dm.nondim_temp(2 * 283.15, s) == 1.0


def test_temperature_round_trip():
    s = dm.NondimScales(1.0, 1.0, 283.1726)
    u = np.random.default_rng(0).uniform(250.0, 400.0, 1000)
    np.testing.assert_allclose(dm.redim_temp(dm.nondim_temp(u, s), s), u, rtol=1e-15, atol=0)


@settings(max_examples=50)
@given(x=st.floats(-1, 1), y=st.floats(-1, 1), xl=st.floats(1e-3, 10), yl=st.floats(1e-3, 10))
def test_point_round_trip(x, y, xl, yl):
    s = dm.NondimScales(xl, yl, 300.0)
    bx, by = dm.redim_point(dm.nondim_point((x, y), s), s)
    assert bx == pytest.approx(x, rel=1e-15, abs=1e-300)
    assert by == pytest.approx(y, rel=1e-15, abs=1e-300)


def test_scales_must_be_positive():
    with pytest.raises(ConfigurationError):
        dm.NondimScales(0.0, 1.0, 1.0)


def test_conductivity_scalings():
    s = dm.NondimScales(0.3, 0.0256, 283.15)
    assert dm.k_star(200.0, s) == pytest.approx(200 * 283.15 / (0.09 * 0.0256 ** 2))
    assert dm.k_hat(142.0, s) == pytest.approx(142 * 283.15 / 0.0256)


def test_flux_per_depth_examples(rig):
    assert dm.flux_per_depth(0.0, 142.0) == 0.0
    assert dm.flux_per_depth(142.0, 142.0) == 1.0
    with pytest.raises(ConfigurationError):
        dm.flux_per_depth(1.0, 0.0)
    # A13_4: 259.2 W over a 0.05 m x 0.3 m footprint, into k_4 = 142
    q = dm.heat_flux_density(bundled_case("A13_4").power_w, rig)
    assert q == pytest.approx(259.2 / (0.05 * 0.3))
    assert dm.flux_per_depth(q, 142.0) == pytest.approx(17280.0 / 142.0)
    s = dm.default_scales(rig, 10.0226)
    assert dm.flux_star(17280.0 / 142.0, s) == pytest.approx(17280.0 / 142.0 * 0.0256 / 283.1726)


@pytest.fixture(scope="module")
def paper_set(rig):
    return dm.sample(rig, dm.SampleCounts.paper(), seed=0)


def test_paper_counts_are_honoured(paper_set):
    c = paper_set.counts()
    assert c["interior/layer0"] == 7624
    assert c["interior/layer1"] == c["interior/layer2"] == c["interior/layer3"] == 6000
    assert c["interior/layer4"] == 7000
    assert all(c[f"periodic/layer{i}"] == 200 for i in range(5))
    assert c["bottom"] == 200 and c["top_flux"] == 300
    assert all(c[f"planar/{i}-{i + 1}"] == 200 for i in range(4))


def test_layer0_points_avoid_pipes(rig, paper_set):
    s = paper_set.scales
    P = paper_set.interior["layer0"]
    assert not rig.in_pipe_hole(P[:, 0] * s.x_L, P[:, 1] * s.y_L).any()


def test_circular_points_lie_on_their_circles(rig, paper_set):
    s = paper_set.scales
    for store, attr in ((paper_set.circ_outer, "r_outer"), (paper_set.circ_inner, "r_inner")):
        for pid, P in store.items():
            p = rig.pipe(pid)
            r = np.hypot(P[:, 0] * s.x_L - p.center[0], P[:, 1] * s.y_L - p.center[1])
            np.testing.assert_allclose(r, getattr(p, attr), rtol=1e-10)


def test_lhs_stratifies_one_dimensional_sets(paper_set):
    # every one of the n equal bins of the interval holds exactly one point
    x = paper_set.bottom
    bins = np.floor(x * len(x)).astype(int)
    assert sorted(bins) == list(range(len(x)))


def test_sampling_is_deterministic(rig):
    c = dm.SampleCounts().scaled(0.05)
    a, b = dm.sample(rig, c, 5), dm.sample(rig, c, 5)
    for k in a.interior:
        np.testing.assert_array_equal(a.interior[k], b.interior[k])
    np.testing.assert_array_equal(a.top_insulated, b.top_insulated)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_every_point_is_in_its_region(rig, seed):
    c = dm.SampleCounts().scaled(0.02)
    cs = dm.sample(rig, c, seed)
    s = cs.scales
    for region, P in cs.interior.items():
        assert rig.region_contains(region, P[:, 0] * s.x_L, P[:, 1] * s.y_L).all(), region
    xf = cs.top_flux * s.x_L
    assert ((xf >= rig.x_A) & (xf <= rig.x_B)).all()
    xi = cs.top_insulated * s.x_L
    assert ((xi <= rig.x_A) | (xi >= rig.x_B)).all()
    for i, L in enumerate(rig.layers):
        y = cs.periodic[f"layer{i}"] * s.y_L
        assert ((y >= L.y_bottom) & (y <= L.y_top)).all()


def test_zero_count_is_a_sampling_error(rig):
    with pytest.raises(SamplingError):
        dm.sample(rig, dataclasses.replace(dm.SampleCounts(), bottom=0), 0)


def test_region_with_no_area_is_a_sampling_error(rig):
    # pipes that cover the whole cold plate leave no room for interior points
    L0 = rig.layers[0]
    yc = (L0.y_top + L0.y_bottom) / 2
    r = 0.0063
    pipes = tuple(dm.PipeSpec(f"p{i + 1}", (0.0065 + 0.0125 * i, yc), r, 0.005) for i in range(6))
    g = dataclasses.replace(rig, x_N=0.076, x_A=0.02, x_B=0.05, pipes=pipes, probes=())
    with pytest.raises(SamplingError):
        dm.sample(g, dm.SampleCounts().scaled(0.01), 0, max_rounds=1)


def test_with_scales_preserves_physical_points(rig):
    cs = dm.sample(rig, dm.SampleCounts().scaled(0.02), 1)
    new = dm.NondimScales(0.1, 0.01, 290.0)
    cv = dm.with_scales(rig, cs, new)
    a = cs.interior["layer2"] * [cs.scales.x_L, cs.scales.y_L]
    b = cv.interior["layer2"] * [new.x_L, new.y_L]
    np.testing.assert_allclose(a, b, rtol=1e-14)


def test_geometry_file_round_trip(tmp_path, rig):
    path = tmp_path / "g.json"
    dm.save_geometry(rig, path)
    back = dm.load_geometry(path)
    assert back.layers == rig.layers and back.pipes == rig.pipes and back.probes == rig.probes


def test_geometry_radius_in_millimetres(rig):
    d = dm.geometry_to_dict(rig)
    d["radius_unit"] = "mm"
    for p in d["pipes"]:
        p["r_inner"], p["r_outer"] = 5.0, 6.0
    g = dm.geometry_from_dict(d)
    assert g.pipes[0].r_inner == pytest.approx(0.005)


def test_geometry_file_errors(rig):
    d = dm.geometry_to_dict(rig)
    with pytest.raises(SchemaError):
        dm.geometry_from_dict({**d, "radius_unit": "inch"})
    del d["layers"]
    with pytest.raises(SchemaError):
        dm.geometry_from_dict(d)
    with pytest.raises(SchemaError):
        dm.geometry_from_dict(json.loads(json.dumps({**dm.geometry_to_dict(rig), "schema_version": 7})))


def test_subdomain_boxes(rig):
    s = dm.default_scales(rig, 10.0)
    (x0, x1), (y0, y1) = dm.subdomain_box(rig, "layer2", s)
    assert (x0, x1) == (0.0, 1.0)
    assert y0 == pytest.approx(rig.layers[2].y_bottom / s.y_L)
    with pytest.raises(ConfigurationError):
        dm.subdomain_box(rig, "layer9", s)
