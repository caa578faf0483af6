"""Residual operations checked on manufactured fields, plus compiled-loss properties."""

import dataclasses

import numpy as np
import pytest

from mosfet_pinn import domain as dm
from mosfet_pinn import network as nw
from mosfet_pinn import physics as ph
from mosfet_pinn.case import bundled_case
from mosfet_pinn.errors import ConfigurationError, GeometryError, RegionError

TOL = 1e-10


@pytest.fixture(scope="module")
def problem():
    return ph.RigProblem(dm.default_rig(), bundled_case("A13_4"))


@pytest.fixture(scope="module")
def colloc(problem):
    return dm.sample(problem.geom, dm.SampleCounts().scaled(0.02), 0, problem.scales)


def ensemble_of(fields: dict, fill=None, log_h=0.0, h_unit=1.0):
    fill = fill or nw.AnalyticField(lambda X: {"u": np.zeros(len(X))})
    return nw.NetworkEnsemble({k: fields.get(k, fill) for k in nw.SUBNET_IDS}, log_h, h_unit)


# -- manufactured fields (physical coordinates carried through the chain rule) ------

def harmonic(s):
    """u* = 1e-6 exp(x/a) sin(y/a) in physical x, y, which is harmonic."""
    a = 0.1

    def fn(X):
        x, y = X[:, 0] * s.x_L, X[:, 1] * s.y_L
        e = 1e-6 * np.exp(x / a)
        return {"u": e * np.sin(y / a), "x": s.x_L * e * np.sin(y / a) / a, "y": s.y_L * e * np.cos(y / a) / a,
                "xx": s.x_L ** 2 * e * np.sin(y / a) / a ** 2, "yy": -s.y_L ** 2 * e * np.sin(y / a) / a ** 2}

    return nw.AnalyticField(fn)


def saddle(s):
    """u* = x^2 - y^2 in physical metres."""

    def fn(X):
        x, y = X[:, 0] * s.x_L, X[:, 1] * s.y_L
        return {"u": x * x - y * y, "x": 2 * x * s.x_L, "y": -2 * y * s.y_L,
                "xx": np.full(len(X), 2 * s.x_L ** 2), "yy": np.full(len(X), -2 * s.y_L ** 2)}

    return nw.AnalyticField(fn)


def linear_in_y(slope_star, offset=0.0, y0=0.0):
    return nw.AnalyticField(lambda X: {"u": offset + slope_star * (X[:, 1] - y0), "y": np.full(len(X), slope_star),
                                       "x": np.zeros(len(X)), "xx": np.zeros(len(X)), "yy": np.zeros(len(X))})


def radial_log(s, center, amp, offset, r_ref):
    """u* = offset + amp ln(r / r_ref) around ``center`` (metres)."""

    def fn(X):
        dx, dy = X[:, 0] * s.x_L - center[0], X[:, 1] * s.y_L - center[1]
        r2 = dx * dx + dy * dy
        return {"u": offset + amp * 0.5 * np.log(r2 / r_ref ** 2),
                "x": s.x_L * amp * dx / r2, "y": s.y_L * amp * dy / r2}

    return nw.AnalyticField(fn)


# -- residual suite ------------------------------------------------------------------

@pytest.mark.parametrize("make", [harmonic, saddle])
def test_pde_vanishes_on_harmonic_fields(problem, colloc, make):
    ens = ensemble_of({k: make(problem.scales) for k in nw.SUBNET_IDS})
    for region in dm.LAYER_IDS + dm.PIPE_IDS:
        r = ph.residual_pde(ens, colloc.interior[region], region, problem)
        assert np.max(np.abs(r)) < TOL, region


def test_pde_is_nonzero_on_a_non_harmonic_field(problem, colloc):
    f = nw.AnalyticField(lambda X: {"u": X[:, 0] ** 2, "xx": np.full(len(X), 2.0), "yy": np.zeros(len(X))})
    r = ph.residual_pde(ensemble_of({"layer2": f}), colloc.interior["layer2"], "layer2", problem)
    s = problem.scales
    np.testing.assert_allclose(r, dm.k_star(142.0, s) * s.y_L ** 2 * 2.0, rtol=1e-14)


def test_pde_outside_region_raises(problem):
    ens = ensemble_of({})
    with pytest.raises(RegionError):
        ph.residual_pde(ens, [[0.5, 0.99]], "layer0", problem)
    centre = problem.geom.pipes[0].center
    with pytest.raises(RegionError):
        ph.residual_pde(ens, [[centre[0] / problem.scales.x_L, centre[1] / problem.scales.y_L]], "layer0", problem)


def test_flux_top_vanishes_on_linear_profile(problem, colloc):
    ens = ensemble_of({"layer4": linear_in_y(problem.alpha_star), "layer0": linear_in_y(0.0, 0.3)})
    assert np.max(np.abs(ph.residual_flux_top(ens, colloc.top_flux, problem))) < TOL
    flat = ensemble_of({"layer4": linear_in_y(0.0)})
    assert np.max(np.abs(ph.residual_flux_top(flat, colloc.top_insulated, problem, "insulated"))) < TOL
    assert np.max(np.abs(ph.residual_flux_top(ens, colloc.bottom, problem, "bottom"))) < TOL


def test_flux_top_rejects_points_off_the_footprint(problem):
    with pytest.raises(RegionError):
        ph.residual_flux_top(ensemble_of({}), [0.0], problem)
    with pytest.raises(RegionError):
        ph.residual_flux_top(ensemble_of({}), [0.5], problem, "insulated")
    with pytest.raises(ConfigurationError):
        ph.residual_flux_top(ensemble_of({}), [0.5], problem, "sideways")


def test_flux_top_zero_power_means_insulated(problem, colloc):
    p0 = ph.RigProblem(problem.geom, problem.case, power_w=0.0)
    assert p0.alpha_star == 0.0
    r = ph.residual_flux_top(ensemble_of({"layer4": linear_in_y(0.0)}), colloc.top_flux, p0)
    assert np.max(np.abs(r)) < TOL


def test_periodic_vanishes_on_periodic_field(problem, colloc):
    xe = problem.geom.x_N / problem.scales.x_L
    w = 2 * np.pi / xe
    f = nw.AnalyticField(lambda X: {"u": np.sin(w * X[:, 0]) + X[:, 1], "x": w * np.cos(w * X[:, 0])})
    ens = ensemble_of({k: f for k in dm.LAYER_IDS})
    for layer in dm.LAYER_IDS:
        assert np.max(np.abs(ph.residual_periodic(ens, colloc.periodic[layer], layer, problem))) < TOL
    g = nw.AnalyticField(lambda X: {"u": X[:, 0] ** 2, "x": 2 * X[:, 0]})
    assert abs(ph.residual_periodic(ensemble_of({"layer1": g}), 0.5, "layer1", problem) + 2 * xe) < 1e-12
    with pytest.raises(RegionError):
        ph.residual_periodic(ens, [0.1], "p1", problem)


def test_planar_interfaces_vanish_on_matched_slopes(problem, colloc):
    g, s = problem.geom, problem.scales
    q = 1e-3  # common k_hat * u*_y
    fields = {}
    value = 0.0
    for L in g.layers:
        slope = q / dm.k_hat(L.k, s)
        fields[f"layer{L.id}"] = linear_in_y(slope, value, L.y_bottom / s.y_L)
        value += slope * L.thickness / s.y_L
    ens = ensemble_of(fields)
    for pair in dm.PLANAR_PAIRS:
        jump, flux = ph.residual_interface_planar(ens, colloc.planar[pair], pair, problem)
        assert np.max(np.abs(jump)) < TOL and np.max(np.abs(flux)) < TOL
    with pytest.raises(RegionError):
        ph.residual_interface_planar(ens, [0.5], (0, 2), problem)


def test_circular_interface_vanishes_on_matched_radial_slopes(problem, colloc):
    s = problem.scales
    for pipe in problem.geom.pipes:
        c0 = 1e-3 / dm.k_hat(problem.conductivity("layer0"), s)
        cp = 1e-3 / dm.k_hat(pipe.k_pipe, s)
        ens = ensemble_of({"layer0": radial_log(s, pipe.center, c0, 0.02, pipe.r_outer),
                           "pipes": radial_log(s, pipe.center, cp, 0.02, pipe.r_outer)})
        jump, flux = ph.residual_interface_circular(ens, colloc.circ_outer[pipe.id], pipe.id, problem)
        assert np.max(np.abs(jump)) < TOL and np.max(np.abs(flux)) < TOL, pipe.id


def test_circular_interface_detects_unmatched_slopes(problem, colloc):
    s = problem.scales
    pipe = problem.geom.pipes[2]
    c = 1e-6
    ens = ensemble_of({"layer0": radial_log(s, pipe.center, c, 0.0, pipe.r_outer),
                       "pipes": radial_log(s, pipe.center, c, 0.0, pipe.r_outer)})
    _, flux = ph.residual_interface_circular(ens, colloc.circ_outer[pipe.id], pipe.id, problem)
    # d/dr* of c ln r is c y_L / r_o on both sides; conductivities differ
    expect = (dm.k_hat(200.0, s) - dm.k_hat(16.2, s)) * c * s.y_L / pipe.r_outer
    np.testing.assert_allclose(flux, expect, rtol=1e-9)


def test_circular_interface_rejects_points_off_the_circle(problem):
    with pytest.raises(GeometryError):
        ph.residual_interface_circular(ensemble_of({}), [[0.5, 0.2]], "p1", problem)


def test_convective_vanishes_on_robin_consistent_radial_field(problem, colloc):
    s = problem.scales
    h_star = 1000.0 * s.U_0
    for pipe in problem.geom.pipes:
        kh = dm.k_hat(pipe.k_pipe, s)
        amp = 2e-3
        # du*/dr* at r_i is amp y_L / r_i; Robin fixes the wall excess over t_w*
        excess = kh * amp * s.y_L / pipe.r_inner / h_star
        f = radial_log(s, pipe.center, amp, problem.t_w_star + excess, pipe.r_inner)
        r = ph.residual_convective(ensemble_of({"pipes": f}), colloc.circ_inner[pipe.id], pipe.id,
                                   problem.t_w_star, problem, h_star)
        assert np.max(np.abs(r)) < TOL, pipe.id


def test_convective_sign_heat_leaves_into_colder_water(problem, colloc):
    # a wall hotter than the water with no conductive supply has a negative residual
    f = nw.AnalyticField(lambda X: {"u": np.full(len(X), problem.t_w_star + 0.01)})
    r = ph.residual_convective(ensemble_of({"pipes": f}), colloc.circ_inner["p1"], "p1", problem.t_w_star,
                               problem, 5.0)
    np.testing.assert_allclose(r, -5.0 * 0.01, rtol=1e-12)


# -- energy balance ----------------------------------------------------------------------

def test_energy_residual_value_examples():
    assert ph.energy_residual_value(100.0, 10.0, 0.5, [20.0], 0.0) == 0.0
    assert ph.energy_residual_value(100.0, 10.0, 0.5, [10.0], 0.0) == pytest.approx(0.5)
    assert ph.energy_residual_value(0.0, 10.0, 0.5, [0.0, 0.0], 0.0) == 0.0
    assert ph.energy_residual_value(0.0, 10.0, 0.5, [1.0], 0.0) == -5.0


def test_energy_residual_closes_at_the_closed_form_h(problem, colloc):
    s = problem.scales
    excess = 1.5  # kelvin above the mean water temperature at every pipe wall
    u = problem.t_w_star + excess / s.U_0
    f = nw.AnalyticField(lambda X: {"u": np.full(len(X), u)})
    h = problem.power_w / (problem.area * 6 * excess)
    ens = ensemble_of({"pipes": f}, log_h=np.log(h * s.U_0 / problem.h_unit), h_unit=problem.h_unit)
    assert abs(ph.residual_energy(ens, problem, colloc.circ_inner)) < 1e-12
    loss = ph.RigLoss(problem, ens, colloc)
    terms, _, _ = loss.run(ens.arrays(), np.ones(7), grad=False)
    assert terms[5] < 1e-20


def test_per_pass_area(problem):
    a1 = 2 * np.pi * 0.005 * problem.geom.total_pipe_length
    assert problem.area == pytest.approx(a1 / 6)
    assert dataclasses.replace(problem, energy_area="total").area == pytest.approx(a1)


# -- data term ---------------------------------------------------------------------------

def test_data_residual_zero_when_probes_match(problem):
    s = problem.scales
    read = problem.boundary.probes
    top = problem.geom.y_N / s.y_L
    f = {"layer4": nw.AnalyticField(lambda X: {
        "u": np.where(X[:, 1] >= top - 1e-12, dm.nondim_temp(read["Face"], s), dm.nondim_temp(read["Side"], s))})}
    assert ph.residual_data(ensemble_of(f), problem) < 1e-24
    off = ph.residual_data(ensemble_of({}), problem)
    expect = sum(dm.nondim_temp(v, s) ** 2 for v in read.values())
    assert off == pytest.approx(expect, rel=1e-12)


def test_data_term_empty_without_probes(problem, colloc):
    p = ph.RigProblem(problem.geom, problem.case, with_probes=False)
    assert ph.residual_data(ensemble_of({}), p) == 0.0
    ens = nw.init_ensemble(0, (2, 3, 1), h_unit=p.h_unit)
    terms, _, _ = ph.RigLoss(p, ens, colloc).run(ens.arrays(), np.ones(7), grad=False)
    assert terms[6] == 0.0


# -- compiled loss ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def small(problem, colloc):
    boxes = {k: dm.subdomain_box(problem.geom, k, problem.scales) for k in nw.SUBNET_IDS}
    ens = nw.init_ensemble(1, (2, 4, 1), boxes, problem.h_unit, problem.sigma)
    return ens, ph.RigLoss(problem, ens, colloc)


def test_total_is_weighted_sum_of_terms(small):
    ens, loss = small
    rng = np.random.default_rng(0)
    lam = rng.uniform(0.1, 5.0, 7)
    terms, total, _ = loss.run(ens.arrays(), lam, grad=False)
    assert total == pytest.approx(float(lam @ terms), rel=1e-12)
    assert np.all(terms >= 0)
    assert terms[3] == terms[4]


def test_total_loss_state(small, colloc, problem):
    ens, loss = small
    st = ph.total_loss(ens, colloc, problem)
    terms, total, _ = loss.run(ens.arrays(), np.ones(7), grad=False)
    assert st.total == pytest.approx(total, rel=1e-12)
    assert list(st.terms) == list(ph.TERM_NAMES)
    with pytest.raises(ConfigurationError):
        ph.total_loss(ens, colloc, problem, [1.0] * 6)
    with pytest.raises(ConfigurationError):
        ph.total_loss(ens, colloc, problem, [1.0] * 6 + [0.0])


def test_loss_is_invariant_to_point_order(small, colloc, problem):
    ens, loss = small
    rng = np.random.default_rng(3)
    shuffled = dataclasses.replace(colloc, interior={k: v[rng.permutation(len(v))] for k, v in colloc.interior.items()},
                                   bottom=colloc.bottom[::-1].copy())
    a, _, _ = loss.run(ens.arrays(), np.ones(7), grad=False)
    b, _, _ = ph.RigLoss(problem, ens, shuffled).run(ens.arrays(), np.ones(7), grad=False)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_loss_gradient_matches_finite_differences(small):
    ens, loss = small
    arrays = {k: np.array(v, dtype=float, copy=True) for k, v in ens.arrays().items()}
    lam = np.ones(7)
    _, _, g = loss.run(arrays, lam)
    for name, idx in (("layer0.W0", (1, 0)), ("layer4.W1", (0, 2)), ("pipes.b0", (3,)), ("log_h", ())):
        hi = {k: v.copy() for k, v in arrays.items()}
        lo = {k: v.copy() for k, v in arrays.items()}
        hi[name][idx] += 1e-6
        lo[name][idx] -= 1e-6
        fd = (loss.run(hi, lam, grad=False)[1] - loss.run(lo, lam, grad=False)[1]) / 2e-6
        assert np.asarray(g[name])[idx] == pytest.approx(fd, rel=1e-5, abs=1e-8), name


def test_minibatches_are_sorted_subsets(problem, colloc):
    ens = nw.init_ensemble(0, (2, 3, 1), h_unit=problem.h_unit)
    loss = ph.RigLoss(problem, ens, colloc, batch={"layer2": 16})
    feed = loss.feed(np.random.default_rng(0))
    sub = feed["pts:layer2"]
    assert sub.shape == (16, 2)
    full = colloc.interior["layer2"]
    rows = [int(np.flatnonzero((full == r).all(axis=1))[0]) for r in sub]
    assert rows == sorted(rows)
    with pytest.raises(ConfigurationError):
        loss.run(ens.arrays(), np.ones(7))
    with pytest.raises(ConfigurationError):
        loss.feed(None)


def test_mismatched_scales_are_rejected(problem, colloc):
    other = dm.with_scales(problem.geom, colloc, dm.NondimScales(1.0, 1.0, 300.0))
    with pytest.raises(ConfigurationError):
        ph.RigLoss(problem, nw.init_ensemble(0, (2, 3, 1)), other)


def test_log_row_columns(small):
    ens, loss = small
    st = ph.LossState.from_arrays(*loss.run(ens.arrays(), np.ones(7), grad=False)[:1], np.ones(7), 1.0)
    row = st.log_row(3, 0.0)
    assert list(row) == list(ph.LOG_COLUMNS)
