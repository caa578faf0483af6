import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mosfet_pinn import oracle as orc
from mosfet_pinn.case import bundled_case
from mosfet_pinn.domain import default_rig, heat_flux_density
from mosfet_pinn.errors import ConfigurationError, UnphysicalResultError


@pytest.fixture
def toy():
    return orc.ToyPlateProblem()


def test_toy_wall_values(toy):
    assert orc.toy_exact_temperature(toy, 0.0) == 100.0
    assert orc.toy_exact_temperature(toy, 0.1) == pytest.approx(75.0, rel=1e-14)
    assert orc.toy_invert_h(toy, 75.0) == pytest.approx(100.0, rel=1e-12)


def test_toy_without_convection_is_uniform(toy):
    x = np.linspace(0, 0.1, 11)
    np.testing.assert_array_equal(orc.toy_exact_temperature(toy, x, h=0.0), 100.0)


def test_toy_inverse_pair(toy):
    tw = orc.toy_exact_temperature(toy, toy.W, h=1000.0)
    assert orc.toy_invert_h(toy, tw) == pytest.approx(1000.0, rel=1e-10)


def test_toy_inverse_identity_over_five_decades(toy):
    hs = np.logspace(0, 5, 1000)
    back = np.array([orc.toy_invert_h(toy, orc.toy_exact_temperature(toy, toy.W, h=h)) for h in hs])
    assert np.max(np.abs(back - hs) / hs) < 1e-10


def test_toy_inverse_tends_to_zero_at_t0(toy):
    assert orc.toy_invert_h(toy, 100.0 - 1e-9) < 1e-6


def test_toy_inverse_rejects_unphysical_wall_temperatures(toy):
    for tw in (25.0, 20.0, 100.5):
        with pytest.raises(UnphysicalResultError):
            orc.toy_invert_h(toy, tw)


def test_toy_wall_flux_balances_conduction(toy):
    # -k dT/dx equals h (T_W - T_inf)
    slope = (orc.toy_exact_temperature(toy, toy.W) - toy.T_0) / toy.W
    assert orc.toy_wall_flux(toy, 100.0) == pytest.approx(-toy.k * slope, rel=1e-12)
    assert toy.biot == pytest.approx(100.0 * 0.1 / 20.0)


def test_toy_rejects_bad_parameters():
    with pytest.raises(ConfigurationError):
        orc.ToyPlateProblem(W=0.0)
    with pytest.raises(ConfigurationError):
        orc.ToyPlateProblem(T_0=25.0)


def test_layer_grid_respects_layers_and_minimum():
    edges = [0.0, 0.02, 0.0201, 0.03]
    f = orc.layer_grid(edges, 30)
    assert len(f) == 31
    for e in edges:
        assert np.min(np.abs(f - e)) < 1e-15
    thin = (f > 0.02 - 1e-15) & (f < 0.0201 + 1e-15)
    assert thin.sum() == 4
    with pytest.raises(ConfigurationError):
        orc.layer_grid(edges, 8)


def slab(nx=8, ny=40, q=5000.0, k=15.0, h=300.0, t_inf=20.0):
    yf = np.linspace(0.0, 0.01, ny + 1)
    kk = np.full((ny, nx), k)
    water = np.zeros((ny, nx), dtype=bool)
    out = orc.solve_conduction(1e-3, yf, kk, water, top_flux=np.full(nx, q), h_bottom=h, t_bottom=t_inf)
    return yf, out


def test_slab_matches_the_linear_profile():
    yf, (T, qin, qout, res, _, _) = slab()
    yc = 0.5 * (yf[:-1] + yf[1:])
    exact = orc.slab_profile(5000.0, 15.0, 300.0, 20.0, yc)
    assert np.max(np.abs(T - exact[:, None]) / exact[:, None]) < 1e-3
    assert qout == pytest.approx(qin, rel=1e-9)
    assert res < 1e-8


def test_slab_cg_agrees_with_direct():
    yf = np.linspace(0.0, 0.01, 21)
    kk = np.full((20, 6), 15.0)
    w = np.zeros_like(kk, dtype=bool)
    args = dict(top_flux=np.full(6, 5000.0), h_bottom=300.0, t_bottom=20.0)
    Td = orc.solve_conduction(1e-3, yf, kk, w, method="direct", **args)[0]
    Tc = orc.solve_conduction(1e-3, yf, kk, w, method="cg", **args)[0]
    np.testing.assert_allclose(Tc, Td, rtol=1e-8)


def test_no_convective_boundary_is_ill_posed():
    kk = np.full((4, 4), 1.0)
    with pytest.raises(ConfigurationError):
        orc.solve_conduction(1.0, np.arange(5.0), kk, np.zeros_like(kk, dtype=bool))


@pytest.fixture(scope="module")
def rig():
    return default_rig()


@pytest.fixture(scope="module")
def coarse(rig):
    return orc.fd_solve(rig, bundled_case("A13_4"), 2000.0, grid=(128, 64))


def test_zero_power_gives_the_water_temperature(rig):
    c = bundled_case("A13_4")
    sol = orc.fd_solve(rig, c, 1500.0, grid=(64, 40), power_w=0.0)
    np.testing.assert_allclose(sol.T, c.t_w_k, rtol=1e-12)


def test_energy_balance_and_heat_input(rig, coarse):
    q = heat_flux_density(bundled_case("A13_4").power_w, rig)
    assert coarse.heat_in == pytest.approx(q * (rig.x_B - rig.x_A), rel=1e-12)
    assert coarse.energy_imbalance < 0.01
    assert coarse.residual < 1e-8


def test_grid_refinement_changes_the_peak_by_under_one_percent(rig, coarse):
    fine = orc.fd_solve(rig, bundled_case("A13_4"), 2000.0, grid=(256, 128))
    rise_c = coarse.T.max() - coarse.t_w
    rise_f = fine.T.max() - fine.t_w
    assert abs(rise_f - rise_c) / fine.T.max() < 0.01


def test_shifting_all_pipes_by_whole_cells_rolls_the_field(rig):
    nx, ny = 96, 48
    dx = rig.x_N / nx
    moved = dataclasses.replace(
        rig, pipes=tuple(dataclasses.replace(p, center=(p.center[0] + 4 * dx, p.center[1])) for p in rig.pipes),
        x_A=rig.x_A + 4 * dx, x_B=rig.x_B + 4 * dx)
    c = bundled_case("A13_4")
    a = orc.fd_solve(rig, c, 1800.0, grid=(nx, ny))
    b = orc.fd_solve(moved, c, 1800.0, grid=(nx, ny))
    np.testing.assert_allclose(np.roll(a.T, 4, axis=1), b.T, rtol=1e-10)


def test_probe_reproduces_nodes_and_linear_fields(coarse):
    sol = dataclasses.replace(coarse)
    j, i = 10, 17
    assert orc.fd_probe(sol, [(sol.x[i], sol.y[j])])[0] == sol.T[j, i]
    X, Y = np.meshgrid(sol.x, sol.y)
    lin = dataclasses.replace(sol, T=3.0 + 0.0 * X + 50.0 * Y)
    pts = np.column_stack([np.linspace(sol.x[0], sol.x[-1], 7), np.linspace(sol.y[0], sol.y[-1], 7)])
    np.testing.assert_allclose(orc.fd_probe(lin, pts), 3.0 + 50.0 * pts[:, 1], rtol=1e-13)
    const = dataclasses.replace(sol, T=np.full_like(sol.T, 7.5))
    np.testing.assert_allclose(orc.fd_probe(const, [(0.0, 0.0), (sol.x_N, sol.y_N)]), 7.5)


@settings(max_examples=30, deadline=None)
@given(y=st.floats(0.0, 0.0256))
def test_probe_is_periodic_in_x(coarse, y):
    a, b = orc.fd_probe(coarse, [(0.0, y), (coarse.x_N, y)])
    assert a == pytest.approx(b, rel=1e-12)


def test_probe_out_of_bounds(coarse):
    with pytest.raises(ConfigurationError):
        orc.fd_probe(coarse, [(0.5, 0.01)])


def test_fd_solve_argument_errors(rig):
    c = bundled_case("A13_4")
    with pytest.raises(ConfigurationError):
        orc.fd_solve(rig, c, 0.0, grid=(64, 40))
    with pytest.raises(ConfigurationError):
        orc.fd_solve(rig, c, 100.0, grid=(2, 4))
    with pytest.raises(ConfigurationError):
        orc.fd_solve(rig, c, 100.0, grid=(64, 40), method="sor")


def test_pipe_wall_maxima_sit_between_water_and_peak(rig, coarse):
    m = orc.fd_pipe_max(coarse, rig)
    assert set(m) == {p.id for p in rig.pipes}
    assert all(coarse.t_w < v < coarse.T.max() for v in m.values())
