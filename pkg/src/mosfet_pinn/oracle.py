"""Non-neural references: the toy plate's closed forms and a finite-volume rig solver.

The rig solver works per unit depth on a cell-centered grid that is uniform
in x (periodic) and conforms to the layer stack in y, so thin layers keep at
least ``min_cells`` cells.  Face conductances use the harmonic mean of the
two half-cells; the wetted pipe wall and an optional Robin bottom use the
series combination of the half-cell conductance and the film coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .case import CaseConfig
from .domain import KELVIN, RigGeometry, heat_flux_density
from .errors import ConfigurationError, SolverError, UnphysicalResultError


# -- toy plate ------------------------------------------------------------------

@dataclass(frozen=True)
class ToyPlateProblem:
    """Plate with T = T_0 at x = 0, insulated top and bottom, convection at x = W."""

    W: float = 0.1
    H: float = 0.1
    k: float = 20.0
    T_0: float = 100.0
    T_inf: float = 25.0
    h_true: float = 100.0

    def __post_init__(self):
        if not (self.W > 0 and self.H > 0 and self.k > 0):
            raise ConfigurationError("W, H and k must be positive")
        if self.h_true < 0:
            raise ConfigurationError("h_true must be non-negative")
        if self.T_0 == self.T_inf:
            raise ConfigurationError("T_0 and T_inf must differ")

    @property
    def biot(self) -> float:
        return self.h_true * self.W / self.k


def toy_exact_temperature(p: ToyPlateProblem, x, h: float | None = None):
    """T(x) = -h (T_0 - T_inf) / (k + h W) x + T_0."""
    h = p.h_true if h is None else h
    return -h * (p.T_0 - p.T_inf) / (p.k + h * p.W) * np.asarray(x, dtype=float) + p.T_0


def toy_invert_h(p: ToyPlateProblem, T_W: float) -> float:
    """h = (T_0 - T(W)) k / (W (T(W) - T_inf)), the inverse of the profile at x = W."""
    lo, hi = sorted((p.T_inf, p.T_0))
    if not lo < T_W <= hi:
        raise UnphysicalResultError(f"T(W) = {T_W} must lie between T_inf and T_0")
    return (p.T_0 - T_W) * p.k / (p.W * (T_W - p.T_inf))


def toy_wall_flux(p: ToyPlateProblem, h: float | None = None) -> float:
    """Heat flux leaving through x = W, h (T(W) - T_inf), in W/m^2."""
    h = p.h_true if h is None else h
    return h * (toy_exact_temperature(p, p.W, h) - p.T_inf)


# -- finite-volume rig solver -------------------------------------------------------

@dataclass
class FdSolution:
    x: np.ndarray  # cell centers (nx,)
    y: np.ndarray  # cell centers (ny,)
    dx: float
    dy: np.ndarray  # (ny,)
    T: np.ndarray  # (ny, nx) kelvin; water cells hold t_w
    k: np.ndarray  # (ny, nx); 0 in water
    water: np.ndarray  # (ny, nx) bool
    x_N: float
    y_N: float
    t_w: float
    heat_in: float  # W per metre of depth
    heat_out: float  # W per metre of depth through Robin faces
    residual: float
    iterations: int
    residual_history: list[float] = field(default_factory=list)

    @property
    def energy_imbalance(self) -> float:
        """(in - out) / in; 0 when no heat enters."""
        return (self.heat_in - self.heat_out) / self.heat_in if self.heat_in else self.heat_out


def layer_grid(edges, ny: int, min_cells: int = 3) -> np.ndarray:
    """Face coordinates in y: each layer [edges[i], edges[i+1]] gets uniform cells,
    at least ``min_cells``, and the rest in proportion to thickness."""
    edges = np.asarray(edges, dtype=float)
    t = np.diff(edges)
    n_layers = len(t)
    if ny < min_cells * n_layers:
        raise ConfigurationError(f"ny = {ny} cannot give {min_cells} cells to each of {n_layers} layers")
    counts = np.maximum(min_cells, np.floor(t / t.sum() * ny)).astype(int)
    # settle the remainder on the thickest layers, never below min_cells
    while counts.sum() > ny:
        i = int(np.argmax(np.where(counts > min_cells, t / counts, -1)))
        counts[i] -= 1
    while counts.sum() < ny:
        counts[int(np.argmax(t / counts))] += 1
    faces = [edges[0]]
    for i in range(n_layers):
        faces.extend(np.linspace(edges[i], edges[i + 1], counts[i] + 1)[1:])
    return np.array(faces)


def solve_conduction(dx: float, y_faces: np.ndarray, k: np.ndarray, water: np.ndarray, *,
                     top_flux: np.ndarray | None = None, h_water: float = 0.0, t_w: float = 0.0,
                     h_bottom: float | None = None, t_bottom: float = 0.0, method: str = "direct",
                     rtol: float = 1e-10, maxiter: int = 20000):
    """Solve the steady finite-volume system on an x-periodic grid.

    ``k`` is (ny, nx) with water cells flagged in ``water``; ``top_flux`` is the
    heat flux (W/m^2) entering each top-face cell.  Returns the field
    (water cells set to ``t_w``), extracted heat per depth, the relative
    residual, iteration count and residual history.
    """
    ny, nx = k.shape
    dy = np.diff(y_faces)
    if len(dy) != ny:
        raise ConfigurationError("y_faces must have ny + 1 entries")
    solid = ~water
    if np.any(k[solid] <= 0):
        raise ConfigurationError("solid cells need positive conductivity")
    idx = -np.ones((ny, nx), dtype=np.int64)
    idx[solid] = np.arange(int(solid.sum()))
    n = int(solid.sum())
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    rhs = np.zeros(n)
    robin_g = np.zeros(n)  # total film conductance per cell, for the heat-out tally

    def couple(a_mask, b_idx, g):
        ia = idx[a_mask]
        ib = b_idx
        np.add.at(diag, ia, g)
        np.add.at(diag, ib, g)
        rows.extend([ia, ib])
        cols.extend([ib, ia])
        vals.extend([-g, -g])

    # x faces (periodic): cell (j, i) with (j, i+1)
    kr = np.roll(k, -1, axis=1)
    wr = np.roll(water, -1, axis=1)
    both = solid & ~wr
    g = dy[:, None].repeat(nx, 1)[both] / (0.5 * dx / k[both] + 0.5 * dx / kr[both])
    couple(both, np.roll(idx, -1, axis=1)[both], g)
    # y faces: cell (j, i) with (j+1, i)
    ku, wu = k[1:], water[1:]
    lo_solid = solid[:-1]
    both_y = lo_solid & ~wu
    hy_lo = 0.5 * dy[:-1][:, None].repeat(nx, 1)
    hy_hi = 0.5 * dy[1:][:, None].repeat(nx, 1)
    g = dx / (hy_lo[both_y] / k[:-1][both_y] + hy_hi[both_y] / ku[both_y])
    mask_full = np.zeros_like(solid)
    mask_full[:-1] = both_y
    couple(mask_full, idx[1:][both_y], g)
    # wetted faces: solid next to water, film in series with the half cell
    if h_water > 0:
        half = {
            "x": (0.5 * dx, dy[:, None].repeat(nx, 1)),
            "y": (0.5 * dy[:, None].repeat(nx, 1), dx),
        }
        for axis, shift in (("x", 1), ("x", -1), ("y", 1), ("y", -1)):
            nb_water = np.roll(water, -shift, axis=1 if axis == "x" else 0)
            if axis == "y":
                # no wrap in y
                if shift == 1:
                    nb_water[-1] = False
                else:
                    nb_water[0] = False
            m = solid & nb_water
            if not np.any(m):
                continue
            dist, area = half[axis]
            dist = dist[m] if np.ndim(dist) else dist
            area = area[m] if np.ndim(area) else area
            gf = area / (dist / k[m] + 1.0 / h_water)
            np.add.at(diag, idx[m], gf)
            np.add.at(rhs, idx[m], gf * t_w)
            np.add.at(robin_g, idx[m], gf)
    if h_bottom is not None and h_bottom > 0:
        m = np.zeros_like(solid)
        m[0] = solid[0]
        gb = dx / (0.5 * dy[0] / k[0][solid[0]] + 1.0 / h_bottom)
        np.add.at(diag, idx[m], gb)
        np.add.at(rhs, idx[m], gb * t_bottom)
        robin_bottom = (idx[m], gb)
    else:
        robin_bottom = None
    heat_in = 0.0
    if top_flux is not None:
        tf = np.asarray(top_flux, dtype=float)
        m = np.zeros_like(solid)
        m[-1] = solid[-1]
        np.add.at(rhs, idx[m], tf[solid[-1]] * dx)
        heat_in = float(np.sum(tf[solid[-1]]) * dx)
    if not np.any(diag > 0) or (np.all(robin_g == 0) and robin_bottom is None):
        raise ConfigurationError("the system needs at least one convective boundary to be well posed")
    A = sp.coo_matrix((np.concatenate(vals) if vals else np.zeros(0),
                       (np.concatenate(rows) if rows else np.zeros(0, int),
                        np.concatenate(cols) if cols else np.zeros(0, int))), shape=(n, n)).tocsr()
    A = A + sp.diags(diag)
    history: list[float] = []
    bnorm = np.linalg.norm(rhs) or 1.0
    if method == "direct":
        sol = spla.spsolve(A.tocsc(), rhs)
        iters = 1
    elif method == "cg":
        d = A.diagonal()
        M = sp.diags(1.0 / d)
        x0 = np.full(n, t_w if h_water > 0 else t_bottom)

        def cb(xk):
            history.append(float(np.linalg.norm(rhs - A @ xk) / bnorm))

        sol, info = spla.cg(A, rhs, x0=x0, rtol=rtol, maxiter=maxiter, M=M, callback=cb)
        iters = len(history)
        if info != 0:
            raise SolverError(f"conjugate gradient did not converge in {maxiter} iterations", history)
    else:
        raise ConfigurationError(f"unknown solver method {method!r}")
    res = float(np.linalg.norm(rhs - A @ sol) / bnorm)
    history.append(res)
    if not res < 1e-8:
        raise SolverError(f"relative residual {res:.3e} above 1e-8", history)
    T = np.full((ny, nx), float(t_w))
    T[solid] = sol
    heat_out = float(np.sum(robin_g * (sol - t_w)))
    if robin_bottom is not None:
        ii, gb = robin_bottom
        heat_out += float(np.sum(gb * (sol[ii] - t_bottom)))
    return T, heat_in, heat_out, res, iters, history


def rig_mesh(geom: RigGeometry, nx: int, ny: int, min_cells: int = 3):
    """Cell centers, y faces, conductivity and water mask for the rig."""
    dx = geom.x_N / nx
    x = (np.arange(nx) + 0.5) * dx
    edges = [geom.layers[0].y_bottom] + [L.y_top for L in geom.layers]
    yf = layer_grid(edges, ny, min_cells)
    y = 0.5 * (yf[:-1] + yf[1:])
    X, Y = np.meshgrid(x, y)
    k = np.empty((ny, nx))
    for L in geom.layers:
        rows = (y > L.y_bottom) & (y < L.y_top)
        k[rows] = L.k
    water = np.zeros((ny, nx), dtype=bool)
    for p in geom.pipes:
        r2 = (X - p.center[0]) ** 2 + (Y - p.center[1]) ** 2
        k[(r2 <= p.r_outer ** 2) & (r2 >= p.r_inner ** 2)] = p.k_pipe
        water |= r2 < p.r_inner ** 2
    k[water] = 0.0
    return x, y, dx, yf, k, water


def fd_solve(geom: RigGeometry, case: CaseConfig, h: float, grid=(512, 256), method: str = "direct",
             min_cells: int = 3, power_w: float | None = None) -> FdSolution:
    """Steady temperature field of the rig for a given film coefficient h (W/m^2K)."""
    nx, ny = grid
    if nx < 4 or ny < 3 * len(geom.layers):
        raise ConfigurationError(f"grid {grid} is too coarse")
    if h <= 0:
        raise ConfigurationError("h must be positive")
    x, y, dx, yf, k, water = rig_mesh(geom, nx, ny, min_cells)
    q = heat_flux_density(case.power_w if power_w is None else power_w, geom)
    # exact footprint overlap per top cell
    lo = np.clip(np.arange(nx) * dx, geom.x_A, geom.x_B)
    hi = np.clip((np.arange(nx) + 1) * dx, geom.x_A, geom.x_B)
    top_flux = q * (hi - lo) / dx
    t_w = case.t_w_k
    T, qin, qout, res, iters, hist = solve_conduction(dx, yf, k, water, top_flux=top_flux, h_water=h,
                                                      t_w=t_w, method=method)
    return FdSolution(x, y, dx, np.diff(yf), T, k, water, geom.x_N, geom.y_N, t_w, qin, qout, res, iters, hist)


def fd_probe(sol: FdSolution, points) -> np.ndarray:
    """Bilinear interpolation (periodic in x, clamped to the outer cell centers in y).

    ``points`` are physical (x, y) pairs in metres.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    px, py = P[:, 0], P[:, 1]
    tol = 1e-12
    if np.any((px < -tol) | (px > sol.x_N + tol) | (py < -tol) | (py > sol.y_N + tol)):
        raise ConfigurationError("probe point outside the solution domain")
    nx = len(sol.x)
    u = (px - sol.x[0]) / sol.dx
    i0 = np.floor(u).astype(int)
    fx = u - i0
    i0m, i1m = i0 % nx, (i0 + 1) % nx
    yc = np.clip(py, sol.y[0], sol.y[-1])
    j0 = np.clip(np.searchsorted(sol.y, yc, side="right") - 1, 0, len(sol.y) - 2)
    fy = (yc - sol.y[j0]) / (sol.y[j0 + 1] - sol.y[j0])
    T = sol.T
    out = ((1 - fx) * (1 - fy) * T[j0, i0m] + fx * (1 - fy) * T[j0, i1m]
           + (1 - fx) * fy * T[j0 + 1, i0m] + fx * fy * T[j0 + 1, i1m])
    return out


def fd_pipe_max(sol: FdSolution, geom: RigGeometry) -> dict[str, float]:
    """Warmest wetted-wall cell per pipe, the discrete analogue of t_i."""
    X, Y = np.meshgrid(sol.x, sol.y)
    wet = np.zeros_like(sol.water)
    for ax, sh in ((1, 1), (1, -1), (0, 1), (0, -1)):
        wet |= np.roll(sol.water, sh, axis=ax)
    wet &= ~sol.water
    out = {}
    for p in geom.pipes:
        near = (X - p.center[0]) ** 2 + (Y - p.center[1]) ** 2 < (p.r_inner + 2 * sol.dx) ** 2
        m = wet & near
        out[p.id] = float(np.max(sol.T[m])) if np.any(m) else math.nan
    return out


def slab_profile(q: float, k: float, h: float, t_inf: float, y):
    """1-D slab heated by q at the top, film h to t_inf at the bottom: t_inf + q/h + q y / k."""
    return t_inf + q / h + q * np.asarray(y, dtype=float) / k


def fd_field_rows(sol: FdSolution, geom: RigGeometry):
    """Rows (x, y, region, T in degrees C) for CSV export, water cells skipped."""
    rows = []
    edges = [L.y_top for L in geom.layers]
    for j, yv in enumerate(sol.y):
        layer = int(np.searchsorted(edges, yv))
        for i, xv in enumerate(sol.x):
            if sol.water[j, i]:
                continue
            region = "pipe" if sol.k[j, i] != geom.layers[layer].k and layer == 0 else f"layer{layer}"
            rows.append((float(xv), float(yv), region, float(sol.T[j, i] - KELVIN)))
    return rows
