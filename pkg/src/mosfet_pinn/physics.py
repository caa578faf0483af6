"""Residuals and the seven-term, self-adaptively weighted loss.

Two layers live here.  The public ``residual_*`` functions return the raw
dimensionless quantities of the governing equations, evaluated pointwise
through the autodiff engine.  :class:`RigLoss` compiles the whole training
loss onto one tape; its residuals are the same conditions rescaled to order
one (temperature differences in units of ``delta_t_ref``, heat fluxes in
units of the heater flux density), which changes term magnitudes but not
the zero sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import network as nw
from .case import CaseConfig
from .domain import (LAYER_IDS, PIPE_IDS, PLANAR_PAIRS, CollocationSet, NondimScales, RigGeometry,
                     default_scales, flux_per_depth, flux_star, heat_flux_density, k_hat, k_star,
                     nondim_temp, redim_temp)
from .errors import ConfigurationError, GeometryError, RegionError

TERM_NAMES = ("PDE", "BC", "IC", "CB", "h", "Q", "Data")
LOG_COLUMNS = (("epoch",) + tuple(f"L_{t}" for t in TERM_NAMES) + tuple(f"lambda_{t}" for t in TERM_NAMES)
               + ("total", "h_star", "wall_time"))


# -- state records -------------------------------------------------------------

@dataclass
class LossState:
    terms: dict[str, float]
    lambdas: dict[str, float]
    total: float
    h_star: float | None = None
    interface: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, terms, lambdas, h_star=None, interface=None) -> "LossState":
        terms = np.asarray(terms, dtype=float)
        lambdas = np.asarray(lambdas, dtype=float)
        return cls(dict(zip(TERM_NAMES, terms.tolist())), dict(zip(TERM_NAMES, lambdas.tolist())),
                   float(np.dot(terms, lambdas)), h_star, dict(interface or {}))

    def term_array(self) -> np.ndarray:
        return np.array([self.terms[t] for t in TERM_NAMES])

    def lambda_array(self) -> np.ndarray:
        return np.array([self.lambdas[t] for t in TERM_NAMES])

    def log_row(self, epoch: int, wall_time: float) -> dict:
        row = {"epoch": epoch}
        row.update({f"L_{t}": self.terms[t] for t in TERM_NAMES})
        row.update({f"lambda_{t}": self.lambdas[t] for t in TERM_NAMES})
        row.update(total=self.total, h_star=self.h_star, wall_time=wall_time)
        return row


@dataclass
class BoundaryData:
    """Coolant temperatures (K) and optional probe readings (K)."""

    t_in: float
    t_out: float
    t_w_star: float
    probes: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_case(cls, case: CaseConfig, scales: NondimScales, with_probes: bool = True) -> "BoundaryData":
        t_w = 0.5 * (case.t_in_k + case.t_out_k)
        probes = {}
        if with_probes:
            probes = {k: case.probes_c[k] + 273.15 for k in case.training_probes if k in case.probes_c}
        return cls(case.t_in_k, case.t_out_k, float(nondim_temp(t_w, scales)), probes)


# -- problem description -------------------------------------------------------

@dataclass
class RigProblem:
    """Everything the loss needs besides networks and points.

    ``energy_area`` selects the area in Q_out = h A sum(t_i - t_w): ``"per_pass"``
    uses one pass of pipe (A_1 / number of pipes), ``"total"`` uses A_1.
    """

    geom: RigGeometry
    case: CaseConfig
    scales: NondimScales | None = None
    with_probes: bool = True
    delta_t_ref: float = 10.0
    h_ref: float = 1000.0
    energy_area: str = "per_pass"
    power_w: float | None = None  # None -> case power

    def __post_init__(self):
        if self.scales is None:
            self.scales = default_scales(self.geom, self.case.t_in_c)
        if self.power_w is None:
            self.power_w = self.case.power_w
        if self.power_w < 0:
            raise ConfigurationError("power must be non-negative")
        if self.energy_area not in ("per_pass", "total"):
            raise ConfigurationError(f"energy_area must be 'per_pass' or 'total', got {self.energy_area!r}")
        if not (self.delta_t_ref > 0 and self.h_ref > 0):
            raise ConfigurationError("delta_t_ref and h_ref must be positive")
        self.boundary = BoundaryData.from_case(self.case, self.scales, self.with_probes)

    # scales and derived constants
    @property
    def sigma(self) -> float:
        return self.delta_t_ref / self.scales.U_0

    @property
    def t_w_star(self) -> float:
        return self.boundary.t_w_star

    @property
    def q_flux(self) -> float:
        return heat_flux_density(self.power_w, self.geom)

    @property
    def q_ref(self) -> float:
        return self.q_flux if self.q_flux > 0 else 1.0

    @property
    def alpha_star(self) -> float:
        return flux_star(flux_per_depth(self.q_flux, self.geom.layers[-1].k), self.scales)

    @property
    def h_unit(self) -> float:
        return self.h_ref * self.scales.U_0

    @property
    def pipe_length(self) -> float:
        return self.case.pipe_length if self.case.pipe_length is not None else self.geom.total_pipe_length

    @property
    def area(self) -> float:
        a1 = self.case.inner_area(self.pipe_length)
        return a1 / len(self.geom.pipes) if self.energy_area == "per_pass" else a1

    def conductivity(self, region: str) -> float:
        if region in LAYER_IDS:
            return self.geom.layers[LAYER_IDS.index(region)].k
        if region in PIPE_IDS or region == "pipes":
            return self.geom.pipes[0].k_pipe if region == "pipes" else self.geom.pipe(region).k_pipe
        raise ConfigurationError(f"unknown region {region!r}")

    def length_scale(self, region: str) -> float:
        if region in LAYER_IDS:
            return self.geom.layers[LAYER_IDS.index(region)].thickness
        p = self.geom.pipes[0] if region == "pipes" else self.geom.pipe(region)
        return p.r_outer - p.r_inner


def subnet_of(region: str) -> str:
    if region in LAYER_IDS:
        return region
    if region in PIPE_IDS:
        return "pipes"
    raise ConfigurationError(f"unknown region {region!r}")


# -- pointwise evaluation helpers ----------------------------------------------

def _points(p) -> tuple[np.ndarray, bool]:
    a = np.asarray(p, dtype=float)
    single = a.ndim == 1
    return np.atleast_2d(a), single


def _field_values(ensemble: nw.NetworkEnsemble, subnet: str, pts: np.ndarray, derivs) -> dict[str, np.ndarray]:
    tape = ad.Tape()
    out = nw.field_graph(tape, subnet, ensemble.subnets[subnet], pts, derivs, constant_params=True)
    vals = tape.forward({})
    return {k: np.asarray(vals[v.index], dtype=float).reshape(-1) for k, v in out.items()}


def _ret(v: np.ndarray, single: bool):
    return float(v[0]) if single else v


def _check_region(problem: RigProblem, region: str, pts: np.ndarray, tol: float = 1e-9) -> None:
    s = problem.scales
    ok = problem.geom.region_contains(region, pts[:, 0] * s.x_L, pts[:, 1] * s.y_L, tol)
    if not np.all(ok):
        raise RegionError(f"{int(np.sum(~ok))} point(s) lie outside region {region}")


def _radial_unit(problem: RigProblem, pipe_id: str, pts: np.ndarray, which: str, tol: float = 1e-6):
    """Physical outward unit normal of a pipe circle at the given points."""
    s = problem.scales
    p = problem.geom.pipe(pipe_id)
    dx = pts[:, 0] * s.x_L - p.center[0]
    dy = pts[:, 1] * s.y_L - p.center[1]
    r = np.hypot(dx, dy)
    target = p.r_outer if which == "outer" else p.r_inner
    if np.any(np.abs(r - target) > tol * target):
        raise GeometryError(f"point(s) are off the {which} circle of pipe {pipe_id}")
    return dx / r, dy / r


def _d_dr(s: NondimScales, ux, uy, nx, ny):
    """Radial derivative with respect to r* = r / y_L."""
    return (s.y_L / s.x_L) * ux * nx + uy * ny


# -- public residual operations ------------------------------------------------

def residual_pde(ensemble, points, region: str, problem: RigProblem):
    """k* (y_L^2 u*_xx + x_L^2 u*_yy) for the subnet that owns ``region``."""
    pts, single = _points(points)
    _check_region(problem, region, pts)
    s = problem.scales
    v = _field_values(ensemble, subnet_of(region), pts, ("xx", "yy"))
    ks = k_star(problem.conductivity(region), s)
    return _ret(ks * (s.y_L ** 2 * v["xx"] + s.x_L ** 2 * v["yy"]), single)


def residual_periodic(ensemble, y_star, layer: str, problem: RigProblem):
    """u*_x(0, y*) - u*_x(x_N / x_L, y*)."""
    y, single = _points(np.atleast_1d(np.asarray(y_star, dtype=float)))
    y = y.reshape(-1)
    if layer not in LAYER_IDS:
        raise RegionError(f"periodic condition applies to layers only, got {layer!r}")
    x_end = problem.geom.x_N / problem.scales.x_L
    left = _field_values(ensemble, layer, np.column_stack([np.zeros_like(y), y]), ("x",))
    right = _field_values(ensemble, layer, np.column_stack([np.full_like(y, x_end), y]), ("x",))
    r = left["x"] - right["x"]
    return float(r[0]) if np.ndim(y_star) == 0 else r


def residual_flux_top(ensemble, x_star, problem: RigProblem, variant: str = "flux"):
    """u*_y - alpha* on the heated footprint.

    ``variant="insulated"`` returns u*_y on the insulated part of the top face
    and ``variant="bottom"`` returns u*_y on the cold-plate bottom.
    """
    x = np.atleast_1d(np.asarray(x_star, dtype=float))
    g, s = problem.geom, problem.scales
    xa, xb = g.x_A / s.x_L, g.x_B / s.x_L
    tol = 1e-12
    if variant == "flux":
        if np.any((x < xa - tol) | (x > xb + tol)):
            raise RegionError("flux residual requested outside the heated footprint")
        layer, y, target = LAYER_IDS[-1], g.y_N / s.y_L, problem.alpha_star
    elif variant == "insulated":
        if np.any((x > xa + tol) & (x < xb - tol)):
            raise RegionError("insulated residual requested inside the heated footprint")
        layer, y, target = LAYER_IDS[-1], g.y_N / s.y_L, 0.0
    elif variant == "bottom":
        layer, y, target = LAYER_IDS[0], 0.0, 0.0
    else:
        raise ConfigurationError(f"unknown variant {variant!r}")
    if np.any((x < -tol) | (x > g.x_N / s.x_L + tol)):
        raise RegionError("x* outside the plate")
    v = _field_values(ensemble, layer, np.column_stack([x, np.full_like(x, y)]), ("y",))
    r = v["y"] - target
    return float(r[0]) if np.ndim(x_star) == 0 else r


def residual_interface_planar(ensemble, x_star, pair: tuple[int, int], problem: RigProblem):
    """(u*_i - u*_j, k_hat_i u*_y^i - k_hat_j u*_y^j) on the interface between layers i and j."""
    if tuple(pair) not in PLANAR_PAIRS:
        raise RegionError(f"layers {pair} do not share an interface")
    i, j = pair
    g, s = problem.geom, problem.scales
    x = np.atleast_1d(np.asarray(x_star, dtype=float))
    if np.any((x < -1e-12) | (x > g.x_N / s.x_L + 1e-12)):
        raise RegionError("x* outside the plate")
    y = g.layers[i].y_top / s.y_L
    pts = np.column_stack([x, np.full_like(x, y)])
    a = _field_values(ensemble, LAYER_IDS[i], pts, ("y",))
    b = _field_values(ensemble, LAYER_IDS[j], pts, ("y",))
    jump = a["u"] - b["u"]
    flux = k_hat(g.layers[i].k, s) * a["y"] - k_hat(g.layers[j].k, s) * b["y"]
    if np.ndim(x_star) == 0:
        return float(jump[0]), float(flux[0])
    return jump, flux


def residual_interface_circular(ensemble, points, pipe_id: str, problem: RigProblem):
    """(u*_0 - u*_p, k_hat_0 du*_0/dr* - k_hat_p du*_p/dr*) on a pipe's outer circle.

    The radial derivative uses the physical unit normal, so its x-part carries
    the y_L / x_L factor of the stretched coordinates.
    """
    pts, single = _points(points)
    s = problem.scales
    nx, ny = _radial_unit(problem, pipe_id, pts, "outer")
    a = _field_values(ensemble, "layer0", pts, ("x", "y"))
    b = _field_values(ensemble, "pipes", pts, ("x", "y"))
    jump = a["u"] - b["u"]
    flux = (k_hat(problem.conductivity("layer0"), s) * _d_dr(s, a["x"], a["y"], nx, ny)
            - k_hat(problem.conductivity(pipe_id), s) * _d_dr(s, b["x"], b["y"], nx, ny))
    if single:
        return float(jump[0]), float(flux[0])
    return jump, flux


def residual_convective(ensemble, points, pipe_id: str, t_w_star: float, problem: RigProblem,
                        h_star: float | None = None):
    """k_hat_p du*/dr* - h* (u* - t_w*) on a pipe's inner surface.

    r points away from the pipe center, so the first term is the conductive
    heat flux arriving at the wetted wall and the residual vanishes when it
    equals the convective flux into the water.
    """
    pts, single = _points(points)
    s = problem.scales
    nx, ny = _radial_unit(problem, pipe_id, pts, "inner")
    v = _field_values(ensemble, "pipes", pts, ("x", "y"))
    hs = ensemble.h_star if h_star is None else h_star
    r = k_hat(problem.conductivity(pipe_id), s) * _d_dr(s, v["x"], v["y"], nx, ny) - hs * (v["u"] - t_w_star)
    return _ret(r, single)


def energy_residual_value(p0: float, h: float, area: float, t_max, t_w: float) -> float:
    """(Q_in - Q_out) / P_0 with Q_out = h A sum(t_i - t_w); raw difference when P_0 = 0."""
    q_out = h * area * float(np.sum(np.asarray(t_max, dtype=float) - t_w))
    diff = p0 - q_out
    return diff / p0 if p0 > 0 else diff


def pipe_max_temperatures(ensemble, problem: RigProblem, inner_points: dict[str, np.ndarray]) -> dict[str, float]:
    """Maximum redimensioned temperature (K) over each pipe's inner-surface points."""
    out = {}
    for pid in PIPE_IDS:
        if pid not in inner_points:
            continue
        pts = np.atleast_2d(inner_points[pid])
        if len(pts) == 0:
            raise ConfigurationError(f"pipe {pid} has no inner-surface points")
        u = nw.field_predict(ensemble.subnets["pipes"], pts)
        out[pid] = float(redim_temp(np.max(u), problem.scales))
    if not out:
        raise ConfigurationError("no pipe inner-surface points supplied")
    return out


def residual_energy(ensemble, problem: RigProblem, inner_points: dict[str, np.ndarray],
                    h_star: float | None = None) -> float:
    """(P_0 - h A sum_i (t_i - t_w)) / P_0, t_i the max inner-surface temperature of pipe i."""
    t_max = pipe_max_temperatures(ensemble, problem, inner_points)
    hs = ensemble.h_star if h_star is None else h_star
    h = hs / problem.scales.U_0
    t_w = 0.5 * (problem.boundary.t_in + problem.boundary.t_out)
    return energy_residual_value(problem.power_w, h, problem.area, list(t_max.values()), t_w)


def residual_data(ensemble, problem: RigProblem, probes: dict[str, float] | None = None,
                  points: dict[str, np.ndarray] | None = None) -> float:
    """Sum over probes of (u*_pred - u*_meas)^2; readings in kelvin.

    ``probes`` defaults to the problem's training readings, ``points`` to the
    geometry's probe coordinates.
    """
    probes = problem.boundary.probes if probes is None else probes
    total = 0.0
    for name, reading in probes.items():
        spec = problem.geom.probe(name)
        s = problem.scales
        if points is not None and name in points:
            pt = np.asarray(points[name], dtype=float)
        else:
            pt = np.array([spec.x / s.x_L, spec.y / s.y_L])
        if not problem.geom.region_contains(spec.subdomain, pt[0] * s.x_L, pt[1] * s.y_L, 1e-9):
            raise ConfigurationError(f"probe {name} lies outside {spec.subdomain}")
        u = nw.field_predict(ensemble.subnets[spec.subdomain], pt[None, :])[0]
        total += (u - nondim_temp(reading, s)) ** 2
    return float(total)


# -- compiled loss ---------------------------------------------------------------

class CompiledLoss:
    """A loss recorded once on a tape and re-evaluated with new parameters.

    Subclasses fill ``tape``, ``terms`` (one Var or None per entry of
    ``TERM_NAMES``) and ``batched`` (input name -> full point array and batch
    size).  The tape reads the loss weights from the input ``"lambda"``.
    """

    def __init__(self):
        self.tape = ad.Tape()
        self.terms: list[ad.Var | None] = [None] * len(TERM_NAMES)
        self.batched: dict[str, tuple[np.ndarray, int]] = {}
        self.total: ad.Var | None = None

    def points(self, name: str, full: np.ndarray, batch: int | None) -> ad.Var | np.ndarray:
        """Register a point set; minibatched sets become tape inputs."""
        full = np.atleast_2d(np.asarray(full, dtype=float))
        if batch is None or batch >= len(full):
            return full
        self.batched[name] = (full, int(batch))
        return self.tape.var(name)

    def finish(self) -> None:
        lam = self.tape.var("lambda")
        total = None
        for s, t in enumerate(self.terms):
            if t is None:
                continue
            piece = ad.sum(ad.take(lam, [s]) * t)
            total = piece if total is None else total + piece
        if total is None:
            total = ad.sum(ad.take(lam, [0]) * 0.0)
        self.total = self.tape.set_output(total)

    def feed(self, rng: np.random.Generator | None) -> dict[str, np.ndarray]:
        """Draw one minibatch per batched set (sorted rows, without replacement)."""
        out = {}
        for name, (full, b) in self.batched.items():
            if rng is None:
                raise ConfigurationError("a generator is required for minibatched losses")
            idx = np.sort(rng.choice(len(full), size=b, replace=False))
            out[name] = full[idx]
        return out

    def diagnostics(self, ensemble) -> dict[str, float]:
        """Extra per-epoch quantities recorded alongside the loss terms."""
        return {}

    def run(self, arrays: dict[str, np.ndarray], lambdas, feed: dict | None = None,
            wrt=None, grad: bool = True, check: bool = False):
        """Return (term values, total, gradient dict or None)."""
        inputs = dict(arrays)
        inputs["lambda"] = np.asarray(lambdas, dtype=float)
        if feed:
            inputs.update(feed)
        missing = set(self.batched) - set(inputs)
        if missing:
            raise ConfigurationError(f"missing minibatch inputs {sorted(missing)}")
        vals = self.tape.forward(inputs, upto=self.total.index, check=check)
        terms = np.array([0.0 if t is None else float(vals[t.index]) for t in self.terms])
        total = float(vals[self.total.index])
        grads = None
        if grad:
            names = [n for n in (wrt if wrt is not None else arrays) if n in self.tape.inputs]
            grads = self.tape.backward(vals, self.total, names)
            for n in (wrt if wrt is not None else arrays):
                if n not in grads:
                    grads[n] = np.zeros_like(np.asarray(arrays[n], dtype=float))
        return terms, total, grads


def _ms(v: ad.Var) -> ad.Var:
    return ad.mean(v * v)


class RigLoss(CompiledLoss):
    """The seven-term loss of the multilayer rig on one tape.

    ``batch`` maps interior regions (``layer0``..``layer4``, ``p1``..``p6``) to
    minibatch sizes; unlisted sets are used whole.  Residuals are normalized:
    temperatures by ``delta_t_ref``, heat fluxes by the heater flux density.
    """

    def __init__(self, problem: RigProblem, ensemble: nw.NetworkEnsemble, colloc: CollocationSet,
                 batch: dict[str, int] | None = None):
        super().__init__()
        self.problem = problem
        self.colloc = colloc
        if colloc.scales != problem.scales:
            raise ConfigurationError("collocation set and problem use different scales")
        analytic = any(isinstance(f, nw.AnalyticField) for f in ensemble.subnets.values())
        batch = {} if (batch is None or analytic) else dict(batch)
        self._build(ensemble, batch)
        self.finish()

    def diagnostics(self, ensemble) -> dict[str, float]:
        if any(isinstance(ensemble.subnets[k], nw.AnalyticField) for k in LAYER_IDS):
            return {}
        return {f"mismatch_{k}": v for k, v in interface_mismatch(ensemble, self.colloc, self.problem.geom).items()}

    def _field(self, ensemble, subnet, pts, derivs):
        return nw.field_graph(self.tape, subnet, ensemble.subnets[subnet], pts, derivs)

    def _build(self, ens, batch):
        P, c, t = self.problem, self.colloc, self.tape
        s, g = P.scales, P.geom
        sig, q = P.sigma, P.q_ref
        flux_y = s.U_0 / s.y_L / q  # k * flux_y * u*_y is a normalized heat flux
        flux_x = s.U_0 / s.x_L / q

        # PDE: k lap(u) * thickness / q_ref
        pde = None
        for region in LAYER_IDS + tuple(p.id for p in g.pipes):
            if region not in c.interior:
                continue
            pts = self.points(f"pts:{region}", c.interior[region], batch.get(region))
            f = self._field(ens, subnet_of(region), pts, ("xx", "yy"))
            coef = P.conductivity(region) * s.U_0 * P.length_scale(region) / q
            r = (f["xx"] * (coef / s.x_L ** 2)) + (f["yy"] * (coef / s.y_L ** 2))
            pde = _ms(r) if pde is None else pde + _ms(r)
        self.terms[0] = pde

        # BC: periodic sides, insulated bottom and top, heated footprint
        bc = None
        x_end = g.x_N / s.x_L
        for i, layer in enumerate(LAYER_IDS):
            y = c.periodic[layer]
            left = self._field(ens, layer, np.column_stack([np.zeros_like(y), y]), ("x",))
            right = self._field(ens, layer, np.column_stack([np.full_like(y, x_end), y]), ("x",))
            kx = g.layers[i].k * flux_x
            term = _ms((left["u"] - right["u"]) * (1.0 / sig)) + _ms((left["x"] - right["x"]) * kx)
            bc = term if bc is None else bc + term
        bot = self._field(ens, "layer0", np.column_stack([c.bottom, np.zeros_like(c.bottom)]), ("y",))
        bc = bc + _ms(bot["y"] * (g.layers[0].k * flux_y))
        k4 = g.layers[-1].k * flux_y
        y_top = g.y_N / s.y_L
        top = self._field(ens, LAYER_IDS[-1], np.column_stack([c.top_flux, np.full_like(c.top_flux, y_top)]), ("y",))
        bc = bc + _ms((top["y"] - P.alpha_star) * k4)
        if len(c.top_insulated):
            ins = self._field(ens, LAYER_IDS[-1],
                              np.column_stack([c.top_insulated, np.full_like(c.top_insulated, y_top)]), ("y",))
            bc = bc + _ms(ins["y"] * k4)
        self.terms[1] = bc

        # IC: planar and circular interfaces
        ic = None
        for (i, j) in PLANAR_PAIRS:
            xs = c.planar[(i, j)]
            pts = np.column_stack([xs, np.full_like(xs, g.layers[i].y_top / s.y_L)])
            a = self._field(ens, LAYER_IDS[i], pts, ("y",))
            b = self._field(ens, LAYER_IDS[j], pts, ("y",))
            term = (_ms((a["u"] - b["u"]) * (1.0 / sig))
                    + _ms(a["y"] * (g.layers[i].k * flux_y) - b["y"] * (g.layers[j].k * flux_y)))
            ic = term if ic is None else ic + term
        k0 = g.layers[0].k * flux_y
        for p in g.pipes:
            if p.id not in c.circ_outer:
                continue
            pts = c.circ_outer[p.id]
            nx, ny = _radial_unit(P, p.id, pts, "outer")
            a = self._field(ens, "layer0", pts, ("x", "y"))
            b = self._field(ens, "pipes", pts, ("x", "y"))
            cx, cy = (s.y_L / s.x_L) * nx[:, None], ny[:, None]
            kp = p.k_pipe * flux_y
            dr_a = a["x"] * (cx * k0) + a["y"] * (cy * k0)
            dr_b = b["x"] * (cx * kp) + b["y"] * (cy * kp)
            term = _ms((a["u"] - b["u"]) * (1.0 / sig)) + _ms(dr_a - dr_b)
            ic = term if ic is None else ic + term
        self.terms[2] = ic

        # CB and h: Robin condition on the wetted wall; Q: energy balance
        log_h = t.var("log_h")
        h_star = ad.exp(log_h) * P.h_unit
        self.h_star = h_star
        robin = None
        maxima = []
        for p in g.pipes:
            if p.id not in c.circ_inner:
                continue
            pts = c.circ_inner[p.id]
            if len(pts) == 0:
                raise ConfigurationError(f"pipe {p.id} has no inner-surface points")
            nx, ny = _radial_unit(P, p.id, pts, "inner")
            f = self._field(ens, "pipes", pts, ("x", "y"))
            kp = p.k_pipe * flux_y
            dr = f["x"] * ((s.y_L / s.x_L) * kp * nx[:, None]) + f["y"] * (kp * ny[:, None])
            r = dr - (f["u"] - P.t_w_star) * h_star * (1.0 / q)
            robin = _ms(r) if robin is None else robin + _ms(r)
            maxima.append(ad.reduce_max(f["u"]) - P.t_w_star)
        if robin is None:
            raise ConfigurationError("no pipe inner-surface points in the collocation set")
        # no water networks: the pipe/water pairs of L_CB reduce to the same residual as L_h
        self.terms[3] = robin
        self.terms[4] = robin * 1.0
        excess = maxima[0]
        for m in maxima[1:]:
            excess = excess + m
        q_out = h_star * excess * P.area  # h* (u* - t_w*) = h (t - t_w)
        if P.power_w > 0:
            rq = 1.0 - q_out * (1.0 / P.power_w)
        else:
            rq = q_out * -1.0
        self.terms[5] = rq * rq

        # Data: probe readings
        if P.boundary.probes:
            res = []
            for name, reading in sorted(P.boundary.probes.items()):
                spec = g.probe(name)
                pt = c.probes[name] if name in c.probes else np.array([spec.x / s.x_L, spec.y / s.y_L])
                if not g.region_contains(spec.subdomain, pt[0] * s.x_L, pt[1] * s.y_L, 1e-9):
                    raise ConfigurationError(f"probe {name} lies outside {spec.subdomain}")
                f = self._field(ens, spec.subdomain, np.asarray(pt, dtype=float)[None, :], ())
                res.append(_ms((f["u"] - float(nondim_temp(reading, s))) * (1.0 / sig)))
            data = res[0]
            for r in res[1:]:
                data = data + r
            self.terms[6] = data * (1.0 / len(res))


def total_loss(ensemble: nw.NetworkEnsemble, colloc: CollocationSet, problem: RigProblem,
               lambdas=None) -> LossState:
    """Evaluate the weighted seven-term loss over the full collocation set."""
    lam = np.ones(len(TERM_NAMES)) if lambdas is None else np.asarray(lambdas, dtype=float)
    if lam.shape != (len(TERM_NAMES),) or np.any(lam <= 0):
        raise ConfigurationError("lambdas must be seven positive numbers")
    loss = RigLoss(problem, ensemble, colloc)
    terms, _, _ = loss.run(ensemble.arrays(), lam, grad=False)
    return LossState.from_arrays(terms, lam, ensemble.h_star)


def interface_mismatch(ensemble: nw.NetworkEnsemble, colloc: CollocationSet, geom: RigGeometry) -> dict[str, float]:
    """RMS of u*_i - u*_j over each planar interface's points."""
    out = {}
    for (i, j), xs in colloc.planar.items():
        pts = np.column_stack([xs, np.full_like(xs, geom.layers[i].y_top / colloc.scales.y_L)])
        a = nw.field_predict(ensemble.subnets[LAYER_IDS[i]], pts)
        b = nw.field_predict(ensemble.subnets[LAYER_IDS[j]], pts)
        out[f"{i}-{j}"] = float(math.sqrt(np.mean((a - b) ** 2)))
    return out
