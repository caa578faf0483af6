"""Rig geometry, non-dimensionalization and collocation sampling."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .errors import ConfigurationError, GeometryError, SamplingError, SchemaError

SCHEMA_VERSION = 1
LAYER_IDS = ("layer0", "layer1", "layer2", "layer3", "layer4")
PIPE_IDS = ("p1", "p2", "p3", "p4", "p5", "p6")
PLANAR_PAIRS = ((0, 1), (1, 2), (2, 3), (3, 4))
PROBE_NAMES = ("Face", "Side", "In1", "In2")
KELVIN = 273.15


@dataclass(frozen=True)
class LayerSpec:
    id: int
    k: float
    y_bottom: float
    y_top: float
    name: str = ""

    @property
    def thickness(self) -> float:
        return self.y_top - self.y_bottom


@dataclass(frozen=True)
class PipeSpec:
    id: str
    center: tuple[float, float]
    r_outer: float
    r_inner: float
    k_pipe: float = 16.2


@dataclass(frozen=True)
class ProbeSpec:
    name: str
    x: float
    y: float
    subdomain: str


@dataclass(frozen=True)
class RigGeometry:
    layers: tuple[LayerSpec, ...]
    pipes: tuple[PipeSpec, ...]
    x_N: float
    x_A: float
    x_B: float
    depth: float = 0.3
    pipe_length: float | None = None
    probes: tuple[ProbeSpec, ...] = ()
    assumptions: tuple[str, ...] = ()

    def __post_init__(self):
        validate_geometry(self)

    @property
    def y_N(self) -> float:
        return self.layers[-1].y_top

    @property
    def total_pipe_length(self) -> float:
        return self.pipe_length if self.pipe_length is not None else len(self.pipes) * self.depth

    def layer(self, i: int) -> LayerSpec:
        return self.layers[i]

    def pipe(self, pid: str) -> PipeSpec:
        for p in self.pipes:
            if p.id == pid:
                return p
        raise GeometryError(f"unknown pipe {pid!r}")

    def probe(self, name: str) -> ProbeSpec:
        for p in self.probes:
            if p.name == name:
                return p
        raise ConfigurationError(f"probe {name!r} is not configured")

    def in_pipe_hole(self, x, y, radius: str = "outer") -> np.ndarray:
        """True where (x, y) lies strictly inside any pipe's outer (or inner) circle."""
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        hit = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for p in self.pipes:
            r = p.r_outer if radius == "outer" else p.r_inner
            hit |= (x - p.center[0]) ** 2 + (y - p.center[1]) ** 2 < r * r
        return hit

    def region_contains(self, region: str, x, y, tol: float = 1e-12) -> np.ndarray:
        """Membership predicate for interior regions ``layer0..4`` and ``p1..p6``."""
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        inside_x = (x >= -tol) & (x <= self.x_N + tol)
        if region in LAYER_IDS:
            L = self.layers[LAYER_IDS.index(region)]
            ok = inside_x & (y >= L.y_bottom - tol) & (y <= L.y_top + tol)
            if L.id == 0:
                ok &= ~self.in_pipe_hole(x, y, "outer")
            return ok
        if region in PIPE_IDS:
            p = self.pipe(region)
            r2 = (x - p.center[0]) ** 2 + (y - p.center[1]) ** 2
            scale = p.r_outer * p.r_outer
            return (r2 >= p.r_inner ** 2 - tol * scale) & (r2 <= p.r_outer ** 2 + tol * scale)
        raise ConfigurationError(f"unknown region {region!r}")


def validate_geometry(g: RigGeometry) -> None:
    if len(g.layers) != 5:
        raise GeometryError(f"expected 5 layers, got {len(g.layers)}")
    prev = 0.0
    for i, L in enumerate(g.layers):
        if L.id != i:
            raise GeometryError(f"layers must be ordered bottom-up; position {i} has id {L.id}")
        if L.k <= 0:
            raise GeometryError(f"layer {i} conductivity must be positive")
        if not math.isclose(L.y_bottom, prev, rel_tol=0, abs_tol=1e-12) or L.y_top <= L.y_bottom:
            raise GeometryError(f"layer {i} does not tile the stack (bottom {L.y_bottom}, expected {prev})")
        prev = L.y_top
    if not 0 <= g.x_A < g.x_B <= g.x_N:
        raise GeometryError("flux footprint must satisfy 0 <= x_A < x_B <= x_N")
    if g.depth <= 0:
        raise GeometryError("depth must be positive")
    L0 = g.layers[0]
    for p in g.pipes:
        if not 0 < p.r_inner < p.r_outer:
            raise GeometryError(f"pipe {p.id}: need 0 < r_inner < r_outer")
        if p.k_pipe <= 0:
            raise GeometryError(f"pipe {p.id}: conductivity must be positive")
        xc, yc = p.center
        if not (xc - p.r_outer > 0 and xc + p.r_outer < g.x_N
                and yc - p.r_outer > L0.y_bottom and yc + p.r_outer < L0.y_top):
            raise GeometryError(f"pipe {p.id} is not strictly inside the cold plate")


def default_rig() -> RigGeometry:
    """Documented default rig; thicknesses, widths and pipe placement are assumptions."""
    t_cold, t_pgs, t_al = 0.0127, 0.0001, 0.00635
    ks = (200.0, 0.842, 142.0, 0.842, 142.0)
    names = ("aluminum cold plate", "PGS", "middle aluminum", "PGS", "top aluminum")
    ys = np.cumsum([0.0, t_cold, t_pgs, t_al, t_pgs, t_al])
    layers = tuple(LayerSpec(i, ks[i], float(ys[i]), float(ys[i + 1]), names[i]) for i in range(5))
    x_N = 0.3
    yc = t_cold / 2
    pipes = tuple(PipeSpec(f"p{i + 1}", (0.025 + 0.05 * i, yc), 0.006, 0.005, 16.2) for i in range(6))
    y_mid2 = (ys[2] + ys[3]) / 2
    y_mid4 = (ys[4] + ys[5]) / 2
    probes = (
        ProbeSpec("Face", 0.15, float(ys[5]), "layer4"),
        ProbeSpec("Side", 0.0, float(y_mid4), "layer4"),
        ProbeSpec("In1", 0.14, float(y_mid2), "layer2"),
        ProbeSpec("In2", 0.16, float(y_mid2), "layer2"),
    )
    return RigGeometry(layers, pipes, x_N, 0.125, 0.175, 0.3, None, probes, (
        "layer thicknesses (12.7 mm cold plate, 0.1 mm PGS, 6.35 mm aluminum) are assumed",
        "plate width x_N = 0.3 m, depth 0.3 m and heated footprint [0.125, 0.175] m are assumed",
        "pipe radius 0.005 read as metres; 1 mm stainless wall assumed",
        "probe coordinates are read off a schematic and are approximate",
    ))


# -- geometry files ----------------------------------------------------------

def geometry_to_dict(g: RigGeometry) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "units": "metres, W/(m K)",
        "x_N_m": g.x_N, "x_A_m": g.x_A, "x_B_m": g.x_B, "depth_m": g.depth,
        "pipe_length_m": g.pipe_length,
        "radius_unit": "m",
        "layers": [{"id": L.id, "name": L.name, "k_w_mk": L.k, "y_bottom_m": L.y_bottom, "y_top_m": L.y_top}
                   for L in g.layers],
        "pipes": [{"id": p.id, "x_c_m": p.center[0], "y_c_m": p.center[1], "r_inner": p.r_inner,
                   "r_outer": p.r_outer, "k_w_mk": p.k_pipe} for p in g.pipes],
        "probes": {p.name: {"x_m": p.x, "y_m": p.y, "subdomain": p.subdomain} for p in g.probes},
        "assumptions": list(g.assumptions),
    }


def geometry_from_dict(d: dict) -> RigGeometry:
    try:
        if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise SchemaError(f"unsupported geometry schema_version {d['schema_version']!r}")
        runit = d.get("radius_unit", "m")
        if runit not in ("m", "mm"):
            raise SchemaError(f"radius_unit must be 'm' or 'mm', got {runit!r}")
        rs = 1.0 if runit == "m" else 1e-3
        layers = tuple(LayerSpec(int(L["id"]), float(L["k_w_mk"]), float(L["y_bottom_m"]), float(L["y_top_m"]),
                                 L.get("name", "")) for L in d["layers"])
        pipes = tuple(PipeSpec(p["id"], (float(p["x_c_m"]), float(p["y_c_m"])), float(p["r_outer"]) * rs,
                               float(p["r_inner"]) * rs, float(p.get("k_w_mk", 16.2))) for p in d["pipes"])
        probes = tuple(ProbeSpec(k, float(v["x_m"]), float(v["y_m"]), v["subdomain"])
                       for k, v in d.get("probes", {}).items())
        pl = d.get("pipe_length_m")
        return RigGeometry(layers, pipes, float(d["x_N_m"]), float(d["x_A_m"]), float(d["x_B_m"]),
                           float(d.get("depth_m", 0.3)), None if pl is None else float(pl), probes,
                           tuple(d.get("assumptions", ())))
    except KeyError as e:
        raise SchemaError(f"geometry file missing field {e.args[0]!r}") from None


def load_geometry(path) -> RigGeometry:
    return geometry_from_dict(json.loads(Path(path).read_text()))


def save_geometry(g: RigGeometry, path) -> None:
    Path(path).write_text(json.dumps(geometry_to_dict(g), indent=2))


# -- non-dimensionalization --------------------------------------------------

@dataclass(frozen=True)
class NondimScales:
    x_L: float
    y_L: float
    U_0: float  # kelvin

    def __post_init__(self):
        if not (self.x_L > 0 and self.y_L > 0 and self.U_0 > 0):
            raise ConfigurationError("x_L, y_L and U_0 must be strictly positive")


def default_scales(geom: RigGeometry, t_in_c: float) -> NondimScales:
    """x_L = x_N, y_L = y_N and U_0 = coolant inlet temperature in kelvin."""
    return NondimScales(geom.x_N, geom.y_N, t_in_c + KELVIN)


def nondim_point(p, s: NondimScales):
    x, y = p
    return (np.asarray(x) / s.x_L, np.asarray(y) / s.y_L) if np.ndim(x) else (x / s.x_L, y / s.y_L)


def redim_point(p, s: NondimScales):
    x, y = p
    return (x * s.x_L, y * s.y_L)


def nondim_temp(u, s: NondimScales):
    return (u - s.U_0) / s.U_0


def redim_temp(u_star, s: NondimScales):
    return s.U_0 * (1.0 + u_star)


def k_star(k: float, s: NondimScales) -> float:
    """Conductivity multiplying the dimensionless Laplacian: k U_0 / (x_L^2 y_L^2)."""
    return k * s.U_0 / (s.x_L ** 2 * s.y_L ** 2)


def k_hat(k: float, s: NondimScales) -> float:
    """Conductivity multiplying dimensionless flux terms: k U_0 / y_L."""
    return k * s.U_0 / s.y_L


def flux_per_depth(q_pp: float, k_top: float) -> float:
    """alpha = q'' / k_top, the prescribed temperature gradient at the heated face (K/m)."""
    if k_top <= 0:
        raise ConfigurationError("k_top must be positive")
    return q_pp / k_top


def flux_star(alpha: float, s: NondimScales) -> float:
    return alpha * s.y_L / s.U_0


def heat_flux_density(power_w: float, geom: RigGeometry) -> float:
    """q'' (W/m^2) over the heated footprint (x_B - x_A) x depth."""
    return power_w / ((geom.x_B - geom.x_A) * geom.depth)


# -- collocation -------------------------------------------------------------

@dataclass(frozen=True)
class SampleCounts:
    cold_plate: int = 7624
    layers_mid: int = 6000  # layers 1-3
    top_layer: int = 7000
    pipe_interior: int = 300  # per pipe wall
    side: int = 200  # per layer, shared by the periodic pair
    bottom: int = 200
    top_flux: int = 300
    top_insulated: int = 200
    interface: int = 200  # per planar interface and per circle

    @classmethod
    def paper(cls) -> "SampleCounts":
        return cls()

    def scaled(self, factor: float, minimum: int = 8) -> "SampleCounts":
        return SampleCounts(**{k: max(minimum, int(round(v * factor))) for k, v in asdict(self).items()})

    def interior_count(self, region: str) -> int:
        if region == "layer0":
            return self.cold_plate
        if region == "layer4":
            return self.top_layer
        if region in LAYER_IDS:
            return self.layers_mid
        return self.pipe_interior


@dataclass
class CollocationSet:
    """Dimensionless collocation points, keyed by region.

    Point arrays are (N, 2) in (x*, y*); one-dimensional boundary sets store
    only the free coordinate.
    """

    scales: NondimScales
    interior: dict[str, np.ndarray]
    periodic: dict[str, np.ndarray]  # layer -> y*
    bottom: np.ndarray  # x* at y* = 0
    top_flux: np.ndarray  # x* in [x_A, x_B]
    top_insulated: np.ndarray  # x* outside the footprint
    planar: dict[tuple[int, int], np.ndarray]  # x* on the interface between layers
    circ_outer: dict[str, np.ndarray]
    circ_inner: dict[str, np.ndarray]
    probes: dict[str, np.ndarray] = field(default_factory=dict)

    def counts(self) -> dict[str, int]:
        out = {f"interior/{k}": len(v) for k, v in self.interior.items()}
        out.update({f"periodic/{k}": len(v) for k, v in self.periodic.items()})
        out["bottom"] = len(self.bottom)
        out["top_flux"] = len(self.top_flux)
        out["top_insulated"] = len(self.top_insulated)
        out.update({f"planar/{i}-{j}": len(v) for (i, j), v in self.planar.items()})
        out.update({f"circ_outer/{k}": len(v) for k, v in self.circ_outer.items()})
        out.update({f"circ_inner/{k}": len(v) for k, v in self.circ_inner.items()})
        return out

    def total(self) -> int:
        return int(sum(self.counts().values()))


def _lhs(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    return qmc.LatinHypercube(d=d, seed=rng).random(n)


def _lhs_interval(n: int, lo: float, hi: float, rng) -> np.ndarray:
    return lo + (hi - lo) * _lhs(n, 1, rng)[:, 0]


def sample(geom: RigGeometry, counts: SampleCounts, seed: int, scales: NondimScales | None = None,
           max_rounds: int = 200) -> CollocationSet:
    """Latin-hypercube collocation points for every region of the rig."""
    if any(v <= 0 for v in asdict(counts).values()):
        raise SamplingError("every region count must be positive")
    s = scales or NondimScales(geom.x_N, geom.y_N, 300.0)
    rng = np.random.default_rng(seed)
    interior = {}
    for i, L in enumerate(geom.layers):
        n = counts.interior_count(LAYER_IDS[i])
        pts = np.empty((0, 2))
        for _ in range(max_rounds):
            u = _lhs(n, 2, rng)
            cand = np.column_stack([u[:, 0] * geom.x_N, L.y_bottom + u[:, 1] * L.thickness])
            if i == 0:
                cand = cand[~geom.in_pipe_hole(cand[:, 0], cand[:, 1])]
            pts = np.vstack([pts, cand])
            if len(pts) >= n:
                break
        else:
            raise SamplingError(f"region {LAYER_IDS[i]} has no feasible area for sampling")
        pts = pts[:n]
        interior[LAYER_IDS[i]] = np.column_stack([pts[:, 0] / s.x_L, pts[:, 1] / s.y_L])
    circ_outer, circ_inner = {}, {}
    for p in geom.pipes:
        u = _lhs(counts.pipe_interior, 2, rng)
        r = np.sqrt(p.r_inner ** 2 + u[:, 0] * (p.r_outer ** 2 - p.r_inner ** 2))
        th = 2 * np.pi * u[:, 1]
        interior[p.id] = np.column_stack([(p.center[0] + r * np.cos(th)) / s.x_L,
                                          (p.center[1] + r * np.sin(th)) / s.y_L])
        for store, rad in ((circ_outer, p.r_outer), (circ_inner, p.r_inner)):
            th = _lhs_interval(counts.interface, 0.0, 2 * np.pi, rng)
            store[p.id] = np.column_stack([(p.center[0] + rad * np.cos(th)) / s.x_L,
                                           (p.center[1] + rad * np.sin(th)) / s.y_L])
    periodic = {LAYER_IDS[i]: _lhs_interval(counts.side, L.y_bottom, L.y_top, rng) / s.y_L
                for i, L in enumerate(geom.layers)}
    bottom = _lhs_interval(counts.bottom, 0.0, geom.x_N, rng) / s.x_L
    top_flux = _lhs_interval(counts.top_flux, geom.x_A, geom.x_B, rng) / s.x_L
    left_w, right_w = geom.x_A, geom.x_N - geom.x_B
    if left_w + right_w <= 0:
        top_ins = np.empty(0)
    else:
        # one LHS stratification over the concatenated insulated length
        t = _lhs_interval(counts.top_insulated, 0.0, left_w + right_w, rng)
        top_ins = np.where(t < left_w, t, geom.x_B + (t - left_w)) / s.x_L
    planar = {(i, j): _lhs_interval(counts.interface, 0.0, geom.x_N, rng) / s.x_L for i, j in PLANAR_PAIRS}
    probes = {p.name: np.array([p.x / s.x_L, p.y / s.y_L]) for p in geom.probes}
    return CollocationSet(s, interior, periodic, bottom, top_flux, top_ins, planar, circ_outer, circ_inner, probes)


def with_scales(geom: RigGeometry, colloc: CollocationSet, scales: NondimScales) -> CollocationSet:
    """Re-express a collocation set under different scales."""
    a = colloc.scales
    fx, fy = a.x_L / scales.x_L, a.y_L / scales.y_L
    conv = lambda P: np.column_stack([P[:, 0] * fx, P[:, 1] * fy])  # noqa: E731
    return replace(
        colloc, scales=scales,
        interior={k: conv(v) for k, v in colloc.interior.items()},
        periodic={k: v * fy for k, v in colloc.periodic.items()},
        bottom=colloc.bottom * fx, top_flux=colloc.top_flux * fx, top_insulated=colloc.top_insulated * fx,
        planar={k: v * fx for k, v in colloc.planar.items()},
        circ_outer={k: conv(v) for k, v in colloc.circ_outer.items()},
        circ_inner={k: conv(v) for k, v in colloc.circ_inner.items()},
        probes={k: np.array([v[0] * fx, v[1] * fy]) for k, v in colloc.probes.items()},
    )


def subdomain_box(geom: RigGeometry, region: str, s: NondimScales):
    """Dimensionless bounding box ((x0, x1), (y0, y1)) used to normalize network inputs."""
    if region in LAYER_IDS:
        L = geom.layers[LAYER_IDS.index(region)]
        return ((0.0, geom.x_N / s.x_L), (L.y_bottom / s.y_L, L.y_top / s.y_L))
    if region == "pipes":
        ys = [p.center[1] for p in geom.pipes]
        r = max(p.r_outer for p in geom.pipes)
        return ((0.0, geom.x_N / s.x_L), ((min(ys) - r) / s.y_L, (max(ys) + r) / s.y_L))
    raise ConfigurationError(f"unknown subdomain {region!r}")
