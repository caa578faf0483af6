"""From trained networks to reported quantities: h, coolant velocity, probes, fields.

Also holds the per-case orchestration (sampling, training several seeds,
aggregation) and the JSON/CSV writers for case reports.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import network as nw
from .case import CaseConfig, case_to_dict
from .domain import (KELVIN, LAYER_IDS, PROBE_NAMES, RigGeometry, SampleCounts, NondimScales, default_rig,
                     redim_temp, sample, subdomain_box)
from .errors import ConfigurationError, UnphysicalResultError
from .physics import LOG_COLUMNS, LossState, RigLoss, RigProblem, pipe_max_temperatures
from .training import TrainConfig, aggregate, config_to_dict, multi_trial, train

SCHEMA_VERSION = 1


class UnphysicalWarning(UserWarning):
    """A reported quantity has the wrong sign for heat leaving through the pipes."""


# -- conversions -------------------------------------------------------------------

def extract_h(ensemble: nw.NetworkEnsemble, scales: NondimScales) -> float:
    """h = h* / U_0 in W/m^2K."""
    h = ensemble.h_star / scales.U_0
    if not h > 0:
        raise UnphysicalResultError(f"heat transfer coefficient {h} is not positive")
    return h


def compute_velocity(h: float, case: CaseConfig, delta_t_pipes, pipe_length: float | None = None) -> float:
    """v = h A_1 mean(dT_i) / (rho A_2 c_p dT_2)."""
    dt2 = case.delta_t2
    if not dt2 > 0:
        raise ConfigurationError("outlet temperature must exceed inlet temperature")
    dts = np.asarray(list(delta_t_pipes), dtype=float)
    if dts.size == 0:
        raise ConfigurationError("no pipe temperature differences given")
    mean_dt = float(np.mean(dts))
    if mean_dt < 0:
        warnings.warn(f"mean pipe-wall excess temperature {mean_dt:.4g} K is negative", UnphysicalWarning,
                      stacklevel=2)
    if pipe_length is None:
        pipe_length = case.pipe_length if case.pipe_length is not None else default_rig().total_pipe_length
    a1 = case.inner_area(pipe_length)
    return h * a1 * mean_dt / (case.rho * case.flow_area * case.c_p * dt2)


def probe_temperatures(ensemble: nw.NetworkEnsemble, geom: RigGeometry, scales: NondimScales,
                       names=PROBE_NAMES) -> dict[str, float]:
    """Redimensioned predictions (K) at the configured probe locations."""
    out = {}
    for name in names:
        p = geom.probe(name)
        if not geom.region_contains(p.subdomain, p.x, p.y, 1e-9):
            raise ConfigurationError(f"probe {name} lies outside {p.subdomain}")
        pt = np.array([[p.x / scales.x_L, p.y / scales.y_L]])
        out[name] = float(redim_temp(nw.field_predict(ensemble.subnets[p.subdomain], pt)[0], scales))
    return out


def energy_balance(ensemble: nw.NetworkEnsemble, problem: RigProblem, inner_points, h: float | None = None) -> float:
    """Q_in - Q_out in watts, with the same t_i and area as the energy loss term."""
    h = extract_h(ensemble, problem.scales) if h is None else h
    t_max = pipe_max_temperatures(ensemble, problem, inner_points)
    t_w = 0.5 * (problem.boundary.t_in + problem.boundary.t_out)
    return problem.power_w - h * problem.area * sum(t - t_w for t in t_max.values())


def pipe_excess(ensemble, problem: RigProblem, inner_points) -> dict[str, float]:
    """dT_i = t_i - t_w per pipe (K)."""
    t_max = pipe_max_temperatures(ensemble, problem, inner_points)
    t_w = 0.5 * (problem.boundary.t_in + problem.boundary.t_out)
    return {k: v - t_w for k, v in t_max.items()}


def temperature_field(ensemble: nw.NetworkEnsemble, geom: RigGeometry, scales: NondimScales,
                      resolution=(64, 16), ring=(4, 64)) -> dict:
    """Gridded temperatures (K) per layer plus polar samples of every pipe wall.

    Each layer grid is ``resolution = (nx, ny)`` nodes including the layer
    edges; ``mask`` is False where the node lies inside a pipe.
    """
    nx, ny = resolution
    if nx < 2 or ny < 2:
        raise ConfigurationError("resolution must be at least 2 per axis")
    out = {}
    for i, L in enumerate(geom.layers):
        x = np.linspace(0.0, geom.x_N, nx)
        y = np.linspace(L.y_bottom, L.y_top, ny)
        X, Y = np.meshgrid(x, y)
        mask = geom.region_contains(LAYER_IDS[i], X, Y)
        pts = np.column_stack([X.ravel() / scales.x_L, Y.ravel() / scales.y_L])
        T = redim_temp(nw.field_predict(ensemble.subnets[LAYER_IDS[i]], pts), scales).reshape(X.shape)
        out[LAYER_IDS[i]] = {"x": X, "y": Y, "T": T, "mask": mask}
    nr, nt = ring
    for p in geom.pipes:
        r = np.linspace(p.r_inner, p.r_outer, nr)
        th = np.linspace(0.0, 2 * np.pi, nt, endpoint=False)
        R, TH = np.meshgrid(r, th)
        X, Y = p.center[0] + R * np.cos(TH), p.center[1] + R * np.sin(TH)
        pts = np.column_stack([X.ravel() / scales.x_L, Y.ravel() / scales.y_L])
        T = redim_temp(nw.field_predict(ensemble.subnets["pipes"], pts), scales).reshape(X.shape)
        out[p.id] = {"x": X, "y": Y, "T": T, "mask": np.ones_like(T, dtype=bool)}
    return out


def field_rows(grids: dict):
    """(x, y, region, T in degrees C) rows for CSV export, masked nodes skipped."""
    rows = []
    for region, g in grids.items():
        for x, y, t, m in zip(g["x"].ravel(), g["y"].ravel(), g["T"].ravel(), g["mask"].ravel()):
            if m:
                rows.append((float(x), float(y), region, float(t - KELVIN)))
    return rows


def write_field_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_m", "y_m", "region", "T_c"])
        for r in rows:
            w.writerow([f"{r[0]:.9g}", f"{r[1]:.9g}", r[2], f"{r[3]:.9g}"])


# -- case runs ---------------------------------------------------------------------

@dataclass
class CaseRunOptions:
    """Model and sampling settings for one case (everything besides the optimizer)."""

    with_probes: bool = True
    widths: tuple[int, ...] = (2, 32, 32, 32, 1)
    sample_factor: float = 0.25
    batch: int | None = 128  # per interior region; None -> full sets
    delta_t_ref: float = 10.0
    h_ref: float = 1000.0
    energy_area: str = "per_pass"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


@dataclass
class TrialRecord:
    seed: int
    h_nn: float
    v_nn: float
    probes_k: dict[str, float]
    energy_residual: float
    delta_t_pipes: dict[str, float]
    final_loss: dict
    epochs: int
    warnings: list[str] = field(default_factory=list)


@dataclass
class CaseReport:
    case_id: str
    trials: list[TrialRecord]
    aggregates: dict[str, dict[str, float]]
    config: dict
    failures: list[dict] = field(default_factory=list)
    v_exp: float | None = None
    probes_exp_c: dict[str, float] = field(default_factory=dict)


def build_problem(case: CaseConfig, geom: RigGeometry, opts: CaseRunOptions) -> RigProblem:
    return RigProblem(geom, case, with_probes=opts.with_probes, delta_t_ref=opts.delta_t_ref,
                      h_ref=opts.h_ref, energy_area=opts.energy_area)


def build_model(problem: RigProblem, opts: CaseRunOptions, seed: int, counts: SampleCounts | None = None):
    """Collocation set, ensemble and compiled loss for one seed."""
    g, s = problem.geom, problem.scales
    counts = counts or SampleCounts.paper().scaled(opts.sample_factor)
    colloc = sample(g, counts, seed, s)
    boxes = {k: subdomain_box(g, k, s) for k in nw.SUBNET_IDS}
    ens = nw.init_ensemble(seed, opts.widths, boxes, problem.h_unit, problem.sigma)
    batch = None
    if opts.batch is not None:
        batch = {k: opts.batch for k in colloc.interior}
    return colloc, ens, RigLoss(problem, ens, colloc, batch)


def run_trial(case: CaseConfig, geom: RigGeometry, opts: CaseRunOptions, config: TrainConfig, seed: int,
              log_path=None, deterministic: bool = True):
    """Train one seed and return (TrialRecord, ensemble, history)."""
    problem = build_problem(case, geom, opts)
    colloc, ens, loss = build_model(problem, opts, seed)
    cfg = replace(config, seed=seed)
    rows = []

    def log(epoch, st, wall):
        rows.append(st.log_row(epoch, wall))

    try:
        ens, history, _ = train(ens, loss, cfg, callback=log, wall_clock=not deterministic)
    finally:
        if log_path is not None:
            write_training_log(rows, log_path)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", UnphysicalWarning)
        h = extract_h(ens, problem.scales)
        dts = pipe_excess(ens, problem, colloc.circ_inner)
        v = compute_velocity(h, case, dts.values(), problem.pipe_length)
    probes = probe_temperatures(ens, geom, problem.scales, [p.name for p in geom.probes])
    final = asdict(history[-1]) if history else {}
    rec = TrialRecord(seed, h, v, probes, energy_balance(ens, problem, colloc.circ_inner, h), dts, final,
                      len(history), [str(w.message) for w in caught])
    return rec, ens, history


def aggregate_trials(trials: list[TrialRecord]) -> dict[str, dict[str, float]]:
    out = {}
    if not trials:
        return out
    for key in ("h_nn", "v_nn", "energy_residual"):
        m, s = aggregate(getattr(t, key) for t in trials)
        out[key] = {"mean": m, "std": s}
    for name in trials[0].probes_k:
        m, s = aggregate(t.probes_k[name] - KELVIN for t in trials)
        out[f"{name}_c"] = {"mean": m, "std": s}
    return out


def run_case(case: CaseConfig, geom: RigGeometry | None = None, opts: CaseRunOptions | None = None,
             config: TrainConfig | None = None, n_trials: int = 3, out_dir=None,
             deterministic: bool = True):
    """Train ``n_trials`` seeds on a case and aggregate them into a CaseReport.

    With ``out_dir`` set, each trial's training log and the last trial's
    field grid are written there.  Returns (report, last ensemble).
    """
    geom = geom or default_rig()
    opts = opts or CaseRunOptions()
    config = config or TrainConfig()
    out = Path(out_dir) if out_dir is not None else None
    last = {}

    def one(seed):
        log_path = out / f"training_log_{case.case_id}_seed{seed}.csv" if out else None
        rec, ens, _ = run_trial(case, geom, opts, config, seed, log_path, deterministic)
        last["ens"] = ens
        return rec

    records, failures = multi_trial(one, config, n_trials)
    report = CaseReport(
        case.case_id, records, aggregate_trials(records),
        {"architecture": list(opts.widths), "options": opts.to_dict(), "train": config_to_dict(config),
         "seeds": [config.seed + i for i in range(n_trials)], "geometry_assumptions": list(geom.assumptions),
         "case": case_to_dict(case), "code_version": __version__},
        [{"seed": s, "kind": e.kind, "term": e.term, "message": str(e)} for s, e in failures],
        case.v_exp, dict(case.probes_c))
    if out is not None and "ens" in last:
        problem = build_problem(case, geom, opts)
        write_field_csv(field_rows(temperature_field(last["ens"], geom, problem.scales)),
                        out / f"field_{case.case_id}.csv")
    return report, last.get("ens")


# -- serialization -------------------------------------------------------------------

def report_to_dict(r: CaseReport) -> dict:
    return {"schema_version": SCHEMA_VERSION, "case_id": r.case_id,
            "trials": [asdict(t) for t in r.trials], "aggregates": r.aggregates, "config": r.config,
            "failures": r.failures, "v_exp": r.v_exp, "probes_exp_c": r.probes_exp_c}


def _clean(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.generic):
        return o.item()
    return o


def write_report_json(r: CaseReport, path) -> None:
    Path(path).write_text(json.dumps(_clean(report_to_dict(r)), indent=2, sort_keys=True))


SUMMARY_COLUMNS = (["schema_version", "case_id", "mode", "h_nn_mean", "h_nn_std", "v_nn_mean", "v_nn_std", "v_exp"]
                   + [f"{p}_{kind}" for p in PROBE_NAMES for kind in ("pred_c", "exp_c")])


def summary_row(r: CaseReport, mode: str = "") -> dict:
    a = r.aggregates
    row = {"schema_version": SCHEMA_VERSION, "case_id": r.case_id, "mode": mode,
           "h_nn_mean": a.get("h_nn", {}).get("mean"), "h_nn_std": a.get("h_nn", {}).get("std"),
           "v_nn_mean": a.get("v_nn", {}).get("mean"), "v_nn_std": a.get("v_nn", {}).get("std"),
           "v_exp": r.v_exp}
    for p in PROBE_NAMES:
        row[f"{p}_pred_c"] = a.get(f"{p}_c", {}).get("mean")
        row[f"{p}_exp_c"] = r.probes_exp_c.get(p)
    return row


def write_summary_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row[k]) for k in SUMMARY_COLUMNS})


def write_training_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(LOG_COLUMNS))
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


__all__ = [
    "CaseConfig", "CaseReport", "CaseRunOptions", "TrialRecord", "LossState", "UnphysicalWarning",
    "extract_h", "compute_velocity", "probe_temperatures", "energy_balance", "temperature_field",
    "run_trial", "run_case", "aggregate_trials", "report_to_dict", "write_report_json", "summary_row",
    "write_summary_csv", "write_training_log", "field_rows", "write_field_csv",
]
