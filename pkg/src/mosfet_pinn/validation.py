"""The three validation studies: intro 1-D heat equation, toy h sweep, convergence probe.

Each ``run_*`` function returns plain dictionaries; :func:`write_study`
turns them into a CSV table and a JSON manifest.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from . import autodiff as ad
from . import network as nw
from .errors import ConfigurationError, DivergenceError
from .oracle import ToyPlateProblem, toy_exact_temperature, toy_invert_h, toy_wall_flux
from .physics import CompiledLoss, _ms
from .training import OptimizerState, TrainConfig, config_to_dict, step_joint, train

STUDIES = ("intro1d", "toy_h_sweep", "convergence_probe")
SCHEMA_VERSION = 1


@dataclass
class ValidationSpec:
    study: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ConfigurationError(f"unknown study {self.study!r}; choose from {', '.join(STUDIES)}")


class FieldModel:
    """One network, optionally with a trainable log coefficient named ``log_h``."""

    def __init__(self, net, log_h: float | None = None, h_unit: float = 1.0):
        self.net = net
        self.log_h = log_h
        self.h_unit = h_unit

    @property
    def h_star(self) -> float | None:
        return None if self.log_h is None else self.h_unit * math.exp(self.log_h)

    def arrays(self) -> dict[str, np.ndarray]:
        out = self.net.named_arrays("net") if isinstance(self.net, nw.NetworkParams) else {}
        if self.log_h is not None:
            out["log_h"] = np.asarray(self.log_h)
        return out

    def assign(self, arrays) -> None:
        if isinstance(self.net, nw.NetworkParams):
            self.net.assign("net", arrays)
        if self.log_h is not None:
            self.log_h = float(arrays["log_h"])

    def predict(self, points) -> np.ndarray:
        return nw.field_predict(self.net, points)


def _lhs(n: int, d: int, seed: int) -> np.ndarray:
    return qmc.LatinHypercube(d=d, seed=np.random.default_rng(seed)).random(n)


# -- intro 1-D transient problem ------------------------------------------------------

def intro_exact(x, t):
    return np.exp(-t) * np.sin(np.pi * x)


def intro_source(x, t):
    """Source that makes exp(-t) sin(pi x) solve u_t = u_xx + f."""
    return (np.pi ** 2 - 1.0) * np.exp(-t) * np.sin(np.pi * x)


class IntroLoss(CompiledLoss):
    """u_t - u_xx - f on the interior, u(x, 0) = sin(pi x), u(0, t) = u(1, t) = 0.

    Network inputs are (x, t); the PDE, boundary and initial terms occupy the
    PDE, BC and IC slots of the seven-term layout.
    """

    def __init__(self, model: FieldModel, n_grid: int = 50, n_initial: int = 50, n_boundary: int = 50):
        super().__init__()
        g = (np.arange(n_grid) + 0.5) / n_grid
        X, T = np.meshgrid(g, g)
        interior = np.column_stack([X.ravel(), T.ravel()])
        xi = np.linspace(0.0, 1.0, n_initial)
        tb = np.linspace(0.0, 1.0, n_boundary)
        net = model.net
        f = nw.field_graph(self.tape, "net", net, interior, ("y", "xx"))
        src = intro_source(interior[:, 0], interior[:, 1])[:, None]
        self.terms[0] = _ms(f["y"] - f["xx"] - src)
        left = nw.field_graph(self.tape, "net", net, np.column_stack([np.zeros_like(tb), tb]), ())
        right = nw.field_graph(self.tape, "net", net, np.column_stack([np.ones_like(tb), tb]), ())
        self.terms[1] = _ms(left["u"]) + _ms(right["u"])
        init = nw.field_graph(self.tape, "net", net, np.column_stack([xi, np.zeros_like(xi)]), ())
        self.terms[2] = _ms(init["u"] - np.sin(np.pi * xi)[:, None])
        self.finish()


def intro_mse(predict, n: int = 101) -> tuple[float, np.ndarray]:
    g = np.linspace(0.0, 1.0, n)
    X, T = np.meshgrid(g, g)
    pred = predict(np.column_stack([X.ravel(), T.ravel()])).reshape(X.shape)
    return float(np.mean((pred - intro_exact(X, T)) ** 2)), pred


INTRO_DEFAULTS = dict(widths=(2, 20, 20, 20, 1), epochs=18000, lr=2e-3, lr_decay=0.5, decay_every=3600,
                      n_grid=50, n_initial=50, n_boundary=50)


def run_intro1d(spec: ValidationSpec, model: FieldModel | None = None) -> dict:
    """Train the 1-D transient PINN and score it on a 101 x 101 grid.

    Passing an analytic ``model`` skips training and scores it directly.
    """
    p = {**INTRO_DEFAULTS, **spec.params}
    history = []
    if model is None:
        net = nw.init(tuple(p["widths"]), spec.seed, ((0.0, 1.0), (0.0, 1.0)))
        model = FieldModel(net)
        loss = IntroLoss(model, p["n_grid"], p["n_initial"], p["n_boundary"])
        cfg = TrainConfig(max_epochs=p["epochs"], lr_params=p["lr"], seed=spec.seed, adaptive_lambdas=False,
                          lr_decay=p["lr_decay"], decay_every=p["decay_every"])
        model, history, _ = train(model, loss, cfg, wall_clock=False)
    mse, grid = intro_mse(model.predict)
    init_err = float(np.max(np.abs(grid[0] - np.sin(np.pi * np.linspace(0, 1, 101)))))
    return {"study": "intro1d", "mse": mse, "initial_max_abs_error": init_err,
            "final_loss": history[-1].total if history else 0.0, "epochs": len(history),
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in p.items()},
            "seed": spec.seed, "field": grid,
            "rows": [{"mse": mse, "initial_max_abs_error": init_err, "epochs": len(history)}]}


# -- toy plate with unknown h ------------------------------------------------------------

class ToyLoss(CompiledLoss):
    """Toy plate in xi = x/W, eta = y/H and theta = (T - T_inf)/(T_0 - T_inf).

    PDE theta_xixi + (W/H)^2 theta_etaeta = 0, theta(0) = 1, insulated top and
    bottom, Robin (theta_xi + Bi theta)/(1 + Bi) = 0 at xi = 1 with Bi = h W / k trainable
    through log_h.  The uniqueness term pins the heat flux leaving at xi = 1
    to its known value q*, the analogue of the rig's energy balance.
    """

    def __init__(self, toy: ToyPlateProblem, model: FieldModel, n_interior: int = 1000, n_edge: int = 100,
                 seed: int = 0, uniqueness: bool = True, bi_unit: float = 1.0):
        super().__init__()
        net = model.net
        aspect = (toy.W / toy.H) ** 2
        inner = _lhs(n_interior, 2, seed)
        e = np.sort(_lhs(n_edge, 1, seed + 1)[:, 0])
        zeros, ones = np.zeros_like(e), np.ones_like(e)
        f = nw.field_graph(self.tape, "net", net, inner, ("xx", "yy"))
        self.terms[0] = _ms(f["xx"] + f["yy"] * aspect)
        left = nw.field_graph(self.tape, "net", net, np.column_stack([zeros, e]), ())
        bot = nw.field_graph(self.tape, "net", net, np.column_stack([e, zeros]), ("y",))
        top = nw.field_graph(self.tape, "net", net, np.column_stack([e, ones]), ("y",))
        self.terms[1] = _ms(left["u"] - 1.0) + _ms(bot["y"]) + _ms(top["y"])
        right = nw.field_graph(self.tape, "net", net, np.column_stack([ones, e]), ("x",))
        bi = ad.exp(self.tape.var("log_h")) * bi_unit
        # scaled by 1/(1 + Bi): same zero set, but stays order one as Bi grows
        self.terms[4] = _ms((right["x"] + right["u"] * bi) / (bi + 1.0))
        if uniqueness:
            q_star = toy_wall_flux(toy) * toy.W / (toy.k * (toy.T_0 - toy.T_inf))
            self.terms[5] = _ms(right["x"] + q_star)
        self.finish()


TOY_DEFAULTS = dict(h_values=(10.0, 100.0, 1000.0, 10000.0), widths=(2, 20, 20, 1), epochs=10000, lr=2e-3,
                    lr_h=2e-2, lr_decay=0.5, decay_every=2500, n_interior=1000, n_edge=100, W=0.1, H=0.1,
                    k=20.0, T_0=100.0, T_inf=25.0, h_init=200.0, ablation=True,
                    adaptive_lambdas=False)


def _toy_problem(p, h) -> ToyPlateProblem:
    return ToyPlateProblem(p["W"], p["H"], p["k"], p["T_0"], p["T_inf"], float(h))


def train_toy(toy: ToyPlateProblem, p: dict, seed: int, uniqueness: bool = True, epochs: int | None = None,
              model: FieldModel | None = None):
    """Train one toy run; returns (model, history)."""
    if model is None:
        net = nw.init(tuple(p["widths"]), seed, ((0.0, 1.0), (0.0, 1.0)))
        model = FieldModel(net, 0.0, p["h_init"] * toy.W / toy.k)
    loss = ToyLoss(toy, model, p["n_interior"], p["n_edge"], seed, uniqueness, model.h_unit)
    cfg = TrainConfig(max_epochs=p["epochs"] if epochs is None else epochs, lr_params=p["lr"], lr_h=p["lr_h"],
                      seed=seed, adaptive_lambdas=p["adaptive_lambdas"], lr_decay=p["lr_decay"],
                    decay_every=p["decay_every"])
    model, history, _ = train(model, loss, cfg, wall_clock=False)
    return model, history


def toy_field_error(toy: ToyPlateProblem, predict, n: int = 51) -> float:
    """RMS of the temperature error (degrees) over an n x n grid."""
    g = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(g, g)
    theta = predict(np.column_stack([X.ravel(), Y.ravel()]))
    T = toy.T_inf + (toy.T_0 - toy.T_inf) * theta
    exact = toy_exact_temperature(toy, X.ravel() * toy.W)
    return float(np.sqrt(np.mean((T - exact) ** 2)))


def log_log_r2(true, pred) -> float:
    x, y = np.log10(np.asarray(true, float)), np.log10(np.asarray(pred, float))
    slope, icpt = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + icpt)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - ss_res / ss_tot


def run_toy_h_sweep(spec: ValidationSpec) -> dict:
    """Recover h for each true value, plus an ablation without the uniqueness term."""
    p = {**TOY_DEFAULTS, **spec.params}
    rows = []
    for h_true in p["h_values"]:
        toy = _toy_problem(p, h_true)
        row = {"h_true": float(h_true), "mode": "with_uniqueness"}
        try:
            model, history = train_toy(toy, p, spec.seed, True)
            h_pred = model.h_star * toy.k / toy.W
            theta_w = float(np.mean(model.predict(np.column_stack([np.ones(11), np.linspace(0, 1, 11)]))))
            T_w = toy.T_inf + (toy.T_0 - toy.T_inf) * theta_w
            try:
                h_field = toy_invert_h(toy, T_W=T_w)
            except Exception:
                h_field = float("nan")
            row.update(h_pred=h_pred, pct_error=abs(h_pred - h_true) / h_true * 100.0, h_from_field=h_field,
                       field_rmse=toy_field_error(toy, model.predict), final_loss=history[-1].total,
                       epochs=len(history), diverged=False)
        except DivergenceError as e:
            row.update(h_pred=float("nan"), pct_error=float("nan"), diverged=True, message=str(e))
        rows.append(row)
    ok = [r for r in rows if not r.get("diverged")]
    r2 = log_log_r2([r["h_true"] for r in ok], [r["h_pred"] for r in ok]) if len(ok) >= 2 else float("nan")
    ablation = []
    if p["ablation"]:
        for h_true in p["h_values"]:
            toy = _toy_problem(p, h_true)
            try:
                model, history = train_toy(toy, p, spec.seed, False)
                h_pred = model.h_star * toy.k / toy.W
                ablation.append({"h_true": float(h_true), "mode": "without_uniqueness", "h_pred": h_pred,
                                 "pct_error": abs(h_pred - h_true) / h_true * 100.0,
                                 "final_loss": history[-1].total, "epochs": len(history), "diverged": False})
            except DivergenceError as e:
                ablation.append({"h_true": float(h_true), "mode": "without_uniqueness", "diverged": True,
                                 "message": str(e)})
    abl_ok = [a for a in ablation if not a.get("diverged")]
    non_unique = bool(abl_ok) and max(a["pct_error"] for a in abl_ok) > 5.0
    return {"study": "toy_h_sweep", "rows": rows + ablation, "r2_loglog": r2,
            "ablation_non_unique": non_unique, "seed": spec.seed,
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in p.items()}}


# -- convergence probe --------------------------------------------------------------------

PROBE_DEFAULTS = dict(TOY_DEFAULTS, h_true=100.0, epsilons=(1e-2, 1e-3, 1e-4, 1e-5), epochs=20000,
                      decay_every=4000)


def run_convergence_probe(spec: ValidationSpec, model: FieldModel | None = None) -> dict:
    """Train the toy problem once and record the field error when the loss first
    drops below each threshold (a run stopped at that threshold would end there)."""
    p = {**PROBE_DEFAULTS, **spec.params}
    toy = _toy_problem(p, p["h_true"])
    eps = sorted((float(e) for e in p["epsilons"]), reverse=True)
    if model is not None and not isinstance(model.net, nw.NetworkParams):
        err = toy_field_error(toy, model.predict)
        rows = [{"epsilon": e, "achieved": True, "epoch": 0, "loss": 0.0, "field_l2_error": err} for e in eps]
        return {"study": "convergence_probe", "rows": rows, "monotone": True, "seed": spec.seed, "params": {}}
    net = nw.init(tuple(p["widths"]), spec.seed, ((0.0, 1.0), (0.0, 1.0)))
    model = FieldModel(net, 0.0, p["h_init"] * toy.W / toy.k)
    loss = ToyLoss(toy, model, p["n_interior"], p["n_edge"], spec.seed, True, model.h_unit)
    cfg = TrainConfig(max_epochs=p["epochs"], lr_params=p["lr"], lr_h=p["lr_h"], seed=spec.seed,
                      adaptive_lambdas=False)
    state = OptimizerState.fresh(cfg)
    hits: dict[float, dict] = {}
    for epoch in range(cfg.max_epochs):
        before = FieldModel(model.net.copy(), model.log_h, model.h_unit)
        lr_scale = p["lr_decay"] ** (epoch // p["decay_every"])
        model, st = step_joint(model, loss, cfg, state, None, lr_scale)
        for e in eps:
            if e not in hits and st.total <= e:
                hits[e] = {"epoch": epoch, "loss": st.total, "field_l2_error": toy_field_error(toy, before.predict),
                           "h_pred": before.h_star * toy.k / toy.W}
        if len(hits) == len(eps):
            break
    rows = []
    for e in eps:
        if e in hits:
            rows.append({"epsilon": e, "achieved": True, **hits[e]})
        else:
            rows.append({"epsilon": e, "achieved": False, "epoch": None, "loss": None, "field_l2_error": None})
    errs = [r["field_l2_error"] for r in rows if r["achieved"]]
    monotone = all(b <= a for a, b in zip(errs, errs[1:]))
    return {"study": "convergence_probe", "rows": rows, "monotone": monotone, "seed": spec.seed,
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in p.items()},
            "train": config_to_dict(cfg)}


def run_study(spec: ValidationSpec) -> dict:
    return {"intro1d": run_intro1d, "toy_h_sweep": run_toy_h_sweep,
            "convergence_probe": run_convergence_probe}[spec.study](spec)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items() if not isinstance(v, np.ndarray)}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, np.generic):
        return o.item()
    return o


def write_study(result: dict, out_dir) -> tuple[Path, Path]:
    """Write ``<study>.csv`` (one row per entry) and ``<study>_manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = result["rows"]
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    csv_path = out / f"{result['study']}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["schema_version"] + cols)
        w.writeheader()
        for r in rows:
            w.writerow({"schema_version": SCHEMA_VERSION,
                        **{k: ("" if r.get(k) is None else (repr(r[k]) if isinstance(r[k], float) else r[k]))
                           for k in cols}})
    manifest = {k: v for k, v in result.items() if k not in ("rows", "field")}
    manifest["schema_version"] = SCHEMA_VERSION
    json_path = out / f"{result['study']}_manifest.json"
    json_path.write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True))
    return csv_path, json_path


__all__ = ["ValidationSpec", "FieldModel", "IntroLoss", "ToyLoss", "run_intro1d", "run_toy_h_sweep",
           "run_convergence_probe", "run_study", "write_study", "log_log_r2", "intro_exact", "intro_source"]
