"""Command-line entry point.

Commands: ``validate`` (validation studies), ``train-case`` (one case, several
seeds), ``sweep`` (several cases) and ``fd-check`` (finite-volume reference).
Every flag can also be set through an environment variable named
``MOSFET_PINN_<FLAG>`` (upper case, dashes as underscores); flags win.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .case import BUNDLED_CASES, CaseConfig, parse_case_file
from .domain import default_rig, load_geometry
from .errors import ConfigurationError, PinnError
from .oracle import fd_field_rows, fd_pipe_max, fd_probe, fd_solve
from .postprocess import (CaseRunOptions, run_case, summary_row, write_field_csv,
                          write_report_json, write_summary_csv)
from .training import TrainConfig, config_from_dict, config_to_dict
from .validation import STUDIES, ValidationSpec, run_study, write_study

ENV_PREFIX = "MOSFET_PINN_"
SCHEMA_VERSION = 1
COMMANDS = ("validate", "train-case", "sweep", "fd-check")

# desk-scale defaults for the rig (one CPU, about half an hour per seed)
RIG_DEFAULTS = dict(max_epochs=15000, lr_params=2e-3, lr_h=1e-2, lr_lambda=0.1, lr_decay=0.5, decay_every=4000,
                    sweeps=2, epochs_per_layer=1000)


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def _env_bool(name: str, default: bool) -> bool:
    v = _env(name)
    if v is None:
        return default
    return v.strip().lower() in ("1", "true", "yes", "on")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mosfet-pinn", description="PINN inference of coolant h and velocity.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")

    def common(p):
        p.add_argument("--out", default=_env("out", "runs"), help="output directory")
        p.add_argument("--seed", type=int, default=int(_env("seed", 0)))
        p.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                       default=_env_bool("deterministic", True),
                       help="single-threaded numerics and no wall-clock fields (default on)")

    def rig(p):
        p.add_argument("--geometry", default=_env("geometry"), help="geometry JSON (default: built-in rig)")
        p.add_argument("--trials", type=int, default=int(_env("trials", 3)))
        p.add_argument("--epochs", type=int, default=_env("epochs"))
        p.add_argument("--schedule", choices=("joint", "sequential"), default=_env("schedule", "joint"))
        p.add_argument("--with-probes", dest="with_probes", action=argparse.BooleanOptionalAction,
                       default=_env_bool("with_probes", True))
        p.add_argument("--compare", action="store_true", default=_env_bool("compare", False),
                       help="run without and with probe data and write a paired table")
        p.add_argument("--sample-factor", type=float, default=float(_env("sample_factor", 0.25)))
        p.add_argument("--widths", default=_env("widths", "2,32,32,32,1"))
        p.add_argument("--batch", type=int, default=int(_env("batch", 128)), help="0 uses full point sets")
        p.add_argument("--train-config", default=_env("train_config"), help="JSON file of TrainConfig overrides")

    p = sub.add_parser("validate", help="run a validation study")
    p.add_argument("--study", choices=STUDIES, default=_env("study", "intro1d"))
    p.add_argument("--epochs", type=int, default=_env("epochs"))
    common(p)

    p = sub.add_parser("train-case", help="train one case over several seeds")
    p.add_argument("--case", default=_env("case", "A13_4"), help="case JSON path or bundled case id")
    common(p)
    rig(p)

    p = sub.add_parser("sweep", help="train several cases")
    p.add_argument("--case", nargs="+", default=(_env("case").split(",") if _env("case") else list(BUNDLED_CASES)))
    common(p)
    rig(p)

    p = sub.add_parser("fd-check", help="finite-volume reference solution for a case")
    p.add_argument("--case", default=_env("case", "A13_4"))
    p.add_argument("--geometry", default=_env("geometry"))
    p.add_argument("--h", type=float, default=float(_env("h", 1000.0)), help="film coefficient W/m^2K")
    p.add_argument("--nx", type=int, default=int(_env("nx", 512)))
    p.add_argument("--ny", type=int, default=int(_env("ny", 256)))
    common(p)
    return ap


@contextlib.contextmanager
def _threads(deterministic: bool):
    if not deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


def _train_config(args) -> TrainConfig:
    d = dict(RIG_DEFAULTS)
    if args.train_config:
        d.update(json.loads(Path(args.train_config).read_text()))
    if args.epochs is not None:
        d["max_epochs"] = int(args.epochs)
    d["schedule"] = args.schedule
    d["seed"] = args.seed
    return config_from_dict(d)


def _run_options(args, with_probes: bool) -> CaseRunOptions:
    try:
        widths = tuple(int(w) for w in str(args.widths).split(","))
    except ValueError:
        raise ConfigurationError(f"--widths must be comma-separated integers, got {args.widths!r}") from None
    return CaseRunOptions(with_probes=with_probes, widths=widths, sample_factor=args.sample_factor,
                          batch=args.batch or None)


def _geometry(args):
    return load_geometry(args.geometry) if args.geometry else default_rig()


def compare_modes(case: CaseConfig, config: TrainConfig, opts: CaseRunOptions, geom=None, n_trials: int = 3,
                  out_dir=None, deterministic: bool = True):
    """Run a case without and with probe data; returns (reports by mode, paired rows)."""
    if not case.probes_c:
        raise ConfigurationError(f"case {case.case_id} has no probe data to compare against")
    reports, rows = {}, []
    for mode, flag in (("no_data", False), ("with_data", True)):
        sub = Path(out_dir) / mode if out_dir is not None else None
        if sub is not None:
            sub.mkdir(parents=True, exist_ok=True)
        rep, _ = run_case(case, geom, replace(opts, with_probes=flag), config, n_trials, sub, deterministic)
        reports[mode] = rep
        rows.append(summary_row(rep, mode))
    return reports, rows


def _write_manifest(out: Path, args, extra: dict) -> None:
    m = {"schema_version": SCHEMA_VERSION, "code_version": __version__, "command": args.command,
         "args": {k: v for k, v in vars(args).items() if k not in ("command", "out")}}
    m.update(extra)
    (out / "manifest.json").write_text(json.dumps(m, indent=2, sort_keys=True, default=str))


def _cmd_validate(args, out: Path) -> int:
    params = {}
    if args.epochs is not None:
        params["epochs"] = int(args.epochs)
    spec = ValidationSpec(args.study, params, args.seed)
    result = run_study(spec)
    write_study(result, out)
    _write_manifest(out, args, {"study": asdict(spec)})
    if args.study == "intro1d":
        print(f"intro1d mse = {result['mse']:.3e}")
    elif args.study == "toy_h_sweep":
        for r in result["rows"]:
            print(f"{r['mode']:>20s} h_true={r['h_true']:<8g} h_pred={r.get('h_pred', float('nan')):.6g}")
        print(f"log-log R^2 = {result['r2_loglog']:.6f}")
    else:
        for r in result["rows"]:
            print(f"eps={r['epsilon']:.0e} achieved={r['achieved']} err={r['field_l2_error']}")
    return 0


def _cmd_cases(args, out: Path, case_refs) -> int:
    geom = _geometry(args)
    cfg = _train_config(args)
    rows = []
    reports = {}
    for ref in case_refs:
        case = parse_case_file(ref)
        case_out = out / case.case_id
        case_out.mkdir(parents=True, exist_ok=True)
        if args.compare:
            reps, pair = compare_modes(case, cfg, _run_options(args, True), geom, args.trials, case_out,
                                       args.deterministic)
            for mode, rep in reps.items():
                write_report_json(rep, case_out / mode / "report.json")
                reports[f"{case.case_id}/{mode}"] = rep
            write_summary_csv(pair, case_out / "paired.csv")
            rows += pair
        else:
            rep, _ = run_case(case, geom, _run_options(args, args.with_probes), cfg, args.trials, case_out,
                              args.deterministic)
            write_report_json(rep, case_out / "report.json")
            reports[case.case_id] = rep
            rows.append(summary_row(rep, "with_data" if args.with_probes else "no_data"))
    write_summary_csv(rows, out / "summary.csv")
    _write_manifest(out, args, {"train_config": config_to_dict(cfg),
                                "options": _run_options(args, args.with_probes).to_dict(),
                                "cases": list(case_refs)})
    for key, rep in reports.items():
        a = rep.aggregates
        if "v_nn" in a:
            print(f"{key}: h = {a['h_nn']['mean']:.2f} +/- {a['h_nn']['std']:.2f} W/m^2K, "
                  f"v = {a['v_nn']['mean']:.4f} m/s (exp {rep.v_exp})")
        for f in rep.failures:
            print(f"{key}: seed {f['seed']} diverged ({f['message']})", file=sys.stderr)
    return 0 if all(rep.trials for rep in reports.values()) else 3


def _cmd_fd(args, out: Path) -> int:
    geom = _geometry(args)
    case = parse_case_file(args.case)
    sol = fd_solve(geom, case, args.h, (args.nx, args.ny))
    rows = fd_field_rows(sol, geom)
    write_field_csv(rows, out / f"fd_field_{case.case_id}.csv")
    probes = {p.name: float(fd_probe(sol, [(p.x, p.y)])[0] - 273.15) for p in geom.probes}
    result = {"schema_version": SCHEMA_VERSION, "case_id": case.case_id, "h": args.h, "grid": [args.nx, args.ny],
              "heat_in_w_per_m": sol.heat_in, "heat_out_w_per_m": sol.heat_out,
              "energy_imbalance": sol.energy_imbalance, "residual": sol.residual, "probes_c": probes,
              "pipe_max_c": {k: v - 273.15 for k, v in fd_pipe_max(sol, geom).items()}}
    (out / f"fd_{case.case_id}.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    _write_manifest(out, args, {})
    print(f"{case.case_id} h={args.h:g}: energy imbalance {sol.energy_imbalance:.2e}; "
          + ", ".join(f"{k} {v:.2f} C" for k, v in probes.items()))
    return 0


def _error_record(out: Path | None, e: BaseException) -> None:
    if out is None:
        return
    rec = {"schema_version": SCHEMA_VERSION, "kind": getattr(e, "kind", type(e).__name__),
           "message": str(e)}
    with contextlib.suppress(OSError):
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(json.dumps(rec, indent=2))


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command is None:
        ap.print_usage(sys.stderr)
        return 2
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with _threads(args.deterministic):
            if args.command == "validate":
                return _cmd_validate(args, out)
            if args.command == "train-case":
                return _cmd_cases(args, out, [args.case])
            if args.command == "sweep":
                return _cmd_cases(args, out, list(args.case))
            return _cmd_fd(args, out)
    except PinnError as e:
        print(f"mosfet-pinn: {e.kind}: {e}", file=sys.stderr)
        _error_record(out, e)
        return 2
    except (OSError, ValueError, json.JSONDecodeError) as e:
        print(f"mosfet-pinn: error: {e}", file=sys.stderr)
        _error_record(out, e)
        return 2


def digest_tree(root) -> dict[str, str]:
    """SHA-256 of every file under ``root`` keyed by relative path (for reproducibility checks)."""
    root = Path(root)
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


if __name__ == "__main__":
    sys.exit(main())
