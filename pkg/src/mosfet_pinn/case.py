"""Experimental case configuration and case files.

Case files are JSON with explicit units in field names; temperatures are in
degrees Celsius on disk and converted to kelvin where a scale is needed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import SchemaError
from .domain import KELVIN, PROBE_NAMES

SCHEMA_VERSION = 1
BUNDLED_CASES = ("A13_4", "A12_2", "A13_7", "A11_1", "A14_2", "A13_3")
LPM_TO_M3S = 1.0 / 6.0e4

_REQUIRED = ("case_id", "power_w", "t_in_c", "t_out_c", "rho_kg_m3", "c_p_j_kgk", "r_pipe_m")


@dataclass
class CaseConfig:
    case_id: str
    power_w: float
    t_in_c: float
    t_out_c: float
    rho: float = 999.1
    c_p: float = 4188.5
    r_pipe: float = 0.005
    flow_rate_lpm: float | None = None
    pipe_length: float | None = None  # None -> geometry value
    A_1: float | None = None
    A_2: float | None = None
    probes_c: dict[str, float] = field(default_factory=dict)  # experimental readings
    training_probes: tuple[str, ...] = ("Face", "Side")
    ambient_c: float | None = None  # recorded only; no boundary uses it
    notes: tuple[str, ...] = ()
    geometry: str | None = None  # path of a geometry file, None -> default rig

    def __post_init__(self):
        validate_case(self)

    @property
    def t_in_k(self) -> float:
        return self.t_in_c + KELVIN

    @property
    def t_out_k(self) -> float:
        return self.t_out_c + KELVIN

    @property
    def t_w_k(self) -> float:
        return 0.5 * (self.t_in_k + self.t_out_k)

    @property
    def delta_t2(self) -> float:
        return self.t_out_c - self.t_in_c

    def inner_area(self, pipe_length: float) -> float:
        """A_1: total inner surface of the pipe in contact with the plate."""
        return self.A_1 if self.A_1 is not None else 2 * math.pi * self.r_pipe * pipe_length

    @property
    def flow_area(self) -> float:
        """A_2: coolant flow cross-section."""
        return self.A_2 if self.A_2 is not None else math.pi * self.r_pipe ** 2

    @property
    def v_exp(self) -> float | None:
        if self.flow_rate_lpm is None:
            return None
        return self.flow_rate_lpm * LPM_TO_M3S / self.flow_area


def validate_case(c: CaseConfig) -> None:
    if not c.t_out_c > c.t_in_c:
        raise SchemaError(f"case {c.case_id}: t_out ({c.t_out_c}) must exceed t_in ({c.t_in_c})")
    if not c.power_w > 0:
        raise SchemaError(f"case {c.case_id}: power must be positive")
    if not (c.rho > 0 and c.c_p > 0 and c.r_pipe > 0):
        raise SchemaError(f"case {c.case_id}: rho, c_p and r_pipe must be positive")
    for k in c.probes_c:
        if k not in PROBE_NAMES:
            raise SchemaError(f"case {c.case_id}: unknown probe {k!r}")
    for k in c.training_probes:
        if k not in PROBE_NAMES:
            raise SchemaError(f"case {c.case_id}: unknown training probe {k!r}")


def case_to_dict(c: CaseConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "case_id": c.case_id,
        "power_w": c.power_w,
        "t_in_c": c.t_in_c,
        "t_out_c": c.t_out_c,
        "rho_kg_m3": c.rho,
        "c_p_j_kgk": c.c_p,
        "r_pipe_m": c.r_pipe,
        "flow_rate_lpm": c.flow_rate_lpm,
        "pipe_length_m": c.pipe_length,
        "A_1_m2": c.A_1,
        "A_2_m2": c.A_2,
        "probes_c": dict(c.probes_c),
        "training_probes": list(c.training_probes),
        "ambient_c": c.ambient_c,
        "notes": list(c.notes),
        "geometry": c.geometry,
    }


def case_from_dict(d: dict) -> CaseConfig:
    if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise SchemaError(f"unsupported case schema_version {d.get('schema_version')!r}")
    for k in _REQUIRED:
        if k not in d:
            raise SchemaError(f"case file missing field {k!r}")
    try:
        return CaseConfig(
            case_id=str(d["case_id"]),
            power_w=float(d["power_w"]),
            t_in_c=float(d["t_in_c"]),
            t_out_c=float(d["t_out_c"]),
            rho=float(d["rho_kg_m3"]),
            c_p=float(d["c_p_j_kgk"]),
            r_pipe=float(d["r_pipe_m"]),
            flow_rate_lpm=None if d.get("flow_rate_lpm") is None else float(d["flow_rate_lpm"]),
            pipe_length=None if d.get("pipe_length_m") is None else float(d["pipe_length_m"]),
            A_1=None if d.get("A_1_m2") is None else float(d["A_1_m2"]),
            A_2=None if d.get("A_2_m2") is None else float(d["A_2_m2"]),
            probes_c={k: float(v) for k, v in (d.get("probes_c") or {}).items()},
            training_probes=tuple(d.get("training_probes", ("Face", "Side"))),
            ambient_c=None if d.get("ambient_c") is None else float(d["ambient_c"]),
            notes=tuple(d.get("notes", ())),
            geometry=d.get("geometry"),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, SchemaError):
            raise
        raise SchemaError(f"malformed case file: {e}") from None


def parse_case_file(path) -> CaseConfig:
    """Parse a case file, or a bundled case when ``path`` is a bundled case id."""
    if str(path) in BUNDLED_CASES and not Path(str(path)).exists():
        return bundled_case(str(path))
    p = Path(path)
    try:
        d = json.loads(p.read_text())
    except FileNotFoundError:
        raise SchemaError(f"case file {str(p)!r} does not exist") from None
    except json.JSONDecodeError as e:
        raise SchemaError(f"case file {str(p)!r} is not valid JSON: {e}") from None
    return case_from_dict(d)


def write_case_file(c: CaseConfig, path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(c), indent=2))


def bundled_case(case_id: str) -> CaseConfig:
    if case_id not in BUNDLED_CASES:
        raise SchemaError(f"no bundled case {case_id!r}; available: {', '.join(BUNDLED_CASES)}")
    text = resources.files("mosfet_pinn").joinpath("data", "cases", f"{case_id}.json").read_text()
    return case_from_dict(json.loads(text))
