"""Fully connected tanh networks mapping (x*, y*) to u*, recorded on a tape.

Each subdomain gets its own :class:`NetworkParams`.  Derivatives of the
output with respect to the inputs (``u_x, u_y, u_xx, u_yy``) are propagated
layer by layer as extra tape nodes, so the parameter gradient of any loss that
uses them is a single reverse sweep of the same tape.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, SchemaError

CHECKPOINT_VERSION = 1
DEFAULT_WIDTHS = (2, 64, 64, 64, 64, 1)
SUBNET_IDS = ("layer0", "layer1", "layer2", "layer3", "layer4", "pipes")


@dataclass
class NetworkParams:
    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    seed: int | None = None
    # fixed affine map applied to inputs: (p - input_shift) * input_scale
    input_shift: np.ndarray = field(default_factory=lambda: np.zeros(2))
    input_scale: np.ndarray = field(default_factory=lambda: np.ones(2))
    # fixed multiplier on the last layer's output
    output_scale: float = 1.0

    def __post_init__(self):
        self.input_shift = np.asarray(self.input_shift, dtype=float)
        self.input_scale = np.asarray(self.input_scale, dtype=float)
        validate(self)

    @property
    def n_params(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def copy(self) -> "NetworkParams":
        return NetworkParams(list(self.widths), [w.copy() for w in self.weights],
                             [b.copy() for b in self.biases], self.activation, self.seed,
                             self.input_shift.copy(), self.input_scale.copy(), self.output_scale)

    def named_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.W{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out

    def assign(self, prefix: str, arrays: dict[str, np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i] = np.asarray(arrays[f"{prefix}.W{i}"], dtype=float)
            self.biases[i] = np.asarray(arrays[f"{prefix}.b{i}"], dtype=float)


def validate(params: NetworkParams) -> None:
    w = list(params.widths)
    if len(w) < 2 or w[0] != 2 or w[-1] != 1:
        raise ConfigurationError(f"widths must start at 2 and end at 1, got {w}")
    if any(int(n) <= 0 for n in w):
        raise ConfigurationError(f"widths must be positive, got {w}")
    if params.activation != "tanh":
        raise ConfigurationError(f"unsupported activation {params.activation!r}")
    if len(params.weights) != len(w) - 1 or len(params.biases) != len(w) - 1:
        raise ConfigurationError("number of weight/bias arrays does not match widths")
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        if np.shape(W) != (w[i + 1], w[i]):
            raise ConfigurationError(f"weight {i} has shape {np.shape(W)}, expected {(w[i + 1], w[i])}")
        if np.shape(b) != (w[i + 1],):
            raise ConfigurationError(f"bias {i} has shape {np.shape(b)}, expected {(w[i + 1],)}")


def init(widths, seed: int, input_box=None, output_scale: float = 1.0) -> NetworkParams:
    """Glorot-uniform weights and zero biases.

    ``input_box = ((x0, x1), (y0, y1))`` sets the fixed input map so that the
    box is sent onto [-1, 1]^2.
    """
    widths = [int(n) for n in widths]
    if any(n <= 0 for n in widths):
        raise ConfigurationError(f"widths must be positive, got {widths}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    shift, scale = np.zeros(2), np.ones(2)
    if input_box is not None:
        (x0, x1), (y0, y1) = input_box
        shift = np.array([(x0 + x1) / 2, (y0 + y1) / 2])
        scale = np.array([2.0 / (x1 - x0), 2.0 / (y1 - y0)])
    return NetworkParams(widths, weights, biases, "tanh", seed, shift, scale, float(output_scale))


def predict(params: NetworkParams, points) -> np.ndarray:
    """Vectorized u* at an (N, 2) array of dimensionless points."""
    a = (np.atleast_2d(np.asarray(points, dtype=float)) - params.input_shift) * params.input_scale
    n = len(params.weights)
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ W.T + b
        if i < n - 1:
            a = np.tanh(a)
    return a[:, 0] * params.output_scale


def graph(tape: ad.Tape, prefix: str, params: NetworkParams, points, derivs=("x", "y", "xx", "yy"),
          constant_params: bool = False) -> dict[str, ad.Var]:
    """Record u and the requested input derivatives on ``tape``.

    ``points`` is an (N, 2) array (embedded as a constant) or a tape Var.
    Weight and bias nodes are tape inputs named ``{prefix}.W{i}`` / ``{prefix}.b{i}``
    unless ``constant_params`` is set.  Returns ``{"u": ..., "x": ..., ...}``
    with every value shaped (N, 1).
    """
    # sorted, not set order: node order fixes the floating-point summation order
    want = sorted(set(derivs))
    if not set(want) <= {"x", "y", "xx", "yy"}:
        raise ConfigurationError(f"unknown derivative request {derivs}")
    X = points if isinstance(points, ad.Var) else tape.constant(np.atleast_2d(np.asarray(points, dtype=float)))
    Xn = (X - params.input_shift) * params.input_scale
    first = sorted({d for d in want if len(d) == 1} | {d[0] for d in want if len(d) == 2})
    n = len(params.weights)
    a = Xn
    da: dict[str, ad.Var] = {}
    dda: dict[str, ad.Var] = {}
    for i in range(n):
        if constant_params:
            W, b = tape.constant(params.weights[i]), tape.constant(params.biases[i])
        else:
            W, b = tape.var(f"{prefix}.W{i}"), tape.var(f"{prefix}.b{i}")
        Wt = W.T
        z = a @ Wt + b
        if i == 0:
            dz = {d: ad.take(Wt, [0 if d == "x" else 1]) * float(params.input_scale[0 if d == "x" else 1])
                  for d in first}
            ddz: dict[str, ad.Var] = {}
        else:
            dz = {d: da[d] @ Wt for d in first}
            ddz = {d: dda[d] @ Wt for d in dda}
        if i == n - 1:
            a, da, dda = z, dz, ddz
            break
        a = ad.tanh(z)
        s = 1.0 - a * a
        da = {d: s * dz[d] for d in first}
        new_dd = {}
        for d in first:
            if d + d not in want:
                continue
            term = -2.0 * a * s * (dz[d] * dz[d])
            new_dd[d] = (s * ddz[d] + term) if d in ddz else term
        dda = new_dd
    c = params.output_scale
    out = {"u": a * c if c != 1.0 else a}
    for d in want:
        v = da[d] if len(d) == 1 else (dda[d[0]] if d[0] in dda else a * 0.0)
        out[d] = v * c if c != 1.0 else v
    return out


class AnalyticField:
    """Closed-form stand-in for a subnet, used for manufactured solutions.

    ``fn(X)`` takes an (N, 2) array and returns a dict with ``u`` and any of
    ``x, y, xx, yy`` as (N,) arrays.  Its values enter a tape as constants.
    """

    def __init__(self, fn, name: str = "analytic"):
        self.fn = fn
        self.name = name

    def values(self, points) -> dict[str, np.ndarray]:
        return self.fn(np.atleast_2d(np.asarray(points, dtype=float)))

    def graph(self, tape: ad.Tape, points, derivs=("x", "y", "xx", "yy")) -> dict[str, ad.Var]:
        if isinstance(points, ad.Var):
            raise TypeError("analytic fields need concrete points")
        vals = self.values(points)
        n = len(np.atleast_2d(points))
        out = {}
        for k in ("u", *derivs):
            v = np.broadcast_to(np.asarray(vals.get(k, 0.0), dtype=float), (n,))
            out[k] = tape.constant(v.reshape(n, 1).copy())
        return out


def field_graph(tape: ad.Tape, prefix: str, field, points, derivs=("x", "y", "xx", "yy"),
                constant_params: bool = False) -> dict[str, ad.Var]:
    """Record any subnet-like object (network or analytic field)."""
    if isinstance(field, AnalyticField):
        return field.graph(tape, points, derivs)
    return graph(tape, prefix, field, points, derivs, constant_params)


def field_predict(field, points) -> np.ndarray:
    if isinstance(field, AnalyticField):
        return np.asarray(field.values(points)["u"], dtype=float).reshape(-1)
    return predict(field, points)


def record(params: NetworkParams) -> ad.Tape:
    """Scalar tape u*(x, y) with constant parameters and inputs named x, y."""
    tape = ad.Tape()
    x, y = tape.var("x"), tape.var("y")
    a = [(x - float(params.input_shift[0])) * float(params.input_scale[0]),
         (y - float(params.input_shift[1])) * float(params.input_scale[1])]
    n = len(params.weights)
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        nxt = []
        for r in range(W.shape[0]):
            acc = a[0] * float(W[r, 0])
            for c in range(1, W.shape[1]):
                acc = acc + a[c] * float(W[r, c])
            acc = acc + float(b[r])
            nxt.append(ad.tanh(acc) if i < n - 1 else acc)
        a = nxt
    tape.set_output(a[0] * params.output_scale if params.output_scale != 1.0 else a[0])
    return tape


def forward(params: NetworkParams, x_star: float, y_star: float) -> float:
    """u*(x*, y*) for a single point, evaluated through a recorded tape."""
    validate(params)
    return float(record(params).evaluate({"x": x_star, "y": y_star}))


@dataclass
class NetworkEnsemble:
    """Six subnets plus the trainable heat transfer coefficient.

    ``h_star = h_unit * exp(log_h)``; ``h_unit`` is the value of h* that the
    physics treats as one in its normalized Robin condition.
    """

    subnets: dict[str, NetworkParams]
    log_h: float = 0.0
    h_unit: float = 1.0

    def __post_init__(self):
        missing = set(SUBNET_IDS) - set(self.subnets)
        extra = set(self.subnets) - set(SUBNET_IDS)
        if missing or extra:
            raise ConfigurationError(f"ensemble needs exactly {SUBNET_IDS}; missing {sorted(missing)}, extra {sorted(extra)}")

    @property
    def h_star(self) -> float:
        return self.h_unit * math.exp(self.log_h)

    def copy(self) -> "NetworkEnsemble":
        return NetworkEnsemble({k: v.copy() if isinstance(v, NetworkParams) else v
                                for k, v in self.subnets.items()}, self.log_h, self.h_unit)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k in SUBNET_IDS:
            if isinstance(self.subnets[k], NetworkParams):
                out.update(self.subnets[k].named_arrays(k))
        out["log_h"] = np.asarray(self.log_h)
        return out

    def assign(self, arrays: dict[str, np.ndarray]) -> None:
        for k in SUBNET_IDS:
            if isinstance(self.subnets[k], NetworkParams):
                self.subnets[k].assign(k, arrays)
        self.log_h = float(arrays["log_h"])


def init_ensemble(seed: int, widths=DEFAULT_WIDTHS, boxes: dict | None = None, h_unit: float = 1.0,
                  output_scale: float = 1.0) -> NetworkEnsemble:
    boxes = boxes or {}
    nets = {k: init(widths, seed * 101 + i, boxes.get(k), output_scale) for i, k in enumerate(SUBNET_IDS)}
    return NetworkEnsemble(nets, 0.0, h_unit)


# -- checkpoints ------------------------------------------------------------

def params_to_dict(p: NetworkParams) -> dict:
    return {
        "widths": list(p.widths),
        "activation": p.activation,
        "seed": p.seed,
        "input_shift": p.input_shift.tolist(),
        "input_scale": p.input_scale.tolist(),
        "output_scale": p.output_scale,
        # row-major (out, in) matrices, flattened
        "weights": [w.ravel(order="C").tolist() for w in p.weights],
        "biases": [b.tolist() for b in p.biases],
    }


def params_from_dict(d: dict) -> NetworkParams:
    try:
        widths = [int(n) for n in d["widths"]]
        ws = [np.asarray(w, dtype=float).reshape(widths[i + 1], widths[i]) for i, w in enumerate(d["weights"])]
        bs = [np.asarray(b, dtype=float) for b in d["biases"]]
        return NetworkParams(widths, ws, bs, d.get("activation", "tanh"), d.get("seed"),
                             d.get("input_shift", [0.0, 0.0]), d.get("input_scale", [1.0, 1.0]),
                             float(d.get("output_scale", 1.0)))
    except KeyError as e:
        raise SchemaError(f"network checkpoint missing field {e.args[0]!r}") from None
    except ValueError as e:
        raise SchemaError(f"malformed network checkpoint: {e}") from None


def ensemble_to_dict(e: NetworkEnsemble) -> dict:
    return {
        "schema_version": CHECKPOINT_VERSION,
        "kind": "network-ensemble",
        "log_h": e.log_h,
        "h_unit": e.h_unit,
        "h_star": e.h_star,
        "subnets": {k: params_to_dict(e.subnets[k]) for k in SUBNET_IDS},
    }


def ensemble_from_dict(d: dict) -> NetworkEnsemble:
    if d.get("schema_version") != CHECKPOINT_VERSION:
        raise SchemaError(f"unsupported checkpoint schema_version {d.get('schema_version')!r}")
    return NetworkEnsemble({k: params_from_dict(v) for k, v in d["subnets"].items()},
                           float(d["log_h"]), float(d["h_unit"]))


def save_ensemble(e: NetworkEnsemble, path) -> None:
    Path(path).write_text(json.dumps(ensemble_to_dict(e)))


def load_ensemble(path) -> NetworkEnsemble:
    return ensemble_from_dict(json.loads(Path(path).read_text()))
