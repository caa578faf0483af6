"""Adam optimization with self-adaptive loss weights.

A model is anything with ``arrays() -> {name: array}`` and ``assign(arrays)``
(a :class:`~mosfet_pinn.network.NetworkEnsemble` for the rig).  Losses are
:class:`~mosfet_pinn.physics.CompiledLoss` objects, recorded once and fed
fresh parameters and minibatches every step.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import network as nw
from .errors import ConfigurationError, DivergenceError
from .physics import TERM_NAMES, CompiledLoss, LossState

SEQUENTIAL_ORDER = ("layer0", "layer1", "layer2", "layer3", "layer4", "pipes")
ACTIVE_IDS = SEQUENTIAL_ORDER + ("h",)


@dataclass
class TrainConfig:
    max_epochs: int = 2000
    lr_params: float = 1e-3
    lr_lambda: float = 1e-2
    epsilon_stop: float = 1e-12
    schedule: str = "joint"
    sweeps: int = 1
    seed: int = 0
    epochs_per_layer: int = 100
    finetune_fraction: float = 0.1
    lr_h: float | None = None  # None -> lr_params
    lambda_bounds: tuple[float, float] = (1e-3, 1e4)
    lambda_init: tuple[float, ...] = (1.0,) * len(TERM_NAMES)
    adaptive_lambdas: bool = True
    order: tuple[str, ...] = SEQUENTIAL_ORDER
    lr_decay: float = 1.0  # multiplicative learning-rate factor applied every decay_every epochs
    decay_every: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        validate_config(self)


def validate_config(c: TrainConfig) -> None:
    if c.max_epochs < 0:
        raise ConfigurationError("max_epochs must be non-negative")
    if not (c.lr_params > 0 and c.lr_lambda > 0 and (c.lr_h is None or c.lr_h > 0)):
        raise ConfigurationError("learning rates must be positive")
    if not c.epsilon_stop > 0:
        raise ConfigurationError("epsilon_stop must be positive")
    if c.schedule not in ("joint", "sequential"):
        raise ConfigurationError(f"schedule must be 'joint' or 'sequential', got {c.schedule!r}")
    if c.sweeps < 1 or c.epochs_per_layer < 1:
        raise ConfigurationError("sweeps and epochs_per_layer must be at least 1")
    lo, hi = c.lambda_bounds
    if not 0 < lo < hi:
        raise ConfigurationError("lambda bounds must satisfy 0 < lo < hi")
    if len(c.lambda_init) != len(TERM_NAMES) or min(c.lambda_init) <= 0:
        raise ConfigurationError("lambda_init needs seven positive values")
    if not 0 <= c.finetune_fraction <= 1:
        raise ConfigurationError("finetune_fraction must lie in [0, 1]")
    for a in c.order:
        if a not in ACTIVE_IDS:
            raise ConfigurationError(f"unknown subdomain {a!r} in sequential order")
    if not 0 < c.lr_decay <= 1 or c.decay_every < 1:
        raise ConfigurationError("lr_decay must lie in (0, 1] and decay_every be positive")


def config_to_dict(c: TrainConfig) -> dict:
    d = asdict(c)
    d["lambda_bounds"] = list(c.lambda_bounds)
    d["lambda_init"] = list(c.lambda_init)
    d["order"] = list(c.order)
    return d


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    for k in ("lambda_bounds", "lambda_init", "order"):
        if k in d:
            d[k] = tuple(d[k])
    known = set(TrainConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown training options {sorted(unknown)}")
    return TrainConfig(**d)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)  # per-parameter Adam step, for bias correction
    step: int = 0
    lambdas: np.ndarray = field(default_factory=lambda: np.ones(len(TERM_NAMES)))

    @classmethod
    def fresh(cls, config: TrainConfig) -> "OptimizerState":
        return cls(lambdas=np.array(config.lambda_init, dtype=float))

    def save(self, path) -> None:
        arrays = {f"m/{k}": v for k, v in self.m.items()}
        arrays.update({f"v/{k}": v for k, v in self.v.items()})
        meta = {"step": self.step, "counts": self.counts, "lambdas": self.lambdas.tolist()}
        np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path) -> "OptimizerState":
        with np.load(path) as z:
            meta = json.loads(str(z["__meta__"]))
            m = {k[2:]: z[k] for k in z.files if k.startswith("m/")}
            v = {k[2:]: z[k] for k in z.files if k.startswith("v/")}
        return cls(m, v, {k: int(n) for k, n in meta["counts"].items()}, int(meta["step"]),
                   np.array(meta["lambdas"], dtype=float))


def adam_update(arrays: dict, grads: dict, names, state: OptimizerState, config: TrainConfig,
                lr_scale: float = 1.0) -> dict:
    """Return updated copies of the named arrays; others are passed through untouched."""
    b1, b2, eps = config.beta1, config.beta2, config.adam_eps
    out = dict(arrays)
    for n in names:
        g = np.asarray(grads[n], dtype=float)
        p = np.asarray(arrays[n], dtype=float)
        m = state.m.get(n, np.zeros_like(p))
        v = state.v.get(n, np.zeros_like(p))
        t = state.counts.get(n, 0) + 1
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        lr = (config.lr_h if (n == "log_h" and config.lr_h is not None) else config.lr_params) * lr_scale
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        out[n] = p - lr * mhat / (np.sqrt(vhat) + eps)
        state.m[n], state.v[n], state.counts[n] = m, v, t
    return out


def active_names(model, active: str | None) -> list[str]:
    """Trainable array names for a sequential step (all of them when ``active`` is None)."""
    names = list(model.arrays())
    if active is None:
        return names
    if active not in ACTIVE_IDS:
        raise ConfigurationError(f"active must be one of {ACTIVE_IDS}, got {active!r}")
    out = [n for n in names if n.startswith(active + ".")]
    if active in ("pipes", "h") and "log_h" in names:
        out.append("log_h")
    return out


def _find_offender(loss: CompiledLoss, arrays, feed, names) -> str:
    for s, t in enumerate(TERM_NAMES):
        if loss.terms[s] is None:
            continue
        lam = np.zeros(len(TERM_NAMES))
        lam[s] = 1.0
        _, _, g = loss.run(arrays, lam, feed, names)
        if not all(np.all(np.isfinite(v)) for v in g.values()):
            return t
    return "unknown"


def _step(model, loss: CompiledLoss, config: TrainConfig, state: OptimizerState, names,
          rng: np.random.Generator | None, lr_scale: float = 1.0):
    arrays = model.arrays()
    feed = loss.feed(rng) if loss.batched else None
    terms, _, grads = loss.run(arrays, state.lambdas, feed, names)
    h_star = getattr(model, "h_star", None)
    pre = LossState.from_arrays(terms, state.lambdas, h_star)
    bad = [t for t, v in zip(TERM_NAMES, terms) if not np.isfinite(v)]
    if bad:
        raise DivergenceError(f"loss term L_{bad[0]} is not finite", term=bad[0])
    if not all(np.all(np.isfinite(grads[n])) for n in names):
        term = _find_offender(loss, arrays, feed, names)
        raise DivergenceError(f"non-finite gradient from L_{term}", term=term)
    new = adam_update(arrays, grads, names, state, config, lr_scale)
    model.assign(new)
    if config.adaptive_lambdas:
        lo, hi = config.lambda_bounds
        present = np.array([t is not None for t in loss.terms])
        state.lambdas = np.where(present, np.clip(state.lambdas + config.lr_lambda * terms, lo, hi), state.lambdas)
    state.step += 1
    return model, pre


def step_joint(model, loss: CompiledLoss, config: TrainConfig, state: OptimizerState,
               rng: np.random.Generator | None = None, lr_scale: float = 1.0):
    """One Adam step on every parameter and log h*; returns (model, pre-step LossState)."""
    return _step(model, loss, config, state, active_names(model, None), rng, lr_scale)


def step_sequential(model, loss: CompiledLoss, config: TrainConfig, state: OptimizerState, active: str,
                    rng: np.random.Generator | None = None, lr_scale: float = 1.0):
    """One Adam step on the active subnet only; every other array is left untouched."""
    return _step(model, loss, config, state, active_names(model, active), rng, lr_scale)


def _plan(config: TrainConfig) -> list[str | None]:
    """Active subdomain per epoch; None means a joint step."""
    if config.schedule == "joint":
        return [None] * config.max_epochs
    plan: list[str | None] = []
    for _ in range(config.sweeps):
        for a in config.order:
            plan += [a] * config.epochs_per_layer
    plan += [None] * int(round(config.finetune_fraction * len(plan)))
    return plan[:config.max_epochs]


def train(model, loss: CompiledLoss, config: TrainConfig, state: OptimizerState | None = None,
          callback=None, wall_clock: bool = True):
    """Run the configured schedule; returns (model, history, state).

    History holds the pre-step LossState of every epoch, with the loss's
    diagnostics (interface mismatches for the rig) attached.  Training stops
    once a pre-step total is at or below ``epsilon_stop``.  A divergence
    aborts with the partial history attached to the raised error.
    """
    state = state or OptimizerState.fresh(config)
    rng = np.random.default_rng(config.seed)
    history: list[LossState] = []
    t0 = time.perf_counter()
    for epoch, active in enumerate(_plan(config)):
        lr_scale = config.lr_decay ** (epoch // config.decay_every)
        try:
            if active is None:
                model, st = step_joint(model, loss, config, state, rng, lr_scale)
            else:
                model, st = step_sequential(model, loss, config, state, active, rng, lr_scale)
        except DivergenceError as e:
            e.history = history
            raise
        st.interface = loss.diagnostics(model)
        history.append(st)
        if callback is not None:
            callback(epoch, st, (time.perf_counter() - t0) if wall_clock else 0.0)
        if config.checkpoint_every and config.checkpoint_dir and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(model, state, Path(config.checkpoint_dir), epoch + 1)
        if st.total <= config.epsilon_stop:
            break
    return model, history, state


def save_checkpoint(model, state: OptimizerState, directory: Path, epoch: int) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    stem = directory / f"epoch{epoch:07d}"
    if isinstance(model, nw.NetworkEnsemble):
        nw.save_ensemble(model, stem.with_suffix(".json"))
    else:
        np.savez(stem.with_name(stem.name + "_model.npz"), **model.arrays())
    state.save(stem.with_name(stem.name + "_optim.npz"))
    return stem


def aggregate(values) -> tuple[float, float]:
    """Mean and sample standard deviation (n - 1); std is 0 for a single value."""
    a = np.asarray(list(values), dtype=float)
    if a.size == 0:
        return float("nan"), float("nan")
    mean = float(np.mean(a))
    std = float(np.std(a, ddof=1)) if a.size > 1 else 0.0
    return mean, std


def multi_trial(run_trial, config: TrainConfig, n_trials: int):
    """Run ``run_trial(seed)`` for seeds seed, seed+1, ...; divergent trials are kept but flagged.

    ``run_trial`` returns a per-trial record (see :mod:`mosfet_pinn.postprocess`).
    Returns the list of records and the list of failures ``(seed, error)``.
    """
    if n_trials < 1:
        raise ConfigurationError("n_trials must be at least 1")
    records, failures = [], []
    for i in range(n_trials):
        seed = config.seed + i
        try:
            records.append(run_trial(seed))
        except DivergenceError as e:
            failures.append((seed, e))
    return records, failures
