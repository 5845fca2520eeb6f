"""JSON experiment configs: strict loading and validation.

A config file looks like::

    {"schema_version": 1, "command": "race", "seed": 0, "race": {...}}

Unknown keys are rejected at every level, and every numeric field is checked
against the preconditions of the operation it feeds before any work starts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .earlyexit import SiftConfig
from .oracle import ZETA_DISTS, NoiseModel
from .problems import KINDS, LEAST_SQUARES, ProblemInstance, gaussian_error_model, noisy_least_squares
from .theory import SIGMA_HYPOTHESIS

SCHEMA_VERSION = 1
COMMANDS = ("race", "verify", "pj", "sift")


class ConfigError(ValueError):
    """A config failed to parse or validate; the message names the field."""


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _positive_int(value, path: str) -> None:
    _require(isinstance(value, int) and not isinstance(value, bool) and value >= 1, path, "must be an integer >= 1")


def _number(value, path: str) -> None:
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    _require(ok, path, "must be a finite number")


def _build(cls, data, path: str):
    """Instantiate dataclass ``cls`` from a JSON object, rejecting unknown keys."""
    _require(isinstance(data, dict), path, f"expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    _require(not unknown, path, f"unknown key(s) {unknown}")
    nested = getattr(cls, "NESTED", {})
    kwargs = {}
    for key, value in data.items():
        if key in nested:
            value = _build(nested[key], value, f"{path}.{key}")
        elif isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = value
    return cls(**kwargs)


def _as_json(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _as_json(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_as_json(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# shared blocks


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "noisy-least-squares"
    dim: int = 10
    feature_radius: float = 1.0
    label_noise_std: float = 1.0
    w_star: Optional[tuple] = None
    eps_direction: Optional[tuple] = None
    delta_scale: float = 1.0

    def validate(self, path: str) -> None:
        _require(self.kind in KINDS, f"{path}.kind", f"must be one of {KINDS}")
        _positive_int(self.dim, f"{path}.dim")
        _number(self.feature_radius, f"{path}.feature_radius")
        _require(self.feature_radius > 0, f"{path}.feature_radius", "must be positive")
        _number(self.label_noise_std, f"{path}.label_noise_std")
        _require(self.label_noise_std >= 0, f"{path}.label_noise_std", "must be non-negative")
        if self.kind == "realizable-least-squares":
            _require(self.label_noise_std == 0, f"{path}.label_noise_std", "must be 0 for realizable-least-squares")
        for name in ("w_star", "eps_direction"):
            v = getattr(self, name)
            if v is not None:
                _require(len(v) == self.dim, f"{path}.{name}", f"needs {self.dim} entries")
                for i, x in enumerate(v):
                    _number(x, f"{path}.{name}[{i}]")

    def build(self) -> ProblemInstance:
        w_star = None if self.w_star is None else np.array(self.w_star, dtype=float)
        if self.kind == "gaussian-error-model":
            return gaussian_error_model(self.dim, w_star, self.eps_direction, self.delta_scale)
        return noisy_least_squares(self.dim, self.feature_radius, self.label_noise_std, w_star)


@dataclass(frozen=True)
class NoiseSpec:
    mode: str = "exact"
    sigma: float = 0.0
    zeta: str = "standard-gaussian"
    mu: float = 0.0

    def validate(self, path: str) -> None:
        _require(self.mode in ("exact", "log-multiplicative"), f"{path}.mode", "must be exact or log-multiplicative")
        _number(self.sigma, f"{path}.sigma")
        _require(self.sigma >= 0, f"{path}.sigma", "must be non-negative")
        _require(self.zeta in ZETA_DISTS, f"{path}.zeta", f"must be one of {ZETA_DISTS}")
        _number(self.mu, f"{path}.mu")

    def build(self) -> NoiseModel:
        return NoiseModel(self.mode, float(self.sigma), self.zeta, float(self.mu))


def _step_size(eta, eta_over_L, L: float, path: str) -> float:
    if eta is None:
        _number(eta_over_L, f"{path}.eta_over_L")
        eta = eta_over_L / L
    _number(eta, f"{path}.eta")
    _require(eta > 0, f"{path}.eta", "must be positive")
    _require(
        eta * L < 1, f"{path}.eta",
        f"eta = {eta!r} violates the convergence-theorem precondition eta < 1/L (L = {L!r})",
    )
    return float(eta)


def start_point(problem: ProblemInstance, w0, start_distance: float) -> np.ndarray:
    """Explicit ``w0``, or w* shifted by ``start_distance`` along -(1,...,1)/sqrt(d)."""
    if w0 is not None:
        return np.array(w0, dtype=float)
    return problem.w_star - start_distance * np.ones(problem.dim) / math.sqrt(problem.dim)


# ---------------------------------------------------------------------------
# race


@dataclass(frozen=True)
class RaceConfig:
    NESTED = {"problem": ProblemSpec, "noise": NoiseSpec}

    problem: ProblemSpec = field(default_factory=ProblemSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    methods: tuple = ("sgd", "gsgd")
    R: int = 8
    eta: Optional[float] = None
    eta_over_L: float = 0.1
    K: int = 20000
    n_seeds: int = 200
    start_distance: float = 5.0
    w0: Optional[tuple] = None
    record_every: Optional[int] = None
    early_K_max: int = 500
    k_se: float = 3.0

    def validate(self, path: str = "race") -> None:
        self.problem.validate(f"{path}.problem")
        self.noise.validate(f"{path}.noise")
        _require(self.problem.kind in LEAST_SQUARES, f"{path}.problem.kind", "races need a least-squares problem")
        _require(
            len(self.methods) == 2 and all(m in ("sgd", "gsgd") for m in self.methods),
            f"{path}.methods", "must be a pair drawn from sgd, gsgd",
        )
        for name in ("R", "K", "early_K_max"):
            _positive_int(getattr(self, name), f"{path}.{name}")
        _positive_int(self.n_seeds, f"{path}.n_seeds")
        _require(self.n_seeds >= 2, f"{path}.n_seeds", "a race needs at least 2 seeds")
        if self.record_every is not None:
            _positive_int(self.record_every, f"{path}.record_every")
        _number(self.start_distance, f"{path}.start_distance")
        _number(self.k_se, f"{path}.k_se")
        if self.w0 is not None:
            _require(len(self.w0) == self.problem.dim, f"{path}.w0", f"needs {self.problem.dim} entries")
        self.step_size()

    def step_size(self, path: str = "race") -> float:
        return _step_size(self.eta, self.eta_over_L, self.problem.build().L, path)


# ---------------------------------------------------------------------------
# verify checks


@dataclass(frozen=True)
class HMaxCheck:
    sigmas: tuple = (0.01, 0.05, 0.1, 0.2, SIGMA_HYPOTHESIS)

    def validate(self, path: str) -> None:
        for i, s in enumerate(self.sigmas):
            _number(s, f"{path}.sigmas[{i}]")
            _require(0 < s <= SIGMA_HYPOTHESIS, f"{path}.sigmas[{i}]", "must lie in (0, 1/(2*sqrt(2))]")


@dataclass(frozen=True)
class NoiseBoundCheck:
    NESTED = {"problem": ProblemSpec}

    problem: ProblemSpec = field(default_factory=ProblemSpec)
    sigmas: tuple = (0.05, 0.1, 0.2, SIGMA_HYPOTHESIS)
    zetas: tuple = ZETA_DISTS
    probe_distances: tuple = (0.5, 1.0, 2.0)
    n: int = 1_000_000
    k_se: float = 3.0

    def validate(self, path: str) -> None:
        self.problem.validate(f"{path}.problem")
        _require(self.problem.kind in LEAST_SQUARES, f"{path}.problem.kind", "must be a least-squares kind")
        for i, s in enumerate(self.sigmas):
            _number(s, f"{path}.sigmas[{i}]")
            _require(s >= 0, f"{path}.sigmas[{i}]", "must be non-negative")
        for i, z in enumerate(self.zetas):
            _require(z in ZETA_DISTS, f"{path}.zetas[{i}]", f"must be one of {ZETA_DISTS}")
        for i, r in enumerate(self.probe_distances):
            _number(r, f"{path}.probe_distances[{i}]")
            if self.problem.label_noise_std == 0:
                _require(r > 0, f"{path}.probe_distances[{i}]", "must be positive when F(w*) = 0")
        _positive_int(self.n, f"{path}.n")
        _require(self.n >= 2, f"{path}.n", "must be >= 2")


@dataclass(frozen=True)
class RhoGaussianCheck:
    Rs: tuple = (16, 64, 256, 1024)
    cases: tuple = ((0.0, 1.0), (1.0, 1.0), (2.0, 0.5))
    n: int = 1_000_000
    k_se: float = 3.0

    def validate(self, path: str) -> None:
        for i, R in enumerate(self.Rs):
            _positive_int(R, f"{path}.Rs[{i}]")
            _require(R >= 2, f"{path}.Rs[{i}]", "must be >= 2")
        for i, case in enumerate(self.cases):
            _require(len(case) == 2, f"{path}.cases[{i}]", "must be an [eps, delta] pair")
            _number(case[0], f"{path}.cases[{i}][0]")
            _number(case[1], f"{path}.cases[{i}][1]")
            _require(case[1] >= 0 and case[0] ** 2 + case[1] ** 2 > 0, f"{path}.cases[{i}]",
                     "needs delta >= 0 and eps^2 + delta^2 > 0")
        _positive_int(self.n, f"{path}.n")
        _require(self.n >= 2, f"{path}.n", "must be >= 2")


@dataclass(frozen=True)
class Delta2Check:
    NESTED = {"problem": ProblemSpec}

    problem: ProblemSpec = field(default_factory=ProblemSpec)
    n: int = 1_000_000
    k_se: float = 3.0

    def validate(self, path: str) -> None:
        self.problem.validate(f"{path}.problem")
        _require(self.problem.kind in LEAST_SQUARES, f"{path}.problem.kind", "must be a least-squares kind")
        _positive_int(self.n, f"{path}.n")
        _require(self.n >= 2, f"{path}.n", "must be >= 2")


@dataclass(frozen=True)
class TauRatioCheck:
    taus: tuple = (1e-6, 1e-4, 1e-3, 0.01, 0.05, 0.1)

    def validate(self, path: str) -> None:
        for i, t in enumerate(self.taus):
            _number(t, f"{path}.taus[{i}]")
            _require(0 < t <= 0.1, f"{path}.taus[{i}]", "must lie in (0, 0.1]")


@dataclass(frozen=True)
class PjCheck:
    betas: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99)
    n_mc: int = 1_000_000
    d: int = 8
    tol: float = 1e-6
    k_se: float = 3.0

    def validate(self, path: str) -> None:
        for i, b in enumerate(self.betas):
            _number(b, f"{path}.betas[{i}]")
            _require(0 <= b <= 1, f"{path}.betas[{i}]", "must lie in [0, 1]")
        _positive_int(self.n_mc, f"{path}.n_mc")
        _require(self.n_mc >= 10_000, f"{path}.n_mc", "must be >= 10^4")
        _positive_int(self.d, f"{path}.d")
        _require(self.d >= 2, f"{path}.d", "must be >= 2")


@dataclass(frozen=True)
class CrossoverCheck:
    n_points: int = 20

    def validate(self, path: str) -> None:
        _positive_int(self.n_points, f"{path}.n_points")


@dataclass(frozen=True)
class SandwichCheck:
    NESTED = {"problem": ProblemSpec}

    problem: ProblemSpec = field(default_factory=ProblemSpec)
    R: int = 8
    eta: Optional[float] = None
    eta_over_L: float = 0.1
    K_values: tuple = (100, 1000, 10000)
    n_seeds: int = 200
    n_mc: int = 200_000
    start_distance: float = 5.0
    k_se: float = 3.0

    def validate(self, path: str) -> None:
        self.problem.validate(f"{path}.problem")
        _require(self.problem.kind in LEAST_SQUARES, f"{path}.problem.kind", "must be a least-squares kind")
        _positive_int(self.R, f"{path}.R")
        _require(self.R >= 2, f"{path}.R", "must be >= 2 so that rho* > 1")
        for i, K in enumerate(self.K_values):
            _positive_int(K, f"{path}.K_values[{i}]")
        _require(len(self.K_values) >= 1, f"{path}.K_values", "must not be empty")
        _positive_int(self.n_seeds, f"{path}.n_seeds")
        _require(self.n_seeds >= 2, f"{path}.n_seeds", "must be >= 2")
        _positive_int(self.n_mc, f"{path}.n_mc")
        _require(self.n_mc >= 2, f"{path}.n_mc", "must be >= 2")
        _number(self.start_distance, f"{path}.start_distance")
        self.step_size(path)

    def step_size(self, path: str = "sandwich") -> float:
        return _step_size(self.eta, self.eta_over_L, self.problem.build().L, path)


CHECK_TYPES = {
    "lemma-c1": HMaxCheck,
    "noise-bound": NoiseBoundCheck,
    "rho-gaussian": RhoGaussianCheck,
    "delta2": Delta2Check,
    "cor63": TauRatioCheck,
    "pj": PjCheck,
    "crossover": CrossoverCheck,
    "sandwich": SandwichCheck,
}


@dataclass(frozen=True)
class VerifyConfig:
    checks: tuple = ()

    @classmethod
    def from_json(cls, data, path: str = "verify") -> "VerifyConfig":
        _require(isinstance(data, dict), path, "expected an object")
        unknown = sorted(set(data) - {"checks"})
        _require(not unknown, path, f"unknown key(s) {unknown}")
        items = data.get("checks", [])
        _require(isinstance(items, list) and items, f"{path}.checks", "must be a non-empty list")
        checks = []
        for i, item in enumerate(items):
            p = f"{path}.checks[{i}]"
            _require(isinstance(item, dict) and "check" in item, p, "needs a 'check' field")
            kind = item["check"]
            _require(kind in CHECK_TYPES, f"{p}.check", f"unknown check {kind!r}; expected one of {sorted(CHECK_TYPES)}")
            body = {k: v for k, v in item.items() if k != "check"}
            checks.append((kind, _build(CHECK_TYPES[kind], body, p)))
        return cls(tuple(checks))

    def validate(self, path: str = "verify") -> None:
        for i, (_, check) in enumerate(self.checks):
            check.validate(f"{path}.checks[{i}]")

    def to_json(self):
        return {"checks": [{"check": kind, **_as_json(c)} for kind, c in self.checks]}


# ---------------------------------------------------------------------------
# pj and sift


@dataclass(frozen=True)
class PjConfig:
    mode: str = "beta-grid"
    betas: tuple = (0.0, 0.25, 0.5, 0.75, 0.999)
    d: int = 8
    depth: int = 3
    n_mc: int = 1_000_000
    tol: float = 1e-6
    k_se: float = 3.0

    def validate(self, path: str = "pj") -> None:
        _require(self.mode in ("beta-grid", "random-net"), f"{path}.mode", "must be beta-grid or random-net")
        for i, b in enumerate(self.betas):
            _number(b, f"{path}.betas[{i}]")
            _require(0 <= b <= 1, f"{path}.betas[{i}]", "must lie in [0, 1]")
        _positive_int(self.d, f"{path}.d")
        _require(self.d >= 2, f"{path}.d", "must be >= 2")
        _positive_int(self.depth, f"{path}.depth")
        _positive_int(self.n_mc, f"{path}.n_mc")
        _require(self.n_mc >= 10_000, f"{path}.n_mc", "must be >= 10^4")


@dataclass(frozen=True)
class SiftRunConfig:
    d: int = 20
    depth: int = 2
    batch_size: int = 64
    keep_fraction: float = 0.5
    criterion: str = "early-loss"
    exit_layer: int = 1
    warmup_steps: Optional[int] = None
    step_size: float = 0.1
    total_steps: int = 200
    n_seeds: int = 20
    n_eval: int = 2000
    target_loss: float = 0.3
    init_jitter: float = 0.1
    init_head_scale: float = 0.1
    k_se: float = 2.0

    def validate(self, path: str = "sift") -> None:
        for name in ("d", "depth", "batch_size", "total_steps", "n_seeds", "n_eval"):
            _positive_int(getattr(self, name), f"{path}.{name}")
        _require(self.n_seeds >= 2, f"{path}.n_seeds", "must be >= 2")
        _require(1 <= self.exit_layer <= self.depth, f"{path}.exit_layer", f"must lie in 1..{self.depth}")
        for name in ("keep_fraction", "step_size", "target_loss", "init_jitter", "init_head_scale", "k_se"):
            _number(getattr(self, name), f"{path}.{name}")
        try:
            self.sift_config()
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def sift_config(self) -> SiftConfig:
        return SiftConfig(
            self.batch_size, self.keep_fraction, self.criterion, self.exit_layer,
            self.warmup_steps, self.step_size, self.total_steps,
        )


BODY_TYPES = {"race": RaceConfig, "pj": PjConfig, "sift": SiftRunConfig}


# ---------------------------------------------------------------------------
# top level


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    body: Union[RaceConfig, VerifyConfig, PjConfig, SiftRunConfig]
    seed: int = 0
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> None:
        self.body.validate(self.command)

    def to_json(self) -> dict:
        body = self.body.to_json() if isinstance(self.body, VerifyConfig) else _as_json(self.body)
        return {"schema_version": self.schema_version, "command": self.command, "seed": self.seed, self.command: body}

    def digest(self) -> str:
        text = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def parse_config(data) -> ExperimentConfig:
    _require(isinstance(data, dict), "config", "top level must be an object")
    _require(data.get("schema_version") == SCHEMA_VERSION, "config.schema_version", f"must be {SCHEMA_VERSION}")
    command = data.get("command")
    _require(command in COMMANDS, "config.command", f"must be one of {COMMANDS}")
    allowed = {"schema_version", "command", "seed", command}
    unknown = sorted(set(data) - allowed)
    _require(not unknown, "config", f"unknown key(s) {unknown}")
    seed = data.get("seed", 0)
    _require(isinstance(seed, int) and not isinstance(seed, bool) and 0 <= seed < 2**64,
             "config.seed", "must be an unsigned 64-bit integer")
    raw = data.get(command, {})
    if command == "verify":
        body = VerifyConfig.from_json(raw)
    else:
        body = _build(BODY_TYPES[command], raw, command)
    cfg = ExperimentConfig(command, body, seed)
    cfg.validate()
    return cfg


def shipped_configs() -> list[str]:
    root = resources.files("gsgdlab") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(source: Union[str, Path]) -> ExperimentConfig:
    """Load a config from a file path or by the name of a shipped config."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
    else:
        res = resources.files("gsgdlab") / "configs" / f"{source}.json"
        if not res.is_file():
            raise ConfigError(f"config {source!r} is neither a file nor a shipped config {shipped_configs()}")
        text = res.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {source!r} is not valid JSON: {exc}") from None
    return parse_config(data)
