"""Experiment configuration: TOML tables ``[experiment]``, ``[model]``, ``[functional]``, ``[tolerances]``."""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..functionals import FUNCTIONAL_NAMES
from ..models import MODEL_NAMES, ModelError, builtin_model
from ..schemes import SCHEMES, get_scheme

KINDS = ("lln", "clt", "invariant", "mixing", "order", "assumptions")

DEFAULT_TOLERANCES = {
    "var_rel": 0.15,          # clt: |sample var / v^2 - 1|
    "ks_alpha": 0.01,         # clt: KS p-value floor
    "oracle_rel": 0.15,       # clt: |v_hat^2 / v^2_oracle - 1|
    "lln_abs": 0.01,          # lln: |S_k/k - mu| at the largest k
    "slope_low": -1.15,       # lln: MSE slope window
    "slope_high": -0.85,
    "drift_rel": 0.02,        # lln: last-half drift relative to level
    "mixing_rel": 0.02,       # mixing: |c_hat / c_ref - 1|
    "rate_floor": 0.8,        # mixing: c_hat >= rate_floor * (lambda_1 - lambda_F)
    "r2_min": 0.95,
    "order_min": 0.9,
    "order_max": 10.0,
    "w2_slope_min": 0.8,      # invariant: log-log slope of W2 against tau
    "gap_slope_tol": 0.1,     # invariant: analytic gap slope within 1 +- tol
    "moment_trend": 0.05,
    "failure_rate": 0.01,
    "hypothesis_tol": 1e-9,
}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


@dataclass
class ExperimentConfig:
    kind: str
    model: dict
    scheme: str
    functional: dict = field(default_factory=lambda: {"name": "coordinate"})
    seed: int = 0
    replicas: int = 100
    threads: int = 0
    tau: float | None = None
    tau_grid: list | None = None
    lam: float | None = None
    alpha: list | None = None
    x0: float | list | None = None
    k_grid: list | None = None
    n: int | None = None
    burn_time: float = 5.0
    thin_time: float = 0.0
    horizon_k: int | None = None
    T: float = 1.0
    reference: str = "exact"
    pairs: list | None = None
    initials: list | None = None
    moment_q: float = 2.0
    q: float | None = None
    r: float | None = None
    lag: int | None = None
    batch: int | None = None
    long_factor: int = 100
    ks_variance: str = "auto"
    fine_factor: int = 64
    samples: int = 1000
    checks: list | None = None
    chunk: int = 250
    out: str | None = None
    csv: str | None = None
    tolerances: dict = field(default_factory=dict)

    def tol(self, key: str) -> float:
        return float(self.tolerances.get(key, DEFAULT_TOLERANCES[key]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d.pop("csv")
        d.pop("threads")
        return d


_EXPERIMENT_KEYS = {f.name for f in fields(ExperimentConfig)} - {"model", "functional", "tolerances"}
_ALIASES = {"lambda": "lam", "M": "replicas"}
_INT_KEYS = {"seed", "replicas", "threads", "n", "horizon_k", "lag", "batch", "long_factor",
             "fine_factor", "samples", "chunk"}
_FLOAT_KEYS = {"tau", "lam", "burn_time", "thin_time", "T", "moment_q", "q", "r"}
_REQUIRED = {
    "lln": ("tau", "k_grid"),
    "clt": ("tau", "lam"),
    "invariant": ("n",),
    "mixing": ("tau", "pairs", "horizon_k"),
    "order": ("tau_grid",),
    "assumptions": ("tau",),
}


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config: parse error in {path}: {exc}") from exc
    return config_from_dict(data, overrides)


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config: parse error: {exc}") from exc
    return config_from_dict(data, overrides)


def config_from_dict(data: dict, overrides: dict | None = None) -> ExperimentConfig:
    unknown = set(data) - {"experiment", "model", "functional", "tolerances"}
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown section")
    exp = dict(data.get("experiment", {}))
    for k, v in (overrides or {}).items():
        if v is not None:
            exp[k] = v
    kw = {}
    for key, value in exp.items():
        name = _ALIASES.get(key, key)
        if name not in _EXPERIMENT_KEYS:
            raise ConfigError(f"experiment.{key}: unknown key")
        kw[name] = _coerce(f"experiment.{key}", name, value)
    if "kind" not in kw:
        raise ConfigError("experiment.kind: missing")
    if kw["kind"] not in KINDS:
        raise ConfigError(f"experiment.kind: unknown kind {kw['kind']!r}; expected one of {', '.join(KINDS)}")
    for key in _REQUIRED[kw["kind"]]:
        if kw.get(key) is None:
            raise ConfigError(f"experiment.{key}: required for kind={kw['kind']}")
    if "scheme" not in kw:
        raise ConfigError("experiment.scheme: missing")
    if kw["scheme"] not in SCHEMES:
        raise ConfigError(f"experiment.scheme: unknown scheme {kw['scheme']!r}; "
                          f"expected one of {', '.join(SCHEMES)}")

    model = dict(data.get("model", {}))
    if "name" not in model:
        raise ConfigError("model.name: missing")
    if model["name"] not in MODEL_NAMES:
        raise ConfigError(f"model.name: unknown model {model['name']!r}")
    try:
        built = build_model(model)
    except ModelError as exc:
        raise ConfigError(f"model: {exc}") from exc
    try:
        get_scheme(kw["scheme"], built)
    except ValueError as exc:
        raise ConfigError(f"experiment.scheme: {exc}") from exc

    func = dict(data.get("functional", {"name": "coordinate"}))
    if func.get("name") not in FUNCTIONAL_NAMES:
        raise ConfigError(f"functional.name: unknown functional {func.get('name')!r}")

    tols = dict(data.get("tolerances", {}))
    for key, value in tols.items():
        if key not in DEFAULT_TOLERANCES:
            raise ConfigError(f"tolerances.{key}: unknown tolerance")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"tolerances.{key}: expected a number")
    if kw.get("replicas", 1) < 1:
        raise ConfigError("experiment.replicas: must be >= 1")
    if kw.get("ks_variance", "auto") not in ("auto", "oracle", "independent"):
        raise ConfigError("experiment.ks_variance: expected auto, oracle or independent")
    if kw.get("reference", "exact") not in ("exact", "fine"):
        raise ConfigError("experiment.reference: expected exact or fine")
    return ExperimentConfig(model=model, functional=func, tolerances=tols, **kw)


def _coerce(path, name, value):
    if name in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if name in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if name in ("tau_grid", "k_grid", "alpha", "initials", "pairs", "checks"):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected an array")
    return value


def build_model(model_table: dict):
    params = {k: v for k, v in model_table.items() if k != "name"}
    return builtin_model(model_table["name"], params)
