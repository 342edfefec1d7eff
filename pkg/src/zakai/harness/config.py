"""Run configuration: schema, defaults, validation and the YAML round trip.

A config is a flat mapping; unknown keys are errors.  Fields:

========== ====================================================================
kind       experiment (see ``KINDS``)
seed       master seed (non-negative integer)
paths      number of Brownian paths M
horizon    final time T > 0
steps      time steps N on the finest grid
n          spatial nodes per axis (ignored by scalar and suite kinds)
instance   fixture for ``wong_zakai_ladder`` and ``strong_order``
model      keyword overrides for the instance factory
solver     keyword arguments of ``SolveConfig``
ladder     step coarsening factors (each divides ``steps``)
meshes     smoothing meshes, strictly decreasing, each divides ``steps``
options    kind-specific settings (see ``OPTION_KEYS``)
strict     raise when a structural hypothesis fails
out        output directory (not part of the config hash)
inject_nan path indices whose driver is poisoned with NaN (isolation checks)
exclude    path indices to leave out
========== ====================================================================
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import yaml

from ..instances import INSTANCES
from ..pathwise import SolveConfig

__all__ = ["KINDS", "RunConfig", "ConfigError", "defaults_for", "load_config", "dump_config"]

KINDS = (
    "gbm_exact",
    "const_coeff_1d",
    "zakai_default",
    "ito_suite",
    "hypothesis_suite",
    "wong_zakai_ladder",
    "strong_order",
)

# kinds whose defaults do not use paths from the harness pool
SUITES = ("ito_suite", "hypothesis_suite")

_DEFAULTS = {
    "gbm_exact": dict(paths=10, steps=4096, n=1, ladder=[64, 32, 16, 8, 4, 2, 1]),
    "const_coeff_1d": dict(paths=50, steps=2048, n=256, ladder=[32, 16, 8, 4, 2, 1]),
    "zakai_default": dict(paths=20, steps=1024, n=256, ladder=[1]),
    "ito_suite": dict(paths=1000, steps=2**14, n=1, ladder=[64, 32, 16, 8, 4, 2, 1]),
    "hypothesis_suite": dict(paths=1, steps=1, n=128, ladder=[1]),
    "wong_zakai_ladder": dict(paths=100, steps=4096, n=1, ladder=[1], instance="gbm_exact", meshes=[64, 16, 4, 1]),
    "strong_order": dict(paths=200, steps=2048, n=256, ladder=[16, 8, 4, 2, 1], instance="zakai_default"),
}

OPTION_KEYS = {
    "gbm_exact": {"order_tol"},
    "const_coeff_1d": {"error_tol", "order_tol"},
    "zakai_default": set(),
    "ito_suite": {"trace_instances", "min_order"},
    "hypothesis_suite": {"ratio_tol", "slope_tol", "mu_tol", "rough_growth"},
    "wong_zakai_ladder": {"slack", "stride"},
    "strong_order": {"min_order", "min_order_milstein"},
}

# kinds whose instance is fixed by the kind itself
_FIXED_INSTANCE = {"gbm_exact": "gbm_exact", "const_coeff_1d": "const_coeff_1d", "zakai_default": "zakai_default"}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists ``field: message`` items."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n" + "\n".join(f"  {e}" for e in self.errors))


@dataclass
class RunConfig:
    kind: str
    seed: int = 0
    paths: int = 1
    horizon: float = 1.0
    steps: int = 1
    n: int = 1
    instance: str | None = None
    model: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    ladder: list = field(default_factory=lambda: [1])
    meshes: list = field(default_factory=list)
    options: dict = field(default_factory=dict)
    strict: bool = True
    out: str | None = None
    inject_nan: list = field(default_factory=list)
    exclude: list = field(default_factory=list)

    def validate(self) -> "RunConfig":
        errs = []

        def need(cond, name, msg):
            if not cond:
                errs.append(f"{name}: {msg}")

        if self.kind not in KINDS:
            raise ConfigError([f"kind: unknown experiment {self.kind!r}; choose from {', '.join(KINDS)}"])
        for name in ("seed", "paths", "steps", "n"):
            v = getattr(self, name)
            need(isinstance(v, int) and not isinstance(v, bool), name, f"must be an integer, got {v!r}")
        if not errs:
            need(self.seed >= 0, "seed", "must be non-negative")
            need(self.paths >= 1, "paths", "must be at least 1")
            need(self.steps >= 1, "steps", "must be at least 1")
            need(self.n >= 1, "n", "must be at least 1")
        ok_h = isinstance(self.horizon, (int, float)) and not isinstance(self.horizon, bool)
        need(ok_h and self.horizon == self.horizon and 0 < self.horizon < float("inf"), "horizon",
             f"must be a positive finite number, got {self.horizon!r}")
        need(isinstance(self.strict, bool), "strict", "must be true or false")
        for name in ("model", "solver", "options"):
            need(isinstance(getattr(self, name), dict), name, "must be a mapping")
        for name in ("ladder", "meshes", "inject_nan", "exclude"):
            v = getattr(self, name)
            need(isinstance(v, list) and all(isinstance(x, int) and not isinstance(x, bool) for x in v),
                 name, "must be a list of integers")
        if errs:
            raise ConfigError(errs)

        need(len(self.ladder) >= 1, "ladder", "needs at least one factor")
        need(all(f >= 1 and self.steps % f == 0 for f in self.ladder), "ladder",
             f"factors must be positive divisors of steps={self.steps}")
        need(len(set(self.ladder)) == len(self.ladder), "ladder", "factors must be distinct")
        if self.kind == "wong_zakai_ladder":
            need(len(self.meshes) >= 1, "meshes", "needs at least one mesh")
            need(all(b < a for a, b in zip(self.meshes, self.meshes[1:])), "meshes", "must be strictly decreasing")
            need(all(m >= 1 and self.steps % m == 0 for m in self.meshes), "meshes",
                 f"must be positive divisors of steps={self.steps}")
        elif self.meshes:
            errs.append("meshes: only used by wong_zakai_ladder")
        need(all(0 <= i < self.paths for i in self.inject_nan + self.exclude), "inject_nan/exclude",
             f"path indices must lie in [0, {self.paths})")
        if self.kind in SUITES:
            need(not self.inject_nan and not self.exclude, "inject_nan/exclude", "suites have no harness paths")
        if self.kind == "strong_order":
            kept = self.paths - len(set(self.exclude))
            need(kept >= 100, "paths", f"the strong error needs at least 100 paths, got {kept}")
        unknown = set(self.options) - OPTION_KEYS[self.kind]
        need(not unknown, "options", f"unknown keys {sorted(unknown)} for {self.kind}")
        for k, v in self.options.items():
            need(isinstance(v, (int, float)) and not isinstance(v, bool), f"options.{k}", "must be a number")

        inst = self.instance_name
        if self.kind in _FIXED_INSTANCE:
            need(self.instance in (None, inst), "instance", f"{self.kind} always uses {inst}")
        elif self.kind in ("wong_zakai_ladder", "strong_order"):
            need(self.instance in INSTANCES, "instance", f"choose from {sorted(INSTANCES)}")
        elif self.instance is not None:
            errs.append(f"instance: not used by {self.kind}")
        if inst == "gbm_exact":
            need(self.n == 1, "n", "the scalar instance has a single node")
        elif inst is not None:
            need(self.n >= 8, "n", "spatial grids need at least 8 nodes")
        if inst in INSTANCES:
            try:
                kw = dict(self.model)
                if inst != "gbm_exact":
                    kw["n"] = self.n
                INSTANCES[inst](**kw)
            except (TypeError, ValueError) as exc:
                errs.append(f"model: {exc}")
        elif self.model:
            errs.append(f"model: not used by {self.kind}")
        try:
            self.solve_config()
        except (TypeError, ValueError) as exc:
            errs.append(f"solver: {exc}")
        if errs:
            raise ConfigError(errs)
        return self

    @property
    def instance_name(self) -> str | None:
        return _FIXED_INSTANCE.get(self.kind, self.instance)

    def solve_config(self) -> SolveConfig:
        return SolveConfig(**self.solver)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError(["config: top level must be a mapping"])
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError([f"{k}: unknown field" for k in sorted(unknown)])
        if "kind" not in data:
            raise ConfigError(["kind: missing"])
        merged = defaults_for(data["kind"])
        merged.update(data)
        return cls(**merged).validate()

    def replace(self, **changes) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in changes.items() if v is not None})
        return RunConfig(**d).validate()

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def defaults_for(kind: str) -> dict:
    if kind not in KINDS:
        raise ConfigError([f"kind: unknown experiment {kind!r}; choose from {', '.join(KINDS)}"])
    d = {"kind": kind}
    d.update(json.loads(json.dumps(_DEFAULTS[kind])))
    return d


def load_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError([f"config: not valid YAML ({exc})"]) from None
    return RunConfig.from_dict(data or {})


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
