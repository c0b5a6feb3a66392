"""Experiment configuration: YAML files, validation and canonical serialization.

Two kinds of file exist. A *particle* config describes one sampler run; an
*analytic* config drives the closed-form Gaussian engine. A file may also
hold a ``base`` section plus a list of ``variants``, each a partial config
deep-merged onto the base; presets are written this way.

Validation errors are :class:`brwp.errors.ConfigError` carrying the dotted
path of the offending field.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from ..errors import ConfigError

POTENTIALS = {
    "quadratic": {"eigenvalues": None, "rotation": None, "rotation_deg": None},
    "gaussian_mixture": {"a": None},
    "bimodal": {},
    "logistic_regression": {"alpha": 0.5, "n": 50, "d": 2, "theta_gen": None, "data_seed": 0},
}
METHODS = ("ula", "mala", "brwp")
ANALYSES = ("recurrence_1d", "mixing", "noncommuting")


# ---------------------------------------------------------------- validators


def _reject_unknown(d, allowed, path):
    for key in d:
        if key not in allowed:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError(where, f"unknown field; expected one of {sorted(allowed)}")


def _mapping(v, path):
    if v is None:
        return {}
    if not isinstance(v, dict):
        raise ConfigError(path, f"expected a mapping, got {type(v).__name__}")
    return v


def _number(v, path, positive=False, nonneg=False, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if positive and not v > 0:
        raise ConfigError(path, f"must be positive, got {v}")
    if nonneg and v < 0:
        raise ConfigError(path, f"must be nonnegative, got {v}")
    return v


def _integer(v, path, minimum=None, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(path, f"must be at least {minimum}, got {v}")
    return int(v)


def _vector(v, path, allow_none=False):
    if v is None and allow_none:
        return None
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(path, "expected a nonempty list of numbers")
    return [_number(x, f"{path}[{i}]") for i, x in enumerate(v)]


def _matrix(v, path):
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(path, "expected a nonempty list of rows")
    rows = [_vector(r, f"{path}[{i}]") for i, r in enumerate(v)]
    if any(len(r) != len(rows) for r in rows):
        raise ConfigError(path, "matrix must be square")
    return rows


def _choice(v, options, path):
    if v not in options:
        raise ConfigError(path, f"expected one of {list(options)}, got {v!r}")
    return v


def deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


# ---------------------------------------------------------------- sections


@dataclass(frozen=True)
class PotentialConfig:
    name: str
    params: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, raw, path="potential"):
        raw = _mapping(raw, path)
        if "name" not in raw:
            raise ConfigError(f"{path}.name", "missing")
        name = _choice(raw["name"], POTENTIALS, f"{path}.name")
        defaults = POTENTIALS[name]
        _reject_unknown(raw, set(defaults) | {"name"}, path)
        params = {}
        for key, default in defaults.items():
            v = raw.get(key, default)
            p = f"{path}.{key}"
            if key == "eigenvalues":
                if v is None:
                    raise ConfigError(p, "missing")
                v = _vector(v, p)
                if any(x <= 0 for x in v):
                    raise ConfigError(p, "eigenvalues must be positive")
            elif key == "rotation":
                v = None if v is None else _matrix(v, p)
            elif key == "rotation_deg":
                v = _number(v, p, allow_none=True)
            elif key in ("a", "theta_gen"):
                v = _vector(v, p, allow_none=key == "theta_gen")
                if v is None and key == "a":
                    raise ConfigError(p, "missing")
            elif key == "alpha":
                v = _number(v, p, positive=True)
            elif key in ("n", "d"):
                v = _integer(v, p, minimum=1)
            elif key == "data_seed":
                v = _integer(v, p, minimum=0)
            params[key] = v
        if name == "quadratic":
            d = len(params["eigenvalues"])
            if params["rotation"] is not None and len(params["rotation"]) != d:
                raise ConfigError(f"{path}.rotation", f"must be {d}x{d}")
            if params["rotation_deg"] is not None and d != 2:
                raise ConfigError(f"{path}.rotation_deg", "only defined for two dimensions")
            if params["rotation"] is not None and params["rotation_deg"] is not None:
                raise ConfigError(path, "give rotation or rotation_deg, not both")
        if name == "logistic_regression" and params["theta_gen"] is not None:
            if len(params["theta_gen"]) != params["d"]:
                raise ConfigError(f"{path}.theta_gen", f"must have length d={params['d']}")
        return cls(name, params)

    @property
    def dim(self):
        if self.name == "quadratic":
            return len(self.params["eigenvalues"])
        if self.name == "gaussian_mixture":
            return len(self.params["a"])
        if self.name == "bimodal":
            return 2
        return self.params["d"]

    def to_dict(self):
        return {"name": self.name, **copy.deepcopy(self.params)}


@dataclass(frozen=True)
class SamplerSection:
    eta: float
    beta: float = 1.0
    T: Optional[float] = None
    P: int = 10
    subsample: Optional[int] = None
    normalizer: str = "mc"

    @classmethod
    def parse(cls, raw, path="sampler"):
        raw = _mapping(raw, path)
        _reject_unknown(raw, {"eta", "beta", "T", "P", "subsample", "normalizer"}, path)
        if "eta" not in raw:
            raise ConfigError(f"{path}.eta", "missing")
        return cls(
            eta=_number(raw["eta"], f"{path}.eta", positive=True),
            beta=_number(raw.get("beta", 1.0), f"{path}.beta", positive=True),
            T=_number(raw.get("T"), f"{path}.T", positive=True, allow_none=True),
            P=_integer(raw.get("P", 10), f"{path}.P", minimum=1),
            subsample=_integer(raw.get("subsample"), f"{path}.subsample", minimum=1, allow_none=True),
            normalizer=_choice(raw.get("normalizer", "mc"), ("mc", "exact"), f"{path}.normalizer"),
        )

    def to_dict(self):
        return {
            "eta": self.eta,
            "beta": self.beta,
            "T": self.T,
            "P": self.P,
            "subsample": self.subsample,
            "normalizer": self.normalizer,
        }


@dataclass(frozen=True)
class InitSection:
    """Gaussian initialization. ``cov`` is a matrix, an isotropic variance, or ``"inverse_lipschitz"``."""

    mean: Optional[list] = None
    cov: object = 1.0

    @classmethod
    def parse(cls, raw, dim, path="init"):
        raw = _mapping(raw, path)
        _reject_unknown(raw, {"mean", "cov"}, path)
        mean = _vector(raw.get("mean"), f"{path}.mean", allow_none=True)
        if mean is not None and len(mean) != dim:
            raise ConfigError(f"{path}.mean", f"must have length {dim}")
        cov = raw.get("cov", 1.0)
        if cov == "inverse_lipschitz":
            pass
        elif isinstance(cov, (list, tuple)):
            cov = _matrix(cov, f"{path}.cov")
            if len(cov) != dim:
                raise ConfigError(f"{path}.cov", f"must be {dim}x{dim}")
            m = np.array(cov)
            if not np.allclose(m, m.T, rtol=0.0, atol=1e-12):
                raise ConfigError(f"{path}.cov", "must be symmetric")
            if np.linalg.eigvalsh(m)[0] < 0:
                raise ConfigError(f"{path}.cov", "must be positive semidefinite")
        else:
            cov = _number(cov, f"{path}.cov", positive=True)
        return cls(mean, cov)

    def to_dict(self):
        return {"mean": copy.deepcopy(self.mean), "cov": copy.deepcopy(self.cov)}


PARTICLE_FIELDS = {
    "kind",
    "name",
    "label",
    "method",
    "potential",
    "sampler",
    "n_particles",
    "n_iters",
    "init",
    "seed",
    "snapshot_stride",
    "divergence_threshold",
}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    label: str
    method: str
    potential: PotentialConfig
    sampler: SamplerSection
    n_particles: int
    n_iters: int
    init: InitSection
    seed: int = 0
    snapshot_stride: int = 10
    divergence_threshold: float = 1e8
    kind: str = "particles"

    @classmethod
    def parse(cls, raw, path=""):
        raw = _mapping(raw, path or "config")
        _reject_unknown(raw, PARTICLE_FIELDS, path)
        p = (lambda k: f"{path}.{k}" if path else k)
        if raw.get("kind", "particles") != "particles":
            raise ConfigError(p("kind"), "expected 'particles'")
        for key in ("name", "method", "potential", "sampler", "n_particles", "n_iters"):
            if key not in raw:
                raise ConfigError(p(key), "missing")
        potential = PotentialConfig.parse(raw["potential"], p("potential"))
        method = _choice(raw["method"], METHODS, p("method"))
        sampler = SamplerSection.parse(raw["sampler"], p("sampler"))
        if method == "brwp" and sampler.T is None:
            raise ConfigError(p("sampler.T"), "required for method brwp")
        if sampler.normalizer == "exact" and potential.name != "quadratic":
            raise ConfigError(p("sampler.normalizer"), "exact normalizers need a quadratic potential")
        n_particles = _integer(raw["n_particles"], p("n_particles"), minimum=1)
        if sampler.subsample is not None and sampler.subsample > n_particles:
            raise ConfigError(p("sampler.subsample"), f"exceeds n_particles={n_particles}")
        if not isinstance(raw["name"], str) or not raw["name"]:
            raise ConfigError(p("name"), "expected a nonempty string")
        label = raw.get("label", method)
        if not isinstance(label, str) or not label:
            raise ConfigError(p("label"), "expected a nonempty string")
        return cls(
            name=raw["name"],
            label=label,
            method=method,
            potential=potential,
            sampler=sampler,
            n_particles=n_particles,
            n_iters=_integer(raw["n_iters"], p("n_iters"), minimum=0),
            init=InitSection.parse(raw.get("init"), potential.dim, p("init")),
            seed=_integer(raw.get("seed", 0), p("seed"), minimum=0),
            snapshot_stride=_integer(raw.get("snapshot_stride", 10), p("snapshot_stride"), minimum=1),
            divergence_threshold=_number(
                raw.get("divergence_threshold", 1e8), p("divergence_threshold"), positive=True
            ),
        )

    def to_dict(self):
        return {
            "kind": self.kind,
            "name": self.name,
            "label": self.label,
            "method": self.method,
            "potential": self.potential.to_dict(),
            "sampler": self.sampler.to_dict(),
            "n_particles": self.n_particles,
            "n_iters": self.n_iters,
            "init": self.init.to_dict(),
            "seed": self.seed,
            "snapshot_stride": self.snapshot_stride,
            "divergence_threshold": self.divergence_threshold,
        }

    def replace(self, **changes):
        return ExperimentConfig.parse(deep_merge(self.to_dict(), changes))


ANALYTIC_DEFAULTS = {
    "recurrence_1d": {"a": 1.0, "beta": 1.0, "eta": 0.25, "mean0": 0.0, "var0": 4.0, "T_values": [0.25, 0.5, 1.0], "n_iters": 500},
    "mixing": {
        "eigenvalues": None,
        "beta": 1.0,
        "T": None,
        "T_fraction": None,
        "eta": "cap",
        "delta": 1e-3,
        "init_var": "corollary",
        "n_iters": 500,
    },
    "noncommuting": {
        "eigenvalues": None,
        "beta": 1.0,
        "T": None,
        "dt": 1e-3,
        "t_end": 20.0,
        "n_inits": 20,
        "init_eigen_range": [0.5, 4.0],
        "seed": 0,
        "record_every": 100,
    },
}


@dataclass(frozen=True)
class AnalyticConfig:
    name: str
    analysis: str
    params: dict
    kind: str = "analytic"

    @classmethod
    def parse(cls, raw, path=""):
        raw = _mapping(raw, path or "config")
        p = (lambda k: f"{path}.{k}" if path else k)
        if raw.get("kind") != "analytic":
            raise ConfigError(p("kind"), "expected 'analytic'")
        for key in ("name", "analysis"):
            if key not in raw:
                raise ConfigError(p(key), "missing")
        analysis = _choice(raw["analysis"], ANALYSES, p("analysis"))
        defaults = ANALYTIC_DEFAULTS[analysis]
        _reject_unknown(raw, set(defaults) | {"kind", "name", "analysis"}, path)
        params = {}
        for key, default in defaults.items():
            v = raw.get(key, default)
            q = p(key)
            if key in ("eigenvalues", "T_values"):
                if v is None:
                    raise ConfigError(q, "missing")
                v = _vector(v, q)
                if any(x <= 0 for x in v):
                    raise ConfigError(q, "entries must be positive")
            elif key == "init_eigen_range":
                v = _vector(v, q)
                if len(v) != 2 or not 0 < v[0] < v[1]:
                    raise ConfigError(q, "expected [low, high] with 0 < low < high")
            elif key == "eta" and v == "cap":
                pass
            elif key == "init_var" and v == "corollary":
                pass
            elif key in ("T", "T_fraction"):
                v = _number(v, q, positive=True, allow_none=True)
            elif key in ("n_iters", "n_inits", "record_every", "seed"):
                v = _integer(v, q, minimum=0 if key == "seed" else 1)
            elif key in ("mean0",):
                v = _number(v, q)
            elif key in ("a",):
                v = _number(v, q, nonneg=True)
            else:
                v = _number(v, q, positive=True)
            params[key] = v
        if analysis == "mixing":
            if (params["T"] is None) == (params["T_fraction"] is None):
                raise ConfigError(p("T"), "give exactly one of T and T_fraction")
            if params["delta"] >= 1:
                raise ConfigError(p("delta"), "must be below 1")
        if analysis == "noncommuting" and params["T"] is None:
            raise ConfigError(p("T"), "missing")
        return cls(raw["name"], analysis, params)

    def to_dict(self):
        return {"kind": self.kind, "name": self.name, "analysis": self.analysis, **copy.deepcopy(self.params)}


# ---------------------------------------------------------------- files


def parse_config(raw, path=""):
    raw = _mapping(raw, path or "config")
    if raw.get("kind") == "analytic":
        return AnalyticConfig.parse(raw, path)
    return ExperimentConfig.parse(raw, path)


def expand_suite(raw):
    """List of configs from a file body: a single config, or ``base`` plus ``variants``."""
    raw = _mapping(raw, "config")
    if "base" not in raw and "variants" not in raw:
        return [parse_config(raw)]
    _reject_unknown(raw, {"base", "variants"}, "")
    base = _mapping(raw.get("base"), "base")
    variants = raw.get("variants") or [{}]
    if not isinstance(variants, list):
        raise ConfigError("variants", "expected a list")
    configs = []
    for i, var in enumerate(variants):
        var = _mapping(var, f"variants[{i}]")
        configs.append(parse_config(deep_merge(base, var), f"variants[{i}]"))
    labels = [getattr(c, "label", c.name) for c in configs]
    if len(set(labels)) != len(labels):
        raise ConfigError("variants", f"labels must be unique, got {labels}")
    return configs


def load_file(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"{path} is not valid YAML: {exc}") from None
    return expand_suite(raw)


def dump_yaml(config):
    return yaml.safe_dump(config.to_dict(), sort_keys=True, default_flow_style=None)


def loads_yaml(text):
    return parse_config(yaml.safe_load(text))


def canonical_json(config):
    return json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))


def run_id(config):
    """Content hash of the canonical configuration."""
    return hashlib.sha1(canonical_json(config).encode()).hexdigest()[:12]


PRESET_DIR = Path(__file__).parent / "presets"


def preset_names():
    return sorted(p.stem for p in PRESET_DIR.glob("*.yaml"))


def load_preset(name):
    path = PRESET_DIR / f"{name}.yaml"
    if not path.exists():
        raise ConfigError("preset", f"unknown preset {name!r}; available: {preset_names()}")
    return load_file(path)
