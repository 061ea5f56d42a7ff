"""Flat ``key = value`` experiment configuration.

Each experiment declares the keys it reads; anything else is rejected.
Values are parsed by kind and range-checked. Lists are comma separated,
point lists separate points with ``;``. ``--set key=value`` overrides are
applied after the file.
"""

import inspect
import math
from dataclasses import dataclass, field
from typing import Optional

from .geometry import DOMAINS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Key:
    name: str
    kind: str
    default: object
    lo: Optional[float] = None
    hi: Optional[float] = None
    choices: tuple = ()
    doc: str = ""


KINDS = ("int", "float", "str", "ints", "floats", "point", "points")


def _scalar(kind, text, key):
    try:
        if kind == "int":
            v = float(text)
            if not v.is_integer():
                raise ValueError
            return int(v)
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None


def parse_value(key: Key, text: str):
    text = text.strip()
    if key.kind == "str":
        v = text
    elif key.kind in ("int", "float"):
        v = _scalar(key.kind, text, key.name)
    elif key.kind in ("ints", "floats", "point"):
        parts = [p for p in text.strip("()[] ").replace(" ", "").split(",") if p]
        if not parts:
            raise ConfigError(f"{key.name}: empty list")
        v = tuple(_scalar("int" if key.kind == "ints" else "float", p, key.name) for p in parts)
    elif key.kind == "points":
        v = tuple(parse_value(Key(key.name, "point", None), p) for p in text.split(";") if p.strip())
        if not v:
            raise ConfigError(f"{key.name}: empty point list")
    else:
        raise ConfigError(f"{key.name}: unknown kind {key.kind}")
    check_value(key, v)
    return v


def format_value(v) -> str:
    """Inverse of parse_value: lists comma-separated, point lists ';'-separated."""
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(format_value(p) for p in v)
        return ", ".join(repr(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _numbers(key, v):
    """Range-checked numbers; point coordinates are not range-checked."""
    if key.kind in ("int", "float"):
        return [v]
    if key.kind in ("ints", "floats"):
        return list(v)
    return []


def _coordinates(key, v):
    if key.kind == "point":
        return list(v)
    if key.kind == "points":
        return [c for p in v for c in p]
    return []


def check_value(key: Key, v):
    if v is None:
        return
    if key.kind == "str":
        if key.choices and v not in key.choices:
            raise ConfigError(f"{key.name}: {v!r} not in {list(key.choices)}")
        return
    if key.kind == "point" and len(v) != 3:
        raise ConfigError(f"{key.name}: a point has 3 coordinates (n = 1)")
    if key.kind == "points":
        for p in v:
            check_value(Key(key.name, "point", None), p)
    for x in _numbers(key, v) + _coordinates(key, v):
        if not math.isfinite(x):
            raise ConfigError(f"{key.name}: non-finite value")
    for x in _numbers(key, v):
        if key.lo is not None and x < key.lo:
            raise ConfigError(f"{key.name}: {x} below {key.lo}")
        if key.hi is not None and x > key.hi:
            raise ConfigError(f"{key.name}: {x} above {key.hi}")


def read_pairs(text: str, source: str = "config"):
    """``key = value`` pairs from config text; ``#`` starts a comment."""
    out = {}
    for k, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{k}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{k}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{k}: duplicate key {key}")
        out[key] = val
    return out


def parse_overrides(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def domain_keys(name: str):
    """Accepted ``domain.*`` parameters, taken from the factory signature."""
    if name not in DOMAINS:
        raise ConfigError(f"unknown domain {name!r}; known: {sorted(DOMAINS)}")
    keys = {}
    for p in inspect.signature(DOMAINS[name]).parameters.values():
        if p.name == "n":
            continue
        if p.name == "center":
            keys["domain.center"] = Key("domain.center", "point", None)
        else:
            default = None if p.default is inspect.Parameter.empty else p.default
            # the factories validate their own arguments
            keys[f"domain.{p.name}"] = Key(f"domain.{p.name}", "float", default)
    return keys


@dataclass
class ExperimentConfig:
    experiment: str
    values: dict
    out: Optional[str] = None
    domain: Optional[str] = None
    domain_params: dict = field(default_factory=dict)
    threads: Optional[int] = None

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def params(self) -> dict:
        """Resolved parameters for the summary; the thread count is excluded."""
        out = {k: _jsonable(v) for k, v in sorted(self.values.items())}
        if self.domain is not None:
            out["domain"] = self.domain
            for k, v in sorted(self.domain_params.items()):
                out[f"domain.{k}"] = _jsonable(v)
        return out


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def load_config(experiment: str, keys: dict, text: str = "", overrides=None, out=None,
                uses_domain: bool = False, source: str = "config") -> ExperimentConfig:
    """Resolve a config against the experiment's key table."""
    pairs = read_pairs(text, source)
    pairs.update(parse_overrides(overrides))
    named = pairs.pop("experiment", None)
    if named is not None and named.strip() != experiment:
        raise ConfigError(f"config is for {named.strip()!r}, not {experiment!r}")
    threads = pairs.pop("threads", None)
    if threads is not None:
        threads = parse_value(Key("threads", "int", None, lo=1, hi=256), threads)
    domain, dparams = None, {}
    if uses_domain:
        domain = pairs.pop("domain", "gauge_ball").strip()
        dkeys = domain_keys(domain)
        for k in [k for k in pairs if k.startswith("domain.")]:
            if k not in dkeys:
                raise ConfigError(f"unknown key {k} for domain {domain}")
            dparams[k[len("domain."):]] = parse_value(dkeys[k], pairs.pop(k))
    values = {}
    for k, text_value in pairs.items():
        if k not in keys:
            raise ConfigError(f"unknown key {k!r} for {experiment}; known: {sorted(keys)}")
        values[k] = parse_value(keys[k], text_value)
    for k, key in keys.items():
        if k not in values:
            check_value(key, key.default)
            values[k] = key.default
    return ExperimentConfig(experiment, values, out, domain, dparams, threads)
