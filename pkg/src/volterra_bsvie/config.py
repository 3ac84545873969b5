"""INI run configuration: sections ``problem grids mc picard pde output``."""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields
from typing import Optional

from .errors import ConfigurationError, ExpressionError
from .expr import Expression
from .problems import PRESETS, ScalarProblem, parse_control

__all__ = ["RunConfig", "parse_config", "OUTPUT_ROOT_ENV"]

OUTPUT_ROOT_ENV = "VOLTERRA_BSVIE_OUTPUT_ROOT"

_EXPR_KEYS = ("sigma", "f", "xi", "b", "bar_f", "ds_f", "dy_f", "dz_f", "ds_xi")
_PROBLEM_KEYS = set(_EXPR_KEYS) | {"preset", "control", "x0", "lipschitz_f", "lipschitz_ds_f", "solver"}

# section -> key -> (RunConfig field, converter)
_SCHEMA = {
    "grids": {"T": ("T", float), "M": ("M", int), "J": ("J", int), "dx": ("dx", float),
              "x_lo": ("x_lo", float), "x_hi": ("x_hi", float)},
    "mc": {"n_paths": ("n_paths", int), "seed": ("seed", int), "degree": ("degree", int)},
    "picard": {"tol": ("tol", float), "max_iter": ("max_iter", int)},
    "pde": {"enable": ("pde_enable", "bool"), "substeps": ("substeps", int), "max_exit": ("max_exit", float)},
    "output": {"directory": ("output_dir", str), "formats": ("formats", "list")},
}
_FORMATS = ("json", "csv")


@dataclass(frozen=True)
class RunConfig:
    problem: ScalarProblem
    T: float = 1.0
    M: int = 200
    J: Optional[int] = None
    n_paths: int = 1000
    seed: int = 0
    degree: int = 2
    tol: float = 1e-6
    max_iter: int = 50
    pde_enable: bool = False
    dx: float = 0.05
    x_lo: Optional[float] = None
    x_hi: Optional[float] = None
    substeps: Optional[int] = None
    max_exit: float = 0.05
    output_dir: Optional[str] = None
    formats: tuple = _FORMATS

    def __post_init__(self):
        if self.J is None:
            object.__setattr__(self, "J", self.M)
        checks = [
            (self.T > 0, "grids.T must be > 0"),
            (self.M >= 1, "grids.M must be >= 1"),
            (self.J == self.M, "grids.J must equal grids.M (aligned parameter and time grids)"),
            (self.n_paths >= 1, "mc.n_paths must be >= 1"),
            (0 <= self.seed < 2**64, "mc.seed must lie in [0, 2^64)"),
            (self.degree >= 0, "mc.degree must be >= 0"),
            (self.tol > 0, "picard.tol must be > 0"),
            (self.max_iter >= 1, "picard.max_iter must be >= 1"),
            (self.dx > 0, "grids.dx must be > 0"),
            (self.substeps is None or self.substeps >= 1, "pde.substeps must be >= 1"),
            (0 <= self.max_exit <= 1, "pde.max_exit must lie in [0, 1]"),
            ((self.x_lo is None) == (self.x_hi is None), "grids.x_lo and grids.x_hi go together"),
            (self.x_lo is None or self.x_hi is None or self.x_lo < self.x_hi, "grids.x_lo must be < grids.x_hi"),
            (set(self.formats) <= set(_FORMATS), f"output.formats must be a subset of {', '.join(_FORMATS)}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigurationError(msg)

    @property
    def name(self) -> str:
        return self.problem.preset or "inline"

    def output_path(self) -> str:
        root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
        sub = self.output_dir or self.name
        return sub if os.path.isabs(sub) else os.path.join(root, sub)

    def as_dict(self) -> dict:
        """Canonical, JSON-ready view (expressions printed in simplified form)."""
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "problem":
                p = {}
                for pf in fields(val):
                    pv = getattr(val, pf.name)
                    if isinstance(pv, Expression):
                        pv = str(pv)
                    elif isinstance(pv, tuple):
                        pv = list(pv)
                    p[pf.name] = pv
                val = p
            elif isinstance(val, tuple):
                val = list(val)
            out[f.name] = val
        return out


def _to_bool(key, text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"{key}: expected a boolean, got {text!r}")


def _convert(key, text, conv):
    if conv == "bool":
        return _to_bool(key, text)
    if conv == "list":
        return tuple(p.strip() for p in str(text).split(",") if p.strip())
    try:
        if conv is int:
            val = float(text)
            if val != int(val):
                raise ValueError
            return int(val)
        return conv(text)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key}: cannot convert {text!r} to {conv.__name__}") from None


def _build_problem(keys: dict) -> ScalarProblem:
    preset = keys.pop("preset", None)
    merged = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"problem.preset: unknown preset {preset!r}; see the 'presets' command")
        merged.update(PRESETS[preset]["problem"])
    merged.update(keys)
    if "f" not in merged and "bar_f" not in merged:
        raise ConfigurationError("problem.preset or problem.f required")
    for req in ("sigma", "xi"):
        if req not in merged:
            raise ConfigurationError(f"missing key '{req}' in section [problem]")
    kw = {}
    for k, v in merged.items():
        if k in _EXPR_KEYS:
            try:
                kw[k] = Expression(v)
            except ExpressionError as exc:
                err = ExpressionError(f"problem.{k}: {exc.args[0]}")
                err.position = exc.position
                raise err from None
        elif k == "control":
            kw[k] = parse_control(v)
        elif k in ("x0", "lipschitz_f", "lipschitz_ds_f"):
            kw[k] = _convert(f"problem.{k}", v, float)
        else:
            kw[k] = str(v).strip()
    return ScalarProblem(preset=preset or "", **kw)


def parse_config(source) -> RunConfig:
    """Parse a path or INI text into a :class:`RunConfig`."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str
    if isinstance(source, os.PathLike) or (isinstance(source, str) and "\n" not in source
                                           and "[" not in source):
        try:
            with open(source, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {source}: {exc.strerror}") from None
    else:
        text = source
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None

    known = {"problem"} | set(_SCHEMA)
    for sec in cp.sections():
        if sec not in known:
            raise ConfigurationError(f"unknown section [{sec}]")
    pkeys = dict(cp["problem"]) if cp.has_section("problem") else {}
    for k in pkeys:
        if k not in _PROBLEM_KEYS:
            raise ConfigurationError(f"unknown key '{k}' in section [problem]")
    problem = _build_problem(dict(pkeys))

    values = {}
    preset = PRESETS.get(problem.preset, {}) if problem.preset else {}
    layers = [preset.get("defaults", {})]
    layers.append({sec: dict(cp[sec]) for sec in _SCHEMA if cp.has_section(sec)})
    for layer in layers:
        for sec, entries in layer.items():
            for k, v in entries.items():
                if k not in _SCHEMA[sec]:
                    raise ConfigurationError(f"unknown key '{k}' in section [{sec}]")
                name, conv = _SCHEMA[sec][k]
                values[name] = _convert(f"{sec}.{k}", v, conv)
    if "M" in values and "J" not in values:
        values["J"] = values["M"]
    return RunConfig(problem=problem, **values)
