"""Experiment configuration files.

A configuration is plain key-value text in named sections: experiment
settings plus mesh, metric, coefficients, boundary, check, sequence,
and cutoff parameters. Parsing is strict: unknown sections, duplicate
keys, and malformed expressions are reported with the full field path.
Serialization is canonical, so parse -> serialize -> parse is the
identity and a sha256 digest of the canonical text identifies the run
in every emitted file.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from .expressions import ExpressionError, family_from_expression, parse_field
from .meshes import build_mesh
from .metrics import flat_circle_family
from .solver import Coefficients, ProblemSpec

EXPERIMENT_KINDS = ("solve", "kernel", "verify-mass", "verify-mvi",
                    "verify-cutoff", "verify-duality", "verify-delta",
                    "cg-run")

SECTIONS = ("experiment", "mesh", "metric", "coefficients", "boundary",
            "check", "sequence", "cutoff")

_REQUIRED = object()


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the field path."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed configuration: section name -> ordered key/value pairs."""

    sections: tuple  # ((name, ((key, value), ...)), ...)

    def section(self, name: str) -> dict:
        for sect, pairs in self.sections:
            if sect == name:
                return dict(pairs)
        return {}

    def get(self, section: str, key: str, default=_REQUIRED) -> str:
        pairs = self.section(section)
        if key in pairs:
            return pairs[key]
        if default is _REQUIRED:
            raise ConfigError(f"{section}.{key}: required key is missing")
        return default

    @property
    def kind(self) -> str | None:
        return self.section("experiment").get("kind")

    def replace(self, section: str, key: str, value: str) -> "ExperimentConfig":
        """A copy with one key set, appending the section if absent."""
        out, seen = [], False
        for sect, pairs in self.sections:
            if sect != section:
                out.append((sect, pairs))
                continue
            seen = True
            items = [(k, value if k == key else v) for k, v in pairs]
            if key not in dict(pairs):
                items.append((key, value))
            out.append((sect, tuple(items)))
        if not seen:
            out.append((section, ((key, value),)))
        return ExperimentConfig(sections=tuple(out))


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#",), strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from exc
    sections = []
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"{name}: unknown section")
        pairs = tuple((k, " ".join(v.split())) for k, v in parser[name].items())
        sections.append((name, pairs))
    cfg = ExperimentConfig(sections=tuple(sections))
    kind = cfg.kind
    if kind is not None and kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"experiment.kind: unknown kind {kind!r}")
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text: sections in declaration order, one key per line."""
    out = io.StringIO()
    known = [s for s in SECTIONS for name, _ in cfg.sections if name == s]
    done = set()
    for name in known:
        if name in done:
            raise ConfigError(f"{name}: duplicate section")
        done.add(name)
        out.write(f"[{name}]\n")
        for key, value in dict(cfg.sections)[name]:
            out.write(f"{key} = {value}\n")
        out.write("\n")
    return out.getvalue()


def read_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:12]


def apply_overrides(cfg: ExperimentConfig, grid: int | None = None,
                    dt: str | None = None, tols: dict | None = None,
                    k_max: int | None = None) -> ExperimentConfig:
    """Fold command-line overrides into the configuration."""
    if grid is not None:
        cfg = cfg.replace("mesh", "nodes", str(int(grid)))
    if dt is not None:
        cfg = cfg.replace("experiment", "dt", str(dt))
    if k_max is not None:
        cfg = cfg.replace("sequence", "k_max", str(int(k_max)))
    for name, value in (tols or {}).items():
        cfg = cfg.replace("check", name, str(value))
    return cfg


# ------------------------------------------------------------ typed access

def get_float(cfg: ExperimentConfig, section: str, key: str,
              default=_REQUIRED) -> float:
    raw = cfg.get(section, key, default)
    if not isinstance(raw, str):
        return raw
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: not a number: {raw!r}") from exc


def get_int(cfg: ExperimentConfig, section: str, key: str,
            default=_REQUIRED) -> int:
    raw = cfg.get(section, key, default)
    if not isinstance(raw, str):
        return raw
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: not an integer: {raw!r}") from exc


def get_choice(cfg: ExperimentConfig, section: str, key: str, choices,
               default=_REQUIRED) -> str:
    raw = cfg.get(section, key, default)
    if raw not in choices:
        raise ConfigError(f"{section}.{key}: {raw!r} is not one of "
                          f"{', '.join(choices)}")
    return raw


def get_floats(cfg: ExperimentConfig, section: str, key: str,
               default=_REQUIRED) -> tuple:
    raw = cfg.get(section, key, default)
    if not isinstance(raw, str):
        return raw
    try:
        return tuple(float(p) for p in raw.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: not a number list: "
                          f"{raw!r}") from exc


def get_expression(cfg: ExperimentConfig, section: str, key: str, dim: int,
                   default=_REQUIRED):
    raw = cfg.get(section, key, default)
    if raw is default and default is not _REQUIRED:
        return raw
    try:
        return parse_field(raw, dim=dim)
    except ExpressionError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from exc


# ------------------------------------------------------------- assemblers

def build_mesh_from(cfg: ExperimentConfig):
    topology = get_choice(cfg, "mesh", "topology",
                          ("circle", "interval", "torus2"))
    extent = get_floats(cfg, "mesh", "extent")
    nodes_raw = cfg.get("mesh", "nodes")
    try:
        nodes = tuple(int(p) for p in nodes_raw.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"mesh.nodes: not an integer list: "
                          f"{nodes_raw!r}") from exc
    origin = get_float(cfg, "mesh", "origin", 0.0)
    try:
        return build_mesh(topology, extent, nodes, origin=origin)
    except ValueError as exc:
        raise ConfigError(f"mesh: {exc}") from exc


def build_family_from(cfg: ExperimentConfig, mesh):
    kind = get_choice(cfg, "metric", "kind", ("density", "conformal"),
                      "density")
    if mesh.dim == 2 and kind != "conformal":
        raise ConfigError("metric.kind: two-dimensional meshes need a "
                          "conformal metric")
    if mesh.dim == 1 and kind != "density":
        raise ConfigError("metric.kind: one-dimensional meshes need a "
                          "density metric")
    text = cfg.get("metric", "expression", None)
    if text is None:
        if mesh.dim == 2:
            text = "0"
        else:
            return flat_circle_family()
    try:
        return family_from_expression(kind, text)
    except ExpressionError as exc:
        raise ConfigError(f"metric.expression: {exc}") from exc


def build_coefficients_from(cfg: ExperimentConfig, dim: int) -> Coefficients:
    potential = cfg.get("coefficients", "potential", None)
    if potential is not None and potential != "trace":
        potential = get_expression(cfg, "coefficients", "potential", dim)
    drift = None
    names = ("drift_x", "drift_y")[:dim]
    exprs = [get_expression(cfg, "coefficients", n, dim, None) for n in names]
    if any(e is not None for e in exprs):
        zero = parse_field("0", dim=dim)
        drift = tuple(e if e is not None else zero for e in exprs)
    return Coefficients(drift=drift, potential=potential)


def build_problem(cfg: ExperimentConfig) -> ProblemSpec:
    mesh = build_mesh_from(cfg)
    family = build_family_from(cfg, mesh)
    coefficients = build_coefficients_from(cfg, mesh.dim)
    boundary = get_choice(cfg, "boundary", "kind",
                          ("closed", "dirichlet0", "neumann"),
                          "closed" if mesh.closed else "dirichlet0")
    width = get_float(cfg, "experiment", "delta_width", None)
    try:
        return ProblemSpec(
            mesh=mesh, family=family, coefficients=coefficients,
            boundary=boundary,
            dt=get_float(cfg, "experiment", "dt"),
            horizon=get_float(cfg, "experiment", "horizon"),
            x0=get_int(cfg, "experiment", "x0", 0),
            delta_width=width)
    except ValueError as exc:
        raise ConfigError(f"experiment: {exc}") from exc
