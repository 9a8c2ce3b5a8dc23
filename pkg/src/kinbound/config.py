"""YAML run configuration.

Top-level keys (see README for a complete example):

    format_version: 1
    seed: 12345
    regime: cutoff | noncutoff
    tau: 0.5
    kernel: {preset, dimension, gamma, nu, b0, b, c_phi, C_phi, mollified, profile_table}
    bounds: {rho_min, E, Eprime, H, Lp_value, p_exponent, W} | {from_bkw: {S0, t_start, rate}}
    constants: {cst_CL, cst_spread, cst_up, cst_S, cst_Q1} | {calibration: path}
    delta0_rule: {kind, value, kappa0, kappa1}
    cascade: {xi, n_max, xi_exponent_mode, early_stop}
    schedule: {kappa, beta, alpha_sched, beta_geo, n_max, xi, xi_exponent_mode}
    calibrate: {...}
    verify: {...}
    outputs: {certificate, trace, calibration, report}
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import yaml

from .bounds import AprioriBounds
from .cutoff import CascadeConfig
from .errors import ConfigError
from .kernel import (CollisionKernel, hard_spheres, load_profile_table,
                     maxwell_molecules, power_law_kernel)
from .noncutoff import ScheduleConfig
from .upheaval import DeltaRule, UniversalConstants

CONFIG_FORMAT_VERSION = 1

DEFAULT_OUTPUTS = {"certificate": "certificate.json", "trace": "trace.csv",
                   "calibration": "calibration.json", "report": "report.json"}

_TOP_KEYS = {"format_version", "seed", "regime", "tau", "kernel", "bounds", "constants", "delta0_rule",
             "cascade", "schedule", "calibrate", "verify", "outputs"}


@dataclass
class RunConfig:
    raw: dict
    seed: int
    regime: str | None
    tau: float | None
    base_dir: str = "."
    outputs: dict = field(default_factory=lambda: dict(DEFAULT_OUTPUTS))

    def section(self, name):
        return self.raw.get(name) or {}

    def path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)


def _field(d, key, where, kind=float, default=None, required=False):
    if key not in d or d[key] is None:
        if required:
            raise ConfigError(f"{where}.{key}: required field missing")
        return default
    val = d[key]
    try:
        if kind is bool:
            if not isinstance(val, bool):
                raise TypeError
            return val
        if kind is int:
            if isinstance(val, bool) or int(val) != val:
                raise TypeError
            return int(val)
        if kind is float:
            if isinstance(val, bool):
                raise TypeError
            out = float(val)
            if math.isnan(out):
                raise TypeError
            return out
        return kind(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got {val!r}") from None


def load_config(path, seed_override=None):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, os.path.dirname(os.path.abspath(path)), seed_override, path)


def parse_config(text, base_dir=".", seed_override=None, name="<config>"):
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ConfigError(f"{name}:{where} YAML parse error: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: top level must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{name}: unknown top-level field(s) {sorted(unknown)}")
    ver = raw.get("format_version")
    if ver != CONFIG_FORMAT_VERSION:
        raise ConfigError(f"{name}: format_version must be {CONFIG_FORMAT_VERSION}, got {ver!r}")
    seed = _field(raw, "seed", "config", int, default=None)
    if seed_override is not None:
        seed = int(seed_override)
    if seed is None:
        raise ConfigError("config.seed: required field missing")
    if not (0 <= seed < 2 ** 64):
        raise ConfigError("config.seed: must be a 64-bit unsigned integer")
    regime = raw.get("regime")
    if regime is not None and regime not in ("cutoff", "noncutoff"):
        raise ConfigError(f"config.regime: expected 'cutoff' or 'noncutoff', got {regime!r}")
    tau = _field(raw, "tau", "config", float)
    outputs = dict(DEFAULT_OUTPUTS)
    outputs.update(raw.get("outputs") or {})
    return RunConfig(raw, seed, regime, tau, base_dir, outputs)


def build_kernel(cfg: RunConfig):
    k = cfg.section("kernel")
    if not k:
        raise ConfigError("config.kernel: required section missing")
    where = "kernel"
    preset = k.get("preset", "power_law")
    N = _field(k, "dimension", where, int, default=3)
    opts = {"c_phi": _field(k, "c_phi", where, float, 1.0), "C_phi": _field(k, "C_phi", where, float, 1.0),
            "mollified": _field(k, "mollified", where, bool, False)}
    try:
        if preset == "hard_spheres":
            return hard_spheres(N, b=_field(k, "b", where, float, 1.0), gamma=_field(k, "gamma", where, float, 1.0),
                                **opts)
        if preset == "maxwell_molecules":
            return maxwell_molecules(N, b=_field(k, "b", where, float, 1.0), **opts)
        if preset == "maxwell_normalized":
            from .verifier import normalized_maxwell_kernel
            return normalized_maxwell_kernel(N)
        if preset == "power_law":
            return power_law_kernel(N, _field(k, "gamma", where, float, required=True),
                                    _field(k, "nu", where, float, required=True),
                                    _field(k, "b0", where, float, 1.0), **opts)
        if preset == "table":
            table = k.get("profile_table")
            if not table:
                raise ConfigError("kernel.profile_table: required for preset 'table'")
            prof = load_profile_table(cfg.path(table))
            return CollisionKernel(N, _field(k, "gamma", where, float, required=True),
                                   _field(k, "nu", where, float, required=True),
                                   _field(k, "b0", where, float, 1.0), profile=prof,
                                   profile_name=f"table:{table}", **opts)
    except ValueError as exc:
        raise ConfigError(f"kernel: {exc}") from None
    raise ConfigError(f"kernel.preset: unknown preset {preset!r}")


def build_bounds(cfg: RunConfig):
    b = cfg.section("bounds")
    if not b:
        raise ConfigError("config.bounds: required section missing")
    if "from_bkw" in b:
        from .verifier import BKWState, bkw_bounds
        d = b["from_bkw"] or {}
        st = BKWState(_field(d, "dimension", "bounds.from_bkw", int, 3),
                      _field(d, "S0", "bounds.from_bkw", float, required=True),
                      _field(d, "rate", "bounds.from_bkw", float, 1.0))
        return bkw_bounds(st, _field(d, "t_start", "bounds.from_bkw", float, 0.0))
    where = "bounds"
    return AprioriBounds(_field(b, "rho_min", where, required=True), _field(b, "E", where, required=True),
                         _field(b, "Eprime", where), _field(b, "H", where), _field(b, "Lp_value", where),
                         _field(b, "p_exponent", where), _field(b, "W", where))


def build_constants(cfg: RunConfig):
    c = cfg.section("constants")
    if "calibration" in c:
        p = cfg.path(c["calibration"])
        try:
            with open(p) as fh:
                data = json.load(fh)
        except OSError:
            raise ConfigError(f"constants.calibration: cannot read {p}") from None
        csts = data.get("constants")
        if not isinstance(csts, dict):
            raise ConfigError(f"constants.calibration: {p} has no constants block")
        c = dict(csts, **{k: v for k, v in c.items() if k != "calibration"})
        c.setdefault("source", f"calibration:{os.path.basename(p)}")
    where = "constants"
    return UniversalConstants(_field(c, "cst_CL", where, float, 1.0), _field(c, "cst_spread", where, float, 1.0),
                              _field(c, "cst_up", where, float, 1.0), _field(c, "cst_S", where, float, 1.0),
                              _field(c, "cst_Q1", where, float, 1.0), str(c.get("source", "config")))


def build_delta_rule(cfg: RunConfig):
    d = cfg.section("delta0_rule")
    if not d:
        return DeltaRule()
    where = "delta0_rule"
    return DeltaRule(d.get("kind", "entropy"), _field(d, "value", where), _field(d, "kappa0", where, float, 0.5),
                     _field(d, "kappa1", where, float, 0.5))


def build_cascade(cfg: RunConfig):
    c = cfg.section("cascade")
    where = "cascade"
    try:
        return CascadeConfig(_field(c, "xi", where, float, 0.5), _field(c, "n_max", where, int, 48),
                             c.get("xi_exponent_mode", "stated"), _field(c, "early_stop", where, bool, True))
    except ValueError as exc:
        raise ConfigError(f"cascade: {exc}") from None


def build_schedule(cfg: RunConfig):
    s = cfg.section("schedule")
    where = "schedule"
    return ScheduleConfig(_field(s, "kappa", where, float, 4.5), _field(s, "beta", where, float, 2.25),
                          _field(s, "alpha_sched", where, float, 0.5), _field(s, "beta_geo", where, float, 0.1),
                          _field(s, "n_max", where, int, 48), _field(s, "xi", where, float, 0.5),
                          s.get("xi_exponent_mode", "stated"))
