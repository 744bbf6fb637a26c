"""Flat typed configuration files for the experiment runner.

Grammar: one ``key = value`` pair per line; blank lines and ``#`` comments
ignored; keys from the fixed schema below; values typed (string, int, float,
comma-separated int list). Unknown keys, duplicates, missing required keys
and type errors all raise :class:`ConfigError`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .exprs import ExprError, ValidationFailed
from .model import Domain, ModelSpec, MutationLaw, ScalingParams


class ConfigError(ValueError):
    """Invalid configuration file (unknown key, bad type, bad combination)."""


def _parse_int_list(text):
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as err:
        raise ConfigError(f"bad integer list {text!r}") from err


# key -> (converter, default); required keys have default _REQUIRED
_REQUIRED = object()

_SCHEMA = {
    # model block
    "b": (str, _REQUIRED),
    "theta": (str, _REQUIRED),
    "mutation_family": (str, "uniform"),
    "mutation_half_width": (float, 1.0),
    "mutation_scale": (str, None),
    "domain_kind": (str, "line"),
    "domain_center": (float, 0.0),
    "domain_half_width": (float, 0.0),
    # scaling block
    "K": (int, None),
    "K_list": (_parse_int_list, None),
    "sigma": (float, None),
    "sigma_rule": (str, None),
    "eps": (float, 0.5),
    "T_slow": (float, 1.0),
    "x0": (float, 0.0),
    # run block
    "seed": (int, 0),
    "replicates": (int, 1),
    "n_obs": (int, 513),
    "budget": (int, 2_000_000_000),
    # frozen fast-component block
    "n_particles": (int, 200),
    "fv_horizon": (float, 200.0),
    "burn_in_frac": (float, 0.2),
    # dual block
    "dual_lambda": (float, None),
    "dual_t": (float, 0.1),
    "dual_reps": (int, 100_000),
}

_SIGMA_RULE_RE = re.compile(r"^K\^\(?-(?P<a>[0-9]*\.?[0-9]+)\)?$")


@dataclass
class RunConfig:
    """Validated key/value configuration."""

    values: dict
    path: str = "<memory>"

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key)

    def sigma_for(self, K):
        """Resolve the mutation amplitude for population size K."""
        if self.values["sigma"] is not None:
            return self.values["sigma"]
        match = _SIGMA_RULE_RE.match(self.values["sigma_rule"])
        return float(K) ** -float(match.group("a"))

    def K_values(self):
        if self.values["K_list"] is not None:
            return list(self.values["K_list"])
        return [self.values["K"]]


def parse_config_text(text, path="<memory>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        conv, _default = _SCHEMA[key]
        try:
            values[key] = conv(val)
        except ConfigError:
            raise
        except (TypeError, ValueError) as err:
            raise ConfigError(
                f"{path}:{lineno}: bad value {val!r} for {key!r}: {err}"
            ) from err
    for key, (_conv, default) in _SCHEMA.items():
        if key in values:
            continue
        if default is _REQUIRED:
            raise ConfigError(f"{path}: missing required key {key!r}")
        values[key] = default
    _validate(values, path)
    return RunConfig(values=values, path=path)


def _validate(values, path):
    has_sigma = values["sigma"] is not None
    has_rule = values["sigma_rule"] is not None
    if has_sigma == has_rule:
        raise ConfigError(
            f"{path}: exactly one of 'sigma' and 'sigma_rule' is required"
        )
    if has_rule and not _SIGMA_RULE_RE.match(values["sigma_rule"]):
        raise ConfigError(
            f"{path}: sigma_rule must look like 'K^-1.6', got "
            f"{values['sigma_rule']!r}"
        )
    if has_sigma and not (values["sigma"] > 0 and math.isfinite(values["sigma"])):
        raise ConfigError(f"{path}: sigma must be positive and finite")
    if values["K"] is None and values["K_list"] is None:
        raise ConfigError(f"{path}: one of 'K' or 'K_list' is required")
    if values["domain_kind"] not in ("line", "torus"):
        raise ConfigError(f"{path}: domain_kind must be 'line' or 'torus'")
    if values["domain_kind"] == "torus" and not values["domain_half_width"] > 0:
        raise ConfigError(f"{path}: torus domain needs domain_half_width > 0")
    if values["replicates"] < 1:
        raise ConfigError(f"{path}: replicates must be >= 1")


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path!r}: {err}") from err
    return parse_config_text(text, path=str(path))


def build_model(cfg: RunConfig):
    """ModelSpec from a config; validation failures propagate as ConfigError."""
    try:
        mutation = MutationLaw(
            family=cfg.mutation_family,
            half_width=cfg.mutation_half_width,
            scale_source=cfg.mutation_scale,
        )
        domain = Domain(
            kind=cfg.domain_kind,
            center=cfg.domain_center,
            half_width=cfg.domain_half_width,
        )
        return ModelSpec(cfg.b, cfg.theta, mutation, domain)
    except (ExprError, ValidationFailed) as err:
        raise ConfigError(f"{cfg.path}: {err}") from err


def build_params(cfg: RunConfig, K=None):
    K = cfg.values["K"] if K is None else K
    try:
        return ScalingParams(
            K=K, sigma=cfg.sigma_for(K), eps=cfg.eps, T_slow=cfg.T_slow
        )
    except ExprError as err:
        raise ConfigError(f"{cfg.path}: {err}") from err
