"""TOML configuration files for the solvers.

A solver file holds top-level scalars named after :class:`SolverConfig`
fields plus optional ``[penalty]`` and ``[geometry]`` tables::

    lam = 1e-3
    beta_init = 1e-5
    T_init = 200.0

    [penalty]
    kind = "lp_thresholded"
    p = 0.5
    T = 10.0

    [geometry]
    patch_radius = 1
    search_radius = 1

The same layout feeds :class:`IrwConfig`; keys that do not apply are an error.
"""

from __future__ import annotations

import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .grid import PatchGeometry
from .irw import IrwConfig
from .penalties import PenaltySpec
from .solver import SolverConfig


class ConfigError(ValueError):
    pass


class ConfigFileError(ConfigError):
    """The file exists but is not valid TOML."""


def read_toml(path) -> dict[str, Any]:
    with open(Path(path), "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigFileError(f"{path}: {exc}") from None


def penalty_from_mapping(data: Mapping[str, Any]) -> PenaltySpec:
    data = dict(data)
    if "kind" not in data:
        raise ConfigError("penalty needs a 'kind'")
    unknown = set(data) - {"kind", "p", "T", "sigma"}
    if unknown:
        raise ConfigError(f"unknown penalty keys: {sorted(unknown)}")
    return PenaltySpec(**data)


def geometry_from_mapping(data: Mapping[str, Any] | None) -> PatchGeometry:
    if not data:
        return PatchGeometry.square()
    data = dict(data)
    if data.get("local_tv"):
        return PatchGeometry.local_tv()
    unknown = set(data) - {"patch_radius", "search_radius", "local_tv"}
    if unknown:
        raise ConfigError(f"unknown geometry keys: {sorted(unknown)}")
    return PatchGeometry.square(
        int(data.get("patch_radius", 1)), int(data.get("search_radius", 1))
    )


def _build(cls, data: Mapping[str, Any]):
    data = dict(data)
    penalty = data.pop("penalty", None)
    geometry = data.pop("geometry", None)
    if penalty is None:
        raise ConfigError("a [penalty] table is required")
    if not isinstance(penalty, PenaltySpec):
        penalty = penalty_from_mapping(penalty)
    if not isinstance(geometry, PatchGeometry):
        geometry = geometry_from_mapping(geometry)
    allowed = {f.name for f in fields(cls)} - {"penalty", "geometry"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    if "lam" not in data:
        raise ConfigError("'lam' is required")
    try:
        return cls(penalty=penalty, geometry=geometry, **data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def merge(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Recursive dict merge; ``None`` override values (at any depth) are skipped."""
    out = dict(base)
    for key, val in overrides.items():
        if val is None:
            continue
        if isinstance(val, Mapping):
            sub = merge(out[key] if isinstance(out.get(key), Mapping) else {}, val)
            if sub or key in out:
                out[key] = sub
        else:
            out[key] = val
    return out


def solver_config(data: Mapping[str, Any]) -> SolverConfig:
    return _build(SolverConfig, data)


def irw_config(data: Mapping[str, Any]) -> IrwConfig:
    return _build(IrwConfig, data)
