"""TOML run configuration with ``include`` support.

A file may list other files under a top-level ``include`` key (paths
relative to the including file). Included tables are merged first, in
order, and the including file's own keys override them; nested tables merge
recursively. Checkpoint paths are resolved against the directory of the file
that names them.

Recognized tables: ``[run]`` (RunConfig fields), ``[train]`` (NeuralConfig
fields; grid, channel and seed fields default to the ``[run]`` values) and
``[[eval.models]]`` entries with ``label`` and ``checkpoint``.
"""

from __future__ import annotations

from pathlib import Path

import tomli

from .harness import ConfigError, RunConfig
from .neural import NeuralConfig

_SHARED = ("S", "T", "Nr", "Nt", "layers", "mcs", "alpha", "V", "profile", "delay_spread",
           "speed_kmh", "carrier", "scs", "pilot_seed", "code_seed", "seed")


def _merge(base: dict, top: dict) -> dict:
    out = dict(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _anchor_paths(raw: dict, base: Path) -> None:
    """Make checkpoint paths relative to the file that names them."""
    def fix(tbl):
        p = tbl.get("checkpoint")
        if isinstance(p, str) and p and not Path(p).is_absolute():
            tbl["checkpoint"] = str((base / p).resolve())
    if isinstance(raw.get("run"), dict):
        fix(raw["run"])
    for m in raw.get("eval", {}).get("models", []) if isinstance(raw.get("eval"), dict) else []:
        if isinstance(m, dict):
            fix(m)


def load_toml(path, _seen: tuple = ()) -> dict:
    path = Path(path).resolve()
    if path in _seen:
        raise ConfigError(f"include cycle through {path}")
    try:
        raw = tomli.loads(path.read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    _anchor_paths(raw, path.parent)
    incs = raw.pop("include", [])
    if isinstance(incs, str):
        incs = [incs]
    merged: dict = {}
    for inc in incs:
        merged = _merge(merged, load_toml(path.parent / inc, _seen + (path,)))
    return _merge(merged, raw)


def run_config(doc: dict, seed: int | None = None) -> RunConfig:
    d = dict(doc.get("run", {}))
    if seed is not None:
        d["seed"] = seed
    try:
        return RunConfig.from_dict(d)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def train_config(doc: dict, seed: int | None = None) -> NeuralConfig:
    run = doc.get("run", {})
    d = {k: run[k] for k in _SHARED if k in run}
    d.update(doc.get("train", {}))
    if seed is not None:
        d["seed"] = seed
    unknown = set(d) - set(NeuralConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown train keys: {sorted(unknown)}")
    try:
        return NeuralConfig(**d)
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(str(e)) from e
