"""Experiment configuration: TOML files with one table per stage.

Example::

    [model]
    kind = "bernoulli"
    p = 0.5
    shapes = [{ id = "sq", kind = "square", size = 0.5 }]

    [spectra]
    h = 0.125
    n_modes = 64

    [run]
    stages = ["geometry", "beta", "bands"]
    output = "out"
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .geometry import RandomModel, model_from_dict
from .shape_spectra import SpectrumSettings

STAGES = ("geometry", "shapes", "beta", "bands", "homog", "spectrum", "quasimode", "report")

DEFAULTS: dict[str, Any] = {
    "spectra": {"h": 1.0 / 64, "n_modes": 200, "analytic": False, "min_cells": 16},
    "beta": {"lambda_max": 150.0, "n_lambda": 301},
    "geometry": {"window": 16.0, "seed": 0},
    "homog": {"h": 1.0 / 64, "a1": [1.0, 1.0], "supercell": 0},
    "spectrum": {
        "eps": [0.25],
        "h_over_eps": 0.125,
        "box": 4.0,
        "bc": "dirichlet",
        "window": "gap",
        "margin": 0.02,
        "above": 0.1,
        "max_count": 400,
        "min_cells": 16,
        "L": 0.0,
        "c_mass": 0.1,
        "seed": 0,
    },
    "quasimode": {"eps": [0.125], "L": [2.0], "lambda": "mid-band", "seeds": [0], "h_over_eps": 0.125},
    "run": {"stages": ["geometry", "beta", "bands"], "output": "hicospec-out", "c1": 1.0},
}


@dataclass
class ExperimentConfig:
    model: RandomModel
    sections: dict[str, dict[str, Any]]
    source: dict[str, Any] = field(repr=False, default_factory=dict)
    base_dir: Path = Path(".")

    @property
    def stages(self) -> list[str]:
        return list(self.sections["run"]["stages"])

    @property
    def output(self) -> Path:
        out = Path(self.sections["run"]["output"])
        return out if out.is_absolute() else self.base_dir / out

    def spectrum_settings(self) -> SpectrumSettings:
        s = self.sections["spectra"]
        return SpectrumSettings(h=float(s["h"]), n_modes=int(s["n_modes"]), analytic=bool(s["analytic"]),
                                min_cells=int(s["min_cells"]))

    def hash(self) -> str:
        blob = json.dumps(self.source, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def from_dict(data: dict[str, Any], base_dir: Path | str = ".") -> ExperimentConfig:
    """Validate a parsed configuration before any computation starts."""
    if "model" not in data:
        raise ConfigError("configuration needs a [model] table")
    unknown = set(data) - set(DEFAULTS) - {"model"}
    if unknown:
        raise ConfigError(f"unknown configuration tables: {sorted(unknown)}")
    sections = {k: _merge(v, data.get(k, {})) for k, v in DEFAULTS.items()}
    model = model_from_dict(data["model"])
    stages = sections["run"]["stages"]
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stages {bad}; choose from {list(STAGES)}")
    s = sections["spectra"]
    if not float(s["h"]) > 0 or int(s["n_modes"]) < 1:
        raise ConfigError("[spectra] needs h > 0 and n_modes >= 1")
    if float(sections["beta"]["lambda_max"]) <= 0:
        raise ConfigError("[beta] lambda_max must be positive")
    if float(sections["geometry"]["window"]) < 1:
        raise ConfigError("[geometry] window must be >= 1")
    sp = sections["spectrum"]
    if sp["bc"] not in ("dirichlet", "periodic"):
        raise ConfigError("[spectrum] bc must be 'dirichlet' or 'periodic'")
    if any(float(e) <= 0 for e in sp["eps"]) or any(float(e) <= 0 for e in sections["quasimode"]["eps"]):
        raise ConfigError("every epsilon must be positive")
    if not (sp["window"] == "gap" or (isinstance(sp["window"], list) and len(sp["window"]) == 2)):
        raise ConfigError("[spectrum] window must be 'gap' or [t1, t2]")
    return ExperimentConfig(model, sections, data, Path(base_dir))


def load(path: str | os.PathLike) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"configuration file {p} does not exist")
    with open(p, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    return from_dict(data, p.parent)


def load_model(path: str | os.PathLike) -> RandomModel:
    """Model from a TOML file (``[model]`` table or top level) or a JSON file."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"model file {p} does not exist")
    if p.suffix == ".json":
        with open(p) as fh:
            data = json.load(fh)
    else:
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
    return model_from_dict(data.get("model", data))


def preset(name: str) -> dict[str, Any]:
    """Bundled configuration, e.g. ``bernoulli-halfband``."""
    try:
        text = resources.files("hicospec.presets").joinpath(f"{name}.toml").read_text()
    except FileNotFoundError:
        raise ConfigError(f"unknown preset {name!r}") from None
    return tomllib.loads(text)
