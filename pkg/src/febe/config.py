"""Flat key = value run configuration: parsing, validation, defaults."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class ConfigError(ValueError):
    pass


_DEFAULTS = {
    "problem": "scalar",                 # scalar | vector
    "material.kind": "plaplace",
    "material.p": 2.0,
    "material.delta": 0.0,
    "exterior.mu": 1.0,
    "exterior.lambda": 1.0,
    "mesh.preset": "square",
    "mesh.n": 2,
    "mesh.path": "",
    "mesh.refine": 0,
    "data.preset": "quadratic",
    "data.file": "",
    "fem.quad_order": 4,
    "bem.quad_order": 8,
    "bem.half_factor": False,
    "bem.dump": False,
    "solver.tol": 0.0,                   # 0 -> by p (1e-10 for p=2, 1e-8 else)
    "solver.gamma_min": 1e-8,
    "solver.max_iter": 200,
    "solver.formulation": "steklov",     # steklov | layerpotential
    "solver.stabilized": False,
    "solver.compat_constraints": -1,     # -1 -> default (1 scalar, 2 vector)
    "estimate.kind": "auto",             # auto | sp | lp | appendix
    "estimate.delta": 0.0,
    "adapt.theta": 0.5,
    "adapt.max_dofs": 20000,
    "adapt.target_eta": 0.0,
    "out.dir": "out",
    "seed": 0,
}

_BOOL = {"bem.half_factor", "bem.dump", "solver.stabilized"}
_INT = {"mesh.n", "mesh.refine", "fem.quad_order", "bem.quad_order",
        "solver.max_iter", "solver.compat_constraints", "adapt.max_dofs",
        "seed"}
_FLOAT = {"material.p", "material.delta", "exterior.mu", "exterior.lambda",
          "solver.tol", "solver.gamma_min", "estimate.delta", "adapt.theta",
          "adapt.target_eta"}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: dict(_DEFAULTS))

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def validate(self):
        v = self.values
        aliases = {"scalar-appendix": "scalar", "vector-lame": "vector"}
        v["problem"] = aliases.get(v["problem"], v["problem"])
        if v["problem"] not in ("scalar", "vector"):
            raise ConfigError("problem must be 'scalar' or 'vector'")
        if not v["material.p"] > 1.0:
            raise ConfigError("material.p must be > 1")
        if v["material.kind"] not in ("plaplace", "carreau"):
            raise ConfigError("material.kind must be plaplace or carreau")
        if not 0.0 <= v["material.delta"] <= 1.0:
            raise ConfigError("material.delta must lie in [0, 1]")
        if not v["exterior.mu"] > 0:
            raise ConfigError("exterior.mu must be positive")
        if not v["exterior.lambda"] > -v["exterior.mu"]:
            raise ConfigError("exterior.lambda must exceed -exterior.mu")
        if v["mesh.path"] and not os.path.exists(v["mesh.path"]):
            raise ConfigError("mesh.path does not exist: %s" % v["mesh.path"])
        if v["data.file"] and not os.path.exists(v["data.file"]):
            raise ConfigError("data.file does not exist: %s" % v["data.file"])
        if not v["mesh.path"]:
            from .presets import MESH_PRESETS
            if v["mesh.preset"] not in MESH_PRESETS:
                raise ConfigError("mesh.preset unknown: %s" % v["mesh.preset"])
        if not v["data.file"]:
            from .presets import DATA_PRESETS
            if v["data.preset"] not in DATA_PRESETS:
                raise ConfigError("data.preset unknown: %s" % v["data.preset"])
        if v["solver.formulation"] not in ("steklov", "layerpotential"):
            raise ConfigError("solver.formulation must be steklov or layerpotential")
        if v["estimate.kind"] not in ("auto", "sp", "lp", "appendix"):
            raise ConfigError("estimate.kind must be auto, sp, lp or appendix")
        if not 0 < v["adapt.theta"] <= 1:
            raise ConfigError("adapt.theta must lie in (0, 1]")
        if v["fem.quad_order"] < 2:
            raise ConfigError("fem.quad_order must be >= 2")
        return self

    def manifest(self, extra=None):
        lines = ["%s = %s" % (k, self.values[k]) for k in sorted(self.values)]
        for k, val in (extra or {}).items():
            lines.append("%s = %s" % (k, val))
        return "\n".join(lines) + "\n"


def parse_config(text):
    cfg = RunConfig()
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected 'key = value'" % ln)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _DEFAULTS:
            raise ConfigError("unknown config key %r" % key)
        try:
            if key in _BOOL:
                cfg.values[key] = val.lower() in ("1", "true", "yes", "on")
            elif key in _INT:
                cfg.values[key] = int(val)
            elif key in _FLOAT:
                cfg.values[key] = float(val)
            else:
                cfg.values[key] = val
        except ValueError:
            raise ConfigError("bad value for %s: %r" % (key, val))
    return cfg


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def load_data_file(path, bspace, ncomp):
    """File-borne nodal boundary data: CSV rows 'kind,index,comp,value'.

    kinds: u0_node (P1 nodal values), t0_panel (per-panel tractions),
    F_node (nodal friction bound).  Returns a ProblemData.
    """
    from .vi import ProblemData
    u0 = np.zeros(bspace.n_nodes * ncomp)
    t0 = np.zeros((bspace.n_panels, ncomp))
    F = np.zeros(bspace.n_nodes)
    seen = set()
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#") or line.startswith("kind"):
                continue
            kind, idx, comp, val = line.split(",")
            idx, comp, val = int(idx), int(comp), float(val)
            seen.add(kind)
            if kind == "u0_node":
                u0[idx * ncomp + comp] = val
            elif kind == "t0_panel":
                t0[idx, comp] = val
            elif kind == "F_node":
                F[idx] = val
            else:
                raise ConfigError("unknown data kind %r in %s" % (kind, path))
    return ProblemData(f=None,
                       u0=u0 if "u0_node" in seen else None,
                       t0=t0 if "t0_panel" in seen else None,
                       friction=F if "F_node" in seen else None)
