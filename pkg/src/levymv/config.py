"""Experiment configuration files (YAML) and their validation.

Validation is strict: unknown keys are errors, every problem is collected and
reported together, and the seed is mandatory.  Optional fields receive
documented defaults, which are echoed back in :attr:`RunConfig.resolved`.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .levy_noise import CompoundPoisson, IsotropicStable, RadialDensity, TimeGrid
from .mean_field_engine import (
    CenteredPareto,
    Gaussian,
    PointMass,
    pure_noise_coefficients,
    sine_interaction_coefficients,
    sine_mean_field_coefficients,
    stable_ou_coefficients,
    zero_coefficients,
)

KINDS = ("poc", "truncation", "picard", "nonuniqueness", "noise-validate")
PRESETS = ("quick", "full")


class ConfigError(Exception):
    """All validation problems of one configuration file."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


# ---------------------------------------------------------------------------
# field checkers: each returns an error message or None
# ---------------------------------------------------------------------------


def _num(lo=-math.inf, hi=math.inf, lo_open=False, hi_open=False, integer=False, msg=None):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return "must be a number"
        if integer and not float(v).is_integer():
            return "must be an integer"
        bad = (v <= lo if lo_open else v < lo) or (v >= hi if hi_open else v > hi)
        if bad:
            if msg:
                return msg
            left = "(" if lo_open else "["
            right = ")" if hi_open else "]"
            return f"out of {left}{lo:g},{hi:g}{right}"
        return None
    return check


def _choice(*options):
    def check(v):
        return None if v in options else f"must be one of {', '.join(map(str, options))}"
    return check


def _bool(v):
    return None if isinstance(v, bool) else "must be true or false"


def _str(v):
    return None if isinstance(v, str) else "must be a string"


def _num_list(min_len=1, positive=True, increasing=False, allow_inf=False):
    def check(v):
        if not isinstance(v, list) or len(v) < min_len:
            return f"must be a list of at least {min_len} numbers"
        vals = []
        for x in v:
            if allow_inf and x in (".inf", "inf", float("inf")):
                vals.append(math.inf)
                continue
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                return "must contain numbers only"
            vals.append(float(x))
        if positive and any(x <= 0 for x in vals):
            return "entries must be positive"
        if increasing and any(b <= a for a, b in zip(vals, vals[1:])):
            return "entries must be strictly increasing"
        return None
    return check


def _vector(v):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return None
    if isinstance(v, list) and v and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        return None
    return "must be a number or a list of numbers"


def _matrix(v):
    if _vector(v) is None:
        return None
    if isinstance(v, list) and all(isinstance(r, list) and _vector(r) is None for r in v):
        return None
    return "must be a number or a matrix (list of rows)"


def _atoms(v):
    if not isinstance(v, list) or not v:
        return "must be a non-empty list of [jump, rate] pairs"
    for a in v:
        if not (isinstance(a, list) and len(a) == 2 and _vector(a[0]) is None and _num(0)(a[1]) is None):
            return "each atom must be [jump (number or vector), rate >= 0]"
    return None


REQUIRED = object()

# section -> {key: (checker, default)}; REQUIRED marks mandatory keys
MODEL_KEYS = {
    "stable": {"alpha": (_num(0, 2, True, True, msg="alpha out of (0,2)"), REQUIRED),
               "dim": (_num(1, integer=True), 1), "beta": (_num(0, 2, True), None)},
    "compound_poisson": {"atoms": (_atoms, REQUIRED), "beta": (_num(0, 2, True), 2.0)},
    "radial": {"radii": (_num_list(2, positive=False, increasing=True), REQUIRED),
               "values": (_num_list(2, positive=False), REQUIRED),
               "dim": (_num(1, integer=True), 1), "beta": (_num(0, 2, True), 2.0)},
}
COEFF_KEYS = {
    "stable_ou": {"A": (_matrix, 0.0), "A_prime": (_matrix, 0.0), "B": (_matrix, 1.0)},
    "sine_mean_field": {"A": (_matrix, -1.0), "kappa": (_num(), 1.0), "B": (_matrix, 1.0)},
    "sine_interaction": {"a": (_num(), 1.0), "kappa": (_num(), 1.0), "sigma0": (_num(), 1.0),
                         "sigma1": (_num(), 0.0)},
    "zero": {},
    "pure_noise": {},
}
INITIAL_KEYS = {
    "point": {"value": (_vector, 0.0), "beta": (_num(0, 2, True), 2.0)},
    "gaussian": {"mean": (_vector, 0.0), "std": (_num(0), 1.0), "beta": (_num(0, 2, True), 2.0)},
    "pareto": {"index": (_num(0, lo_open=True), REQUIRED), "scale": (_num(0, lo_open=True), 1.0),
               "beta": (_num(0, 2, True), 1.0)},
}
SECTION_KEYS = {
    "grid": {"horizon": (_num(0, lo_open=True), 1.0), "steps": (_num(1, integer=True), 50)},
    "plan": {"law": (_choice("thm2", "thm3"), REQUIRED), "index": (_num(0, lo_open=True), REQUIRED),
             "n_grid": (_num_list(4, increasing=True), REQUIRED),
             "replications": (_num(50, integer=True), 200), "limit": (_choice("mean", "picard"), "mean"),
             "picard_particles": (_num(0, integer=True), 0),
             "reference_factor": (_num(1, integer=True), 16), "tolerance": (_num(0, lo_open=True), 0.15),
             "compute_e2": (_bool, True)},
    "truncation": {"levels": (_num_list(2, increasing=True, allow_inf=True), REQUIRED),
                   "particles": (_num(8, integer=True), 1024),
                   "replications": (_num(50, integer=True), 500),
                   "tolerance": (_num(0, lo_open=True), 0.2)},
    "moment_curve": {"alpha": (_num(1, 2, True, True, msg="alpha out of (1,2)"), 1.5),
                     "levels": (_num_list(2, increasing=True), REQUIRED),
                     "samples": (_num(100, integer=True), 1_000_000),
                     "horizon": (_num(0, lo_open=True), 1.0), "steps": (_num(1, integer=True), 20),
                     "min_r_squared": (_num(0, 1), 0.9)},
    "picard": {"particles": (_num(2, integer=True), 10_000), "max_iters": (_num(1, integer=True), 10),
               "tol": (_num(0, lo_open=True), None), "beta": (_num(0, 2, True), 1.0),
               "common_noise": (_bool, False)},
    "nonuniqueness": {"beta": (_num(0, 1, True, True, msg="beta out of (0,1)"), 0.5),
                      "perturbation": (_num(0, lo_open=True), 1e-12), "particles": (_num(1, integer=True), 64),
                      "endpoint_tolerance": (_num(0, lo_open=True), 1e-3)},
    "validate": {"n_paths": (_num(10, integer=True), 10_000), "cf_samples": (_num(10, integer=True), 100_000),
                 "cf_alpha": (_num(0, 2, True, msg="alpha out of (0,2)"), 1.5),
                 "significance": (_num(0, 1, True, True), 0.01), "horizon": (_num(0, lo_open=True), 1.0)},
}
TOP_KEYS = {"kind", "seed", "threads", "output", "model", "coefficients", "initial", "presets"} | set(SECTION_KEYS)

# sections each kind needs (beyond kind/seed)
NEEDS = {
    "poc": ("model", "coefficients", "initial", "grid", "plan"),
    "truncation": ("model", "coefficients", "initial", "grid", "truncation"),
    "picard": ("model", "coefficients", "initial", "grid", "picard"),
    "nonuniqueness": ("grid", "nonuniqueness"),
    "noise-validate": ("model", "validate"),
}
OPTIONAL = {"truncation": ("moment_curve",)}


def _check_section(name, data, schema, errors):
    if not isinstance(data, dict):
        errors.append(f"{name}: must be a mapping")
        return {}
    out = {}
    for key in data:
        if key not in schema:
            errors.append(f"{name}.{key}: unknown key")
    for key, (check, default) in schema.items():
        if key in data:
            msg = check(data[key])
            if msg:
                errors.append(f"{name}.{key}: {msg}")
            out[key] = data[key]
        elif default is REQUIRED:
            errors.append(f"{name}.{key}: missing required key")
        else:
            out[key] = default
    return out


def _check_typed(name, data, table, errors):
    if not isinstance(data, dict):
        errors.append(f"{name}: must be a mapping")
        return {}
    kind = data.get("type")
    if kind not in table:
        errors.append(f"{name}.type: must be one of {', '.join(table)}")
        return {}
    body = {k: v for k, v in data.items() if k != "type"}
    out = _check_section(name, body, table[kind], errors)
    out["type"] = kind
    return out


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    kind: str
    seed: int
    threads: int
    output: str | None
    sections: dict
    source: str | None = None
    preset: str | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def resolved(self) -> dict:
        """Validated configuration with defaults filled in (for the manifest)."""
        out = {"kind": self.kind, "seed": self.seed, "threads": self.threads, "output": self.output}
        if self.preset:
            out["preset"] = self.preset
        out.update(copy.deepcopy(self.sections))
        return out

    # builders -------------------------------------------------------------

    def grid(self) -> TimeGrid:
        g = self.sections["grid"]
        return TimeGrid.uniform(float(g["horizon"]), int(g["steps"]))

    def model(self):
        return build_model(self.sections["model"])

    def coefficients(self, dim: int):
        return build_coefficients(self.sections["coefficients"], dim)

    def initial(self, dim: int):
        return build_initial(self.sections["initial"], dim)


def build_model(m: dict):
    if m["type"] == "stable":
        return IsotropicStable(float(m["alpha"]), int(m["dim"]), None if m["beta"] is None else float(m["beta"]))
    if m["type"] == "compound_poisson":
        return CompoundPoisson(tuple((a[0], a[1]) for a in m["atoms"]), float(m["beta"]))
    return RadialDensity(m["radii"], m["values"], int(m["dim"]), float(m["beta"]))


def build_coefficients(c: dict, dim: int):
    t = c["type"]
    if t == "stable_ou":
        return stable_ou_coefficients(c["A"], c["A_prime"], c["B"], dim=dim)
    if t == "sine_mean_field":
        return sine_mean_field_coefficients(c["A"], float(c["kappa"]), c["B"], dim=dim)
    if t == "sine_interaction":
        return sine_interaction_coefficients(float(c["a"]), float(c["kappa"]), float(c["sigma0"]),
                                             float(c["sigma1"]), dim=dim)
    if t == "zero":
        return zero_coefficients(dim)
    return pure_noise_coefficients(dim)


def build_initial(i: dict, dim: int):
    t = i["type"]
    if t == "point":
        v = i["value"]
        return PointMass([float(v)] * dim if not isinstance(v, list) else v, float(i["beta"]))
    if t == "gaussian":
        v = i["mean"]
        return Gaussian([float(v)] * dim if not isinstance(v, list) else v, float(i["std"]), float(i["beta"]))
    return CenteredPareto(float(i["index"]), float(i["scale"]), dim, float(i["beta"]))


def validate_config(data, *, preset: str | None = None, source: str | None = None) -> RunConfig:
    """Validate a parsed mapping; raises :class:`ConfigError` listing every problem."""
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["top level must be a mapping"])
    for key in data:
        if key not in TOP_KEYS:
            errors.append(f"{key}: unknown key")
    presets = data.get("presets", {}) or {}
    if not isinstance(presets, dict) or any(p not in PRESETS for p in presets):
        errors.append(f"presets: keys must be among {', '.join(PRESETS)}")
        presets = {}
    if preset is not None:
        if preset not in PRESETS:
            errors.append(f"preset {preset!r} is not one of {', '.join(PRESETS)}")
        elif preset in presets:
            if not isinstance(presets[preset], dict):
                errors.append(f"presets.{preset}: must be a mapping")
            else:
                bad = [k for k in presets[preset] if k not in TOP_KEYS - {"presets", "kind", "seed"}]
                errors.extend(f"presets.{preset}.{k}: cannot be overridden" for k in bad)
                data = _merge(data, presets[preset])

    kind = data.get("kind")
    if kind is None:
        errors.append("kind: missing required key")
    elif kind not in KINDS:
        errors.append(f"kind: must be one of {', '.join(KINDS)}")
    seed = data.get("seed")
    if seed is None:
        errors.append("seed: missing required key (no wall-clock default)")
    elif isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.append("seed: must be a non-negative integer")
    threads = data.get("threads", 1)
    if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
        errors.append("threads: must be a positive integer")
    output = data.get("output")
    if output is not None and not isinstance(output, str):
        errors.append("output: must be a string")

    sections = {}
    if kind in NEEDS:
        wanted = NEEDS[kind] + OPTIONAL.get(kind, ())
        for name in NEEDS[kind]:
            if name not in data:
                errors.append(f"{name}: section required for kind {kind}")
        for name in data:
            if name in SECTION_KEYS or name in ("model", "coefficients", "initial"):
                if name not in wanted:
                    errors.append(f"{name}: section not used by kind {kind}")
        for name in wanted:
            if name not in data:
                continue
            if name == "model":
                sections[name] = _check_typed(name, data[name], MODEL_KEYS, errors)
            elif name == "coefficients":
                sections[name] = _check_typed(name, data[name], COEFF_KEYS, errors)
            elif name == "initial":
                sections[name] = _check_typed(name, data[name], INITIAL_KEYS, errors)
            else:
                sections[name] = _check_section(name, data[name], SECTION_KEYS[name], errors)
        errors.extend(_cross_checks(kind, sections))
    if errors:
        raise ConfigError(errors)
    return RunConfig(kind, int(seed), int(threads), output, sections, source, preset, data)


def _cross_checks(kind, s) -> list[str]:
    errors = []
    m = s.get("model")
    if m and m.get("type") == "stable" and m.get("beta") is not None and "alpha" in m:
        try:
            if float(m["beta"]) >= float(m["alpha"]):
                errors.append("model.beta: must be below alpha for stable noise")
        except (TypeError, ValueError):
            pass
    if m and m.get("type") == "radial" and isinstance(m.get("radii"), list) and isinstance(m.get("values"), list):
        if len(m["radii"]) != len(m["values"]):
            errors.append("model.values: must have as many entries as model.radii")
    if kind == "truncation" and m and m.get("type") not in (None, "stable", "compound_poisson", "radial"):
        errors.append("model.type: unsupported for truncation")
    return errors


def parse_config(path, *, preset: str | None = None) -> RunConfig:
    """Read and validate a YAML experiment file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {p}: {exc.strerror}"]) from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"malformed YAML: {exc}"]) from exc
    return validate_config(data, preset=preset, source=str(p))
