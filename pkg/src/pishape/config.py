"""Run configuration: TOML loading, validation and defaults.

A run file has the tables ``system``, ``cost``, ``nominal``, ``basis``,
``domain``, ``objective``, ``tuning`` and ``verify``; only ``system`` and
``cost.R`` are mandatory.  :func:`load_config` returns a :class:`RunConfig`
whose ``resolved`` dict is the complete configuration with every default
filled in, which is what gets written into run summaries.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = ["ConfigError", "RunConfig", "builtin_configs", "load_config", "parse_config"]


class ConfigError(InvalidArgumentError):
    """Malformed or incomplete run configuration; the message names the field."""


SYSTEMS = {"lti3": {"omega_n": 2.0, "zeta": 0.1},
           "cartpole": {"m_c": 1.0, "m_p": 0.1, "l": 0.5, "grav": 9.81}}

DEFAULTS = {
    "seed": 0,
    "cost": {"Q": "identity"},
    "nominal": {"method": "auto", "care_method": "schur", "tol": 1e-8, "max_iter": 50,
                "K": 2000, "x0": None, "horizon": 15.0, "dt": 0.01},
    "basis": {"value_degree": 4, "m_degree": 4, "h_degree": 4, "scale": "none"},
    "domain": {"half_widths": None, "lo": None, "hi": None},
    "shaping": {"K": 2000, "ridge": 1e-10},
    "objective": {"component": 1, "threshold": None, "beta": 10.0},
    "tuning": {"gamma": 1.0, "max_iter": 100, "grad_tol": 1e-3, "step": "backtracking",
               "mode": "sum", "horizon": 15.0, "dt": 0.01, "initial_conditions": None,
               "sample_lo": None, "sample_hi": None, "sample_count": 10,
               "test_x0": None, "test_horizon": None, "check_points": 1000,
               "terminal_tol": None, "step_tol": 0.0},
    "verify": {"epsilons": [0.05, 0.5, 2.0], "lyapunov_horizon": 15.0, "gain_horizon": 30.0,
               "dt": None, "disturbance_amplitude": 0.5, "disturbance_omega": 1.0,
               "disturbance_off": 25.0, "iss_horizon": 50.0, "increase_tol": 1e-6,
               "terminal_tol": 0.05, "gain_terminal_tol": 0.1, "sup_bound": 100.0},
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration.

    ``resolved`` holds every table with defaults filled in; the convenience
    properties expose the pieces the pipeline needs as arrays.
    """

    resolved: dict
    source: str = "<memory>"

    def __getitem__(self, key):
        return self.resolved[key]

    @property
    def seed(self) -> int:
        return int(self.resolved["seed"])

    @property
    def n(self) -> int:
        return 3 if self.resolved["system"]["name"] == "lti3" else 4

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        res = copy.deepcopy(self.resolved)
        res["seed"] = _seed(seed, "seed")
        return RunConfig(res, self.source)


def _seed(v, name):
    if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v < 2**64:
        raise ConfigError(f"{name}: expected an unsigned 64-bit integer, got {v!r}")
    return v


def _num(v, name, positive=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{name}: expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{name}: must be positive, got {v!r}")
    return int(v) if integer else float(v)


def _vec(v, name, n):
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a list of {n} numbers, got {v!r}") from None
    if a.shape != (n,):
        raise ConfigError(f"{name}: expected a list of {n} numbers, got {v!r}")
    return a.tolist()


def _mat(v, name, n):
    if v == "identity":
        return np.eye(n).tolist()
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected an {n}x{n} matrix, got {v!r}") from None
    if a.ndim == 0 and n == 1:
        a = a.reshape(1, 1)
    if a.shape != (n, n):
        raise ConfigError(f"{name}: expected an {n}x{n} matrix, got shape {a.shape}")
    return a.tolist()


def _merge(name, given, defaults):
    if not isinstance(given, dict):
        raise ConfigError(f"{name}: expected a table")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"{name}: unknown field(s) {', '.join(sorted(unknown))}")
    out = copy.deepcopy(defaults)
    out.update(given)
    return out


def parse_config(raw: dict, source: str = "<memory>") -> RunConfig:
    """Validate a parsed TOML document and fill in defaults."""
    raw = dict(raw)
    known = set(DEFAULTS) | {"system", "shaping"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level field(s) {', '.join(sorted(unknown))}")

    if "system" not in raw:
        raise ConfigError("system: missing table")
    sysraw = raw["system"]
    if not isinstance(sysraw, dict) or "name" not in sysraw:
        raise ConfigError("system.name: missing")
    name = sysraw["name"]
    if name not in SYSTEMS:
        raise ConfigError(f"system.name: unknown system {name!r} (choose from {sorted(SYSTEMS)})")
    params = _merge("system.params", sysraw.get("params", {}), SYSTEMS[name])
    for k, v in params.items():
        params[k] = _num(v, f"system.params.{k}")
    extra = set(sysraw) - {"name", "params"}
    if extra:
        raise ConfigError(f"system: unknown field(s) {', '.join(sorted(extra))}")
    n = 3 if name == "lti3" else 4

    res = {"seed": _seed(raw.get("seed", DEFAULTS["seed"]), "seed"),
           "system": {"name": name, "params": params}}

    cost = raw.get("cost")
    if cost is None:
        raise ConfigError("cost: missing table (cost.R is required)")
    if "R" not in cost:
        raise ConfigError("cost.R: missing required field")
    cost = _merge("cost", cost, {"Q": "identity", "R": None})
    cost["Q"] = _mat(cost["Q"], "cost.Q", n)
    cost["R"] = _mat(cost["R"], "cost.R", 1)
    if np.linalg.eigvalsh(np.asarray(cost["R"])).min() <= 0:
        raise ConfigError("cost.R: must be positive definite")
    if np.linalg.eigvalsh(np.asarray(cost["Q"])).min() < -1e-12:
        raise ConfigError("cost.Q: must be non-negative definite")
    res["cost"] = cost

    nom = _merge("nominal", raw.get("nominal", {}), DEFAULTS["nominal"])
    if nom["method"] == "auto":
        nom["method"] = "care" if name == "lti3" else "policy_iteration"
    if nom["method"] not in ("care", "policy_iteration"):
        raise ConfigError(f"nominal.method: expected 'care' or 'policy_iteration', got {nom['method']!r}")
    if nom["care_method"] not in ("schur", "flow"):
        raise ConfigError("nominal.care_method: expected 'schur' or 'flow'")
    nom["tol"] = _num(nom["tol"], "nominal.tol", positive=True)
    nom["max_iter"] = _num(nom["max_iter"], "nominal.max_iter", positive=True, integer=True)
    nom["K"] = _num(nom["K"], "nominal.K", positive=True, integer=True)
    nom["horizon"] = _num(nom["horizon"], "nominal.horizon", positive=True)
    nom["dt"] = _num(nom["dt"], "nominal.dt", positive=True)
    if nom["x0"] is None:
        raise ConfigError("nominal.x0: missing required field")
    nom["x0"] = _vec(nom["x0"], "nominal.x0", n)
    res["nominal"] = nom

    basis = _merge("basis", raw.get("basis", {}), DEFAULTS["basis"])
    for k in ("value_degree", "m_degree", "h_degree"):
        d = _num(basis[k], f"basis.{k}", positive=True, integer=True)
        if d < 2 or d % 2:
            raise ConfigError(f"basis.{k}: must be an even integer >= 2, got {d}")
        basis[k] = d
    if basis["scale"] not in ("none", "domain"):
        raise ConfigError("basis.scale: expected 'none' or 'domain'")
    res["basis"] = basis

    dom = _merge("domain", raw.get("domain", {}), DEFAULTS["domain"])
    if dom["half_widths"] is not None:
        hw = np.abs(_vec(dom["half_widths"], "domain.half_widths", n))
        dom["lo"], dom["hi"] = (-hw).tolist(), hw.tolist()
    elif dom["lo"] is None or dom["hi"] is None:
        raise ConfigError("domain: give half_widths or both lo and hi")
    dom["lo"] = _vec(dom["lo"], "domain.lo", n)
    dom["hi"] = _vec(dom["hi"], "domain.hi", n)
    if any(a >= b for a, b in zip(dom["lo"], dom["hi"])):
        raise ConfigError("domain: lo must be below hi componentwise")
    dom["half_widths"] = (0.5 * (np.asarray(dom["hi"]) - np.asarray(dom["lo"]))).tolist()
    res["domain"] = dom

    sh = _merge("shaping", raw.get("shaping", {}), DEFAULTS["shaping"])
    sh["K"] = _num(sh["K"], "shaping.K", positive=True, integer=True)
    sh["ridge"] = _num(sh["ridge"], "shaping.ridge")
    res["shaping"] = sh

    obj = _merge("objective", raw.get("objective", {}), DEFAULTS["objective"])
    obj["component"] = _num(obj["component"], "objective.component", integer=True)
    if not 0 <= obj["component"] < n:
        raise ConfigError(f"objective.component: must lie in [0, {n - 1}]")
    if obj["threshold"] is None:
        raise ConfigError("objective.threshold: missing required field")
    obj["threshold"] = _num(obj["threshold"], "objective.threshold")
    obj["beta"] = _num(obj["beta"], "objective.beta", positive=True)
    res["objective"] = obj

    tun = _merge("tuning", raw.get("tuning", {}), DEFAULTS["tuning"])
    for k in ("gamma", "horizon", "dt", "grad_tol"):
        tun[k] = _num(tun[k], f"tuning.{k}", positive=True)
    tun["step_tol"] = _num(tun["step_tol"], "tuning.step_tol")
    if tun["step_tol"] < 0:
        raise ConfigError("tuning.step_tol: must be non-negative")
    if tun["terminal_tol"] is not None:
        tun["terminal_tol"] = _num(tun["terminal_tol"], "tuning.terminal_tol", positive=True)
    tun["max_iter"] = _num(tun["max_iter"], "tuning.max_iter", positive=True, integer=True)
    tun["sample_count"] = _num(tun["sample_count"], "tuning.sample_count", positive=True,
                               integer=True)
    tun["check_points"] = _num(tun["check_points"], "tuning.check_points", positive=True,
                               integer=True)
    if tun["step"] not in ("fixed", "normalized", "backtracking"):
        raise ConfigError("tuning.step: expected 'fixed', 'normalized' or 'backtracking'")
    if tun["mode"] not in ("sum", "mean"):
        raise ConfigError("tuning.mode: expected 'sum' or 'mean'")
    if tun["initial_conditions"] is not None:
        ics = tun["initial_conditions"]
        if not isinstance(ics, list) or not ics:
            raise ConfigError("tuning.initial_conditions: expected a non-empty list of states")
        tun["initial_conditions"] = [_vec(x, f"tuning.initial_conditions[{i}]", n)
                                     for i, x in enumerate(ics)]
    elif tun["sample_lo"] is None or tun["sample_hi"] is None:
        raise ConfigError("tuning: give initial_conditions or sample_lo/sample_hi")
    else:
        tun["sample_lo"] = _vec(tun["sample_lo"], "tuning.sample_lo", n)
        tun["sample_hi"] = _vec(tun["sample_hi"], "tuning.sample_hi", n)
    tun["test_x0"] = nom["x0"] if tun["test_x0"] is None else _vec(tun["test_x0"], "tuning.test_x0", n)
    tun["test_horizon"] = (nom["horizon"] if tun["test_horizon"] is None
                           else _num(tun["test_horizon"], "tuning.test_horizon", positive=True))
    res["tuning"] = tun

    ver = _merge("verify", raw.get("verify", {}), DEFAULTS["verify"])
    eps = ver["epsilons"]
    if not isinstance(eps, list) or not eps:
        raise ConfigError("verify.epsilons: expected a non-empty list")
    ver["epsilons"] = [_num(e, "verify.epsilons", positive=True) for e in eps]
    ver["dt"] = tun["dt"] if ver["dt"] is None else _num(ver["dt"], "verify.dt", positive=True)
    for k in ("lyapunov_horizon", "gain_horizon", "iss_horizon", "increase_tol",
              "terminal_tol", "gain_terminal_tol", "sup_bound", "disturbance_omega"):
        ver[k] = _num(ver[k], f"verify.{k}", positive=True)
    ver["disturbance_amplitude"] = _num(ver["disturbance_amplitude"], "verify.disturbance_amplitude")
    ver["disturbance_off"] = _num(ver["disturbance_off"], "verify.disturbance_off")
    res["verify"] = ver
    return RunConfig(res, source)


def builtin_configs() -> list[str]:
    """Names of the configurations shipped with the package."""
    files = resources.files("pishape") / "configs"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".toml"))


def load_config(path) -> RunConfig:
    """Read and validate a TOML run file.

    ``path`` may also be the bare name of a shipped configuration
    (``"lti3"`` or ``"cartpole"``).
    """
    p = Path(path)
    if not p.exists() and str(path) in builtin_configs():
        text = (resources.files("pishape") / "configs" / f"{path}.toml").read_text()
        source = f"builtin:{path}"
    else:
        text = p.read_text()
        source = str(p)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return parse_config(raw, source)
