"""INI run configuration: schema, typed parsing and validation.

Every command reads one flat key-value file with section headers. Values are
checked against a fixed schema before anything expensive runs, and unknown
sections or keys are rejected so that typos surface immediately.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

import numpy as np

from .dynamics import PlatoonState
from .params import ControllerParams, ICRanges, OptConfig, SimConfig, SpacingPolicy


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def _pair(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise ValueError("expected two numbers")
    return vals[0], vals[1]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


PARSERS = {"float": float, "int": int, "str": str, "bool": _bool, "floats": _floats,
           "pair": _pair, "path": str}

SCHEMA: dict[str, dict[str, str]] = {
    "run": {"seed": "int"},
    "controller": {k: "float" for k in
                   ("L", "lam", "v_star", "v_max", "epsilon", "mu", "accel_min", "accel_max")},
    "sim": {"dt": "float", "t_start": "float", "t_end": "float"},
    "policy": {"s_bar": "float", "rho": "float"},
    "optimizer": {"mu_lo": "float", "mu_hi": "float", "coarse_grid": "int",
                  "refine_tol": "float", "workers": "int", "compare": "bool"},
    "initial": {"positions": "floats", "speeds": "floats", "spacings": "floats",
                "lead_position": "float", "n": "int", "spacing_range": "pair",
                "speed_range": "pair", "use_policy": "bool"},
    "dataset": {"count": "int", "n": "int", "spacing_range": "pair", "speed_range": "pair",
                "batch": "int", "workers": "int"},
    "train": {"dataset": "path", "h1": "int", "h2": "int", "learning_rate": "float",
              "epochs": "int", "batch_size": "int", "optimizer": "str", "weight_decay": "float"},
    "predict": {"model": "path", "simulate_cost": "bool"},
    "scenario": {"merge_point": "float", "zone_length": "float", "zone_ahead": "float",
                 "t_min": "float", "scheduled_tf": "floats", "model": "path", "fixed_mu": "float"},
    "main": {"positions": "floats", "speeds": "floats", "spacings": "floats",
             "lead_position": "float"},
    "ramp": {"spawn_time": "float", "position": "float", "speed": "float",
             "exit_speed": "float", "t_f": "float"},
}


def _schema_for(section: str) -> dict[str, str] | None:
    if section.startswith("ramp."):
        return SCHEMA["ramp"]
    return SCHEMA.get(section)


@dataclass
class RunConfig:
    values: dict[str, dict] = field(default_factory=dict)
    source: str = "command line"
    ramp_sections: list[str] = field(default_factory=list)

    def get(self, section: str, key: str, default=None):
        return self.values.get(section, {}).get(key, default)

    def has(self, section: str, key: str) -> bool:
        return key in self.values.get(section, {})

    def section(self, section: str) -> dict:
        return dict(self.values.get(section, {}))

    @property
    def seed(self) -> int:
        return int(self.get("run", "seed", 0))

    def set(self, section: str, key: str, raw: str) -> None:
        schema = _schema_for(section)
        if schema is None:
            raise ConfigError(f"{self.source}: unknown section [{section}]")
        if key not in schema:
            raise ConfigError(f"{self.source}: [{section}] unknown key {key!r}")
        try:
            value = PARSERS[schema[key]](raw)
        except ValueError as exc:
            raise ConfigError(f"{self.source}: [{section}] {key} = {raw!r}: {exc}") from None
        self.values.setdefault(section, {})[key] = value
        if section.startswith("ramp.") and section not in self.ramp_sections:
            self.ramp_sections.append(section)


    def check_paths(self) -> None:
        """Every file named by a path-typed key must exist."""
        for section, vals in self.values.items():
            schema = _schema_for(section)
            for key, value in vals.items():
                if schema[key] == "path" and not os.path.exists(value):
                    raise ConfigError(f"{self.source}: [{section}] {key}: file not found: {value}")


def load_config(path: str | None) -> RunConfig:
    cfg = RunConfig(source="command line")
    if path is None:
        return cfg
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive (L)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg.source = path
    for section in parser.sections():
        for key, raw in parser.items(section):
            cfg.set(section, key, raw)
    return cfg


def _build(cls, cfg: RunConfig, section: str, **extra):
    kwargs = {k: v for k, v in cfg.section(section).items() if k in cls.__dataclass_fields__}
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cfg.source}: [{section}] {exc}") from None


def controller_params(cfg: RunConfig) -> ControllerParams:
    return _build(ControllerParams, cfg, "controller")


def sim_config(cfg: RunConfig) -> SimConfig:
    return _build(SimConfig, cfg, "sim")


def spacing_policy(cfg: RunConfig) -> SpacingPolicy:
    return _build(SpacingPolicy, cfg, "policy")


def opt_config(cfg: RunConfig) -> OptConfig:
    return _build(OptConfig, cfg, "optimizer")


def ic_ranges(cfg: RunConfig, section: str) -> ICRanges:
    extra = {}
    if cfg.has(section, "spacing_range"):
        extra["spacing"] = cfg.get(section, "spacing_range")
    if cfg.has(section, "speed_range"):
        extra["speed"] = cfg.get(section, "speed_range")
    try:
        return ICRanges(**extra)
    except ValueError as exc:
        raise ConfigError(f"{cfg.source}: [{section}] {exc}") from None


def explicit_state(cfg: RunConfig, section: str, params: ControllerParams) -> PlatoonState | None:
    """Platoon given by positions or spacings plus speeds; None if absent.

    Each spacing and speed is checked individually so the error names the
    offending index.
    """
    vals = cfg.section(section)
    if "speeds" not in vals and "positions" not in vals and "spacings" not in vals:
        return None
    if "speeds" not in vals:
        raise ConfigError(f"{cfg.source}: [{section}] speeds missing")
    if ("positions" in vals) == ("spacings" in vals):
        raise ConfigError(f"{cfg.source}: [{section}] give exactly one of positions, spacings")
    speeds = np.asarray(vals["speeds"], dtype=float)
    if "positions" in vals:
        positions = np.asarray(vals["positions"], dtype=float)
        if positions.size != speeds.size:
            raise ConfigError(f"{cfg.source}: [{section}] positions and speeds differ in length")
        spacings = positions[:-1] - positions[1:]
    else:
        spacings = np.asarray(vals["spacings"], dtype=float)
        if spacings.size != speeds.size - 1:
            raise ConfigError(f"{cfg.source}: [{section}] need one spacing fewer than speeds")
    if speeds.size < 2:
        raise ConfigError(f"{cfg.source}: [{section}] a platoon needs at least two vehicles")
    for i, s in enumerate(spacings):
        if not s > params.L:
            raise ConfigError(f"{cfg.source}: [{section}] spacing {i + 1} (vehicles {i + 1}-{i + 2}) "
                              f"= {s:g} must exceed L = {params.L:g}")
    for i, v in enumerate(speeds):
        if not 0.0 <= v <= params.v_max:
            raise ConfigError(f"{cfg.source}: [{section}] speed {i + 1} = {v:g} outside "
                              f"[0, {params.v_max:g}]")
    if "positions" in vals:
        return PlatoonState(positions, speeds)
    return PlatoonState.from_spacings(spacings, speeds, vals.get("lead_position", 0.0))


def initial_state(cfg: RunConfig, params: ControllerParams) -> PlatoonState:
    """Explicit initial condition, else a seeded uniform draw."""
    from .surrogate.dataset import sample_initial_conditions

    state = explicit_state(cfg, "initial", params)
    if state is not None:
        return state
    n = int(cfg.get("initial", "n", 7))
    if n < 2:
        raise ConfigError(f"{cfg.source}: [initial] n must be at least 2")
    ranges = ic_ranges(cfg, "initial")
    policy = spacing_policy(cfg) if cfg.get("initial", "use_policy", False) else None
    return sample_initial_conditions(n, ranges, policy, np.random.default_rng(cfg.seed), params)


def merge_scenario(cfg: RunConfig, params: ControllerParams):
    from .merge import MergeScenario, RampVehicle

    main = explicit_state(cfg, "main", params)
    if main is None:
        raise ConfigError(f"{cfg.source}: [main] platoon missing")
    sc = cfg.section("scenario")
    if "merge_point" not in sc:
        raise ConfigError(f"{cfg.source}: [scenario] merge_point missing")
    ramp = []
    for name in cfg.ramp_sections:
        vals = cfg.section(name)
        missing = [k for k in ("position", "speed") if k not in vals]
        if missing:
            raise ConfigError(f"{cfg.source}: [{name}] missing {', '.join(missing)}")
        ramp.append(RampVehicle(vals.get("spawn_time", 0.0), vals["position"], vals["speed"],
                                vals.get("exit_speed"), vals.get("t_f")))
    kwargs = {k: sc[k] for k in ("zone_length", "zone_ahead", "t_min") if k in sc}
    return MergeScenario(main, ramp, sc["merge_point"], policy=spacing_policy(cfg),
                         scheduled_tf=list(sc.get("scheduled_tf", [])), seed=cfg.seed, **kwargs)


def load_dataset(path: str, split_seed: int):
    from .surrogate import Dataset

    try:
        ds = Dataset.from_csv(path, split_seed=split_seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if len(ds) < 3:
        raise ConfigError(f"{path}: too few samples to split ({len(ds)})")
    return ds


def load_model_file(path: str):
    from .surrogate import load_model

    try:
        return load_model(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
