"""Run configuration: TOML file <-> nested dataclasses."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields, asdict

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .descent import ScenarioConfig

SCENARIOS = ("problem4", "problem5", "problem6", "custom")
FORMULATIONS = {"problem4": "open_loop", "problem5": "saturated_feedback",
                "problem6": "chance_feedback"}


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclass
class SolverConfig:
    nodes: int = 150
    substeps: int = 1
    fd: str = "central"
    max_outer: int = 40
    max_inner: int = 400
    kkt_tol: float = 1e-5
    feas_tol: float = 1e-6
    time_limit: float = 0.0          # seconds, 0 = none

    def validate(self):
        if self.nodes < 10:
            raise ConfigError("solver.nodes must be >= 10")
        if self.substeps < 1:
            raise ConfigError("solver.substeps must be >= 1")
        if self.fd not in ("forward", "central"):
            raise ConfigError("solver.fd must be 'forward' or 'central'")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ConfigError("solver iteration limits must be positive")
        if not (self.kkt_tol > 0 and self.feas_tol > 0) or self.time_limit < 0:
            raise ConfigError("solver tolerances must be positive")


@dataclass
class SimulationConfig:
    n_paths: int = 1000
    dt: float = 0.0                  # 0 = control interval / 10
    seed: int = 0
    sample_paths: int = 50

    def validate(self):
        if self.n_paths < 2:
            raise ConfigError("simulation.n_paths must be >= 2")
        if self.dt < 0:
            raise ConfigError("simulation.dt must be non-negative")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("simulation.seed must be an unsigned 64-bit integer")
        if self.sample_paths < 0:
            raise ConfigError("simulation.sample_paths must be non-negative")


@dataclass
class AccessibilityConfig:
    open_loop_points: int = 20
    feedback_points: int = 10
    open_loop_depth: int = 4
    feedback_depth: int = 2
    feedback_samples: int = 30
    tol_sv: float = 1e-6
    seed: int = 0

    def validate(self):
        if self.open_loop_points < 1 or self.feedback_points < 1:
            raise ConfigError("accessibility point counts must be positive")
        if self.open_loop_depth < 2 or self.feedback_depth < 2:
            raise ConfigError("accessibility depths must be >= 2")
        if self.feedback_samples < 2:
            raise ConfigError("accessibility.feedback_samples must be >= 2")
        if not self.tol_sv > 0:
            raise ConfigError("accessibility.tol_sv must be positive")


@dataclass
class BoundConfig:
    epsilon: float = math.inf

    def validate(self):
        if not self.epsilon >= 0:
            raise ConfigError("bound.epsilon must be non-negative")


@dataclass
class ProbeConfig:
    eta: list = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    t_f: float = 1.0
    noise: float = 0.1
    base_intervals: int = 20
    steps_per_interval: int = 4

    def validate(self):
        if not self.eta or any(not 0 < e <= self.t_f for e in self.eta):
            raise ConfigError("probe.eta values must lie in (0, t_f]")
        if self.noise < 0 or self.base_intervals < 1 or self.steps_per_interval < 1:
            raise ConfigError("probe settings out of range")


@dataclass
class RunConfig:
    scenario: str = "problem4"
    formulation: str = ""
    out: str = "runs"
    model: ScenarioConfig = field(default_factory=ScenarioConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    accessibility: AccessibilityConfig = field(default_factory=AccessibilityConfig)
    bound: BoundConfig = field(default_factory=BoundConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}")
        if self.scenario == "custom":
            if self.formulation not in FORMULATIONS.values():
                raise ConfigError("custom scenario needs formulation in "
                                  f"{sorted(FORMULATIONS.values())}")
        else:
            expected = FORMULATIONS[self.scenario]
            if self.formulation not in ("", expected):
                raise ConfigError(f"{self.scenario} implies formulation '{expected}'")
            self.formulation = expected
        for part in (self.solver, self.simulation, self.accessibility, self.bound, self.probe):
            part.validate()

    @property
    def problem(self):
        """Builder key for the formulation."""
        return {v: k for k, v in FORMULATIONS.items()}[self.formulation]

    def to_dict(self):
        d = {"run": {"scenario": self.scenario, "formulation": self.formulation, "out": self.out},
             "model": self.model.to_dict()}
        for name in ("solver", "simulation", "accessibility", "bound", "probe"):
            d[name] = asdict(getattr(self, name))
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {"run", "model", "solver", "simulation", "accessibility",
                            "bound", "probe"}
        if unknown:
            raise ConfigError(f"unknown section(s): {sorted(unknown)}")
        run = dict(d.get("run", {}))
        bad = set(run) - {"scenario", "formulation", "out"}
        if bad:
            raise ConfigError(f"unknown key(s) in [run]: {sorted(bad)}")
        try:
            model = ScenarioConfig.from_dict(d.get("model", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"[model]: {exc}") from None
        parts = {}
        for name, typ in (("solver", SolverConfig), ("simulation", SimulationConfig),
                          ("accessibility", AccessibilityConfig), ("bound", BoundConfig),
                          ("probe", ProbeConfig)):
            sec = dict(d.get(name, {}))
            known = {f.name for f in fields(typ)}
            if set(sec) - known:
                raise ConfigError(f"unknown key(s) in [{name}]: {sorted(set(sec) - known)}")
            try:
                parts[name] = typ(**sec)
            except TypeError as exc:
                raise ConfigError(f"[{name}]: {exc}") from None
        return cls(scenario=run.get("scenario", "problem4"),
                   formulation=run.get("formulation", ""), out=run.get("out", "runs"),
                   model=model, **parts)


def loads(text):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # message carries "(at line L, column C)"
        raise ConfigError(f"config parse error: {exc}") from None
    return RunConfig.from_dict(data)


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads(text)


def dumps(cfg):
    return tomli_w.dumps(cfg.to_dict())


def default_config_text(scenario="problem4"):
    return dumps(RunConfig(scenario=scenario))
