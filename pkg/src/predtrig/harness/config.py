"""Scenario configuration: JSON schema, validation and model construction.

The file format is a single JSON object with a ``schema_version`` field.
See ``scenarios/reference.json`` for the shipped reference scenario and the
README for the field-by-field schema.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from ..control import CostSpec
from ..dynamics import CartPoleParams, DisturbanceSpec, LtiModel, make_cartpole_model
from ..errors import ConfigurationError
from ..netsim import NetworkConfig, control_bandwidth

SCHEMA_VERSION = 1
MODES = ("predictive", "periodic")
PRIORITY_METHODS = ("chernoff", "exact")


@dataclass(frozen=True)
class AgentClass:
    name: str
    cartpole: CartPoleParams
    noise_std: tuple[float, ...]

    @property
    def sigma_v(self) -> np.ndarray:
        return np.diag(np.square(self.noise_std))


@dataclass(frozen=True)
class TriggerConfig:
    e_max: tuple[float, ...] = (0.03, 0.03, 0.1, 0.3)
    P_delta: float = 0.5
    H: int = 1
    method: str = "chernoff"
    variance_floor: float = 1e-12

    def __post_init__(self):
        if self.H != 1:
            raise ConfigurationError("the aggregate schedules exactly one round ahead; H must be 1")
        if self.method not in PRIORITY_METHODS:
            raise ConfigurationError(f"priority method must be one of {PRIORITY_METHODS}")
        if not 0.0 <= self.P_delta <= 1.0:
            raise ConfigurationError("P_delta must lie in [0, 1]")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    n_agents: int
    classes: dict[str, AgentClass]
    roster: tuple[str, ...]
    network: NetworkConfig
    Q_diag: tuple[float, ...]
    Q_sync_diag: tuple[float, ...]
    R: float
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    mode: str = "predictive"
    dt: float = 0.1
    rounds: int = 4800
    seed: int = 1
    disturbances: tuple[DisturbanceSpec, ...] = ()
    clamp_track: bool = False
    track_half_length: float = 0.25
    zero_gains: bool = False
    gains_path: str | None = None
    trace_path: str | None = None
    cost_window: int = 50
    msb_window: int = 500
    msb_growth: float = 1.2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if len(self.roster) != self.n_agents:
            raise ConfigurationError(f"roster lists {len(self.roster)} agents, n_agents is {self.n_agents}")
        if self.network.n_agents != self.n_agents:
            raise ConfigurationError("network.n_agents must equal n_agents")
        unknown = set(self.roster) - set(self.classes)
        if unknown:
            raise ConfigurationError(f"roster uses undefined agent classes {sorted(unknown)}")
        n = len(self.Q_diag)
        for name, vec in (("Q_sync_diag", self.Q_sync_diag), ("e_max", self.trigger.e_max)):
            if len(vec) != n:
                raise ConfigurationError(f"{name} must have {n} entries")
        for cls in self.classes.values():
            if len(cls.noise_std) != n:
                raise ConfigurationError(f"class {cls.name}: noise_std must have {n} entries")
        if self.rounds < 1 or self.cost_window < 1 or self.msb_window < 1:
            raise ConfigurationError("rounds and windows must be positive")
        if self.R <= 0:
            raise ConfigurationError("R must be positive")
        for d in self.disturbances:
            d.validate(n, self.n_agents)

    # -- derived objects -------------------------------------------------

    @property
    def predictive(self) -> bool:
        return self.mode == "predictive"

    def models(self) -> list[LtiModel]:
        cache: dict[str, LtiModel] = {}
        out = []
        for cname in self.roster:
            if cname not in cache:
                cls = self.classes[cname]
                cache[cname] = make_cartpole_model(cls.cartpole, self.dt, cls.sigma_v)
            out.append(cache[cname])
        return out

    def cost_spec(self) -> CostSpec:
        return CostSpec.uniform(self.n_agents, np.diag(self.Q_diag), np.diag(self.Q_sync_diag),
                                np.array([[self.R]]))

    def control_messages(self) -> int:
        """M_C for this mode: the configured value, else the bandwidth calculation."""
        if self.network.M_C is not None:
            return self.network.M_C
        return control_bandwidth(self.network, self.predictive)

    def with_(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def with_network(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, network=dataclasses.replace(self.network, **changes))

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        net = dataclasses.asdict(self.network)
        net.pop("n_agents")
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "n_agents": self.n_agents,
            "mode": self.mode,
            "dt": self.dt,
            "rounds": self.rounds,
            "seed": self.seed,
            "classes": {
                k: {"cartpole": dataclasses.asdict(c.cartpole), "noise_std": list(c.noise_std)}
                for k, c in self.classes.items()
            },
            "roster": list(self.roster),
            "network": net,
            "cost": {"Q_diag": list(self.Q_diag), "Q_sync_diag": list(self.Q_sync_diag), "R": self.R},
            "trigger": dataclasses.asdict(self.trigger) | {"e_max": list(self.trigger.e_max)},
            "disturbances": [
                dataclasses.asdict(d) | {"zero_components": list(d.zero_components)} for d in self.disturbances
            ],
            "clamp_track": self.clamp_track,
            "track_half_length": self.track_half_length,
            "zero_gains": self.zero_gains,
            "gains_path": self.gains_path,
            "trace_path": self.trace_path,
            "cost_window": self.cost_window,
            "msb_window": self.msb_window,
            "msb_growth": self.msb_growth,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScenarioConfig":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        try:
            n_agents = int(d["n_agents"])
            classes = {
                k: AgentClass(k, CartPoleParams(**v.get("cartpole", {})), tuple(float(s) for s in v["noise_std"]))
                for k, v in d["classes"].items()
            }
            cost = d["cost"]
            return cls(
                name=str(d.get("name", "scenario")),
                n_agents=n_agents,
                classes=classes,
                roster=tuple(d["roster"]),
                network=NetworkConfig(n_agents=n_agents, **d.get("network", {})),
                Q_diag=tuple(float(q) for q in cost["Q_diag"]),
                Q_sync_diag=tuple(float(q) for q in cost["Q_sync_diag"]),
                R=float(cost["R"]),
                trigger=TriggerConfig(**{k: tuple(v) if k == "e_max" else v
                                         for k, v in d.get("trigger", {}).items()}),
                mode=d.get("mode", "predictive"),
                dt=float(d.get("dt", 0.1)),
                rounds=int(d.get("rounds", 4800)),
                seed=int(d.get("seed", 1)),
                disturbances=tuple(DisturbanceSpec(**x) for x in d.get("disturbances", [])),
                clamp_track=bool(d.get("clamp_track", False)),
                track_half_length=float(d.get("track_half_length", 0.25)),
                zero_gains=bool(d.get("zero_gains", False)),
                gains_path=d.get("gains_path"),
                trace_path=d.get("trace_path"),
                cost_window=int(d.get("cost_window", 50)),
                msb_window=int(d.get("msb_window", 500)),
                msb_growth=float(d.get("msb_growth", 1.2)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed scenario config: {exc}") from exc


def load_config(path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return ScenarioConfig.from_dict(data)


def save_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


def reference_config() -> ScenarioConfig:
    text = resources.files("predtrig").joinpath("scenarios/reference.json").read_text()
    return ScenarioConfig.from_dict(json.loads(text))
