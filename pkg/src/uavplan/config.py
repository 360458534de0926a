"""Scenario configuration: agents, noise channels, planner and run settings.

The on-disk format is a single YAML document; all numbers are SI units.
Parsing is strict: unknown noise kinds, duplicate agent ids, or invalid
parameter ranges raise ConfigError rather than being silently coerced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Tuple

import yaml

from uavplan.noise import Beta, Gaussian, NoiseSpec, Uniform
from uavplan.nlp import SolverOptions
from uavplan.planner import PlannerParams

CHANNELS = ("speed_v", "altitude_z", "heading_psi")


class ConfigError(ValueError):
    """The scenario document is malformed or inconsistent."""


@dataclass(frozen=True)
class AgentConfig:
    agent_id: int
    start: Tuple[float, float, float]
    destination: Tuple[float, float, float]
    heading: Optional[float] = None

    def initial_heading(self) -> float:
        """Configured heading, or face the destination (0 if coincident)."""
        if self.heading is not None:
            return float(self.heading)
        dx = self.destination[0] - self.start[0]
        dy = self.destination[1] - self.start[1]
        if abs(dx) < 1e-12 and abs(dy) < 1e-12:
            return 0.0
        return math.atan2(dy, dx)


@dataclass(frozen=True)
class RunConfig:
    steps: int
    master_seed: int
    particles: int = 1000

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ConfigError(f"run.steps must be >= 1, got {self.steps}")
        if self.particles < 1:
            raise ConfigError(f"run.particles must be >= 1, got {self.particles}")


@dataclass(frozen=True)
class SolverConfig:
    starts: int = 4
    feasibility_tol: float = 1e-6
    kkt_tol: float = 1e-6
    max_outer: int = 50
    max_inner: int = 500
    initial_penalty: float = 1e3
    penalty_growth: float = 10.0

    def __post_init__(self) -> None:
        if self.starts < 1:
            raise ConfigError(f"solver.starts must be >= 1, got {self.starts}")

    def options(self) -> SolverOptions:
        return SolverOptions(
            feasibility_tol=self.feasibility_tol,
            kkt_tol=self.kkt_tol,
            max_outer=self.max_outer,
            max_inner=self.max_inner,
            initial_penalty=self.initial_penalty,
            penalty_growth=self.penalty_growth,
        )


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int
    delta: float
    smoothness_weight: float
    d_min: float
    epsilon: float
    v_bounds: Tuple[float, float]
    z_bounds: Tuple[float, float]
    psi_bounds: Tuple[float, float]
    v_rate: float
    z_rate: float

    def params(self, previous_control=(0.0, 0.0, 0.0)) -> PlannerParams:
        return PlannerParams(
            horizon=self.horizon,
            delta=self.delta,
            smoothness_weight=self.smoothness_weight,
            d_min=self.d_min,
            epsilon=self.epsilon,
            v_bounds=self.v_bounds,
            z_bounds=self.z_bounds,
            psi_bounds=self.psi_bounds,
            v_rate=self.v_rate,
            z_rate=self.z_rate,
            previous_control=tuple(previous_control),
        )


@dataclass(frozen=True)
class ScenarioConfig:
    agents: Tuple[AgentConfig, ...]
    noise: Mapping[str, NoiseSpec]
    planner: PlannerConfig
    run: RunConfig
    solver: SolverConfig

    def __post_init__(self) -> None:
        ids = [a.agent_id for a in self.agents]
        if not ids:
            raise ConfigError("scenario needs at least one agent")
        if len(set(ids)) != len(ids):
            raise ConfigError(f"agent ids must be unique, got {ids}")
        if ids != sorted(ids):
            raise ConfigError(f"agent ids must be ascending (planning order), got {ids}")
        missing = [ch for ch in CHANNELS if ch not in self.noise]
        if missing:
            raise ConfigError(f"missing noise channels: {missing}")
        try:
            self.planner.params()
        except ValueError as exc:
            raise ConfigError(f"invalid planner settings: {exc}") from None


def _noise_spec_to_dict(spec: NoiseSpec) -> dict:
    dist = spec.distribution
    if isinstance(dist, Beta):
        return {"beta": {"alpha": dist.alpha, "beta": dist.beta}}
    if isinstance(dist, Uniform):
        return {"uniform": {"low": dist.low, "high": dist.high}}
    if isinstance(dist, Gaussian):
        return {"gaussian": {"mean": dist.mean, "std": dist.std}}
    raise ConfigError(f"unsupported distribution {type(dist).__name__}")


def _noise_spec_from_dict(channel: str, node: Mapping) -> NoiseSpec:
    if not isinstance(node, Mapping) or len(node) != 1:
        raise ConfigError(f"noise.{channel} must map one kind to its parameters")
    kind, params = next(iter(node.items()))
    try:
        if kind == "beta":
            dist = Beta(float(params["alpha"]), float(params["beta"]))
        elif kind == "uniform":
            dist = Uniform(float(params["low"]), float(params["high"]))
        elif kind == "gaussian":
            dist = Gaussian(float(params["mean"]), float(params["std"]))
        else:
            raise ConfigError(f"unknown noise kind {kind!r} for channel {channel}")
        return NoiseSpec(channel, dist)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad parameters for noise.{channel}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"invalid noise.{channel}: {exc}") from None


def _triple(node, name: str) -> Tuple[float, float, float]:
    try:
        x, y, z = (float(v) for v in node)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be three numbers, got {node!r}") from None
    return (x, y, z)


def _pair(node, name: str) -> Tuple[float, float]:
    try:
        lo, hi = (float(v) for v in node)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be two numbers, got {node!r}") from None
    return (lo, hi)


def scenario_from_dict(doc: Mapping) -> ScenarioConfig:
    try:
        agents = tuple(
            AgentConfig(
                agent_id=int(a["id"]),
                start=_triple(a["start"], "agent start"),
                destination=_triple(a["destination"], "agent destination"),
                heading=float(a["heading"]) if "heading" in a else None,
            )
            for a in doc["agents"]
        )
        noise = {
            ch: _noise_spec_from_dict(ch, doc["noise"][ch]) for ch in CHANNELS
        }
        p = doc["planner"]
        planner = PlannerConfig(
            horizon=int(p["horizon"]),
            delta=float(p["delta"]),
            smoothness_weight=float(p["smoothness_weight"]),
            d_min=float(p["d_min"]),
            epsilon=float(p["epsilon"]),
            v_bounds=_pair(p["v_bounds"], "planner.v_bounds"),
            z_bounds=_pair(p["z_bounds"], "planner.z_bounds"),
            psi_bounds=_pair(p["psi_bounds"], "planner.psi_bounds"),
            v_rate=float(p["v_rate"]),
            z_rate=float(p["z_rate"]),
        )
        r = doc["run"]
        run = RunConfig(
            steps=int(r["steps"]),
            master_seed=int(r["master_seed"]),
            particles=int(r.get("particles", 1000)),
        )
        s = doc.get("solver", {})
        solver = SolverConfig(
            starts=int(s.get("starts", 4)),
            feasibility_tol=float(s.get("feasibility_tol", 1e-6)),
            kkt_tol=float(s.get("kkt_tol", 1e-6)),
            max_outer=int(s.get("max_outer", 50)),
            max_inner=int(s.get("max_inner", 500)),
            initial_penalty=float(s.get("initial_penalty", 1e3)),
            penalty_growth=float(s.get("penalty_growth", 10.0)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed scenario document: {exc!r}") from None
    return ScenarioConfig(agents=agents, noise=noise, planner=planner, run=run, solver=solver)


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    agents = []
    for a in cfg.agents:
        node = {
            "id": a.agent_id,
            "start": list(a.start),
            "destination": list(a.destination),
        }
        if a.heading is not None:
            node["heading"] = a.heading
        agents.append(node)
    return {
        "agents": agents,
        "noise": {ch: _noise_spec_to_dict(cfg.noise[ch]) for ch in CHANNELS},
        "planner": {
            "horizon": cfg.planner.horizon,
            "delta": cfg.planner.delta,
            "smoothness_weight": cfg.planner.smoothness_weight,
            "d_min": cfg.planner.d_min,
            "epsilon": cfg.planner.epsilon,
            "v_bounds": list(cfg.planner.v_bounds),
            "z_bounds": list(cfg.planner.z_bounds),
            "psi_bounds": list(cfg.planner.psi_bounds),
            "v_rate": cfg.planner.v_rate,
            "z_rate": cfg.planner.z_rate,
        },
        "run": {
            "steps": cfg.run.steps,
            "master_seed": cfg.run.master_seed,
            "particles": cfg.run.particles,
        },
        "solver": {
            "starts": cfg.solver.starts,
            "feasibility_tol": cfg.solver.feasibility_tol,
            "kkt_tol": cfg.solver.kkt_tol,
            "max_outer": cfg.solver.max_outer,
            "max_inner": cfg.solver.max_inner,
            "initial_penalty": cfg.solver.initial_penalty,
            "penalty_growth": cfg.solver.penalty_growth,
        },
    }


def load_scenario(path: str) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = yaml.safe_load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    if not isinstance(doc, Mapping):
        raise ConfigError("scenario document must be a mapping")
    return scenario_from_dict(doc)


def dump_scenario(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(scenario_to_dict(cfg), sort_keys=True, default_flow_style=None)
