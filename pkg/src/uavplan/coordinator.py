"""Distributed sequential-broadcast planning and the receding-horizon loop.

At every global step the vehicles re-plan in ascending id order.  Each
planner consumes the plans already produced this step by lower-index
vehicles as-is, and the one-step-old plans of higher-index vehicles
shifted by one slot with the final slot held.  After all vehicles have
planned, each applies the first control of its new plan, one disturbance
triple per vehicle is drawn, and ground truth advances one step.

Randomness is split from the master seed into named substreams so that
runs are reproducible bit-for-bit and independent of evaluation order:
spawn key (0, vehicle_index, channel_index) feeds ground-truth noise,
(1, step, vehicle_index) feeds planner start perturbations, and
(2, step, vehicle_index) feeds validation particle clouds.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from uavplan.config import CHANNELS, ScenarioConfig, scenario_from_dict, scenario_to_dict
from uavplan.moments.dynamics import MomentVector, pack_expansion
from uavplan.moments.expansion import build_expansion
from uavplan.noise import build_moment_table
from uavplan.planner import HorizonPlan, plan, plan_from_controls
from uavplan.simulator import (
    TrueState,
    mc_rollout,
    pairwise_distance_stats,
    sample_noise_triple,
    step_truth,
)


class RunAborted(RuntimeError):
    """The receding-horizon run stopped early; the partial log is attached."""

    def __init__(self, message: str, log: Optional["RunLog"] = None):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class PlanMessage:
    """One vehicle's broadcast: its planned moments for the next T steps."""

    sender: int
    planned_at: int
    moments: Tuple[MomentVector, ...]
    controls: np.ndarray

    def __post_init__(self) -> None:
        controls = np.asarray(self.controls, dtype=np.float64).copy()
        if controls.ndim != 2 or controls.shape[1] != 3:
            raise ValueError(f"controls echo must have shape (T, 3), got {controls.shape}")
        if len(self.moments) != controls.shape[0]:
            raise ValueError(
                f"payload must carry one moment row per horizon step: "
                f"{len(self.moments)} rows for {controls.shape[0]} steps"
            )
        controls.flags.writeable = False
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "moments", tuple(self.moments))


def broadcast_message(horizon_plan: HorizonPlan) -> PlanMessage:
    """Package a solved plan as its broadcast payload (rows 1..T)."""
    return PlanMessage(
        sender=horizon_plan.owner,
        planned_at=horizon_plan.planned_at,
        moments=horizon_plan.moments[1:],
        controls=horizon_plan.controls,
    )


def shift_plan_with_hold(stale: HorizonPlan) -> HorizonPlan:
    """Re-index a one-step-old plan to the current planning epoch.

    Slot 0 is dropped; the final slot holds the last planned moments and
    control, i.e. the vehicle is assumed to stay at its last planned
    state for the uncovered trailing step.
    """
    controls = np.vstack([stale.controls[1:], stale.controls[-1:]])
    slacks = np.vstack([stale.slacks[1:], stale.slacks[-1:]])
    rows = list(stale.moments[1:]) + [stale.moments[-1]]
    moments = tuple(
        MomentVector(values=row.values, time_step=i) for i, row in enumerate(rows)
    )
    return HorizonPlan(
        controls=controls,
        slacks=slacks,
        moments=moments,
        owner=stale.owner,
        planned_at=stale.planned_at + 1,
        fallback=stale.fallback,
        converged=stale.converged,
        objective_value=float("nan"),
    )


def packed_expansion_for(scenario: ScenarioConfig):
    """Noise moment tables for the scenario, packed for the rollout kernel."""
    tables = {
        ch: build_moment_table(scenario.noise[ch], scenario.planner.delta)
        for ch in CHANNELS
    }
    return pack_expansion(build_expansion(), tables)


def initial_true_states(scenario: ScenarioConfig) -> Dict[int, TrueState]:
    return {
        a.agent_id: TrueState(a.start[0], a.start[1], a.start[2], a.initial_heading())
        for a in scenario.agents
    }


def bootstrap_plans(scenario: ScenarioConfig, packed=None) -> List[HorizonPlan]:
    """Zero-control plans standing in for the first round's previous plans.

    Moments are propagated from each start under the scenario noise, so
    the bootstrap plans obey the same moment recursion as solved plans
    (with nonzero-mean noise a zero control still drifts the mean).
    """
    if packed is None:
        packed = packed_expansion_for(scenario)
    params = scenario.planner.params()
    plans = []
    for agent in scenario.agents:
        state = (
            agent.start[0],
            agent.start[1],
            agent.start[2],
            agent.initial_heading(),
        )
        plans.append(
            plan_from_controls(
                np.zeros((params.horizon, 3)),
                state,
                params,
                packed,
                owner=agent.agent_id,
                planned_at=-1,
            )
        )
    return plans


@dataclass(frozen=True)
class PlanRecord:
    """Logged metadata of one vehicle's plan at one global step."""

    owner: int
    planned_at: int
    controls: Tuple[Tuple[float, float, float], ...]
    fallback: bool
    converged: bool
    objective: Optional[float]
    consumed: Tuple[dict, ...]

    def controls_array(self) -> np.ndarray:
        return np.asarray(self.controls, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "owner": self.owner,
            "planned_at": self.planned_at,
            "controls": [list(row) for row in self.controls],
            "fallback": self.fallback,
            "converged": self.converged,
            "objective": self.objective,
            "consumed": [dict(c) for c in self.consumed],
        }

    @classmethod
    def from_dict(cls, node: Mapping) -> "PlanRecord":
        return cls(
            owner=int(node["owner"]),
            planned_at=int(node["planned_at"]),
            controls=tuple(tuple(float(v) for v in row) for row in node["controls"]),
            fallback=bool(node["fallback"]),
            converged=bool(node["converged"]),
            objective=None if node["objective"] is None else float(node["objective"]),
            consumed=tuple(dict(c) for c in node["consumed"]),
        )


@dataclass(frozen=True)
class StepRecord:
    """Everything observed during one global step.

    pre_states are the exact true states each planner initialized from;
    planned_mean_distance holds the pairwise distances between the
    vehicles' planned mean positions one step ahead (row 1 of each fresh
    plan), the per-step sample of the mean trajectory.
    """

    step: int
    pre_states: Mapping[int, Tuple[float, float, float, float]]
    applied: Mapping[int, Tuple[float, float, float]]
    noise: Mapping[int, Tuple[float, float, float]]
    plans: Mapping[int, PlanRecord]
    planned_mean_distance: Mapping[str, float]
    planned_horizon_min_distance: Mapping[str, float]
    true_distance: Mapping[str, float]

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "pre_states": {str(k): list(v) for k, v in self.pre_states.items()},
            "applied": {str(k): list(v) for k, v in self.applied.items()},
            "noise": {str(k): list(v) for k, v in self.noise.items()},
            "plans": {str(k): p.to_dict() for k, p in self.plans.items()},
            "planned_mean_distance": dict(self.planned_mean_distance),
            "planned_horizon_min_distance": dict(self.planned_horizon_min_distance),
            "true_distance": dict(self.true_distance),
        }

    @classmethod
    def from_dict(cls, node: Mapping) -> "StepRecord":
        return cls(
            step=int(node["step"]),
            pre_states={
                int(k): tuple(float(x) for x in v) for k, v in node["pre_states"].items()
            },
            applied={
                int(k): tuple(float(x) for x in v) for k, v in node["applied"].items()
            },
            noise={
                int(k): tuple(float(x) for x in v) for k, v in node["noise"].items()
            },
            plans={int(k): PlanRecord.from_dict(p) for k, p in node["plans"].items()},
            planned_mean_distance={
                str(k): float(v) for k, v in node["planned_mean_distance"].items()
            },
            planned_horizon_min_distance={
                str(k): float(v)
                for k, v in node["planned_horizon_min_distance"].items()
            },
            true_distance={str(k): float(v) for k, v in node["true_distance"].items()},
        )


def pair_key(a: int, b: int) -> str:
    lo, hi = sorted((int(a), int(b)))
    return f"{lo}-{hi}"


class RunLog:
    """Append-only record of one receding-horizon run.

    Serialized as line-delimited JSON: one header record, one record per
    global step, and one footer record once the run finished.
    """

    def __init__(self, config: dict, seed: int):
        self.config = config
        self.seed = int(seed)
        self.steps: List[StepRecord] = []
        self.footer: Optional[dict] = None

    @property
    def complete(self) -> bool:
        return self.footer is not None

    def scenario(self) -> ScenarioConfig:
        return scenario_from_dict(self.config)

    def append_step(self, record: StepRecord) -> None:
        if self.footer is not None:
            raise ValueError("run log is already finished")
        if record.step != len(self.steps):
            raise ValueError(f"expected step {len(self.steps)}, got {record.step}")
        self.steps.append(record)

    def finish(
        self,
        final_states: Mapping[int, Tuple[float, float, float, float]],
        arrival_errors: Mapping[int, float],
        arrival_steps: Mapping[int, int],
        durations_s: Mapping[int, float],
        fallback_counts: Mapping[int, int],
    ) -> None:
        if self.footer is not None:
            raise ValueError("run log is already finished")
        self.footer = {
            "steps": len(self.steps),
            "final_states": {str(k): list(v) for k, v in final_states.items()},
            "arrival_errors": {str(k): float(v) for k, v in arrival_errors.items()},
            "arrival_steps": {str(k): int(v) for k, v in arrival_steps.items()},
            "durations_s": {str(k): float(v) for k, v in durations_s.items()},
            "fallback_counts": {str(k): int(v) for k, v in fallback_counts.items()},
        }

    def final_states(self) -> Dict[int, Tuple[float, float, float, float]]:
        if self.footer is None:
            raise ValueError("run log has no footer")
        return {
            int(k): tuple(float(x) for x in v)
            for k, v in self.footer["final_states"].items()
        }

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {"record": "header", "version": 1, "seed": self.seed, "config": self.config},
                sort_keys=True,
            )
        ]
        for record in self.steps:
            lines.append(json.dumps({"record": "step", **record.to_dict()}, sort_keys=True))
        if self.footer is not None:
            lines.append(json.dumps({"record": "footer", **self.footer}, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "RunLog":
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines:
            raise ValueError("empty run log")
        header = json.loads(lines[0])
        if header.get("record") != "header":
            raise ValueError("run log must start with a header record")
        log = cls(config=header["config"], seed=int(header["seed"]))
        for line in lines[1:]:
            node = json.loads(line)
            kind = node.get("record")
            if kind == "step":
                log.append_step(StepRecord.from_dict(node))
            elif kind == "footer":
                footer = dict(node)
                footer.pop("record")
                log.footer = footer
            else:
                raise ValueError(f"unknown record kind {kind!r}")
        return log

    def trajectories_csv(self) -> str:
        """Flat per-step table: state before the step and the applied control.

        The last row carries the final state (step index = number of
        steps) with empty control cells.
        """
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["step", "uav", "x", "y", "z", "psi", "u_v", "u_z", "u_psi"])
        for record in self.steps:
            for uav in sorted(record.pre_states):
                x, y, z, psi = record.pre_states[uav]
                u_v, u_z, u_psi = record.applied[uav]
                writer.writerow([record.step, uav, x, y, z, psi, u_v, u_z, u_psi])
        if self.footer is not None:
            for uav, state in sorted(self.final_states().items()):
                x, y, z, psi = state
                writer.writerow([len(self.steps), uav, x, y, z, psi, "", "", ""])
        return out.getvalue()


def _plan_seed(master_seed: int, step: int, agent_index: int) -> int:
    seq = np.random.SeedSequence(master_seed, spawn_key=(1, step, agent_index))
    return int(seq.generate_state(1)[0])


def _validation_seed(seed: int, step: int, agent_index: int) -> int:
    seq = np.random.SeedSequence(seed, spawn_key=(2, step, agent_index))
    return int(seq.generate_state(1)[0])


def _distance(a: Sequence[float], b: Sequence[float]) -> float:
    return float(math.dist(a, b))


def run_receding_horizon(
    scenario: ScenarioConfig,
    seed: Optional[int] = None,
    message_sink: Optional[list] = None,
) -> RunLog:
    """Simulate the full distributed receding-horizon protocol.

    Returns the complete run log.  If a planner raises a protocol error
    the run aborts with the partial log attached to the exception.  Pass
    a list as message_sink to additionally collect every PlanMessage in
    broadcast order.
    """
    master = scenario.run.master_seed if seed is None else int(seed)
    packed = packed_expansion_for(scenario)
    agents = scenario.agents
    delta = scenario.planner.delta
    specs = {ch: scenario.noise[ch] for ch in CHANNELS}
    solver_options = scenario.solver.options()

    states = initial_true_states(scenario)
    history = [dict(states)]
    plans: Dict[int, HorizonPlan] = {p.owner: p for p in bootstrap_plans(scenario, packed)}
    prev_applied: Dict[int, Tuple[float, float, float]] = {
        a.agent_id: (0.0, 0.0, 0.0) for a in agents
    }
    noise_rngs = {
        a.agent_id: {
            ch: np.random.default_rng(
                np.random.SeedSequence(master, spawn_key=(0, idx, c))
            )
            for c, ch in enumerate(CHANNELS)
        }
        for idx, a in enumerate(agents)
    }
    fallback_counts = {a.agent_id: 0 for a in agents}
    log = RunLog(config=scenario_to_dict(scenario), seed=master)

    try:
        for k in range(scenario.run.steps):
            fresh: Dict[int, HorizonPlan] = {}
            consumed_log: Dict[int, Tuple[dict, ...]] = {}
            shifted_cache: Dict[int, HorizonPlan] = {}
            for idx, agent in enumerate(agents):
                aid = agent.agent_id
                others: List[HorizonPlan] = []
                consumed: List[dict] = []
                for other in agents:
                    oid = other.agent_id
                    if oid == aid:
                        continue
                    new_plan = fresh.get(oid)
                    if new_plan is not None:
                        others.append(new_plan)
                        consumed.append(
                            {"sender": oid, "planned_at": new_plan.planned_at, "shifted": False}
                        )
                    else:
                        if oid not in shifted_cache:
                            shifted_cache[oid] = shift_plan_with_hold(plans[oid])
                        others.append(shifted_cache[oid])
                        consumed.append(
                            {
                                "sender": oid,
                                "planned_at": plans[oid].planned_at,
                                "shifted": True,
                            }
                        )
                params = scenario.planner.params(previous_control=prev_applied[aid])
                new_plan = plan(
                    state=states[aid].as_tuple(),
                    destination=agent.destination,
                    others=others,
                    params=params,
                    packed=packed,
                    previous_plan=plans[aid] if k > 0 else None,
                    starts=scenario.solver.starts,
                    seed=_plan_seed(master, k, idx),
                    owner=aid,
                    planned_at=k,
                    solver_options=solver_options,
                )
                fresh[aid] = new_plan
                consumed_log[aid] = tuple(consumed)
                if new_plan.fallback:
                    fallback_counts[aid] += 1
                if message_sink is not None:
                    message_sink.append(broadcast_message(new_plan))

            applied = {
                aid: tuple(float(v) for v in fresh[aid].controls[0]) for aid in fresh
            }
            noise = {a.agent_id: sample_noise_triple(specs, noise_rngs[a.agent_id]) for a in agents}
            new_states = {
                a.agent_id: step_truth(
                    states[a.agent_id], applied[a.agent_id], noise[a.agent_id], delta
                )
                for a in agents
            }

            next_means = {aid: fresh[aid].moments[1].mean_position() for aid in fresh}
            horizon_means = {
                aid: np.stack([m.mean_position() for m in fresh[aid].moments[1:]])
                for aid in fresh
            }
            planned_mean_distance = {}
            planned_horizon_min_distance = {}
            true_distance = {}
            for i, a in enumerate(agents):
                for b in agents[i + 1 :]:
                    key = pair_key(a.agent_id, b.agent_id)
                    planned_mean_distance[key] = _distance(
                        next_means[a.agent_id], next_means[b.agent_id]
                    )
                    gaps = horizon_means[a.agent_id] - horizon_means[b.agent_id]
                    planned_horizon_min_distance[key] = float(
                        np.sqrt((gaps * gaps).sum(axis=1)).min()
                    )
                    true_distance[key] = _distance(
                        new_states[a.agent_id].position(), new_states[b.agent_id].position()
                    )

            log.append_step(
                StepRecord(
                    step=k,
                    pre_states={aid: states[aid].as_tuple() for aid in states},
                    applied=applied,
                    noise=noise,
                    plans={
                        aid: PlanRecord(
                            owner=aid,
                            planned_at=k,
                            controls=tuple(
                                tuple(float(v) for v in row) for row in fresh[aid].controls
                            ),
                            fallback=fresh[aid].fallback,
                            converged=fresh[aid].converged,
                            objective=(
                                float(fresh[aid].objective_value)
                                if math.isfinite(fresh[aid].objective_value)
                                else None
                            ),
                            consumed=consumed_log[aid],
                        )
                        for aid in fresh
                    },
                    planned_mean_distance=planned_mean_distance,
                    planned_horizon_min_distance=planned_horizon_min_distance,
                    true_distance=true_distance,
                )
            )
            states = new_states
            history.append(dict(states))
            plans = fresh
            prev_applied = applied
    except (ValueError, RuntimeError) as exc:
        raise RunAborted(f"run aborted at step {len(log.steps)}: {exc}", log=log) from exc

    arrival_errors = {}
    arrival_steps = {}
    durations = {}
    for agent in agents:
        aid = agent.agent_id
        arrival_errors[aid] = _distance(states[aid].position(), agent.destination)
        arrival_steps[aid] = -1
        for k, snapshot in enumerate(history):
            if _distance(snapshot[aid].position(), agent.destination) <= 1.0:
                arrival_steps[aid] = k
                break
        reached = arrival_steps[aid] if arrival_steps[aid] >= 0 else scenario.run.steps
        durations[aid] = reached * delta
    log.finish(
        final_states={aid: states[aid].as_tuple() for aid in states},
        arrival_errors=arrival_errors,
        arrival_steps=arrival_steps,
        durations_s=durations,
        fallback_counts=fallback_counts,
    )
    return log


@dataclass(frozen=True)
class ValidationRecord:
    """Distance statistics of one pair at one horizon step of one replan."""

    step: int
    pair: Tuple[int, int]
    horizon_step: int
    min: float
    q01: float
    q25: float
    q50: float
    q75: float
    q99: float
    violation_fraction: float
    passed: bool


@dataclass(frozen=True)
class ValidationReport:
    """Monte Carlo validation of every replanned horizon in a run log.

    The pass bar applies to horizon steps 1..T; horizon step 0 is the
    shared pre-plan state and carries no fresh noise.
    """

    records: Tuple[ValidationRecord, ...]
    epsilon: float
    d_min: float
    particles: int
    seed: int

    @property
    def gated_records(self) -> Tuple[ValidationRecord, ...]:
        return tuple(r for r in self.records if r.horizon_step >= 1)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.gated_records)

    @property
    def worst_violation(self) -> Optional[ValidationRecord]:
        gated = self.gated_records
        if not gated:
            return None
        return max(gated, key=lambda r: r.violation_fraction)

    @property
    def min_distance(self) -> float:
        gated = self.gated_records
        if not gated:
            return float("inf")
        return min(r.min for r in gated)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(
            [
                "step",
                "pair",
                "horizon_step",
                "min",
                "q01",
                "q25",
                "q50",
                "q75",
                "q99",
                "violation_fraction",
                "passed",
            ]
        )
        for r in self.records:
            writer.writerow(
                [
                    r.step,
                    pair_key(*r.pair),
                    r.horizon_step,
                    r.min,
                    r.q01,
                    r.q25,
                    r.q50,
                    r.q75,
                    r.q99,
                    r.violation_fraction,
                    int(r.passed),
                ]
            )
        return out.getvalue()


def mc_validate(
    log: RunLog,
    particles: Optional[int] = None,
    seed: Optional[int] = None,
) -> ValidationReport:
    """Replay every logged plan horizon under fresh noise and score safety.

    For each global step, every vehicle's planned control horizon is
    rolled out from its logged pre-plan state with fresh disturbance
    particles; pairwise distances are scored per horizon step against
    d_min, and a pair passes when its violation fraction stays below
    epsilon at every horizon step past the first.
    """
    if not log.complete:
        raise ValueError("run log is incomplete; validation needs a finished run")
    scenario = log.scenario()
    specs = {ch: scenario.noise[ch] for ch in CHANNELS}
    delta = scenario.planner.delta
    d_min = scenario.planner.d_min
    epsilon = scenario.planner.epsilon
    n = scenario.run.particles if particles is None else int(particles)
    base_seed = log.seed if seed is None else int(seed)
    agent_ids = [a.agent_id for a in scenario.agents]

    records: List[ValidationRecord] = []
    for step_record in log.steps:
        clouds = {}
        for idx, aid in enumerate(agent_ids):
            state = TrueState(*step_record.pre_states[aid])
            controls = step_record.plans[aid].controls_array()
            clouds[aid] = mc_rollout(
                state,
                controls,
                specs,
                n=n,
                seed=_validation_seed(base_seed, step_record.step, idx),
                delta=delta,
            )
        for i, aid in enumerate(agent_ids):
            for bid in agent_ids[i + 1 :]:
                stats = pairwise_distance_stats(clouds[aid], clouds[bid], d_min)
                for entry in stats:
                    horizon_step = int(entry["step"])
                    records.append(
                        ValidationRecord(
                            step=step_record.step,
                            pair=(aid, bid),
                            horizon_step=horizon_step,
                            min=entry["min"],
                            q01=entry["q01"],
                            q25=entry["q25"],
                            q50=entry["q50"],
                            q75=entry["q75"],
                            q99=entry["q99"],
                            violation_fraction=entry["violation_fraction"],
                            passed=entry["violation_fraction"] < epsilon
                            or horizon_step == 0,
                        )
                    )
    return ValidationReport(
        records=tuple(records),
        epsilon=epsilon,
        d_min=d_min,
        particles=n,
        seed=base_seed,
    )
