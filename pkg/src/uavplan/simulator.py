"""Ground-truth stepping, particle rollouts, and pairwise-distance statistics.

One ground-truth step advances (x, y, z, psi) with the applied control and
one disturbance draw per channel, the disturbance held over the interval:

    x' = x + delta (u_v + w_v) cos psi
    y' = y + delta (u_v + w_v) sin psi
    z' = z + delta (u_z + w_z)
    psi' = psi + delta (u_psi + w_psi)

Particle clouds are rolled with per-particle random substreams split from
one seed, so results do not depend on evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Tuple

import numpy as np

from uavplan.moments.dynamics import sample_noise
from uavplan.noise import NoiseSpec

QUANTILES = (1, 25, 50, 75, 99)


@dataclass(frozen=True)
class TrueState:
    x: float
    y: float
    z: float
    psi: float

    def __post_init__(self) -> None:
        values = (self.x, self.y, self.z, self.psi)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"state components must be finite, got {values}")

    def position(self) -> Tuple[float, float, float]:
        return (self.x, self.y, self.z)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.z, self.psi)


def step_truth(
    state: TrueState,
    u: Sequence[float],
    w: Sequence[float],
    delta: float,
) -> TrueState:
    """Advance the ground truth one step with control u and disturbance w."""
    u_v, u_z, u_psi = u
    w_v, w_z, w_psi = w
    return TrueState(
        x=state.x + delta * (u_v + w_v) * math.cos(state.psi),
        y=state.y + delta * (u_v + w_v) * math.sin(state.psi),
        z=state.z + delta * (u_z + w_z),
        psi=state.psi + delta * (u_psi + w_psi),
    )


def sample_noise_triple(
    specs: Mapping[str, NoiseSpec],
    rngs: Mapping[str, np.random.Generator],
) -> Tuple[float, float, float]:
    """One disturbance draw per channel, each from its own stream."""
    return (
        float(sample_noise(specs["speed_v"], rngs["speed_v"], 1)[0]),
        float(sample_noise(specs["altitude_z"], rngs["altitude_z"], 1)[0]),
        float(sample_noise(specs["heading_psi"], rngs["heading_psi"], 1)[0]),
    )


@dataclass(frozen=True)
class ParticleSet:
    """Positions of n particles at every step of one control sequence."""

    positions: np.ndarray
    seed: int
    controls: np.ndarray

    def __post_init__(self) -> None:
        positions = np.asarray(self.positions, dtype=np.float64).copy()
        controls = np.asarray(self.controls, dtype=np.float64).copy()
        if positions.ndim != 3 or positions.shape[2] != 3:
            raise ValueError(f"positions must have shape (steps+1, n, 3), got {positions.shape}")
        if controls.shape != (positions.shape[0] - 1, 3):
            raise ValueError("controls must have one (u_v, u_z, u_psi) row per step")
        positions.flags.writeable = False
        controls.flags.writeable = False
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "controls", controls)

    @property
    def n(self) -> int:
        return int(self.positions.shape[1])

    @property
    def steps(self) -> int:
        return int(self.positions.shape[0] - 1)


def mc_rollout(
    start: TrueState,
    controls: Sequence[Sequence[float]],
    specs: Mapping[str, NoiseSpec],
    n: int,
    seed: int,
    delta: float,
) -> ParticleSet:
    """Roll n independent disturbance realizations of one control sequence.

    Particle i draws from the i-th child of SeedSequence(seed), one block
    per channel in order (speed, altitude, heading), so each particle's
    realization is independent of n and of evaluation order.
    """
    if n < 1:
        raise ValueError(f"particle count must be >= 1, got {n}")
    controls = np.asarray(controls, dtype=np.float64)
    steps = controls.shape[0]
    w = np.empty((3, steps, n))
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        rng = np.random.default_rng(child)
        w[0, :, i] = sample_noise(specs["speed_v"], rng, steps)
        w[1, :, i] = sample_noise(specs["altitude_z"], rng, steps)
        w[2, :, i] = sample_noise(specs["heading_psi"], rng, steps)

    positions = np.empty((steps + 1, n, 3))
    positions[0] = np.array(start.position())
    psi = np.full(n, start.psi)
    for k in range(steps):
        u_v, u_z, u_psi = controls[k]
        speed = u_v + w[0, k]
        positions[k + 1, :, 0] = positions[k, :, 0] + delta * speed * np.cos(psi)
        positions[k + 1, :, 1] = positions[k, :, 1] + delta * speed * np.sin(psi)
        positions[k + 1, :, 2] = positions[k, :, 2] + delta * (u_z + w[1, k])
        psi = psi + delta * (u_psi + w[2, k])
    return ParticleSet(positions=positions, seed=seed, controls=controls)


def pairwise_distance_stats(
    a: ParticleSet, b: ParticleSet, d_min: float
) -> Tuple[dict, ...]:
    """Per-step distance quantiles, minimum, and violation fraction.

    Particles are paired by realization index; step 0 is included.
    """
    if a.positions.shape != b.positions.shape:
        raise ValueError(
            f"particle sets disagree in shape: {a.positions.shape} vs {b.positions.shape}"
        )
    records = []
    for k in range(a.positions.shape[0]):
        gaps = a.positions[k] - b.positions[k]
        distances = np.sqrt((gaps * gaps).sum(axis=1))
        quantiles = np.percentile(distances, QUANTILES)
        records.append(
            {
                "step": k,
                "min": float(distances.min()),
                "q01": float(quantiles[0]),
                "q25": float(quantiles[1]),
                "q50": float(quantiles[2]),
                "q75": float(quantiles[3]),
                "q99": float(quantiles[4]),
                "violation_fraction": float(np.mean(distances < d_min)),
            }
        )
    return tuple(records)
