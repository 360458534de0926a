"""Tests for ground-truth stepping, particle rollouts, and distance statistics."""

import math

import numpy as np
import pytest

from uavplan.moments.dynamics import (
    moments_from_point_state,
    pack_expansion,
    propagate,
    sample_noise,
    transition_from_packed,
)
from uavplan.moments.expansion import build_expansion
from uavplan.noise import Beta, Gaussian, NoiseSpec, Uniform, build_moment_table
from uavplan.simulator import (
    ParticleSet,
    TrueState,
    mc_rollout,
    pairwise_distance_stats,
    sample_noise_triple,
    step_truth,
)

DELTA = 0.1

MIXED_SPECS = {
    "speed_v": NoiseSpec("speed_v", Beta(1.0, 3.0)),
    "altitude_z": NoiseSpec("altitude_z", Gaussian(0.0, 0.3)),
    "heading_psi": NoiseSpec("heading_psi", Uniform(-0.1, 0.1)),
}

ZERO_SPECS = {
    "speed_v": NoiseSpec("speed_v", Gaussian(0.0, 0.0)),
    "altitude_z": NoiseSpec("altitude_z", Gaussian(0.0, 0.0)),
    "heading_psi": NoiseSpec("heading_psi", Uniform(0.0, 0.0)),
}


class TestStepTruth:
    def test_zero_control_zero_noise_fixed_point(self):
        state = TrueState(1.5, -2.0, 3.0, 0.7)
        nxt = step_truth(state, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), DELTA)
        assert nxt == state

    def test_unit_speed_along_x(self):
        nxt = step_truth(TrueState(0.0, 0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 0.0), DELTA)
        assert nxt.x == pytest.approx(0.1, abs=1e-15)
        assert (nxt.y, nxt.z, nxt.psi) == (0.0, 0.0, 0.0)

    def test_matches_augmented_trig_form(self):
        # Stepping (x, y, z, psi) then taking cos/sin must equal updating
        # (x, y, z, cos psi, sin psi) with the angle-addition identities.
        rng = np.random.default_rng(5)
        for _ in range(50):
            x, y, z = rng.uniform(-10, 10, 3)
            psi = rng.uniform(-math.pi, math.pi)
            u = rng.uniform(-3, 3, 3)
            w = rng.uniform(-0.5, 0.5, 3)
            nxt = step_truth(TrueState(x, y, z, psi), u, w, DELTA)
            c, s = math.cos(psi), math.sin(psi)
            turn = DELTA * (u[2] + w[2])
            assert nxt.x == pytest.approx(x + DELTA * (u[0] + w[0]) * c, abs=1e-12)
            assert nxt.y == pytest.approx(y + DELTA * (u[0] + w[0]) * s, abs=1e-12)
            assert nxt.z == pytest.approx(z + DELTA * (u[1] + w[1]), abs=1e-12)
            assert math.cos(nxt.psi) == pytest.approx(
                c * math.cos(turn) - s * math.sin(turn), abs=1e-12
            )
            assert math.sin(nxt.psi) == pytest.approx(
                s * math.cos(turn) + c * math.sin(turn), abs=1e-12
            )

    def test_rejects_non_finite_state(self):
        with pytest.raises(ValueError, match="finite"):
            TrueState(0.0, math.nan, 0.0, 0.0)
        with pytest.raises(ValueError, match="finite"):
            TrueState(math.inf, 0.0, 0.0, 0.0)


class TestSampleNoise:
    def test_channel_statistics(self):
        rngs = {ch: np.random.default_rng(i) for i, ch in enumerate(MIXED_SPECS)}
        draws = {ch: [] for ch in MIXED_SPECS}
        n = 10**6
        for ch, spec in MIXED_SPECS.items():
            draws[ch] = sample_noise(spec, rngs[ch], n)
        beta = draws["speed_v"]
        # Beta(1, 3): mean 1/4, var 3/80.
        se = math.sqrt(3.0 / 80.0 / n)
        assert abs(beta.mean() - 0.25) < 3 * se
        assert beta.min() >= 0.0 and beta.max() <= 1.0
        gauss = draws["altitude_z"]
        se_sd = 0.3 / math.sqrt(2 * (n - 1))
        assert abs(gauss.std(ddof=1) - 0.3) < 3 * se_sd
        unif = draws["heading_psi"]
        assert unif.min() >= -0.1 and unif.max() <= 0.1
        se_u = (0.2 / math.sqrt(12.0)) / math.sqrt(n)
        assert abs(unif.mean()) < 3 * se_u

    def test_triple_uses_separate_streams(self):
        def fresh():
            return {ch: np.random.default_rng(100 + i) for i, ch in enumerate(MIXED_SPECS)}

        triple = sample_noise_triple(MIXED_SPECS, fresh())
        assert len(triple) == 3 and all(isinstance(v, float) for v in triple)
        assert sample_noise_triple(MIXED_SPECS, fresh()) == triple
        # Consuming one channel's stream must not disturb the others.
        rngs = fresh()
        rngs["speed_v"].random(17)
        shifted = sample_noise_triple(MIXED_SPECS, rngs)
        assert shifted[0] != triple[0]
        assert shifted[1:] == triple[1:]


class TestMcRollout:
    def test_shapes_and_echo(self):
        controls = np.tile([4.0, 0.5, 0.1], (6, 1))
        cloud = mc_rollout(TrueState(1.0, 2.0, 3.0, 0.4), controls, MIXED_SPECS, 50, 9, DELTA)
        assert cloud.positions.shape == (7, 50, 3)
        assert cloud.n == 50 and cloud.steps == 6
        assert np.array_equal(cloud.controls, controls)
        assert cloud.seed == 9
        assert np.all(cloud.positions[0] == [1.0, 2.0, 3.0])
        assert not cloud.positions.flags.writeable

    def test_seed_reproducibility(self):
        controls = np.tile([4.0, 0.5, 0.1], (8, 1))
        a = mc_rollout(TrueState(0, 0, 0, 0), controls, MIXED_SPECS, 200, 31, DELTA)
        b = mc_rollout(TrueState(0, 0, 0, 0), controls, MIXED_SPECS, 200, 31, DELTA)
        assert np.array_equal(a.positions, b.positions)
        c = mc_rollout(TrueState(0, 0, 0, 0), controls, MIXED_SPECS, 200, 32, DELTA)
        assert not np.array_equal(a.positions, c.positions)

    def test_particle_count_prefix_stable(self):
        controls = np.tile([4.0, 0.5, 0.1], (5, 1))
        big = mc_rollout(TrueState(0, 0, 0, 0), controls, MIXED_SPECS, 120, 8, DELTA)
        small = mc_rollout(TrueState(0, 0, 0, 0), controls, MIXED_SPECS, 40, 8, DELTA)
        assert np.array_equal(big.positions[:, :40], small.positions)

    def test_zero_noise_matches_deterministic_step(self):
        controls = [(2.0, -1.0, 0.5), (3.0, 0.0, -0.2), (1.0, 1.0, 0.0)]
        cloud = mc_rollout(TrueState(0.5, -0.5, 2.0, 0.3), controls, ZERO_SPECS, 7, 2, DELTA)
        state = TrueState(0.5, -0.5, 2.0, 0.3)
        for k, u in enumerate(controls):
            state = step_truth(state, u, (0.0, 0.0, 0.0), DELTA)
            expected = np.array(state.position())
            assert np.abs(cloud.positions[k + 1] - expected).max() < 1e-12

    def test_position_moments_match_propagation(self):
        # Sample averages of position monomials must agree with the exact
        # propagated moments to within Monte Carlo error.
        tables = {ch: build_moment_table(s, DELTA) for ch, s in MIXED_SPECS.items()}
        packed = pack_expansion(build_expansion(), tables)
        rng = np.random.default_rng(12)
        controls = np.column_stack(
            [rng.uniform(0, 6, 5), rng.uniform(-2, 2, 5), rng.uniform(-1, 1, 5)]
        )
        m = moments_from_point_state(0.0, 0.0, 1.0, 0.4)
        for u in controls:
            m = propagate(m, transition_from_packed(packed, u))
        n = 200_000
        cloud = mc_rollout(TrueState(0.0, 0.0, 1.0, 0.4), controls, MIXED_SPECS, n, 77, DELTA)
        final = cloud.positions[-1]
        checks = [
            ((1, 0, 0, 0, 0), final[:, 0]),
            ((0, 1, 0, 0, 0), final[:, 1]),
            ((0, 0, 1, 0, 0), final[:, 2]),
            ((2, 0, 0, 0, 0), final[:, 0] ** 2),
            ((0, 2, 0, 0, 0), final[:, 1] ** 2),
            ((0, 0, 2, 0, 0), final[:, 2] ** 2),
            ((1, 1, 0, 0, 0), final[:, 0] * final[:, 1]),
            ((1, 0, 1, 0, 0), final[:, 0] * final[:, 2]),
            ((4, 0, 0, 0, 0), final[:, 0] ** 4),
            ((2, 0, 2, 0, 0), final[:, 0] ** 2 * final[:, 2] ** 2),
        ]
        for exponents, samples in checks:
            se = samples.std(ddof=1) / math.sqrt(n)
            assert abs(samples.mean() - m.entry(exponents)) < 4 * se + 1e-12

    def test_rejects_bad_particle_count(self):
        with pytest.raises(ValueError, match="particle count"):
            mc_rollout(TrueState(0, 0, 0, 0), [(1.0, 0.0, 0.0)], MIXED_SPECS, 0, 1, DELTA)


class TestParticleSet:
    def test_validates_shapes(self):
        good = np.zeros((3, 4, 3))
        ParticleSet(positions=good, seed=0, controls=np.zeros((2, 3)))
        with pytest.raises(ValueError, match="positions"):
            ParticleSet(positions=np.zeros((3, 4)), seed=0, controls=np.zeros((2, 3)))
        with pytest.raises(ValueError, match="controls"):
            ParticleSet(positions=good, seed=0, controls=np.zeros((3, 3)))


class TestPairwiseDistanceStats:
    def test_identical_sets_violate_everywhere(self):
        controls = np.tile([4.0, 0.5, 0.1], (5, 1))
        cloud = mc_rollout(TrueState(0, 0, 0, 0), controls, MIXED_SPECS, 60, 3, DELTA)
        stats = pairwise_distance_stats(cloud, cloud, d_min=10.0)
        assert len(stats) == 6
        for rec in stats:
            assert rec["min"] == 0.0 and rec["q99"] == 0.0
            assert rec["violation_fraction"] == 1.0

    def test_separated_deterministic_sets(self):
        controls = np.tile([1.0, 0.0, 0.0], (4, 1))
        a = mc_rollout(TrueState(0, 0, 0, 0), controls, ZERO_SPECS, 25, 1, DELTA)
        b = mc_rollout(TrueState(0, 20, 0, 0), controls, ZERO_SPECS, 25, 1, DELTA)
        stats = pairwise_distance_stats(a, b, d_min=10.0)
        for rec in stats:
            assert rec["violation_fraction"] == 0.0
            for key in ("min", "q01", "q25", "q50", "q75", "q99"):
                assert rec[key] == pytest.approx(20.0, abs=1e-12)

    def test_quantiles_monotone(self):
        controls = np.tile([4.0, 0.5, 0.1], (6, 1))
        a = mc_rollout(TrueState(0, 0, 0, 0), controls, MIXED_SPECS, 300, 5, DELTA)
        b = mc_rollout(TrueState(3, 4, 0, 2.0), controls, MIXED_SPECS, 300, 6, DELTA)
        for rec in pairwise_distance_stats(a, b, d_min=5.0):
            assert rec["step"] == int(rec["step"])
            assert (
                rec["min"]
                <= rec["q01"]
                <= rec["q25"]
                <= rec["q50"]
                <= rec["q75"]
                <= rec["q99"]
            )
            assert 0.0 <= rec["violation_fraction"] <= 1.0

    def test_shape_mismatch_rejected(self):
        controls = np.tile([1.0, 0.0, 0.0], (4, 1))
        a = mc_rollout(TrueState(0, 0, 0, 0), controls, ZERO_SPECS, 10, 1, DELTA)
        b = mc_rollout(TrueState(0, 0, 0, 0), controls, ZERO_SPECS, 12, 1, DELTA)
        with pytest.raises(ValueError, match="disagree"):
            pairwise_distance_stats(a, b, d_min=10.0)
