"""Numeric moment propagation: pack the symbolic expansion, evaluate it
at concrete controls, and roll moment vectors forward step by step.

The symbolic expansion is resolved against the per-channel noise-moment
tables once per scenario ("packed"): every term's noise factor becomes a
number, leaving only the control dependence symbolic.  Evaluating the
packed expansion at a control triple yields a sparse affine transition
acting on moment vectors, with the constant monomial carried as entry 0
so the affine offset is simply column 0 of a homogeneous matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from uavplan.moments.basis import MAX_DEGREE, MomentBasis, build_basis
from uavplan.moments.expansion import SymbolicExpansion, build_expansion
from uavplan.noise import Beta, Gaussian, NoiseSpec, TrigMomentTable, Uniform

CHANNEL_ORDER = ("speed_v", "altitude_z", "heading_psi")


@dataclass(frozen=True)
class MomentVector:
    """State moments aligned with the monomial basis at one time step."""

    values: np.ndarray
    time_step: int

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(build_basis()),):
            raise ValueError(f"expected {len(build_basis())} basis values, got {values.shape}")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        if abs(values[0] - 1.0) > 1e-12:
            raise ValueError(f"constant entry must be 1, got {values[0]}")
        basis = build_basis()
        for var in range(3):
            e1 = [0] * 5
            e1[var] = 1
            e2 = [0] * 5
            e2[var] = 2
            mean = values[basis.index(tuple(e1))]
            second = values[basis.index(tuple(e2))]
            if second - mean * mean < -1e-9 * max(1.0, second):
                raise ValueError(
                    f"second moment below squared mean for state var {var}: "
                    f"{second} < {mean}^2"
                )
        cos2 = values[basis.index((0, 0, 0, 2, 0))]
        sin2 = values[basis.index((0, 0, 0, 0, 2))]
        if abs(cos2 + sin2 - 1.0) > 1e-7:
            raise ValueError(f"E[cos^2]+E[sin^2] = {cos2 + sin2}, expected 1")

    def entry(self, exponents: Tuple[int, int, int, int, int]) -> float:
        return float(self.values[build_basis().index(exponents)])

    def mean_position(self) -> np.ndarray:
        basis = build_basis()
        return np.array(
            [
                self.values[basis.index((1, 0, 0, 0, 0))],
                self.values[basis.index((0, 1, 0, 0, 0))],
                self.values[basis.index((0, 0, 1, 0, 0))],
            ]
        )


@dataclass(frozen=True)
class StepTransition:
    """Sparse affine map between consecutive moment vectors.

    The matrix is homogeneous over the 126-entry basis (constant entry
    included), so the affine offset of each degree block is its column 0.
    """

    matrix: sp.csr_matrix
    control: Tuple[float, float, float]
    delta: float

    @property
    def offset(self) -> np.ndarray:
        return np.asarray(self.matrix[:, [0]].todense()).ravel()


@dataclass(frozen=True)
class PackedExpansion:
    """Expansion with noise factors resolved; only controls stay symbolic.

    CSR-like layout: slot t of `data` corresponds to (row, col) =
    (rows[slot], cols[slot]); each term adds
    coeff * dv^pa * dz^pb * cu^pc * su^pd into its slot, with
    dv = delta*u_v, dz = delta*u_z, cu = cos(delta*u_psi),
    su = sin(delta*u_psi).
    """

    basis_size: int
    delta: float
    indptr: np.ndarray
    indices: np.ndarray
    term_slot: np.ndarray
    term_coeff: np.ndarray
    term_pa: np.ndarray
    term_pb: np.ndarray
    term_pc: np.ndarray
    term_pd: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])


def _validate_tables(tables: Mapping[str, TrigMomentTable]) -> Tuple[TrigMomentTable, ...]:
    missing = [ch for ch in CHANNEL_ORDER if ch not in tables]
    if missing:
        raise ValueError(f"missing noise tables for channels {missing}")
    ordered = tuple(tables[ch] for ch in CHANNEL_ORDER)
    deltas = {t.delta for t in ordered}
    if len(deltas) != 1:
        raise ValueError(f"noise tables disagree on delta: {sorted(deltas)}")
    for ch, table in zip(CHANNEL_ORDER, ordered):
        if table.spec.channel != ch:
            raise ValueError(
                f"table under key {ch!r} was built for channel {table.spec.channel!r}"
            )
    return ordered


def pack_expansion(
    expansion: SymbolicExpansion, tables: Mapping[str, TrigMomentTable]
) -> PackedExpansion:
    """Resolve the noise factors of every term against the moment tables.

    Args:
        expansion: Symbolic one-step expansion over the basis.
        tables: Per-channel tables keyed by channel name, all built with
            the same delta.

    Returns:
        A PackedExpansion ready for fast per-control evaluation.

    Raises:
        ValueError: If a table is missing, deltas disagree, or a required
            entry exceeds the table cap.
    """
    table_v, table_z, table_psi = _validate_tables(tables)
    delta = table_v.delta

    merged: Dict[Tuple[int, int, int, int, int, int], float] = {}
    for row, terms in enumerate(expansion.rows):
        for t in terms:
            try:
                factor = (
                    table_v.value(t.noise_v_power, 0, 0)
                    * table_z.value(t.noise_z_power, 0, 0)
                    * table_psi.value(0, *t.noise_psi_powers)
                )
            except KeyError as exc:
                raise ValueError(
                    f"noise table cap too low for term requiring {exc} in row {row}"
                ) from None
            key = (row, t.source, *t.ctrl_powers)
            merged[key] = merged.get(key, 0.0) + t.coeff * factor

    entries = sorted(merged.items())
    pattern = sorted({(row, col) for (row, col, *_), _ in entries})
    slot_of = {rc: i for i, rc in enumerate(pattern)}

    size = len(expansion.basis)
    indptr = np.zeros(size + 1, dtype=np.int32)
    for row, _ in pattern:
        indptr[row + 1] += 1
    np.cumsum(indptr, out=indptr)
    indices = np.array([col for _, col in pattern], dtype=np.int32)

    n_terms = len(entries)
    term_slot = np.empty(n_terms, dtype=np.int32)
    term_coeff = np.empty(n_terms, dtype=np.float64)
    powers = np.empty((4, n_terms), dtype=np.int32)
    for i, ((row, col, pa, pb, pc, pd), coeff) in enumerate(entries):
        term_slot[i] = slot_of[(row, col)]
        term_coeff[i] = coeff
        powers[:, i] = (pa, pb, pc, pd)

    packed = PackedExpansion(
        basis_size=size,
        delta=delta,
        indptr=indptr,
        indices=indices,
        term_slot=term_slot,
        term_coeff=term_coeff,
        term_pa=powers[0],
        term_pb=powers[1],
        term_pc=powers[2],
        term_pd=powers[3],
    )
    for arr in (indptr, indices, term_slot, term_coeff, powers):
        arr.flags.writeable = False
    return packed


def transition_data(packed: PackedExpansion, u: Sequence[float]) -> np.ndarray:
    """Evaluate the CSR data array of the transition matrix at control u."""
    dv = packed.delta * u[0]
    dz = packed.delta * u[1]
    cu = math.cos(packed.delta * u[2])
    su = math.sin(packed.delta * u[2])
    max_pow = MAX_DEGREE + 1
    lut = np.empty((4, max_pow))
    for base, row in zip((dv, dz, cu, su), lut):
        row[0] = 1.0
        for k in range(1, max_pow):
            row[k] = row[k - 1] * base
    vals = (
        packed.term_coeff
        * lut[0, packed.term_pa]
        * lut[1, packed.term_pb]
        * lut[2, packed.term_pc]
        * lut[3, packed.term_pd]
    )
    return np.bincount(packed.term_slot, weights=vals, minlength=packed.nnz)


def transition_from_packed(packed: PackedExpansion, u: Sequence[float]) -> StepTransition:
    data = transition_data(packed, u)
    matrix = sp.csr_matrix(
        (data, packed.indices.copy(), packed.indptr.copy()),
        shape=(packed.basis_size, packed.basis_size),
    )
    return StepTransition(matrix=matrix, control=tuple(float(c) for c in u), delta=packed.delta)


def build_transition(
    u: Sequence[float],
    tables: Mapping[str, TrigMomentTable],
    expansion: SymbolicExpansion,
) -> StepTransition:
    """Numerically evaluate the symbolic expansion at one control triple.

    Convenience wrapper that packs and evaluates in one call; callers in
    hot loops should pack once via pack_expansion and reuse it.
    """
    return transition_from_packed(pack_expansion(expansion, tables), u)


def propagate(m: MomentVector, t: StepTransition) -> MomentVector:
    """Advance a moment vector one step: values' = A values."""
    return MomentVector(values=t.matrix @ m.values, time_step=m.time_step + 1)


def moments_from_point_state(x: float, y: float, z: float, psi: float) -> MomentVector:
    """Variance-free moments of a deterministic state (exact feedback)."""
    basis = build_basis()
    point = (x, y, z, math.cos(psi), math.sin(psi))
    values = np.empty(len(basis))
    for i, mono in enumerate(basis.entries):
        v = 1.0
        for base, e in zip(point, mono.exponents):
            v *= base**e
        values[i] = v
    return MomentVector(values=values, time_step=0)


def point_state_values(x: float, y: float, z: float, psi: float) -> np.ndarray:
    """Raw basis array of a deterministic state, for kernel-level callers."""
    return moments_from_point_state(x, y, z, psi).values


def sample_noise(
    spec: NoiseSpec, rng: np.random.Generator, size: int
) -> np.ndarray:
    """Draw disturbance realizations for one channel."""
    dist = spec.distribution
    if isinstance(dist, Beta):
        return rng.beta(dist.alpha, dist.beta, size=size)
    if isinstance(dist, Uniform):
        return rng.uniform(dist.low, dist.high, size=size)
    if isinstance(dist, Gaussian):
        if dist.std == 0.0:
            return np.full(size, dist.mean)
        return rng.normal(dist.mean, dist.std, size=size)
    raise TypeError(f"unsupported distribution type {type(dist).__name__}")


def simulate_true_states(
    start: Tuple[float, float, float, float],
    controls: Sequence[Sequence[float]],
    specs: Mapping[str, NoiseSpec],
    delta: float,
    rng: np.random.Generator,
    n_samples: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Roll out the ground-truth dynamics for a batch of noise draws.

    Returns arrays (x, y, z, psi), each of shape (n_samples,), holding the
    state after applying every control in sequence.  Noise is drawn in
    fixed channel order (speed, altitude, heading) per step, so results
    are bit-reproducible for a given generator state.
    """
    x = np.full(n_samples, float(start[0]))
    y = np.full(n_samples, float(start[1]))
    z = np.full(n_samples, float(start[2]))
    psi = np.full(n_samples, float(start[3]))
    spec_v = specs["speed_v"]
    spec_z = specs["altitude_z"]
    spec_psi = specs["heading_psi"]
    for u_v, u_z, u_psi in controls:
        w_v = sample_noise(spec_v, rng, n_samples)
        w_z = sample_noise(spec_z, rng, n_samples)
        w_psi = sample_noise(spec_psi, rng, n_samples)
        x += delta * (u_v + w_v) * np.cos(psi)
        y += delta * (u_v + w_v) * np.sin(psi)
        z += delta * (u_z + w_z)
        psi += delta * (u_psi + w_psi)
    return x, y, z, psi


def monomial_averages(
    x: np.ndarray, y: np.ndarray, z: np.ndarray, psi: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Average every basis monomial over a particle batch, with its SE."""
    basis = build_basis()
    n = x.shape[0]
    states = (x, y, z, np.cos(psi), np.sin(psi))
    lut = []
    for arr in states:
        lut.append([np.ones_like(arr)])
        for _ in range(MAX_DEGREE):
            lut[-1].append(lut[-1][-1] * arr)
    means = np.empty(len(basis))
    ses = np.empty(len(basis))
    for i, mono in enumerate(basis.entries):
        prod = None
        for var, e in enumerate(mono.exponents):
            if e:
                prod = lut[var][e] if prod is None else prod * lut[var][e]
        if prod is None:
            means[i] = 1.0
            ses[i] = 0.0
        else:
            means[i] = prod.mean()
            ses[i] = prod.std() / math.sqrt(n)
    return means, ses


def mc_moment_oracle(
    start: Tuple[float, float, float, float],
    controls: Sequence[Sequence[float]],
    specs: Mapping[str, NoiseSpec],
    delta: float,
    n_samples: int,
    seed: int,
) -> Tuple[MomentVector, np.ndarray]:
    """Monte Carlo estimate of the propagated moments with standard errors.

    Independent validation oracle: rolls out the raw heading-angle
    dynamics (not the augmented form the propagation uses) and averages
    monomials of the final state.
    """
    if n_samples < 10_000:
        raise ValueError(f"oracle needs at least 10000 samples, got {n_samples}")
    rng = np.random.default_rng(seed)
    x, y, z, psi = simulate_true_states(start, controls, specs, delta, rng, n_samples)
    means, ses = monomial_averages(x, y, z, psi)
    return MomentVector(values=means, time_step=len(controls)), ses
