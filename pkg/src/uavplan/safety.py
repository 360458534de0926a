"""Pairwise collision-risk bounding from exact clearance moments.

For two vehicles A and B with mutually independent states, the clearance
variable is

    f = (x_A - x_B)^2 + (y_A - y_B)^2 + (z_A - z_B)^2 - d_min^2

so that a collision (distance below d_min) is exactly the event f <= 0.
E[f] needs first and second position moments of each vehicle; E[f^2]
needs moments up to degree four.  Both expectations factorize across the
two vehicles by independence, making them linear in either vehicle's
moment vector with the other's held fixed.

For a unimodal f with E[f] >= 0 the one-sided concentration inequality

    P(f <= 0) <= (4/9) * Var[f] / E[f]^2,   valid when E[f]^2 >= (5/8) E[f^2]

upper-bounds the collision probability without any distributional model
beyond unimodality.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from uavplan.moments.basis import build_basis
from uavplan.moments.dynamics import MomentVector


@dataclass(frozen=True)
class ClearanceMoments:
    """First two moments of the clearance variable for one pair and step."""

    e_f: float
    e_f2: float
    pair: Tuple[int, int]
    time_step: int

    def __post_init__(self) -> None:
        mean_sq = self.e_f * self.e_f
        # 1e-6 absolute slack, widened proportionally for large magnitudes
        # where double-precision cancellation alone exceeds it
        if self.e_f2 < mean_sq - 1e-6 * max(1.0, mean_sq):
            raise ValueError(
                f"E[f^2]={self.e_f2} below E[f]^2={mean_sq} beyond numerical slack"
            )


@dataclass(frozen=True)
class SafetyEvalResult:
    """Collision-probability bound with its applicability conditions."""

    bound: float
    condition_mean_nonneg: bool
    condition_moment_ratio: bool
    applicable: bool

    def __post_init__(self) -> None:
        if self.applicable and not self.bound <= 4.0 / 15.0 + 1e-9:
            raise ValueError(
                f"applicable bound {self.bound} exceeds the 4/15 ceiling implied"
                f" by the moment-ratio condition"
            )


@lru_cache(maxsize=None)
def _position_indices() -> Tuple[np.ndarray, np.ndarray]:
    basis = build_basis()
    first = np.array([basis.index(tuple(int(i == v) for i in range(5))) for v in range(3)])
    second = np.array(
        [basis.index(tuple(2 * int(i == v) for i in range(5))) for v in range(3)]
    )
    return first, second


@lru_cache(maxsize=None)
def clearance_square_terms() -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Term list of E[f^2] as (idx_a, idx_b, dmin2_power, coeff) arrays.

    Generated once by symbolically squaring f over the six position
    variables and the d_min^2 symbol, then factoring each monomial into
    an A-part, a B-part, and a d_min^2 power.
    """
    basis = build_basis()
    # polynomial over exponents (ax, ay, az, bx, by, bz, D) where D = d_min^2
    f_poly = {}
    for v in range(3):
        a = [0] * 7
        a[v] = 2
        b = [0] * 7
        b[3 + v] = 2
        ab = [0] * 7
        ab[v] = 1
        ab[3 + v] = 1
        f_poly[tuple(a)] = f_poly.get(tuple(a), 0) + 1
        f_poly[tuple(b)] = f_poly.get(tuple(b), 0) + 1
        f_poly[tuple(ab)] = f_poly.get(tuple(ab), 0) - 2
    d_key = (0, 0, 0, 0, 0, 0, 1)
    f_poly[d_key] = f_poly.get(d_key, 0) - 1

    square = {}
    for (ka, ca), (kb, cb) in itertools.product(f_poly.items(), repeat=2):
        key = tuple(i + j for i, j in zip(ka, kb))
        square[key] = square.get(key, 0) + ca * cb

    idx_a, idx_b, d_pow, coeff = [], [], [], []
    for key, c in sorted(square.items()):
        mono_a = (key[0], key[1], key[2], 0, 0)
        mono_b = (key[3], key[4], key[5], 0, 0)
        idx_a.append(basis.index(mono_a))
        idx_b.append(basis.index(mono_b))
        d_pow.append(key[6])
        coeff.append(float(c))
    out = (
        np.array(idx_a, dtype=np.int64),
        np.array(idx_b, dtype=np.int64),
        np.array(d_pow, dtype=np.int64),
        np.array(coeff),
    )
    for arr in out:
        arr.flags.writeable = False
    return out


def expected_f(m_a: MomentVector, m_b: MomentVector, d_min: float) -> float:
    """E[f] from first and second position moments of both vehicles."""
    if m_a.time_step != m_b.time_step:
        raise ValueError(
            f"moment vectors at different steps: {m_a.time_step} vs {m_b.time_step}"
        )
    return float(expected_f_values(m_a.values, m_b.values, d_min))


def expected_f_values(values_a: np.ndarray, values_b: np.ndarray, d_min: float) -> float:
    first, second = _position_indices()
    total = -d_min * d_min
    total += values_a[second].sum() + values_b[second].sum()
    total -= 2.0 * float(values_a[first] @ values_b[first])
    return float(total)


def expected_f_squared(m_a: MomentVector, m_b: MomentVector, d_min: float) -> float:
    """E[f^2] via the cached degree-4 term list, factorized by independence."""
    if m_a.time_step != m_b.time_step:
        raise ValueError(
            f"moment vectors at different steps: {m_a.time_step} vs {m_b.time_step}"
        )
    return float(expected_f_squared_values(m_a.values, m_b.values, d_min))


def expected_f_squared_values(
    values_a: np.ndarray, values_b: np.ndarray, d_min: float
) -> float:
    idx_a, idx_b, d_pow, coeff = clearance_square_terms()
    d2 = d_min * d_min
    return float(np.sum(coeff * values_a[idx_a] * values_b[idx_b] * d2**d_pow))


def clearance_moments(
    m_a: MomentVector,
    m_b: MomentVector,
    d_min: float,
    pair: Tuple[int, int] = (0, 1),
) -> ClearanceMoments:
    """Bundle E[f] and E[f^2] for one pair at one step."""
    return ClearanceMoments(
        e_f=expected_f(m_a, m_b, d_min),
        e_f2=expected_f_squared(m_a, m_b, d_min),
        pair=pair,
        time_step=m_a.time_step,
    )


def vp_bound(c: ClearanceMoments) -> SafetyEvalResult:
    """One-sided concentration bound on P(f <= 0) with validity flags.

    A near-zero mean makes the bound meaningless; it is reported as
    inapplicable (bound infinity) rather than raising, since the planner
    enforces the validity conditions as constraints anyway.
    """
    mean_sq = c.e_f * c.e_f
    condition_mean = c.e_f >= 0.0
    condition_ratio = mean_sq >= (5.0 / 8.0) * c.e_f2
    if mean_sq < 1e-12:
        return SafetyEvalResult(
            bound=float("inf"),
            condition_mean_nonneg=condition_mean,
            condition_moment_ratio=condition_ratio,
            applicable=False,
        )
    bound = 4.0 * (c.e_f2 - mean_sq) / (9.0 * mean_sq)
    bound = max(bound, 0.0)
    return SafetyEvalResult(
        bound=bound,
        condition_mean_nonneg=condition_mean,
        condition_moment_ratio=condition_ratio,
        applicable=condition_mean and condition_ratio,
    )


def clearance_profile(
    moments_a: np.ndarray, moments_b: np.ndarray, d_min: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized E[f], E[f^2] over aligned moment trajectories.

    Args:
        moments_a: Array (K, basis) of one vehicle's moments per step.
        moments_b: Same shape, the other vehicle, aligned step-by-step.
        d_min: Clearance radius in meters.

    Returns:
        (e_f, e_f2) arrays of shape (K,).
    """
    first, second = _position_indices()
    e_f = (
        moments_a[:, second].sum(axis=1)
        + moments_b[:, second].sum(axis=1)
        - 2.0 * np.einsum("kj,kj->k", moments_a[:, first], moments_b[:, first])
        - d_min * d_min
    )
    idx_a, idx_b, d_pow, coeff = clearance_square_terms()
    weights = coeff * (d_min * d_min) ** d_pow
    e_f2 = np.einsum("kt,kt,t->k", moments_a[:, idx_a], moments_b[:, idx_b], weights)
    return e_f, e_f2


def clearance_gradients(
    moments_b: np.ndarray, d_min: float, basis_size: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of E[f] and E[f^2] w.r.t. vehicle A's moment entries.

    Both expectations are linear in A's moment vector once B's moments
    are fixed, so the gradients are constant rows per step.

    Args:
        moments_b: Array (K, basis) of the other vehicle's moments.
        d_min: Clearance radius.
        basis_size: Number of basis entries.

    Returns:
        (grad_f, grad_f2), each of shape (K, basis).
    """
    first, second = _position_indices()
    k_steps = moments_b.shape[0]
    grad_f = np.zeros((k_steps, basis_size))
    grad_f[:, second] = 1.0
    grad_f[:, first] = -2.0 * moments_b[:, first]

    idx_a, idx_b, d_pow, coeff = clearance_square_terms()
    weights = coeff * (d_min * d_min) ** d_pow
    grad_f2 = np.zeros((k_steps, basis_size))
    contrib = moments_b[:, idx_b] * weights
    np.add.at(grad_f2, (slice(None), idx_a), contrib)
    return grad_f, grad_f2
