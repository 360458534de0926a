"""Symbolic expansion of the augmented dynamics over the monomial basis.

One step of the vehicle dynamics maps the augmented state
(x, y, z, c, s) = (x, y, z, cos(psi), sin(psi)) to

    x' = x + (dv + wv) * c
    y' = y + (dv + wv) * s
    z' = z + (dz + wz)
    c' = c * (cu * cw - su * sw) - s * (su * cw + cu * sw)
    s' = s * (cu * cw - su * sw) + c * (su * cw + cu * sw)

where dv = delta*u_v, dz = delta*u_z, cu = cos(delta*u_psi),
su = sin(delta*u_psi) are deterministic control atoms and wv = delta*w_v,
wz = delta*w_z, cw = cos(delta*w_psi), sw = sin(delta*w_psi) are random
noise atoms.  Raising these five polynomials to the exponents of a target
monomial and distributing yields, for each target, a finite list of terms

    coeff * (state monomial at k-1) * (control-atom product) * (noise-atom product)

whose expectation factorizes over the three mutually independent noise
channels.  The expansion is purely combinatorial, independent of delta and
of the noise distributions, and is built once per process.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Tuple

from uavplan.moments.basis import MAX_DEGREE, MomentBasis, build_basis

# A raw polynomial term is keyed by three exponent tuples:
#   state (e_x, e_y, e_z, e_c, e_s)
#   ctrl  (a_dv, a_dz, a_cu, a_su)
#   noise (p_wv, p_wz, q_cw, r_sw)
_TermKey = Tuple[Tuple[int, ...], Tuple[int, ...], Tuple[int, ...]]


@dataclass(frozen=True)
class ExpansionTerm:
    """One additive contribution to a target monomial's expectation.

    Attributes:
        source: Basis index of the state monomial at the previous step
            (0 for the constant).
        ctrl_powers: Integer powers (a, b, c, d) of the deterministic
            control atoms (delta*u_v)^a (delta*u_z)^b cos(delta*u_psi)^c
            sin(delta*u_psi)^d.
        noise_v_power: Power p of the speed-channel noise atom, resolved
            against its table as the (p, 0, 0) entry.
        noise_z_power: Power p of the altitude-channel noise atom, the
            (p, 0, 0) entry of its table.
        noise_psi_powers: Cosine/sine powers (q, r) of the heading-channel
            noise, the (0, q, r) entry of its table.
        coeff: Integer combinatorial coefficient.
    """

    source: int
    ctrl_powers: Tuple[int, int, int, int]
    noise_v_power: int
    noise_z_power: int
    noise_psi_powers: Tuple[int, int]
    coeff: int


@dataclass(frozen=True)
class SymbolicExpansion:
    """Terms for every basis monomial, aligned with the basis ordering."""

    basis: MomentBasis
    rows: Tuple[Tuple[ExpansionTerm, ...], ...]

    def __post_init__(self) -> None:
        if len(self.rows) != len(self.basis):
            raise ValueError("row count must match basis size")


def _poly_mul(a: Dict[_TermKey, int], b: Dict[_TermKey, int]) -> Dict[_TermKey, int]:
    out: Dict[_TermKey, int] = {}
    for (sa, ca, na), va in a.items():
        for (sb, cb, nb), vb in b.items():
            key = (
                tuple(i + j for i, j in zip(sa, sb)),
                tuple(i + j for i, j in zip(ca, cb)),
                tuple(i + j for i, j in zip(na, nb)),
            )
            out[key] = out.get(key, 0) + va * vb
    return {k: v for k, v in out.items() if v != 0}


def _unit() -> Dict[_TermKey, int]:
    return {((0,) * 5, (0,) * 4, (0,) * 4): 1}


def _state(i: int) -> Tuple[int, ...]:
    e = [0] * 5
    e[i] = 1
    return tuple(e)


def _ctrl(i: int) -> Tuple[int, ...]:
    e = [0] * 4
    e[i] = 1
    return tuple(e)


def _noise(i: int) -> Tuple[int, ...]:
    e = [0] * 4
    e[i] = 1
    return tuple(e)


_ZC = (0,) * 4
_ZN = (0,) * 4


def _update_polynomials() -> Tuple[Dict[_TermKey, int], ...]:
    x, y, z, c, s = (_state(i) for i in range(5))
    dv, dz, cu, su = (_ctrl(i) for i in range(4))
    wv, wz, cw, sw = (_noise(i) for i in range(4))
    zs = (0,) * 5

    x_next = {
        (x, _ZC, _ZN): 1,
        (c, dv, _ZN): 1,
        (c, _ZC, wv): 1,
    }
    y_next = {
        (y, _ZC, _ZN): 1,
        (s, dv, _ZN): 1,
        (s, _ZC, wv): 1,
    }
    z_next = {
        (z, _ZC, _ZN): 1,
        (zs, dz, _ZN): 1,
        (zs, _ZC, wz): 1,
    }
    # cos/sin of psi + delta*(u_psi + w_psi) via two angle additions
    c_next = {
        (c, cu, cw): 1,
        (c, su, sw): -1,
        (s, su, cw): -1,
        (s, cu, sw): -1,
    }
    s_next = {
        (s, cu, cw): 1,
        (s, su, sw): -1,
        (c, su, cw): 1,
        (c, cu, sw): 1,
    }
    return x_next, y_next, z_next, c_next, s_next


@lru_cache(maxsize=None)
def build_expansion(max_degree: int = MAX_DEGREE) -> SymbolicExpansion:
    """Expand every basis monomial through one dynamics step.

    Args:
        max_degree: Basis degree cap (4 in this artifact).

    Returns:
        A SymbolicExpansion whose row i lists the additive terms of basis
        entry i after one step, referencing only sources of degree <= the
        target's degree.
    """
    basis = build_basis(max_degree)
    updates = _update_polynomials()

    # Cache powers of each update polynomial up to the degree cap.
    powers = []
    for poly in updates:
        cache = [_unit()]
        for _ in range(max_degree):
            cache.append(_poly_mul(cache[-1], poly))
        powers.append(cache)

    rows = []
    for target in basis.entries:
        product = _unit()
        for var, exp in enumerate(target.exponents):
            if exp:
                product = _poly_mul(product, powers[var][exp])
        terms = []
        for (state, ctrl, nse), coeff in product.items():
            source = basis.index(state)
            if sum(state) > target.degree:
                raise AssertionError(
                    f"degree closure violated: {target.exponents} -> {state}"
                )
            terms.append(
                ExpansionTerm(
                    source=source,
                    ctrl_powers=ctrl,
                    noise_v_power=nse[0],
                    noise_z_power=nse[1],
                    noise_psi_powers=(nse[2], nse[3]),
                    coeff=coeff,
                )
            )
        terms.sort(
            key=lambda t: (
                t.source,
                t.ctrl_powers,
                t.noise_v_power,
                t.noise_z_power,
                t.noise_psi_powers,
            )
        )
        rows.append(tuple(terms))
    return SymbolicExpansion(basis=basis, rows=tuple(rows))
