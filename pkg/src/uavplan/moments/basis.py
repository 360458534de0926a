"""Graded-lexicographic monomial basis over the augmented state.

The augmented state is (x, y, z, cos(psi), sin(psi)).  State moments up to
degree four are tracked jointly, so the basis enumerates the constant
monomial followed by every exponent tuple of total degree one to four.
The ordering is graded lexicographic with x > y > z > cos > sin, which
makes the degree-one block [x, y, z, cos, sin] and the degree-two block
[x^2, xy, xz, x cos, x sin, y^2, yz, y cos, y sin, z^2, z cos, z sin,
cos^2, cos sin, sin^2].
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from types import MappingProxyType
from typing import Mapping, Tuple

N_STATE_VARS = 5
MAX_DEGREE = 4

_VAR_LABELS = ("x", "y", "z", "cos", "sin")


@dataclass(frozen=True, order=True)
class MonomialIndex:
    """Exponent tuple of a state monomial x^a y^b z^c cos^d sin^e."""

    exponents: Tuple[int, int, int, int, int]

    def __post_init__(self) -> None:
        if len(self.exponents) != N_STATE_VARS:
            raise ValueError(f"expected {N_STATE_VARS} exponents, got {self.exponents}")
        if min(self.exponents) < 0:
            raise ValueError(f"exponents must be non-negative, got {self.exponents}")
        if self.degree > MAX_DEGREE:
            raise ValueError(f"monomial degree {self.degree} exceeds cap {MAX_DEGREE}")

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    @property
    def is_constant(self) -> bool:
        return self.degree == 0

    def label(self) -> str:
        if self.is_constant:
            return "1"
        parts = []
        for name, e in zip(_VAR_LABELS, self.exponents):
            if e == 1:
                parts.append(name)
            elif e > 1:
                parts.append(f"{name}^{e}")
        return "*".join(parts)


@dataclass(frozen=True)
class MomentBasis:
    """Deterministically ordered list of basis monomials with index lookup.

    Entry 0 is the constant monomial; entries 1..125 are the degree-1..4
    monomials in graded-lexicographic order.
    """

    entries: Tuple[MonomialIndex, ...]
    index_of: Mapping[Tuple[int, int, int, int, int], int]

    def __len__(self) -> int:
        return len(self.entries)

    def index(self, exponents: Tuple[int, int, int, int, int]) -> int:
        return self.index_of[exponents]

    def labels(self) -> Tuple[str, ...]:
        return tuple(m.label() for m in self.entries)


def _grlex_key(exponents):
    return (sum(exponents), tuple(-e for e in exponents))


@lru_cache(maxsize=None)
def build_basis(max_degree: int = MAX_DEGREE) -> MomentBasis:
    """Enumerate the constant plus all monomials of degree 1..max_degree."""
    if not 1 <= max_degree <= MAX_DEGREE:
        raise ValueError(f"max_degree must be in [1, {MAX_DEGREE}], got {max_degree}")
    tuples = [
        exps
        for exps in itertools.product(range(max_degree + 1), repeat=N_STATE_VARS)
        if sum(exps) <= max_degree
    ]
    tuples.sort(key=_grlex_key)
    entries = tuple(MonomialIndex(e) for e in tuples)
    index_of = MappingProxyType({m.exponents: i for i, m in enumerate(entries)})
    return MomentBasis(entries=entries, index_of=index_of)
