"""Moment-rollout kernels: compiled core with a pure-numpy fallback.

The compiled extension is preferred when importable; set the environment
variable UAVPLAN_KERNEL to "compiled" or "reference" to force one side
(forcing "compiled" raises if the extension is not built).  Both backends
implement the same rollout contract and are tested for equality.
"""

from __future__ import annotations

import os
from typing import Optional, Sequence, Tuple

import numpy as np

from uavplan.moments.dynamics import PackedExpansion


def _load_backend():
    choice = os.environ.get("UAVPLAN_KERNEL", "auto")
    if choice not in ("auto", "compiled", "reference"):
        raise ValueError(
            f"UAVPLAN_KERNEL must be 'auto', 'compiled' or 'reference', got {choice!r}"
        )
    if choice in ("auto", "compiled"):
        try:
            from uavplan.kernels import _fastcore

            return "compiled", _fastcore
        except ImportError:
            if choice == "compiled":
                raise
    from uavplan.kernels import reference

    return "reference", reference


BACKEND_NAME, _impl = _load_backend()


def backend_name() -> str:
    """Name of the kernel backend selected at import time."""
    return BACKEND_NAME


def rollout(
    packed: PackedExpansion,
    m0: np.ndarray,
    controls: Sequence[Sequence[float]],
    want_jacobian: bool = False,
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Propagate a basis vector through a control sequence.

    Args:
        packed: Noise-resolved expansion.
        m0: Initial basis vector of shape (basis_size,).
        controls: Sequence of (u_v, u_z, u_psi) triples, shape (T, 3).
        want_jacobian: Also compute forward sensitivities.

    Returns:
        (moments, jacobian): moments[k] is the basis vector after k steps,
        shape (T+1, basis_size); jacobian[k-1] is d moments[k] / d u_flat
        with u_flat the controls flattened row-major, shape
        (T, basis_size, 3T), or None when not requested.
    """
    m0 = np.ascontiguousarray(m0, dtype=np.float64)
    controls = np.ascontiguousarray(controls, dtype=np.float64)
    if controls.ndim != 2 or controls.shape[1] != 3:
        raise ValueError(f"controls must have shape (T, 3), got {controls.shape}")
    if m0.shape != (packed.basis_size,):
        raise ValueError(f"m0 must have shape ({packed.basis_size},), got {m0.shape}")
    return _impl.rollout_impl(
        packed.basis_size,
        packed.delta,
        packed.indptr,
        packed.indices,
        packed.term_slot,
        packed.term_coeff,
        packed.term_pa,
        packed.term_pb,
        packed.term_pc,
        packed.term_pd,
        m0,
        controls,
        want_jacobian,
    )
