"""Pure-numpy moment rollout, the fallback when the compiled core is absent.

Semantics are identical to the compiled extension: given the packed
expansion arrays, an initial basis vector and a control sequence, produce
the moment trajectory and, on request, its Jacobian with respect to every
control entry via forward sensitivity propagation

    J_k = A(u_k) J_{k-1}  plus  dA/du_{k,c} m_{k-1} in the step-k columns.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

_MAX_POW = 6


def _power_lut(dv: float, dz: float, cu: float, su: float) -> np.ndarray:
    lut = np.empty((4, _MAX_POW))
    for row, base in zip(lut, (dv, dz, cu, su)):
        row[0] = 1.0
        for k in range(1, _MAX_POW):
            row[k] = row[k - 1] * base
    return lut


def eval_transition(
    delta,
    indptr,
    indices,
    term_slot,
    term_coeff,
    term_pa,
    term_pb,
    term_pc,
    term_pd,
    u,
    want_grad,
):
    """CSR data of the transition at control u, optionally with du-grads.

    Returns (data, grads) where grads is a (3, nnz) array of the data
    derivative with respect to (u_v, u_z, u_psi), or None.
    """
    nnz = indices.shape[0]
    lut = _power_lut(
        delta * u[0], delta * u[1], math.cos(delta * u[2]), math.sin(delta * u[2])
    )
    poly = term_coeff * lut[0, term_pa] * lut[1, term_pb]
    trig = lut[2, term_pc] * lut[3, term_pd]
    data = np.bincount(term_slot, weights=poly * trig, minlength=nnz)
    if not want_grad:
        return data, None
    grads = np.empty((3, nnz))
    # pa-1 indexes wrap to the padded tail only where the pa factor is 0
    dv_vals = delta * term_coeff * term_pa * lut[0, term_pa - 1] * lut[1, term_pb] * trig
    grads[0] = np.bincount(term_slot, weights=dv_vals, minlength=nnz)
    dz_vals = delta * term_coeff * term_pb * lut[0, term_pa] * lut[1, term_pb - 1] * trig
    grads[1] = np.bincount(term_slot, weights=dz_vals, minlength=nnz)
    dpsi_trig = term_pd * lut[2, term_pc + 1] * lut[3, term_pd - 1] - term_pc * lut[
        2, term_pc - 1
    ] * lut[3, term_pd + 1]
    grads[2] = np.bincount(term_slot, weights=delta * poly * dpsi_trig, minlength=nnz)
    return data, grads


def rollout_impl(
    basis_size,
    delta,
    indptr,
    indices,
    term_slot,
    term_coeff,
    term_pa,
    term_pb,
    term_pc,
    term_pd,
    m0,
    controls,
    want_jacobian,
):
    """Propagate moments through the control sequence.

    Args:
        basis_size: Number of basis entries (rows/cols of the transition).
        delta: Time step baked into the packed expansion.
        indptr/indices: CSR pattern of the transition matrix.
        term_*: Packed term arrays (slot, coefficient, atom powers).
        m0: Initial basis vector, shape (basis_size,).
        controls: Control sequence, shape (T, 3).
        want_jacobian: Whether to compute sensitivities.

    Returns:
        (moments, jacobian): moments has shape (T+1, basis_size);
        jacobian has shape (T, basis_size, 3T) or is None.
    """
    T = controls.shape[0]
    n = basis_size
    moments = np.empty((T + 1, n))
    moments[0] = m0
    jacobian = np.zeros((T, n, 3 * T)) if want_jacobian else None
    matrix = sp.csr_matrix((np.zeros(indices.shape[0]), indices, indptr), shape=(n, n))
    for k in range(1, T + 1):
        data, grads = eval_transition(
            delta,
            indptr,
            indices,
            term_slot,
            term_coeff,
            term_pa,
            term_pb,
            term_pc,
            term_pd,
            controls[k - 1],
            want_jacobian,
        )
        matrix.data = data
        moments[k] = matrix @ moments[k - 1]
        if want_jacobian:
            cols = 3 * (k - 1)
            if cols:
                jacobian[k - 1, :, :cols] = matrix @ jacobian[k - 2, :, :cols]
            for c in range(3):
                matrix.data = grads[c]
                jacobian[k - 1, :, cols + c] = matrix @ moments[k - 1]
            matrix.data = data
    return moments, jacobian
