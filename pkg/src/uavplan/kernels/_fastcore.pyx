# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled moment-rollout core.

Mirrors uavplan.kernels.reference exactly; see that module for the
contract.  The hot loops are CSR data evaluation at a control triple and
CSR matrix products against the moment vector and its sensitivity block.
"""

from libc.math cimport cos, sin

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef void _eval_terms(
    double delta,
    int n_terms,
    const int* slot,
    const double* coeff,
    const int* pa,
    const int* pb,
    const int* pc,
    const int* pd,
    double dv, double dz, double cu, double su,
    double* data,
    double* gv, double* gz, double* gpsi,
    bint want_grad,
) noexcept nogil:
    cdef double lut[4][6]
    cdef double bases[4]
    cdef int i, k
    bases[0] = dv
    bases[1] = dz
    bases[2] = cu
    bases[3] = su
    for i in range(4):
        lut[i][0] = 1.0
        for k in range(1, 6):
            lut[i][k] = lut[i][k - 1] * bases[i]
    cdef int t, a, b, c, d, s
    cdef double base, trig, v
    for t in range(n_terms):
        a = pa[t]; b = pb[t]; c = pc[t]; d = pd[t]
        s = slot[t]
        base = coeff[t] * lut[0][a] * lut[1][b]
        trig = lut[2][c] * lut[3][d]
        data[s] += base * trig
        if want_grad:
            if a > 0:
                gv[s] += delta * coeff[t] * a * lut[0][a - 1] * lut[1][b] * trig
            if b > 0:
                gz[s] += delta * coeff[t] * b * lut[0][a] * lut[1][b - 1] * trig
            v = 0.0
            if d > 0:
                v += d * lut[2][c + 1] * lut[3][d - 1]
            if c > 0:
                v -= c * lut[2][c - 1] * lut[3][d + 1]
            if v != 0.0:
                gpsi[s] += delta * base * v


cdef void _csr_vec(
    int n,
    const int* indptr,
    const int* indices,
    const double* data,
    const double* vec,
    double* out,
) noexcept nogil:
    cdef int i, j
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(indptr[i], indptr[i + 1]):
            acc += data[j] * vec[indices[j]]
        out[i] = acc


cdef void _csr_block(
    int n,
    const int* indptr,
    const int* indices,
    const double* data,
    const double* block,      # (n, stride) row-major, first ncols used
    int stride,
    int ncols,
    double* out,              # (n, stride) row-major
) noexcept nogil:
    cdef int i, j, t, col
    cdef double a
    for i in range(n):
        for t in range(ncols):
            out[i * stride + t] = 0.0
        for j in range(indptr[i], indptr[i + 1]):
            col = indices[j]
            a = data[j]
            for t in range(ncols):
                out[i * stride + t] += a * block[col * stride + t]


def rollout_impl(
    int basis_size,
    double delta,
    const int[::1] indptr,
    const int[::1] indices,
    const int[::1] term_slot,
    const double[::1] term_coeff,
    const int[::1] term_pa,
    const int[::1] term_pb,
    const int[::1] term_pc,
    const int[::1] term_pd,
    const double[::1] m0,
    const double[:, ::1] controls,
    bint want_jacobian,
):
    cdef int T = controls.shape[0]
    cdef int n = basis_size
    cdef int nnz = indices.shape[0]
    cdef int n_terms = term_slot.shape[0]
    cdef int stride = 3 * T

    moments_arr = np.empty((T + 1, n))
    cdef double[:, ::1] moments = moments_arr
    jac_arr = None
    cdef double[:, :, ::1] jac = None
    if want_jacobian:
        jac_arr = np.zeros((T, n, stride))
        jac = jac_arr

    data_arr = np.zeros(nnz)
    gv_arr = np.zeros(nnz)
    gz_arr = np.zeros(nnz)
    gpsi_arr = np.zeros(nnz)
    scratch_arr = np.zeros(n)
    cdef double[::1] data = data_arr
    cdef double[::1] gv = gv_arr
    cdef double[::1] gz = gz_arr
    cdef double[::1] gpsi = gpsi_arr
    cdef double[::1] scratch = scratch_arr

    cdef int k, i
    cdef double dv, dz, cu, su
    cdef int cols

    with nogil:
        for i in range(n):
            moments[0, i] = m0[i]
        for k in range(1, T + 1):
            for i in range(nnz):
                data[i] = 0.0
                gv[i] = 0.0
                gz[i] = 0.0
                gpsi[i] = 0.0
            dv = delta * controls[k - 1, 0]
            dz = delta * controls[k - 1, 1]
            cu = cos(delta * controls[k - 1, 2])
            su = sin(delta * controls[k - 1, 2])
            _eval_terms(
                delta, n_terms,
                &term_slot[0], &term_coeff[0],
                &term_pa[0], &term_pb[0], &term_pc[0], &term_pd[0],
                dv, dz, cu, su,
                &data[0], &gv[0], &gz[0], &gpsi[0], want_jacobian,
            )
            _csr_vec(n, &indptr[0], &indices[0], &data[0], &moments[k - 1, 0], &moments[k, 0])
            if want_jacobian:
                cols = 3 * (k - 1)
                if cols > 0:
                    _csr_block(
                        n, &indptr[0], &indices[0], &data[0],
                        &jac[k - 2, 0, 0], stride, cols, &jac[k - 1, 0, 0],
                    )
                _csr_vec(n, &indptr[0], &indices[0], &gv[0], &moments[k - 1, 0], &scratch[0])
                for i in range(n):
                    jac[k - 1, i, cols] = scratch[i]
                _csr_vec(n, &indptr[0], &indices[0], &gz[0], &moments[k - 1, 0], &scratch[0])
                for i in range(n):
                    jac[k - 1, i, cols + 1] = scratch[i]
                _csr_vec(n, &indptr[0], &indices[0], &gpsi[0], &moments[k - 1, 0], &scratch[0])
                for i in range(n):
                    jac[k - 1, i, cols + 2] = scratch[i]

    return moments_arr, jac_arr
