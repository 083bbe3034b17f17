# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled RLS recursion. Same contract as ``egonoise._rls_py.rls_run``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport isfinite

from .errors import DivergenceError

cnp.import_array()

ctypedef double complex cplx


cdef inline cplx conj(cplx z) noexcept nogil:
    return z.real - 1j * z.imag


cdef int _run(const cplx[:, :] d, const cplx[:, :, :] u, cplx[:, :] w,
              cplx[:, :, :] P, double lam, bint symmetrize,
              cplx[:, :] e, cplx[:, :] xi, cplx[:] pu, cplx[:] uP,
              int *bad_frame) noexcept nogil:
    cdef Py_ssize_t n_frames = d.shape[0]
    cdef Py_ssize_t n_bins = d.shape[1]
    cdef Py_ssize_t dim = u.shape[2]
    cdef Py_ssize_t l, k, i, j
    cdef cplx acc, err, a, b
    cdef double denom, inv_denom, inv_lam = 1.0 / lam

    for l in range(n_frames):
        for k in range(n_bins):
            acc = 0
            for i in range(dim):
                acc = acc + conj(w[k, i]) * u[l, k, i]
            err = d[l, k] - acc
            xi[l, k] = err
            # pu = P u, uP = u^H P
            denom = lam
            for i in range(dim):
                acc = 0
                for j in range(dim):
                    acc = acc + P[k, i, j] * u[l, k, j]
                pu[i] = acc
                denom = denom + (conj(u[l, k, i]) * acc).real
            for j in range(dim):
                acc = 0
                for i in range(dim):
                    acc = acc + conj(u[l, k, i]) * P[k, i, j]
                uP[j] = acc
            inv_denom = 1.0 / denom
            for i in range(dim):
                pu[i] = pu[i] * inv_denom
                w[k, i] = w[k, i] + pu[i] * conj(err)
            for i in range(dim):
                for j in range(dim):
                    P[k, i, j] = (P[k, i, j] - pu[i] * uP[j]) * inv_lam
            if symmetrize:
                for i in range(dim):
                    P[k, i, i] = P[k, i, i].real
                    for j in range(i + 1, dim):
                        a = P[k, i, j]
                        b = P[k, j, i]
                        P[k, i, j] = 0.5 * (a + conj(b))
                        P[k, j, i] = conj(P[k, i, j])
            acc = 0
            for i in range(dim):
                acc = acc + conj(w[k, i]) * u[l, k, i]
            e[l, k] = d[l, k] - acc
            if not (isfinite(e[l, k].real) and isfinite(e[l, k].imag)):
                bad_frame[0] = <int>l
                return <int>k
            for i in range(dim):
                for j in range(dim):
                    if not (isfinite(P[k, i, j].real) and isfinite(P[k, i, j].imag)):
                        bad_frame[0] = <int>l
                        return <int>k
    return -1


def rls_run(d, u, w, P, double lam, bint symmetrize=True):
    """Run the recursion over all frames; ``w`` and ``P`` are updated in place.

    ``d`` is ``(L, K)``, ``u`` is ``(L, K, D)``, ``w`` is ``(K, D)`` and
    ``P`` is ``(K, D, D)``, all complex128 and C-contiguous.
    Returns ``(e, xi)``, each ``(L, K)``.
    """
    d = np.ascontiguousarray(d, dtype=np.complex128)
    u = np.ascontiguousarray(u, dtype=np.complex128)
    if w.dtype != np.complex128 or not w.flags.c_contiguous:
        raise TypeError("w must be a C-contiguous complex128 array")
    if P.dtype != np.complex128 or not P.flags.c_contiguous:
        raise TypeError("P must be a C-contiguous complex128 array")
    n_frames, n_bins = d.shape
    dim = u.shape[2]
    if u.shape[0] != n_frames or u.shape[1] != n_bins or w.shape[0] != n_bins \
            or w.shape[1] != dim or P.shape[0] != n_bins or P.shape[1] != dim \
            or P.shape[2] != dim:
        raise ValueError("inconsistent RLS array shapes")
    e = np.empty((n_frames, n_bins), dtype=np.complex128)
    xi = np.empty((n_frames, n_bins), dtype=np.complex128)
    pu = np.empty(dim, dtype=np.complex128)
    uP = np.empty(dim, dtype=np.complex128)
    cdef int bad_frame = -1
    cdef int bad_bin
    cdef const cplx[:, :] dv = d
    cdef const cplx[:, :, :] uv = u
    cdef cplx[:, :] wv = w
    cdef cplx[:, :, :] Pv = P
    cdef cplx[:, :] ev = e
    cdef cplx[:, :] xv = xi
    cdef cplx[:] puv = pu
    cdef cplx[:] uPv = uP
    with nogil:
        bad_bin = _run(dv, uv, wv, Pv, lam, symmetrize, ev, xv, puv, uPv, &bad_frame)
    if bad_bin >= 0:
        raise DivergenceError(bad_bin, bad_frame)
    return e, xi
