"""Pure numpy RLS recursion, vectorised over frequency bins.

Reference implementation and import-time fallback for ``_rls_ext``.
Both expose ``rls_run`` with identical semantics.
"""

import numpy as np

from .errors import DivergenceError


def rls_update(w, P, d, u, lam, symmetrize=True):
    """One RLS step for every bin, updating ``w`` and ``P`` in place.

    Parameters
    ----------
    w : ndarray, complex, (K, D)
        Adaptive weights; the filter output is ``w^H u``.
    P : ndarray, complex, (K, D, D)
        Inverse of the exponentially weighted covariance of ``u``.
    d : ndarray, complex, (K,)
        Desired (fixed beamformer) signal.
    u : ndarray, complex, (K, D)
        Blocked reference signals.
    lam : float
        Forgetting factor.

    Returns
    -------
    e : ndarray, complex, (K,)
        A posteriori error ``d - w(l)^H u``.
    xi : ndarray, complex, (K,)
        A priori error ``d - w(l-1)^H u``.
    """
    xi = d - np.einsum("kd,kd->k", w.conj(), u)
    pu = np.einsum("kij,kj->ki", P, u)
    denom = lam + np.einsum("kd,kd->k", u.conj(), pu).real
    gain = pu / denom[:, None]
    w += gain * xi.conj()[:, None]
    uP = np.einsum("kd,kdj->kj", u.conj(), P)
    P -= gain[:, :, None] * uP[:, None, :]
    P /= lam
    if symmetrize:
        P += P.conj().transpose(0, 2, 1)
        P *= 0.5
    e = d - np.einsum("kd,kd->k", w.conj(), u)
    return e, xi


def rls_run(d, u, w, P, lam, symmetrize=True):
    """Run the recursion over all frames.

    ``d`` is ``(L, K)`` and ``u`` is ``(L, K, D)``; ``w`` and ``P`` are
    updated in place. Returns ``(e, xi)``, each ``(L, K)``.
    """
    n_frames, n_bins = d.shape
    e = np.empty((n_frames, n_bins), dtype=complex)
    xi = np.empty((n_frames, n_bins), dtype=complex)
    for l in range(n_frames):
        with np.errstate(over="ignore", invalid="ignore"):  # checked just below
            e[l], xi[l] = rls_update(w, P, d[l], u[l], lam, symmetrize)
        bad = ~np.isfinite(e[l]) | ~np.isfinite(P).all(axis=(1, 2))
        if bad.any():
            raise DivergenceError(int(np.flatnonzero(bad)[0]), l)
    return e, xi
