"""Generalized sidelobe canceller with a per-bin RLS noise canceller.

Upper branch: delay-and-sum beamformer ``w_c = a / M``.
Lower branch: projection blocking matrix ``B = I - a a^H / (a^H a)`` with
its last column removed, followed by an ``(M - 1)``-tap RLS filter per
frequency bin. The enhanced spectrum is the a posteriori error
``e = d - w_a^H u``.

The recursion runs in a compiled kernel when ``egonoise._rls_ext`` is
importable and ``EGONOISE_PURE_PYTHON`` is unset; otherwise the numpy
implementation in :mod:`egonoise._rls_py` is used. ``BACKEND`` names the
active one.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import _rls_py
from .errors import DataError
from .geometry import ArrayGeometry, steering_matrix
from .stft import MultichannelSignal, SpectrogramTensor, StftConfig, analyze, synthesize

if os.environ.get("EGONOISE_PURE_PYTHON"):
    _rls_run = _rls_py.rls_run
    BACKEND = "python"
else:
    try:
        from ._rls_ext import rls_run as _rls_run

        BACKEND = "cython"
    except ImportError:
        _rls_run = _rls_py.rls_run
        BACKEND = "python"

__all__ = [
    "BACKEND",
    "RlsParams",
    "FixedBeamformer",
    "BlockingMatrix",
    "GscState",
    "GscDiagnostics",
    "make_fixed_beamformer",
    "make_blocking_matrix",
    "rls_step",
    "rls_run",
    "GscProcessor",
    "process",
]


@dataclass(frozen=True)
class RlsParams:
    """Forgetting factor and initial inverse-covariance scale.

    ``P(0) = I / delta_reg``.
    """

    lam: float = 0.995
    delta_reg: float = 0.01

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise ValueError(f"forgetting factor must lie in (0, 1], got {self.lam}")
        if not self.delta_reg > 0:
            raise ValueError("delta_reg must be positive")

    def to_dict(self):
        return {"lambda": self.lam, "delta_reg": self.delta_reg}


@dataclass
class FixedBeamformer:
    """Delay-and-sum weights per bin, shape ``(K, M)``."""

    weights: np.ndarray

    def apply(self, X):
        """``w_c^H x`` for ``X`` of shape ``(M, L, K)``; returns ``(L, K)``."""
        return np.einsum("km,mlk->lk", self.weights.conj(), X)


@dataclass
class BlockingMatrix:
    """Projection blocking matrix per bin.

    ``full`` is ``(K, M, M)``; ``reduced`` keeps its first ``M - 1`` columns.
    """

    full: np.ndarray
    reduced: np.ndarray

    def apply(self, X):
        """``B_reduced^H x`` for ``X`` of shape ``(M, L, K)``; returns ``(L, K, M-1)``."""
        return np.einsum("kmd,mlk->lkd", self.reduced.conj(), X)


def make_fixed_beamformer(geom: ArrayGeometry, theta_deg, cfg: StftConfig) -> FixedBeamformer:
    a = steering_matrix(geom, theta_deg, cfg)
    norm = np.einsum("km,km->k", a.conj(), a).real
    return FixedBeamformer(a / norm[:, None])


def make_blocking_matrix(geom: ArrayGeometry, theta_deg, cfg: StftConfig) -> BlockingMatrix:
    a = steering_matrix(geom, theta_deg, cfg)
    m = a.shape[1]
    norm = np.einsum("km,km->k", a.conj(), a).real
    full = np.eye(m)[None] - a[:, :, None] * a.conj()[:, None, :] / norm[:, None, None]
    return BlockingMatrix(full, full[:, :, : m - 1].copy())


@dataclass
class GscState:
    """Per-bin RLS state.

    Attributes
    ----------
    w : ndarray, complex, (K, D)
        Adaptive weights; the noise estimate is ``w^H u``.
    P : ndarray, complex, (K, D, D)
        Inverse (exponentially weighted) covariance of the blocked signals.
    lam : float
    delta_reg : float
    """

    w: np.ndarray
    P: np.ndarray
    lam: float = 0.995
    delta_reg: float = 0.01

    @classmethod
    def initial(cls, n_bins, dim, params: RlsParams = RlsParams()):
        w = np.zeros((n_bins, dim), dtype=complex)
        P = np.tile(np.eye(dim, dtype=complex) / params.delta_reg, (n_bins, 1, 1))
        return cls(w, P, params.lam, params.delta_reg)

    @property
    def n_bins(self):
        return self.w.shape[0]

    @property
    def dim(self):
        return self.w.shape[1]

    def copy(self):
        return GscState(self.w.copy(), self.P.copy(), self.lam, self.delta_reg)


def rls_step(state: GscState, d, u):
    """Advance the RLS recursion by one frame.

    ``d`` is a scalar or ``(K,)`` array and ``u`` is ``(D,)`` or ``(K, D)``,
    matching ``state``. The state is updated in place and also returned.

    Returns
    -------
    e : complex or ndarray
        A posteriori output ``d - w(l)^H u``.
    state : GscState
    """
    scalar = np.ndim(d) == 0
    d = np.atleast_1d(np.asarray(d, dtype=complex))
    u = np.asarray(u, dtype=complex).reshape(d.shape[0], -1)
    if u.shape != state.w.shape:
        raise DataError(f"blocked signal shape {u.shape} does not match state {state.w.shape}")
    if not np.all(np.isfinite(u)) or not np.all(np.isfinite(d)):
        raise DataError("non-finite input to rls_step")
    e, _ = _rls_py.rls_run(d[None], u[None], state.w, state.P, state.lam)
    return (e[0, 0] if scalar else e[0]), state


def rls_run(state: GscState, d, u, backend=None):
    """Run the recursion over ``(L, K)`` desired and ``(L, K, D)`` blocked signals.

    Returns ``(e, xi)``: a posteriori and a priori errors, each ``(L, K)``.
    """
    run = _rls_run
    if backend == "python":
        run = _rls_py.rls_run
    elif backend == "cython":
        from ._rls_ext import rls_run as run
    elif backend is not None:
        raise ValueError(f"unknown backend {backend!r}")
    return run(np.asarray(d, dtype=complex), np.asarray(u, dtype=complex),
               state.w, state.P, state.lam)


@dataclass
class GscDiagnostics:
    """Per-frame powers and the final adaptive weight norms."""

    output_power: np.ndarray
    fixed_power: np.ndarray
    apriori_power: np.ndarray
    weight_norms: np.ndarray
    theta_deg: float
    backend: str = BACKEND
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "theta_deg": float(self.theta_deg),
            "backend": self.backend,
            "frame_output_power": self.output_power.tolist(),
            "frame_fixed_power": self.fixed_power.tolist(),
            "convergence_apriori_power": self.apriori_power.tolist(),
            "final_weight_norms": self.weight_norms.tolist(),
        }
        out.update(self.extra)
        return out


class GscProcessor:
    """GSC beamformer steered at a fixed azimuth.

    One instance owns its adaptive state; frames must be fed in order and
    concurrent use of one instance is not supported.
    """

    def __init__(self, geom: ArrayGeometry, theta_deg, cfg: StftConfig = StftConfig(),
                 params: RlsParams = RlsParams()):
        self.geom = geom
        self.theta_deg = float(theta_deg)
        self.cfg = cfg
        self.params = params
        self.fixed = make_fixed_beamformer(geom, theta_deg, cfg)
        self.blocking = make_blocking_matrix(geom, theta_deg, cfg)
        self.state = GscState.initial(cfg.n_bins, geom.n_mics - 1, params)

    def reset(self):
        self.state = GscState.initial(self.cfg.n_bins, self.geom.n_mics - 1, self.params)

    def branches(self, X):
        """Fixed-branch output ``d`` (L, K) and blocked signals ``u`` (L, K, M-1)."""
        X = X.coefficients if isinstance(X, SpectrogramTensor) else np.asarray(X)
        if X.shape[0] != self.geom.n_mics:
            raise DataError(
                f"input has {X.shape[0]} channels but the array has {self.geom.n_mics}"
            )
        if X.shape[-1] != self.cfg.n_bins:
            raise DataError(f"input has {X.shape[-1]} bins, expected {self.cfg.n_bins}")
        return self.fixed.apply(X), self.blocking.apply(X)

    def process_spectrogram(self, X, backend=None):
        """Run the GSC on ``(M, L, K)`` STFT coefficients.

        Returns ``(e, d, xi)``: output, fixed-branch output and a priori
        error, each ``(L, K)``.
        """
        d, u = self.branches(X)
        e, xi = rls_run(self.state, d, u, backend=backend)
        return e, d, xi

    def process(self, signal: MultichannelSignal, backend=None):
        """Enhance a time-domain multichannel signal.

        Returns ``(enhanced, diagnostics)``; ``enhanced`` is single channel,
        time-aligned with the input and of the same length.
        """
        if signal.channel_count != self.geom.n_mics:
            raise DataError(
                f"signal has {signal.channel_count} channels but the array has "
                f"{self.geom.n_mics}"
            )
        if signal.sample_rate != self.cfg.sample_rate:
            raise DataError(
                f"signal sample rate {signal.sample_rate} differs from configured "
                f"{self.cfg.sample_rate}"
            )
        spec = analyze(signal, self.cfg, pad_edges=True)
        e, d, xi = self.process_spectrogram(spec, backend=backend)
        out = synthesize(SpectrogramTensor(e[None], spec.n_samples), self.cfg, pad_edges=True)
        diag = GscDiagnostics(
            output_power=np.mean(np.abs(e) ** 2, axis=1),
            fixed_power=np.mean(np.abs(d) ** 2, axis=1),
            apriori_power=np.mean(np.abs(xi) ** 2, axis=1),
            weight_norms=np.linalg.norm(self.state.w, axis=1),
            theta_deg=self.theta_deg,
            backend=BACKEND if backend is None else backend,
        )
        return out, diag


def process(signal: MultichannelSignal, theta_deg, geom: ArrayGeometry,
            cfg: StftConfig = StftConfig(), rls_params: RlsParams = RlsParams()):
    """Steer a fresh GSC to ``theta_deg`` and enhance ``signal``."""
    return GscProcessor(geom, theta_deg, cfg, rls_params).process(signal)
