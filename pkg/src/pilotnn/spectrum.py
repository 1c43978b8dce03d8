"""Power spectral density models and the spectral integrals built on them.

Frequencies are normalized to cycles per channel use, so every density
lives on ``[-1/2, 1/2]``. Integrals use composite Gauss-Legendre rules whose
panel boundaries include every point where the integrand jumps.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from ._validation import check_int, check_snr

SHAPES = ("rectangular", "raised-cosine")


@functools.lru_cache(maxsize=None)
def _legendre_rule(order: int):
    return np.polynomial.legendre.leggauss(order)


def composite_gauss_legendre(a: float, b: float, breakpoints=(), n_points: int = 2048,
                             order: int = 16):
    """Nodes and weights of a composite Gauss-Legendre rule on ``[a, b]``.

    Parameters
    ----------
    a, b : float
        Integration limits, ``a < b``.
    breakpoints : iterable of float
        Points inside ``(a, b)`` that must fall on panel boundaries.
    n_points : int
        Approximate total node count. Panels are shared among the segments
        between breakpoints in proportion to segment length, with at least
        one panel per segment.
    order : int
        Nodes per panel.

    Returns
    -------
    nodes, weights : ndarray
    """
    if not b > a:
        raise ValueError("need a < b")
    inner = sorted({float(p) for p in breakpoints if a < p < b})
    edges = np.array([a, *inner, b], dtype=float)
    lengths = np.diff(edges)
    keep = lengths > 1e-15 * (b - a)
    edges = np.concatenate([edges[:1], edges[1:][keep]])
    lengths = np.diff(edges)
    total_panels = max(n_points // order, len(lengths))
    counts = np.maximum(1, np.round(lengths / (b - a) * total_panels).astype(int))
    x, w = _legendre_rule(order)
    nodes, weights = [], []
    for left, right, count in zip(edges[:-1], edges[1:], counts):
        panel_edges = np.linspace(left, right, count + 1)
        half = 0.5 * np.diff(panel_edges)
        mid = 0.5 * (panel_edges[:-1] + panel_edges[1:])
        nodes.append((mid[:, None] + half[:, None] * x[None, :]).ravel())
        weights.append((half[:, None] * w[None, :]).ravel())
    return np.concatenate(nodes), np.concatenate(weights)


def wrap_frequency(lam):
    """Reduce frequencies modulo one into ``[-1/2, 1/2)``."""
    lam = np.asarray(lam, dtype=float)
    return np.mod(lam + 0.5, 1.0) - 0.5


@dataclass(frozen=True)
class PsdModel:
    """Bandlimited fading spectrum with unit total power.

    Parameters
    ----------
    bandwidth : float
        One-sided bandwidth in cycles per channel use, in ``(0, 1/2)``.
    shape : {"rectangular", "raised-cosine"}
        ``rectangular`` is flat at ``1/(2*bandwidth)`` in band.
        ``raised-cosine`` is ``(1 + cos(pi*lam/bandwidth)) / (2*bandwidth)``
        in band, positive everywhere inside the open band.
    grid_points : int
        Quadrature node budget over ``[-1/2, 1/2]``.
    """

    bandwidth: float
    shape: str = "rectangular"
    grid_points: int = 2048

    def __post_init__(self):
        bw = float(self.bandwidth)
        if not 0.0 < bw < 0.5:
            raise ValueError(f"bandwidth must lie in (0, 1/2), got {bw}")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        check_int(self.grid_points, "grid_points", minimum=16)
        object.__setattr__(self, "bandwidth", bw)

    @property
    def critical_period(self) -> int:
        """Largest pilot spacing free of aliasing, ``floor(1/(2*bandwidth))``."""
        return int(np.floor(1.0 / (2.0 * self.bandwidth) + 1e-12))

    def _in_band(self, lam):
        bw = self.bandwidth
        inside = np.abs(lam) <= bw
        if self.shape == "rectangular":
            return np.where(inside, 1.0 / (2.0 * bw), 0.0)
        return np.where(inside, (1.0 + np.cos(np.pi * lam / bw)) / (2.0 * bw), 0.0)

    def density(self, lam):
        """Evaluate the density on ``[-1/2, 1/2]``; raises outside it."""
        lam = np.asarray(lam, dtype=float)
        if np.any(np.abs(lam) > 0.5):
            raise ValueError("frequency outside [-1/2, 1/2]")
        return self._in_band(lam)

    def periodic_density(self, lam):
        """Period-one continuation of :meth:`density`, defined on all reals."""
        return self._in_band(wrap_frequency(lam))

    def band_quadrature(self):
        """Quadrature nodes and weights covering the support ``[-bw, bw]``.

        The node budget is the in-band share of ``grid_points``.
        """
        bw = self.bandwidth
        n = max(64, int(round(self.grid_points * 2 * bw)))
        return composite_gauss_legendre(-bw, bw, (), n_points=n)

    def total_power(self) -> float:
        nodes, weights = self.band_quadrature()
        return float(weights @ self.density(nodes))


def eval_psd(model: PsdModel, lam):
    """Spectral density ``f_H`` at ``lam`` (scalar or array in ``[-1/2, 1/2]``)."""
    out = model.density(lam)
    return float(out) if np.ndim(out) == 0 else out


def _check_frequency(lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(np.abs(lam) > 0.5):
        raise ValueError("frequency outside [-1/2, 1/2]")
    return lam


def _undersampled(model: PsdModel, period: int, offset: int, lam: np.ndarray):
    nu = np.arange(period, dtype=float).reshape((period,) + (1,) * lam.ndim)
    x = (lam[None, ...] - nu) / period
    terms = model.periodic_density(x) * np.exp(2j * np.pi * offset * x)
    return terms.sum(axis=0) / period


def undersampled_spectrum(model: PsdModel, L: int, ell: int, lam):
    """Spectrum of the fading seen every ``L`` samples at phase offset ``ell``.

    Computes ``(1/L) sum_nu fbar((lam - nu)/L) exp(i 2 pi ell (lam - nu)/L)``
    where ``fbar`` is the period-one continuation of the density.

    Parameters
    ----------
    model : PsdModel
    L : int
        Subsampling period, ``L >= 1``.
    ell : int
        Phase offset, ``0 <= ell <= L - 1``.
    lam : float or array_like
        Frequencies in ``[-1/2, 1/2]``.

    Returns
    -------
    complex or ndarray of complex
    """
    L = check_int(L, "L", minimum=1)
    ell = check_int(ell, "ell", minimum=0)
    if ell > L - 1:
        raise ValueError(f"ell must be <= L - 1 = {L - 1}, got {ell}")
    lam = _check_frequency(lam)
    out = _undersampled(model, L, ell, lam)
    return complex(out) if out.ndim == 0 else out


def _aliasing_breakpoints(model: PsdModel, L: int):
    """Frequencies in ``(-1/2, 1/2)`` where some shifted copy hits a band edge."""
    bw = model.bandwidth
    points = []
    for nu in range(L):
        for edge in (-bw, bw):
            q_lo = int(np.ceil((-0.5 - nu) / L - edge)) - 1
            q_hi = int(np.floor((0.5 - nu) / L - edge)) + 1
            for q in range(q_lo, q_hi + 1):
                lam = nu + L * (edge + q)
                if -0.5 < lam < 0.5:
                    points.append(lam)
    return points


def _aliased_quadrature(model: PsdModel, L: int):
    return composite_gauss_legendre(-0.5, 0.5, _aliasing_breakpoints(model, L),
                                    n_points=model.grid_points)


def error_variance_no_alias(model: PsdModel, L: int, n_t: int, snr: float) -> float:
    """Limiting interpolation-error variance when pilots are not aliased.

    Evaluates ``1 - int snr f^2 / (snr f + L n_t)`` in the equivalent
    cancellation-free form ``int f L n_t / (snr f + L n_t)``, which uses
    unit total power and keeps the result non-negative.

    Raises
    ------
    ValueError
        If ``L > floor(1/(2*bandwidth))``; use :func:`error_variance_general`.
    """
    L = check_int(L, "L", minimum=1)
    n_t = check_int(n_t, "n_t", minimum=1)
    snr = check_snr(snr)
    if L > model.critical_period:
        raise ValueError(
            f"L={L} aliases the spectrum (limit {model.critical_period}); "
            "use error_variance_general")
    if snr == 0.0:
        return 1.0
    nodes, weights = model.band_quadrature()
    f = model.density(nodes)
    scale = L * n_t
    value = float(weights @ (f * scale / (snr * f + scale)))
    return min(1.0, value)


def _spectral_error(model: PsdModel, L: int, n_t: int, lag: int, snr: float) -> float:
    nodes, weights = _aliased_quadrature(model, L)
    f0 = _undersampled(model, L, 0, nodes).real
    f_lag = _undersampled(model, L, lag, nodes)
    # f0 - snr|f_lag|^2/(snr f0 + n_t) written without cancellation; |f_lag| <= f0.
    gap = np.maximum(f0 * f0 - np.abs(f_lag) ** 2, 0.0)
    integrand = (f0 * n_t + snr * gap) / (snr * f0 + n_t)
    return min(1.0, float(weights @ integrand))


def error_variance_general(model: PsdModel, L: int, n_t: int, ell: int, t: int,
                           snr: float) -> float:
    """Interpolation-error variance for an unlimited pilot window.

    Computes ``1 - int snr |f_{L,ell-t+1}|^2 / (snr f_{L,0} + n_t)`` over
    ``[-1/2, 1/2]``. Valid with or without aliasing.

    Parameters
    ----------
    model : PsdModel
    L : int
        Pilot period.
    n_t : int
        Number of pilot slots per period (transmit antennas).
    ell : int
        Data slot within the period, ``n_t <= ell <= L - 1``.
    t : int
        One-based antenna index, ``1 <= t <= n_t``.
    snr : float
        Linear SNR.
    """
    L = check_int(L, "L", minimum=2)
    n_t = check_int(n_t, "n_t", minimum=1)
    ell = check_int(ell, "ell")
    t = check_int(t, "t")
    snr = check_snr(snr)
    if not n_t <= ell <= L - 1:
        raise ValueError(f"ell must satisfy n_t <= ell <= L - 1, got ell={ell}")
    if not 1 <= t <= n_t:
        raise ValueError(f"t must satisfy 1 <= t <= n_t, got t={t}")
    if snr == 0.0:
        return 1.0
    return _spectral_error(model, L, n_t, ell - t + 1, snr)


def aliased_error_lower_bound(model: PsdModel, L: int, ell: int, t: int) -> float:
    """High-SNR floor on the interpolation error when pilots alias.

    Returns ``(2/L^2) (1 - cos(2 pi l'/L)) int fbar(lam/L) fbar((lam-1)/L) / f_{L,0}(lam)``
    with ``l' = ell - t + 1``. The integrand vanishes outside the overlap of
    the two shifted copies; points where ``f_{L,0}`` is zero contribute zero.

    Raises
    ------
    ValueError
        If ``L <= 1/(2*bandwidth)``, where the bound is vacuous.
    """
    L = check_int(L, "L", minimum=2)
    ell = check_int(ell, "ell")
    t = check_int(t, "t", minimum=1)
    if L * 2.0 * model.bandwidth <= 1.0:
        raise ValueError("no aliasing for this L; the bound is vacuous")
    if not t <= ell <= L - 1:
        raise ValueError(f"need t <= ell <= L - 1, got ell={ell}, t={t}")
    return aliased_bound_for_lag(model, L, ell - t + 1)


def aliased_bound_for_lag(model: PsdModel, L: int, lag: int) -> float:
    """The aliased floor as a function of the lag ``l' = ell - t + 1`` alone.

    Valid slot and antenna indices always give ``1 <= l' <= L - 1``; this
    form also accepts multiples of ``L``, where the bound is zero.
    """
    L = check_int(L, "L", minimum=2)
    lag = check_int(lag, "lag")
    if L * 2.0 * model.bandwidth <= 1.0:
        raise ValueError("no aliasing for this L; the bound is vacuous")
    if lag % L == 0:
        return 0.0
    factor = 2.0 / L**2 * (1.0 - np.cos(2.0 * np.pi * lag / L))
    nodes, weights = _aliased_quadrature(model, L)
    f0 = _undersampled(model, L, 0, nodes).real
    overlap = model.periodic_density(nodes / L) * model.periodic_density((nodes - 1.0) / L)
    ratio = np.divide(overlap, f0, out=np.zeros_like(f0), where=f0 > 0)
    return float(factor * (weights @ ratio))


def overlap_interval(model: PsdModel, L: int):
    """Frequencies where the first two shifted copies of the spectrum overlap.

    Returns ``(low, high)`` with ``low = 1 - L*bandwidth``, clipped to
    ``[-1/2, 1/2]``, or ``None`` without aliasing.
    """
    low = 1.0 - L * model.bandwidth
    if low >= 0.5:
        return None
    return max(low, -0.5), 0.5
