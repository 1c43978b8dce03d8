"""Pilot framing and finite-window LMMSE interpolation of the fading.

Time is divided into periods of ``L`` channel uses. The first ``n_t`` slots
of every period carry one-hot pilots, one antenna per slot. Data fills the
remaining ``L - n_t`` slots of the middle periods, and ``T - 1`` guard
periods at each end give every data slot ``T`` pilot periods on either side.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import check_complex_array, check_int, check_snr
from .fading import autocovariance
from .spectrum import PsdModel, error_variance_general

PILOT, DATA, SILENT = "P", "D", "-"


@dataclass(frozen=True)
class PilotSchedule:
    """Frame layout for pilot period ``L``, ``n_t`` pilot slots and window ``T``.

    Attributes
    ----------
    L, n_t, T, n : int
        Period, pilot slots per period, half-window in periods, and data
        symbols per codeword (a multiple of ``L - n_t``).
    """

    L: int
    n_t: int
    T: int
    n: int

    def __post_init__(self):
        check_int(self.n_t, "n_t", minimum=1)
        check_int(self.L, "L", minimum=self.n_t + 1)
        check_int(self.T, "T", minimum=1)
        check_int(self.n, "n", minimum=1)
        if self.n % (self.L - self.n_t):
            raise ValueError(
                f"n={self.n} must be a multiple of L - n_t = {self.L - self.n_t}")

    @property
    def data_per_period(self) -> int:
        return self.L - self.n_t

    @property
    def n_blocks(self) -> int:
        """Number of periods that carry data."""
        return self.n // self.data_per_period

    @property
    def n_periods(self) -> int:
        """Periods touched by the frame, the last one holding only pilots."""
        return self.n_blocks + 2 * self.T - 1

    @property
    def n_pilot(self) -> int:
        return (self.n_blocks + 1 + 2 * (self.T - 1)) * self.n_t

    @property
    def n_guard(self) -> int:
        return 2 * self.data_per_period * (self.T - 1)

    @property
    def frame_length(self) -> int:
        return self.n_pilot + self.n + self.n_guard

    @property
    def first_data_period(self) -> int:
        return self.T - 1

    @property
    def data_offsets(self) -> np.ndarray:
        """In-period slots that carry data, ``n_t .. L - 1``."""
        return np.arange(self.n_t, self.L)

    @cached_property
    def pilot_indices(self) -> np.ndarray:
        k = np.arange(self.frame_length)
        return k[k % self.L < self.n_t]

    @cached_property
    def data_indices(self) -> np.ndarray:
        """Frame positions of codeword symbols ``0 .. n-1`` in order."""
        i = np.arange(self.n)
        block, pos = np.divmod(i, self.data_per_period)
        return (self.first_data_period + block) * self.L + self.n_t + pos

    @cached_property
    def silent_indices(self) -> np.ndarray:
        used = np.zeros(self.frame_length, dtype=bool)
        used[self.pilot_indices] = True
        used[self.data_indices] = True
        return np.flatnonzero(~used)

    def pilot_antenna(self, k: int) -> int:
        """Zero-based antenna whose pilot occupies frame position ``k``."""
        slot = int(k) % self.L
        if slot >= self.n_t or not 0 <= k < self.frame_length:
            raise ValueError(f"position {k} is not a pilot slot")
        return slot

    def layout(self) -> str:
        """One character per channel use: pilot, data or silent."""
        marks = np.full(self.frame_length, SILENT)
        marks[self.pilot_indices] = PILOT
        marks[self.data_indices] = DATA
        return "".join(marks)

    @cached_property
    def window_indices(self) -> np.ndarray:
        """Pilot positions feeding each estimate, shape ``(n, n_t, 2T)``.

        Entry ``[i, t, tau + T]`` is ``(j - tau) L + t`` for the data symbol
        ``i`` sitting in period ``j``, with ``tau = -T .. T-1``.
        """
        periods = self.data_indices // self.L
        tau = np.arange(-self.T, self.T)
        t = np.arange(self.n_t)
        return ((periods[:, None, None] - tau[None, None, :]) * self.L
                + t[None, :, None])

    @cached_property
    def symbol_offsets(self) -> np.ndarray:
        """In-period slot of each codeword symbol."""
        return self.data_indices % self.L


def build_schedule(L: int, n_t: int, T: int, n: int) -> PilotSchedule:
    """Validate and return the frame layout; see :class:`PilotSchedule`."""
    return PilotSchedule(L=L, n_t=n_t, T=T, n=n)


@dataclass(frozen=True)
class InterpolatorWeights:
    """LMMSE weights for every (data slot, antenna) pair.

    ``coefficients[l - n_t, t, tau + T]`` multiplies the pilot received in
    period ``j - tau`` from antenna ``t`` when estimating slot ``l`` of
    period ``j``. The same weights serve every receive antenna.
    """

    schedule: PilotSchedule
    snr: float
    coefficients: np.ndarray
    mse: np.ndarray
    residual: float

    def for_receive_antenna(self, r: int) -> np.ndarray:
        check_int(r, "r", minimum=0)
        return self.coefficients


def _pilot_system(schedule: PilotSchedule, psd: PsdModel, snr: float):
    L, n_t, T = schedule.L, schedule.n_t, schedule.T
    tau = np.arange(-T, T)
    grid = (tau[None, :] - tau[:, None]) * L
    lags_needed = np.arange(-(2 * T) * L - L, (2 * T) * L + L + 1)
    table = autocovariance(psd, lags_needed)
    origin = -lags_needed[0]

    def R(lag):
        return table[np.asarray(lag) + origin]

    cov = (snr / n_t) * R(grid) + np.eye(2 * T)
    cross = {}
    for ell in schedule.data_offsets:
        for t in range(1, n_t + 1):
            cross[ell, t] = np.sqrt(snr / n_t) * R(tau * L + ell - t + 1)
    return cov, cross


def solve_weights(schedule: PilotSchedule, psd: PsdModel, snr: float) -> InterpolatorWeights:
    """Solve the normal equations for each (data slot, antenna) pair.

    The pilot observation covariance has entries
    ``(snr/n_t) R(dk) + 1{dk = 0}``; the cross-covariance with the fading at
    slot ``l`` uses lags ``tau L + l - t + 1``. A Cholesky factorization
    is shared across all pairs.

    Returns
    -------
    InterpolatorWeights
        Weights plus the predicted mean-squared error ``1 - c^H A^{-1} c``.
    """
    snr = check_snr(snr)
    cov, cross = _pilot_system(schedule, psd, snr)
    # E[(H - w^T y) y^*] = 0 gives conj(A) w = c.
    system = np.conj(cov)
    factor = scipy.linalg.cho_factor(system, lower=True)
    n_slots, n_t, width = schedule.data_per_period, schedule.n_t, 2 * schedule.T
    coef = np.empty((n_slots, n_t, width), dtype=np.complex128)
    mse = np.empty((n_slots, n_t))
    worst = 0.0
    for (ell, t), c in cross.items():
        w = scipy.linalg.cho_solve(factor, c.astype(np.complex128))
        scale = max(np.linalg.norm(c), 1e-300)
        worst = max(worst, np.linalg.norm(system @ w - c) / scale)
        coef[ell - schedule.n_t, t - 1] = w
        mse[ell - schedule.n_t, t - 1] = 1.0 - np.real(w @ np.conj(c))
    assert worst <= 1e-10, f"normal-equation residual {worst:.2e}"
    return InterpolatorWeights(schedule=schedule, snr=snr, coefficients=coef,
                               mse=np.clip(mse, 0.0, 1.0), residual=worst)


def estimate_path(weights: InterpolatorWeights, schedule: PilotSchedule, observations):
    """Interpolate the fading at every data slot from received pilots.

    Parameters
    ----------
    weights : InterpolatorWeights
    schedule : PilotSchedule
    observations : array_like, shape (..., n_r, n')
        Received signal over the whole frame. Only pilot positions are read.

    Returns
    -------
    ndarray, shape (..., n_r, n_t, n)
        Estimates ordered by codeword symbol.
    """
    y = check_complex_array(observations, "observations")
    if y.ndim < 2:
        raise ValueError("observations must have shape (..., n_r, n')")
    if y.shape[-1] < schedule.frame_length:
        raise ValueError(
            f"observations span {y.shape[-1]} channel uses; the window needs "
            f"{schedule.frame_length}")
    idx = schedule.window_indices
    w = weights.coefficients[schedule.symbol_offsets - schedule.n_t]
    gathered = y[..., idx]
    return np.einsum("...ritk,itk->...rti", gathered, w)


@dataclass(frozen=True)
class EmpiricalErrorStats:
    """Monte Carlo statistics of the interpolation error per (slot, antenna).

    Arrays indexed ``[l - n_t, t]`` hold the error power, the correlation
    ``E[H_hat conj(E)]`` and their standard errors. ``block_mse`` adds a
    leading axis over data periods to expose cyclo-stationarity.
    """

    mse: np.ndarray
    mse_se: np.ndarray
    corr: np.ndarray
    corr_se: np.ndarray
    block_mse: np.ndarray
    block_mse_se: np.ndarray
    frames: int


def _mean_and_se(per_frame: np.ndarray):
    count = per_frame.shape[0]
    mean = per_frame.mean(axis=0)
    if count < 2:
        return mean, np.full(mean.shape, np.nan)
    spread = per_frame.std(axis=0, ddof=1) if np.isrealobj(per_frame) else \
        np.sqrt(per_frame.real.var(axis=0, ddof=1) + per_frame.imag.var(axis=0, ddof=1))
    return mean, spread / np.sqrt(count)


def empirical_error_stats(estimates, truth, schedule: PilotSchedule) -> EmpiricalErrorStats:
    """Measure error power and estimate/error correlation from samples.

    Parameters
    ----------
    estimates, truth : array_like, shape (frames, n_r, n_t, n) or (n_r, n_t, n)
        Estimated and actual fading at the data slots, in codeword order.
    schedule : PilotSchedule

    Notes
    -----
    Frames are the independent units: each frame is first averaged over
    receive antennas and periods, and standard errors come from the spread
    across frames.
    """
    est = check_complex_array(estimates, "estimates")
    act = check_complex_array(truth, "truth")
    if est.shape != act.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {act.shape}")
    if est.ndim == 3:
        est, act = est[None], act[None]
    if est.ndim != 4 or est.shape[-1] != schedule.n or est.shape[2] != schedule.n_t:
        raise ValueError(
            f"expected (frames, n_r, {schedule.n_t}, {schedule.n}), got {est.shape}")
    err = act - est
    frames, n_r = est.shape[0], est.shape[1]
    blocks, slots = schedule.n_blocks, schedule.data_per_period
    shape = (frames, n_r, schedule.n_t, blocks, slots)
    power = (np.abs(err) ** 2).reshape(shape)
    cross = (est * np.conj(err)).reshape(shape)
    # -> (frames, blocks, slots, n_t) averaged over r
    power_fb = power.mean(axis=1).transpose(0, 2, 3, 1)
    mse, mse_se = _mean_and_se(power_fb.mean(axis=1))
    corr, corr_se = _mean_and_se(cross.mean(axis=(1, 3)).transpose(0, 2, 1))
    block_mse, block_se = _mean_and_se(power_fb)
    return EmpiricalErrorStats(mse=mse, mse_se=mse_se, corr=corr, corr_se=corr_se,
                               block_mse=block_mse, block_mse_se=block_se, frames=frames)


@dataclass(frozen=True)
class EstimationProfile:
    """Error variances per (data slot, antenna) used by the rate bounds.

    Attributes
    ----------
    L, n_t : int
    T : int or None
        Window half-length; ``None`` marks the unlimited-window limit.
    snr : float
    variances : ndarray, shape (L - n_t, n_t)
        Analytic variances at this ``T``, indexed ``[l - n_t, t - 1]``.
    limit : ndarray or None
        Unlimited-window variances for the same indices.
    empirical, empirical_se : ndarray or None
        Monte Carlo counterparts when measured.
    """

    L: int
    n_t: int
    T: int | None
    snr: float
    variances: np.ndarray
    limit: np.ndarray | None = None
    empirical: np.ndarray | None = None
    empirical_se: np.ndarray | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        expected = (self.L - self.n_t, self.n_t)
        if np.shape(self.variances) != expected:
            raise ValueError(f"variances must have shape {expected}")

    @property
    def worst(self) -> float:
        """Largest analytic error variance over all slots and antennas."""
        return float(np.max(self.variances))

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(self.n_t, self.L)

    def with_empirical(self, stats: EmpiricalErrorStats) -> EstimationProfile:
        return replace(self, empirical=stats.mse, empirical_se=stats.mse_se)

    def rows(self):
        """CSV rows ``(ell, t, T, snr, analytic, empirical, se)``."""
        T = "inf" if self.T is None else self.T
        for i, ell in enumerate(self.offsets):
            for t in range(self.n_t):
                emp = "" if self.empirical is None else repr(float(self.empirical[i, t]))
                se = "" if self.empirical_se is None else repr(float(self.empirical_se[i, t]))
                yield [int(ell), t + 1, T, repr(self.snr),
                       repr(float(self.variances[i, t])), emp, se]

    def write_csv(self, file) -> None:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(["ell", "t", "T", "snr", "analytic_eps2", "empirical_eps2", "se"])
        writer.writerows(self.rows())


def limit_variances(psd: PsdModel, L: int, n_t: int, snr: float) -> np.ndarray:
    """Unlimited-window error variances, shape ``(L - n_t, n_t)``."""
    return np.array([[error_variance_general(psd, L, n_t, ell, t, snr)
                      for t in range(1, n_t + 1)] for ell in range(n_t, L)])


def analytic_profile(schedule: PilotSchedule, psd: PsdModel, snr: float,
                     with_limit: bool = True) -> EstimationProfile:
    """Finite-window variances from the weights solve, plus their limits."""
    weights = solve_weights(schedule, psd, snr)
    limit = limit_variances(psd, schedule.L, schedule.n_t, snr) if with_limit else None
    return EstimationProfile(L=schedule.L, n_t=schedule.n_t, T=schedule.T, snr=snr,
                             variances=weights.mse, limit=limit)


def limit_profile(psd: PsdModel, L: int, n_t: int, snr: float) -> EstimationProfile:
    """Profile for an unlimited window (``T`` is ``None``)."""
    values = limit_variances(psd, L, n_t, snr)
    return EstimationProfile(L=L, n_t=n_t, T=None, snr=snr, variances=values, limit=values)


class PilotInterpolator(BaseEstimator):
    """Scikit-learn style wrapper around the LMMSE pilot interpolator.

    ``fit`` needs no training data: the weights follow from the known
    spectrum and SNR. ``predict`` maps received frames to fading estimates.

    Parameters
    ----------
    psd : PsdModel
    L, n_t, T, n : int
        Frame layout, see :class:`PilotSchedule`.
    snr : float
        Linear SNR of the pilot observations.

    Attributes
    ----------
    schedule_ : PilotSchedule
    weights_ : InterpolatorWeights
    profile_ : EstimationProfile
    """

    def __init__(self, psd=None, L=4, n_t=1, T=16, n=3, snr=1.0):
        self.psd = psd
        self.L = L
        self.n_t = n_t
        self.T = T
        self.n = n
        self.snr = snr

    def fit(self, X=None, y=None):
        if not isinstance(self.psd, PsdModel):
            raise TypeError("psd must be a PsdModel")
        self.schedule_ = build_schedule(self.L, self.n_t, self.T, self.n)
        self.weights_ = solve_weights(self.schedule_, self.psd, self.snr)
        self.profile_ = EstimationProfile(
            L=self.L, n_t=self.n_t, T=self.T, snr=float(self.snr),
            variances=self.weights_.mse)
        return self

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError("call fit before predict")

    def predict(self, Y):
        """Estimates of shape ``(..., n_r, n_t, n)`` from frames ``(..., n_r, n')``."""
        self._check_fitted()
        return estimate_path(self.weights_, self.schedule_, Y)

    def transform(self, Y):
        return self.predict(Y)

    def score(self, Y, H):
        """Negative mean squared error against true data-slot fading ``H``."""
        est = self.predict(Y)
        truth = check_complex_array(H, "H")
        if truth.shape != est.shape:
            raise ValueError(f"shape mismatch {truth.shape} vs {est.shape}")
        return -float(np.mean(np.abs(truth - est) ** 2))
