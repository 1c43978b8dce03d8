"""Lower bounds on the generalized mutual information of the pilot scheme.

All rates are in nats per channel use. Expectations over estimated channel
matrices are Monte Carlo averages with reported standard errors; the same
seed gives the same draws at every SNR, so curves over an SNR grid use
common random numbers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize
import scipy.special

from ._validation import check_int, check_snr, linear_to_db
from .estimator import EstimationProfile
from .fading import complex_normal
from .spectrum import PsdModel, error_variance_no_alias

DEFAULT_MC = 20_000
VARIANTS = ("finite_window", "asymptotic", "digamma", "general_input")


@dataclass(frozen=True)
class GmiEstimate:
    """A rate lower bound with the parameter used to obtain it.

    Attributes
    ----------
    variant : str
        One of ``finite_window``, ``asymptotic``, ``digamma``, ``general_input``.
    value : float
        Nats per channel use.
    theta : float
        The negative exponent parameter of the bound.
    snr : float
        Linear SNR.
    L, n_t, n_r : int
    T : int or None
        Window half-length, ``None`` for the unlimited window.
    mc_samples : int
    standard_error : float
        Zero for closed forms.
    """

    variant: str
    value: float
    theta: float
    snr: float
    L: int
    n_t: int
    n_r: int
    T: int | None
    mc_samples: int
    standard_error: float

    @property
    def value_bits(self) -> float:
        return self.value / math.log(2.0)

    def row(self):
        snr_db = float(linear_to_db(self.snr)) if self.snr > 0 else -math.inf
        T = "inf" if self.T is None else self.T
        return [self.variant, repr(snr_db), self.L, self.n_t, self.n_r, T,
                repr(self.value), repr(self.standard_error), repr(self.theta),
                repr(self.value_bits)]


GMI_HEADER = ["variant", "snr_db", "L", "n_t", "n_r", "T", "value_nats", "se", "theta",
              "value_bits"]


def write_gmi_csv(estimates, file) -> None:
    writer = csv.writer(file, lineterminator="\n")
    writer.writerow(GMI_HEADER)
    writer.writerows(e.row() for e in estimates)


def f_snr(profile: EstimationProfile, snr: float, n_r: int) -> float:
    """Average received power per data slot including estimation error.

    ``n_r + snr / ((L - n_t) n_t) * sum_l sum_{r,t} eps2_l(t)``. The error
    variances do not depend on the receive antenna, so the inner sum is
    ``n_r`` times the sum over transmit antennas.
    """
    snr = check_snr(snr)
    n_r = check_int(n_r, "n_r", minimum=1)
    total = n_r * float(np.sum(profile.variances))
    return n_r + snr * total / ((profile.L - profile.n_t) * profile.n_t)


def theta_choice(profile: EstimationProfile, snr: float, n_r: int) -> float:
    """The explicit choice ``-1 / (n_r + snr n_r eps2_max)``."""
    snr = check_snr(snr)
    n_r = check_int(n_r, "n_r", minimum=1)
    return -1.0 / (n_r + snr * n_r * profile.worst)


def _stream(seed: int, index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=(index,))
    return np.random.Generator(np.random.Philox(seq))


def standard_matrices(seed: int, index: int, mc: int, n_r: int, n_t: int) -> np.ndarray:
    """Standard complex Gaussian matrices ``(mc, n_r, n_t)`` from stream ``index``."""
    return complex_normal(_stream(seed, index), (mc, n_r, n_t))


def gram_eigenvalues(matrices: np.ndarray) -> np.ndarray:
    """Eigenvalues of ``A A^H`` for a stack of matrices, via the smaller Gram."""
    if matrices.shape[-1] <= matrices.shape[-2]:
        gram = np.conj(np.swapaxes(matrices, -1, -2)) @ matrices
    else:
        gram = matrices @ np.conj(np.swapaxes(matrices, -1, -2))
    return np.clip(np.linalg.eigvalsh(gram), 0.0, None)


def estimated_channel_spectra(variances: np.ndarray, n_r: int, mc: int, seed: int):
    """Gram eigenvalues of simulated channel estimates, one stack per data slot.

    Entry ``(r, t)`` of the estimate at slot ``l`` is complex Gaussian with
    variance ``1 - variances[l, t]``.

    Returns
    -------
    list of ndarray
        Item ``l`` has shape ``(mc, min(n_r, n_t))``.
    """
    out = []
    for i, row in enumerate(np.asarray(variances, dtype=float)):
        g = standard_matrices(seed, i, mc, n_r, row.size)
        out.append(gram_eigenvalues(g * np.sqrt(1.0 - row)))
    return out


def _mean_se(samples: np.ndarray):
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else 0.0
    return mean, se


def logdet_bound(spectra, gain: float, L: int):
    """``(1/L) sum_l (E log det(I + gain H H^H) - 1)`` and its standard error."""
    total, var = 0.0, 0.0
    for eig in spectra:
        mean, se = _mean_se(np.log1p(gain * eig).sum(axis=-1))
        total += mean - 1.0
        var += se * se
    return total / L, math.sqrt(var) / L


def _refined(spectra, profile, snr, n_r, theta0, L):
    """Maximize the bound before the final relaxation over ``theta < 0``."""
    n_t = profile.n_t
    power = n_r + (snr / n_t) * n_r * profile.variances.sum(axis=1)

    def objective(theta):
        acc = 0.0
        for eig, p in zip(spectra, power):
            acc += theta * p + np.mean(np.log1p(-theta * (snr / n_t) * eig).sum(axis=-1))
        return acc / L

    if snr == 0.0:
        return objective(theta0), theta0
    res = scipy.optimize.minimize_scalar(lambda th: -objective(th), method="bounded",
                                         bounds=(16.0 * theta0, theta0 / 16.0),
                                         options={"xatol": 1e-10 * abs(theta0)})
    base = objective(theta0)
    if -res.fun > base:
        return -res.fun, float(res.x)
    return base, theta0


def profile_bound(profile: EstimationProfile, snr: float, n_r: int,
                  mc_samples: int = DEFAULT_MC, seed: int = 0,
                  refine_theta: bool = False) -> GmiEstimate:
    """Profile-driven bound for any ``n_r``; see :func:`gmi_lb_finite_T`."""
    snr = check_snr(snr)
    n_r = check_int(n_r, "n_r", minimum=1)
    mc = check_int(mc_samples, "mc_samples", minimum=2)
    L, n_t = profile.L, profile.n_t
    theta = theta_choice(profile, snr, n_r)
    gain = snr / (n_t * n_r * (1.0 + snr * profile.worst))
    spectra = estimated_channel_spectra(profile.variances, n_r, mc, seed)
    value, se = logdet_bound(spectra, gain, L)
    if refine_theta:
        refined, theta_r = _refined(spectra, profile, snr, n_r, theta, L)
        if refined > value:
            value, theta = refined, theta_r
    return GmiEstimate("finite_window", value, theta, snr, L, n_t, n_r, profile.T, mc, se)


def gmi_lb_finite_T(profile: EstimationProfile, snr: float, n_r: int,
                    mc_samples: int = DEFAULT_MC, seed: int = 0,
                    refine_theta: bool = False) -> GmiEstimate:
    """Lower bound driven by the error variances of an estimation profile.

    Averages ``log det(I + snr/(n_t n_r (1 + snr eps2_max)) H H^H) - 1``
    over data slots, with the estimate ``H`` having independent entries of
    variance ``1 - eps2_l(t)``, and divides by ``L``.

    Parameters
    ----------
    profile : EstimationProfile
        Finite-window or unlimited-window variances.
    snr : float
    n_r : int
        Must equal ``profile.n_t``.
    mc_samples : int
        Matrices per data slot.
    seed : int
    refine_theta : bool
        Also maximize the bound numerically over ``theta < 0``; the
        result is never below the explicit-``theta`` value.
    """
    if n_r != profile.n_t:
        raise ValueError("this bound requires n_t == n_r")
    return profile_bound(profile, snr, n_r, mc_samples, seed, refine_theta)


def wishart_logdet_samples(n: int, mc: int, seed: int) -> np.ndarray:
    """Samples of ``log det(G G^H)`` for ``n x n`` standard complex Gaussian ``G``."""
    g = standard_matrices(seed, 0, mc, n, n)
    sign, logdet = np.linalg.slogdet(g @ np.conj(np.swapaxes(g, -1, -2)))
    return logdet


def digamma_closed_form(n_t: int, eps2: float) -> float:
    """``n_t ln(1 - eps2) + sum_{b=0}^{n_t-1} psi(n_t - b) - 1``.

    The sum is the mean log-determinant of an ``n_t x n_t`` complex Wishart
    matrix with identity scale.
    """
    n_t = check_int(n_t, "n_t", minimum=1)
    eps2 = float(eps2)
    if not 0.0 <= eps2 < 1.0:
        raise ValueError(f"eps2 must lie in [0, 1), got {eps2}")
    psi = scipy.special.digamma(np.arange(1, n_t + 1)).sum()
    return n_t * math.log1p(-eps2) + float(psi) - 1.0


def _asymptotic_parts(psd, L, n_t, snr, mc, seed):
    L = check_int(L, "L", minimum=2)
    n_t = check_int(n_t, "n_t", minimum=1)
    if L <= n_t:
        raise ValueError("need L > n_t")
    snr = check_snr(snr)
    if snr == 0.0:
        raise ValueError("the high-SNR form needs snr > 0")
    mc = check_int(mc, "mc_samples", minimum=2)
    eps2 = error_variance_no_alias(psd, L, n_t, snr)
    mean, se = _mean_se(wishart_logdet_samples(n_t, mc, seed))
    logdet = n_t * math.log1p(-eps2) + mean
    return L, n_t, snr, mc, eps2, logdet, se


def gmi_lb_asymptotic(psd: PsdModel, L: int, n_t: int, snr: float,
                      mc_samples: int = DEFAULT_MC, seed: int = 0) -> GmiEstimate:
    """Unlimited-window bound for ``n_t = n_r`` without aliasing.

    ``((L - n_t)/L) (n_t ln snr - n_t ln(n_t^2 + n_t^2 snr eps2) + E log det(Hb Hb^H) - 1)``
    where ``Hb`` has i.i.d. entries of variance ``1 - eps2``.

    Raises
    ------
    ValueError
        If ``L`` exceeds the aliasing limit of ``psd``.
    """
    L, n_t, snr, mc, eps2, logdet, se = _asymptotic_parts(psd, L, n_t, snr, mc_samples, seed)
    frac = (L - n_t) / L
    value = frac * (n_t * math.log(snr) - n_t * math.log(n_t**2 * (1.0 + snr * eps2))
                    + logdet - 1.0)
    theta = -1.0 / (n_t + snr * n_t * eps2)
    return GmiEstimate("asymptotic", value, theta, snr, L, n_t, n_t, None, mc, frac * se)


def gmi_lb_digamma(psd: PsdModel, L: int, n_t: int, snr: float) -> GmiEstimate:
    """:func:`gmi_lb_asymptotic` with the log-determinant in closed form."""
    L = check_int(L, "L", minimum=n_t + 1)
    snr = check_snr(snr)
    eps2 = error_variance_no_alias(psd, L, n_t, snr)
    frac = (L - n_t) / L
    value = frac * (n_t * math.log(snr) - n_t * math.log(n_t**2 * (1.0 + snr * eps2))
                    + digamma_closed_form(n_t, eps2))
    theta = -1.0 / (n_t + snr * n_t * eps2)
    return GmiEstimate("digamma", value, theta, snr, L, n_t, n_t, None, 0, 0.0)


def gmi_lb_general_input(psd: PsdModel, L: int, n_t: int, snr: float, K: float = 1.0,
                         E_norm_sq: float | None = None, mc_samples: int = DEFAULT_MC,
                         seed: int = 0) -> GmiEstimate:
    """Unlimited-window bound for inputs whose density is at most ``K`` times Gaussian.

    ``((L - n_t)/L) (n_t ln snr - n_t ln(n_t^2 + n_t^2 snr eps2 E|X|^2)
    + E log det(Hb Hb^H) - 1 - ln K)``.

    Parameters
    ----------
    K : float
        Density bound constant, ``K >= 1``.
    E_norm_sq : float, optional
        Mean squared norm of one input vector, at most ``n_t``. Defaults to
        one, which reproduces :func:`gmi_lb_asymptotic` when ``K = 1``.
    """
    K = float(K)
    if K < 1.0:
        raise ValueError("K must be at least 1")
    E_norm_sq = 1.0 if E_norm_sq is None else float(E_norm_sq)
    if not 0.0 < E_norm_sq <= n_t:
        raise ValueError(f"E_norm_sq must lie in (0, n_t], got {E_norm_sq}")
    L, n_t, snr, mc, eps2, logdet, se = _asymptotic_parts(psd, L, n_t, snr, mc_samples, seed)
    frac = (L - n_t) / L
    value = frac * (n_t * math.log(snr)
                    - n_t * math.log(n_t**2 * (1.0 + snr * eps2 * E_norm_sq))
                    + logdet - 1.0 - math.log(K))
    theta = -1.0 / (n_t + snr * n_t * eps2 * E_norm_sq)
    return GmiEstimate("general_input", value, theta, snr, L, n_t, n_t, None, mc, frac * se)


@dataclass(frozen=True)
class PreLogFit:
    """Least-squares fit of rate against ``ln snr``."""

    snr_db: np.ndarray
    values: np.ndarray
    slope: float
    intercept: float
    residual: float


def prelog_fit(snr_db, values) -> PreLogFit:
    """Fit ``value = slope * ln(snr) + intercept`` by least squares.

    Parameters
    ----------
    snr_db : array_like
        Strictly increasing grid with at least four points spanning 20 dB.
    values : array_like
        Rates in nats.
    """
    x_db = np.asarray(snr_db, dtype=float)
    y = np.asarray(values, dtype=float)
    if x_db.ndim != 1 or x_db.shape != y.shape:
        raise ValueError("snr_db and values must be 1-D and the same length")
    if x_db.size < 4:
        raise ValueError("need at least four grid points")
    if np.any(np.diff(x_db) <= 0):
        raise ValueError("snr grid must be strictly increasing")
    if x_db[-1] - x_db[0] < 20.0:
        raise ValueError("grid must span at least 20 dB")
    if not np.all(np.isfinite(y)):
        raise ValueError("values must be finite")
    x = x_db * (math.log(10.0) / 10.0)
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
    return PreLogFit(snr_db=x_db, values=y, slope=float(coef[0]),
                     intercept=float(coef[1]), residual=resid)
