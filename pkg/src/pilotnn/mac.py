"""Two-user multiple-access extension: joint transmission versus TDMA.

In the multiple-access model every transmit antenna has its own SNR, so
``Y = sqrt(snr) (H1 x1 + H2 x2) + Z``. Stacking both users into one
transmitter with ``n_t = n_t1 + n_t2`` antennas gives the point-to-point
model at ``snr_p2p = snr * n_t``; the helpers here use that reduction for
channel estimation and keep the multiple-access scaling everywhere else.

Pre-log regions use exact rational arithmetic.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

import numpy as np

from ._validation import check_complex_array, check_int, check_snr
from .codec import Codebook, generate_codebook, transmit_frame
from .estimator import PilotSchedule, build_schedule, estimate_path, limit_variances, solve_weights
from .fading import complex_normal, synthesize
from .gmi import GmiEstimate, DEFAULT_MC, gram_eigenvalues, logdet_bound, standard_matrices
from .spectrum import PsdModel

JT_SUPERIOR = "JT_superior"
TDMA_SUPERIOR = "TDMA_superior"
INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class MacConfig:
    """Antenna counts, frame layout and SNR of the two-user channel.

    Parameters
    ----------
    n_t1, n_t2, n_r : int
    L, T, n : int
        Shared frame layout; ``L`` must exceed ``n_t1 + n_t2``.
    snr : float
        Linear SNR per transmit antenna.
    beta : float
        Time share of user 1 under TDMA.
    """

    n_t1: int
    n_t2: int
    n_r: int
    L: int
    T: int = 1
    n: int | None = None
    snr: float = 1.0
    beta: float = 0.5

    def __post_init__(self):
        for name in ("n_t1", "n_t2", "n_r"):
            check_int(getattr(self, name), name, minimum=1)
        check_int(self.L, "L", minimum=self.n_total + 1)
        check_int(self.T, "T", minimum=1)
        if self.n is None:
            object.__setattr__(self, "n", self.L - self.n_total)
        check_int(self.n, "n", minimum=1)
        if self.n % (self.L - self.n_total):
            raise ValueError(
                f"n={self.n} must be a multiple of L - n_t1 - n_t2 = {self.L - self.n_total}")
        check_snr(self.snr)
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    @property
    def n_total(self) -> int:
        return self.n_t1 + self.n_t2

    @property
    def p2p_snr(self) -> float:
        """SNR of the equivalent stacked point-to-point channel."""
        return self.snr * self.n_total

    def swapped(self) -> MacConfig:
        return MacConfig(self.n_t2, self.n_t1, self.n_r, self.L, self.T, self.n,
                         self.snr, 1.0 - self.beta)


@dataclass(frozen=True)
class MacSchedule:
    """Shared frame layout with user 1 pilots first in every period."""

    base: PilotSchedule
    n_t1: int
    n_t2: int

    def user_slots(self, user: int) -> np.ndarray:
        """In-period pilot slots owned by ``user`` (1 or 2)."""
        if user == 1:
            return np.arange(self.n_t1)
        if user == 2:
            return np.arange(self.n_t1, self.n_t1 + self.n_t2)
        raise ValueError("user must be 1 or 2")

    def pilot_owner(self, k: int) -> int:
        return 1 if self.base.pilot_antenna(k) < self.n_t1 else 2


def mac_schedule(config: MacConfig) -> MacSchedule:
    base = build_schedule(config.L, config.n_total, config.T, config.n)
    return MacSchedule(base=base, n_t1=config.n_t1, n_t2=config.n_t2)


def mac_frames(codeword1, codeword2, schedule: MacSchedule):
    """Per-user channel inputs ``(..., n_ts, n')`` for one codeword each."""
    stacked = np.concatenate([check_complex_array(codeword1, "codeword1"),
                              check_complex_array(codeword2, "codeword2")], axis=-2)
    frame = transmit_frame(stacked, schedule.base)
    return frame[..., :schedule.n_t1, :], frame[..., schedule.n_t1:, :]


def mac_channel_apply(frame1, frame2, fading1, fading2, snr: float, noise_seed: int = 0):
    """``Y_k = sqrt(snr) (H1_k x1_k + H2_k x2_k) + Z_k``."""
    snr = check_snr(snr)
    y = math.sqrt(snr) * (np.einsum("...rtk,...tk->...rk", fading1, frame1)
                          + np.einsum("...rtk,...tk->...rk", fading2, frame2))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(noise_seed))))
    return y + complex_normal(rng, y.shape)


def mac_estimate(received, schedule: MacSchedule, psd: PsdModel, snr: float):
    """Fading estimates ``(est1, est2)`` at the data slots from received pilots."""
    weights = solve_weights(schedule.base, psd, snr * schedule.base.n_t)
    est = estimate_path(weights, schedule.base, received)
    return est[..., :schedule.n_t1, :], est[..., schedule.n_t1:, :]


@dataclass(frozen=True)
class MacProfile:
    """Error variances ``[l - n_t1 - n_t2, g]`` over all pilot antennas ``g``."""

    config: MacConfig
    variances: np.ndarray
    T: int | None

    @property
    def worst(self) -> float:
        """Largest variance over both users, slots and antennas."""
        return float(np.max(self.variances))

    def user(self, user: int) -> np.ndarray:
        c = self.config
        return self.variances[:, :c.n_t1] if user == 1 else self.variances[:, c.n_t1:]


def mac_profile(psd: PsdModel, config: MacConfig, T: int | None = None) -> MacProfile:
    """Error variances for both users at the configured SNR.

    ``T=None`` uses the unlimited window and requires an unaliased ``L``.
    """
    if T is None:
        if config.L > psd.critical_period:
            raise ValueError(
                f"L={config.L} aliases the spectrum (limit {psd.critical_period})")
        values = limit_variances(psd, config.L, config.n_total, config.p2p_snr)
    else:
        sched = build_schedule(config.L, config.n_total, T, config.L - config.n_total)
        values = solve_weights(sched, psd, config.p2p_snr).mse
    return MacProfile(config=config, variances=values, T=T)


def _mac_theta(config: MacConfig, profile: MacProfile) -> float:
    return -1.0 / (config.n_r + config.n_r * config.n_total * config.snr * profile.worst)


def _mac_bound(config: MacConfig, profile: MacProfile, columns, mc: int, seed: int):
    mc = check_int(mc, "mc", minimum=2)
    snr = config.snr
    gain = snr / (config.n_r + config.n_r * config.n_total * snr * profile.worst)
    spectra = []
    for i, row in enumerate(profile.variances):
        g = standard_matrices(seed, i, mc, config.n_r, config.n_total)
        h = g * np.sqrt(1.0 - row)
        spectra.append(gram_eigenvalues(h[..., columns]))
    value, se = logdet_bound(spectra, gain, config.L)
    return GmiEstimate("mac", value, _mac_theta(config, profile), snr, config.L,
                       len(range(config.n_total)[columns]), config.n_r, profile.T, mc, se)


def mac_gmi_user1(config: MacConfig, profile: MacProfile, mc: int = DEFAULT_MC,
                  seed: int = 0) -> GmiEstimate:
    """Bound on user 1's rate when user 2's message is decoded correctly.

    ``(1/L) sum_l E[log det(I + snr H1 H1^H / (n_r + n_r (n_t1 + n_t2) snr eps2_max)) - 1]``
    """
    return _mac_bound(config, profile, slice(0, config.n_t1), mc, seed)


def mac_gmi_user2(config: MacConfig, profile: MacProfile, mc: int = DEFAULT_MC,
                  seed: int = 0) -> GmiEstimate:
    """User 2 counterpart of :func:`mac_gmi_user1`."""
    return _mac_bound(config, profile, slice(config.n_t1, config.n_total), mc, seed)


def mac_gmi_sum(config: MacConfig, profile: MacProfile, mc: int = DEFAULT_MC,
                seed: int = 0) -> GmiEstimate:
    """Sum-rate bound from the stacked estimate ``[H1, H2]``.

    Equals the point-to-point profile bound with ``n_t = n_t1 + n_t2`` at
    ``snr * (n_t1 + n_t2)`` when given the same seed.
    """
    return _mac_bound(config, profile, slice(0, config.n_total), mc, seed)


def mac_nn_decode(received, est1, est2, book1: Codebook, book2: Codebook,
                  schedule: MacSchedule, snr: float):
    """Jointly pick the message pair nearest to the received data.

    Returns
    -------
    (m1, m2, metrics)
        Zero-based indices and the ``(M1, M2)`` metric table. Ties go to
        the lexicographically smallest pair.
    """
    y = check_complex_array(received, "received")
    if y.shape[-1] == schedule.base.frame_length:
        y = y[..., schedule.base.data_indices]
    h1 = check_complex_array(est1, "est1", ndim=3)
    h2 = check_complex_array(est2, "est2", ndim=3)
    scale = math.sqrt(check_snr(snr))
    p1 = scale * np.einsum("rti,mti->mri", h1, book1.symbols)
    p2 = scale * np.einsum("rti,mti->mri", h2, book2.symbols)
    diff = y[None, None] - p1[:, None] - p2[None, :]
    metrics = (np.abs(diff) ** 2).sum(axis=(2, 3))
    m1, m2 = np.unravel_index(int(np.argmin(metrics)), metrics.shape)
    return int(m1), int(m2), metrics


def simulate_mac_errors(psd: PsdModel, config: MacConfig, M1: int, M2: int, frames: int,
                        seed: int = 0, swap_estimates: bool = False) -> int:
    """Count frames where the decoded pair differs from the sent pair.

    ``swap_estimates`` hands each user's estimate to the other user's slot in
    the metric, a deliberately mismatched decoder for comparison.
    """
    sched = mac_schedule(config)
    seeds = np.random.SeedSequence(int(seed)).generate_state(6, np.uint64)
    book1 = generate_codebook(M1, config.n, config.n_t1, seed=int(seeds[0]))
    book2 = generate_codebook(M2, config.n, config.n_t2, seed=int(seeds[1]))
    rng = np.random.Generator(np.random.Philox(int(seeds[2])))
    sent1, sent2 = rng.integers(0, M1, frames), rng.integers(0, M2, frames)
    length = sched.base.frame_length
    fade1 = synthesize(psd, length, (config.n_r, config.n_t1), int(seeds[3]), frames).samples
    fade2 = synthesize(psd, length, (config.n_r, config.n_t2), int(seeds[4]), frames).samples
    x1, x2 = mac_frames(book1.symbols[sent1], book2.symbols[sent2], sched)
    y = mac_channel_apply(x1, x2, fade1, fade2, config.snr, int(seeds[5]))
    e1, e2 = mac_estimate(y, sched, psd, config.snr)
    if swap_estimates:
        if config.n_t1 != config.n_t2:
            raise ValueError("swapping estimates needs n_t1 == n_t2")
        e1, e2 = e2, e1
    errors = 0
    for f in range(frames):
        m1, m2, _ = mac_nn_decode(y[f], e1[f], e2[f], book1, book2, sched, config.snr)
        errors += int(m1 != sent1[f] or m2 != sent2[f])
    return errors


# ---------------------------------------------------------------- regions


@dataclass(frozen=True)
class Constraint:
    """Half-plane ``a1 * P1 + a2 * P2 <= bound``."""

    a1: Fraction
    a2: Fraction
    bound: Fraction

    def holds(self, point) -> bool:
        return self.a1 * point[0] + self.a2 * point[1] <= self.bound


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def _vertices(constraints):
    planes = list(constraints) + [Constraint(Fraction(-1), Fraction(0), Fraction(0)),
                                  Constraint(Fraction(0), Fraction(-1), Fraction(0))]
    points = set()
    for c, d in combinations(planes, 2):
        det = c.a1 * d.a2 - c.a2 * d.a1
        if det == 0:
            continue
        p1 = (c.bound * d.a2 - c.a2 * d.bound) / det
        p2 = (c.a1 * d.bound - c.bound * d.a1) / det
        if all(h.holds((p1, p2)) for h in planes):
            points.add((p1, p2))
    if not points:
        return ()
    cx = sum(p[0] for p in points) / len(points)
    cy = sum(p[1] for p in points) / len(points)
    return tuple(sorted(points, key=lambda p: math.atan2(float(p[1] - cy), float(p[0] - cx))))


@dataclass(frozen=True)
class PreLogRegion:
    """Convex polygon in the non-negative quadrant cut by linear constraints."""

    constraints: tuple
    vertices: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", _vertices(self.constraints))

    def contains(self, point) -> bool:
        p = (_frac(point[0]), _frac(point[1]))
        return p[0] >= 0 and p[1] >= 0 and all(c.holds(p) for c in self.constraints)

    @property
    def max_sum(self) -> Fraction:
        return max(p[0] + p[1] for p in self.vertices)

    def write_vertices(self, file) -> None:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(["kind", "a1_or_p1", "a2_or_p2", "bound", "p1_float", "p2_float"])
        for p in self.vertices:
            writer.writerow(["vertex", str(p[0]), str(p[1]), "", repr(float(p[0])),
                             repr(float(p[1]))])
        for c in self.constraints:
            writer.writerow(["constraint", str(c.a1), str(c.a2), str(c.bound), "", ""])


def _pilot_factor(n_pilots: int, L_star) -> Fraction:
    return 1 - Fraction(n_pilots) / _frac(L_star)


def coherent_region(n_t1: int, n_t2: int, n_r: int, scale=1) -> PreLogRegion:
    """Region with known fading, optionally scaled by a common factor."""
    s = _frac(scale)
    return PreLogRegion((
        Constraint(Fraction(1), Fraction(0), min(n_r, n_t1) * s),
        Constraint(Fraction(0), Fraction(1), min(n_r, n_t2) * s),
        Constraint(Fraction(1), Fraction(1), min(n_r, n_t1 + n_t2) * s),
    ))


def jt_region(n_t1: int, n_t2: int, n_r: int, L_star) -> PreLogRegion:
    """Pre-log region of joint transmission with nearest-neighbor decoding.

    Each single-user and sum constraint of the coherent region is scaled by
    ``1 - (n_t1 + n_t2)/L_star``.
    """
    for name, v in (("n_t1", n_t1), ("n_t2", n_t2), ("n_r", n_r)):
        check_int(v, name, minimum=1)
    if _frac(L_star) < n_t1 + n_t2:
        raise ValueError("L_star must be at least n_t1 + n_t2")
    return coherent_region(n_t1, n_t2, n_r, _pilot_factor(n_t1 + n_t2, L_star))


def tdma_legs(n_t1: int, n_t2: int, n_r: int, L_star):
    """Single-user pre-logs ``A`` and ``B`` reached with the whole time axis."""
    a = min(n_r, n_t1) * _pilot_factor(n_t1, L_star)
    b = min(n_r, n_t2) * _pilot_factor(n_t2, L_star)
    return a, b


def tdma_point(n_t1: int, n_t2: int, n_r: int, L_star, beta) -> tuple:
    a, b = tdma_legs(n_t1, n_t2, n_r, L_star)
    beta = _frac(beta)
    return beta * a, (1 - beta) * b


def tdma_region(n_t1: int, n_t2: int, n_r: int, L_star) -> PreLogRegion:
    """Triangle of time-shared pre-logs with legs ``A`` and ``B``."""
    if _frac(L_star) <= max(n_t1, n_t2):
        raise ValueError("L_star must exceed max(n_t1, n_t2)")
    a, b = tdma_legs(n_t1, n_t2, n_r, L_star)
    return PreLogRegion((Constraint(b, a, a * b),))


def coherent_tdma_region(n_t1: int, n_t2: int, n_r: int) -> PreLogRegion:
    """Time sharing between the two users with known fading."""
    a, b = Fraction(min(n_r, n_t1)), Fraction(min(n_r, n_t2))
    return PreLogRegion((Constraint(b, a, a * b),))


def crossover_thresholds(n_t1: int, n_t2: int, n_r: int):
    """Pilot-period thresholds above which joint transmission wins, below which TDMA wins.

    Returns
    -------
    (jt, tdma) : Fraction or float
        ``math.inf`` where the denominator vanishes.
    """
    for name, v in (("n_t1", n_t1), ("n_t2", n_t2), ("n_r", n_r)):
        check_int(v, name, minimum=1)
    total = n_t1 + n_t2
    m = min(n_r, total)
    jt_den = m - min(n_r, max(n_t1, n_t2))
    jt = math.inf if jt_den == 0 else Fraction(m * total, jt_den)
    tdma_den = m - min(n_r, n_t1, n_t2)
    numer = m * total - min(n_t1 * n_r, n_t1**2, n_t2 * n_r, n_t2**2)
    tdma = math.inf if tdma_den == 0 else Fraction(numer, tdma_den)
    return jt, tdma


def scheme_verdict(n_t1: int, n_t2: int, n_r: int, L_star) -> str:
    """Compare joint transmission and TDMA sum pre-logs at ``L_star``."""
    jt, tdma = crossover_thresholds(n_t1, n_t2, n_r)
    L_star = _frac(L_star)
    if L_star > jt:
        return JT_SUPERIOR
    if L_star < tdma:
        return TDMA_SUPERIOR
    return INDETERMINATE


def _threshold_text(x) -> str:
    return "inf" if x == math.inf else str(x)


def verdict_record(n_t1: int, n_t2: int, n_r: int, L_star) -> dict:
    jt, tdma = crossover_thresholds(n_t1, n_t2, n_r)
    return {
        "n_t1": n_t1, "n_t2": n_t2, "n_r": n_r, "L_star": str(_frac(L_star)),
        "jt_threshold": _threshold_text(jt), "tdma_threshold": _threshold_text(tdma),
        "verdict": scheme_verdict(n_t1, n_t2, n_r, L_star),
    }


def write_verdict(record: dict, file) -> None:
    json.dump(record, file, indent=2, sort_keys=True)
    file.write("\n")
