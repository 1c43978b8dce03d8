"""Random codebooks, framed transmission and nearest-neighbor decoding.

Messages are indexed from zero. Codewords are stored as ``(n_t, n)`` arrays
whose columns are the channel input vectors of the data slots in time order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.integrate
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import check_complex_array, check_int, check_snr, linear_to_db
from .estimator import PilotSchedule, solve_weights, estimate_path
from .fading import FadingPath, complex_normal, synthesize
from .spectrum import PsdModel

LAWS = ("gaussian", "truncated_gaussian")


def truncated_mass(n_t: int = 1) -> float:
    """Probability that a standard complex Gaussian vector lies in the unit polydisc.

    Each component contributes the radial integral
    ``int_0^1 2 r exp(-r^2) dr`` of the standard complex Gaussian density.
    The truncated law's density is bounded by ``K / pi^n_t exp(-|x|^2)``
    with ``K`` the reciprocal of this mass.
    """
    n_t = check_int(n_t, "n_t", minimum=1)
    radial, _ = scipy.integrate.quad(lambda r: 2.0 * r * np.exp(-r * r), 0.0, 1.0,
                                     epsabs=1e-14, epsrel=1e-14)
    return radial**n_t


def truncated_normalizer(n_t: int = 1) -> float:
    """Density bound constant ``K = 1 / truncated_mass(n_t)``."""
    return 1.0 / truncated_mass(n_t)


@dataclass(frozen=True)
class Codebook:
    """Random codebook with ``symbols[m]`` the ``(n_t, n)`` codeword of message ``m``."""

    symbols: np.ndarray
    law: str
    seed: int

    @property
    def M(self) -> int:
        return self.symbols.shape[0]

    @property
    def n_t(self) -> int:
        return self.symbols.shape[1]

    @property
    def n(self) -> int:
        return self.symbols.shape[2]

    @property
    def rate(self) -> float:
        """Nats per data symbol."""
        return math.log(self.M) / self.n

    @property
    def density_bound(self) -> float:
        """Constant ``K`` bounding the input density relative to the Gaussian."""
        return 1.0 if self.law == "gaussian" else truncated_normalizer(self.n_t)


def _truncated_draw(rng: np.random.Generator, shape) -> np.ndarray:
    out = complex_normal(rng, shape).ravel()
    bad = np.flatnonzero(np.abs(out) > 1.0)
    while bad.size:
        out[bad] = complex_normal(rng, bad.size)
        bad = bad[np.abs(out[bad]) > 1.0]
    return out.reshape(shape)


def generate_codebook(M: int, n: int, n_t: int, law: str = "gaussian",
                      seed: int = 0) -> Codebook:
    """Draw ``M`` codewords of ``n`` i.i.d. ``n_t``-dimensional symbols.

    ``gaussian`` symbols have identity covariance. ``truncated_gaussian``
    rejects each component until its magnitude is at most one, leaving a
    standard Gaussian conditioned on the unit polydisc.
    """
    M = check_int(M, "M", minimum=1)
    n = check_int(n, "n", minimum=1)
    n_t = check_int(n_t, "n_t", minimum=1)
    if law not in LAWS:
        raise ValueError(f"law must be one of {LAWS}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    shape = (M, n_t, n)
    symbols = complex_normal(rng, shape) if law == "gaussian" else _truncated_draw(rng, shape)
    return Codebook(symbols=symbols, law=law, seed=int(seed))


def transmit_frame(codeword, schedule: PilotSchedule) -> np.ndarray:
    """Place pilots and one codeword into a frame of shape ``(..., n_t, n')``.

    Pilot slot ``l < n_t`` of every period carries the unit vector on antenna
    ``l``; data slots carry the codeword columns in order; all other slots
    are zero.
    """
    x = check_complex_array(codeword, "codeword")
    if x.shape[-2:] != (schedule.n_t, schedule.n):
        raise ValueError(
            f"codeword must end in shape ({schedule.n_t}, {schedule.n}), got {x.shape}")
    frame = np.zeros(x.shape[:-1] + (schedule.frame_length,), dtype=np.complex128)
    pilots = schedule.pilot_indices
    frame[..., pilots % schedule.L, pilots] = 1.0
    frame[..., schedule.data_indices] = x
    return frame


def channel_apply(frame, fading, snr: float, noise_seed: int | None = 0,
                  noise: bool = True) -> np.ndarray:
    """Pass a frame through the fading channel with additive Gaussian noise.

    Computes ``Y_k = sqrt(snr/n_t) H_k x_k + Z_k``.

    Parameters
    ----------
    frame : array_like, shape (..., n_t, n')
    fading : FadingPath or array_like, shape (..., n_r, n_t, n')
    snr : float
        Linear SNR; the ``1/n_t`` split across antennas is applied here.
    noise_seed : int
        Seed of the noise stream.
    noise : bool
        Set False for noiseless experiments.

    Returns
    -------
    ndarray, shape (..., n_r, n')
    """
    snr = check_snr(snr)
    h = fading.samples if isinstance(fading, FadingPath) else check_complex_array(fading, "fading")
    x = check_complex_array(frame, "frame")
    if h.shape[-1] != x.shape[-1] or h.shape[-2] != x.shape[-2]:
        raise ValueError(f"fading {h.shape} and frame {x.shape} are not aligned")
    n_t = x.shape[-2]
    y = math.sqrt(snr / n_t) * np.einsum("...rtk,...tk->...rk", h, x)
    if noise:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(noise_seed))))
        y = y + complex_normal(rng, y.shape)
    return y


@dataclass(frozen=True)
class DecodeResult:
    """Decoder output: chosen message, all metrics and whether the minimum tied."""

    message: int
    metrics: np.ndarray
    tie: bool


def slot_metrics(received, estimates, codebook: Codebook, schedule: PilotSchedule,
                 snr: float) -> np.ndarray:
    """Per-slot distances ``|Y_k - sqrt(snr/n_t) H_hat_k x_k(m)|^2``, shape ``(M, n)``."""
    y = check_complex_array(received, "received")
    h = check_complex_array(estimates, "estimates", ndim=3)
    if y.shape[-1] == schedule.frame_length:
        y = y[..., schedule.data_indices]
    if y.shape[-1] != schedule.n or h.shape[1:] != (codebook.n_t, schedule.n):
        raise ValueError("received, estimates and schedule are not aligned")
    scale = math.sqrt(check_snr(snr) / codebook.n_t)
    predicted = scale * np.einsum("rti,mti->mri", h, codebook.symbols)
    return (np.abs(y[None] - predicted) ** 2).sum(axis=1)


def _argmin_with_tie(metrics: np.ndarray):
    best = int(np.argmin(metrics))
    tie = int(np.count_nonzero(metrics == metrics[best])) > 1
    return best, tie


def nn_decode(received, estimates, codebook: Codebook, schedule: PilotSchedule,
              snr: float) -> DecodeResult:
    """Pick the codeword nearest to the received data after channel scaling.

    Parameters
    ----------
    received : array_like, shape (n_r, n') or (n_r, n)
        Full frame or just its data slots.
    estimates : array_like, shape (n_r, n_t, n)
        Fading estimates at the data slots.
    codebook : Codebook
    schedule : PilotSchedule
    snr : float

    Returns
    -------
    DecodeResult
        Ties go to the smallest message index and set ``tie``.
    """
    metrics = slot_metrics(received, estimates, codebook, schedule, snr).sum(axis=1)
    best, tie = _argmin_with_tie(metrics)
    return DecodeResult(message=best, metrics=metrics, tie=tie)


def _batch_decode(y_data, est, codebook, snr, chunk=256):
    scale = math.sqrt(snr / codebook.n_t)
    out = np.empty(y_data.shape[0], dtype=np.int64)
    for start in range(0, y_data.shape[0], chunk):
        stop = start + chunk
        pred = scale * np.einsum("frti,mti->fmri", est[start:stop], codebook.symbols)
        dist = (np.abs(y_data[start:stop, None] - pred) ** 2).sum(axis=(2, 3))
        out[start:stop] = np.argmin(dist, axis=1)
    return out


class NearestNeighborDecoder(BaseEstimator):
    """Estimator-style front end to :func:`nn_decode`.

    ``fit`` stores a codebook; ``predict`` decodes one frame or a batch.

    Parameters
    ----------
    schedule : PilotSchedule
    snr : float
    """

    def __init__(self, schedule=None, snr=1.0):
        self.schedule = schedule
        self.snr = snr

    def fit(self, codebook, y=None):
        if not isinstance(codebook, Codebook):
            raise TypeError("fit expects a Codebook")
        if not isinstance(self.schedule, PilotSchedule):
            raise TypeError("schedule must be a PilotSchedule")
        if codebook.n != self.schedule.n or codebook.n_t != self.schedule.n_t:
            raise ValueError("codebook does not match the schedule")
        self.codebook_ = codebook
        return self

    def predict(self, received, estimates):
        """Message indices for frames ``(..., n_r, n')`` and estimates ``(..., n_r, n_t, n)``."""
        if not hasattr(self, "codebook_"):
            raise NotFittedError("call fit with a codebook first")
        y = check_complex_array(received, "received")
        h = check_complex_array(estimates, "estimates")
        if h.ndim == 3:
            return nn_decode(y, h, self.codebook_, self.schedule, self.snr).message
        if y.shape[-1] == self.schedule.frame_length:
            y = y[..., self.schedule.data_indices]
        return _batch_decode(y, h, self.codebook_, check_snr(self.snr))


@dataclass(frozen=True)
class BlockErrorResult:
    snr_db: float
    n: int
    M: int
    frames: int
    block_errors: int

    @property
    def error_rate(self) -> float:
        return self.block_errors / self.frames

    @property
    def standard_error(self) -> float:
        p = self.error_rate
        return math.sqrt(p * (1.0 - p) / self.frames)

    def row(self):
        return [repr(self.snr_db), self.n, self.M, self.frames, self.block_errors,
                repr(self.standard_error)]


BLOCK_ERROR_HEADER = ["snr_db", "n", "M", "frames", "block_errors", "ber_se"]


def write_block_errors(results, file) -> None:
    writer = csv.writer(file, lineterminator="\n")
    writer.writerow(BLOCK_ERROR_HEADER)
    writer.writerows(r.row() for r in results)


def simulate_block_errors(psd: PsdModel, schedule: PilotSchedule, n_r: int, snr: float,
                          M: int, frames: int, law: str = "gaussian", seed: int = 0,
                          chunk: int = 1000) -> BlockErrorResult:
    """Monte Carlo block-error count with estimated fading and one fixed codebook.

    Every frame draws a uniform message, a fresh fading path and fresh
    noise, estimates the fading from the pilots and decodes.

    Parameters
    ----------
    psd : PsdModel
    schedule : PilotSchedule
    n_r : int
    snr : float
        Linear SNR.
    M : int
        Codebook size.
    frames : int
    law : {"gaussian", "truncated_gaussian"}
    seed : int
        Root seed; codebook, messages, fading and noise use separate children.
    chunk : int
        Frames simulated per batch.
    """
    n_r = check_int(n_r, "n_r", minimum=1)
    frames = check_int(frames, "frames", minimum=1)
    snr = check_snr(snr)
    book_seq, msg_seq, run_seq = np.random.SeedSequence(int(seed)).spawn(3)
    codebook = generate_codebook(M, schedule.n, schedule.n_t, law,
                                 seed=int(book_seq.generate_state(1, np.uint64)[0]))
    messages = np.random.Generator(np.random.Philox(msg_seq)).integers(0, M, frames)
    weights = solve_weights(schedule, psd, snr)
    errors = 0
    chunk_seeds = run_seq.generate_state(2 * ((frames + chunk - 1) // chunk), np.uint64)
    for c, start in enumerate(range(0, frames, chunk)):
        sent = messages[start:start + chunk]
        fade = synthesize(psd, schedule.frame_length, (n_r, schedule.n_t),
                          seed=int(chunk_seeds[2 * c]), n_frames=sent.size)
        x = transmit_frame(codebook.symbols[sent], schedule)
        y = channel_apply(x, fade, snr, noise_seed=int(chunk_seeds[2 * c + 1]))
        est = estimate_path(weights, schedule, y)
        decided = _batch_decode(y[..., schedule.data_indices], est, codebook, snr)
        errors += int(np.count_nonzero(decided != sent))
    return BlockErrorResult(snr_db=float(linear_to_db(snr)) if snr > 0 else -np.inf,
                            n=schedule.n, M=codebook.M, frames=frames, block_errors=errors)


__all__ = [
    "Codebook", "DecodeResult", "BlockErrorResult", "NearestNeighborDecoder",
    "generate_codebook", "transmit_frame", "channel_apply", "nn_decode", "slot_metrics",
    "simulate_block_errors", "truncated_mass", "truncated_normalizer", "write_block_errors",
]
