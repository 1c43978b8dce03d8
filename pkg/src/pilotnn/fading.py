"""Gaussian fading paths with a prescribed bandlimited spectrum.

Two synthesis routes are offered. Both build the path as a random
superposition of complex exponentials, so the covariance is non-negative
definite by construction and no eigenvalue clipping is ever needed.

``quadrature``
    Exponentials sit on the Gauss-Legendre nodes of the band. The ensemble
    autocovariance equals the quadrature value of ``R(m)`` for every lag,
    which makes it the reference choice for Monte Carlo over many short
    frames.
``fft``
    Exponentials sit on a uniform grid over a circle four or more times
    longer than the path and are summed with one inverse FFT. Long paths
    are cheap and time averages converge, at the price of a small
    wrap-around term ``sum_{q != 0} R(m + qM)`` in the covariance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from ._validation import check_int
from .spectrum import PsdModel

DUMP_MAGIC = b"PNNFADE1"
_HEADER = struct.Struct("<8sIIQQ")
assert _HEADER.size == 32

METHODS = ("auto", "quadrature", "fft")
# Above this length "auto" switches to the FFT route.
AUTO_FFT_LENGTH = 1024


def autocovariance(psd: PsdModel, lag):
    """Autocovariance ``R(m) = int exp(i 2 pi m lam) f_H(lam) dlam`` by quadrature.

    Parameters
    ----------
    psd : PsdModel
    lag : int or array_like of int

    Returns
    -------
    complex or ndarray of complex
    """
    lags = np.asarray(lag)
    if lags.dtype.kind not in "iu":
        raise TypeError("lag must be integer-valued")
    nodes, weights = psd.band_quadrature()
    amp = weights * psd.density(nodes)
    phase = np.exp(2j * np.pi * np.multiply.outer(lags.astype(float), nodes))
    out = phase @ amp
    return complex(out) if out.ndim == 0 else out


def stream_generators(seed: int, count: int) -> list[np.random.Generator]:
    """Independent counter-based generators, one per stream."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples with unit variance."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) * np.sqrt(0.5)


@dataclass(frozen=True)
class FadingPath:
    """Fading samples indexed as ``samples[..., r, t, k]``.

    A leading batch axis is present when several independent frames were
    drawn at once.
    """

    samples: np.ndarray
    seed: int
    psd: PsdModel | None = None
    method: str = "quadrature"
    dims: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.samples.shape[-3:-1]))

    @property
    def length(self) -> int:
        return self.samples.shape[-1]


def _fft_grid(psd: PsdModel, size: int):
    lam = np.fft.fftfreq(size)
    dens = psd.periodic_density(lam)
    # A band edge landing on the grid gets the mean of the one-sided limits.
    on_edge = np.isclose(np.abs(lam), psd.bandwidth, rtol=0.0, atol=1e-9 / size)
    dens = np.where(on_edge, 0.5 * dens, dens)
    return dens / size


def fft_circle_size(length: int, buffer: int = 4) -> int:
    return scipy.fft.next_fast_len(buffer * length)


def embedded_autocovariance(psd: PsdModel, length: int, lag, buffer: int = 4):
    """Exact covariance of paths drawn with ``method="fft"``."""
    size = fft_circle_size(length, buffer)
    spec = _fft_grid(psd, size)
    lam = np.fft.fftfreq(size)
    lags = np.asarray(lag, dtype=float)
    out = np.exp(2j * np.pi * np.multiply.outer(lags, lam)) @ spec
    return complex(out) if out.ndim == 0 else out


def _draw_quadrature(psd, length, rng, n_frames):
    nodes, weights = psd.band_quadrature()
    amp = np.sqrt(weights * psd.density(nodes))
    basis = np.exp(2j * np.pi * np.outer(nodes, np.arange(length)))
    coeff = complex_normal(rng, (n_frames, nodes.size)) * amp
    return coeff @ basis


def _draw_fft(psd, length, rng, n_frames, buffer):
    size = fft_circle_size(length, buffer)
    amp = np.sqrt(_fft_grid(psd, size))
    coeff = complex_normal(rng, (n_frames, size)) * amp
    return scipy.fft.ifft(coeff, axis=-1, norm="forward")[:, :length]


def synthesize(psd: PsdModel, length: int, dims=(1, 1), seed: int = 0,
               n_frames: int | None = None, method: str = "auto",
               buffer: int = 4) -> FadingPath:
    """Draw fading paths for every (receive, transmit) antenna pair.

    Parameters
    ----------
    psd : PsdModel
        Target spectrum; each path has unit variance.
    length : int
        Samples per path.
    dims : tuple of int
        ``(n_r, n_t)``.
    seed : int
        Root seed. Each antenna pair gets its own child stream, so adding
        frames or threads never changes the draws of other pairs.
    n_frames : int, optional
        Draw this many independent frames at once; adds a leading axis.
    method : {"auto", "quadrature", "fft"}
        ``auto`` uses quadrature up to 1024 samples and FFT beyond.
    buffer : int
        Circle length as a multiple of ``length`` for the FFT route.

    Returns
    -------
    FadingPath
        ``samples`` has shape ``(n_r, n_t, length)``, or
        ``(n_frames, n_r, n_t, length)`` when ``n_frames`` is given.
    """
    length = check_int(length, "length", minimum=1)
    n_r, n_t = (check_int(d, "dims", minimum=1) for d in dims)
    check_int(buffer, "buffer", minimum=4)
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if method == "auto":
        method = "quadrature" if length <= AUTO_FFT_LENGTH else "fft"
    batch = 1 if n_frames is None else check_int(n_frames, "n_frames", minimum=1)
    rngs = stream_generators(seed, n_r * n_t)
    out = np.empty((batch, n_r, n_t, length), dtype=np.complex128)
    for idx, rng in enumerate(rngs):
        r, t = divmod(idx, n_t)
        if method == "quadrature":
            out[:, r, t] = _draw_quadrature(psd, length, rng, batch)
        else:
            out[:, r, t] = _draw_fft(psd, length, rng, batch, buffer)
    if n_frames is None:
        out = out[0]
    return FadingPath(samples=out, seed=int(seed), psd=psd, method=method)


def dump_fading(path: FadingPath, file) -> None:
    """Write a single-frame path as a 32-byte header plus complex64 samples.

    The header is ``magic(8s) n_r(u32) n_t(u32) length(u64) seed(u64)``, all
    little-endian. Samples follow in ``(r, t, k)`` order as interleaved
    little-endian float32 real and imaginary parts.
    """
    if path.samples.ndim != 3:
        raise ValueError("dump expects a single frame of shape (n_r, n_t, length)")
    n_r, n_t, length = path.samples.shape
    header = _HEADER.pack(DUMP_MAGIC, n_r, n_t, length, path.seed & (2**64 - 1))
    body = np.ascontiguousarray(path.samples, dtype="<c8").tobytes()
    if hasattr(file, "write"):
        file.write(header + body)
    else:
        with open(file, "wb") as fh:
            fh.write(header + body)


def load_fading(file) -> FadingPath:
    """Read a file written by :func:`dump_fading`."""
    if hasattr(file, "read"):
        raw = file.read()
    else:
        with open(file, "rb") as fh:
            raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("file too short for header")
    magic, n_r, n_t, length, seed = _HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    expected = _HEADER.size + 8 * n_r * n_t * length
    if len(raw) != expected:
        raise ValueError(f"expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<c8", offset=_HEADER.size)
    samples = data.reshape(n_r, n_t, length).astype(np.complex128)
    return FadingPath(samples=samples, seed=int(seed))
