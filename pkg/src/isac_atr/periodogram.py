"""Zero-padded delay-Doppler periodogram and classifier features.

The channel estimate is zero-padded to power-of-two dimensions and
transformed with a DFT over the symbol axis (Doppler) followed by an
IDFT over the subcarrier axis (delay):

    P[n, m] = (1 / (M'*N')) * sum_k ( sum_l H_pad[k, l] * e^{-j2pi*l*m/M'} ) * e^{+j2pi*k*n/N'}

A scatterer with delay tau and Doppler f_D peaks at delay bin
round(tau * delta_f * N') and Doppler bin round(f_D * T_s * M') mod M'.

Doppler bins are kept in natural DFT order internally; feature extraction,
flipping and rendering operate on a view with zero Doppler centered, which
is what the mirrored-velocity experiment flips.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SizingError
from .waveform import DEFAULT_MAX_ELEMENTS, ChannelMatrix, RadioConfig

LOG_FLOOR = 1e-12


def padded_dims(n: int, m: int, factor: int) -> tuple:
    """Transform sizes 2^(ceil(log2 N)+F) x 2^(ceil(log2 M)+F)."""
    if n < 1 or m < 1:
        raise ValueError(f"need N, M >= 1, got {n}, {m}")
    if factor < 0:
        raise ValueError(f"padding factor must be >= 0, got {factor}")
    n_prime = 1 << ((n - 1).bit_length() + factor)
    m_prime = 1 << ((m - 1).bit_length() + factor)
    return n_prime, m_prime


@dataclass
class Periodogram:
    """Complex delay-Doppler map: rows = delay bins, columns = Doppler bins."""

    data: np.ndarray
    padding_factor: int
    config: RadioConfig

    @property
    def n_prime(self) -> int:
        return self.data.shape[0]

    @property
    def m_prime(self) -> int:
        return self.data.shape[1]

    @property
    def delay_per_bin_s(self) -> float:
        return 1.0 / (self.n_prime * self.config.delta_f)

    @property
    def doppler_per_bin_hz(self) -> float:
        return 1.0 / (self.m_prime * self.config.T_s)


def compute_periodogram(
    h: ChannelMatrix, factor: int, max_elements: int = DEFAULT_MAX_ELEMENTS
) -> Periodogram:
    """Fast-transform evaluation of the padded delay-Doppler map."""
    n_prime, m_prime = padded_dims(h.config.N, h.config.M, factor)
    if n_prime * m_prime > max_elements:
        raise SizingError(
            f"{n_prime}x{m_prime} periodogram exceeds budget {max_elements}"
        )
    h_pad = np.zeros((n_prime, m_prime), dtype=np.complex128)
    h_pad[: h.config.N, : h.config.M] = h.data
    # fft along symbols is the Doppler sum; ifft along subcarriers carries
    # the +j delay exponent and a 1/N' that leaves 1/M' to apply.
    p = np.fft.ifft(np.fft.fft(h_pad, axis=1), axis=0) / m_prime
    return Periodogram(p, factor, h.config)


def periodogram_reference(h: ChannelMatrix, factor: int) -> np.ndarray:
    """Direct double-sum evaluation; O((N'M')^2), for verification only."""
    n_prime, m_prime = padded_dims(h.config.N, h.config.M, factor)
    h_pad = np.zeros((n_prime, m_prime), dtype=np.complex128)
    h_pad[: h.config.N, : h.config.M] = h.data
    l = np.arange(m_prime)
    m = np.arange(m_prime)
    doppler = np.exp(-2j * np.pi * np.outer(l, m) / m_prime)
    k = np.arange(n_prime)
    n = np.arange(n_prime)
    delay = np.exp(2j * np.pi * np.outer(n, k) / n_prime)
    return delay @ h_pad @ doppler / (m_prime * n_prime)


@dataclass
class FeatureTensor:
    """Real N' x M' x 2 stack fed to the detector.

    Channel 0 is the magnitude feature, channel 1 the phase feature, both
    on the Doppler-centered view (column M'/2 = zero velocity).
    """

    data: np.ndarray
    label: Optional[int] = None
    mode: str = "db_standard"
    mag_mean: float = 0.0
    mag_std: float = 1.0

    @property
    def n_prime(self) -> int:
        return self.data.shape[0]

    @property
    def m_prime(self) -> int:
        return self.data.shape[1]


def extract_features(p: Periodogram, raw: bool = False) -> FeatureTensor:
    """Magnitude/phase feature stack for the detector.

    Default mode converts magnitude to dB (10*log10(|P|^2 + 1e-12)),
    standardizes it per sample to zero mean / unit variance, and scales
    phase by 1/pi into [-1, 1].  Raw mode keeps plain |P| and the phase
    in [-pi, pi].
    """
    shifted = np.fft.fftshift(p.data, axes=1)
    mag = np.abs(shifted)
    phase = np.angle(shifted)
    if raw:
        data = np.stack([mag, phase], axis=-1).astype(np.float32)
        return FeatureTensor(data, mode="raw")
    db = 10.0 * np.log10(mag**2 + LOG_FLOOR)
    mean = float(db.mean())
    std = float(db.std())
    if std < 1e-8:
        norm = np.zeros_like(db)
        std = 0.0
    else:
        norm = (db - mean) / std
    data = np.stack([norm, phase / np.pi], axis=-1).astype(np.float32)
    return FeatureTensor(data, mode="db_standard", mag_mean=mean, mag_std=std)


def hflip(t: FeatureTensor) -> FeatureTensor:
    """Mirror the Doppler axis: range is untouched, velocities reverse."""
    return FeatureTensor(
        data=t.data[:, ::-1, :].copy(),
        label=t.label,
        mode=t.mode,
        mag_mean=t.mag_mean,
        mag_std=t.mag_std,
    )


def write_pgm(img01: np.ndarray, path) -> None:
    """Write a [0,1] float image as an 8-bit binary portable graymap."""
    h, w = img01.shape
    pix = np.clip(np.rint(img01 * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def render(p: Periodogram, path, dynamic_range_db: float = 60.0) -> None:
    """dB-magnitude image, delay down the rows, centered Doppler across."""
    mag = np.abs(np.fft.fftshift(p.data, axes=1))
    peak = mag.max()
    if peak == 0.0:
        write_pgm(np.zeros_like(mag), path)
        return
    db = 10.0 * np.log10(mag**2 + LOG_FLOOR)
    top = 10.0 * np.log10(peak**2 + LOG_FLOOR)
    img = (db - (top - dynamic_range_db)) / dynamic_range_db
    write_pgm(np.clip(img, 0.0, 1.0), path)
