"""OFDM sensing-channel synthesis for point-scatterer scenes.

The sensing observable is the per-subcarrier, per-symbol complex channel
gain H of one radio frame.  A scatterer at one-way range R moving with
radial velocity v (positive = receding) contributes

    H[k, l] = a * exp(j*phi) * exp(-j*2*pi*k*delta_f*tau) * exp(+j*2*pi*f_D*l*T_s)

with tau = 2R/c and f_D = 2*v*f_c/c.  Uplink symbols of the TDD pattern
carry no sensing signal and are zeroed by the mask, which is what creates
the Doppler artifacts the classifier has to live with.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PilotZeroError, SizingError

C_LIGHT = 299792458.0

# Guardrail for accidentally huge allocations (elements, not bytes).
DEFAULT_MAX_ELEMENTS = 1 << 26


@dataclass(frozen=True)
class TddPattern:
    """Downlink/uplink symbol schedule, repeating every `period_symbols`."""

    period_symbols: int
    dl_symbols: int

    def __post_init__(self):
        if not (0 < self.dl_symbols <= self.period_symbols):
            raise ConfigError(
                f"dl_symbols must be in (0, period_symbols], got "
                f"{self.dl_symbols}/{self.period_symbols}"
            )

    def dl_mask(self, m: int) -> np.ndarray:
        """Boolean mask over m symbols, True where the symbol is downlink."""
        if m % self.period_symbols != 0:
            raise ConfigError(
                f"symbol count {m} is not a multiple of the TDD period "
                f"{self.period_symbols}"
            )
        one_period = np.arange(self.period_symbols) < self.dl_symbols
        return np.tile(one_period, m // self.period_symbols)


@dataclass(frozen=True)
class RadioConfig:
    """Radio parameters governing all dimensions and axis scalings.

    f_c      carrier frequency [Hz]
    delta_f  subcarrier spacing [Hz]
    N        subcarrier count
    M        OFDM symbols per frame
    T_O      OFDM symbol duration [s]
    T_CP     cyclic-prefix duration [s]
    T_s      total symbol duration T_O + T_CP [s]
    """

    f_c: float
    delta_f: float
    N: int
    M: int
    T_O: float
    T_CP: float
    T_s: float
    tdd: TddPattern

    def __post_init__(self):
        if self.N < 1 or self.M < 1:
            raise ConfigError(f"need N, M >= 1, got N={self.N}, M={self.M}")
        if abs(self.T_s - (self.T_O + self.T_CP)) > 1e-12 * abs(self.T_s):
            raise ConfigError(
                f"T_s={self.T_s} != T_O + T_CP = {self.T_O + self.T_CP}"
            )
        self.tdd.dl_mask(self.M)  # raises if M is not a whole number of periods

    @property
    def bandwidth(self) -> float:
        return self.N * self.delta_f

    def dl_columns(self) -> np.ndarray:
        """Indices of downlink symbols within one frame."""
        return np.nonzero(self.tdd.dl_mask(self.M))[0]


def full_scale_preset() -> RadioConfig:
    """The mmWave production configuration (1584 x 1120, 27.4 GHz FR2)."""
    return RadioConfig(
        f_c=27.4e9,
        delta_f=120e3,
        N=1584,
        M=1120,
        T_O=8.33e-6,
        T_CP=0.59e-6,
        T_s=8.92e-6,
        tdd=TddPattern(period_symbols=140, dl_symbols=104),
    )


def desk_preset() -> RadioConfig:
    """Reduced 64 x 64 configuration for desk-scale experiments.

    Keeps the carrier, roughly the full bandwidth (64 x 3 MHz = 192 MHz)
    and the 10 ms frame duration (64 x 156.25 us), so indoor ranges and
    pedestrian Doppler land on sensible bins: 0.78 m and 0.55 m/s per bin
    at F=0.  T_s is decoupled from 1/delta_f; this is a scaled stand-in,
    not a valid OFDM numerology.
    """
    return RadioConfig(
        f_c=27.4e9,
        delta_f=3e6,
        N=64,
        M=64,
        T_O=150e-6,
        T_CP=6.25e-6,
        T_s=156.25e-6,
        tdd=TddPattern(period_symbols=8, dl_symbols=6),
    )


@dataclass(frozen=True)
class Scatterer:
    """Point reflector: one-way range [m], radial velocity [m/s]
    (positive = receding), linear gain magnitude, initial phase [rad]."""

    range_m: float
    velocity_mps: float
    amplitude: float
    phase_rad: float = 0.0

    def __post_init__(self):
        if self.range_m < 0:
            raise ConfigError(f"negative range {self.range_m}")
        if self.amplitude < 0:
            raise ConfigError(f"negative amplitude {self.amplitude}")

    def delay_s(self) -> float:
        return 2.0 * self.range_m / C_LIGHT

    def doppler_hz(self, f_c: float) -> float:
        return 2.0 * self.velocity_mps * f_c / C_LIGHT


@dataclass(frozen=True)
class Scene:
    """One labeled frame: scatterers, per-element SNR and the noise seed.

    An empty scatterer list is a valid 'no target' scene.  snr_db may be
    math.inf to disable noise.
    """

    class_id: int
    scatterers: tuple
    snr_db: float
    seed: int


@dataclass
class ChannelMatrix:
    """Complex N x M channel estimate (rows = subcarriers, cols = symbols)."""

    data: np.ndarray
    config: RadioConfig
    mask_applied: bool = False

    def __post_init__(self):
        if self.data.shape != (self.config.N, self.config.M):
            raise ConfigError(
                f"channel shape {self.data.shape} does not match config "
                f"({self.config.N}, {self.config.M})"
            )


def synthesize_channel(
    scene: Scene, config: RadioConfig, max_elements: int = DEFAULT_MAX_ELEMENTS
) -> ChannelMatrix:
    """Sum the point-scatterer responses into a noiseless, unmasked H."""
    if config.N * config.M > max_elements:
        raise SizingError(
            f"channel of {config.N}x{config.M} elements exceeds budget {max_elements}"
        )
    k = np.arange(config.N)[:, None]
    l = np.arange(config.M)[None, :]
    h = np.zeros((config.N, config.M), dtype=np.complex128)
    for s in scene.scatterers:
        gain = s.amplitude * np.exp(1j * s.phase_rad)
        delay_ramp = np.exp(-2j * np.pi * config.delta_f * s.delay_s() * k)
        doppler_ramp = np.exp(2j * np.pi * s.doppler_hz(config.f_c) * config.T_s * l)
        h += gain * (delay_ramp * doppler_ramp)
    return ChannelMatrix(h, config, mask_applied=False)


def apply_tdd_mask(h: ChannelMatrix) -> ChannelMatrix:
    """Zero the uplink symbols of every TDD period."""
    if h.mask_applied:
        raise ConfigError("TDD mask already applied")
    keep = h.config.tdd.dl_mask(h.config.M)
    data = h.data * keep[None, :]
    return ChannelMatrix(data, h.config, mask_applied=True)


def add_noise(h: ChannelMatrix, snr_db: float, seed: int) -> ChannelMatrix:
    """Add circularly-symmetric complex Gaussian noise on downlink symbols.

    The per-element noise variance is P_sig / 10^(snr_db/10) where P_sig is
    the mean |H|^2 over downlink columns before noise; an all-zero scene
    gets P_sig = 1 so 'no target' frames contain pure noise.  Uplink
    columns carry no receive samples and stay untouched.
    """
    if np.isinf(snr_db):
        return ChannelMatrix(h.data.copy(), h.config, h.mask_applied)
    dl = h.config.dl_columns()
    p_sig = float(np.mean(np.abs(h.data[:, dl]) ** 2))
    if p_sig == 0.0:
        p_sig = 1.0
    sigma2 = p_sig / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    scale = np.sqrt(sigma2 / 2.0)
    noise = rng.normal(0.0, scale, size=(h.config.N, dl.size, 2))
    data = h.data.copy()
    data[:, dl] += noise[..., 0] + 1j * noise[..., 1]
    return ChannelMatrix(data, h.config, h.mask_applied)


def load_scene(path) -> Scene:
    """Read a scene from a key/value file.

    Keys: class_id (int), snr_db (float or 'inf'), seed (int), and one
    `scatterer = range_m=..., velocity_mps=..., amplitude=..., phase_rad=...`
    line per reflector (phase_rad optional).
    """
    from . import textconfig as tc

    d = tc.as_dict(tc.read_kv(path), multi=("scatterer",))
    for key in ("class_id", "snr_db", "seed"):
        if key not in d:
            raise ConfigError(f"scene file missing '{key}'")
    scatterers = []
    for line in d.get("scatterer", []):
        f = tc.parse_fields(line, "scatterer")
        try:
            scatterers.append(
                Scatterer(
                    range_m=tc.parse_float(f["range_m"], "range_m"),
                    velocity_mps=tc.parse_float(f["velocity_mps"], "velocity_mps"),
                    amplitude=tc.parse_float(f["amplitude"], "amplitude"),
                    phase_rad=tc.parse_float(f.get("phase_rad", "0"), "phase_rad"),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"scatterer line missing {exc}") from None
    return Scene(
        class_id=tc.parse_int(d["class_id"], "class_id"),
        scatterers=tuple(scatterers),
        snr_db=tc.parse_float(d["snr_db"], "snr_db"),
        seed=tc.parse_int(d["seed"], "seed"),
    )


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"class_id = {scene.class_id}\n")
        fh.write(f"snr_db = {scene.snr_db}\n")
        fh.write(f"seed = {scene.seed}\n")
        for s in scene.scatterers:
            fh.write(
                f"scatterer = range_m={s.range_m!r}, velocity_mps={s.velocity_mps!r},"
                f" amplitude={s.amplitude!r}, phase_rad={s.phase_rad!r}\n"
            )


def estimate_channel(
    y: np.ndarray, x: np.ndarray, config: RadioConfig
) -> ChannelMatrix:
    """Element-wise division Y / X of received by transmitted frame.

    X must be non-zero on every downlink symbol; uplink positions with a
    zero pilot simply yield zero (nothing was transmitted there).
    """
    if y.shape != x.shape:
        raise ConfigError(f"shape mismatch {y.shape} vs {x.shape}")
    if y.shape != (config.N, config.M):
        raise ConfigError(f"frame shape {y.shape} does not match config")
    dl = config.dl_columns()
    zero_dl = np.argwhere(x[:, dl] == 0)
    if zero_dl.size:
        k, j = zero_dl[0]
        raise PilotZeroError(int(k), int(dl[j]))
    out = np.zeros_like(y, dtype=np.complex128)
    nz = x != 0
    out[nz] = y[nz] / x[nz]
    return ChannelMatrix(out, config, mask_applied=False)
