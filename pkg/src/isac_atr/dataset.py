"""Synthetic labeled datasets mirroring the measurement campaign.

Eight target classes are generated as point-scatterer scenes and pushed
through synthesize -> TDD mask -> noise -> periodogram -> features.  Class
proportions default to the campaign statistics.  Movement follows a simple
protocol: subjects run only on outbound (receding) passes and walk back,
and the two-people class keeps the near member receding and the far member
approaching; these direction asymmetries are what the mirrored-velocity
evaluation probes.

Files use a little-endian binary layout: "IATR" magic, version, a header
with radio parameters and feature geometry, then one record per sample
(label u16, scene seed u64, float32 feature payload, CRC32).
"""

import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ChecksumError, ConfigError, FormatError, SplitError
from .periodogram import FeatureTensor, compute_periodogram, extract_features
from .waveform import (
    RadioConfig,
    Scatterer,
    Scene,
    TddPattern,
    add_noise,
    apply_tdd_mask,
    desk_preset,
    synthesize_channel,
)

# Campaign class shares in percent, classes 0..7.
CAMPAIGN_RATIOS = (19.58, 12.48, 8.03, 25.55, 8.46, 6.14, 5.77, 13.99)

WALK_SPEED = (0.8, 2.0)
RUN_SPEED = (2.5, 5.0)
DRIFT_SPEED = (0.4, 1.2)


@dataclass(frozen=True)
class ClassSpec:
    """Scatterer-generator parameters for one target class.

    episodes are drawn uniformly per frame; tokens: static, drift (slow
    push, either direction), walk-away, walk-toward, run-away, run-toward,
    opposing-pair (two articulated clusters, near receding / far
    approaching).
    """

    class_id: int
    name: str
    episodes: tuple
    count: tuple = (1, 1)
    placements: tuple = ()
    placement_jitter: float = 0.5
    depth: float = 0.5
    amplitude: tuple = (0.5, 1.5)
    dominant_amp: float = 0.0
    drift_span: tuple = ()
    snr_offset_db: float = 0.0


DEFAULT_CLASS_LIBRARY = (
    ClassSpec(0, "person", ("walk-away", "run-away", "walk-toward"),
              count=(3, 6), placements=(11.0, 18.0), placement_jitter=1.0,
              depth=0.6, amplitude=(0.3, 1.0)),
    ClassSpec(1, "cabinet", ("static", "drift"),
              count=(5, 10), placements=(15.0,), placement_jitter=1.0,
              depth=2.2, amplitude=(0.5, 1.5), drift_span=(11.0, 21.0),
              snr_offset_db=8.0),
    ClassSpec(2, "forklift", ("static",),
              count=(3, 6), placements=(11.0,), placement_jitter=0.5,
              depth=1.4, amplitude=(0.4, 2.5), snr_offset_db=7.0),
    ClassSpec(3, "reflector", ("walk-away", "run-away", "walk-toward"),
              count=(3, 6), placements=(11.0, 18.0), placement_jitter=1.0,
              depth=0.6, amplitude=(0.3, 1.0), dominant_amp=8.0,
              snr_offset_db=10.0),
    ClassSpec(4, "no_target", ("static",), count=(0, 0)),
    ClassSpec(5, "chair", ("static",),
              count=(1, 3), placements=(15.0,), placement_jitter=0.5,
              depth=0.3, amplitude=(0.7, 1.3), snr_offset_db=-3.0),
    ClassSpec(6, "whiteboard", ("static",),
              count=(3, 6), placements=(15.0,), placement_jitter=0.5,
              depth=1.0, amplitude=(0.15, 0.45), dominant_amp=1.2,
              snr_offset_db=6.0),
    ClassSpec(7, "two_people", ("opposing-pair",),
              count=(3, 6), amplitude=(0.3, 1.0)),
)


@dataclass
class DatasetManifest:
    """Everything needed to regenerate a dataset byte for byte."""

    total_samples: int = 1600
    proportions: tuple = CAMPAIGN_RATIOS
    class_specs: tuple = DEFAULT_CLASS_LIBRARY
    radio: RadioConfig = field(default_factory=desk_preset)
    padding_factor: int = 0
    snr_db: float = 15.0
    split_fraction: float = 0.8
    seed: int = 0
    feature_mode: str = "db_standard"
    class_counts_override: Optional[tuple] = None

    def __post_init__(self):
        if self.total_samples <= 0:
            raise ConfigError("total_samples must be positive")
        if not (0.0 < self.split_fraction < 1.0):
            raise ConfigError("split_fraction must be in (0, 1)")
        if self.feature_mode not in ("db_standard", "raw"):
            raise ConfigError(f"unknown feature mode {self.feature_mode!r}")
        if len(self.proportions) != len(self.class_specs):
            raise ConfigError("proportions and class_specs length mismatch")

    def class_counts(self) -> list:
        if self.class_counts_override is not None:
            counts = list(self.class_counts_override)
            if len(counts) != len(self.class_specs) or any(c <= 0 for c in counts):
                raise ConfigError("bad class_counts override")
            return counts
        return largest_remainder(self.total_samples, self.proportions)


@dataclass
class LabeledSample:
    features: FeatureTensor
    label: int
    seed: int  # scene noise seed, the sample's provenance


def largest_remainder(total: int, proportions) -> list:
    """Apportion `total` by percentage shares, ties to the lower index."""
    shares = [total * p / 100.0 for p in proportions]
    counts = [int(np.floor(s)) for s in shares]
    leftover = total - sum(counts)
    order = sorted(range(len(shares)), key=lambda i: (-(shares[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def _uniform(rng, lo_hi) -> float:
    return float(rng.uniform(lo_hi[0], lo_hi[1]))


def _walker_cluster(rng, center, velocity, count, amp_range) -> list:
    """Articulated mover: torso line plus one-sided limb returns.

    Limb velocity extends away from zero in the direction of motion
    (v * (1+u), u in [0,1]), the usual one-sided gait smear.
    """
    torso_amp = amp_range[1] * float(rng.uniform(0.8, 1.0))
    pts = [
        Scatterer(
            range_m=max(0.5, center + float(rng.normal(0.0, 0.15))),
            velocity_mps=velocity * float(rng.uniform(0.95, 1.05)),
            amplitude=torso_amp,
            phase_rad=float(rng.uniform(0.0, 2.0 * np.pi)),
        )
    ]
    for _ in range(max(0, count - 1)):
        if rng.random() < 0.25:
            vel = velocity * float(rng.uniform(0.0, 0.25))  # stance leg
        else:
            vel = velocity * (1.0 + float(rng.uniform(0.0, 1.0)))
        pts.append(
            Scatterer(
                range_m=max(0.5, center + float(rng.uniform(-0.3, 0.3))),
                velocity_mps=vel,
                amplitude=torso_amp * float(rng.uniform(0.25, 0.6)),
                phase_rad=float(rng.uniform(0.0, 2.0 * np.pi)),
            )
        )
    return pts


def _rigid_cluster(rng, spec, center, velocity) -> list:
    pts = []
    n = int(rng.integers(spec.count[0], spec.count[1] + 1))
    for _ in range(n):
        pts.append(
            Scatterer(
                range_m=max(0.5, center + float(rng.uniform(-spec.depth / 2, spec.depth / 2))),
                velocity_mps=velocity + float(rng.normal(0.0, 0.03)),
                amplitude=_uniform(rng, spec.amplitude),
                phase_rad=float(rng.uniform(0.0, 2.0 * np.pi)),
            )
        )
    return pts


def _episode_velocity(rng, episode) -> float:
    if episode == "static":
        return 0.0
    if episode == "drift":
        sign = 1.0 if rng.random() < 0.5 else -1.0
        return sign * _uniform(rng, DRIFT_SPEED)
    gait, _, direction = episode.partition("-")
    speed = _uniform(rng, WALK_SPEED if gait == "walk" else RUN_SPEED)
    return speed if direction == "away" else -speed


def scene_for_class(spec: ClassSpec, base_snr_db: float, rng) -> Scene:
    """Draw one frame of the given class; deterministic in the rng state."""
    scatterers = []
    if spec.episodes and spec.count[1] > 0:
        episode = spec.episodes[int(rng.integers(len(spec.episodes)))]
        if episode == "opposing-pair":
            # Near member recedes (mixed gait), far member walks back in.
            near = float(rng.uniform(6.0, 12.0))
            far = float(rng.uniform(16.0, 22.0))
            gait_out = RUN_SPEED if rng.random() < 0.6 else WALK_SPEED
            n_a = int(rng.integers(spec.count[0], spec.count[1] + 1))
            n_b = int(rng.integers(spec.count[0], spec.count[1] + 1))
            scatterers += _walker_cluster(rng, near, _uniform(rng, gait_out), n_a, spec.amplitude)
            scatterers += _walker_cluster(rng, far, -_uniform(rng, WALK_SPEED), n_b, spec.amplitude)
        else:
            velocity = _episode_velocity(rng, episode)
            if episode == "drift" and spec.drift_span:
                center = _uniform(rng, spec.drift_span)
            else:
                center = spec.placements[int(rng.integers(len(spec.placements)))]
                center += float(rng.uniform(-spec.placement_jitter, spec.placement_jitter))
            if episode in ("static", "drift"):
                scatterers += _rigid_cluster(rng, spec, center, velocity)
            else:
                n = int(rng.integers(spec.count[0], spec.count[1] + 1))
                scatterers += _walker_cluster(rng, center, velocity, n, spec.amplitude)
            if spec.dominant_amp > 0.0:
                scatterers.append(
                    Scatterer(
                        range_m=max(0.5, center + float(rng.uniform(-0.2, 0.2))),
                        velocity_mps=velocity,
                        amplitude=spec.dominant_amp * float(rng.uniform(0.8, 1.2)),
                        phase_rad=float(rng.uniform(0.0, 2.0 * np.pi)),
                    )
                )
    snr = base_snr_db + spec.snr_offset_db + float(rng.uniform(-1.0, 1.0))
    return Scene(
        class_id=spec.class_id,
        scatterers=tuple(scatterers),
        snr_db=snr,
        seed=int(rng.integers(0, 2**63)),
    )


def generate_sample(manifest: DatasetManifest, spec: ClassSpec, index: int) -> LabeledSample:
    """Build sample `index` of a class; seeding is per (seed, class, index)."""
    rng = np.random.default_rng([manifest.seed, spec.class_id, index])
    scene = scene_for_class(spec, manifest.snr_db, rng)
    h = synthesize_channel(scene, manifest.radio)
    h = apply_tdd_mask(h)
    h = add_noise(h, scene.snr_db, scene.seed)
    p = compute_periodogram(h, manifest.padding_factor)
    t = extract_features(p, raw=(manifest.feature_mode == "raw"))
    t.label = spec.class_id
    return LabeledSample(t, spec.class_id, scene.seed)


def generate_dataset(manifest: DatasetManifest) -> list:
    samples = []
    for spec, count in zip(manifest.class_specs, manifest.class_counts()):
        for i in range(count):
            samples.append(generate_sample(manifest, spec, i))
    return samples


def stratified_split(samples, fraction: float, seed: int):
    """Per-class shuffled split; round-half-up train counts."""
    if not (0.0 < fraction < 1.0):
        raise SplitError(f"fraction must be in (0, 1), got {fraction}")
    by_class = {}
    for idx, s in enumerate(samples):
        by_class.setdefault(s.label, []).append(idx)
    train_idx, test_idx = [], []
    for label in sorted(by_class):
        idx = by_class[label]
        if len(idx) < 2:
            raise SplitError(f"class {label} has {len(idx)} sample(s), need >= 2")
        perm = np.random.default_rng([seed, label]).permutation(len(idx))
        n_train = int(np.floor(fraction * len(idx) + 0.5))
        shuffled = [idx[i] for i in perm]
        train_idx += shuffled[:n_train]
        test_idx += shuffled[n_train:]
    return [samples[i] for i in train_idx], [samples[i] for i in test_idx]


def label_counts(samples, num_classes: int) -> np.ndarray:
    counts = np.zeros(num_classes, dtype=np.int64)
    for s in samples:
        counts[s.label] += 1
    return counts


def class_weights(counts) -> np.ndarray:
    """Inverse-frequency weights w_t = S / (T * S_t)."""
    counts = np.asarray(counts, dtype=np.float64)
    missing = np.nonzero(counts == 0)[0]
    if missing.size:
        raise ValueError(f"class {int(missing[0])} missing from training set")
    total = counts.sum()
    return total / (counts.size * counts)


def load_manifest(path, radio_presets=None) -> DatasetManifest:
    """Read a manifest from a key/value file.

    Keys (all optional): total_samples, split_fraction, snr_db,
    padding_factor, seed, radio (desk | full_scale), feature_mode
    (db_standard | raw), class_counts (comma-separated ints).
    """
    from . import textconfig as tc
    from .waveform import full_scale_preset

    presets = radio_presets or {"desk": desk_preset, "full_scale": full_scale_preset}
    d = tc.as_dict(tc.read_kv(path))
    kwargs = {}
    if "total_samples" in d:
        kwargs["total_samples"] = tc.parse_int(d["total_samples"], "total_samples")
    if "split_fraction" in d:
        kwargs["split_fraction"] = tc.parse_float(d["split_fraction"], "split_fraction")
    if "snr_db" in d:
        kwargs["snr_db"] = tc.parse_float(d["snr_db"], "snr_db")
    if "padding_factor" in d:
        kwargs["padding_factor"] = tc.parse_int(d["padding_factor"], "padding_factor")
    if "seed" in d:
        kwargs["seed"] = tc.parse_int(d["seed"], "seed")
    if "feature_mode" in d:
        kwargs["feature_mode"] = d["feature_mode"]
    if "radio" in d:
        if d["radio"] not in presets:
            raise ConfigError(f"unknown radio preset {d['radio']!r}")
        kwargs["radio"] = presets[d["radio"]]()
    if "class_counts" in d:
        kwargs["class_counts_override"] = tuple(
            tc.parse_int(v, "class_counts") for v in d["class_counts"].split(",")
        )
    return DatasetManifest(**kwargs)


MAGIC = b"IATR"
VERSION = 1
_MODE_CODES = {"db_standard": 0, "raw": 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}

_HEADER = struct.Struct("<4sIBBHIIIQddIIdddIIddQ")
_RECORD_HEAD = struct.Struct("<HQ")
_CRC = struct.Struct("<I")


@dataclass
class DatasetHeader:
    feature_mode: str
    padding_factor: int
    n_prime: int
    m_prime: int
    channels: int
    sample_count: int
    radio: RadioConfig
    snr_db: float
    split_fraction: float
    seed: int


def _pack_header(manifest: DatasetManifest, n_prime, m_prime, channels, count) -> bytes:
    r = manifest.radio
    return _HEADER.pack(
        MAGIC,
        VERSION,
        _MODE_CODES[manifest.feature_mode],
        manifest.padding_factor,
        0,
        n_prime,
        m_prime,
        channels,
        count,
        r.f_c,
        r.delta_f,
        r.N,
        r.M,
        r.T_O,
        r.T_CP,
        r.T_s,
        r.tdd.period_symbols,
        r.tdd.dl_symbols,
        manifest.snr_db,
        manifest.split_fraction,
        manifest.seed & (2**64 - 1),
    )


def save_dataset(samples, manifest: DatasetManifest, path) -> None:
    if samples:
        n_prime, m_prime, channels = samples[0].features.data.shape
    else:
        from .periodogram import padded_dims

        n_prime, m_prime = padded_dims(
            manifest.radio.N, manifest.radio.M, manifest.padding_factor
        )
        channels = 2
    header = _pack_header(manifest, n_prime, m_prime, channels, len(samples))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(_CRC.pack(zlib.crc32(header)))
        for s in samples:
            if s.features.data.shape != (n_prime, m_prime, channels):
                raise FormatError(f"inconsistent feature shape {s.features.data.shape}")
            payload = np.ascontiguousarray(s.features.data, dtype="<f4").tobytes()
            rec = _RECORD_HEAD.pack(s.label, s.seed & (2**64 - 1)) + payload
            fh.write(rec)
            fh.write(_CRC.pack(zlib.crc32(rec)))


def _parse_header(blob) -> DatasetHeader:
    if len(blob) < _HEADER.size + _CRC.size:
        raise FormatError("file too short for a dataset header")
    fields = _HEADER.unpack_from(blob, 0)
    if fields[0] != MAGIC:
        raise FormatError(f"bad magic {fields[0]!r}")
    if fields[1] != VERSION:
        raise FormatError(f"unsupported dataset version {fields[1]}")
    (stored,) = _CRC.unpack_from(blob, _HEADER.size)
    if stored != zlib.crc32(blob[: _HEADER.size]):
        raise ChecksumError("dataset header CRC mismatch")
    mode_code = fields[2]
    if mode_code not in _MODE_NAMES:
        raise FormatError(f"unknown feature-mode code {mode_code}")
    radio = RadioConfig(
        f_c=fields[9],
        delta_f=fields[10],
        N=fields[11],
        M=fields[12],
        T_O=fields[13],
        T_CP=fields[14],
        T_s=fields[15],
        tdd=TddPattern(fields[16], fields[17]),
    )
    return DatasetHeader(
        feature_mode=_MODE_NAMES[mode_code],
        padding_factor=fields[3],
        n_prime=fields[5],
        m_prime=fields[6],
        channels=fields[7],
        sample_count=fields[8],
        radio=radio,
        snr_db=fields[18],
        split_fraction=fields[19],
        seed=fields[20],
    )


def read_header(path) -> DatasetHeader:
    """Parse and verify just the dataset header."""
    with open(path, "rb") as fh:
        blob = fh.read(_HEADER.size + _CRC.size)
    return _parse_header(blob)


def load_dataset(path):
    """Read samples back; returns (samples, DatasetHeader)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header = _parse_header(blob)
    n_prime, m_prime = header.n_prime, header.m_prime
    channels, count = header.channels, header.sample_count
    payload_len = 4 * n_prime * m_prime * channels
    rec_len = _RECORD_HEAD.size + payload_len + _CRC.size
    offset = _HEADER.size + _CRC.size
    samples = []
    for i in range(count):
        if offset + rec_len > len(blob):
            raise FormatError(f"truncated at record {i}")
        rec = blob[offset : offset + rec_len - _CRC.size]
        (stored,) = _CRC.unpack_from(blob, offset + rec_len - _CRC.size)
        if stored != zlib.crc32(rec):
            raise ChecksumError(f"record {i} CRC mismatch")
        label, seed = _RECORD_HEAD.unpack_from(rec, 0)
        data = (
            np.frombuffer(rec, dtype="<f4", offset=_RECORD_HEAD.size)
            .reshape(n_prime, m_prime, channels)
            .copy()
        )
        samples.append(
            LabeledSample(
                FeatureTensor(data, label=label, mode=header.feature_mode),
                label,
                seed,
            )
        )
        offset += rec_len
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes after last record")
    return samples, header
