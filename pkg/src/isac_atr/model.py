"""Detector assembly, training, evaluation and checkpointing.

The detector is C blocks of [conv -> batch norm -> ReLU -> max pool]
with channel doubling per block, a global average pool, then
FC(f) -> dropout -> FC(T) -> softmax.  The first conv kernel is tied to
the padding factor (F=0 -> 3, F=1 -> 5, F=2 -> 7); remaining blocks use
the searched kernel.  Training is plain SGD on weighted cross-entropy
with everything seeded.

Checkpoints: "IATM" magic, version, architecture descriptor,
little-endian float32 parameter blobs, CRC32 trailer.
"""

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensornet as tn
from .errors import ArchitectureError, ChecksumError, ConfigError, DivergenceError, FormatError
from .periodogram import hflip, write_pgm

FIRST_KERNEL_BY_FACTOR = {0: 3, 1: 5, 2: 7}


def first_kernel_for(factor: int) -> int:
    return FIRST_KERNEL_BY_FACTOR.get(factor, 7)


@dataclass
class DetectorConfig:
    """Architecture hyperparameters of the convolutional detector.

    head_grid is the fixed output grid of the adaptive average pooling
    between the conv stack and the classifier head; it is an engine
    constant, not part of the search space (grid 1 would be a plain
    global average pool, which trains far too slowly at the fixed
    learning rate).
    """

    C: int
    k_c: int
    s_c: int
    o_c: int
    k_m: int
    s_m: int
    f: int
    d: float
    F: int = 0
    T: int = 8
    k_first: int = 0  # 0 = derive from F
    head_grid: int = 8

    def __post_init__(self):
        if not (2 <= self.C <= 4):
            raise ConfigError(f"conv-block count must be in [2, 4], got {self.C}")
        if not (0.0 <= self.d < 1.0):
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.d}")
        for name in ("k_c", "s_c", "o_c", "k_m", "s_m", "f", "T", "head_grid"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.k_first == 0:
            self.k_first = first_kernel_for(self.F)

    def kernels(self) -> list:
        return [self.k_first] + [self.k_c] * (self.C - 1)

    def channels(self) -> list:
        return [self.o_c * (1 << c) for c in range(self.C)]


def tuned_config(factor: int, num_classes: int = 8) -> DetectorConfig:
    """Search-winning architecture per padding factor: two blocks of 16
    channels for coarse maps, four blocks of 8 for the finest one."""
    if factor >= 2:
        return DetectorConfig(C=4, k_c=3, s_c=1, o_c=8, k_m=2, s_m=2,
                              f=32, d=0.5, F=factor, T=num_classes)
    return DetectorConfig(C=2, k_c=3, s_c=1, o_c=16, k_m=2, s_m=2,
                          f=32, d=0.5, F=factor, T=num_classes)


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 0.001
    epochs: int = 50
    seed: int = 0


class Detector:
    """The assembled network; owns its layers and the dropout stream."""

    def __init__(self, config: DetectorConfig, input_hw, in_channels=2, seed=0, dtype=np.float32):
        self.config = config
        self.input_hw = tuple(input_hw)
        self.in_channels = in_channels
        rng = np.random.default_rng([seed, 0])
        h, w = input_hw
        if h < 1 or w < 1:
            raise ArchitectureError(f"bad input size {h}x{w}")
        layers = []
        channels_in = in_channels
        for c, (kernel, channels_out) in enumerate(zip(config.kernels(), config.channels()), 1):
            layers.append(tn.Conv2d(channels_in, channels_out, kernel, config.s_c, rng, dtype))
            h = tn.Conv2d.out_dim(h, kernel, config.s_c)
            w = tn.Conv2d.out_dim(w, kernel, config.s_c)
            if h < 1 or w < 1:
                raise ArchitectureError(f"block {c}: conv output collapsed to {h}x{w}")
            layers.append(tn.BatchNorm2d(channels_out, dtype=dtype))
            layers.append(tn.ReLU())
            if h < config.k_m or w < config.k_m:
                raise ArchitectureError(f"block {c}: {h}x{w} smaller than pool window {config.k_m}")
            layers.append(tn.MaxPool2d(config.k_m, config.s_m))
            h = tn.MaxPool2d.out_dim(h, config.k_m, config.s_m)
            w = tn.MaxPool2d.out_dim(w, config.k_m, config.s_m)
            if h < 1 or w < 1:
                raise ArchitectureError(f"block {c}: pool output collapsed to {h}x{w}")
            channels_in = channels_out
        layers.append(tn.AdaptiveAvgPool(config.head_grid))
        layers.append(tn.Dense(channels_in * config.head_grid**2, config.f, rng, dtype))
        self._dropout = tn.Dropout(config.d)
        layers.append(self._dropout)
        layers.append(tn.Dense(config.f, config.T, rng, dtype))
        self.layers = layers
        self.final_hw = (h, w)

    def seed_dropout(self, seed) -> None:
        self._dropout.rng = np.random.default_rng(seed)

    def logits(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def predict_proba(self, x):
        return tn.softmax(self.logits(x, train=False))

    def param_count(self) -> int:
        return tn.count_params(self.layers)


def build_detector(config: DetectorConfig, input_hw, in_channels=2, seed=0, dtype=np.float32):
    return Detector(config, input_hw, in_channels, seed, dtype)


def batch_features(samples, dtype=np.float32):
    x = np.stack([s.features.data.transpose(2, 0, 1) for s in samples]).astype(dtype)
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y


@dataclass
class EvalReport:
    confusion: np.ndarray  # rows = true class, columns = predicted
    per_class_accuracy: np.ndarray
    overall_accuracy: float
    mean_loss: float

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("metric,value\n")
            fh.write(f"overall_accuracy,{self.overall_accuracy!r}\n")
            fh.write(f"mean_loss,{self.mean_loss!r}\n")
            for t, acc in enumerate(self.per_class_accuracy):
                fh.write(f"class_{t}_accuracy,{acc!r}\n")

    def write_confusion_csv(self, path) -> None:
        t = self.confusion.shape[0]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("true\\pred," + ",".join(str(i) for i in range(t)) + "\n")
            for i in range(t):
                fh.write(str(i) + "," + ",".join(str(int(v)) for v in self.confusion[i]) + "\n")

    def write_heatmap(self, path, cell_px: int = 24) -> None:
        rows = self.confusion.astype(np.float64)
        totals = rows.sum(axis=1, keepdims=True)
        norm = np.divide(rows, totals, out=np.zeros_like(rows), where=totals > 0)
        img = np.kron(norm, np.ones((cell_px, cell_px)))
        write_pgm(img, path)


def evaluate(model: Detector, samples, weights=None, batch_size: int = 256) -> EvalReport:
    """Eval-mode confusion matrix, accuracies and mean weighted loss."""
    if not samples:
        raise ValueError("empty evaluation set")
    t = model.config.T
    if weights is None:
        weights = np.ones(t, dtype=np.float64)
    confusion = np.zeros((t, t), dtype=np.int64)
    loss_num = 0.0
    loss_den = 0.0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        x, y = batch_features(chunk)
        logp = tn.log_softmax(model.logits(x, train=False))
        pred = logp.argmax(axis=1)
        for yi, pi in zip(y, pred):
            confusion[yi, pi] += 1
        w = np.asarray(weights)[y]
        loss_num += float((w * -logp[np.arange(len(y)), y]).sum())
        loss_den += float(w.sum())
    class_totals = confusion.sum(axis=1)
    per_class = np.divide(
        np.diag(confusion),
        class_totals,
        out=np.zeros(t, dtype=np.float64),
        where=class_totals > 0,
    )
    overall = float(np.trace(confusion) / confusion.sum())
    return EvalReport(confusion, per_class, overall, loss_num / loss_den)


def evaluate_flipped(model: Detector, samples, weights=None) -> EvalReport:
    """Evaluation with every feature tensor mirrored along the Doppler axis."""
    flipped = [type(s)(hflip(s.features), s.label, s.seed) for s in samples]
    return evaluate(model, flipped, weights)


def train(model: Detector, train_samples, test_samples, tc: TrainConfig, weights=None):
    """Seeded SGD epochs; returns per-epoch history rows.

    Each row is (epoch, mean train-mode minibatch loss, eval-mode test
    loss, eval-mode test accuracy).
    """
    shuffle_rng = np.random.default_rng([tc.seed, 0])
    model.seed_dropout([tc.seed, 1])
    history = []
    for epoch in range(tc.epochs):
        perm = shuffle_rng.permutation(len(train_samples))
        batch_losses = []
        for start in range(0, len(perm), tc.batch_size):
            batch = [train_samples[i] for i in perm[start : start + tc.batch_size]]
            if len(batch) < 2:
                continue  # batch norm cannot run on a single sample
            x, y = batch_features(batch)
            logits = model.logits(x, train=True)
            loss, _, dlogits = tn.weighted_ce_from_logits(logits, y, weights)
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            model.backward(dlogits)
            tn.sgd_step(model.layers, tc.lr)
            batch_losses.append(loss)
        report = evaluate(model, test_samples, weights)
        history.append(
            (epoch, float(np.mean(batch_losses)), report.mean_loss, report.overall_accuracy)
        )
    return history


def write_history_csv(history, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,test_loss,test_accuracy\n")
        for epoch, train_loss, test_loss, test_acc in history:
            fh.write(f"{epoch},{train_loss!r},{test_loss!r},{test_acc!r}\n")


CHECKPOINT_MAGIC = b"IATM"
CHECKPOINT_VERSION = 1
_DESCRIPTOR = struct.Struct("<BBBBHBBHdBHBIII")


def save_checkpoint(model: Detector, path) -> None:
    cfg = model.config
    descriptor = _DESCRIPTOR.pack(
        cfg.C,
        cfg.k_c,
        cfg.k_first,
        cfg.s_c,
        cfg.o_c,
        cfg.k_m,
        cfg.s_m,
        cfg.f,
        cfg.d,
        cfg.F,
        cfg.T,
        cfg.head_grid,
        model.input_hw[0],
        model.input_hw[1],
        model.in_channels,
    )
    payload = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", CHECKPOINT_VERSION)
        + descriptor
        + tn.pack_arrays(tn.named_arrays(model.layers))
    )
    with open(path, "wb") as fh:
        fh.write(tn.crc_frame(payload))


def load_checkpoint(path) -> Detector:
    with open(path, "rb") as fh:
        blob = fh.read()
    payload = tn.check_crc_frame(blob)
    if payload[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {payload[:4]!r}")
    (version,) = struct.unpack_from("<I", payload, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    d = _DESCRIPTOR.unpack_from(payload, 8)
    cfg = DetectorConfig(
        C=d[0], k_c=d[1], s_c=d[3], o_c=d[4], k_m=d[5], s_m=d[6],
        f=d[7], d=d[8], F=d[9], T=d[10], k_first=d[2], head_grid=d[11],
    )
    model = Detector(cfg, (d[12], d[13]), in_channels=d[14])
    arrays = tn.unpack_arrays(payload[8 + _DESCRIPTOR.size :])
    tn.load_named_arrays(model.layers, arrays)
    return model


_DETECTOR_KEYS = ("C", "k_c", "s_c", "o_c", "k_m", "s_m", "f", "d", "F", "T", "k_first")


def save_detector_config(cfg: DetectorConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in _DETECTOR_KEYS:
            fh.write(f"{key} = {getattr(cfg, key)!r}\n")


def load_detector_config(path) -> DetectorConfig:
    from . import textconfig as tc

    d = tc.as_dict(tc.read_kv(path))
    kwargs = {}
    for key in _DETECTOR_KEYS:
        if key in d:
            kwargs[key] = tc.parse_float(d[key], key) if key == "d" else tc.parse_int(d[key], key)
    missing = {"C", "k_c", "s_c", "o_c", "k_m", "s_m", "f", "d"} - set(kwargs)
    if missing:
        raise ConfigError(f"detector config missing {sorted(missing)}")
    return DetectorConfig(**kwargs)
