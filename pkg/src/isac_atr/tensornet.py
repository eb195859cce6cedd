"""Minimal deterministic NN engine on dense numpy tensors.

Implements exactly the layer set the detector needs: 2-D convolution
(cross-correlation, floor(k/2) zero padding), batch normalization, ReLU,
2-D max pooling, global average pooling, fully connected, inverted
dropout, softmax, weighted cross-entropy, reverse-mode gradients and
plain SGD.  Activations are (batch, channels, height, width) or
(batch, features).  float32 for training, float64 for gradient checking;
each layer computes in the dtype of its parameters.
"""

import struct
import zlib

import numpy as np

from .errors import ChecksumError, FormatError


def _as_strided_windows(xp, k, stride, out_h, out_w):
    b, c = xp.shape[0], xp.shape[1]
    s0, s1, s2, s3 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, k, k, out_h, out_w),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
    )


class Layer:
    """Base: `params`/`grads` are dicts of trainable arrays, `state` holds
    non-trainable buffers (batch-norm running statistics)."""

    name = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.state = {}
        self.cache = None

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def _take_cache(self):
        if self.cache is None:
            raise RuntimeError(f"{self.name}: backward without a matching forward")
        cache, self.cache = self.cache, None
        return cache


class Conv2d(Layer):
    def __init__(self, in_channels, out_channels, kernel, stride=1, rng=None, dtype=np.float32):
        super().__init__()
        self.name = f"conv{kernel}x{kernel}"
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = kernel // 2
        rng = rng or np.random.default_rng(0)
        bound = np.sqrt(6.0 / (in_channels * kernel * kernel))
        self.params["w"] = rng.uniform(
            -bound, bound, size=(out_channels, in_channels, kernel, kernel)
        ).astype(dtype)
        self.params["b"] = np.zeros(out_channels, dtype=dtype)

    @staticmethod
    def out_dim(size, kernel, stride):
        return (size + 2 * (kernel // 2) - kernel) // stride + 1

    def forward(self, x, train=False):
        b, c, h, w = x.shape
        if c != self.in_channels:
            raise ValueError(f"{self.name}: expected {self.in_channels} input channels, got {c}")
        if h + 2 * self.pad < self.kernel or w + 2 * self.pad < self.kernel:
            raise ValueError(f"{self.name}: input {h}x{w} smaller than kernel after padding")
        out_h = self.out_dim(h, self.kernel, self.stride)
        out_w = self.out_dim(w, self.kernel, self.stride)
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad), (self.pad, self.pad)))
        # im2col in (C*k*k, batch*locations) layout so both GEMMs are flat
        windows = _as_strided_windows(xp, self.kernel, self.stride, out_h, out_w)
        cols = np.ascontiguousarray(windows.transpose(1, 2, 3, 0, 4, 5)).reshape(
            c * self.kernel * self.kernel, b * out_h * out_w
        )
        wm = self.params["w"].reshape(self.out_channels, -1)
        out = wm @ cols
        out += self.params["b"][:, None]
        self.cache = (x.shape, xp.shape, cols, out_h, out_w)
        return np.ascontiguousarray(
            out.reshape(self.out_channels, b, out_h, out_w).transpose(1, 0, 2, 3)
        )

    def backward(self, grad_out):
        x_shape, xp_shape, cols, out_h, out_w = self._take_cache()
        b, c = x_shape[0], x_shape[1]
        k, s, pad = self.kernel, self.stride, self.pad
        g_flat = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3)).reshape(
            self.out_channels, b * out_h * out_w
        )
        self.grads["w"] = (g_flat @ cols.T).reshape(self.params["w"].shape)
        self.grads["b"] = g_flat.sum(axis=1)
        wm = self.params["w"].reshape(self.out_channels, -1)
        gcols = (wm.T @ g_flat).reshape(c, k, k, b, out_h, out_w)
        gxp = np.zeros((c, b, xp_shape[2], xp_shape[3]), dtype=grad_out.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + s * out_h : s, j : j + s * out_w : s] += gcols[:, i, j]
        if pad:
            gxp = gxp[:, :, pad:-pad, pad:-pad]
        return np.ascontiguousarray(gxp.transpose(1, 0, 2, 3))


class BatchNorm2d(Layer):
    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__()
        self.name = "batchnorm"
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.state["running_mean"] = np.zeros(channels, dtype=dtype)
        self.state["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x, train=False):
        if train:
            if x.shape[0] < 2:
                raise ValueError("batch normalization needs batch >= 2 in train mode")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.state["running_mean"] = ((1 - m) * self.state["running_mean"] + m * mean).astype(
                self.state["running_mean"].dtype
            )
            self.state["running_var"] = ((1 - m) * self.state["running_var"] + m * var).astype(
                self.state["running_var"].dtype
            )
        else:
            mean = self.state["running_mean"]
            var = self.state["running_var"]
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = x - mean.astype(x.dtype)[:, None, None]
        xhat *= inv_std[:, None, None]
        self.cache = (xhat, inv_std, train)
        out = xhat * self.params["gamma"][:, None, None]
        out += self.params["beta"][:, None, None]
        return out

    def backward(self, grad_out):
        xhat, inv_std, train = self._take_cache()
        self.grads["gamma"] = (grad_out * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] = grad_out.sum(axis=(0, 2, 3))
        dxhat = grad_out * self.params["gamma"][:, None, None]
        if not train:
            return dxhat * inv_std[:, None, None]
        n = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
        sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (inv_std[:, None, None] / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)


class ReLU(Layer):
    name = "relu"

    def forward(self, x, train=False):
        mask = x > 0
        self.cache = mask
        return x * mask

    def backward(self, grad_out):
        return grad_out * self._take_cache()


class MaxPool2d(Layer):
    def __init__(self, kernel, stride):
        super().__init__()
        self.name = f"maxpool{kernel}"
        self.kernel = kernel
        self.stride = stride

    @staticmethod
    def out_dim(size, kernel, stride):
        return (size - kernel) // stride + 1

    def forward(self, x, train=False):
        b, c, h, w = x.shape
        k, s = self.kernel, self.stride
        if h < k or w < k:
            raise ValueError(f"{self.name}: input {h}x{w} smaller than window")
        out_h = self.out_dim(h, k, s)
        out_w = self.out_dim(w, k, s)
        if k == 1:
            out = x[:, :, : out_h * s : s, : out_w * s : s].copy()
            idx = np.zeros(out.shape, dtype=np.int8)
        elif k == 2 and s == 2:
            quads = [
                x[:, :, i : i + 2 * out_h : 2, j : j + 2 * out_w : 2]
                for i in range(2)
                for j in range(2)
            ]
            out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
            # first-match comparison = lowest linear index on ties
            idx = np.full(out.shape, 3, dtype=np.int8)
            idx[quads[2] == out] = 2
            idx[quads[1] == out] = 1
            idx[quads[0] == out] = 0
        else:
            windows = _as_strided_windows(x, k, s, out_h, out_w)
            # (b, c, out_h, out_w, k*k); argmax picks the lowest linear index on ties
            flat = np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3)).reshape(
                b, c, out_h, out_w, k * k
            )
            idx = flat.argmax(axis=-1)
            out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        self.cache = (x.shape, idx, out_h, out_w)
        return out

    def backward(self, grad_out):
        x_shape, idx, out_h, out_w = self._take_cache()
        b, c, h, w = x_shape
        k, s = self.kernel, self.stride
        if s >= k:
            # windows are disjoint: route each window's grad to its argmax cell
            grad_x = np.zeros(x_shape, dtype=grad_out.dtype)
            for i in range(k):
                for j in range(k):
                    plane = np.where(idx == i * k + j, grad_out, 0)
                    grad_x[:, :, i : i + s * out_h : s, j : j + s * out_w : s] = plane
            return grad_x
        hh, ww = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
        src = (hh * s + idx // k) * w + (ww * s + idx % k)
        offsets = (np.arange(b * c) * (h * w))[:, None]
        flat = src.reshape(b * c, -1) + offsets
        grad_x = np.bincount(
            flat.ravel(), weights=grad_out.ravel().astype(np.float64), minlength=b * c * h * w
        )
        return grad_x.reshape(x_shape).astype(grad_out.dtype)


class Dropout(Layer):
    """Inverted dropout: train-time scaling, eval is the identity."""

    def __init__(self, rate):
        super().__init__()
        if not (0.0 <= rate < 1.0):
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.name = "dropout"
        self.rate = rate
        self.rng = None
        self.fixed_mask = None  # set by gradient checks to freeze the draw

    def forward(self, x, train=False):
        if not train or self.rate == 0.0:
            self.cache = (None,)
            return x
        if self.fixed_mask is not None:
            mask = self.fixed_mask
        else:
            if self.rng is None:
                raise RuntimeError("dropout needs an rng in train mode")
            mask = self.rng.random(x.shape) >= self.rate
        scale = 1.0 / (1.0 - self.rate)
        self.cache = (mask,)
        return x * mask * scale

    def backward(self, grad_out):
        (mask,) = self._take_cache()
        if mask is None:
            return grad_out
        return grad_out * mask / (1.0 - self.rate)


class AdaptiveAvgPool(Layer):
    """Average-pool any (b, c, h, w) map onto a fixed grid and flatten to
    (b, c*grid*grid).  grid=1 is global average pooling.  Bin i covers
    [floor(i*h/g), ceil((i+1)*h/g)), so uneven sizes still work."""

    def __init__(self, grid: int = 1):
        super().__init__()
        self.name = f"apool{grid}"
        self.grid = grid

    @staticmethod
    def _edges(size, grid):
        starts = [(i * size) // grid for i in range(grid)]
        stops = [-(-((i + 1) * size) // grid) for i in range(grid)]
        return list(zip(starts, stops))

    def forward(self, x, train=False):
        b, c, h, w = x.shape
        g = self.grid
        self.cache = x.shape
        if h % g == 0 and w % g == 0:
            return np.ascontiguousarray(
                x.reshape(b, c, g, h // g, g, w // g).mean(axis=(3, 5))
            ).reshape(b, c * g * g)
        out = np.empty((b, c, g, g), dtype=x.dtype)
        for i, (h0, h1) in enumerate(self._edges(h, g)):
            for j, (w0, w1) in enumerate(self._edges(w, g)):
                out[:, :, i, j] = x[:, :, h0:h1, w0:w1].mean(axis=(2, 3))
        return out.reshape(b, c * g * g)

    def backward(self, grad_out):
        b, c, h, w = self._take_cache()
        g = self.grid
        g4 = grad_out.reshape(b, c, g, g)
        if h % g == 0 and w % g == 0:
            bins = (h // g) * (w // g)
            g6 = g4[:, :, :, None, :, None] / bins
            return np.ascontiguousarray(
                np.broadcast_to(g6, (b, c, g, h // g, g, w // g))
            ).reshape(b, c, h, w)
        grad_x = np.zeros((b, c, h, w), dtype=grad_out.dtype)
        for i, (h0, h1) in enumerate(self._edges(h, g)):
            for j, (w0, w1) in enumerate(self._edges(w, g)):
                grad_x[:, :, h0:h1, w0:w1] += (
                    g4[:, :, i, j, None, None] / ((h1 - h0) * (w1 - w0))
                )
        return grad_x


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        self.name = f"fc{out_features}"
        rng = rng or np.random.default_rng(0)
        bound = np.sqrt(6.0 / in_features)
        self.params["w"] = rng.uniform(-bound, bound, size=(in_features, out_features)).astype(dtype)
        self.params["b"] = np.zeros(out_features, dtype=dtype)

    def forward(self, x, train=False):
        self.cache = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, grad_out):
        x = self._take_cache()
        self.grads["w"] = x.T @ grad_out
        self.grads["b"] = grad_out.sum(axis=0)
        return grad_out @ self.params["w"].T


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def weighted_ce(probs: np.ndarray, labels, weights=None) -> float:
    """Batch loss sum_i w_{y_i} * (-log p_i[y_i]) / sum_i w_{y_i}."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError(f"label out of range for {probs.shape[1]} classes")
    if weights is None:
        weights = np.ones(probs.shape[1], dtype=probs.dtype)
    w = np.asarray(weights)[labels]
    picked = probs[np.arange(len(labels)), labels]
    return float((w * -np.log(np.maximum(picked, 1e-300))).sum() / w.sum())


def weighted_ce_from_logits(logits, labels, weights=None):
    """Fused, numerically stable loss and logit gradient.

    Returns (loss, probs, dlogits) with
    dlogits_i = w_{y_i} * (p_i - onehot_i) / sum_j w_{y_j}.
    """
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(f"label out of range for {logits.shape[1]} classes")
    if weights is None:
        weights = np.ones(logits.shape[1], dtype=np.float64)
    logp = log_softmax(logits)
    probs = np.exp(logp)
    w = np.asarray(weights, dtype=logits.dtype)[labels]
    norm = w.sum()
    loss = float((w * -logp[np.arange(len(labels)), labels]).sum() / norm)
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1.0
    dlogits *= (w / norm)[:, None]
    return loss, probs, dlogits.astype(logits.dtype)


def sgd_step(layers, lr: float) -> None:
    """Plain theta <- theta - lr * grad; no momentum, decay or schedule."""
    for layer in layers:
        for key, grad in layer.grads.items():
            layer.params[key] -= (lr * grad).astype(layer.params[key].dtype)


def count_params(layers) -> int:
    return sum(p.size for layer in layers for p in layer.params.values())


def named_arrays(layers) -> list:
    """Stable (name, array) listing of all parameters and state buffers."""
    out = []
    for i, layer in enumerate(layers):
        for key in sorted(layer.params):
            out.append((f"{i}.{layer.name}.{key}", layer.params[key]))
        for key in sorted(layer.state):
            out.append((f"{i}.{layer.name}.{key}", layer.state[key]))
    return out


def load_named_arrays(layers, arrays: dict) -> None:
    for name, _ in named_arrays(layers):
        if name not in arrays:
            raise FormatError(f"checkpoint missing array {name!r}")
    for i, layer in enumerate(layers):
        for key in layer.params:
            src = arrays[f"{i}.{layer.name}.{key}"]
            if src.shape != layer.params[key].shape:
                raise FormatError(f"shape mismatch for {i}.{layer.name}.{key}")
            layer.params[key] = src.astype(layer.params[key].dtype)
        for key in layer.state:
            src = arrays[f"{i}.{layer.name}.{key}"]
            if src.shape != layer.state[key].shape:
                raise FormatError(f"shape mismatch for {i}.{layer.name}.{key}")
            layer.state[key] = src.astype(layer.state[key].dtype)


def pack_arrays(items) -> bytes:
    """Serialize (name, float array) pairs as little-endian float32 blobs."""
    chunks = [struct.pack("<I", len(items))]
    for name, arr in items:
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def unpack_arrays(blob: bytes) -> dict:
    try:
        (count,) = struct.unpack_from("<I", blob, 0)
        offset = 4
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=offset).reshape(shape)
            offset += 4 * size
            out[name] = arr.copy()
    except (struct.error, ValueError) as exc:
        raise FormatError(f"malformed parameter block: {exc}") from None
    if offset != len(blob):
        raise FormatError("trailing bytes in parameter block")
    return out


def crc_frame(payload: bytes) -> bytes:
    """payload + CRC32 trailer."""
    return payload + struct.pack("<I", zlib.crc32(payload))


def check_crc_frame(blob: bytes) -> bytes:
    if len(blob) < 4:
        raise FormatError("blob too short for a CRC trailer")
    payload, stored = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(payload) != stored:
        raise ChecksumError("CRC mismatch")
    return payload
