"""Small convolutional voice/non-voice classifier over spectrograms.

Layers implement their own forward and backward passes on top of numpy.
Inference is pure: intermediate activations go into an explicit cache
object owned by the caller, so a model can serve many threads. Class
index 1 is "voice".

The default stack: conv 3x3x8 + ReLU, 2x2 max-pool, conv 3x3x16 +
ReLU, 2x2 max-pool, flatten, dense 32 + ReLU, dense 2. Softmax lives in
the loss / classify step, the last dense layer emits logits.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import EngineError
from .dsp import Spectrogram

VOICE_CLASS = 1
MODEL_MAGIC = b"VOICEMDL"
MODEL_FORMAT_VERSION = 1


class ShapeMismatch(EngineError):
    """Input shape does not match the model's expected spectrogram shape."""


class BadModelFile(EngineError):
    """The model container is truncated or inconsistent."""


class Conv2D:
    """Valid (unpadded) 2-d convolution, stride 1, optional ReLU."""

    kind = "conv2d"

    def __init__(self, w: np.ndarray, b: np.ndarray, relu: bool = True):
        self.w = np.asarray(w)  # (kh, kw, cin, cout)
        self.b = np.asarray(b)  # (cout,)
        self.relu = relu
        if self.w.ndim != 4 or self.b.shape != (self.w.shape[3],):
            raise ValueError(f"bad conv shapes w={self.w.shape} b={self.b.shape}")

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        h, w, c = in_shape
        kh, kw, cin, cout = self.w.shape
        if c != cin:
            raise ValueError(f"conv expects {cin} channels, got {c}")
        if h < kh or w < kw:
            raise ValueError(f"input {h}x{w} smaller than kernel {kh}x{kw}")
        return (h - kh + 1, w - kw + 1, cout)

    def _cols(self, x: np.ndarray) -> np.ndarray:
        kh, kw, cin, _ = self.w.shape
        win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
        # (N, ho, wo, cin, kh, kw) -> (N, ho, wo, kh, kw, cin)
        return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))

    def forward(self, x: np.ndarray, cache: dict | None = None) -> np.ndarray:
        kh, kw, cin, cout = self.w.shape
        cols = self._cols(x)
        n, ho, wo = cols.shape[:3]
        flat = cols.reshape(n * ho * wo, kh * kw * cin)
        z = flat @ self.w.reshape(kh * kw * cin, cout) + self.b
        z = z.reshape(n, ho, wo, cout)
        y = np.maximum(z, 0) if self.relu else z
        if cache is not None:
            cache["flat"] = flat
            cache["x_shape"] = x.shape
            if self.relu:
                cache["mask"] = z > 0
        return y

    def backward(self, dy: np.ndarray, cache: dict) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        kh, kw, cin, cout = self.w.shape
        if self.relu:
            dy = dy * cache["mask"]
        n, ho, wo, _ = dy.shape
        dflat = dy.reshape(n * ho * wo, cout)
        dw = (cache["flat"].T @ dflat).reshape(self.w.shape)
        db = dflat.sum(axis=0)
        dcols = (dflat @ self.w.reshape(kh * kw * cin, cout).T).reshape(n, ho, wo, kh, kw, cin)
        dx = np.zeros(cache["x_shape"], dtype=dy.dtype)
        for i in range(kh):
            for j in range(kw):
                dx[:, i : i + ho, j : j + wo, :] += dcols[:, :, :, i, j, :]
        return dx, {"w": dw, "b": db}

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {"w": self.w, "b": self.b}


class MaxPool2:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    kind = "maxpool2"
    params: dict[str, np.ndarray] = {}

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        h, w, c = in_shape
        if h < 2 or w < 2:
            raise ValueError(f"cannot pool a {h}x{w} map")
        return (h // 2, w // 2, c)

    @staticmethod
    def _patches(x: np.ndarray) -> np.ndarray:
        n, h, w, c = x.shape
        ht, wt = h // 2, w // 2
        v = x[:, : 2 * ht, : 2 * wt, :].reshape(n, ht, 2, wt, 2, c)
        return v.transpose(0, 1, 3, 2, 4, 5).reshape(n, ht, wt, 4, c)

    def forward(self, x: np.ndarray, cache: dict | None = None) -> np.ndarray:
        patches = self._patches(x)
        idx = patches.argmax(axis=3)
        y = np.take_along_axis(patches, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        if cache is not None:
            cache["idx"] = idx
            cache["x_shape"] = x.shape
        return y

    def backward(self, dy: np.ndarray, cache: dict) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        n, h, w, c = cache["x_shape"]
        ht, wt = h // 2, w // 2
        dpatches = np.zeros((n, ht, wt, 4, c), dtype=dy.dtype)
        np.put_along_axis(dpatches, cache["idx"][:, :, :, None, :], dy[:, :, :, None, :], axis=3)
        dx = np.zeros((n, h, w, c), dtype=dy.dtype)
        dx[:, : 2 * ht, : 2 * wt, :] = (
            dpatches.reshape(n, ht, wt, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, 2 * ht, 2 * wt, c)
        )
        return dx, {}


class Flatten:
    kind = "flatten"
    params: dict[str, np.ndarray] = {}

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return (int(np.prod(in_shape)),)

    def forward(self, x: np.ndarray, cache: dict | None = None) -> np.ndarray:
        if cache is not None:
            cache["x_shape"] = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy: np.ndarray, cache: dict) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        return dy.reshape(cache["x_shape"]), {}


class Dense:
    kind = "dense"

    def __init__(self, w: np.ndarray, b: np.ndarray, relu: bool = False):
        self.w = np.asarray(w)  # (n_in, n_out)
        self.b = np.asarray(b)
        self.relu = relu
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[1],):
            raise ValueError(f"bad dense shapes w={self.w.shape} b={self.b.shape}")

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        if in_shape != (self.w.shape[0],):
            raise ValueError(f"dense expects {self.w.shape[0]} inputs, got {in_shape}")
        return (self.w.shape[1],)

    def forward(self, x: np.ndarray, cache: dict | None = None) -> np.ndarray:
        z = x @ self.w + self.b
        y = np.maximum(z, 0) if self.relu else z
        if cache is not None:
            cache["x"] = x
            if self.relu:
                cache["mask"] = z > 0
        return y

    def backward(self, dy: np.ndarray, cache: dict) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        if self.relu:
            dy = dy * cache["mask"]
        dw = cache["x"].T @ dy
        db = dy.sum(axis=0)
        dx = dy @ self.w.T
        return dx, {"w": dw, "b": db}

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {"w": self.w, "b": self.b}


Layer = Conv2D | MaxPool2 | Flatten | Dense


@dataclass(eq=False)
class VoiceModel:
    """An ordered layer stack mapping one spectrogram to two class logits."""

    layers: list[Layer]
    input_shape: tuple[int, int]
    version: str = "1"

    def __post_init__(self) -> None:
        shape: tuple[int, ...] = (*self.input_shape, 1)
        try:
            for layer in self.layers:
                shape = layer.out_shape(shape)
        except ValueError as exc:
            raise ShapeMismatch(f"layer stack does not chain: {exc}") from exc
        if shape != (2,):
            raise ShapeMismatch(f"stack must end in 2 class logits, ends in {shape}")

    @property
    def dtype(self) -> np.dtype:
        for layer in self.layers:
            for arr in layer.params.values():
                return arr.dtype
        return np.dtype(np.float32)

    def forward(self, x: np.ndarray, caches: list[dict] | None = None) -> np.ndarray:
        """Batch forward pass; x has shape (n, frames, bins, 1)."""
        for layer in self.layers:
            if caches is None:
                x = layer.forward(x, None)
            else:
                cache: dict = {}
                x = layer.forward(x, cache)
                caches.append(cache)
        return x

    def backward(self, dlogits: np.ndarray, caches: list[dict]) -> list[dict[str, np.ndarray]]:
        """Per-layer parameter gradients, aligned with self.layers."""
        grads: list[dict[str, np.ndarray]] = [None] * len(self.layers)  # type: ignore[list-item]
        dy = dlogits
        for i in range(len(self.layers) - 1, -1, -1):
            dy, g = self.layers[i].backward(dy, caches[i])
            grads[i] = g
        return grads

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                out.append((f"layer{i}.{name}", arr))
        return out

    def get_weights(self) -> list[np.ndarray]:
        return [arr.copy() for _, arr in self.parameters()]

    def set_weights(self, weights: Sequence[np.ndarray]) -> None:
        params = self.parameters()
        if len(weights) != len(params):
            raise ValueError(f"expected {len(params)} tensors, got {len(weights)}")
        for (_, arr), new in zip(params, weights):
            if arr.shape != new.shape:
                raise ValueError(f"shape mismatch {arr.shape} vs {new.shape}")
            arr[...] = new

    def astype(self, dtype) -> "VoiceModel":
        """Copy of the model with weights cast to dtype (float64 for checks)."""
        layers: list[Layer] = []
        for layer in self.layers:
            if isinstance(layer, Conv2D):
                layers.append(Conv2D(layer.w.astype(dtype), layer.b.astype(dtype), layer.relu))
            elif isinstance(layer, Dense):
                layers.append(Dense(layer.w.astype(dtype), layer.b.astype(dtype), layer.relu))
            elif isinstance(layer, MaxPool2):
                layers.append(MaxPool2())
            else:
                layers.append(Flatten())
        return VoiceModel(layers=layers, input_shape=self.input_shape, version=self.version)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classify_window(spec: Spectrogram, model: VoiceModel) -> float:
    """Probability that the window holds a human voice.

    Deterministic forward pass over the log-compressed spectrogram;
    raises ShapeMismatch when the spectrogram does not fit the model.
    """
    if spec.shape != model.input_shape:
        raise ShapeMismatch(
            f"spectrogram shape {spec.shape} does not match model input {model.input_shape}"
        )
    x = spec.model_input()[None, :, :, None].astype(model.dtype)
    logits = model.forward(x)
    return float(softmax(logits)[0, VOICE_CLASS])


def default_voice_model(
    input_shape: tuple[int, int] = (61, 257),
    seed: int = 0,
    dtype=np.float32,
) -> VoiceModel:
    """The standard conv stack with seeded He-normal initialisation."""
    rng = np.random.default_rng(seed)

    def he(shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)

    h, w = input_shape
    h1, w1 = (h - 2) // 2, (w - 2) // 2
    h2, w2 = (h1 - 2) // 2, (w1 - 2) // 2
    flat = h2 * w2 * 16
    layers: list[Layer] = [
        Conv2D(he((3, 3, 1, 8), 9), np.full(8, 0.01, dtype=dtype), relu=True),
        MaxPool2(),
        Conv2D(he((3, 3, 8, 16), 72), np.full(16, 0.01, dtype=dtype), relu=True),
        MaxPool2(),
        Flatten(),
        Dense(he((flat, 32), flat), np.full(32, 0.01, dtype=dtype), relu=True),
        Dense(he((32, 2), 32), np.zeros(2, dtype=dtype), relu=False),
    ]
    return VoiceModel(layers=layers, input_shape=input_shape)


def band_contrast_model(
    input_shape: tuple[int, int] = (61, 257),
    split_bin: int = 64,
    margin: float = 0.25,
    gain: float = 6.0,
) -> VoiceModel:
    """Fixed-weight model comparing low-band and high-band energy.

    The voice logit is gain * (mean low-band log-magnitude - mean
    high-band log-magnitude - margin); the other logit is zero. Useful
    as a deterministic classifier for fixtures and simulations: harmonic
    signals concentrate energy below the split bin, wide-band noise does
    not.
    """
    frames, bins = input_shape
    if not (0 < split_bin < bins):
        raise ValueError(f"split_bin must lie inside (0, {bins}), got {split_bin}")
    w = np.zeros((frames * bins, 2), dtype=np.float32)
    per_bin = np.zeros(bins, dtype=np.float32)
    per_bin[:split_bin] = gain / (frames * split_bin)
    per_bin[split_bin:] = -gain / (frames * (bins - split_bin))
    w[:, VOICE_CLASS] = np.tile(per_bin, frames)
    b = np.array([0.0, -gain * margin], dtype=np.float32)
    return VoiceModel(
        layers=[Flatten(), Dense(w, b, relu=False)],
        input_shape=input_shape,
        version="band-contrast",
    )


# ---------------------------------------------------------------------------
# Model container: magic, format version, JSON architecture header, then
# shape-tagged little-endian float32 tensors in layer order.


def save_model(model: VoiceModel, path: str | Path) -> None:
    meta = {
        "version_tag": model.version,
        "input_shape": list(model.input_shape),
        "layers": [
            {"kind": layer.kind, **({"relu": layer.relu} if hasattr(layer, "relu") else {})}
            for layer in model.layers
        ],
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks = [MODEL_MAGIC, struct.pack("<I", MODEL_FORMAT_VERSION)]
    chunks.append(struct.pack("<I", len(meta_bytes)))
    chunks.append(meta_bytes)
    params = model.parameters()
    chunks.append(struct.pack("<I", len(params)))
    for name, arr in params:
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_model(path: str | Path) -> VoiceModel:
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise BadModelFile(f"{path}: truncated at byte {pos}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(len(MODEL_MAGIC))) != MODEL_MAGIC:
        raise BadModelFile(f"{path}: not a voice model container")
    (fmt,) = struct.unpack("<I", take(4))
    if fmt != MODEL_FORMAT_VERSION:
        raise BadModelFile(f"{path}: unsupported container version {fmt}")
    (meta_len,) = struct.unpack("<I", take(4))
    try:
        meta = json.loads(bytes(take(meta_len)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadModelFile(f"{path}: bad metadata: {exc}") from exc
    (count,) = struct.unpack("<I", take(4))
    tensors: list[np.ndarray] = []
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        take(name_len)  # names are informational; order is authoritative
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape)
        tensors.append(np.array(data, dtype=np.float32))
    if pos != len(view):
        raise BadModelFile(f"{path}: {len(view) - pos} trailing bytes")

    layers: list[Layer] = []
    it = iter(tensors)
    try:
        for spec in meta["layers"]:
            kind = spec["kind"]
            if kind == "conv2d":
                layers.append(Conv2D(next(it), next(it), relu=bool(spec.get("relu", True))))
            elif kind == "dense":
                layers.append(Dense(next(it), next(it), relu=bool(spec.get("relu", False))))
            elif kind == "maxpool2":
                layers.append(MaxPool2())
            elif kind == "flatten":
                layers.append(Flatten())
            else:
                raise BadModelFile(f"{path}: unknown layer kind {kind!r}")
        leftovers = sum(1 for _ in it)
        if leftovers:
            raise BadModelFile(f"{path}: {leftovers} unclaimed tensors")
        model = VoiceModel(
            layers=layers,
            input_shape=tuple(meta["input_shape"]),  # type: ignore[arg-type]
            version=str(meta.get("version_tag", "1")),
        )
    except (KeyError, StopIteration, ValueError, ShapeMismatch) as exc:
        raise BadModelFile(f"{path}: inconsistent container: {exc}") from exc
    return model
