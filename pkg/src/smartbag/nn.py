"""Dense feedforward network built directly on numpy.

Forward pass, per-unit binary cross-entropy cost with optional L2 penalty,
exact backpropagation, Adam updates, a deterministic mini-batch training
loop, and a compact binary model file ("BAGM1") for deployment.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, Normalizer, fit_normalizer

DEFAULT_LAYER_SIZES = (13, 15, 20, 25, 30, 60, 5)

# Saturated softmax outputs would send log() to -inf; clamp instead.
LOG_CLAMP = 1e-12

MODEL_MAGIC = b"BAGM"
MODEL_VERSION = 1


class ModelFormatError(Exception):
    """Base class for model file problems."""


class BadMagic(ModelFormatError):
    pass


class UnsupportedVersion(ModelFormatError):
    pass


class TruncatedStream(ModelFormatError):
    pass


class ShapeMismatch(ModelFormatError):
    pass


class BadModelChecksum(ModelFormatError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Layer widths of the network; hidden layers are ReLU, output is softmax."""

    layer_sizes: tuple = DEFAULT_LAYER_SIZES

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 3:
            raise ValueError("need input, at least one hidden, and output layer")
        if any(s < 1 for s in sizes):
            raise ValueError("layer sizes must be positive")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def input_width(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_width(self) -> int:
        return self.layer_sizes[-1]


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 128
    epochs: int = 10
    lam: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1, beta2 must be in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")


@dataclass
class ModelParams:
    """Weights, biases, and the feature normalizer baked in at training time.

    weights[l] has shape (s_{l+1}, s_l); biases[l] has length s_{l+1}.
    """

    weights: list
    biases: list
    normalizer: Normalizer

    @property
    def layer_sizes(self) -> tuple:
        return tuple([self.weights[0].shape[1]] + [w.shape[0] for w in self.weights])

    def copy(self) -> "ModelParams":
        return ModelParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            Normalizer(self.normalizer.mean.copy(), self.normalizer.std.copy()),
        )


@dataclass
class AdamState:
    t: int = 0
    m_w: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_b: list = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(
            t=0,
            m_w=[np.zeros_like(w) for w in params.weights],
            v_w=[np.zeros_like(w) for w in params.weights],
            m_b=[np.zeros_like(b) for b in params.biases],
            v_b=[np.zeros_like(b) for b in params.biases],
        )


@dataclass
class TrainReport:
    epoch_losses: list
    train_accuracy: float
    test_accuracy: float | None
    confusion: np.ndarray


def relu(z):
    """Elementwise max(z, 0)."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("relu input must be finite")
    return np.maximum(z, 0.0)


def softmax(z):
    """Normalize logits into a probability vector (max-subtracted for safety)."""
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise ValueError("softmax input must be non-empty")
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input must be finite")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def init_params(spec: ModelSpec, rng: np.random.Generator,
                normalizer: Normalizer | None = None) -> ModelParams:
    """He-style uniform init for hidden layers from the given generator;
    the output layer and all biases start at zero so the short default
    training budget goes into learning a clean readout."""
    weights, biases = [], []
    sizes = spec.layer_sizes
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if i == len(sizes) - 2:
            weights.append(np.zeros((fan_out, fan_in)))
        else:
            limit = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    if normalizer is None:
        normalizer = Normalizer(np.zeros(sizes[0]), np.ones(sizes[0]))
    return ModelParams(weights, biases, normalizer)


def forward(params: ModelParams, x):
    """Return the per-layer activations; the last entry is the output vector.

    Expects already-normalized features. Accepts a single vector or a
    (batch, width) matrix.
    """
    a = np.asarray(x, dtype=float)
    if a.shape[-1] != params.weights[0].shape[1]:
        raise ValueError(
            f"feature width {a.shape[-1]} != model input width "
            f"{params.weights[0].shape[1]}")
    activations = [a]
    n_layers = len(params.weights)
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        a = softmax(z) if l == n_layers - 1 else np.maximum(z, 0.0)
        activations.append(a)
    return activations


def _one_hot(labels, k: int):
    y = np.zeros((len(labels), k))
    y[np.arange(len(labels)), labels] = 1.0
    return y


def _batch_xy(params: ModelParams, batch):
    """Accept a Dataset or an (X, Y-one-hot) pair; X is pre-normalized."""
    if isinstance(batch, Dataset):
        x = batch.features
        y = _one_hot(batch.labels, params.weights[-1].shape[0])
        return x, y
    x, y = batch
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float)


def loss(params: ModelParams, batch, lam: float = 0.0) -> float:
    """Per-unit binary cross-entropy against the softmax outputs, plus an
    L2 penalty on weights (biases excluded)."""
    x, y = _batch_xy(params, batch)
    m = x.shape[0]
    if m == 0:
        raise ValueError("empty batch")
    if not np.all((y == 0) | (y == 1)) or not np.allclose(y.sum(axis=1), 1.0):
        raise ValueError("labels must be one-hot")
    p = forward(params, x)[-1]
    p = np.clip(p, LOG_CLAMP, 1.0 - LOG_CLAMP)
    data = -np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)) / m
    reg = lam / (2.0 * m) * sum(float(np.sum(w * w)) for w in params.weights)
    return float(data + reg)


def backward(params: ModelParams, batch, lam: float = 0.0):
    """Analytic gradient of `loss` for every weight and bias.

    Returns (weight_grads, bias_grads) shaped like the parameters.
    """
    x, y = _batch_xy(params, batch)
    m = x.shape[0]
    if m == 0:
        raise ValueError("empty batch")
    activations = forward(params, x)
    p = activations[-1]
    pc = np.clip(p, LOG_CLAMP, 1.0 - LOG_CLAMP)
    # d(data loss)/dp, then through the softmax Jacobian.
    g_p = -(y / pc - (1.0 - y) / (1.0 - pc)) / m
    dz = p * (g_p - np.sum(g_p * p, axis=1, keepdims=True))

    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    for l in range(len(params.weights) - 1, -1, -1):
        a_prev = activations[l]
        grad_w[l] = dz.T @ a_prev + (lam / m) * params.weights[l]
        grad_b[l] = dz.sum(axis=0)
        if l > 0:
            da = dz @ params.weights[l]
            dz = da * (activations[l] > 0)
    return grad_w, grad_b


def adam_step(params: ModelParams, state: AdamState, grads, hyper: Hyperparams):
    """One bias-corrected Adam update; mutates params and state in place."""
    grad_w, grad_b = grads
    if len(grad_w) != len(params.weights):
        raise ValueError("gradient/parameter layer count mismatch")
    state.t += 1
    t = state.t
    b1, b2 = hyper.beta1, hyper.beta2
    lr, eps = hyper.learning_rate, hyper.epsilon
    for arrays, m_s, v_s, g_s in (
        (params.weights, state.m_w, state.v_w, grad_w),
        (params.biases, state.m_b, state.v_b, grad_b),
    ):
        for i, (p, g) in enumerate(zip(arrays, g_s)):
            if p.shape != g.shape:
                raise ValueError("gradient shape mismatch")
            m_s[i] = b1 * m_s[i] + (1 - b1) * g
            v_s[i] = b2 * v_s[i] + (1 - b2) * g * g
            m_hat = m_s[i] / (1 - b1 ** t)
            v_hat = v_s[i] / (1 - b2 ** t)
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def train(train_set: Dataset, spec: ModelSpec, hyper: Hyperparams,
          test_set: Dataset | None = None):
    """Mini-batch Adam training; deterministic given (dataset, spec, hyper).

    Fits a z-score normalizer on the training set and stores it on the model.
    Returns (ModelParams, TrainReport); the confusion matrix in the report is
    computed on test_set when given, else on the training set.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if train_set.features.shape[1] != spec.input_width:
        raise ValueError(
            f"dataset width {train_set.features.shape[1]} != spec input "
            f"width {spec.input_width}")

    norm = fit_normalizer(train_set)
    x_all = norm.apply(train_set.features)
    y_all = _one_hot(train_set.labels, spec.output_width)

    rng = np.random.default_rng(hyper.seed)
    params = init_params(spec, rng, normalizer=norm)
    state = AdamState.zeros_like(params)

    n = len(train_set)
    epoch_losses = []
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            grads = backward(params, (x_all[idx], y_all[idx]), hyper.lam)
            adam_step(params, state, grads, hyper)
        epoch_losses.append(loss(params, (x_all, y_all), hyper.lam))

    train_acc, _ = evaluate(params, train_set)
    if test_set is not None:
        test_acc, confusion = evaluate(params, test_set)
    else:
        test_acc, (_, confusion) = None, evaluate(params, train_set)
    return params, TrainReport(epoch_losses, train_acc, test_acc, confusion)


def predict(params: ModelParams, raw_features):
    """Classify one raw (un-normalized) feature vector.

    Returns (class index, probability vector); argmax ties break toward the
    lowest class index.
    """
    x = np.asarray(raw_features, dtype=float)
    if x.ndim != 1 or x.shape[0] != params.weights[0].shape[1]:
        raise ValueError("feature width mismatch")
    probs = forward(params, params.normalizer.apply(x))[-1]
    return int(np.argmax(probs)), probs


def evaluate(params: ModelParams, dataset: Dataset):
    """Accuracy and confusion matrix (rows = true class, cols = predicted)."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    k = params.weights[-1].shape[0]
    x = params.normalizer.apply(dataset.features)
    preds = np.argmax(forward(params, x)[-1], axis=1)
    confusion = np.zeros((k, k), dtype=int)
    for true, pred in zip(dataset.labels, preds):
        confusion[true, pred] += 1
    accuracy = float(np.trace(confusion)) / len(dataset)
    return accuracy, confusion


def _f32_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def export_model(params: ModelParams, spec: ModelSpec, vocabulary) -> bytes:
    """Serialize to the BAGM1 binary format (f32 payload, CRC32 trailer)."""
    sizes = spec.layer_sizes
    if tuple(params.layer_sizes) != sizes:
        raise ShapeMismatch("params do not match spec layer sizes")
    names = list(vocabulary)
    if len(names) != spec.output_width:
        raise ShapeMismatch("class count does not match output width")
    out = bytearray()
    out += MODEL_MAGIC
    out += struct.pack("<BB", MODEL_VERSION, len(sizes))
    out += struct.pack(f"<{len(sizes)}I", *sizes)
    out += struct.pack("<B", len(names))
    for name in names:
        raw = name.encode("utf-8")
        out += struct.pack("<B", len(raw)) + raw
    out += _f32_bytes(params.normalizer.mean)
    out += _f32_bytes(params.normalizer.std)
    for w, b in zip(params.weights, params.biases):
        out += _f32_bytes(w)
        out += _f32_bytes(b)
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedStream(f"need {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def import_model(data: bytes):
    """Parse a BAGM1 stream; returns (ModelParams, ModelSpec, vocabulary)."""
    if len(data) < 4:
        raise TruncatedStream("stream shorter than magic")
    if data[:4] != MODEL_MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    if len(data) < 8:
        raise TruncatedStream("stream too short for header")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) != stored_crc:
        raise BadModelChecksum("CRC32 mismatch")

    r = _Reader(data[:-4])
    r.take(4)  # magic
    version, n_layers = struct.unpack("<BB", r.take(2))
    if version != MODEL_VERSION:
        raise UnsupportedVersion(f"version {version}")
    if n_layers < 3:
        raise ShapeMismatch("need at least 3 layers")
    sizes = struct.unpack(f"<{n_layers}I", r.take(4 * n_layers))
    (k,) = struct.unpack("<B", r.take(1))
    if k != sizes[-1]:
        raise ShapeMismatch(f"class count {k} != output width {sizes[-1]}")
    names = []
    for _ in range(k):
        (n,) = struct.unpack("<B", r.take(1))
        names.append(r.take(n).decode("utf-8"))
    width = sizes[0]
    mean = np.frombuffer(r.take(4 * width), dtype="<f4").astype(float)
    std = np.frombuffer(r.take(4 * width), dtype="<f4").astype(float)
    if np.any(std <= 0):
        raise ShapeMismatch("normalizer stddev must be positive")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(r.take(4 * fan_in * fan_out), dtype="<f4")
        weights.append(w.astype(float).reshape(fan_out, fan_in))
        biases.append(np.frombuffer(r.take(4 * fan_out), dtype="<f4").astype(float))
    if r.pos != len(r.data):
        raise ShapeMismatch(f"{len(r.data) - r.pos} trailing bytes")
    params = ModelParams(weights, biases, Normalizer(mean, std))
    return params, ModelSpec(sizes), tuple(names)
