"""A small numpy neural network: 1-D convolutions, dense layers, Adam.

Inputs are ``(N, D)`` matrices (length ``N``, ``D`` channels) or batches of
shape ``(B, N, D)``. Conv1D layers slide along the length axis with valid
padding and stride 1. The first dense layer flattens its ``(length, channels)``
input row-major (channel index fastest).

The training loss follows the output activation: summed binary cross-entropy
for ``sigmoid`` outputs, categorical cross-entropy for ``softmax`` outputs.

A model may carry a fixed per-channel input standardisation
(``input_mean``, ``input_std``) that is applied before the first layer.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from mosel.container import read_container, write_container

logger = logging.getLogger(__name__)

EPS_CLAMP = 1e-12
ACTIVATIONS = ("relu", "sigmoid", "softmax", "none")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str                 # "conv1d" or "dense"
    units: int                # filters for conv1d, neurons for dense
    activation: str = "relu"
    filter_size: int = 1

    def __post_init__(self):
        if self.kind not in ("conv1d", "dense"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.units < 1 or self.filter_size < 1:
            raise ValueError("units and filter_size must be >= 1")


@dataclass
class NNModel:
    layers: list[LayerSpec]
    input_shape: tuple[int, int]
    weights: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    input_mean: np.ndarray | None = None   # per input channel, not trained
    input_std: np.ndarray | None = None

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.layers = list(self.layers)
        layer_shapes(self)  # validates composition
        for name in ("input_mean", "input_std"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.shape != (self.input_shape[1],):
                    raise ValueError(f"{name} must have one entry per input channel")
                setattr(self, name, v)

    @property
    def output_activation(self) -> str:
        return self.layers[-1].activation

    def copy(self) -> "NNModel":
        return NNModel(self.layers, self.input_shape, [(k.copy(), b.copy()) for k, b in self.weights],
                       None if self.input_mean is None else self.input_mean.copy(),
                       None if self.input_std is None else self.input_std.copy())


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-3
    epochs: int = 400
    batch_size: int = 128
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("invalid training configuration")


@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]
    epoch: int = 0


# ----------------------------------------------------------------------------
# architecture


def layer_shapes(model: NNModel) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Per layer ``(kernel_shape, output_shape)``; raises if layers do not compose."""
    shape: tuple[int, ...] = model.input_shape
    out = []
    for i, spec in enumerate(model.layers):
        if spec.kind == "conv1d":
            if len(shape) != 2:
                raise ValueError(f"layer {i}: conv1d after a dense layer")
            length, channels = shape
            if spec.filter_size > length:
                raise ValueError(f"layer {i}: filter of size {spec.filter_size} longer than input {length}")
            kernel = (spec.filter_size, channels, spec.units)
            shape = (length - spec.filter_size + 1, spec.units)
        else:
            kernel = (int(np.prod(shape)), spec.units)
            shape = (spec.units,)
        if spec.activation == "softmax" and i != len(model.layers) - 1:
            raise ValueError("softmax is only supported on the output layer")
        out.append((kernel, shape))
    if not out:
        raise ValueError("model has no layers")
    return out


def param_count(model: NNModel) -> int:
    return sum(int(np.prod(k)) + k[-1] for k, _ in layer_shapes(model))


def proposed_net(n: int, d: int, filters: int = 8, filter_size: int = 3) -> NNModel:
    """Conv1D(F, Q) -> Conv1D(1, Q) -> Dense(F) -> Dense(F) -> Dense(N, sigmoid)."""
    layers = [
        LayerSpec("conv1d", filters, "relu", filter_size),
        LayerSpec("conv1d", 1, "relu", filter_size),
        LayerSpec("dense", filters, "relu"),
        LayerSpec("dense", filters, "relu"),
        LayerSpec("dense", n, "sigmoid"),
    ]
    return NNModel(layers, (n, d))


def dense_net(n: int, d: int, filters: int = 8, n_out: int | None = None,
              output_activation: str = "sigmoid") -> NNModel:
    """Two hidden dense layers on the flattened input (the ECNet-style baseline)."""
    layers = [
        LayerSpec("dense", filters, "relu"),
        LayerSpec("dense", filters, "relu"),
        LayerSpec("dense", n if n_out is None else n_out, output_activation),
    ]
    return NNModel(layers, (n, d))


def proposed_param_formula(n: int, d: int, f: int, q: int) -> int:
    return f * f + f * (2 * n + q * (d - 1) + 5) + n + 1


def dense_param_formula(n: int, d: int, f: int) -> int:
    return f * f + f * (n * (d + 1) + 2) + n


# ----------------------------------------------------------------------------
# initialisation


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Zero-mean normal draws with anything beyond two standard deviations redrawn."""
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def init_weights(model: NNModel, seed: int) -> NNModel:
    """Fresh copy of ``model`` with truncated-normal kernels (std ``sqrt(1/fan_in)``) and zero biases."""
    rng = np.random.default_rng(seed)
    weights = []
    for kernel, _ in layer_shapes(model):
        fan_in = int(np.prod(kernel[:-1]))
        weights.append((truncated_normal(rng, kernel, np.sqrt(1.0 / fan_in)), np.zeros(kernel[-1])))
    return NNModel(model.layers, model.input_shape, weights, model.input_mean, model.input_std)


def fit_input_scaling(model: NNModel, x) -> NNModel:
    """Copy of ``model`` that standardises each input channel by its mean and std over ``x``.

    ``x`` is a ``(B, N, D)`` batch; statistics pool samples and positions.
    Constant channels get a unit scale.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[1:] != model.input_shape:
        raise ValueError("expected a (B, N, D) batch matching the model input")
    out = model.copy()
    out.input_mean = x.mean(axis=(0, 1))
    std = x.std(axis=(0, 1))
    out.input_std = np.where(std > 0, std, 1.0)
    return out


# ----------------------------------------------------------------------------
# forward / backward


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _activate(z, name):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "softmax":
        return _softmax(z)
    return z


def _conv_forward(x, kernel, bias):
    q = kernel.shape[0]
    windows = np.lib.stride_tricks.sliding_window_view(x, q, axis=1)  # (B, T, C, Q)
    return np.einsum("btcq,qcf->btf", windows, kernel) + bias


def _conv_backward(x, kernel, dz):
    q, t = kernel.shape[0], dz.shape[1]
    windows = np.lib.stride_tricks.sliding_window_view(x, q, axis=1)
    dkernel = np.einsum("btcq,btf->qcf", windows, dz)
    dx = np.zeros_like(x)
    for j in range(q):
        dx[:, j:j + t, :] += dz @ kernel[j].T
    return dkernel, dz.sum(axis=(0, 1)), dx


def _as_batch(model: NNModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[1:] != model.input_shape:
        raise ValueError(f"input shape {x.shape[1:]} does not match model input {model.input_shape}")
    if model.input_mean is not None:
        x = x - model.input_mean
    if model.input_std is not None:
        x = x / model.input_std
    return x, single


def _forward_cache(model: NNModel, x: np.ndarray):
    inputs, pre = [], []
    a = x
    for spec, (kernel, bias) in zip(model.layers, model.weights):
        if spec.kind == "conv1d":
            inputs.append(a)
            z = _conv_forward(a, kernel, bias)
        else:
            a = a.reshape(a.shape[0], -1)
            inputs.append(a)
            z = a @ kernel + bias
        pre.append(z)
        a = _activate(z, spec.activation)
    return inputs, pre, a


def forward(model: NNModel, x) -> np.ndarray:
    """Network output for one ``(N, D)`` input or a ``(B, N, D)`` batch."""
    if not model.weights:
        raise ValueError("model has no weights; call init_weights first")
    xb, single = _as_batch(model, x)
    out = _forward_cache(model, xb)[2]
    return out[0] if single else out


def dead_layers(model: NNModel, x) -> list[int]:
    """Indices of ReLU layers whose whole output is zero for every sample in ``x``.

    Past such a layer the network computes a constant and no gradient reaches
    the layers before it, so training cannot recover.
    """
    xb, _ = _as_batch(model, x)
    _, pre, _ = _forward_cache(model, xb)
    return [i for i, (spec, z) in enumerate(zip(model.layers, pre))
            if spec.activation == "relu" and not np.any(z > 0)]


def loss_bce(scores, labels) -> float:
    """Binary cross-entropy summed over output neurons (and over a batch, if given)."""
    p = np.clip(np.asarray(scores, dtype=float), EPS_CLAMP, 1.0 - EPS_CLAMP)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise ValueError("scores and labels differ in shape")
    return float(-np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def loss_cce(scores, one_hot) -> float:
    """Categorical cross-entropy ``-ln p_true`` (summed over a batch, if given)."""
    p = np.clip(np.asarray(scores, dtype=float), EPS_CLAMP, 1.0)
    y = np.asarray(one_hot, dtype=float)
    if p.shape != y.shape:
        raise ValueError("scores and labels differ in shape")
    return float(-np.sum(y * np.log(p)))


def model_loss(model: NNModel, scores, labels) -> float:
    if model.output_activation == "sigmoid":
        return loss_bce(scores, labels)
    if model.output_activation == "softmax":
        return loss_cce(scores, labels)
    raise ValueError("loss defined only for sigmoid or softmax outputs")


def backward(model: NNModel, x, labels) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Total loss over the batch and its exact gradient for every kernel and bias."""
    if model.output_activation not in ("sigmoid", "softmax"):
        raise ValueError("loss defined only for sigmoid or softmax outputs")
    xb, single = _as_batch(model, x)
    y = np.asarray(labels, dtype=float)
    if single:
        y = y[None]
    inputs, pre, out = _forward_cache(model, xb)
    if y.shape != out.shape:
        raise ValueError(f"labels of shape {y.shape} do not match outputs {out.shape}")
    loss = model_loss(model, out, y)

    # sigmoid+BCE and softmax+CCE share the same output delta
    dz = out - y
    grads: list = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        spec = model.layers[i]
        kernel, _ = model.weights[i]
        a = inputs[i]
        if spec.kind == "conv1d":
            dk, db, da = _conv_backward(a, kernel, dz)
        else:
            dk, db = a.T @ dz, dz.sum(axis=0)
            da = dz @ kernel.T
        grads[i] = (dk, db)
        if i == 0:
            break
        prev = model.layers[i - 1]
        da = da.reshape(pre[i - 1].shape)
        if prev.activation == "relu":
            dz = da * (pre[i - 1] > 0)
        elif prev.activation == "sigmoid":
            s = _sigmoid(pre[i - 1])
            dz = da * s * (1.0 - s)
        else:
            dz = da
    return loss, grads


# ----------------------------------------------------------------------------
# training


def new_adam_state(model: NNModel) -> AdamState:
    zeros = [np.zeros_like(p) for kb in model.weights for p in kb]
    return AdamState(step=0, m=zeros, v=[z.copy() for z in zeros])


def train(model: NNModel, x, y, cfg: TrainConfig, state: AdamState | None = None,
          callback=None) -> tuple[NNModel, list[float], AdamState]:
    """Mini-batch Adam on the mean per-sample loss.

    Epoch ``e`` shuffles with a generator seeded by ``(cfg.seed, e)``, so a run
    resumed from a saved ``state`` continues exactly like an uninterrupted one.

    Returns:
        The trained model (a copy), the mean per-sample loss of every epoch
        run, and the optimizer state to resume from.

    Raises:
        TrainingDiverged: if a mini-batch loss becomes non-finite.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("empty training set")
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs and labels differ in length")
    model = model.copy()
    state = new_adam_state(model) if state is None else AdamState(
        state.step, [m.copy() for m in state.m], [v.copy() for v in state.v], state.epoch)
    params = [p for kb in model.weights for p in kb]
    b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.learning_rate
    history = []
    n = x.shape[0]
    for _ in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, state.epoch]).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = backward(model, x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {state.epoch}, step {state.step}")
            total += loss
            state.step += 1
            c1 = 1.0 - b1 ** state.step
            c2 = 1.0 - b2 ** state.step
            flat = [g / len(idx) for kb in grads for g in kb]
            for p, g, m, v in zip(params, flat, state.m, state.v):
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        history.append(total / n)
        state.epoch += 1
        if callback is not None:
            callback(state.epoch, history[-1])
        logger.debug("epoch %d loss %.6f", state.epoch, history[-1])
    return model, history, state


# ----------------------------------------------------------------------------
# persistence


def save_model(path, model: NNModel, meta: dict | None = None, state: AdamState | None = None) -> None:
    """Write layer specs, weights and (optionally) optimizer state to a container file."""
    arrays = {}
    for i, (k, b) in enumerate(model.weights):
        arrays[f"layer{i}.kernel"] = k
        arrays[f"layer{i}.bias"] = b
    header = {
        "layers": [asdict(s) for s in model.layers],
        "input_shape": list(model.input_shape),
        "extra": meta or {},
    }
    if model.input_mean is not None:
        arrays["input.mean"] = model.input_mean
    if model.input_std is not None:
        arrays["input.std"] = model.input_std
    if state is not None:
        header["adam"] = {"step": state.step, "epoch": state.epoch}
        for j, (m, v) in enumerate(zip(state.m, state.v)):
            arrays[f"adam.m{j}"] = m
            arrays[f"adam.v{j}"] = v
    write_container(path, "model", header, arrays)


def load_model(path) -> tuple[NNModel, dict, AdamState | None]:
    meta, arrays = read_container(Path(path), kind="model")
    layers = [LayerSpec(**s) for s in meta["layers"]]
    weights = [(arrays[f"layer{i}.kernel"], arrays[f"layer{i}.bias"]) for i in range(len(layers))]
    model = NNModel(layers, tuple(meta["input_shape"]), weights,
                    arrays.get("input.mean"), arrays.get("input.std"))
    state = None
    if "adam" in meta:
        count = 2 * len(layers)
        state = AdamState(
            step=meta["adam"]["step"], epoch=meta["adam"]["epoch"],
            m=[arrays[f"adam.m{j}"] for j in range(count)],
            v=[arrays[f"adam.v{j}"] for j in range(count)],
        )
    return model, meta.get("extra", {}), state

