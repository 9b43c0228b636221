"""Multilayer perceptron with an explicit trunk / head parameter split.

The head is exactly the last linear layer (weight ``W_a`` of shape C x D and
a length-C bias); everything before it is the trunk, stored as one flat
float64 vector. Three pass procedures are provided:

* ``forward`` - full pass that also returns a cache for backprop,
* ``cheap_forward`` - activations only, optionally emulating reduced
  precision (float32 arithmetic, widened back to float64),
* ``backward`` - exact gradients from a cache and an output-space residual.

Flat parameter layout (used by checkpoints and by the trainer's flattened
updates): for each trunk layer in order, the weight matrix row-major then
its bias; then the head weight row-major; then the head bias. The augmented
activation convention is ``[a(x); 1]`` with the bias coordinate last.
"""

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, LabelError, StaleCache
from .rng import substream

ACTIVATIONS = ("tanh", "relu", "identity")
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError("input_dim and output_dim must be >= 1")
        if len(self.hidden_widths) == 0:
            raise ConfigError("hidden_widths must be non-empty (the trunk must exist)")
        if any(w < 1 for w in self.hidden_widths):
            raise ConfigError("all hidden widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def last_hidden(self) -> int:
        return self.hidden_widths[-1]

    def trunk_layer_shapes(self) -> list[tuple[int, int]]:
        widths = (self.input_dim,) + self.hidden_widths
        return [(widths[k + 1], widths[k]) for k in range(len(self.hidden_widths))]

    @property
    def trunk_size(self) -> int:
        return sum(o * i + o for o, i in self.trunk_layer_shapes())

    @property
    def head_size(self) -> int:
        return self.output_dim * self.last_hidden + self.output_dim

    @property
    def n_params(self) -> int:
        return self.trunk_size + self.head_size


class Network:
    """Parameter container. Mutation goes through ``set_flat_params`` (or
    ``add_update``), which bumps the version counter used for cache staleness
    checks."""

    def __init__(self, config: NetworkConfig, trunk_params: np.ndarray,
                 head_weight: np.ndarray, head_bias: np.ndarray, version: int = 0):
        self.config = config
        self.trunk_params = np.ascontiguousarray(trunk_params, dtype=np.float64)
        self.head_weight = np.ascontiguousarray(head_weight, dtype=np.float64)
        self.head_bias = np.ascontiguousarray(head_bias, dtype=np.float64)
        self.version = version
        if self.trunk_params.shape != (config.trunk_size,):
            raise DimensionError("trunk parameter vector has the wrong length")
        if self.head_weight.shape != (config.output_dim, config.last_hidden):
            raise DimensionError("head weight has the wrong shape")
        if self.head_bias.shape != (config.output_dim,):
            raise DimensionError("head bias has the wrong length")

    @property
    def trunk_size(self) -> int:
        return self.config.trunk_size

    @property
    def head_size(self) -> int:
        return self.config.head_size

    @property
    def n_params(self) -> int:
        return self.config.n_params

    def trunk_layers(self):
        """Views (W_k, b_k) into the flat trunk vector, in layer order."""
        layers = []
        off = 0
        for out_w, in_w in self.config.trunk_layer_shapes():
            w = self.trunk_params[off:off + out_w * in_w].reshape(out_w, in_w)
            off += out_w * in_w
            b = self.trunk_params[off:off + out_w]
            off += out_w
            layers.append((w, b))
        return layers

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.trunk_params, self.head_weight.ravel(), self.head_bias])

    def set_flat_params(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise DimensionError(
                f"expected {self.n_params} parameters, got {theta.shape}")
        pt = self.trunk_size
        c, d = self.config.output_dim, self.config.last_hidden
        self.trunk_params = np.ascontiguousarray(theta[:pt])
        self.head_weight = np.ascontiguousarray(theta[pt:pt + c * d].reshape(c, d))
        self.head_bias = np.ascontiguousarray(theta[pt + c * d:])
        self.version += 1

    def copy(self) -> "Network":
        return Network(self.config, self.trunk_params.copy(), self.head_weight.copy(),
                       self.head_bias.copy(), self.version)


@dataclass
class ForwardCache:
    version: int
    x: np.ndarray
    pre: list[np.ndarray]   # per trunk layer pre-activations
    act: list[np.ndarray]   # per trunk layer activations; act[-1] is llh


@dataclass
class GradientEstimate:
    trunk_grad: np.ndarray          # (P_T,)
    head_grad: np.ndarray           # (C, D+1), bias column last
    source: str = "true_backward"   # "true_backward" | "predicted"

    def flat(self) -> np.ndarray:
        """Full-parameter gradient in the network's flat layout."""
        c = self.head_grad.shape[0]
        d = self.head_grad.shape[1] - 1
        return np.concatenate([
            self.trunk_grad,
            self.head_grad[:, :d].reshape(c * d),
            self.head_grad[:, d],
        ])


def init_network(cfg: NetworkConfig) -> Network:
    """Glorot-style init: W ~ U(-s, s) with s = sqrt(6/(fan_in+fan_out)),
    biases zero. Deterministic in cfg.seed."""
    rng = substream(cfg.seed, "init")
    parts = []
    for out_w, in_w in cfg.trunk_layer_shapes():
        s = np.sqrt(6.0 / (in_w + out_w))
        parts.append(rng.uniform(-s, s, size=out_w * in_w))
        parts.append(np.zeros(out_w))
    trunk = np.concatenate(parts)
    d, c = cfg.last_hidden, cfg.output_dim
    s = np.sqrt(6.0 / (d + c))
    head_w = rng.uniform(-s, s, size=(c, d))
    head_b = np.zeros(c)
    return Network(cfg, trunk, head_w, head_b)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_deriv(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


def forward(net: Network, x: np.ndarray):
    """Full pass for one example: returns (llh, output, cache)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape != (net.config.input_dim,):
        raise DimensionError(
            f"input has dim {x.shape[0]}, expected {net.config.input_dim}")
    kind = net.config.activation
    pre, act = [], []
    a = x
    for w, b in net.trunk_layers():
        z = w @ a + b
        a = _act(z, kind)
        pre.append(z)
        act.append(a)
    output = net.head_weight @ a + net.head_bias
    return a, output, ForwardCache(net.version, x, pre, act)


def cheap_forward(net: Network, x: np.ndarray, reduce_precision: bool = False):
    """Activations-only pass: returns (llh, output), no backprop cache.

    With reduce_precision the whole pass runs in float32 and the results are
    widened, emulating an inference-mode pass; otherwise the arithmetic is
    identical to ``forward``.
    """
    if not reduce_precision:
        llh, output, _ = forward(net, x)
        return llh, output
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape != (net.config.input_dim,):
        raise DimensionError(
            f"input has dim {x.shape[0]}, expected {net.config.input_dim}")
    kind = net.config.activation
    a = x.astype(np.float32)
    for w, b in net.trunk_layers():
        z = w.astype(np.float32) @ a + b.astype(np.float32)
        a = _act(z, kind).astype(np.float32)
    output = net.head_weight.astype(np.float32) @ a + net.head_bias.astype(np.float32)
    return a.astype(np.float64), output.astype(np.float64)


def loss_and_residual(output: np.ndarray, y, kind: str, smoothing: float = 0.0):
    """Per-example loss and output-space residual.

    squared_scalar / squared_vector: loss = 0.5 ||f(x) - y||^2, residual
    f(x) - y. cross_entropy: softmax probabilities against a smoothed one-hot
    target; the residual p - target is also the exact logit gradient.
    """
    output = np.asarray(output, dtype=np.float64).ravel()
    if kind == "squared_scalar":
        yv = np.asarray(y, dtype=np.float64).ravel()
        if output.shape != (1,) or yv.shape != (1,):
            raise DimensionError("squared_scalar needs scalar output and target")
        r = output - yv
        return 0.5 * float(r @ r), r
    if kind == "squared_vector":
        yv = np.asarray(y, dtype=np.float64).ravel()
        if yv.shape != output.shape:
            raise DimensionError(
                f"target dim {yv.shape} does not match output dim {output.shape}")
        r = output - yv
        return 0.5 * float(r @ r), r
    if kind == "cross_entropy":
        if not 0.0 <= smoothing < 1.0:
            raise ConfigError(f"label smoothing must be in [0,1), got {smoothing}")
        c = output.shape[0]
        label = int(y)
        if not 0 <= label < c:
            raise LabelError(f"class index {label} out of range for {c} classes")
        shifted = output - output.max()
        logp = shifted - np.log(np.exp(shifted).sum())
        p = np.exp(logp)
        target = np.full(c, smoothing / c)
        target[label] += 1.0 - smoothing
        loss = -float(target @ logp)
        return loss, p - target
    raise ConfigError(f"unknown loss kind {kind!r}")


def backward(net: Network, cache: ForwardCache, residual: np.ndarray) -> GradientEstimate:
    """Exact gradients from a forward cache and the output-space residual.

    head_grad is the outer product residual x [llh; 1]; the trunk gradient is
    obtained by backpropagating W_a^T residual through the cached trunk.
    """
    if cache.version != net.version:
        raise StaleCache(
            f"cache from parameter version {cache.version}, network is at {net.version}")
    residual = np.asarray(residual, dtype=np.float64).ravel()
    if residual.shape != (net.config.output_dim,):
        raise DimensionError("residual dim does not match network output dim")

    llh = cache.act[-1]
    aug = np.concatenate([llh, [1.0]])
    head_grad = np.outer(residual, aug)

    kind = net.config.activation
    shapes = net.config.trunk_layer_shapes()
    layers = net.trunk_layers()
    grads = [None] * len(layers)
    delta = net.head_weight.T @ residual
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        dz = delta * _act_deriv(cache.pre[k], cache.act[k], kind)
        a_prev = cache.act[k - 1] if k > 0 else cache.x
        grads[k] = (np.outer(dz, a_prev), dz)
        delta = w.T @ dz

    flat = np.empty(net.trunk_size)
    off = 0
    for (out_w, in_w), (gw, gb) in zip(shapes, grads):
        flat[off:off + out_w * in_w] = gw.reshape(-1)
        off += out_w * in_w
        flat[off:off + out_w] = gb
        off += out_w
    return GradientEstimate(flat, head_grad, source="true_backward")


def save_network(net: Network, path) -> None:
    """Versioned binary checkpoint: config header plus parameters in flat
    layout order. Round-trips bit-exactly."""
    header = json.dumps({
        "format": CHECKPOINT_FORMAT,
        "input_dim": net.config.input_dim,
        "hidden_widths": list(net.config.hidden_widths),
        "output_dim": net.config.output_dim,
        "activation": net.config.activation,
        "seed": net.config.seed,
    })
    with open(path, "wb") as fh:
        np.savez(fh,
                 header=np.frombuffer(header.encode("utf-8"), dtype=np.uint8),
                 trunk_params=net.trunk_params,
                 head_weight=net.head_weight,
                 head_bias=net.head_bias,
                 version=np.int64(net.version))


def load_network(path) -> Network:
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"unsupported checkpoint format {header.get('format')}")
        cfg = NetworkConfig(
            input_dim=header["input_dim"],
            hidden_widths=tuple(header["hidden_widths"]),
            output_dim=header["output_dim"],
            activation=header["activation"],
            seed=header["seed"],
        )
        return Network(cfg, z["trunk_params"], z["head_weight"], z["head_bias"],
                       version=int(z["version"]))
