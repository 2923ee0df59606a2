"""Small dense networks with hand-written backprop and an Adam optimizer.

Everything is float64.  A network stores all of its parameters in one flat
vector; the per-layer weight matrices and bias vectors are views into it, so
an optimizer can update the flat vector in place.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

LEAKY_SLOPE = 0.01
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkLayout:
    input_dim: int
    hidden_widths: tuple[int, ...] = (128, 128)
    output_dim: int = 1
    hidden_activation: str = "leaky-relu"
    output_activation: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        dims = self.dims
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")
        if self.hidden_activation != "leaky-relu" or self.output_activation != "linear":
            raise ValueError("only leaky-relu hidden / linear output layers are supported")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, self.output_dim)

    @property
    def n_params(self) -> int:
        d = self.dims
        return sum(d[i] * d[i + 1] + d[i + 1] for i in range(len(d) - 1))


def _leaky(x):
    # valid because the slope is below 1
    return np.maximum(x, LEAKY_SLOPE * x)


def _leaky_grad(x):
    g = np.full_like(x, LEAKY_SLOPE)
    g[x > 0] = 1.0
    return g


class Network:
    """Feed-forward net: leaky-ReLU hidden layers, linear output.

    Parameters are laid out layer by layer, weights (``in x out``, row-major)
    followed by biases.
    """

    def __init__(self, layout: NetworkLayout, params: np.ndarray | None = None):
        self.layout = layout
        if params is None:
            params = np.zeros(layout.n_params)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (layout.n_params,):
            raise ValueError(
                f"expected {layout.n_params} parameters, got shape {params.shape}")
        self.params = params.copy()
        self._bind_views()

    def _bind_views(self):
        self.weights, self.biases = [], []
        dims = self.layout.dims
        offset = 0
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = self.params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = self.params[offset:offset + fan_out]
            offset += fan_out
            self.weights.append(w)
            self.biases.append(b)

    @classmethod
    def init(cls, layout: NetworkLayout, seed) -> "Network":
        """Glorot-uniform weights from a seeded generator, zero biases."""
        rng = np.random.default_rng(seed)
        net = cls(layout)
        for w in net.weights:
            fan_in, fan_out = w.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w[...] = rng.uniform(-limit, limit, size=w.shape)
        return net

    def copy(self) -> "Network":
        return Network(self.layout, self.params)

    @property
    def n_params(self) -> int:
        return self.params.size

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.layout.input_dim:
            raise ValueError(
                f"input width {x.shape[-1]} does not match network input_dim "
                f"{self.layout.input_dim}")
        return x

    def forward(self, x) -> np.ndarray:
        return self.forward_cached(x)[0]

    def forward_cached(self, x):
        """Forward pass that also returns the per-layer activations for backward()."""
        h = self._check_input(x)
        inputs, pre = [h], []
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < n_layers - 1:
                pre.append(z)
                h = _leaky(z)
                inputs.append(h)
            else:
                h = z
        return h, (inputs, pre)

    def backward(self, x, output_grad, cache=None) -> np.ndarray:
        """Gradient of a loss w.r.t. the flat parameters given dL/d(outputs).

        ``output_grad`` must already carry the caller's batch normalization;
        per-sample contributions are summed.
        """
        if cache is None:
            _, cache = self.forward_cached(x)
        inputs, pre = cache
        g = np.asarray(output_grad, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != (inputs[0].shape[0], self.layout.output_dim):
            raise ValueError(
                f"output_grad shape {g.shape} does not match forward output "
                f"({inputs[0].shape[0]}, {self.layout.output_dim})")
        grad = np.empty_like(self.params)
        gw, gb = _views(grad, self.layout)
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i][...] = inputs[i].T @ g
            gb[i][...] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * _leaky_grad(pre[i - 1])
        return grad

    # -- checkpoints ---------------------------------------------------------

    def header(self) -> dict:
        lay = self.layout
        return {
            "format_version": CHECKPOINT_VERSION,
            "input_dim": lay.input_dim,
            "hidden_widths": list(lay.hidden_widths),
            "output_dim": lay.output_dim,
            "hidden_activation": lay.hidden_activation,
            "output_activation": lay.output_activation,
            "leaky_slope": LEAKY_SLOPE,
        }

    def save(self, path):
        """Write an .npz checkpoint (JSON header + raw float64 parameters)."""
        path = os.fspath(path)
        tmp = path + ".tmp"
        with open(tmp, "wb") as f:
            np.savez(f, header=np.array(json.dumps(self.header())), params=self.params)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "Network":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            params = data["params"]
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        layout = NetworkLayout(
            input_dim=header["input_dim"],
            hidden_widths=tuple(header["hidden_widths"]),
            output_dim=header["output_dim"],
            hidden_activation=header["hidden_activation"],
            output_activation=header["output_activation"],
        )
        return cls(layout, params)


def _views(flat, layout):
    ws, bs = [], []
    offset = 0
    for fan_in, fan_out in zip(layout.dims[:-1], layout.dims[1:]):
        ws.append(flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out))
        offset += fan_in * fan_out
        bs.append(flat[offset:offset + fan_out])
        offset += fan_out
    return ws, bs


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    learning_rate: float = 3e-4

    @classmethod
    def for_network(cls, net: Network, learning_rate: float = 3e-4, **kw) -> "AdamState":
        return cls(np.zeros(net.n_params), np.zeros(net.n_params),
                   learning_rate=learning_rate, **kw)


def adam_step(net: Network, grads: np.ndarray, state: AdamState) -> None:
    """Bias-corrected Adam update, in place on ``net.params`` and ``state``."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != net.params.shape:
        raise ValueError(f"gradient shape {grads.shape} != parameter shape {net.params.shape}")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    m, v = state.first_moment, state.second_moment
    m *= b1
    m += (1 - b1) * grads
    v *= b2
    v += (1 - b2) * (grads * grads)
    m_hat = m / (1 - b1 ** state.step_count)
    denom = np.sqrt(v / (1 - b2 ** state.step_count))
    denom += state.eps
    m_hat /= denom
    m_hat *= state.learning_rate
    net.params -= m_hat


@dataclass
class Trainer:
    """A network bundled with its optimizer state."""
    net: Network
    adam: AdamState = field(default=None)

    def __post_init__(self):
        if self.adam is None:
            self.adam = AdamState.for_network(self.net)

    def step(self, grads):
        adam_step(self.net, grads, self.adam)
