"""Feed-forward ReLU networks: representation, evaluation, gradients, file I/O."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np


class NetworkFormatError(ValueError):
    """Raised for malformed network files or inconsistent layer chains."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Affine:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        b = _frozen(self.bias)
        if w.ndim != 2 or b.ndim != 1:
            raise NetworkFormatError("affine layer needs a 2-d weight matrix and a 1-d bias")
        if w.shape[0] != b.shape[0]:
            raise NetworkFormatError(
                f"affine weight rows ({w.shape[0]}) != bias length ({b.shape[0]})"
            )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class Relu:
    pass


Layer = Union[Affine, Relu]


@dataclass(frozen=True, eq=False)
class Network:
    """An ordered list of affine and ReLU layers ending in a logit vector."""

    layers: Tuple[Layer, ...]
    input_dim: int
    output_dim: int = field(init=False, default=0)

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise NetworkFormatError("network has no layers")
        dim = self.input_dim
        if dim < 1:
            raise NetworkFormatError("input_dim must be positive")
        for i, layer in enumerate(layers):
            if isinstance(layer, Affine):
                if layer.in_dim != dim:
                    raise NetworkFormatError(
                        f"layer {i}: affine expects {layer.in_dim} inputs, previous dimension is {dim}"
                    )
                dim = layer.out_dim
            elif not isinstance(layer, Relu):
                raise NetworkFormatError(f"layer {i}: unknown layer type {type(layer).__name__}")
        if dim < 2:
            raise NetworkFormatError("classification networks need output_dim >= 2")
        object.__setattr__(self, "output_dim", dim)

    @classmethod
    def from_layers(cls, layers: Sequence[Layer], input_dim: Optional[int] = None) -> "Network":
        if input_dim is None:
            first = next((l for l in layers if isinstance(l, Affine)), None)
            if first is None:
                raise NetworkFormatError("cannot infer input_dim without an affine layer")
            input_dim = first.in_dim
        return cls(tuple(layers), int(input_dim))

    def dims(self) -> List[int]:
        """Dimension after each layer, starting with the input."""
        out = [self.input_dim]
        for layer in self.layers:
            out.append(layer.out_dim if isinstance(layer, Affine) else out[-1])
        return out

    @property
    def relu_count(self) -> int:
        dims = self.dims()
        return sum(dims[i] for i, l in enumerate(self.layers) if isinstance(l, Relu))

    def parameters_equal(self, other: "Network") -> bool:
        if len(self.layers) != len(other.layers) or self.input_dim != other.input_dim:
            return False
        for a, b in zip(self.layers, other.layers):
            if type(a) is not type(b):
                return False
            if isinstance(a, Affine) and not (
                np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
            ):
                return False
        return True


def _check_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ValueError(f"expected input of length {net.input_dim}, got shape {x.shape}")
    return x


def forward(net: Network, x) -> List[np.ndarray]:
    """Evaluate ``net`` on ``x`` and return every intermediate vector.

    The returned trace has ``len(net.layers) + 1`` entries; entry 0 is the
    input and the last entry is the logit vector.
    """
    v = _check_input(net, x)
    trace = [v]
    for layer in net.layers:
        if isinstance(layer, Affine):
            v = layer.weights @ v + layer.bias
        else:
            v = np.maximum(v, 0.0)
        trace.append(v)
    return trace


def logits(net: Network, x) -> np.ndarray:
    return forward(net, x)[-1]


def forward_batch(net: Network, X) -> np.ndarray:
    """Logits for every row of ``X``."""
    V = np.asarray(X, dtype=np.float64)
    if V.ndim != 2 or V.shape[1] != net.input_dim:
        raise ValueError(f"expected a (batch, {net.input_dim}) array, got shape {V.shape}")
    for layer in net.layers:
        if isinstance(layer, Affine):
            V = V @ layer.weights.T + layer.bias
        else:
            V = np.maximum(V, 0.0)
    return V


def argmax_label(y) -> int:
    # np.argmax returns the first maximal index, which is the tie-break we want
    return int(np.argmax(np.asarray(y)))


def classify(net: Network, x) -> int:
    return argmax_label(logits(net, x))


def classify_batch(net: Network, X) -> np.ndarray:
    return np.argmax(forward_batch(net, X), axis=1)


def input_gradient(net: Network, x, c) -> np.ndarray:
    """Gradient of ``c . net(x)`` with respect to ``x``.

    ReLU derivative at exactly zero is taken as zero.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (net.output_dim,):
        raise ValueError(f"loss functional must have length {net.output_dim}")
    trace = forward(net, x)
    g = c
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if isinstance(layer, Affine):
            g = layer.weights.T @ g
        else:
            g = g * (trace[i] > 0.0)
    return g


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(net: Network, X, labels) -> float:
    """Mean softmax cross-entropy over a batch."""
    Z = forward_batch(net, np.atleast_2d(X))
    labels = np.atleast_1d(np.asarray(labels))
    shifted = Z - Z.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(logz - shifted[np.arange(len(labels)), labels]))


def batch_parameter_gradients(net: Network, X, labels) -> List[Optional[Tuple[np.ndarray, np.ndarray]]]:
    """Mean cross-entropy gradients over a batch, one entry per layer.

    Affine layers get ``(dW, db)``; ReLU layers get ``None``.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(f"expected a (batch, {net.input_dim}) array")
    if labels.shape != (X.shape[0],):
        raise ValueError("one label per sample required")
    if np.any(labels < 0) or np.any(labels >= net.output_dim):
        raise ValueError(f"labels must lie in [0, {net.output_dim})")
    acts = [X]
    V = X
    for layer in net.layers:
        V = V @ layer.weights.T + layer.bias if isinstance(layer, Affine) else np.maximum(V, 0.0)
        acts.append(V)
    n = X.shape[0]
    delta = softmax(acts[-1])
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    grads: List[Optional[Tuple[np.ndarray, np.ndarray]]] = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if isinstance(layer, Affine):
            grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
            delta = delta @ layer.weights
        else:
            delta = delta * (acts[i] > 0.0)
    return grads


def parameter_gradients(net: Network, x, true_label: int):
    """Cross-entropy gradients for a single sample (see ``batch_parameter_gradients``)."""
    x = _check_input(net, x)
    return batch_parameter_gradients(net, x[None, :], [int(true_label)])


def toy_network() -> Network:
    """The two-input, two-hidden-neuron example network used throughout the tests."""
    return Network.from_layers(
        [
            Affine([[1.0, 2.0], [-3.0, -1.0]], [1.0, -1.0]),
            Relu(),
            Affine([[4.0, 6.0], [-1.0, 3.0]], [0.0, 0.0]),
        ]
    )


# --- text format ---------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def dumps_network(net: Network) -> str:
    lines = [f"nn v1 {net.input_dim} {net.output_dim} {len(net.layers)}"]
    for layer in net.layers:
        if isinstance(layer, Affine):
            lines.append(f"affine {layer.out_dim} {layer.in_dim}")
            for row in layer.weights:
                lines.append(" ".join(_fmt(v) for v in row))
            lines.append(" ".join(_fmt(v) for v in layer.bias))
        else:
            lines.append("relu")
    return "\n".join(lines) + "\n"


def _floats(line: str, n: int, where: str) -> List[float]:
    parts = line.split()
    if len(parts) != n:
        raise NetworkFormatError(f"{where}: expected {n} values, found {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise NetworkFormatError(f"{where}: {exc}") from None


def loads_network(text: str) -> Network:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise NetworkFormatError("empty network file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != "nn" or head[1] != "v1":
        raise NetworkFormatError(f"bad header: {lines[0]!r}")
    try:
        input_dim, output_dim, count = (int(h) for h in head[2:])
    except ValueError:
        raise NetworkFormatError(f"bad header: {lines[0]!r}") from None
    if count < 1:
        raise NetworkFormatError("network file declares no layers")
    pos = 1
    layers: List[Layer] = []
    for k in range(count):
        if pos >= len(lines):
            raise NetworkFormatError(f"truncated file: layer {k} missing")
        tok = lines[pos].split()
        pos += 1
        if tok == ["relu"]:
            layers.append(Relu())
        elif len(tok) == 3 and tok[0] == "affine":
            out, inp = int(tok[1]), int(tok[2])
            if pos + out + 1 > len(lines):
                raise NetworkFormatError(f"truncated file inside layer {k}")
            w = [_floats(lines[pos + r], inp, f"layer {k} row {r}") for r in range(out)]
            b = _floats(lines[pos + out], out, f"layer {k} bias")
            pos += out + 1
            layers.append(Affine(np.array(w, dtype=np.float64).reshape(out, inp), b))
        else:
            raise NetworkFormatError(f"layer {k}: unrecognised line {lines[pos - 1]!r}")
    if pos != len(lines):
        raise NetworkFormatError("trailing content after the last layer")
    net = Network(tuple(layers), input_dim)
    if net.output_dim != output_dim:
        raise NetworkFormatError(f"header output_dim {output_dim} != computed {net.output_dim}")
    return net


def save_network(net: Network, path) -> None:
    Path(path).write_text(dumps_network(net))


def load_network(path) -> Network:
    return loads_network(Path(path).read_text())


def random_network(rng: np.random.Generator, widths: Sequence[int], scale: float = 1.0) -> Network:
    """Random dense ReLU net with layer widths ``widths`` (input first, logits last)."""
    layers: List[Layer] = []
    for i in range(len(widths) - 1):
        layers.append(
            Affine(
                rng.normal(0.0, scale, size=(widths[i + 1], widths[i])),
                rng.normal(0.0, scale, size=widths[i + 1]),
            )
        )
        if i < len(widths) - 2:
            layers.append(Relu())
    return Network(tuple(layers), widths[0])
