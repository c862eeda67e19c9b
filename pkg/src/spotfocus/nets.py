"""Minimal dense-network engine for the focusing agents.

Exactly the layer kinds the agents need: fixed affine input normalization
and output scaling, fully connected, relu, tanh.  Provides reverse-mode
gradients, Adam with per-layer learning rates (a zero rate freezes the
layer), soft target updates, convex parameter blending, and a compact
float32 on-disk format.  Networks are single-threaded objects: forward
caches live on the instance and are consumed by the matching backward.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

LAYER_KINDS = ("normalization", "fully_connected", "relu", "tanh", "scale")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

NET_FORMAT = "spotfocus-net"
NET_VERSION = 1


class SerializationError(ValueError):
    """Malformed, truncated, or version-mismatched network file."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network.

    ``width`` is the output width of a fully connected layer.  For
    normalization, inputs in [lo, hi] map affinely to [-1, 1]; for scale,
    inputs in [-1, 1] map affinely to [lo, hi].
    """

    kind: str
    width: int = 0
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "fully_connected" and self.width < 1:
            raise ValueError("fully_connected width must be >= 1")
        if self.kind in ("normalization", "scale") and not self.hi > self.lo:
            raise ValueError("affine layer needs hi > lo")


class Network:
    """Feed-forward stack of LayerSpecs with Adam state.

    Weights of a fully connected layer with fan-in f are initialized
    uniformly in [-1/sqrt(f), 1/sqrt(f)], biases to zero.
    """

    def __init__(self, in_dim: int, specs, rng: np.random.Generator | None = None,
                 dtype=np.float64):
        self.in_dim = int(in_dim)
        self.specs = tuple(specs)
        self.dtype = np.dtype(dtype)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        dim = self.in_dim
        for spec in self.specs:
            if spec.kind == "fully_connected":
                bound = 1.0 / np.sqrt(dim)
                if rng is None:
                    w = np.zeros((dim, spec.width), dtype=self.dtype)
                else:
                    w = rng.uniform(-bound, bound, size=(dim, spec.width)).astype(self.dtype)
                self.weights.append(w)
                self.biases.append(np.zeros(spec.width, dtype=self.dtype))
                dim = spec.width
        self.out_dim = dim
        self._cache = None
        self.reset_adam()

    @property
    def num_param_layers(self) -> int:
        return len(self.weights)

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def reset_adam(self):
        self.adam_t = 0
        self._m_w = [np.zeros_like(w) for w in self.weights]
        self._v_w = [np.zeros_like(w) for w in self.weights]
        self._m_b = [np.zeros_like(b) for b in self.biases]
        self._v_b = [np.zeros_like(b) for b in self.biases]
        self._scratch_w = [np.empty_like(w) for w in self.weights]
        self._scratch_b = [np.empty_like(b) for b in self.biases]
        self._grad_w = [np.empty_like(w) for w in self.weights]
        self._grad_b = [np.empty_like(b) for b in self.biases]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Run the stack.  ``train=True`` caches activations for backward."""
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        h = x.reshape(1, -1) if single else x
        if h.shape[1] != self.in_dim:
            raise ValueError(f"input width {h.shape[1]} != {self.in_dim}")
        caches = [] if train else None
        k = 0
        for spec in self.specs:
            kind = spec.kind
            if kind == "fully_connected":
                if train:
                    caches.append(h)
                h = h @ self.weights[k] + self.biases[k]
                k += 1
            elif kind == "relu":
                h = np.maximum(h, 0.0)
                if train:
                    caches.append(h)
            elif kind == "tanh":
                h = np.tanh(h)
                if train:
                    caches.append(h)
            elif kind == "normalization":
                center = (spec.lo + spec.hi) / 2.0
                half = (spec.hi - spec.lo) / 2.0
                h = (h - center) / half
            else:  # scale
                center = (spec.lo + spec.hi) / 2.0
                half = (spec.hi - spec.lo) / 2.0
                h = h * half + center
        if train:
            self._cache = caches
        return h[0] if single else h

    def backward(self, dy: np.ndarray, param_grads: bool = True):
        """Backpropagate ``dy`` through the cached forward pass.

        Returns (grads, dx): grads is a list of (dW, db) per fully
        connected layer (None when ``param_grads`` is false; the buffers
        are reused across calls), dx the gradient at the input.
        """
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward(train=True)")
        caches = self._cache
        self._cache = None
        d = np.asarray(dy, dtype=self.dtype)
        if d.ndim == 1:
            d = d.reshape(1, -1)
        k = len(self.weights)
        ci = len(caches)
        for spec in reversed(self.specs):
            kind = spec.kind
            if kind == "fully_connected":
                k -= 1
                ci -= 1
                x = caches[ci]
                if param_grads:
                    np.matmul(x.T, d, out=self._grad_w[k])
                    np.sum(d, axis=0, out=self._grad_b[k])
                d = d @ self.weights[k].T
            elif kind == "relu":
                ci -= 1
                d = d * (caches[ci] > 0.0)
            elif kind == "tanh":
                ci -= 1
                y = caches[ci]
                d = d * (1.0 - y * y)
            elif kind == "normalization":
                d = d / ((spec.hi - spec.lo) / 2.0)
            else:  # scale
                d = d * ((spec.hi - spec.lo) / 2.0)
        grads = list(zip(self._grad_w, self._grad_b)) if param_grads else None
        return grads, d

    def clone(self) -> "Network":
        """Parameter copy with fresh Adam state."""
        other = Network(self.in_dim, self.specs, rng=None, dtype=self.dtype)
        for k in range(len(self.weights)):
            other.weights[k][...] = self.weights[k]
            other.biases[k][...] = self.biases[k]
        return other

    def astype(self, dtype) -> "Network":
        """Clone cast to another float dtype (fresh Adam state)."""
        other = Network(self.in_dim, self.specs, rng=None, dtype=dtype)
        for k in range(len(self.weights)):
            other.weights[k][...] = self.weights[k].astype(dtype)
            other.biases[k][...] = self.biases[k].astype(dtype)
        return other

    def same_architecture(self, other: "Network") -> bool:
        return self.in_dim == other.in_dim and self.specs == other.specs


def adam_step(net: Network, grads, rates) -> None:
    """One Adam update.  ``rates`` is a scalar or one rate per parameter
    layer; a rate of exactly zero freezes that layer (no moment updates).
    Callers are responsible for gradient finiteness (checked cheaply on
    loss scalars in the training loop rather than per tensor here)."""
    rates = np.broadcast_to(np.asarray(rates, dtype=np.float64), (net.num_param_layers,))
    net.adam_t += 1
    bc1 = 1.0 - ADAM_BETA1**net.adam_t
    bc2 = 1.0 - ADAM_BETA2**net.adam_t
    for k, (dw, db) in enumerate(grads):
        lr = float(rates[k])
        if lr == 0.0:
            continue
        for grad, m, v, param, scratch in (
            (dw, net._m_w[k], net._v_w[k], net.weights[k], net._scratch_w[k]),
            (db, net._m_b[k], net._v_b[k], net.biases[k], net._scratch_b[k]),
        ):
            np.multiply(grad, 1.0 - ADAM_BETA1, out=scratch)
            m *= ADAM_BETA1
            m += scratch
            np.multiply(grad, grad, out=scratch)
            scratch *= 1.0 - ADAM_BETA2
            v *= ADAM_BETA2
            v += scratch
            np.divide(v, bc2, out=scratch)
            np.sqrt(scratch, out=scratch)
            scratch += ADAM_EPS
            np.divide(m, scratch, out=scratch)
            scratch *= lr / bc1
            param -= scratch


def soft_update(target: Network, source: Network, tau: float) -> None:
    """target <- tau * source + (1 - tau) * target, elementwise."""
    if not target.same_architecture(source):
        raise ValueError("soft_update across different architectures")
    for k in range(len(target.weights)):
        for tp, sp, scratch in (
            (target.weights[k], source.weights[k], target._scratch_w[k]),
            (target.biases[k], source.biases[k], target._scratch_b[k]),
        ):
            np.multiply(sp, tau, out=scratch)
            tp *= 1.0 - tau
            tp += scratch


def blend_networks(nets, coefficients) -> Network:
    """Convex parameter combination of same-architecture networks."""
    coeff = np.asarray(coefficients, dtype=np.float64)
    if len(nets) == 0 or len(nets) != coeff.size:
        raise ValueError("need one coefficient per network")
    if np.any(coeff < 0.0) or abs(coeff.sum() - 1.0) > 1e-9:
        raise ValueError("coefficients must be nonnegative and sum to 1")
    first = nets[0]
    for net in nets[1:]:
        if not first.same_architecture(net):
            raise ValueError("blend across different architectures")
    out = Network(first.in_dim, first.specs, rng=None, dtype=first.dtype)
    for k in range(len(out.weights)):
        for net, c in zip(nets, coeff):
            out.weights[k] += c * net.weights[k]
            out.biases[k] += c * net.biases[k]
    return out


def build_actor(n_elements: int, fine_tune: bool = False,
                rng: np.random.Generator | None = None, dtype=np.float64) -> Network:
    """Policy network: subarray phase state in, phase action out.

    Stack: normalize [-pi, pi] -> FC(16N) -> relu -> FC(16N) -> relu
    [-> FC(16N) -> relu when ``fine_tune``] -> FC(N) -> tanh -> scale to
    [-pi, pi].
    """
    n = int(n_elements)
    wide = 16 * n
    specs = [
        LayerSpec("normalization", lo=-np.pi, hi=np.pi),
        LayerSpec("fully_connected", width=wide),
        LayerSpec("relu"),
        LayerSpec("fully_connected", width=wide),
        LayerSpec("relu"),
    ]
    if fine_tune:
        specs += [LayerSpec("fully_connected", width=wide), LayerSpec("relu")]
    specs += [
        LayerSpec("fully_connected", width=n),
        LayerSpec("tanh"),
        LayerSpec("scale", lo=-np.pi, hi=np.pi),
    ]
    return Network(n, specs, rng=rng, dtype=dtype)


def build_critic(n_elements: int, fine_tune: bool = False,
                 rng: np.random.Generator | None = None, dtype=np.float64) -> Network:
    """Action-value network over concatenated (state, action).

    Stack: FC(32N) -> relu -> FC(16N) -> tanh [-> FC(16N) -> relu when
    ``fine_tune``] -> FC(1).
    """
    n = int(n_elements)
    specs = [
        LayerSpec("fully_connected", width=32 * n),
        LayerSpec("relu"),
        LayerSpec("fully_connected", width=16 * n),
        LayerSpec("tanh"),
    ]
    if fine_tune:
        specs += [LayerSpec("fully_connected", width=16 * n), LayerSpec("relu")]
    specs += [LayerSpec("fully_connected", width=1)]
    return Network(2 * n, specs, rng=rng, dtype=dtype)


def _spec_line(spec: LayerSpec) -> str:
    if spec.kind == "fully_connected":
        return f"layer fully_connected width={spec.width}"
    if spec.kind in ("normalization", "scale"):
        return f"layer {spec.kind} lo={spec.lo!r} hi={spec.hi!r}"
    return f"layer {spec.kind}"


def _parse_spec_line(line: str) -> LayerSpec:
    parts = line.split()
    if len(parts) < 2 or parts[0] != "layer":
        raise SerializationError(f"bad layer line: {line!r}")
    kind = parts[1]
    kwargs = {}
    for item in parts[2:]:
        key, _, value = item.partition("=")
        if key == "width":
            kwargs["width"] = int(value)
        elif key in ("lo", "hi"):
            kwargs[key] = float(value)
        else:
            raise SerializationError(f"bad layer attribute {item!r}")
    try:
        return LayerSpec(kind, **kwargs)
    except ValueError as exc:
        raise SerializationError(str(exc)) from exc


def save_network(net: Network, path) -> None:
    """Write a network: text manifest, blank line, then the parameter
    tensors as flat little-endian float32 in layer order (W then b)."""
    header = io.StringIO()
    header.write(f"{NET_FORMAT} {NET_VERSION}\n")
    header.write(f"input {net.in_dim}\n")
    for spec in net.specs:
        header.write(_spec_line(spec) + "\n")
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        header.write(f"tensor W{k} {w.shape[0]} {w.shape[1]}\n")
        header.write(f"tensor b{k} {b.shape[0]}\n")
    header.write("\n")
    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("ascii"))
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_network(path, dtype=np.float64) -> Network:
    """Read a network written by save_network.

    Parameters load at float32 precision into ``dtype``; optimizer state
    is not persisted, so the result carries fresh Adam moments.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(b"\n\n")
    if sep < 0:
        raise SerializationError(f"{path}: missing header/payload separator")
    try:
        lines = blob[:sep].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise SerializationError(f"{path}: undecodable header") from exc
    if not lines:
        raise SerializationError(f"{path}: empty header")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != NET_FORMAT:
        raise SerializationError(f"{path}: not a {NET_FORMAT} file")
    if int(magic[1]) != NET_VERSION:
        raise SerializationError(f"{path}: unsupported version {magic[1]}")
    in_dim = None
    specs = []
    shapes = []
    for line in lines[1:]:
        if line.startswith("input "):
            in_dim = int(line.split()[1])
        elif line.startswith("layer "):
            specs.append(_parse_spec_line(line))
        elif line.startswith("tensor "):
            shapes.append(tuple(int(v) for v in line.split()[2:]))
        elif line.strip():
            raise SerializationError(f"{path}: unexpected header line {line!r}")
    if in_dim is None or not specs:
        raise SerializationError(f"{path}: incomplete header")
    net = Network(in_dim, specs, rng=None, dtype=dtype)
    declared = []
    for w, b in zip(net.weights, net.biases):
        declared.append(w.shape)
        declared.append(b.shape)
    if declared != shapes:
        raise SerializationError(f"{path}: tensor shapes do not match the layer stack")
    payload = blob[sep + 2:]
    expected = sum(int(np.prod(s)) for s in shapes) * 4
    if len(payload) != expected:
        raise SerializationError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    offset = 0
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        for arr in (w, b):
            n = arr.size * 4
            flat = np.frombuffer(payload[offset:offset + n], dtype="<f4")
            arr[...] = flat.reshape(arr.shape).astype(dtype)
            offset += n
    return net
