"""Small numpy networks with hand-written reverse-mode gradients.

Everything is float64. Weight matrices are stored ``(n_in, n_out)`` so a
batch ``x`` of shape ``(B, n_in)`` maps through ``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    """Backward was called with activations cached before a parameter update."""


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits given the gradient w.r.t. softmax outputs."""
    return probs * (grad_probs - (probs * grad_probs).sum(axis=-1, keepdims=True))


def _init_layer(rng: np.random.Generator, n_in: int, n_out: int, scale: float = 1.0):
    bound = scale / np.sqrt(n_in)
    return rng.uniform(-bound, bound, size=(n_in, n_out)), rng.uniform(-bound, bound, size=n_out)


@dataclass
class DenseCache:
    inputs: list  # input to every layer
    pre: list  # pre-activation of every layer
    output: np.ndarray
    version: int
    squeeze: bool


class DenseNet:
    """ReLU multilayer perceptron with a linear or softmax head."""

    def __init__(self, layer_sizes: Sequence[int], head: str = "linear",
                 rng: Optional[np.random.Generator] = None, out_scale: float = 1.0):
        if head not in ("linear", "softmax"):
            raise ValueError(f"unknown head {head!r}")
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = [int(n) for n in layer_sizes]
        self.head = head
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights, self.biases = [], []
        n_layers = len(self.layer_sizes) - 1
        for i, (n_in, n_out) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            W, b = _init_layer(rng, n_in, n_out, out_scale if i == n_layers - 1 else 1.0)
            self.weights.append(W)
            self.biases.append(b)
        self._version = 0

    # parameters are exposed as [W0, b0, W1, b1, ...]; in-place edits must call touch()
    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def touch(self) -> None:
        self._version += 1

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    @property
    def arch(self) -> str:
        return f"dense {','.join(map(str, self.layer_sizes))} head={self.head}"

    def copy(self) -> "DenseNet":
        net = DenseNet.__new__(DenseNet)
        net.layer_sizes = list(self.layer_sizes)
        net.head = self.head
        net.weights = [W.copy() for W in self.weights]
        net.biases = [b.copy() for b in self.biases]
        net._version = 0
        return net

    def zero_(self) -> "DenseNet":
        for p in self.params:
            p[...] = 0.0
        self.touch()
        return self

    def forward(self, x) -> tuple[np.ndarray, DenseCache]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.layer_sizes[0]:
            raise ShapeError(f"expected input width {self.layer_sizes[0]}, got shape {x.shape}")
        inputs, pre = [], []
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ W + b
            pre.append(z)
            h = np.maximum(z, 0.0) if i < last else z
        out = softmax(h) if self.head == "softmax" else h
        cache = DenseCache(inputs, pre, out, self._version, squeeze)
        return (out[0] if squeeze else out), cache

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def logits(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self.logits_one(x)
        return self.forward(x)[1].pre[-1]

    def logits_one(self, x) -> np.ndarray:
        """Final pre-activation for one input through the selected kernel."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.layer_sizes[0],):
            raise ShapeError(f"expected input width {self.layer_sizes[0]}, got shape {x.shape}")
        return kernels.dense_forward_one(x, self.weights, self.biases)

    def probs_one(self, x) -> np.ndarray:
        z = self.logits_one(x)
        return softmax(z) if self.head == "softmax" else z

    def backward(self, cache: DenseCache, grad_output, wrt: str = "output",
                 need_input_grad: bool = False):
        """Parameter gradients ``[dW0, db0, ...]`` for a given output gradient.

        ``wrt="logits"`` skips the softmax Jacobian when the caller already
        holds the gradient w.r.t. the head's pre-activation. With
        ``need_input_grad`` the gradient w.r.t. the network input is
        returned as a second value.
        """
        if cache.version != self._version:
            raise StaleCacheError("parameters changed since this forward pass")
        g = np.asarray(grad_output, dtype=np.float64)
        if cache.squeeze and g.ndim == 1:
            g = g[None, :]
        if g.shape != cache.pre[-1].shape:
            raise ShapeError(f"output gradient shape {g.shape} != {cache.pre[-1].shape}")
        if self.head == "softmax" and wrt == "output":
            g = softmax_backward(cache.output, g)
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (cache.pre[i] > 0.0)
            grads[2 * i] = cache.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0 or need_input_grad:
                g = g @ self.weights[i].T
        if need_input_grad:
            return grads, (g[0] if cache.squeeze else g)
        return grads

    # -- flat views / serialization ---------------------------------------
    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for p in self.params:
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size
        self.touch()

    def to_blocks(self, prefix: str) -> dict[str, np.ndarray]:
        blocks = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            blocks[f"{prefix}.W{i}"] = W
            blocks[f"{prefix}.b{i}"] = b
        return blocks

    @classmethod
    def from_blocks(cls, arch: str, blocks: dict, prefix: str) -> "DenseNet":
        kind, sizes, head = arch.split()
        if kind != "dense":
            raise ValueError(f"not a dense architecture: {arch!r}")
        net = cls([int(s) for s in sizes.split(",")], head=head.split("=", 1)[1])
        for i in range(len(net.weights)):
            net.weights[i] = np.array(blocks[f"{prefix}.W{i}"], dtype=np.float64)
            net.biases[i] = np.array(blocks[f"{prefix}.b{i}"], dtype=np.float64)
        return net


# -- gated recurrent cell -----------------------------------------------------

_GRU_NAMES = ("Wz", "Wr", "Wn", "Uz", "Ur", "Un", "bz", "br", "bn")


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


@dataclass
class RecurrentCache:
    xs: np.ndarray
    hs: np.ndarray  # (T+1, B, H), hs[0] is the initial state
    z: list = field(default_factory=list)
    r: list = field(default_factory=list)
    n: list = field(default_factory=list)
    readout: Optional[DenseCache] = None
    version: int = 0


class RecurrentNet:
    """Gated recurrent cell (update/reset gates) followed by a DenseNet readout.

    ``h' = (1 - z) * n + z * h`` with ``n = tanh(x Wn + (r * h) Un + bn)``.
    """

    def __init__(self, input_size: int, hidden_size: int, readout_sizes: Sequence[int],
                 head: str = "softmax", rng: Optional[np.random.Generator] = None,
                 out_scale: float = 1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_size = int(input_size)
        self.hidden_size = H = int(hidden_size)
        bound = 1.0 / np.sqrt(H)
        self.cell = {}
        for name in _GRU_NAMES:
            shape = {"W": (input_size, H), "U": (H, H), "b": (H,)}[name[0]]
            self.cell[name] = rng.uniform(-bound, bound, size=shape)
        self.readout = DenseNet([H, *readout_sizes], head=head, rng=rng, out_scale=out_scale)
        self._version = 0

    @property
    def params(self) -> list[np.ndarray]:
        return [self.cell[k] for k in _GRU_NAMES] + self.readout.params

    def touch(self) -> None:
        self._version += 1
        self.readout.touch()

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    @property
    def arch(self) -> str:
        sizes = ",".join(map(str, self.readout.layer_sizes[1:]))
        return f"gru {self.input_size},{self.hidden_size} readout={sizes} head={self.readout.head}"

    def copy(self) -> "RecurrentNet":
        net = RecurrentNet.__new__(RecurrentNet)
        net.input_size, net.hidden_size = self.input_size, self.hidden_size
        net.cell = {k: v.copy() for k, v in self.cell.items()}
        net.readout = self.readout.copy()
        net._version = 0
        return net

    def zero_(self) -> "RecurrentNet":
        for p in self.params:
            p[...] = 0.0
        self.touch()
        return self

    def initial_state(self, batch: Optional[int] = None) -> np.ndarray:
        return np.zeros(self.hidden_size if batch is None else (batch, self.hidden_size))

    def step_one(self, x, h) -> np.ndarray:
        """Advance one step for a single input through the selected kernel."""
        c = self.cell
        return kernels.gru_step_one(np.ascontiguousarray(x, dtype=np.float64),
                                    np.ascontiguousarray(h, dtype=np.float64),
                                    c["Wz"], c["Wr"], c["Wn"], c["Uz"], c["Ur"], c["Un"],
                                    c["bz"], c["br"], c["bn"])

    def forward_hidden(self, xs, h0=None) -> tuple[np.ndarray, RecurrentCache]:
        """Run the cell over ``xs`` of shape (T, B, input) or (T, input)."""
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim == 2:
            xs = xs[:, None, :]
        if xs.ndim != 3 or xs.shape[2] != self.input_size:
            raise ShapeError(f"expected (T, B, {self.input_size}) inputs, got {xs.shape}")
        T, B, _ = xs.shape
        c = self.cell
        hs = np.empty((T + 1, B, self.hidden_size))
        hs[0] = self.initial_state(B) if h0 is None else h0
        cache = RecurrentCache(xs, hs, version=self._version)
        for t in range(T):
            x, h = xs[t], hs[t]
            z = _sigmoid(x @ c["Wz"] + h @ c["Uz"] + c["bz"])
            r = _sigmoid(x @ c["Wr"] + h @ c["Ur"] + c["br"])
            n = np.tanh(x @ c["Wn"] + (r * h) @ c["Un"] + c["bn"])
            hs[t + 1] = (1.0 - z) * n + z * h
            cache.z.append(z)
            cache.r.append(r)
            cache.n.append(n)
        return hs[1:], cache

    def forward(self, xs, h0=None) -> tuple[np.ndarray, RecurrentCache]:
        """Readout outputs for every step: shape (T, B, n_out)."""
        hs, cache = self.forward_hidden(xs, h0)
        T, B, H = hs.shape
        out, rcache = self.readout.forward(hs.reshape(T * B, H))
        cache.readout = rcache
        return out.reshape(T, B, -1), cache

    def backward(self, cache: RecurrentCache, grad_output=None, grad_hidden=None,
                 wrt: str = "output"):
        """Backpropagation through time over the whole cached sequence.

        ``grad_output`` (T, B, n_out) flows through the readout; ``grad_hidden``
        (T, B, H) adds a direct gradient on the hidden states. Returns the
        gradient list aligned with ``params``.
        """
        if cache.version != self._version:
            raise StaleCacheError("parameters changed since this forward pass")
        xs, hs = cache.xs, cache.hs
        T, B, _ = xs.shape
        H = self.hidden_size
        dh_seq = np.zeros((T, B, H)) if grad_hidden is None else np.array(grad_hidden, dtype=np.float64)
        readout_grads = [np.zeros_like(p) for p in self.readout.params]
        if grad_output is not None:
            if cache.readout is None:
                raise ValueError("grad_output given but forward() was not used")
            g = np.asarray(grad_output, dtype=np.float64).reshape(T * B, -1)
            readout_grads, dh = self.readout.backward(cache.readout, g, wrt=wrt,
                                                      need_input_grad=True)
            dh_seq = dh_seq + dh.reshape(T, B, H)
        c = self.cell
        grads = {k: np.zeros_like(v) for k, v in c.items()}
        dh_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            x, h = xs[t], hs[t]
            z, r, n = cache.z[t], cache.r[t], cache.n[t]
            dh = dh_seq[t] + dh_next
            dn = dh * (1.0 - z)
            dz = dh * (h - n)
            dh_prev = dh * z
            dan = dn * (1.0 - n * n)
            grads["Wn"] += x.T @ dan
            grads["bn"] += dan.sum(axis=0)
            grads["Un"] += (r * h).T @ dan
            drh = dan @ c["Un"].T
            dr = drh * h
            dh_prev += drh * r
            daz = dz * z * (1.0 - z)
            dar = dr * r * (1.0 - r)
            grads["Wz"] += x.T @ daz
            grads["Wr"] += x.T @ dar
            grads["Uz"] += h.T @ daz
            grads["Ur"] += h.T @ dar
            grads["bz"] += daz.sum(axis=0)
            grads["br"] += dar.sum(axis=0)
            dh_prev += daz @ c["Uz"].T + dar @ c["Ur"].T
            dh_next = dh_prev
        return [grads[k] for k in _GRU_NAMES] + list(readout_grads)

    def to_blocks(self, prefix: str) -> dict[str, np.ndarray]:
        blocks = {f"{prefix}.{k}": v for k, v in self.cell.items()}
        blocks.update(self.readout.to_blocks(f"{prefix}.readout"))
        return blocks

    @classmethod
    def from_blocks(cls, arch: str, blocks: dict, prefix: str) -> "RecurrentNet":
        kind, sizes, readout, head = arch.split()
        if kind != "gru":
            raise ValueError(f"not a recurrent architecture: {arch!r}")
        n_in, hidden = (int(s) for s in sizes.split(","))
        readout_sizes = [int(s) for s in readout.split("=", 1)[1].split(",")]
        net = cls(n_in, hidden, readout_sizes, head=head.split("=", 1)[1])
        for k in _GRU_NAMES:
            net.cell[k] = np.array(blocks[f"{prefix}.{k}"], dtype=np.float64)
        net.readout = DenseNet.from_blocks(net.readout.arch, blocks, f"{prefix}.readout")
        return net


# -- optimisation -------------------------------------------------------------

class Adam:
    """Adaptive-moment optimizer state for one parameter list."""

    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             lr: Optional[float] = None) -> None:
        """Update ``params`` in place."""
        if len(params) != len(self.m):
            raise ShapeError("parameter list does not match optimizer state")
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def to_blocks(self, prefix: str) -> dict[str, np.ndarray]:
        blocks = {f"{prefix}.t": np.array([float(self.t)])}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            blocks[f"{prefix}.m{i}"] = m
            blocks[f"{prefix}.v{i}"] = v
        return blocks

    def load_blocks(self, blocks: dict, prefix: str) -> None:
        if f"{prefix}.t" not in blocks:
            return
        self.t = int(blocks[f"{prefix}.t"][0])
        for i in range(len(self.m)):
            self.m[i] = np.array(blocks[f"{prefix}.m{i}"]).reshape(self.m[i].shape)
            self.v[i] = np.array(blocks[f"{prefix}.v{i}"]).reshape(self.v[i].shape)


def optimizer_step(net, grads, opt: Adam, lr: Optional[float] = None) -> None:
    opt.step(net.params, grads, lr)
    net.touch()


def soft_update(target, source, tau: float):
    """``target <- tau * source + (1 - tau) * target``, in place."""
    t_params = target.params if hasattr(target, "params") else target
    s_params = source.params if hasattr(source, "params") else source
    for t, s in zip(t_params, s_params):
        if t.shape != s.shape:
            raise ShapeError(f"soft_update shape mismatch {t.shape} vs {s.shape}")
        t *= 1.0 - tau
        t += tau * s
    if hasattr(target, "touch"):
        target.touch()
    return target


def mutate(params: Sequence[np.ndarray], sigma: float, seed) -> list[np.ndarray]:
    """Copies of ``params`` with independent N(0, sigma^2) noise added."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return [p + rng.normal(0.0, sigma, size=p.shape) if sigma > 0 else p.copy() for p in params]


def mutate_net(net, sigma: float, seed):
    child = net.copy()
    for dst, src in zip(child.params, mutate(net.params, sigma, seed)):
        dst[...] = src
    child.touch()
    return child


def load_net(arch: str, blocks: dict, prefix: str):
    if arch.startswith("dense"):
        return DenseNet.from_blocks(arch, blocks, prefix)
    return RecurrentNet.from_blocks(arch, blocks, prefix)
