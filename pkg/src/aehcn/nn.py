"""Minimal dense-tensor numerical core with reverse-mode gradients.

Float64 throughout. Only the operations the dialog models actually use are
implemented: an LSTM cell, a GRU cell, a conv+maxpool text encoder, softmax /
cross-entropy, inverted dropout, global-norm gradient clipping and Adam.
Gradients are computed by per-op backward closures over a topologically
sorted graph, micrograd-style.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph construction (eval / scoring)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverses numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense float64 array plus the bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev: tuple = ()

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded graph."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- op helpers ----------------------------------------------------

    @staticmethod
    def _coerce(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=np.float64))

    @staticmethod
    def _result(data, parents: tuple, backward) -> "Tensor":
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=track)
        if track:
            out._prev = parents
            out._backward = backward
        return out

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        data = self.data + other.data

        def backward():
            self._accumulate(_unbroadcast(out.grad, self.shape))
            other._accumulate(_unbroadcast(out.grad, other.shape))

        out = self._result(data, (self, other), backward)
        return out

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = self._coerce(other)
        data = self.data - other.data

        def backward():
            self._accumulate(_unbroadcast(out.grad, self.shape))
            other._accumulate(_unbroadcast(-out.grad, other.shape))

        out = self._result(data, (self, other), backward)
        return out

    def __neg__(self) -> "Tensor":
        data = -self.data

        def backward():
            self._accumulate(-out.grad)

        out = self._result(data, (self,), backward)
        return out

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        data = self.data * other.data

        def backward():
            self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
            other._accumulate(_unbroadcast(out.grad * self.data, other.shape))

        out = self._result(data, (self, other), backward)
        return out

    __rmul__ = __mul__

    def __matmul__(self, other) -> "Tensor":
        other = self._coerce(other)
        a, b = self.data, other.data
        data = a @ b

        def backward():
            g = out.grad
            if a.ndim == 2 and b.ndim == 1:
                self._accumulate(np.outer(g, b))
                other._accumulate(a.T @ g)
            elif a.ndim == 2 and b.ndim == 2:
                self._accumulate(g @ b.T)
                other._accumulate(a.T @ g)
            elif a.ndim == 1 and b.ndim == 2:
                self._accumulate(b @ g)
                other._accumulate(np.outer(a, g))
            else:
                raise ValueError(f"unsupported matmul shapes {a.shape} @ {b.shape}")

        out = self._result(data, (self, other), backward)
        return out

    def __getitem__(self, key) -> "Tensor":
        if isinstance(key, slice):
            if self.ndim != 1:
                raise ValueError("slice indexing is only supported on 1-D tensors")
            start, stop, step = key.indices(self.data.shape[0])
            if step != 1:
                raise ValueError("only contiguous slices are supported")
            data = self.data[start:stop]

            def backward():
                g = np.zeros_like(self.data)
                g[start:stop] = out.grad
                self._accumulate(g)

            out = self._result(data, (self,), backward)
            return out
        if isinstance(key, (int, np.integer)):
            if self.ndim != 2:
                raise ValueError("integer indexing selects a row of a 2-D tensor")
            idx = int(key)
            data = self.data[idx]

            def backward():
                g = np.zeros_like(self.data)
                g[idx] = out.grad
                self._accumulate(g)

            out = self._result(data, (self,), backward)
            return out
        raise TypeError(f"unsupported index {key!r}")

    # -- reductions ----------------------------------------------------

    def sum(self) -> "Tensor":
        data = self.data.sum()

        def backward():
            self._accumulate(np.full_like(self.data, out.grad))

        out = self._result(data, (self,), backward)
        return out

    def mean(self, axis: int | None = None) -> "Tensor":
        if axis is None:
            data = self.data.mean()
            n = self.data.size

            def backward():
                self._accumulate(np.full_like(self.data, out.grad / n))

        elif axis == 0:
            data = self.data.mean(axis=0)
            n = self.data.shape[0]

            def backward():
                self._accumulate(np.broadcast_to(out.grad / n, self.data.shape).copy())

        else:
            raise ValueError("mean supports axis=None or axis=0")

        out = self._result(data, (self,), backward)
        return out

    def max(self, axis: int = 0) -> "Tensor":
        """Max over rows of a 2-D tensor; gradient flows to the (first) argmax."""
        if axis != 0 or self.ndim != 2:
            raise ValueError("max supports axis=0 on 2-D tensors")
        arg = self.data.argmax(axis=0)
        data = self.data[arg, np.arange(self.data.shape[1])]

        def backward():
            g = np.zeros_like(self.data)
            g[arg, np.arange(self.data.shape[1])] = out.grad
            self._accumulate(g)

        out = self._result(data, (self,), backward)
        return out

    def pick(self, index: int) -> "Tensor":
        """Select one entry of a 1-D tensor as a scalar."""
        if self.ndim != 1:
            raise ValueError("pick requires a 1-D tensor")
        if not 0 <= index < self.data.shape[0]:
            raise ValueError(f"index {index} out of range for length {self.data.shape[0]}")
        data = self.data[index]

        def backward():
            g = np.zeros_like(self.data)
            g[index] = out.grad
            self._accumulate(g)

        out = self._result(data, (self,), backward)
        return out

    # -- elementwise nonlinearities -------------------------------------

    def relu(self) -> "Tensor":
        data = np.maximum(self.data, 0.0)

        def backward():
            self._accumulate(out.grad * (self.data > 0.0))

        out = self._result(data, (self,), backward)
        return out

    def sigmoid(self) -> "Tensor":
        x = self.data
        data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        def backward():
            self._accumulate(out.grad * data * (1.0 - data))

        out = self._result(data, (self,), backward)
        return out

    def tanh(self) -> "Tensor":
        data = np.tanh(self.data)

        def backward():
            self._accumulate(out.grad * (1.0 - data * data))

        out = self._result(data, (self,), backward)
        return out

    def log(self) -> "Tensor":
        data = np.log(self.data)

        def backward():
            self._accumulate(out.grad / self.data)

        out = self._result(data, (self,), backward)
        return out


class Parameter(Tensor):
    """A named trainable tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D tensors."""
    parts = list(parts)
    for p in parts:
        if p.ndim != 1:
            raise ValueError("concat expects 1-D tensors")
    data = np.concatenate([p.data for p in parts])
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def backward():
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p._accumulate(out.grad[lo:hi])

    out = Tensor._result(data, tuple(parts), backward)
    return out


def embedding_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of a (V, d) table; gradient scatter-adds back into it."""
    ids = np.asarray(ids, dtype=np.intp)
    if table.ndim != 2:
        raise ValueError("embedding_rows expects a 2-D table")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ValueError("row index out of range")
    data = table.data[ids]

    def backward():
        g = np.zeros_like(table.data)
        np.add.at(g, ids, out.grad)
        table._accumulate(g)

    out = Tensor._result(data, (table,), backward)
    return out


def im2col(x: Tensor, kernel: int) -> Tensor:
    """Unfold an (N, d) sequence into (N-k+1, k*d) sliding windows."""
    n, d = x.data.shape
    if n < kernel:
        raise ValueError(f"sequence of length {n} shorter than kernel {kernel}")
    w = n - kernel + 1
    data = np.concatenate([x.data[i:w + i] for i in range(kernel)], axis=1)

    def backward():
        g = np.zeros_like(x.data)
        for i in range(kernel):
            g[i:w + i] += out.grad[:, i * d:(i + 1) * d]
        x._accumulate(g)

    out = Tensor._result(data, (x,), backward)
    return out


def pad_rows(x: Tensor, total_rows: int) -> Tensor:
    """Append zero rows to an (N, d) tensor so it has `total_rows` rows."""
    n, d = x.data.shape
    if total_rows <= n:
        return x
    data = np.concatenate([x.data, np.zeros((total_rows - n, d))], axis=0)

    def backward():
        x._accumulate(out.grad[:n])

    out = Tensor._result(data, (x,), backward)
    return out


# ---------------------------------------------------------------------------
# softmax / losses
# ---------------------------------------------------------------------------

def softmax(logits: Tensor) -> Tensor:
    """Stable softmax over a 1-D logit vector (max-subtraction)."""
    if logits.ndim != 1:
        raise ValueError("softmax expects a 1-D tensor")
    shifted = logits.data - logits.data.max()
    e = np.exp(shifted)
    p = e / e.sum()

    def backward():
        g = out.grad
        logits._accumulate(p * (g - np.dot(g, p)))

    out = Tensor._result(p, (logits,), backward)
    return out


def log_softmax(logits: Tensor) -> Tensor:
    """Stable log-softmax over a 1-D logit vector."""
    if logits.ndim != 1:
        raise ValueError("log_softmax expects a 1-D tensor")
    shifted = logits.data - logits.data.max()
    lse = np.log(np.exp(shifted).sum())
    data = shifted - lse

    def backward():
        g = out.grad
        logits._accumulate(g - np.exp(data) * g.sum())

    out = Tensor._result(data, (logits,), backward)
    return out


def cross_entropy(probs: Tensor, gold: int) -> Tensor:
    """Negative log-likelihood of the gold index under a probability vector."""
    if not 0 <= gold < probs.data.shape[0]:
        raise ValueError(f"gold index {gold} out of range")
    return -(probs.pick(gold).log())


# ---------------------------------------------------------------------------
# recurrent / convolutional cells
# ---------------------------------------------------------------------------

@dataclass
class LstmParams:
    """Fused LSTM weights; gate rows ordered input, forget, candidate, output."""

    w_x: Parameter  # (4H, D)
    w_h: Parameter  # (4H, H)
    b: Parameter    # (4H,)

    @property
    def hidden(self) -> int:
        return self.w_h.data.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_x.data.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.w_x, self.w_h, self.b]


def init_lstm(input_dim: int, hidden: int, rng: "RngStream", name: str = "lstm") -> LstmParams:
    """Uniform [-0.08, 0.08] weights; forget-gate bias starts at 1.0."""
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    return LstmParams(
        w_x=Parameter(rng.uniform_array(-0.08, 0.08, (4 * hidden, input_dim)), f"{name}.w_x"),
        w_h=Parameter(rng.uniform_array(-0.08, 0.08, (4 * hidden, hidden)), f"{name}.w_h"),
        b=Parameter(b, f"{name}.b"),
    )


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, params: LstmParams) -> tuple[Tensor, Tensor]:
    """One LSTM step: sigmoid input/forget/output gates, tanh candidate."""
    hid = params.hidden
    if x.shape != (params.input_dim,):
        raise ValueError(f"lstm_cell input has shape {x.shape}, expected ({params.input_dim},)")
    if h_prev.shape != (hid,) or c_prev.shape != (hid,):
        raise ValueError("lstm_cell state dimensions do not match the parameters")
    z = params.w_x @ x + params.w_h @ h_prev + params.b
    i = z[0:hid].sigmoid()
    f = z[hid:2 * hid].sigmoid()
    g = z[2 * hid:3 * hid].tanh()
    o = z[3 * hid:4 * hid].sigmoid()
    c = f * c_prev + i * g
    h = o * c.tanh()
    return h, c


@dataclass
class GruParams:
    """GRU weights; input projection fused over update/reset/candidate gates."""

    w_x: Parameter     # (3H, D)
    w_h_zr: Parameter  # (2H, H) hidden projection for update/reset gates
    w_h_n: Parameter   # (H, H) hidden projection for the candidate (applied to r*h)
    b: Parameter       # (3H,)

    @property
    def hidden(self) -> int:
        return self.w_h_n.data.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_x.data.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.w_x, self.w_h_zr, self.w_h_n, self.b]


def init_gru(input_dim: int, hidden: int, rng: "RngStream", name: str = "gru") -> GruParams:
    return GruParams(
        w_x=Parameter(rng.uniform_array(-0.08, 0.08, (3 * hidden, input_dim)), f"{name}.w_x"),
        w_h_zr=Parameter(rng.uniform_array(-0.08, 0.08, (2 * hidden, hidden)), f"{name}.w_h_zr"),
        w_h_n=Parameter(rng.uniform_array(-0.08, 0.08, (hidden, hidden)), f"{name}.w_h_n"),
        b=Parameter(np.zeros(3 * hidden), f"{name}.b"),
    )


def gru_cell(x: Tensor, h_prev: Tensor, params: GruParams) -> Tensor:
    """One GRU step: h' = (1-u)*candidate + u*h_prev with update gate u."""
    hid = params.hidden
    if x.shape != (params.input_dim,):
        raise ValueError(f"gru_cell input has shape {x.shape}, expected ({params.input_dim},)")
    if h_prev.shape != (hid,):
        raise ValueError("gru_cell state dimension does not match the parameters")
    xz = params.w_x @ x + params.b
    hz = params.w_h_zr @ h_prev
    u = (xz[0:hid] + hz[0:hid]).sigmoid()
    r = (xz[hid:2 * hid] + hz[hid:2 * hid]).sigmoid()
    n = (xz[2 * hid:3 * hid] + params.w_h_n @ (r * h_prev)).tanh()
    one = Tensor(np.ones(hid))
    return (one - u) * n + u * h_prev


@dataclass
class ConvMaxpoolParams:
    """Per-kernel-size filter banks for the conv+maxpool utterance encoder."""

    weights: dict[int, Parameter]  # kernel k -> (k*d, F)
    biases: dict[int, Parameter]   # kernel k -> (F,)
    kernel_sizes: tuple[int, ...]
    filters: int
    embed_dim: int

    @property
    def output_dim(self) -> int:
        return self.filters * len(self.kernel_sizes)

    def parameters(self) -> list[Parameter]:
        params = []
        for k in self.kernel_sizes:
            params.extend([self.weights[k], self.biases[k]])
        return params


def init_conv_maxpool(embed_dim: int, rng: "RngStream", kernel_sizes: tuple[int, ...] = (2, 3),
                      filters: int = 100, name: str = "cnn") -> ConvMaxpoolParams:
    weights = {}
    biases = {}
    for k in kernel_sizes:
        weights[k] = Parameter(rng.uniform_array(-0.08, 0.08, (k * embed_dim, filters)),
                               f"{name}.w{k}")
        biases[k] = Parameter(np.zeros(filters), f"{name}.b{k}")
    return ConvMaxpoolParams(weights, biases, tuple(kernel_sizes), filters, embed_dim)


def conv1d_maxpool(token_embeddings: Tensor, params: ConvMaxpoolParams) -> Tensor:
    """Valid convolution + bias + ReLU per kernel size, max over time, concat.

    Sequences shorter than a kernel are padded with zero-embedding rows so
    every kernel size yields at least one window.
    """
    n, d = token_embeddings.shape
    if d != params.embed_dim:
        raise ValueError(f"embeddings have dim {d}, expected {params.embed_dim}")
    if n < 1:
        raise ValueError("conv1d_maxpool needs at least one token")
    pooled = []
    for k in params.kernel_sizes:
        x = pad_rows(token_embeddings, k) if n < k else token_embeddings
        feat = (im2col(x, k) @ params.weights[k] + params.biases[k]).relu()
        pooled.append(feat.max(axis=0))
    return concat(pooled)


# ---------------------------------------------------------------------------
# dropout / optimizer
# ---------------------------------------------------------------------------

def dropout(x: Tensor, p: float, training: bool, rng: "RngStream") -> Tensor:
    """Inverted dropout: scale survivors by 1/(1-p) at train time, identity at eval."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random_array(x.shape) >= p) / (1.0 - p)
    return x * Tensor(mask)


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float = 5.0) -> float:
    """Scale grads in place so the global L2 norm is at most max_norm.

    Returns the pre-clipping global norm.
    """
    total = 0.0
    for g in grads:
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


@dataclass
class AdamState:
    """Per-parameter Adam moments plus the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0


class Adam:
    """Adam with bias correction; defaults per the usual recommendation."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = [AdamState(np.zeros_like(p.data), np.zeros_like(p.data)) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p, s in zip(self.params, self.state):
            if p.grad is None:
                g = np.zeros_like(p.data)
            else:
                g = p.grad
            s.t += 1
            s.m = self.beta1 * s.m + (1.0 - self.beta1) * g
            s.v = self.beta2 * s.v + (1.0 - self.beta2) * (g * g)
            m_hat = s.m / (1.0 - self.beta1 ** s.t)
            v_hat = s.v / (1.0 - self.beta2 ** s.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# deterministic randomness
# ---------------------------------------------------------------------------

class RngStream:
    """Seeded PCG64 stream; identical seeds give identical draw sequences.

    Substreams are derived from the seed and a label (not from generator
    state), so derivation order never affects reproducibility.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, label: str) -> "RngStream":
        digest = hashlib.sha256(f"{self.seed}/{label}".encode("utf-8")).digest()
        return RngStream(int.from_bytes(digest[:8], "little"))

    def random(self) -> float:
        return float(self._gen.random())

    def uniform(self, low: float, high: float) -> float:
        return float(self._gen.uniform(low, high))

    def integers(self, n: int) -> int:
        return int(self._gen.integers(n))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random_array(self, shape) -> np.ndarray:
        return self._gen.random(shape)

    def uniform_array(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, shape)
