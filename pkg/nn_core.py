"""
CAD Sequence Toolkit - Neural Network Core
Tape-based reverse-mode differentiation on float64 numpy arrays plus the
attention, MLP, normalization, loss, optimizer and checkpoint building blocks
"""

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils import canonical_json, logger, sha256_bytes

CHECKPOINT_MAGIC = b"CADSEQW\x00"
CHECKPOINT_VERSION = 1


class NNError(Exception):
    """Base class for network core errors"""


class DimensionMismatchError(NNError):
    pass


class CheckpointError(NNError):
    pass


ArrayLike = Union[np.ndarray, float, int, Sequence]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Dense float64 array that records the operations producing it"""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")
    __array_ufunc__ = None

    def __init__(self, data: ArrayLike, parents: Tuple["Tensor", ...] = (),
                 backward: Optional[Callable[[np.ndarray], None]] = None,
                 requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = _unbroadcast(np.asarray(grad, dtype=np.float64), self.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Reverse-mode sweep from this tensor over the recorded graph"""
        if grad is None:
            if self.data.size != 1:
                raise NNError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)

        order: List[Tensor] = []
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)

        def backward(g):
            self._accumulate(g)
            other._accumulate(g)
        return Tensor(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor(-self.data, (self,), lambda g: self._accumulate(-g))

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)

        def backward(g):
            self._accumulate(g * other.data)
            other._accumulate(g * self.data)
        return Tensor(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return self * other.reciprocal()
        return self * (1.0 / float(other))

    def reciprocal(self) -> "Tensor":
        out = 1.0 / self.data
        return Tensor(out, (self,), lambda g: self._accumulate(-g * out * out))

    def __pow__(self, exponent: float) -> "Tensor":
        e = float(exponent)
        return Tensor(self.data ** e, (self,),
                      lambda g: self._accumulate(g * e * self.data ** (e - 1.0)))

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        if self.ndim < 2 or other.ndim < 2:
            raise DimensionMismatchError("matmul operands need at least 2 dimensions")
        if self.shape[-1] != other.shape[-2]:
            raise DimensionMismatchError(f"matmul shapes {self.shape} and {other.shape} do not chain")

        def backward(g):
            self._accumulate(g @ np.swapaxes(other.data, -1, -2))
            other._accumulate(np.swapaxes(self.data, -1, -2) @ g)
        return Tensor(self.data @ other.data, (self, other), backward)

    # -- elementwise -------------------------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return Tensor(self.data * mask, (self,), lambda g: self._accumulate(g * mask))

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor(out, (self,), lambda g: self._accumulate(g * out))

    def log(self) -> "Tensor":
        return Tensor(np.log(self.data), (self,), lambda g: self._accumulate(g / self.data))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor(out, (self,), lambda g: self._accumulate(g * (1.0 - out * out)))

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape))
        return Tensor(out, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis, keepdims) * (1.0 / float(count))

    def max(self, axis: int, keepdims: bool = False) -> "Tensor":
        """Maximum along an axis; ties share the gradient evenly"""
        out = self.data.max(axis=axis, keepdims=True)
        mask = (self.data == out).astype(np.float64)
        mask /= mask.sum(axis=axis, keepdims=True)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(g * mask)
        return Tensor(out if keepdims else np.squeeze(out, axis=axis), (self,), backward)

    # -- shape -------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return Tensor(self.data.reshape(shape), (self,), lambda g: self._accumulate(g.reshape(original)))

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)
        return Tensor(np.transpose(self.data, axes), (self,),
                      lambda g: self._accumulate(np.transpose(g, inverse)))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, index) -> "Tensor":
        def backward(g):
            full = np.zeros_like(self.data)
            np.add.at(full, index, g)
            self._accumulate(full)
        return Tensor(self.data[index], (self,), backward)


class Parameter(Tensor):
    """Learnable tensor"""

    __slots__ = ()

    def __init__(self, data: ArrayLike):
        super().__init__(data, requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            t._accumulate(g[tuple(index)])
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def take_rows(x: Tensor, index: Sequence[int]) -> Tensor:
    return x[np.asarray(index, dtype=np.int64)]


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))
    return Tensor(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        x._accumulate(g - probs * g.sum(axis=axis, keepdims=True))
    return Tensor(out, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis with learned scale and shift"""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    n = x.shape[-1]

    def backward(g):
        gxhat = g * gamma.data
        x._accumulate(inv / n * (n * gxhat - gxhat.sum(axis=-1, keepdims=True)
                                 - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)))
        gamma._accumulate(g * xhat)
        beta._accumulate(g)
    return Tensor(xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; identity in eval mode or when p is 0"""
    if not training or p <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask


# ---------------------------------------------------------------------------
# Modules
# ---------------------------------------------------------------------------

class Module:
    """Container of parameters and sub-modules"""

    training = True

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Parameter]]:
        out: List[Tuple[str, Parameter]] = []
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(f"{full}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{full}.{i}."))
                    elif isinstance(item, Parameter):
                        out.append((f"{full}.{i}", item))
        return out

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterable["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise CheckpointError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise CheckpointError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data = value.copy()


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, zero: bool = False):
        """Initialize weights (Glorot uniform) and a zero bias"""
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Parameter(np.zeros((in_dim, out_dim)) if zero else _glorot(rng, in_dim, out_dim))
        self.bias = Parameter(np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionMismatchError(f"Linear expects last dim {self.in_dim}, got {x.shape[-1]}")
        return x @ self.weight + self.bias


class MLP(Module):
    """Affine layers with ReLU between them; the last layer is linear"""

    def __init__(self, dims: Sequence[int], rng: np.random.Generator, zero_last: bool = False):
        """Initialize the layer stack"""
        if len(dims) < 2:
            raise DimensionMismatchError("MLP needs at least input and output dims")
        self.layers = [Linear(a, b, rng, zero=zero_last and i == len(dims) - 2)
                       for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = x.relu()
        return x


def mlp(x: Tensor, module: MLP) -> Tensor:
    return module(x)


class LayerNorm(Module):
    def __init__(self, dim: int):
        """Initialize unit scale and zero shift"""
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over `heads` heads; no causal mask"""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        """Initialize query, key, value and output projections"""
        if dim % heads != 0:
            raise DimensionMismatchError(f"model dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.o_proj = Linear(dim, dim, rng)
        self.last_weights: Optional[np.ndarray] = None

    def _split(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        return x.reshape(n, self.heads, self.dim // self.heads).transpose(1, 0, 2)

    def __call__(self, query: Tensor, source: Tensor) -> Tensor:
        if query.ndim != 2 or source.ndim != 2 or source.shape[-1] != self.dim:
            raise DimensionMismatchError(f"attention expects [L x {self.dim}] inputs, got {query.shape}, {source.shape}")
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(source))
        v = self._split(self.v_proj(source))
        scores = (q @ k.transpose(0, 2, 1)) * (1.0 / np.sqrt(self.dim // self.heads))
        weights = softmax(scores, axis=-1)
        self.last_weights = weights.data
        out = (weights @ v).transpose(1, 0, 2).reshape(query.shape[0], self.dim)
        return self.o_proj(out)


class SelfAttentionBlock(Module):
    """Pre-norm residual self-attention"""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dropout_p: float = 0.0):
        self.norm = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.dropout_p = dropout_p
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm(x)
        return x + dropout(self.attn(h, h), self.dropout_p, self.rng, self.training)


class CrossAttentionBlock(Module):
    """Pre-norm residual cross-attention from queries to a memory"""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dropout_p: float = 0.0):
        self.norm = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.dropout_p = dropout_p
        self.rng = rng

    def __call__(self, x: Tensor, memory: Tensor) -> Tensor:
        return x + dropout(self.attn(self.norm(x), memory), self.dropout_p, self.rng, self.training)


class FeedForwardBlock(Module):
    def __init__(self, dim: int, ff_dim: int, rng: np.random.Generator, dropout_p: float = 0.0):
        self.norm = LayerNorm(dim)
        self.ff = MLP([dim, ff_dim, dim], rng)
        self.dropout_p = dropout_p
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        return x + dropout(self.ff(self.norm(x)), self.dropout_p, self.rng, self.training)


class DecoderBlock(Module):
    """Self-attention, cross-attention to the memory, then feed-forward"""

    def __init__(self, dim: int, heads: int, ff_dim: int, rng: np.random.Generator, dropout_p: float = 0.0):
        self.self_attn = SelfAttentionBlock(dim, heads, rng, dropout_p)
        self.cross_attn = CrossAttentionBlock(dim, heads, rng, dropout_p)
        self.feed_forward = FeedForwardBlock(dim, ff_dim, rng, dropout_p)

    def __call__(self, x: Tensor, memory: Tensor) -> Tensor:
        return self.feed_forward(self.cross_attn(self.self_attn(x), memory))


def self_attention(x: Tensor, block: SelfAttentionBlock) -> Tensor:
    return block(x)


def cross_attention(queries: Tensor, source: Tensor, block: CrossAttentionBlock) -> Tensor:
    return block(queries, source)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def cross_entropy(logits: Tensor, targets: Sequence[int], mask: Optional[Sequence[bool]] = None) -> Tensor:
    """Masked mean of -log softmax at the target class; logits are [N x C]"""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, c = logits.shape[0], logits.shape[-1]
    if len(targets) != n:
        raise DimensionMismatchError(f"{len(targets)} targets for {n} rows")
    if np.any(targets < 0) or np.any(targets >= c):
        raise NNError(f"target class out of range [0, {c})")
    keep = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    count = int(keep.sum())
    if count == 0:
        return Tensor(0.0)
    rows = np.flatnonzero(keep)
    picked = log_softmax(logits, axis=-1)[rows, targets[rows]]
    return -picked.sum() * (1.0 / count)


def mse(pred: Tensor, target: ArrayLike, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean squared difference, optionally over masked elements only"""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise DimensionMismatchError(f"mse shapes {pred.shape} and {target.shape} differ")
    diff = pred - target
    if mask is None:
        return (diff * diff).mean()
    weights = np.asarray(mask, dtype=np.float64)
    count = float(weights.sum())
    if count == 0:
        return Tensor(0.0)
    return (diff * diff * weights).sum() * (1.0 / count)


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], epsilon: float = 1e-5,
               n_samples: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between analytic and central-difference gradients"""
    for p in params:
        p.grad = None
    f().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if n_samples is not None and n_samples < len(coords):
        rng = rng or np.random.default_rng(0)
        coords = [coords[c] for c in rng.choice(len(coords), n_samples, replace=False)]

    worst = 0.0
    for i, j in coords:
        flat = params[i].data.reshape(-1)
        original = flat[j]
        flat[j] = original + epsilon
        plus = float(f().data)
        flat[j] = original - epsilon
        minus = float(f().data)
        flat[j] = original
        numeric = (plus - minus) / (2.0 * epsilon)
        a = float(analytic[i].reshape(-1)[j])
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
    return worst


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

def warmup_lr(step: int, lr: float, warmup: int) -> float:
    """Learning rate ramped linearly from 0 over the first `warmup` steps (step counts from 1)"""
    if warmup <= 0:
        return lr
    return lr * min(1.0, step / warmup)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[Optional[np.ndarray]], state: Dict[str, Any],
              lr: float = 1e-3, warmup: int = 0, betas: Tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> Dict[str, Any]:
    """One in-place Adam update; state holds step count and both moment buffers"""
    b1, b2 = betas
    if not state:
        state.update({"step": 0, "m": [np.zeros_like(p) for p in params],
                      "v": [np.zeros_like(p) for p in params]})
    state["step"] += 1
    t = state["step"]
    rate = warmup_lr(t, lr, warmup)
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            continue
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p -= rate * m_hat / (np.sqrt(v_hat) + eps)
    return state


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, warmup: int = 0,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        """Initialize optimizer state"""
        self.params = list(params)
        self.lr = lr
        self.warmup = warmup
        self.betas = betas
        self.eps = eps
        self.state: Dict[str, Any] = {}

    @property
    def step_count(self) -> int:
        return self.state.get("step", 0)

    def step(self) -> None:
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state,
                  self.lr, self.warmup, self.betas, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(stem, state: Dict[str, np.ndarray], config: Dict[str, Any]) -> Tuple[Path, Path]:
    """Write <stem>.bin (header + float64 LE blob) and <stem>.json (manifest)"""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    tensors: Dict[str, Dict[str, Any]] = {}
    chunks: List[bytes] = []
    offset = 0
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        tensors[name] = {"shape": list(arr.shape), "offset": offset}
        chunks.append(arr.tobytes())
        offset += arr.size
    blob = b"".join(chunks)
    header = CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, offset)

    bin_path = stem.with_suffix(".bin")
    json_path = stem.with_suffix(".json")
    bin_path.write_bytes(header + blob)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": config,
        "tensors": tensors,
        "count": offset,
        "sha256": sha256_bytes(blob),
    }
    json_path.write_text(canonical_json(manifest), encoding="utf-8")
    logger(f"💾 Checkpoint written to {bin_path}", "DEBUG")
    return bin_path, json_path


def load_checkpoint(stem) -> Tuple["OrderedDict[str, np.ndarray]", Dict[str, Any]]:
    stem = Path(stem)
    if stem.suffix in (".bin", ".json"):
        stem = stem.with_suffix("")
    try:
        manifest = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
        raw = stem.with_suffix(".bin").read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {stem}: {str(e)}") from e

    head = len(CHECKPOINT_MAGIC) + struct.calcsize("<IQ")
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{stem}.bin is not a checkpoint file")
    version, count = struct.unpack("<IQ", raw[len(CHECKPOINT_MAGIC):head])
    if version != CHECKPOINT_VERSION or manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version}/{manifest.get('version')} "
                              f"does not match supported version {CHECKPOINT_VERSION}")
    blob = raw[head:]
    if len(blob) != 8 * count or count != manifest.get("count"):
        raise CheckpointError(f"{stem}.bin holds {len(blob) // 8} values, manifest expects {manifest.get('count')}")
    if sha256_bytes(blob) != manifest.get("sha256"):
        raise CheckpointError(f"{stem}.bin checksum mismatch")
    values = np.frombuffer(blob, dtype="<f8")
    state: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name in sorted(manifest["tensors"]):
        entry = manifest["tensors"][name]
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        state[name] = values[entry["offset"]:entry["offset"] + size].reshape(entry["shape"]).astype(np.float64)
    return state, manifest.get("config", {})
