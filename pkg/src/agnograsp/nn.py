"""A small reverse-mode autodiff core and the network blocks built on it.

Tensors wrap float64 numpy arrays. Each op records its parents and a closure
that pushes the output gradient back to them; :meth:`Tensor.backward` walks
the graph in reverse topological order. Only the ops the grasping networks
need are provided.
"""

import json
import struct
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"AGNN"
CHECKPOINT_VERSION = 1


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return tsum(self, axis) * (1.0 / n)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(t):
    return t.requires_grad or t._backward is not None


def _make(data, parents, backward):
    out = Tensor(data)
    if any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------- ops
def add(a, b):
    a, b = _wrap(a), _wrap(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else np.outer(g, b.data)
        gb = np.swapaxes(a.data, -1, -2) @ g if a.data.ndim > 1 else np.outer(a.data, g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), back)


def transpose(a):
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, idx):
    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), back)


def tsum(a, axis=None):
    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(a.data.sum(axis=axis), (a,), back)


def concat(tensors, axis=-1):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    return _make(np.stack([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.moveaxis(g, axis, 0)))


def relu(a):
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a):
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def tmax(a, axis=0):
    """Max along ``axis``; the gradient goes to the first (lowest-index) argmax."""
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def back(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _make(out, (a,), back)


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    d = x.shape[-1]

    def back(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        gg = (g * xhat).reshape(-1, d).sum(axis=0)
        gb = g.reshape(-1, d).sum(axis=0)
        return gx, gg, gb

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), back)


# ------------------------------------------------------------ param store
class ParamStore:
    """Named parameters plus Adam moment buffers."""

    def __init__(self):
        self.params = {}
        self.m = {}
        self.v = {}
        self.step = 0

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def n_parameters(self):
        return int(sum(t.data.size for t in self.params.values()))

    def copy(self):
        out = ParamStore()
        for k, t in self.params.items():
            out.add(k, t.data.copy())
        return out

    def flat(self):
        return np.concatenate([t.data.ravel() for t in self.params.values()])


def optimizer_step(store, grads=None, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """One Adam update in place. ``grads`` defaults to each tensor's ``.grad``."""
    store.step += 1
    b1, b2 = betas
    c1 = 1.0 - b1 ** store.step
    c2 = 1.0 - b2 ** store.step
    for name, t in store.params.items():
        g = t.grad if grads is None else grads.get(name)
        if g is None:
            continue
        m = store.m.get(name)
        if m is None:
            m = store.m[name] = np.zeros_like(t.data)
            store.v[name] = np.zeros_like(t.data)
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store


def save_params(store, path, meta=None):
    """Flat binary checkpoint: magic, header length, JSON header, raw float64."""
    header = {"version": CHECKPOINT_VERSION, "meta": meta or {}, "tensors": {}}
    offset = 0
    blobs = []
    for name, t in store.params.items():
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        header["tensors"][name] = {"shape": list(arr.shape), "dtype": "float64", "offset": offset}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    raw = json.dumps(header, sort_keys=True).encode()
    with open(Path(path), "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)


def load_params(path):
    """Inverse of :func:`save_params`; returns ``(store, meta)``."""
    with open(Path(path), "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n))
        body = fh.read()
    if "version" not in header:
        raise ValueError(f"{path}: checkpoint header has no version")
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
    store = ParamStore()
    # the header is key-sorted; byte offsets preserve the original order
    for name, info in sorted(header["tensors"].items(), key=lambda kv: kv[1]["offset"]):
        count = int(np.prod(info["shape"])) if info["shape"] else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=info["offset"])
        store.add(name, arr.reshape(info["shape"]))
    return store, header.get("meta", {})


# ------------------------------------------------------------------ blocks
def init_mlp(store, prefix, sizes, rng, zero_last=False):
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        W = np.zeros((a, b)) if (last and zero_last) else rng.normal(scale=np.sqrt(2.0 / a), size=(a, b))
        store.add(f"{prefix}.W{i}", W)
        store.add(f"{prefix}.b{i}", np.zeros(b))


def _mlp_layers(store, prefix):
    n = 0
    while f"{prefix}.W{n}" in store:
        n += 1
    return n


def mlp_forward(store, prefix, x):
    """Affine layers with ReLU between them; the final layer is linear."""
    x = _wrap(x)
    n = _mlp_layers(store, prefix)
    for i in range(n):
        x = x @ store[f"{prefix}.W{i}"] + store[f"{prefix}.b{i}"]
        if i < n - 1:
            x = relu(x)
    return x


def pointset_encode(store, prefix, points):
    """Shared per-point MLP followed by channel-wise max pooling."""
    return tmax(mlp_forward(store, prefix, points), axis=0)


def init_attention(store, prefix, d, heads, ffn, rng):
    if d % heads:
        raise ValueError("token width must be divisible by the head count")
    s = np.sqrt(1.0 / d)
    for k in ("Wq", "Wk", "Wv", "Wo"):
        store.add(f"{prefix}.{k}", rng.normal(scale=s, size=(d, d)))
    store.add(f"{prefix}.bo", np.zeros(d))
    store.add(f"{prefix}.ln1.g", np.ones(d))
    store.add(f"{prefix}.ln1.b", np.zeros(d))
    init_mlp(store, f"{prefix}.ffn", [d, ffn, d], rng)
    store.add(f"{prefix}.ln2.g", np.ones(d))
    store.add(f"{prefix}.ln2.b", np.zeros(d))


def self_attention_layer(store, prefix, tokens, heads):
    """Post-norm transformer encoder layer without positional encoding."""
    x = _wrap(tokens)
    d = x.shape[-1]
    dh = d // heads
    Q = x @ store[f"{prefix}.Wq"]
    K = x @ store[f"{prefix}.Wk"]
    V = x @ store[f"{prefix}.Wv"]
    outs = []
    for h in range(heads):
        sl = (slice(None), slice(h * dh, (h + 1) * dh))
        att = softmax((Q[sl] @ K[sl].T) * (1.0 / np.sqrt(dh)), axis=-1)
        outs.append(att @ V[sl])
    attn = concat(outs, axis=-1) @ store[f"{prefix}.Wo"] + store[f"{prefix}.bo"]
    x = layer_norm(x + attn, store[f"{prefix}.ln1.g"], store[f"{prefix}.ln1.b"])
    x = layer_norm(x + mlp_forward(store, f"{prefix}.ffn", x),
                   store[f"{prefix}.ln2.g"], store[f"{prefix}.ln2.b"])
    return x
