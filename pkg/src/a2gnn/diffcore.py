"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Values are 2-D matrices, optionally stacked along leading batch axes (used to
push every frame of a sequence through the spatial layers at once). Only the
operations the model needs are provided.

Checkpoint format (version 1)
-----------------------------
A numpy ``.npz`` archive. The entry ``__header__`` holds a UTF-8 JSON string::

    {"format": "a2gnn-checkpoint", "version": 1,
     "params": [[name, [shape...]], ...], "meta": {...}}

Every other entry is named ``param/<name>`` (or ``extra/<name>``) and holds the
float64 array in row-major order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

CHECKPOINT_FORMAT = "a2gnn-checkpoint"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class Node:
    """A value on the tape together with its gradient accumulator."""

    __slots__ = ("value", "grad", "parents", "requires_grad", "name")

    def __init__(self, value, parents=(), requires_grad=False, name=None):
        self.value = np.asarray(value)
        self.grad = None
        # (parent, rule) pairs; rule maps the upstream gradient to the parent's
        self.parents = list(parents)
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in self.parents)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # operator sugar, used sparingly by the layers
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return hadamard(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def parameter(value, name=None) -> Node:
    return Node(np.array(value, dtype=float), requires_grad=True, name=name)


def _make(value, parents):
    """Build a node, dropping parents that cannot carry gradient."""
    live = [(p, rule) for p, rule in parents if p.requires_grad]
    return Node(value, live)


def _unbroadcast(grad, shape):
    """Sum ``grad`` over the leading axes that broadcasting added."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap(a):
    return np.swapaxes(a, -1, -2)


class _OuterSum:
    """Deferred sum of products ``sum_k L_k @ R_k``.

    Recurrent weights receive one thin product per time step; keeping the
    factors and multiplying once at the end avoids materializing each term.
    """

    __slots__ = ("left", "right")

    def __init__(self, left, right):
        self.left, self.right = left, right

    def merge(self, other):
        if isinstance(other, _OuterSum):
            return _OuterSum(self.left + other.left, self.right + other.right)
        return self.materialize() + other

    def materialize(self):
        if len(self.left) == 1:
            return self.left[0] @ self.right[0]
        return np.concatenate(self.left, axis=1) @ np.concatenate(self.right, axis=0)


def _accumulate(acc, contrib):
    if isinstance(acc, _OuterSum):
        return acc.merge(contrib)
    if isinstance(contrib, _OuterSum):
        return contrib.materialize() + acc
    return acc + contrib


def _dense(g):
    return g.materialize() if isinstance(g, _OuterSum) else g


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- primitives

def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim < 2 or b.value.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    try:
        out = np.matmul(a.value, b.value)
    except ValueError as exc:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform") from exc
    av, bv = a.value, b.value
    if av.ndim == 2 and bv.ndim == 2 and av.shape[0] == 1:
        b_rule = lambda g: _OuterSum([av.T], [g])  # noqa: E731
    else:
        b_rule = lambda g: _unbroadcast(np.matmul(_swap(av), g), bv.shape)  # noqa: E731
    return _make(out, [
        (a, lambda g: _unbroadcast(np.matmul(g, _swap(bv)), av.shape)),
        (b, b_rule),
    ])


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_same("add", a, b)
    return _make(a.value + b.value, [(a, lambda g: g), (b, lambda g: g)])


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_same("sub", a, b)
    return _make(a.value - b.value, [(a, lambda g: g), (b, lambda g: -g)])


def add_broadcast_row(a, b) -> Node:
    """Add the row vector ``b`` (shape ``(1, c)`` or ``(c,)``) to every row of ``a``."""
    a, b = as_node(a), as_node(b)
    cols = a.shape[-1]
    if b.value.size != cols or (b.value.ndim == 2 and b.shape[0] != 1) or b.value.ndim > 2:
        raise ShapeError(f"add_broadcast_row: shapes {a.shape} and {b.shape} do not conform")
    bshape = b.shape
    return _make(a.value + b.value.reshape(cols), [
        (a, lambda g: g),
        (b, lambda g: g.reshape(-1, cols).sum(axis=0).reshape(bshape)),
    ])


def hadamard(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_same("hadamard", a, b)
    av, bv = a.value, b.value
    return _make(av * bv, [(a, lambda g: g * bv), (b, lambda g: g * av)])


def scale(a, s: float) -> Node:
    a = as_node(a)
    return _make(a.value * s, [(a, lambda g: g * s)])


def tanh(a) -> Node:
    a = as_node(a)
    out = np.tanh(a.value)
    return _make(out, [(a, lambda g: g * (1.0 - out * out))])


def sigmoid(a) -> Node:
    a = as_node(a)
    x = a.value
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.result_type(x, 0.0))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, [(a, lambda g: g * out * (1.0 - out))])


def softmax_rows(a) -> Node:
    a = as_node(a)
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return out * (g - (g * out).sum(axis=-1, keepdims=True))

    return _make(out, [(a, rule)])


def log_softmax_rows(a) -> Node:
    a = as_node(a)
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)
    return _make(out, [(a, lambda g: g - probs * g.sum(axis=-1, keepdims=True))])


def transpose(a) -> Node:
    a = as_node(a)
    return _make(_swap(a.value), [(a, _swap)])


def concat_cols(nodes: Sequence) -> Node:
    nodes = [as_node(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat_cols: nothing to concatenate")
    lead = nodes[0].shape[:-1]
    for n in nodes[1:]:
        if n.shape[:-1] != lead:
            raise ShapeError(f"concat_cols: shapes {nodes[0].shape} and {n.shape} do not conform")
    widths = [n.shape[-1] for n in nodes]
    bounds = np.cumsum([0] + widths)
    out = np.concatenate([n.value for n in nodes], axis=-1)
    parents = []
    for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
        parents.append((n, lambda g, lo=lo, hi=hi: g[..., lo:hi]))
    return _make(out, parents)


def concat_rows(nodes: Sequence) -> Node:
    nodes = [as_node(n) for n in nodes]
    return transpose(concat_cols([transpose(n) for n in nodes]))


def mean_rows(a) -> Node:
    """Column means: ``(..., r, c) -> (..., 1, c)``."""
    a = as_node(a)
    rows = a.shape[-2]
    return _make(a.value.mean(axis=-2, keepdims=True),
                 [(a, lambda g: np.broadcast_to(g / rows, a.value.shape).copy())])


def select_row(a, i: int) -> Node:
    a = as_node(a)
    if a.value.ndim != 2 or not -a.shape[0] <= i < a.shape[0]:
        raise ShapeError(f"select_row: row {i} out of range for shape {a.shape}")
    shape = a.shape

    def rule(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[i] = g[0]
        return full

    return _make(a.value[i:i + 1], [(a, rule)])


def slice_cols(a, lo: int, hi: int) -> Node:
    a = as_node(a)
    if not 0 <= lo < hi <= a.shape[-1]:
        raise ShapeError(f"slice_cols: [{lo}, {hi}) out of range for shape {a.shape}")
    shape = a.shape

    def rule(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., lo:hi] = g
        return full

    return _make(a.value[..., lo:hi], [(a, rule)])


def reshape(a, shape) -> Node:
    a = as_node(a)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from exc
    return _make(out, [(a, lambda g: g.reshape(old))])


def total(a) -> Node:
    """Sum of all entries as a 1x1 node."""
    a = as_node(a)
    shape = a.shape
    return _make(a.value.sum().reshape(1, 1), [(a, lambda g: np.full(shape, g.item()))])


def pick(a, r: int, c: int) -> Node:
    """Entry ``a[r, c]`` as a 1x1 node."""
    a = as_node(a)
    shape = a.shape

    def rule(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[r, c] = g.item()
        return full

    return _make(a.value[r:r + 1, c:c + 1].copy(), [(a, rule)])


def normalized_adjacency(a) -> Node:
    """``D^-1/2 A D^-1/2`` with ``D`` the row sums of each (stacked) matrix."""
    a = as_node(a)
    av = a.value
    deg = av.sum(axis=-1)
    if np.any(deg <= 0):
        raise ValueError("pooled isolated node")
    s = deg ** -0.5
    out = s[..., :, None] * av * s[..., None, :]

    def rule(g):
        direct = g * s[..., :, None] * s[..., None, :]
        gs = (g * av * s[..., None, :]).sum(axis=-1) + (g * av * s[..., :, None]).sum(axis=-2)
        gdeg = gs * (-0.5) * s ** 3
        return direct + gdeg[..., :, None]

    return _make(out, [(a, rule)])


def scaled_identity_minus(a, coeff: float, diag: float) -> Node:
    """``diag * I - coeff * a`` over the trailing square axes."""
    a = as_node(a)
    n = a.shape[-1]
    out = diag * np.eye(n) - coeff * a.value
    return _make(out, [(a, lambda g: -coeff * g)])


# ----------------------------------------------------------------- backward

def _topo_order(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every requires-grad leaf.

    Interior grads are transient; leaf grads accumulate across calls until
    zeroed.
    """
    if loss.value.size != 1 or loss.value.ndim != 2:
        raise ShapeError(f"backward: loss must be 1x1, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    pending = {id(loss): np.ones_like(loss.value, dtype=float)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        g = _dense(g)
        if not node.parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, rule in node.parents:
            contrib = rule(g)
            key = id(parent)
            pending[key] = contrib if key not in pending else _accumulate(pending[key], contrib)


# ------------------------------------------------------------ parameter store

class ParamStore:
    """Named leaf parameters with deterministic initialization."""

    def __init__(self, seed: int = 0, dtype=np.float64):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Node] = {}

    def __getitem__(self, name) -> Node:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def add(self, name: str, value) -> Node:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        node = Node(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = node
        return node

    def weight(self, name: str, shape: tuple[int, int], fan_in=None, fan_out=None) -> Node:
        """Glorot-uniform weight in +-sqrt(6 / (fan_in + fan_out))."""
        fan_in = shape[0] if fan_in is None else fan_in
        fan_out = shape[1] if fan_out is None else fan_out
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self.rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape) -> Node:
        return self.add(name, np.zeros(shape))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (np.zeros_like(p.value) if p.grad is None else p.grad)
                for k, p in self.params.items()}

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ShapeError(f"{k}: checkpoint shape {v.shape} vs model shape {self.params[k].shape}")
            self.params[k].value = np.array(v, dtype=self.dtype)

    def clone(self) -> "ParamStore":
        other = ParamStore(self.seed, self.dtype)
        for k, p in self.params.items():
            other.add(k, p.value.copy())
        return other

    def astype(self, dtype) -> "ParamStore":
        other = ParamStore(self.seed, dtype)
        for k, p in self.params.items():
            other.add(k, p.value)
        return other


def save_checkpoint(path, store: ParamStore, meta: dict | None = None,
                    extras: dict[str, np.ndarray] | None = None) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "params": [[k, list(p.shape)] for k, p in store.items()],
        "seed": store.seed,
        "meta": meta or {},
    }
    arrays = {"__header__": np.array(json.dumps(header, sort_keys=True))}
    for k, p in store.items():
        arrays[f"param/{k}"] = np.ascontiguousarray(p.value, dtype=np.float64)
    for k, v in (extras or {}).items():
        arrays[f"extra/{k}"] = np.ascontiguousarray(v, dtype=np.float64)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[ParamStore, dict, dict[str, np.ndarray]]:
    """Return ``(store, meta, extras)``."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not an a2gnn checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        store = ParamStore(header.get("seed", 0))
        for name, shape in header["params"]:
            arr = data[f"param/{name}"]
            if list(arr.shape) != shape:
                raise ShapeError(f"{name}: header shape {shape} vs stored {list(arr.shape)}")
            store.add(name, arr)
        extras = {k[len("extra/"):]: data[k].copy() for k in data.files if k.startswith("extra/")}
    return store, header["meta"], extras


# ---------------------------------------------------------------- gradcheck

@dataclass
class GradcheckEntry:
    name: str
    max_rel_error: float
    checked: int
    passed: bool


@dataclass
class GradcheckReport:
    entries: list[GradcheckEntry] = field(default_factory=list)
    tol: float = 0.0

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def failures(self) -> list[GradcheckEntry]:
        return [e for e in self.entries if not e.passed]

    def lines(self) -> list[str]:
        return [f"{'PASS' if e.passed else 'FAIL'} {e.name} max_rel_err={e.max_rel_error:.3e} "
                f"coords={e.checked}" for e in self.entries]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute difference scaled by the larger of the two gradients' max norms."""
    diff = np.max(np.abs(analytic - numeric)) if analytic.size else 0.0
    denom = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    if denom == 0.0:
        return float(diff)
    return float(diff / denom)


def gradcheck(builder: Callable[[ParamStore], Node], store: ParamStore, step: float = 1e-5,
              tol: float = 1e-4, max_coords: int | None = None, names: Iterable[str] | None = None,
              seed: int = 0) -> GradcheckReport:
    """Compare tape gradients with central differences for each named parameter.

    ``max_coords`` caps the coordinates probed per parameter (sampled with
    ``seed``); ``None`` probes all of them.
    """
    if step == 0:
        raise ValueError("degenerate step")
    store.zero_grad()
    backward(builder(store))
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tol=tol)
    for name in (list(names) if names is not None else list(store)):
        p = store[name]
        analytic = np.zeros_like(p.value) if p.grad is None else p.grad.copy()
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        numeric = np.empty(idx.size)
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = builder(store).value.item()
            flat[i] = orig - step
            down = builder(store).value.item()
            flat[i] = orig
            numeric[n] = (up - down) / (2 * step)
            if not np.isfinite(numeric[n]):
                raise FloatingPointError(f"non-finite loss while probing {name}[{i}]")
        err = relative_error(analytic.reshape(-1)[idx], numeric)
        report.entries.append(GradcheckEntry(name, err, int(idx.size), err < tol))
    store.zero_grad()
    return report
