"""Learnable layers: Chebyshev spectral filtering, action attending, peephole LSTM.

All forward functions take ``diffcore`` nodes (or plain arrays) and build the
tape as they go. Spatial layers accept a leading frame axis, so a whole
sequence of ``T`` frames is processed as one ``(T, N, d)`` stack.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import diffcore as dc
from .diffcore import Node, ParamStore, ShapeError

LSTM_GATES = ("i", "f", "c", "o")


@dataclass(frozen=True)
class SpectralFilterParams:
    theta: Node
    order: int

    def __post_init__(self):
        rows = self.theta.shape[0]
        if self.order < 1 or rows % self.order:
            raise ShapeError(f"Theta with {rows} rows is not a multiple of K={self.order}")

    @property
    def d_in(self) -> int:
        return self.theta.shape[0] // self.order

    @property
    def d_out(self) -> int:
        return self.theta.shape[1]

    @classmethod
    def create(cls, store: ParamStore, prefix: str, d_in: int, d_out: int, order: int):
        return cls(store.weight(f"{prefix}.theta", (d_in * order, d_out)), order)

    @classmethod
    def bind(cls, store: ParamStore, prefix: str, order: int):
        return cls(store[f"{prefix}.theta"], order)


@dataclass(frozen=True)
class AttendParams:
    q: Node   # d_z x d'
    v: Node   # d' x N'
    b: Node   # 1 x d'

    def __post_init__(self):
        dz, dp = self.q.shape
        if self.v.shape[0] != dp or self.b.shape != (1, dp):
            raise ShapeError(f"attend params disagree: Q {self.q.shape}, V {self.v.shape}, b {self.b.shape}")

    @classmethod
    def create(cls, store: ParamStore, prefix: str, d_z: int, num_nodes: int,
               d_hidden: int | None = None, num_out: int | None = None):
        d_hidden = d_z if d_hidden is None else d_hidden
        num_out = num_nodes if num_out is None else num_out
        return cls(store.weight(f"{prefix}.Q", (d_z, d_hidden)),
                   store.weight(f"{prefix}.V", (d_hidden, num_out)),
                   store.zeros(f"{prefix}.b", (1, d_hidden)))

    @classmethod
    def bind(cls, store: ParamStore, prefix: str):
        return cls(store[f"{prefix}.Q"], store[f"{prefix}.V"], store[f"{prefix}.b"])


@dataclass(frozen=True)
class LstmParams:
    """Peephole LSTM weights; input and recurrent matrices are ``d_h x fan_in``."""

    w_z: dict[str, Node]
    w_h: dict[str, Node]
    w_c: dict[str, Node]  # peepholes for i, f, o; each 1 x d_h
    bias: dict[str, Node]

    @property
    def hidden(self) -> int:
        return self.w_h["i"].shape[0]

    @property
    def input_size(self) -> int:
        return self.w_z["i"].shape[1]

    @classmethod
    def create(cls, store: ParamStore, prefix: str, input_size: int, hidden: int):
        w_z = {g: store.weight(f"{prefix}.W_z{g}", (hidden, input_size), input_size, hidden)
               for g in LSTM_GATES}
        w_h = {g: store.weight(f"{prefix}.W_h{g}", (hidden, hidden)) for g in LSTM_GATES}
        w_c = {g: store.zeros(f"{prefix}.w_c{g}", (1, hidden)) for g in ("i", "f", "o")}
        bias = {g: store.zeros(f"{prefix}.b_{g}", (1, hidden)) for g in LSTM_GATES}
        return cls(w_z, w_h, w_c, bias)

    @classmethod
    def bind(cls, store: ParamStore, prefix: str):
        return cls({g: store[f"{prefix}.W_z{g}"] for g in LSTM_GATES},
                   {g: store[f"{prefix}.W_h{g}"] for g in LSTM_GATES},
                   {g: store[f"{prefix}.w_c{g}"] for g in ("i", "f", "o")},
                   {g: store[f"{prefix}.b_{g}"] for g in LSTM_GATES})


@dataclass(frozen=True)
class HeadParams:
    fc1: Node   # d_h x d_h
    b1: Node    # 1 x d_h
    fc2: Node   # C x d_h
    b2: Node    # 1 x C

    @classmethod
    def create(cls, store: ParamStore, prefix: str, hidden: int, num_classes: int):
        if num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {num_classes}")
        return cls(store.weight(f"{prefix}.FC1", (hidden, hidden)),
                   store.zeros(f"{prefix}.b1", (1, hidden)),
                   store.weight(f"{prefix}.FC2", (num_classes, hidden)),
                   store.zeros(f"{prefix}.b2", (1, num_classes)))

    @classmethod
    def bind(cls, store: ParamStore, prefix: str):
        return cls(store[f"{prefix}.FC1"], store[f"{prefix}.b1"],
                   store[f"{prefix}.FC2"], store[f"{prefix}.b2"])


# ----------------------------------------------------------------- spectral

def chebyshev_terms(scaled_lap, x, order: int) -> list[Node]:
    """Differentiable ``[T_0(L)X, ..., T_{K-1}(L)X]``; ``L`` may itself be a node."""
    lap, x = dc.as_node(scaled_lap), dc.as_node(x)
    if order < 1:
        raise ValueError(f"Chebyshev order K must be >= 1, got {order}")
    terms = [x]
    if order > 1:
        terms.append(dc.matmul(lap, x))
    for _ in range(2, order):
        terms.append(dc.sub(dc.scale(dc.matmul(lap, terms[-1]), 2.0), terms[-2]))
    return terms


def spectral_filter_forward(scaled_lap, x, params: SpectralFilterParams) -> Node:
    """``[T_0(L)X | ... | T_{K-1}(L)X] @ Theta``."""
    x = dc.as_node(x)
    if x.shape[-1] != params.d_in:
        raise ShapeError(f"signals have {x.shape[-1]} channels, Theta expects {params.d_in}")
    stacked = dc.concat_cols(chebyshev_terms(scaled_lap, x, params.order))
    return dc.matmul(stacked, params.theta)


# ---------------------------------------------------------------- attending

class AttendOutput(NamedTuple):
    weights: Node        # N' x N, row-stochastic
    pooled: Node         # N' x d_z
    adjacency: Node      # N' x N'
    scaled_lap: Node     # N' x N'


def pooled_laplacian(adjacency, lambda_policy: str = "fixed") -> Node:
    """Scaled Laplacian ``(2/lam) (I - D^-1/2 A D^-1/2) - I`` of a pooled graph.

    ``fixed`` uses ``lam = 2``. ``estimate`` runs power iteration on each
    normalized Laplacian (capped at 2) and differentiates through the
    eigenvalue with its eigenvector.
    """
    adjacency = dc.as_node(adjacency)
    norm_adj = dc.normalized_adjacency(adjacency)
    if lambda_policy == "fixed":
        return dc.scale(norm_adj, -1.0)
    if lambda_policy != "estimate":
        raise ValueError(f"unknown lambda policy {lambda_policy!r}")
    return _scale_by_estimated_lambda(norm_adj)


def _scale_by_estimated_lambda(norm_adj: Node) -> Node:
    s = norm_adj.value
    stack = s.reshape(-1, *s.shape[-2:])
    n = s.shape[-1]
    eye = np.eye(n)
    lams, vecs = [], []
    # eigh, not power iteration: pooled spectra often have a near-degenerate top
    vals, basis = np.linalg.eigh(eye - 0.5 * (stack + np.swapaxes(stack, -1, -2)))
    for lam, vec in zip(vals[:, -1], basis[:, :, -1]):
        lam = float(lam)
        if lam >= 2.0:
            lam, vec = 2.0, None
        lams.append(lam)
        vecs.append(vec)
    lam_arr = np.array(lams).reshape(s.shape[:-2] + (1, 1))
    lap = eye - s
    out = (2.0 / lam_arr) * lap - eye

    def rule(g):
        # d out / d S through both the explicit -S and lambda(S)
        direct = -(2.0 / lam_arr) * g
        coeff = (-2.0 / lam_arr ** 2) * (g * lap).sum(axis=(-1, -2), keepdims=True)
        extra = np.zeros_like(stack)
        coeff_flat = coeff.reshape(-1)
        for idx, vec in enumerate(vecs):
            if vec is not None:
                # d lambda / d S = -v v^T since lambda is an eigenvalue of I - S
                extra[idx] = -coeff_flat[idx] * np.outer(vec, vec)
        return direct + extra.reshape(s.shape)

    return dc._make(out, [(norm_adj, rule)])


def attend_forward(z, adjacency, params: AttendParams, lambda_policy: str = "fixed") -> AttendOutput:
    """Dynamic node weighting and the graph pooling update.

    ``W = softmax_rows((tanh(Z Q + b) V)^T)``, ``Z~ = W Z``, ``A' = W A W^T``.
    """
    z, adjacency = dc.as_node(z), dc.as_node(adjacency)
    if z.shape[-1] != params.q.shape[0]:
        raise ShapeError(f"features have {z.shape[-1]} channels, Q expects {params.q.shape[0]}")
    if adjacency.shape[-1] != z.shape[-2]:
        raise ShapeError(f"adjacency {adjacency.shape} does not match features {z.shape}")
    hidden = dc.tanh(dc.add_broadcast_row(dc.matmul(z, params.q), params.b))
    weights = dc.softmax_rows(dc.transpose(dc.matmul(hidden, params.v)))
    pooled = dc.matmul(weights, z)
    new_adj = dc.matmul(dc.matmul(weights, adjacency), dc.transpose(weights))
    if np.any(new_adj.value.sum(axis=-1) <= 0):
        raise ValueError("pooled isolated node")
    return AttendOutput(weights, pooled, new_adj, pooled_laplacian(new_adj, lambda_policy))


# --------------------------------------------------------------------- LSTM

class LstmState(NamedTuple):
    h: Node
    c: Node
    o: Node


def _affine(x: Node, w: Node) -> Node:
    return dc.matmul(x, dc.transpose(w))


def _fused(params: LstmParams):
    """Gate-stacked weights: input ``(fan_in, 4 d_h)``, recurrent ``(d_h, 4 d_h)``, bias ``(1, 4 d_h)``."""
    w_z = dc.transpose(dc.concat_rows([params.w_z[g] for g in LSTM_GATES]))
    w_h = dc.transpose(dc.concat_rows([params.w_h[g] for g in LSTM_GATES]))
    bias = dc.concat_cols([params.bias[g] for g in LSTM_GATES])
    return w_z, w_h, bias


def _cell(z_pre: Node, h_prev: Node, c_prev: Node, w_h: Node, params: LstmParams) -> LstmState:
    d = params.hidden
    pre = dc.add(z_pre, dc.matmul(h_prev, w_h))
    gate = {g: dc.slice_cols(pre, k * d, (k + 1) * d) for k, g in enumerate(LSTM_GATES)}
    i = dc.sigmoid(dc.add(gate["i"], dc.hadamard(params.w_c["i"], c_prev)))
    f = dc.sigmoid(dc.add(gate["f"], dc.hadamard(params.w_c["f"], c_prev)))
    c = dc.add(dc.hadamard(f, c_prev), dc.hadamard(i, dc.tanh(gate["c"])))
    o = dc.sigmoid(dc.add(gate["o"], dc.hadamard(params.w_c["o"], c)))
    h = dc.hadamard(o, dc.tanh(c))
    return LstmState(h, c, o)


def lstm_step(z_t, h_prev, c_prev, params: LstmParams) -> LstmState:
    """One peephole LSTM step on row vectors (``1 x width``)."""
    z_t, h_prev, c_prev = dc.as_node(z_t), dc.as_node(h_prev), dc.as_node(c_prev)
    if z_t.shape != (1, params.input_size):
        raise ShapeError(f"lstm input shape {z_t.shape}, expected (1, {params.input_size})")
    if h_prev.shape != (1, params.hidden) or c_prev.shape != (1, params.hidden):
        raise ShapeError(f"lstm state shapes {h_prev.shape}, {c_prev.shape}, expected (1, {params.hidden})")
    w_z, w_h, bias = _fused(params)
    return _cell(dc.add(dc.matmul(z_t, w_z), bias), h_prev, c_prev, w_h, params)


def lstm_sequence(inputs, params: LstmParams) -> list[LstmState]:
    """Run the LSTM over the rows of ``inputs`` (``T x width``) from a zero state.

    All frames are projected through the input weights with one matmul.
    """
    inputs = dc.as_node(inputs)
    if inputs.value.ndim != 2 or inputs.shape[1] != params.input_size:
        raise ShapeError(f"lstm inputs shape {inputs.shape}, expected (T, {params.input_size})")
    w_z, w_h, bias = _fused(params)
    proj = dc.add_broadcast_row(dc.matmul(inputs, w_z), bias)
    dtype = params.w_h["i"].value.dtype
    h = dc.Node(np.zeros((1, params.hidden), dtype=dtype))
    c = dc.Node(np.zeros((1, params.hidden), dtype=dtype))
    states = []
    for t in range(inputs.shape[0]):
        state = _cell(dc.select_row(proj, t), h, c, w_h, params)
        h, c = state.h, state.c
        states.append(state)
    return states


# --------------------------------------------------------------- classifier

def classify_logits(features, params: HeadParams) -> Node:
    features = dc.as_node(features)
    hidden = dc.tanh(dc.add(_affine(features, params.fc1), params.b1))
    return dc.add(_affine(hidden, params.fc2), params.b2)


def classify(features, params: HeadParams) -> Node:
    """Class probabilities (``1 x C``)."""
    return dc.softmax_rows(classify_logits(features, params))
