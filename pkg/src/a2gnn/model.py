"""The full network: two spectral/attend stages, a peephole LSTM and a classifier."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from . import layers
from .config import TrainConfig
from .diffcore import Node, ParamStore
from .graphcore import GraphError, LaplacianPair, adjacency_from_edges, is_connected


@dataclass
class ForwardResult:
    logits: Node
    attend_weights: list[Node]   # one (T, N', N) stack per attending layer

    @property
    def probabilities(self) -> np.ndarray:
        z = self.logits.value[0] - self.logits.value[0].max()
        e = np.exp(z)
        return e / e.sum()


class A2GNN:
    """Skeleton sequence classifier.

    Per frame: spectral filter -> attend -> spectral filter on the pooled
    graph -> attend -> row-major flatten; the flattened frames feed the LSTM
    and the aggregated output-gate responses feed the classifier.
    """

    def __init__(self, config: TrainConfig, num_nodes: int, edges: Sequence[tuple[int, int]],
                 num_classes: int, store: ParamStore | None = None):
        if num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {num_classes}")
        self.config = config
        self.num_nodes = num_nodes
        self.edges = [tuple(int(v) for v in e) for e in edges]
        self.num_classes = num_classes
        self.dtype = np.dtype(config.precision)

        adjacency = adjacency_from_edges(num_nodes, self.edges)
        if not is_connected(adjacency):
            raise GraphError("skeleton template is not connected")
        lam = 2.0 if config.lambda_policy == "fixed" else None
        self.laplacian = LaplacianPair.from_adjacency(adjacency, lam)
        self.adjacency = adjacency.astype(self.dtype)
        self.scaled_lap = self.laplacian.scaled.astype(self.dtype)

        fresh = store is None
        self.store = ParamStore(config.seed, self.dtype) if fresh else store
        self._build_params(fresh)

    def _build_params(self, fresh: bool):
        c1, c2 = self.config.channels
        k, n, s = self.config.K, self.num_nodes, self.store
        if fresh:
            self.spec1 = layers.SpectralFilterParams.create(s, "spectral1", 3, c1, k)
            self.att1 = layers.AttendParams.create(s, "attend1", c1, n) if self.config.use_attend else None
            self.spec2 = layers.SpectralFilterParams.create(s, "spectral2", c1, c2, k)
            self.att2 = layers.AttendParams.create(s, "attend2", c2, n) if self.config.use_attend else None
            self.lstm = layers.LstmParams.create(s, "lstm", n * c2, self.config.d_h)
            self.head = layers.HeadParams.create(s, "head", self.config.d_h, self.num_classes)
        else:
            self.spec1 = layers.SpectralFilterParams.bind(s, "spectral1", k)
            self.att1 = layers.AttendParams.bind(s, "attend1") if self.config.use_attend else None
            self.spec2 = layers.SpectralFilterParams.bind(s, "spectral2", k)
            self.att2 = layers.AttendParams.bind(s, "attend2") if self.config.use_attend else None
            self.lstm = layers.LstmParams.bind(s, "lstm")
            self.head = layers.HeadParams.bind(s, "head")
        self._check_shapes()

    def _check_shapes(self):
        c1, c2 = self.config.channels
        n = self.num_nodes
        expect = {
            "spectral1.theta": (3 * self.config.K, c1),
            "spectral2.theta": (c1 * self.config.K, c2),
            "lstm.W_zi": (self.config.d_h, n * c2),
            "head.FC2": (self.num_classes, self.config.d_h),
        }
        if self.config.use_attend:
            expect["attend1.V"] = (c1, n)
            expect["attend2.V"] = (c2, n)
        for name, shape in expect.items():
            if self.store[name].shape != shape:
                raise dc.ShapeError(f"{name} has shape {self.store[name].shape}, expected {shape}")

    @property
    def lstm_input_width(self) -> int:
        return self.lstm.input_size

    def with_template(self, num_nodes: int, edges) -> "A2GNN":
        """Same parameters, different joint numbering of the template."""
        return A2GNN(self.config, num_nodes, edges, self.num_classes, store=self.store)

    # ---------------------------------------------------------------- forward

    def _frames(self, frames) -> np.ndarray:
        x = np.asarray(frames, dtype=self.dtype)
        if x.ndim != 3 or x.shape[1:] != (self.num_nodes, 3) or x.shape[0] < 1:
            raise ValueError(f"frames must have shape (T, {self.num_nodes}, 3), got {x.shape}")
        return x

    def forward(self, frames) -> ForwardResult:
        x = self._frames(frames)
        policy = self.config.lambda_policy
        weights = []
        z = layers.spectral_filter_forward(self.scaled_lap, x, self.spec1)
        adjacency, lap = self.adjacency, self.scaled_lap
        if self.att1 is not None:
            out = layers.attend_forward(z, adjacency, self.att1, policy)
            weights.append(out.weights)
            z, adjacency, lap = out.pooled, out.adjacency, out.scaled_lap
        z = layers.spectral_filter_forward(lap, z, self.spec2)
        if self.att2 is not None:
            out = layers.attend_forward(z, adjacency, self.att2, policy)
            weights.append(out.weights)
            z = out.pooled
        t = x.shape[0]
        flat = dc.reshape(z, (t, z.shape[-2] * z.shape[-1]))
        states = layers.lstm_sequence(flat, self.lstm)
        responses = [s.o if self.config.response == "o" else s.h for s in states]
        if self.config.temporal_agg == "last":
            feature = responses[-1]
        else:
            feature = dc.mean_rows(dc.concat_rows(responses))
        return ForwardResult(layers.classify_logits(feature, self.head), weights)

    def forward_sequence(self, frames) -> tuple[np.ndarray, np.ndarray | None]:
        """Class probabilities and the first attending layer's ``(T, N', N)`` weights."""
        res = self.forward(frames)
        first = res.attend_weights[0].value.copy() if res.attend_weights else None
        return res.probabilities, first

    def predict(self, frames) -> int:
        return int(np.argmax(self.forward(frames).logits.value))

    def loss_node(self, frames, label: int) -> Node:
        if not 0 <= label < self.num_classes:
            raise ValueError(f"label {label} outside [0, {self.num_classes})")
        logp = dc.log_softmax_rows(self.forward(frames).logits)
        return dc.scale(dc.pick(logp, 0, label), -1.0)

    def loss(self, frames, label: int) -> float:
        return float(self.loss_node(frames, label).value.item())

    def extract_au_weights(self, frames) -> np.ndarray:
        """Per-frame joint saliency: column means of the first attending layer's W."""
        if self.att1 is None:
            raise ValueError("model has no attending layer")
        _, w = self.forward_sequence(frames)
        return w.mean(axis=1)

    def header(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "num_nodes": self.num_nodes,
            "edges": [list(e) for e in self.edges],
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_header(cls, header: dict, store: ParamStore) -> "A2GNN":
        cfg = TrainConfig.from_dict(header["config"])
        if store.dtype != np.dtype(cfg.precision):
            store = store.astype(cfg.precision)
        return cls(cfg, header["num_nodes"], [tuple(e) for e in header["edges"]],
                   header["num_classes"], store=store)

    def save(self, path, meta: dict | None = None, extras=None):
        header = self.header()
        header.update(meta or {})
        dc.save_checkpoint(path, self.store, header, extras)

    @classmethod
    def load(cls, path) -> tuple["A2GNN", dict, dict]:
        store, meta, extras = dc.load_checkpoint(path)
        return cls.from_header(meta, store), meta, extras


def build(config: TrainConfig, num_nodes: int, edges, num_classes: int) -> A2GNN:
    return A2GNN(config, num_nodes, edges, num_classes)
