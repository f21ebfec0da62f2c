"""Encoder, Q-decoder, reward and prototype networks for the two agents.

States are encoded in batches: any number of residual graphs that share one
base graph are stacked as a block-diagonal normalized adjacency over their
alive nodes, so an entire minibatch costs a handful of sparse products.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import nn
from .graph import Graph, GraphError
from .nn import Param, Tensor


@dataclass
class GraphBatch:
    """Several residual states of one base graph, stacked row-wise over alive nodes."""

    adj: sp.csr_matrix  # R x R, D^-1/2 (A + I) D^-1/2 per block
    pool: np.ndarray  # B x R mean-pooling operator
    spread: np.ndarray  # R x B broadcast of per-state rows
    node_ids: np.ndarray  # R original node ids
    offsets: np.ndarray  # B + 1 row offsets
    channel: np.ndarray | None = None  # R x 1 importance indicator

    @property
    def size(self) -> int:
        return len(self.offsets) - 1

    def rows_of(self, b: int) -> slice:
        return slice(int(self.offsets[b]), int(self.offsets[b + 1]))

    def row_index(self, b: int, node: int) -> int:
        rows = self.node_ids[self.rows_of(b)]
        k = int(np.searchsorted(rows, node))
        if k >= len(rows) or rows[k] != node:
            raise GraphError(f"node {node} is not alive in state {b}")
        return int(self.offsets[b]) + k


def build_batch(
    base: Graph, masks: np.ndarray, importance: Iterable[int] | None = None
) -> GraphBatch:
    """Stack alive-node subgraphs given a ``B x N`` boolean mask array."""
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    b_count, n = masks.shape
    counts = masks.sum(axis=1)
    if np.any(counts == 0):
        raise GraphError("cannot encode an empty graph")
    flat = masks.reshape(-1)
    pos = np.cumsum(flat) - 1
    total = int(flat.sum())
    src, dst = base.arcs()
    keep = masks[:, src] & masks[:, dst]
    bi, ai = np.nonzero(keep)  # row-major, so rows come out sorted
    rows = pos[bi * n + src[ai]]
    cols = pos[bi * n + dst[ai]]
    deg = np.bincount(rows, minlength=total).astype(float)  # self-loop included
    dinv = 1.0 / np.sqrt(deg)
    indptr = np.concatenate([[0], np.cumsum(deg, dtype=np.int64)])
    adj = sp.csr_matrix((dinv[rows] * dinv[cols], cols, indptr), shape=(total, total))
    owner = np.repeat(np.arange(b_count), counts)
    diag = np.arange(total)
    pool = np.zeros((b_count, total))
    pool[owner, diag] = 1.0 / counts[owner]
    spread = np.zeros((total, b_count))
    spread[diag, owner] = 1.0
    node_ids = np.nonzero(masks)[1]
    offsets = np.concatenate([[0], np.cumsum(counts)])
    channel = None
    if importance is not None:
        ind = np.zeros(n)
        ind[list(importance)] = 1.0
        channel = ind[node_ids].reshape(-1, 1)
    return GraphBatch(adj, pool, spread, node_ids, offsets, channel)


def batch_for(g: Graph, importance: Iterable[int] | None = None) -> GraphBatch:
    return build_batch(g, g.alive[None, :], importance)


# --- parameter containers ---------------------------------------------------


class Module:
    def params(self) -> list[Param]:
        raise NotImplementedError

    def copy_from(self, other: Module) -> None:
        for dst, src in zip(self.params(), other.params()):
            dst.value[...] = src.value

    def clone(self) -> Module:
        return copy.deepcopy(self)


class SharedEncoderParams(Module):
    def __init__(self, rng: np.random.Generator, d_in: int = 1, width: int = 64) -> None:
        self.width = width
        self.w1 = nn.glorot(rng, d_in, width, "w1")

    def params(self) -> list[Param]:
        return [self.w1]


class EncoderLayer(Module):
    def __init__(self, rng: np.random.Generator, d: int, i: int) -> None:
        self.w2 = nn.glorot(rng, d, d, f"l{i}.w2")
        self.w3 = nn.glorot(rng, d, d, f"l{i}.w3")
        self.node_w = nn.glorot(rng, 2 * d, d, f"l{i}.node_w")
        self.node_b = nn.zeros(1, d, f"l{i}.node_b")
        self.graph_w = nn.glorot(rng, 2 * d, d, f"l{i}.graph_w")
        self.graph_b = nn.zeros(1, d, f"l{i}.graph_b")

    def params(self) -> list[Param]:
        return [self.w2, self.w3, self.node_w, self.node_b, self.graph_w, self.graph_b]


class TaskEncoderParams(Module):
    """Per-agent refinement layers; the RDA variant also owns the importance channel weight."""

    def __init__(self, rng: np.random.Generator, width: int = 64, depth: int = 3, importance_channel: bool = False) -> None:
        self.width = width
        self.layers = [EncoderLayer(rng, width, i) for i in range(depth)]
        self.w_importance = nn.glorot(rng, 1, width, "importance") if importance_channel else None

    def params(self) -> list[Param]:
        out = [p for layer in self.layers for p in layer.params()]
        if self.w_importance is not None:
            out.append(self.w_importance)
        return out


class QDecoderParams(Module):
    def __init__(self, rng: np.random.Generator, width: int = 64, hidden: Sequence[int] = (64, 32)) -> None:
        dims = [2 * width, *hidden]
        self.hidden = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            self.hidden.append(
                (nn.glorot(rng, a, b, f"h{i}.w"), nn.zeros(1, b, f"h{i}.b"),
                 Param(np.ones((1, b)), f"h{i}.ln_gain"), nn.zeros(1, b, f"h{i}.ln_bias"))
            )
        self.out_w = nn.glorot(rng, dims[-1], 1, "out.w")
        self.out_b = nn.zeros(1, 1, "out.b")

    def params(self) -> list[Param]:
        return [p for layer in self.hidden for p in layer] + [self.out_w, self.out_b]


class RewardNetParams(Module):
    def __init__(self, rng: np.random.Generator, width: int = 64) -> None:
        self.w1r = nn.glorot(rng, 2 * width, width, "w1r")
        # zero output layer: every step reward starts at exactly 0
        self.w2r = nn.zeros(width, 1, "w2r")

    def params(self) -> list[Param]:
        return [self.w1r, self.w2r]


class PrototypeEncoderParams(Module):
    def __init__(self, rng: np.random.Generator, width: int = 64) -> None:
        self.fuse_w = nn.glorot(rng, 2 * width, width, "fuse_w")
        self.fuse_b = nn.zeros(1, width, "fuse_b")
        self.gru = nn.GRUParams(rng, width, "gru.")

    def params(self) -> list[Param]:
        return [self.fuse_w, self.fuse_b, *self.gru.params()]


# --- forward passes ---------------------------------------------------------


def shared_forward(batch: GraphBatch, shared: SharedEncoderParams, task: TaskEncoderParams | None = None) -> tuple[Tensor, Tensor]:
    """H0 = ReLU(A_hat X W1) with all-ones X; the RDA importance column adds A_hat c w_imp."""
    ones_agg = np.asarray(batch.adj.sum(axis=1)).reshape(-1, 1)
    pre = nn.matmul(nn.const(ones_agg), shared.w1)
    if task is not None and task.w_importance is not None:
        channel = batch.channel if batch.channel is not None else np.zeros((len(batch.node_ids), 1))
        if channel.any():
            pre = nn.add(pre, nn.matmul(nn.const(batch.adj @ channel), task.w_importance))
    h = nn.relu(pre)
    return h, nn.spmm(batch.pool, h)


def task_forward(h: Tensor, z: Tensor, batch: GraphBatch, task: TaskEncoderParams) -> tuple[Tensor, Tensor]:
    for layer in task.layers:
        zw = nn.matmul(z, layer.w2)
        agg = nn.matmul(nn.spmm(batch.adj, h), layer.w3)
        h = nn.relu(nn.linear(nn.concat_cols([agg, nn.spmm(batch.spread, zw)]), layer.node_w, layer.node_b))
        pooled = nn.matmul(nn.spmm(batch.pool, h), layer.w3)
        z = nn.relu(nn.linear(nn.concat_cols([pooled, zw]), layer.graph_w, layer.graph_b))
    return h, z


def q_forward(h: Tensor, z: Tensor, batch: GraphBatch, q: QDecoderParams) -> Tensor:
    x = nn.concat_cols([h, nn.spmm(batch.spread, z)])
    for w, b, gain, bias in q.hidden:
        x = nn.relu(nn.layer_norm(nn.linear(x, w, b), gain, bias))
    return nn.linear(x, q.out_w, q.out_b)


def shared_encode(g: Graph, shared: SharedEncoderParams) -> tuple[Tensor, Tensor]:
    if g.alive_count == 0:
        raise GraphError("cannot encode an empty graph")
    return shared_forward(batch_for(g), shared)


def task_encode(h: Tensor, z: Tensor, batch: GraphBatch, task: TaskEncoderParams) -> tuple[Tensor, Tensor]:
    if h.shape[1] != task.width or z.shape[1] != task.width:
        raise nn.ShapeError(f"task_encode: embeddings {h.shape}/{z.shape} vs width {task.width}")
    return task_forward(h, z, batch, task)


def reward_step(graph_embed: Tensor, action_embed: Tensor, rn: RewardNetParams) -> Tensor:
    """tanh(W2 ReLU(W1 [h_G, h_a])), one row per state-action pair."""
    x = nn.concat_cols([graph_embed, action_embed])
    return nn.tanh(nn.matmul(nn.relu(nn.matmul(x, rn.w1r)), rn.w2r))


def fuse_pairs(graph_embed: Tensor, action_embed: Tensor, proto: PrototypeEncoderParams) -> Tensor:
    return nn.linear(nn.concat_cols([graph_embed, action_embed]), proto.fuse_w, proto.fuse_b)


def encode_window(pairs: Sequence[tuple[np.ndarray, np.ndarray]], proto: PrototypeEncoderParams) -> Tensor:
    """Fold fused (h_G, h_a) pairs left to right through the GRU from a zero state."""
    if not pairs:
        raise ValueError("encode_window needs at least one state-action pair")
    h = nn.const(np.zeros((1, proto.gru.width)))
    for g_emb, a_emb in pairs:
        x = fuse_pairs(_row(g_emb), _row(a_emb), proto)
        h = nn.gru_cell(h, x, proto.gru)
    return h


def encode_windows(
    graph_embeds: np.ndarray, action_embeds: np.ndarray, windows: Sequence[tuple[int, int]], proto: PrototypeEncoderParams
) -> np.ndarray:
    """Encode many ``[start, stop)`` windows over one embedding sequence at once.

    Windows of different lengths are right-aligned; rows sit idle (state kept
    at zero) until their window begins.
    """
    if not windows:
        return np.zeros((0, proto.gru.width))
    lengths = np.array([stop - start for start, stop in windows])
    if np.any(lengths < 1):
        raise ValueError("windows must be non-empty")
    longest = int(lengths.max())
    with nn.no_grad():
        fused = fuse_pairs(nn.const(graph_embeds), nn.const(action_embeds), proto).value
        h = np.zeros((len(windows), proto.gru.width))
        for step in range(longest):
            offset = step - (longest - lengths)  # position within each window
            active = offset >= 0
            idx = np.array([start for start, _ in windows]) + np.maximum(offset, 0)
            nxt = nn.gru_cell(nn.const(h), nn.const(fused[idx]), proto.gru).value
            h = np.where(active[:, None], nxt, h)
    return h


def _row(x: np.ndarray | Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return nn.const(np.asarray(x, dtype=np.float64).reshape(1, -1))


# --- agent bundle -----------------------------------------------------------


@dataclass
class Encoded:
    """Forward result for a batch: final node/graph embeddings and Q-values."""

    batch: GraphBatch
    h: Tensor
    z: Tensor
    q: Tensor | None = None


class ModelBundle:
    """All learnable pieces of one agent; ``shared`` is the same object for both agents."""

    def __init__(self, kind: str, shared: SharedEncoderParams, rng: np.random.Generator, width: int = 64,
                 depth: int = 3, q_hidden: Sequence[int] = (64, 32)) -> None:
        if kind not in ("vda", "rda"):
            raise ValueError(f"unknown agent kind {kind!r}")
        self.kind = kind
        self.width = width
        self.shared = shared
        self.encoder = TaskEncoderParams(rng, width, depth, importance_channel=(kind == "rda"))
        self.q = QDecoderParams(rng, width, q_hidden)
        self.reward = RewardNetParams(rng, width)
        self.proto = PrototypeEncoderParams(rng, width)

    def policy_params(self) -> list[Param]:
        return [*self.shared.params(), *self.encoder.params(), *self.q.params()]

    def named_modules(self) -> list[tuple[str, Module]]:
        k = self.kind
        return [(f"{k}.enc.", self.encoder), (f"{k}.q.", self.q), (f"{k}.reward.", self.reward), (f"{k}.proto.", self.proto)]

    def encode(self, batch: GraphBatch, with_q: bool = True) -> Encoded:
        h0, z0 = shared_forward(batch, self.shared, self.encoder)
        h, z = task_forward(h0, z0, batch, self.encoder)
        q = q_forward(h, z, batch, self.q) if with_q else None
        return Encoded(batch, h, z, q)

    def policy_snapshot(self) -> PolicySnapshot:
        return PolicySnapshot(self.shared.clone(), self.encoder.clone(), self.q.clone())


@dataclass
class PolicySnapshot:
    """Frozen copy of encoder + Q decoder parameters (the DQN target network)."""

    shared: SharedEncoderParams
    encoder: TaskEncoderParams
    q: QDecoderParams

    def sync(self, bundle: ModelBundle) -> None:
        self.shared.copy_from(bundle.shared)
        self.encoder.copy_from(bundle.encoder)
        self.q.copy_from(bundle.q)

    def q_values(self, batch: GraphBatch) -> np.ndarray:
        with nn.no_grad():
            h0, z0 = shared_forward(batch, self.shared, self.encoder)
            h, z = task_forward(h0, z0, batch, self.encoder)
            return q_forward(h, z, batch, self.q).value[:, 0]


def q_values(enc: Encoded) -> dict[int, float]:
    """Per-alive-node scores of a single-state encoding."""
    if enc.q is None:
        raise ValueError("encoding was computed without Q-values")
    return dict(zip(enc.batch.node_ids.tolist(), enc.q.value[:, 0].tolist()))


def all_named_params(shared: SharedEncoderParams, *bundles: ModelBundle) -> list[Param]:
    out = [Param(p.value, "shared." + p.name) for p in shared.params()]
    for b in bundles:
        for prefix, module in b.named_modules():
            out.extend(Param(p.value, prefix + p.name) for p in module.params())
    return out


def load_named_params(values: dict[str, np.ndarray], shared: SharedEncoderParams, *bundles: ModelBundle) -> None:
    targets = all_named_params(shared, *bundles)
    missing = [p.name for p in targets if p.name not in values]
    if missing:
        raise ValueError(f"checkpoint lacks parameters: {', '.join(missing[:5])}")
    for p in targets:
        if values[p.name].shape != p.shape:
            raise ValueError(f"checkpoint shape mismatch for {p.name}: {values[p.name].shape} vs {p.shape}")
        p.value[...] = values[p.name]
