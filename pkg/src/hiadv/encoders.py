"""Text encoder, structure encoders, label embeddings, mixture and classifier.

Batched tensors are laid out as (batch, positions, d). Linear weights are
stored (out, in) and applied as ``x @ W.T + b``.
"""
from __future__ import annotations

import math
from typing import Iterator, Sequence

import numpy as np

from .autodiff import Tensor, ops
from .hierarchy import LabelHierarchy

MIXTURES = ("root_replace", "sum", "concat_project")
_MASKED = -1e30


class EncoderError(ValueError):
    pass


def param(data, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)


def normal(rng: np.random.Generator, shape, std: float) -> Tensor:
    return param(rng.normal(0.0, std, size=shape))


class Module:
    """Collects every trainable Tensor reachable through attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for j, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{j}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x`` of shape (n, in) times ``w`` of shape (out, in), plus bias."""
    y = ops.matmul(x, ops.transpose(w))
    if b is not None:
        y = ops.add(y, ops.broadcast_to(b, y.shape))
    return y


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.w1 = normal(rng, (hidden, d), 1.0 / math.sqrt(d))
        self.b1 = param(np.zeros(hidden))
        self.w2 = normal(rng, (d, hidden), 0.5 / math.sqrt(hidden))
        self.b2 = param(np.zeros(d))

    def __call__(self, x2d: Tensor) -> Tensor:
        return linear(ops.relu(linear(x2d, self.w1, self.b1)), self.w2, self.b2)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = param(np.ones(d))
        self.bias = param(np.zeros(d))

    def __call__(self, x2d: Tensor) -> Tensor:
        y = ops.standardize(x2d)
        return ops.add(ops.mul(y, ops.broadcast_to(self.gain, y.shape)),
                       ops.broadcast_to(self.bias, y.shape))


class TextEncoder(Module):
    """Token embeddings, one single-head self-attention block, a ReLU FFN and
    mean pooling over real (unpadded) positions. Both sublayers are residual
    and followed by layer norm."""

    def __init__(self, vocab_size: int, d: int, rng: np.random.Generator,
                 ffn_dim: int | None = None, max_len: int = 512):
        self.d = d
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.token_embedding = normal(rng, (vocab_size, d), 0.02)
        s = 1.0 / math.sqrt(d)
        self.wq = normal(rng, (d, d), s)
        self.wk = normal(rng, (d, d), s)
        self.wv = normal(rng, (d, d), s)
        self.wo = normal(rng, (d, d), 0.5 * s)
        self.ffn = FeedForward(d, ffn_dim or 2 * d, rng)
        self.norm1 = LayerNorm(d)
        self.norm2 = LayerNorm(d)

    def __call__(self, token_ids: np.ndarray, mask: np.ndarray) -> Tensor:
        ids = np.asarray(token_ids)
        if ids.ndim != 2 or ids.shape[1] < 1:
            raise EncoderError(f"token_ids must be (batch, length>=1), got {ids.shape}")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise EncoderError(f"token id out of vocabulary range [0, {self.vocab_size})")
        b, t = ids.shape
        d = self.d
        mask = np.asarray(mask, dtype=np.float64)
        counts = mask.sum(axis=1)
        if np.any(counts < 1):
            raise EncoderError("every sequence needs at least one real token")

        x = ops.embedding_lookup(self.token_embedding, ids)            # (b, t, d)
        x2 = ops.reshape(x, (b * t, d))
        q = ops.reshape(linear(x2, self.wq), (b, t, d))
        k = ops.reshape(linear(x2, self.wk), (b, t, d))
        v = ops.reshape(linear(x2, self.wv), (b, t, d))
        logits = ops.scale(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(d))
        key_bias = np.broadcast_to(np.where(mask > 0, 0.0, _MASKED)[:, None, :], (b, t, t))
        attn = ops.softmax(ops.add(logits, ops.constant(key_bias)), axis=2)
        mixed = ops.reshape(ops.matmul(attn, v), (b * t, d))
        hidden = self.norm1(ops.add(x2, linear(mixed, self.wo)))
        out = self.norm2(ops.add(hidden, self.ffn(hidden)))
        weights = np.broadcast_to((mask / counts[:, None])[:, :, None], (b, t, d))
        pooled = ops.mul(ops.reshape(out, (b, t, d)), ops.constant(weights))
        return ops.sum(pooled, axis=1)                                  # (b, d)

    def encode(self, token_ids: Sequence[int]) -> Tensor:
        """Encode one sequence to a d-vector."""
        ids = list(token_ids)
        if not ids:
            raise EncoderError("empty token sequence")
        if len(ids) > self.max_len:
            raise EncoderError(f"sequence length {len(ids)} exceeds max_len {self.max_len}")
        out = self(np.asarray([ids]), np.ones((1, len(ids))))
        return ops.reshape(out, (self.d,))


class GraphLayout:
    """Node ordering and structural inputs shared by the structure encoders.

    Slot 0 holds the root; the other labels follow sorted by (depth, name),
    so the layout does not depend on the order labels were listed in.
    """

    def __init__(self, h: LabelHierarchy, max_distance: int = 16):
        self.hierarchy = h
        rest = sorted(h.non_root, key=lambda i: (h.depth[i], h.labels[i]))
        self.order = np.array([h.root_id] + rest, dtype=np.int64)
        self.non_root = np.array(rest, dtype=np.int64)
        self.max_distance = max_distance
        self.spd = np.minimum(h.spd[np.ix_(self.order, self.order)], max_distance)
        n = len(self.order)
        pos = np.empty(len(h), dtype=np.int64)
        pos[self.order] = np.arange(n)
        adj = np.eye(n, dtype=bool)
        for i in h.non_root:
            a, b = pos[i], pos[h.parent[i]]
            adj[a, b] = adj[b, a] = True
        self.adjacency = adj
        self.position = pos

    @property
    def n_nodes(self) -> int:
        return len(self.order)

    def membership(self, label_sets: Sequence) -> np.ndarray:
        """(batch, n_nodes - 1) 0/1 matrix of non-root membership in each set."""
        out = np.zeros((len(label_sets), len(self.non_root)))
        for r, members in enumerate(label_sets):
            for i in members:
                if not 0 <= i < len(self.position):
                    raise EncoderError(f"label id {i} outside the hierarchy")
                p = self.position[i]
                if p > 0:
                    out[r, p - 1] = 1.0
        return out


def _split_heads(x2d: Tensor, b: int, n: int, heads: int) -> Tensor:
    dh = x2d.shape[1] // heads
    return ops.transpose(ops.reshape(x2d, (b, n, heads, dh)), (0, 2, 1, 3))  # (b, H, n, dh)


class GraphormerLayer(Module):
    def __init__(self, d: int, heads: int, max_distance: int, rng: np.random.Generator,
                 ffn_dim: int | None = None):
        if d % heads:
            raise EncoderError(f"d={d} is not divisible by heads={heads}")
        self.d, self.heads = d, heads
        s = 1.0 / math.sqrt(d)
        self.wq = normal(rng, (d, d), s)
        self.wk = normal(rng, (d, d), s)
        self.wv = normal(rng, (d, d), s)
        self.wo = normal(rng, (d, d), 0.5 * s)
        self.spatial_bias = normal(rng, (max_distance + 1, heads), 0.02)
        self.ffn = FeedForward(d, ffn_dim or 2 * d, rng)
        self.norm1 = LayerNorm(d)
        self.norm2 = LayerNorm(d)

    def __call__(self, x: Tensor, spd: np.ndarray, root_only: bool = False) -> Tensor:
        """x: (b, n, d) node states. Returns (b, n, d), or (b, d) for the root when
        ``root_only`` (the other rows of a final layer are never read).

        Pre-norm: each sublayer reads a normalized copy of its input, so label
        rows and the text row enter attention at the same scale.
        """
        b, n, d = x.shape
        H, dh = self.heads, d // self.heads
        x2 = ops.reshape(x, (b * n, d))
        z2 = self.norm1(x2)
        k = _split_heads(linear(z2, self.wk), b, n, H)
        v = _split_heads(linear(z2, self.wv), b, n, H)
        if root_only:
            xq = ops.reshape(ops.take(x, [0], axis=1), (b, d))
            zq = ops.reshape(ops.take(ops.reshape(z2, (b, n, d)), [0], axis=1), (b, d))
            q = _split_heads(linear(zq, self.wq), b, 1, H)
            dist = spd[:1]
        else:
            xq = x2
            q = _split_heads(linear(z2, self.wq), b, n, H)
            dist = spd
        m = dist.shape[0]
        bias = ops.embedding_lookup(self.spatial_bias, dist)                   # (m, n, H)
        bias = ops.reshape(ops.transpose(bias, (2, 0, 1)), (1, H, m, n))
        logits = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        attn = ops.softmax(ops.add(logits, ops.broadcast_to(bias, (b, H, m, n))), axis=3)
        ctx = ops.reshape(ops.transpose(ops.matmul(attn, v), (0, 2, 1, 3)), (b * m, d))
        h = ops.add(xq, linear(ctx, self.wo))
        h = ops.add(h, self.ffn(self.norm2(h)))
        return ops.reshape(h, (b, d) if root_only else (b, n, d))


class GraphormerEncoder(Module):
    """Self-attention over all hierarchy nodes with a per-head additive bias
    indexed by clipped shortest-path distance; returns the root's output."""

    def __init__(self, d: int, rng: np.random.Generator, heads: int = 4, n_layers: int = 1,
                 max_distance: int = 16, ffn_dim: int | None = None):
        self.max_distance = max_distance
        self.layers = [GraphormerLayer(d, heads, max_distance, rng, ffn_dim)
                       for _ in range(n_layers)]
        self.final_norm = LayerNorm(d)

    def __call__(self, x: Tensor, spd: np.ndarray) -> Tensor:
        if spd is None:
            raise EncoderError("Graphormer needs the shortest-path matrix")
        spd = np.minimum(np.asarray(spd, dtype=np.int64), self.max_distance)
        if spd.shape != (x.shape[1], x.shape[1]):
            raise EncoderError(f"spd shape {spd.shape} does not match {x.shape[1]} nodes")
        for layer in self.layers[:-1]:
            x = layer(x, spd)
        return self.final_norm(self.layers[-1](x, spd, root_only=True))


class GATLayer(Module):
    def __init__(self, d: int, rng: np.random.Generator, slope: float = 0.2):
        self.w = normal(rng, (d, d), 1.0 / math.sqrt(d))
        self.a_src = normal(rng, (d, 1), 1.0 / math.sqrt(d))
        self.a_dst = normal(rng, (d, 1), 1.0 / math.sqrt(d))
        self.slope = slope

    def __call__(self, x: Tensor, adjacency: np.ndarray) -> Tensor:
        b, n, d = x.shape
        z2 = linear(ops.reshape(x, (b * n, d)), self.w)
        src = ops.reshape(ops.matmul(z2, self.a_src), (b, n, 1))
        dst = ops.reshape(ops.matmul(z2, self.a_dst), (b, 1, n))
        e = ops.leaky_relu(ops.add(ops.broadcast_to(src, (b, n, n)),
                                   ops.broadcast_to(dst, (b, n, n))), self.slope)
        mask = np.broadcast_to(np.where(adjacency, 0.0, _MASKED), (b, n, n))
        attn = ops.softmax(ops.add(e, ops.constant(mask)), axis=2)
        agg = ops.matmul(attn, ops.reshape(z2, (b, n, d)))
        return ops.add(x, ops.relu(agg))


class GATEncoder(Module):
    """Masked additive-attention layers: node i attends to itself and its tree
    neighbours only."""

    def __init__(self, d: int, rng: np.random.Generator, n_layers: int = 1):
        self.layers = [GATLayer(d, rng) for _ in range(n_layers)]

    def __call__(self, x: Tensor, adjacency: np.ndarray) -> Tensor:
        for layer in self.layers:
            x = layer(x, adjacency)
        return x


class LabelEmbeddingTable(Module):
    def __init__(self, h: LabelHierarchy, text: TextEncoder, name_token_ids: Sequence[Sequence[int]]):
        emb = text.token_embedding.data
        table = np.zeros((len(h), text.d))
        for i, ids in enumerate(name_token_ids):
            if i == h.root_id or not ids:
                continue
            table[i] = emb[list(ids)].mean(axis=0)
        self.weight = param(table)

    def node_rows(self, layout: GraphLayout, batch: int) -> Tensor:
        """Non-root rows in layout order, repeated over the batch: (b, n-1, d)."""
        r = ops.embedding_lookup(self.weight, layout.non_root)
        n, d = r.shape
        return ops.broadcast_to(ops.reshape(r, (1, n, d)), (batch, n, d))


def with_root(h_text: Tensor, node_rows: Tensor) -> Tensor:
    """Stack h_text into the root slot ahead of the label rows."""
    b, d = h_text.shape
    return ops.concat([ops.reshape(h_text, (b, 1, d)), node_rows], axis=1)


class Mixer(Module):
    def __init__(self, mechanism: str, d: int, rng: np.random.Generator):
        if mechanism not in MIXTURES:
            raise EncoderError(f"unknown mixture {mechanism!r}; expected one of {MIXTURES}")
        self.mechanism = mechanism
        if mechanism == "concat_project":
            proj = np.concatenate([np.eye(d), np.zeros((d, d))], axis=1)
            self.projection = param(proj + rng.normal(0.0, 0.02, size=proj.shape))

    def __call__(self, h_text: Tensor, h_label: Tensor) -> Tensor:
        return mix(h_text, h_label, self.mechanism, getattr(self, "projection", None))


def mix(h_text: Tensor, h_label: Tensor, mechanism: str, projection: Tensor | None = None) -> Tensor:
    if mechanism == "root_replace":
        return h_label
    if mechanism == "sum":
        return ops.add(h_text, h_label)
    if mechanism == "concat_project":
        if projection is None:
            raise EncoderError("concat_project needs a (d, 2d) projection")
        squeeze = h_text.ndim == 1
        a = ops.reshape(h_text, (1, h_text.shape[0])) if squeeze else h_text
        c = ops.reshape(h_label, (1, h_label.shape[0])) if squeeze else h_label
        out = linear(ops.concat([a, c], axis=1), projection)
        return ops.reshape(out, (out.shape[1],)) if squeeze else out
    raise EncoderError(f"unknown mixture {mechanism!r}; expected one of {MIXTURES}")


class Classifier(Module):
    def __init__(self, n_labels: int, d: int, rng: np.random.Generator):
        self.weight = normal(rng, (n_labels, d), 1.0 / math.sqrt(d))
        self.bias = param(np.zeros(n_labels))

    def __call__(self, h_mix: Tensor) -> Tensor:
        if h_mix.ndim == 1:
            out = linear(ops.reshape(h_mix, (1, h_mix.shape[0])), self.weight, self.bias)
            return ops.reshape(out, (out.shape[1],))
        return linear(h_mix, self.weight, self.bias)


class StructureEncoder(Module):
    """One instance of E_structure: Graphormer (root readout) or GAT with a
    text-queried attention readout."""

    def __init__(self, kind: str, d: int, rng: np.random.Generator, heads: int = 4,
                 n_layers: int = 1, max_distance: int = 16):
        self.kind = kind
        if kind == "graphormer":
            self.net = GraphormerEncoder(d, rng, heads=heads, n_layers=n_layers,
                                         max_distance=max_distance)
        elif kind == "gat":
            self.net = GATEncoder(d, rng, n_layers=n_layers)
        else:
            raise EncoderError(f"unknown structure encoder {kind!r}")

    def __call__(self, h_text: Tensor, node_rows: Tensor, layout: GraphLayout) -> Tensor:
        x = with_root(h_text, node_rows)
        if self.kind == "graphormer":
            return self.net(x, layout.spd)
        t = self.net(x, layout.adjacency)                                    # (b, n, d)
        b, n, d = t.shape
        q = ops.reshape(h_text, (b, 1, d))
        scores = ops.scale(ops.matmul(q, ops.transpose(t, (0, 2, 1))), 1.0 / math.sqrt(d))
        w = ops.softmax(scores, axis=2)                                      # (b, 1, n)
        return ops.reshape(ops.matmul(w, t), (b, d))


def graphormer_forward(encoder: GraphormerEncoder, labels: LabelEmbeddingTable,
                       h_text: Tensor, layout: GraphLayout) -> Tensor:
    """Root output of the Graphormer over [h_text, L] for each h_text row."""
    single = h_text.ndim == 1
    ht = ops.reshape(h_text, (1, h_text.shape[0])) if single else h_text
    out = encoder(with_root(ht, labels.node_rows(layout, ht.shape[0])), layout.spd)
    return ops.reshape(out, (out.shape[1],)) if single else out


def gat_forward(encoder: GATEncoder, label_table: Tensor, layout: GraphLayout) -> Tensor:
    """Per-label features T (|labels| x d, label-id order) for one label table."""
    n, d = label_table.shape
    x = ops.reshape(ops.embedding_lookup(label_table, layout.order), (1, n, d))
    t = ops.reshape(encoder(x, layout.adjacency), (n, d))
    return ops.embedding_lookup(t, layout.position)
