"""Randomized finite-difference cases shared by the autodiff tests and the
acceptance suite.

Each case builder takes a Generator and returns ``(fn, params)`` where
``fn()`` builds a scalar loss from the params. Inputs are drawn from
[-2, 2] with every dimension at most 6; points within 1e-3 of a kink
(relu, leaky_relu, clip bounds) are pushed away so central differences
with step 1e-5 never straddle one.
"""
from __future__ import annotations

import numpy as np

from hiadv.autodiff import Tensor, ops
from hiadv.config import ModelConfig
from hiadv.data import Vocab, make_batch, Sample
from hiadv.encoders import (
    Classifier,
    GATEncoder,
    GraphLayout,
    GraphormerEncoder,
    LabelEmbeddingTable,
    Mixer,
    TextEncoder,
    gat_forward,
    graphormer_forward,
)
from hiadv.framework import (
    Discriminator,
    HiAdvModel,
    loss_adv_from_logits,
    loss_dis,
    loss_dis_from_logits,
)
from hiadv.hierarchy import ancestor_closure, parse_taxonomy
from hiadv.losses import bce_loss, zlpr_loss

REL_TOL = 1e-4
ABS_TOL = 1e-6


def leaf(rng, *shape, lo=-2.0, hi=2.0, away=None):
    x = rng.uniform(lo, hi, size=shape)
    if away is not None:
        for k in away:
            near = np.abs(x - k) < 1e-3
            x[near] = k + np.where(x[near] >= k, 1e-2, -1e-2)
    return Tensor(x, requires_grad=True)


def dims(rng, n):
    return [int(d) for d in rng.integers(1, 7, size=n)]


def project(y: Tensor, rng) -> Tensor:
    """Random linear functional of y, so every output entry matters."""
    w = ops.constant(rng.uniform(-1, 1, size=y.shape))
    return ops.sum(ops.mul(y, w))


def _unary(op, **kw):
    def build(rng):
        x = leaf(rng, *dims(rng, int(rng.integers(1, 4))), **kw)
        r = rng_fixed(rng)
        return (lambda: project(op(x), r)), [x]
    return build


def rng_fixed(rng):
    """A generator whose draws are the same on every call of the loss."""
    seed = int(rng.integers(2 ** 31))
    return _Replay(seed)


class _Replay:
    def __init__(self, seed):
        self.seed = seed

    def uniform(self, lo, hi, size):
        return np.random.default_rng(self.seed).uniform(lo, hi, size=size)


def _binary(op):
    def build(rng):
        shape = dims(rng, int(rng.integers(1, 4)))
        a, b = leaf(rng, *shape), leaf(rng, *shape)
        r = rng_fixed(rng)
        return (lambda: project(op(a, b), r)), [a, b]
    return build


def _matmul(rng):
    lead = dims(rng, int(rng.integers(0, 2)))
    n, k, m = dims(rng, 3)
    a, b = leaf(rng, *lead, n, k), leaf(rng, *lead, k, m)
    r = rng_fixed(rng)
    return (lambda: project(ops.matmul(a, b), r)), [a, b]


def _reduce(op):
    def build(rng):
        shape = dims(rng, int(rng.integers(1, 4)))
        axis = int(rng.integers(0, len(shape)))
        keep = bool(rng.integers(0, 2))
        x = leaf(rng, *shape)
        r = rng_fixed(rng)
        if op is ops.softmax:
            return (lambda: project(op(x, axis=axis), r)), [x]
        return (lambda: project(op(x, axis=axis, keepdims=keep), r)), [x]
    return build


def _sum_all(rng):
    x = leaf(rng, *dims(rng, 2))
    return (lambda: ops.scale(ops.sum(x), 0.7)), [x]


def _concat(rng):
    shape = dims(rng, 2)
    axis = int(rng.integers(0, 2))
    parts = []
    for _ in range(int(rng.integers(2, 4))):
        s = list(shape)
        s[axis] = int(rng.integers(1, 7))
        parts.append(leaf(rng, *s))
    r = rng_fixed(rng)
    return (lambda: project(ops.concat(parts, axis=axis), r)), parts


def _embedding(rng):
    n, d = dims(rng, 2)
    table = leaf(rng, n, d)
    idx = rng.integers(0, n, size=dims(rng, 2))
    r = rng_fixed(rng)
    return (lambda: project(ops.embedding_lookup(table, idx), r)), [table]


def _take(rng):
    shape = dims(rng, 3)
    axis = int(rng.integers(0, 3))
    idx = rng.integers(0, shape[axis], size=int(rng.integers(1, 5)))
    x = leaf(rng, *shape)
    r = rng_fixed(rng)
    return (lambda: project(ops.take(x, idx, axis), r)), [x]


def _reshape(rng):
    a, b, c = dims(rng, 3)
    x = leaf(rng, a, b, c)
    r = rng_fixed(rng)
    return (lambda: project(ops.reshape(ops.tanh(x), (a * b, c)), r)), [x]


def _transpose(rng):
    shape = dims(rng, 3)
    perm = tuple(int(p) for p in rng.permutation(3))
    x = leaf(rng, *shape)
    r = rng_fixed(rng)
    return (lambda: project(ops.transpose(x, perm), r)), [x]


def _broadcast(rng):
    a, b, c = dims(rng, 3)
    x = leaf(rng, 1, b, 1)
    r = rng_fixed(rng)
    return (lambda: project(ops.broadcast_to(x, (a, b, c)), r)), [x]


def _scale(rng):
    x = leaf(rng, *dims(rng, 2))
    c = float(rng.uniform(-3, 3))
    r = rng_fixed(rng)
    return (lambda: project(ops.scale(x, c), r)), [x]


def _zlpr(rng):
    b, n = dims(rng, 2)
    n += 1
    s = leaf(rng, b, n, lo=-4, hi=4)
    y = (rng.uniform(size=(b, n)) < 0.4).astype(float)
    mask = np.ones(n)
    mask[0] = 0.0
    return (lambda: zlpr_loss(s, y, mask)), [s]


def _bce(rng):
    b, n = dims(rng, 2)
    s = leaf(rng, b, n, lo=-4, hi=4)
    y = (rng.uniform(size=(b, n)) < 0.4).astype(float)
    return (lambda: bce_loss(s, y)), [s]


def _disc_losses(rng):
    z, zh = leaf(rng, 5), leaf(rng, 5)
    return (lambda: ops.add(*loss_dis_from_logits(z, zh))), [z, zh]


def _disc_prob_losses(rng):
    p = leaf(rng, 4, lo=0.05, hi=0.95)
    q = leaf(rng, 4, lo=0.05, hi=0.95)
    return (lambda: ops.add(*loss_dis(p, q))), [p, q]


OP_CASES = {
    "add": _binary(ops.add),
    "sub": _binary(ops.sub),
    "mul": _binary(ops.mul),
    "scale": _scale,
    "matmul": _matmul,
    "relu": _unary(ops.relu, away=[0.0]),
    "leaky_relu": _unary(lambda x: ops.leaky_relu(x, 0.2), away=[0.0]),
    "sigmoid": _unary(ops.sigmoid),
    "tanh": _unary(ops.tanh),
    "exp": _unary(ops.exp),
    "log": _unary(ops.log, lo=0.1, hi=2.0),
    "clip": _unary(lambda x: ops.clip(x, -1.0, 1.0), away=[-1.0, 1.0]),
    "sum": _reduce(ops.sum),
    "sum_all": _sum_all,
    "mean": _reduce(ops.mean),
    "logsumexp": _reduce(ops.logsumexp),
    "softmax": _reduce(ops.softmax),
    "standardize": _unary(ops.standardize),
    "concat": _concat,
    "embedding_lookup": _embedding,
    "take": _take,
    "reshape": _reshape,
    "transpose": _transpose,
    "broadcast_to": _broadcast,
    "zlpr_loss": _zlpr,
    "bce_loss": _bce,
    "discriminator_losses": _disc_losses,
    "clamped_discriminator_losses": _disc_prob_losses,
}


# model compositions ------------------------------------------------------

TINY_TAXONOMY = {"labels": [
    {"name": "root", "parent": None},
    {"name": "a", "parent": "root"}, {"name": "b", "parent": "root"},
    {"name": "a1", "parent": "a"}, {"name": "a2", "parent": "a"}, {"name": "b1", "parent": "b"},
]}


def tiny_world(seed=0, d=8):
    h = parse_taxonomy(TINY_TAXONOMY)
    vocab = Vocab.build([["x", "y", "z", "w"]], h)
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(3):
        toks = list(rng.choice(vocab.tokens[2:], size=int(rng.integers(2, 5))))
        y = ancestor_closure(h, [int(rng.integers(1, len(h)))])
        samples.append(Sample(tuple(toks), y, vocab.encode(toks)))
    return h, vocab, samples, d


def _text_encoder(rng):
    h, vocab, samples, d = tiny_world(int(rng.integers(1000)))
    enc = TextEncoder(len(vocab), d, rng)
    batch = make_batch(samples, len(h))
    r = rng_fixed(rng)
    return (lambda: project(enc(batch.token_ids, batch.mask), r)), enc.parameters()


def _graphormer(rng):
    h, vocab, samples, d = tiny_world(int(rng.integers(1000)))
    layout = GraphLayout(h)
    text = TextEncoder(len(vocab), d, rng)
    table = LabelEmbeddingTable(h, text, [[vocab.index[n]] if n in vocab.index else [] for n in h.labels])
    table.weight.data[...] = rng.normal(0, 0.5, size=table.weight.shape)
    enc = GraphormerEncoder(d, rng, heads=2, n_layers=2, max_distance=3)
    ht = leaf(rng, 2, d)
    r = rng_fixed(rng)
    return (lambda: project(graphormer_forward(enc, table, ht, layout), r)), \
        [ht, table.weight] + enc.parameters()


def _gat(rng):
    h, _, _, d = tiny_world()
    layout = GraphLayout(h)
    enc = GATEncoder(d, rng, n_layers=2)
    table = leaf(rng, len(h), d)
    r = rng_fixed(rng)
    return (lambda: project(gat_forward(enc, table, layout), r)), [table] + enc.parameters()


def _discriminator(rng):
    disc = Discriminator(6, rng)
    x = leaf(rng, 4, 6)
    r = rng_fixed(rng)
    return (lambda: project(disc(x), r)), [x] + disc.parameters()


def _mixer_classifier(rng):
    d, n = 6, 5
    mixer = Mixer("concat_project", d, rng)
    clf = Classifier(n, d, rng)
    a, b = leaf(rng, 3, d), leaf(rng, 3, d)
    y = (rng.uniform(size=(3, n)) < 0.5).astype(float)
    return (lambda: zlpr_loss(clf(mixer(a, b)), y)), [a, b] + mixer.parameters() + clf.parameters()


def _full_model(backbone):
    def build(rng):
        h, vocab, samples, d = tiny_world(int(rng.integers(1000)))
        cfg = ModelConfig(d=d, heads=2, backbone=backbone)
        model = HiAdvModel(h, vocab, cfg, seed=int(rng.integers(1000)))
        batch = make_batch(samples, len(h))

        def loss():
            ht = model.encode_text(batch)
            hm = model.generator_forward(ht)
            hh = model.encoder_forward(ht, batch.labels)
            l_c = zlpr_loss(model.scores(hm), batch.targets, model.label_mask)
            l_hat = zlpr_loss(model.scores(hh), batch.targets, model.label_mask)
            l_adv = loss_adv_from_logits(model.discriminator.logits(hm))
            return ops.add(ops.add(l_c, l_hat), l_adv)
        return loss, model.parameters()
    return build


MODEL_CASES = {
    "text_encoder": _text_encoder,
    "graphormer_encoder": _graphormer,
    "gat_encoder": _gat,
    "discriminator": _discriminator,
    "mixer_classifier": _mixer_classifier,
    "full_model_graphormer_root": _full_model("graphormer_root"),
    "full_model_gat_sum": _full_model("gat_sum"),
}


def iter_cases(per_op: int = 4, per_model: int = 2, seed: int = 0):
    """Yield ``(case_id, fn, params)`` for every op and every model composition."""
    for name, build in OP_CASES.items():
        for k in range(per_op):
            rng = np.random.default_rng([seed, len(name), k, sum(map(ord, name))])
            fn, params = build(rng)
            yield f"{name}[{k}]", fn, params
    for name, build in MODEL_CASES.items():
        for k in range(per_model):
            rng = np.random.default_rng([seed, 7, k, sum(map(ord, name))])
            fn, params = build(rng)
            yield f"{name}[{k}]", fn, params
