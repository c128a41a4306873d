"""Generator / oracle encoder / discriminator and the alternating training loop.

Each training step runs two phases. Phase 1 scores detached copies of
``h_mix`` and ``h_mix_hat`` and updates the discriminator alone. Phase 2
backpropagates ``L_C + L_C_hat + lambda_adv * L_adv`` into everything else,
with the discriminator frozen. ``h_text`` is encoded once per step and feeds
both structure encoders.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import Adam, Tape, Tensor, backward, no_grad, ops
from .config import ModelConfig, RunConfig, TrainingConfig
from .data import Batch, Sample, Vocab, batcher, label_name_tokens, make_batch
from .encoders import (
    Classifier,
    GraphLayout,
    LabelEmbeddingTable,
    Mixer,
    Module,
    StructureEncoder,
    TextEncoder,
    linear,
    normal,
    param,
)
from .hierarchy import LabelHierarchy, LocalHierarchy, corrupt
from .losses import multilabel_loss
from .metrics import micro_macro_f1

log = logging.getLogger(__name__)

P_EPS = 1e-12
LOSS_NAMES = ("L_C", "L_C_hat", "L_adv", "L_dis", "L_dis_hat")


class Discriminator(Module):
    """p = sigmoid(W2 relu(W1 h + b1) + b2)."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.w1 = normal(rng, (d, d), 1.0 / math.sqrt(d))
        self.b1 = param(np.zeros(d))
        self.w2 = normal(rng, (1, d), 1.0 / math.sqrt(d))
        self.b2 = param(np.zeros(1))

    def logits(self, h: Tensor) -> Tensor:
        single = h.ndim == 1
        x = ops.reshape(h, (1, h.shape[0])) if single else h
        z = linear(ops.relu(linear(x, self.w1, self.b1)), self.w2, self.b2)
        return ops.reshape(z, (z.shape[0],))

    def __call__(self, h: Tensor) -> Tensor:
        return ops.sigmoid(self.logits(h))


def _clamp(p: Tensor) -> Tensor:
    if np.any(p.data < P_EPS) or np.any(p.data > 1.0 - P_EPS):
        log.debug("discriminator probability clamped to [%g, 1-%g]", P_EPS, P_EPS)
    return ops.clip(p, P_EPS, 1.0 - P_EPS)


def loss_dis(p: Tensor, p_hat: Tensor) -> tuple[Tensor, Tensor]:
    """Discriminator BCE: generated reps are class 0, oracle reps class 1."""
    l_gen = ops.mean(ops.scale(ops.log(ops.sub(ops.constant(np.ones(p.shape)), _clamp(p))), -1.0))
    l_hat = ops.mean(ops.scale(ops.log(_clamp(p_hat)), -1.0))
    return l_gen, l_hat


def loss_adv(p: Tensor) -> Tensor:
    """Generator's adversarial loss, -log p on generated reps."""
    return ops.mean(ops.scale(ops.log(_clamp(p)), -1.0))


def _softplus(z: Tensor) -> Tensor:
    n = z.shape[0]
    return ops.logsumexp(ops.concat([ops.constant(np.zeros((n, 1))), ops.reshape(z, (n, 1))],
                                    axis=1), axis=1)


def loss_dis_from_logits(z: Tensor, z_hat: Tensor) -> tuple[Tensor, Tensor]:
    """Same values as :func:`loss_dis` on sigmoid(z), computed without clamping."""
    return ops.mean(_softplus(z)), ops.mean(_softplus(ops.scale(z_hat, -1.0)))


def loss_adv_from_logits(z: Tensor) -> Tensor:
    return ops.mean(_softplus(ops.scale(z, -1.0)))


class HiAdvModel(Module):
    """All parameter groups: generator, oracle encoder and discriminator.

    With ``with_adversary=False`` only the generator is built, which is the
    deployable model and also the plain-backbone baseline.
    """

    def __init__(self, h: LabelHierarchy, vocab: Vocab, cfg: ModelConfig, seed: int = 0,
                 with_adversary: bool = True):
        rng = np.random.default_rng(seed)
        self.hierarchy = h
        self.cfg = cfg
        self.layout = GraphLayout(h, cfg.max_distance)
        self.label_mask = np.ones(len(h))
        self.label_mask[h.root_id] = 0.0
        self.text = TextEncoder(len(vocab), cfg.d, rng, ffn_dim=cfg.ffn_dim)
        name_ids = [[vocab.index[t] for t in label_name_tokens(n) if t in vocab.index]
                    for n in h.labels]
        self.labels = LabelEmbeddingTable(h, self.text, name_ids)
        self.structure = StructureEncoder(cfg.structure_kind, cfg.d, rng, heads=cfg.heads,
                                          n_layers=cfg.layers, max_distance=cfg.max_distance)
        self.mixer = Mixer(cfg.effective_mixture, cfg.d, rng)
        self.classifier = Classifier(len(h), cfg.d, rng)
        self.with_adversary = with_adversary
        if with_adversary:
            self.oracle_structure = StructureEncoder(
                cfg.structure_kind, cfg.d, rng, heads=cfg.heads, n_layers=cfg.layers,
                max_distance=cfg.max_distance)
            self.e0 = normal(rng, (cfg.d,), cfg.oracle_init_std)
            self.e1 = normal(rng, (cfg.d,), cfg.oracle_init_std)
            self.discriminator = Discriminator(cfg.d, rng)
        for name, t in self.named_parameters():
            t.name = name

    def groups(self) -> dict[str, dict[str, Tensor]]:
        out: dict[str, dict[str, Tensor]] = {"generator": {}, "oracle": {}, "discriminator": {}}
        for name, t in self.named_parameters():
            if name.startswith("discriminator."):
                out["discriminator"][name] = t
            elif name.startswith("oracle_structure.") or name in ("e0", "e1"):
                out["oracle"][name] = t
            else:
                out["generator"][name] = t
        return {k: v for k, v in out.items() if v}

    # forward passes ------------------------------------------------------

    def encode_text(self, batch: Batch) -> Tensor:
        return self.text(batch.token_ids, batch.mask)

    def generator_forward(self, h_text: Tensor) -> Tensor:
        rows = self.labels.node_rows(self.layout, h_text.shape[0])
        h_label = self.structure(h_text, rows, self.layout)
        return self.mixer(h_text, h_label)

    def oracle_rows(self, label_sets: Sequence[Iterable[int]]) -> Tensor:
        """Label rows with e1 added for members of each set and e0 otherwise."""
        member = self.layout.membership(label_sets)                      # (b, n)
        b, n = member.shape
        d = self.cfg.d
        base = self.labels.node_rows(self.layout, b)
        m3 = np.broadcast_to(member[:, :, None], (b, n, d))
        on = ops.mul(ops.broadcast_to(ops.reshape(self.e1, (1, 1, d)), (b, n, d)), ops.constant(m3))
        off = ops.mul(ops.broadcast_to(ops.reshape(self.e0, (1, 1, d)), (b, n, d)),
                      ops.constant(1.0 - m3))
        return ops.add(base, ops.add(on, off))

    def encoder_forward(self, h_text: Tensor, label_sets: Sequence[Iterable[int]]) -> Tensor:
        if not self.with_adversary:
            raise RuntimeError("model was built without the oracle encoder")
        rows = self.oracle_rows(label_sets)
        h_label = self.oracle_structure(h_text, rows, self.layout)
        return self.mixer(h_text, h_label)

    def scores(self, h_mix: Tensor) -> Tensor:
        return self.classifier(h_mix)


@dataclass
class TrainState:
    opt_main: Adam
    opt_disc: Adam | None
    cfg: TrainingConfig
    epoch: int = 1
    best_macro_f1: float = -1.0
    best_epoch: int = 0
    patience_counter: int = 0

    @property
    def adversarial_enabled(self) -> bool:
        return self.epoch > self.cfg.warmup_epochs

    @property
    def lambda_adv(self) -> float:
        return self.cfg.lambda_adv if self.adversarial_enabled else 0.0

    def observe(self, macro_f1: float) -> bool:
        """Record a dev Macro-F1; True when it is a new best."""
        if macro_f1 > self.best_macro_f1:
            self.best_macro_f1 = macro_f1
            self.best_epoch = self.epoch
            self.patience_counter = 0
            return True
        self.patience_counter += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.patience_counter >= self.cfg.patience


def init_state(model: HiAdvModel, cfg: TrainingConfig) -> TrainState:
    groups = model.groups()
    main = list(groups["generator"].values())
    if cfg.hiadv:
        main += list(groups["oracle"].values())
    opt_main = Adam(main, lr=cfg.learning_rate)
    opt_disc = Adam(groups["discriminator"].values(), lr=cfg.learning_rate) if cfg.hiadv else None
    return TrainState(opt_main, opt_disc, cfg)


def classification_losses(model: HiAdvModel, h_mix: Tensor, h_hat: Tensor | None,
                          targets: np.ndarray, kind: str) -> tuple[Tensor, Tensor | None]:
    if not np.any(targets * model.label_mask):
        raise ValueError("training batch contains a sample with an empty label set")
    l_c = multilabel_loss(kind, model.scores(h_mix), targets, model.label_mask)
    l_hat = None if h_hat is None else multilabel_loss(kind, model.scores(h_hat), targets,
                                                       model.label_mask)
    return l_c, l_hat


PhaseHook = Callable[[str], None]


def train_step(model: HiAdvModel, batch: Batch, state: TrainState,
               oracle_labels: Sequence[Iterable[int]] | None = None,
               hook: PhaseHook | None = None) -> dict[str, float]:
    """One alternating update. Returns the five loss values as floats."""
    cfg = state.cfg
    if np.any((batch.targets * model.label_mask).sum(axis=1) == 0):
        raise ValueError("training batch contains a sample with an empty label set")
    oracle_labels = batch.labels if oracle_labels is None else oracle_labels
    out = dict.fromkeys(LOSS_NAMES, 0.0)
    with Tape():
        h_text = model.encode_text(batch)
        h_mix = model.generator_forward(h_text)
        if not cfg.hiadv:
            l_c, _ = classification_losses(model, h_mix, None, batch.targets, cfg.loss)
            state.opt_main.zero_grad()
            backward(l_c)
            state.opt_main.step()
            out["L_C"] = l_c.item()
            return out
        h_hat = model.encoder_forward(h_text, oracle_labels)

        disc = model.discriminator
        state.opt_disc.zero_grad()
        with Tape():
            l_dis, l_dis_hat = loss_dis_from_logits(disc.logits(ops.detach(h_mix)),
                                                    disc.logits(ops.detach(h_hat)))
            backward(ops.add(l_dis, l_dis_hat))
        state.opt_disc.step()
        if hook:
            hook("discriminator")

        # frozen through backward so no gradient lands on the discriminator
        frozen = disc.parameters()
        for t in frozen:
            t.requires_grad = False
        try:
            l_adv = loss_adv_from_logits(disc.logits(h_mix))
            l_c, l_c_hat = classification_losses(model, h_mix, h_hat, batch.targets, cfg.loss)
            total = ops.add(l_c, l_c_hat)
            lam = state.lambda_adv
            if lam:
                total = ops.add(total, ops.scale(l_adv, lam))
            state.opt_main.zero_grad()
            backward(total)
            state.opt_main.step()
        finally:
            for t in frozen:
                t.requires_grad = True
        if hook:
            hook("generator")
    out.update(L_C=l_c.item(), L_C_hat=l_c_hat.item(), L_adv=l_adv.item(),
               L_dis=l_dis.item(), L_dis_hat=l_dis_hat.item())
    return out


# inference -------------------------------------------------------------

def predict_scores(model: HiAdvModel, samples: Sequence[Sample], batch_size: int = 64) -> np.ndarray:
    """Raw classifier scores (n_samples, n_labels) from the generator alone."""
    n_labels = len(model.hierarchy)
    out = []
    with no_grad():
        for b in batcher(samples, batch_size, n_labels):
            out.append(model.scores(model.generator_forward(model.encode_text(b))).data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, n_labels))


def select_labels(scores: np.ndarray, tau: float, root_id: int) -> list[set[int]]:
    """{i : sigmoid(s_i) > tau}, root excluded, no path repair."""
    probs = 1.0 / (1.0 + np.exp(-scores))
    chosen = probs > tau
    chosen[:, root_id] = False
    return [set(np.flatnonzero(row).tolist()) for row in chosen]


def predict(model: HiAdvModel, samples: Sequence[Sample], tau: float = 0.5,
            batch_size: int = 64) -> list[set[int]]:
    return select_labels(predict_scores(model, samples, batch_size), tau, model.hierarchy.root_id)


def discriminator_accuracy(model: HiAdvModel, samples: Sequence[Sample],
                           oracle_labels: Sequence[Iterable[int]], batch_size: int = 64) -> float:
    if not model.with_adversary or not samples:
        return float("nan")
    correct = 0
    with no_grad():
        for b in batcher(samples, batch_size, len(model.hierarchy)):
            h_text = model.encode_text(b)
            p = model.discriminator(model.generator_forward(h_text)).data
            p_hat = model.discriminator(
                model.encoder_forward(h_text, [oracle_labels[i] for i in b.indices])).data
            correct += int((p < 0.5).sum() + (p_hat > 0.5).sum())
    return correct / (2 * len(samples))


# training loop ---------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    warmup: bool
    losses: dict[str, float]
    dev_micro_f1: float
    dev_macro_f1: float
    dev_disc_accuracy: float

    def row(self) -> dict:
        r = {"epoch": self.epoch, "warmup": int(self.warmup)}
        r.update({k: self.losses[k] for k in LOSS_NAMES})
        r.update(dev_micro_f1=self.dev_micro_f1, dev_macro_f1=self.dev_macro_f1,
                 dev_discriminator_accuracy=self.dev_disc_accuracy)
        return r


@dataclass
class FitResult:
    best_epoch: int
    best_macro_f1: float
    records: list[EpochRecord]
    best_params: dict[str, np.ndarray] = field(repr=False)
    stopped_early: bool = False


def corrupt_all(labels: Sequence[LocalHierarchy], mode: str, fraction: float,
                h: LabelHierarchy, seed: int) -> list[frozenset[int]]:
    """One fixed corrupted copy per sample, drawn from a seeded stream."""
    rng = np.random.default_rng(seed)
    return [corrupt(y, mode, fraction, rng, h).members for y in labels]


def _stream_seed(seed: int, stream: int, k: int) -> int:
    """Independent seeds per (stream, k): stream 0 shuffles epochs, 1 corrupts labels."""
    return int(np.random.SeedSequence([seed, stream, k]).generate_state(1)[0])


def fit(model: HiAdvModel, train: Sequence[Sample], dev: Sequence[Sample], cfg: RunConfig,
        on_epoch: Callable[[EpochRecord], None] | None = None,
        metric_override: Callable[[int], float] | None = None) -> FitResult:
    """Train with warm-up, dev-Macro-F1 early stopping and best-checkpoint selection.

    The model is left holding the best parameters. ``metric_override`` swaps
    the dev Macro-F1 used for model selection (tests drive the patience logic
    with it).
    """
    if not train or not dev:
        raise ValueError("fit needs non-empty train and dev splits")
    tcfg = cfg.training
    h = model.hierarchy
    seed = tcfg.seed
    mode, frac = cfg.ablation.mode, cfg.ablation.fraction
    train_oracle = corrupt_all([s.labels for s in train], mode, frac, h, _stream_seed(seed, 1, 0))
    dev_oracle = corrupt_all([s.labels for s in dev], mode, frac, h, _stream_seed(seed, 1, 1))
    state = init_state(model, tcfg)
    params = dict(model.named_parameters())
    best = {k: t.data.copy() for k, t in params.items()}
    records: list[EpochRecord] = []
    stopped = False
    for epoch in range(1, tcfg.max_epochs + 1):
        state.epoch = epoch
        sums = dict.fromkeys(LOSS_NAMES, 0.0)
        steps = 0
        for b in batcher(train, tcfg.batch_size, len(h), seed=_stream_seed(seed, 0, epoch)):
            losses = train_step(model, b, state, [train_oracle[i] for i in b.indices])
            for k, v in losses.items():
                sums[k] += v
            steps += 1
        preds = predict(model, dev, cfg.inference.tau, tcfg.eval_batch_size)
        report = micro_macro_f1(preds, [s.labels.members for s in dev], h)
        disc_acc = discriminator_accuracy(model, dev, dev_oracle, tcfg.eval_batch_size) \
            if tcfg.hiadv else float("nan")
        rec = EpochRecord(epoch, not state.adversarial_enabled,
                          {k: v / steps for k, v in sums.items()},
                          report.micro_f1, report.macro_f1, disc_acc)
        records.append(rec)
        selected = report.macro_f1 if metric_override is None else metric_override(epoch)
        if state.observe(selected):
            best = {k: t.data.copy() for k, t in params.items()}
        log.info("epoch %d  L_C %.4f  dev micro %.4f macro %.4f  disc acc %.3f",
                 epoch, rec.losses["L_C"], rec.dev_micro_f1, rec.dev_macro_f1, disc_acc)
        if on_epoch:
            on_epoch(rec)
        if state.should_stop:
            stopped = True
            break
    for k, t in params.items():
        t.data[...] = best[k]
    return FitResult(state.best_epoch, state.best_macro_f1, records, best, stopped)


def build_model(h: LabelHierarchy, vocab: Vocab, cfg: RunConfig,
                with_adversary: bool | None = None) -> HiAdvModel:
    adv = cfg.training.hiadv if with_adversary is None else with_adversary
    return HiAdvModel(h, vocab, cfg.model, seed=cfg.training.seed, with_adversary=adv)


__all__ = [
    "Discriminator", "EpochRecord", "FitResult", "HiAdvModel", "LOSS_NAMES", "TrainState",
    "build_model", "classification_losses", "corrupt_all", "discriminator_accuracy", "fit",
    "init_state", "loss_adv", "loss_adv_from_logits", "loss_dis", "loss_dis_from_logits",
    "make_batch", "predict", "predict_scores", "select_labels", "train_step",
]
