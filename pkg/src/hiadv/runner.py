"""File-level plumbing shared by the command-line entry points.

A training run directory looks like::

    run/
      config.json          effective config (file + env + flags)
      vocab.json
      label_counts.json    training label frequencies, for frequency buckets
      curves.csv           one row per epoch
      metrics.json         dev metrics of the selected checkpoint
      metrics.csv          per-label dev metrics
      checkpoint/params.json, checkpoint/params.bin, checkpoint/checkpoint.json
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import load_arrays, save_params
from .config import RunConfig, apply_overrides, config_from_dict
from .data import Sample, Vocab, label_counts, load_jsonl, read_jsonl
from .framework import LOSS_NAMES, FitResult, HiAdvModel, build_model, fit, predict
from .hierarchy import LabelHierarchy, load_taxonomy
from .metrics import ClusterReport, MetricReport, cluster_report, micro_macro_f1

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", "warmup") + LOSS_NAMES + (
    "dev_micro_f1", "dev_macro_f1", "dev_discriminator_accuracy")
SIDECAR = "checkpoint.json"


class CheckpointMismatch(ValueError):
    pass


def config_hash(cfg: RunConfig) -> str:
    """Digest of everything that shapes the trained parameters (paths excluded)."""
    doc = cfg.to_dict()
    doc.pop("paths")
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_rows(path: Path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k)) for k in columns})


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


@dataclass
class Inputs:
    hierarchy: LabelHierarchy
    vocab: Vocab
    train: list[Sample]
    dev: list[Sample]


def load_inputs(cfg: RunConfig) -> Inputs:
    p = cfg.paths
    for key in ("taxonomy", "train", "dev"):
        if not getattr(p, key):
            raise ValueError(f"paths.{key}: required for training")
    h = load_taxonomy(p.taxonomy)
    raw_train = read_jsonl(p.train, h)
    vocab = Vocab.build((s.tokens for s in raw_train), h)
    train = [Sample(s.tokens, s.labels, vocab.encode(s.tokens)) for s in raw_train]
    dev = load_jsonl(p.dev, h, vocab)
    return Inputs(h, vocab, train, dev)


def train_run(cfg: RunConfig, out_dir: str | Path, inputs: Inputs | None = None) -> FitResult:
    """Train one model and write the full run directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs = inputs or load_inputs(cfg)
    h = inputs.hierarchy
    write_json(out / "config.json", cfg.to_dict())
    write_json(out / "vocab.json", inputs.vocab.tokens)
    counts = label_counts(inputs.train, len(h))
    write_json(out / "label_counts.json", {h.labels[i]: int(counts[i]) for i in range(len(h))})

    model = build_model(h, inputs.vocab, cfg)
    log.info("training %d parameters on %d samples", sum(t.size for t in model.parameters()),
             len(inputs.train))
    result = fit(model, inputs.train, inputs.dev, cfg)
    write_rows(out / "curves.csv", [r.row() for r in result.records], CURVE_COLUMNS)

    groups = model.groups()
    ckpt = out / "checkpoint"
    save_params(ckpt, groups)
    write_json(ckpt / SIDECAR, {
        "config_hash": config_hash(cfg),
        "taxonomy_hash": h.digest(),
        "epoch": result.best_epoch,
        "dev_macro_f1": result.best_macro_f1,
        "groups": {g: sorted(ps) for g, ps in groups.items()},
    })

    report = evaluate(model, inputs.dev, cfg.inference.tau, cfg.training.eval_batch_size)
    clusters = cluster_report(report, h, counts)
    write_metrics(out, "metrics", report, clusters, h,
                  {"split": "dev", "best_epoch": result.best_epoch,
                   "stopped_early": result.stopped_early})
    return result


def evaluate(model: HiAdvModel, samples: Sequence[Sample], tau: float,
             batch_size: int = 64) -> MetricReport:
    preds = predict(model, samples, tau, batch_size)
    return micro_macro_f1(preds, [s.labels.members for s in samples], model.hierarchy)


def write_metrics(out: Path, stem: str, report: MetricReport, clusters: ClusterReport,
                  h: LabelHierarchy, extra: dict) -> None:
    doc = dict(extra)
    doc["by_depth"] = {str(d): v for d, v in clusters.by_depth.items()}
    doc["by_frequency"] = clusters.by_frequency
    report.write_json(out / f"{stem}.json", doc)
    report.write_csv(out / f"{stem}.csv", h)
    write_rows(out / f"{stem}_by_depth.csv", clusters.depth_rows(), ("depth", "n_labels", "macro_f1"))
    write_rows(out / f"{stem}_by_frequency.csv", clusters.frequency_rows(),
               ("bucket", "n_labels", "macro_f1"))


def load_run(run_dir: str | Path, h: LabelHierarchy) -> tuple[RunConfig, HiAdvModel, np.ndarray]:
    """Rebuild the generator of a finished run; the oracle encoder and
    discriminator are neither built nor loaded."""
    run = Path(run_dir)
    cfg = config_from_dict(json.loads((run / "config.json").read_text(encoding="utf-8")))
    sidecar = json.loads((run / "checkpoint" / SIDECAR).read_text(encoding="utf-8"))
    if sidecar["taxonomy_hash"] != h.digest():
        raise CheckpointMismatch(
            f"taxonomy hash mismatch: checkpoint has {sidecar['taxonomy_hash'][:12]}, "
            f"given taxonomy is {h.digest()[:12]}")
    if sidecar["config_hash"] != config_hash(cfg):
        raise CheckpointMismatch("config hash mismatch: config.json differs from the one trained")
    vocab = Vocab(json.loads((run / "vocab.json").read_text(encoding="utf-8")))
    model = build_model(h, vocab, cfg, with_adversary=False)
    arrays, groups = load_arrays(run / "checkpoint")
    params = dict(model.named_parameters())
    for name, t in params.items():
        if groups.get(name) != "generator":
            raise CheckpointMismatch(f"checkpoint has no generator parameter {name!r}")
        if arrays[name].shape != t.shape:
            raise CheckpointMismatch(f"{name}: shape {arrays[name].shape} != {t.shape}")
        t.data[...] = arrays[name]
    counts_doc = json.loads((run / "label_counts.json").read_text(encoding="utf-8"))
    counts = np.array([counts_doc.get(n, 0) for n in h.labels], dtype=np.int64)
    return cfg, model, counts


def eval_run(run_dir: str | Path, data: str | Path, taxonomy: str | Path | None = None,
             out_dir: str | Path | None = None) -> MetricReport:
    run = Path(run_dir)
    if taxonomy is None:
        cfg_doc = json.loads((run / "config.json").read_text(encoding="utf-8"))
        taxonomy = cfg_doc["paths"]["taxonomy"]
    h = load_taxonomy(taxonomy)
    cfg, model, counts = load_run(run, h)
    vocab = Vocab(json.loads((run / "vocab.json").read_text(encoding="utf-8")))
    samples = load_jsonl(data, h, vocab, allow_empty_labels=True)
    report = evaluate(model, samples, cfg.inference.tau, cfg.training.eval_batch_size)
    out = Path(out_dir) if out_dir else run / "eval"
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out, "eval", report, cluster_report(report, h, counts), h,
                  {"data": Path(data).name, "n_samples": len(samples)})
    return report


ABLATION_COLUMNS = ("mode", "fraction", "best_epoch", "dev_micro_f1", "dev_macro_f1")


def ablate_run(cfg: RunConfig, modes: Sequence[str], out_dir: str | Path) -> list[dict]:
    """One training run per corruption mode, sequentially, all with the same seed."""
    out = Path(out_dir)
    inputs = load_inputs(cfg)
    rows = []
    for mode in modes:
        mcfg = apply_overrides(cfg, {"ablation.mode": mode})
        res = train_run(mcfg, out / mode, inputs)
        rec = res.records[res.best_epoch - 1]
        rows.append({"mode": mode, "fraction": mcfg.ablation.fraction, "best_epoch": res.best_epoch,
                     "dev_micro_f1": rec.dev_micro_f1, "dev_macro_f1": rec.dev_macro_f1})
    write_rows(out / "ablation.csv", rows, ABLATION_COLUMNS)
    return rows
