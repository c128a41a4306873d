"""Synthetic HTC corpora, JSONL loading, vocabulary and batching."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .hierarchy import (
    HierarchyError,
    LabelHierarchy,
    LocalHierarchy,
    UnknownLabelError,
    ancestor_closure,
    label_names,
    parse_taxonomy,
)

PAD = "<pad>"
UNK = "<unk>"


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    depth: int = 4
    branch: int = 3
    paths_min: int = 1
    paths_max: int = 2
    tokens_per_label: int = 3
    noise_vocab: int = 200
    noise_fraction: float = 0.3
    n_train: int = 2000
    n_dev: int = 500
    n_test: int = 500
    seed: int = 0

    def validate(self) -> None:
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.branch < 2:
            raise ValueError(f"branch must be >= 2, got {self.branch}")
        if not 1 <= self.paths_min <= self.paths_max:
            raise ValueError(f"need 1 <= paths_min <= paths_max, got {self.paths_min}, {self.paths_max}")
        if self.paths_max > self.branch ** self.depth:
            raise ValueError("paths_max exceeds the number of leaves")
        if self.tokens_per_label < 1:
            raise ValueError("tokens_per_label must be >= 1")
        if not 0.0 <= self.noise_fraction < 1.0:
            raise ValueError(f"noise_fraction must lie in [0, 1), got {self.noise_fraction}")
        if self.noise_fraction > 0 and self.noise_vocab < 1:
            raise ValueError("noise_fraction > 0 needs noise_vocab >= 1")
        for name in ("n_train", "n_dev", "n_test"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class Sample:
    tokens: tuple[str, ...]
    labels: LocalHierarchy
    token_ids: tuple[int, ...] = field(default=(), compare=False)


def gen_taxonomy(spec: SynthSpec) -> LabelHierarchy:
    """Uniform ``branch``-ary tree of the given depth; labels named n{depth}_{index}."""
    spec.validate()
    entries = [{"name": "root", "parent": None}]
    prev = ["root"]
    for d in range(1, spec.depth + 1):
        level = []
        for j, par in enumerate(prev):
            for b in range(spec.branch):
                name = f"n{d}_{j * spec.branch + b}"
                entries.append({"name": name, "parent": par})
                level.append(name)
        prev = level
    return parse_taxonomy({"labels": entries})


def indicator_tokens(name: str, k: int) -> list[str]:
    """The k tokens owned by a label; the first is the label name itself."""
    return [name] + [f"{name}~{j}" for j in range(1, k)]


def _gen_split(spec: SynthSpec, h: LabelHierarchy, n_docs: int,
               rng: np.random.Generator) -> list[Sample]:
    leaves = np.array([i for i in h.non_root if not h.children[i]])
    k = spec.tokens_per_label
    docs = []
    for _ in range(n_docs):
        n_paths = int(rng.integers(spec.paths_min, spec.paths_max + 1))
        ends = rng.choice(leaves, size=n_paths, replace=False)
        y = ancestor_closure(h, [int(e) for e in ends])
        tokens: list[str] = []
        for lab in sorted(y.members):
            owned = indicator_tokens(h.labels[lab], k)
            m = int(rng.integers(1, k + 1))
            tokens.extend(owned[j] for j in sorted(rng.choice(k, size=m, replace=False)))
        n_noise = math.ceil(spec.noise_fraction * len(tokens))
        tokens.extend(f"w{int(j)}" for j in rng.integers(0, max(spec.noise_vocab, 1), size=n_noise))
        order = rng.permutation(len(tokens))
        docs.append(Sample(tuple(tokens[i] for i in order), y))
    return docs


def gen_dataset(spec: SynthSpec, h: LabelHierarchy) -> dict[str, list[Sample]]:
    """Draw train/dev/test documents from one seeded stream, in that order."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    return {
        "train": _gen_split(spec, h, spec.n_train, rng),
        "dev": _gen_split(spec, h, spec.n_dev, rng),
        "test": _gen_split(spec, h, spec.n_test, rng),
    }


def sample_to_json(s: Sample, h: LabelHierarchy) -> str:
    return json.dumps({"tokens": list(s.tokens), "labels": label_names(h, s.labels.members)},
                      ensure_ascii=False)


def write_jsonl(samples: Iterable[Sample], h: LabelHierarchy, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(sample_to_json(s, h) + "\n")


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if list(tokens[:2]) != [PAD, UNK]:
            raise ValueError("vocabulary must start with <pad>, <unk>")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary has duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: Iterable[str]) -> tuple[int, ...]:
        unk = self.index[UNK]
        return tuple(self.index.get(t, unk) for t in tokens)

    @classmethod
    def build(cls, token_lists: Iterable[Sequence[str]], h: LabelHierarchy | None = None) -> "Vocab":
        seen = set()
        for toks in token_lists:
            seen.update(toks)
        if h is not None:
            for name in h.labels:
                seen.update(label_name_tokens(name))
        seen.discard(PAD)
        seen.discard(UNK)
        return cls([PAD, UNK] + sorted(seen))


def label_name_tokens(name: str) -> list[str]:
    return name.split()


def read_jsonl(path: str | Path, h: LabelHierarchy, allow_empty_labels: bool = False) -> list[Sample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            toks, labs = obj.get("tokens"), obj.get("labels")
            if not isinstance(toks, list) or not all(isinstance(t, str) for t in toks):
                raise CorpusError(f"{path}:{lineno}: 'tokens' must be a list of strings")
            if not isinstance(labs, list) or not all(isinstance(t, str) for t in labs):
                raise CorpusError(f"{path}:{lineno}: 'labels' must be a list of strings")
            if not toks:
                raise CorpusError(f"{path}:{lineno}: empty token list")
            try:
                ids = [h.id_of(n) for n in labs]
            except UnknownLabelError as e:
                raise CorpusError(f"{path}:{lineno}: {e}") from None
            y = ancestor_closure(h, ids)
            if not y.members and not allow_empty_labels:
                raise CorpusError(f"{path}:{lineno}: sample has no labels")
            samples.append(Sample(tuple(toks), y))
    return samples


def load_jsonl(path: str | Path, h: LabelHierarchy, vocab: Vocab | None = None,
               allow_empty_labels: bool = False) -> list[Sample]:
    """Read a corpus file, closing label sets and attaching token ids.

    Without ``vocab`` a vocabulary is built from this file (plus label-name
    tokens) and used for encoding.
    """
    raw = read_jsonl(path, h, allow_empty_labels)
    if vocab is None:
        vocab = Vocab.build((s.tokens for s in raw), h)
    return [Sample(s.tokens, s.labels, vocab.encode(s.tokens)) for s in raw]


def label_counts(samples: Iterable[Sample], n_labels: int) -> np.ndarray:
    counts = np.zeros(n_labels, dtype=np.int64)
    for s in samples:
        for i in s.labels.members:
            counts[i] += 1
    return counts


@dataclass
class Batch:
    token_ids: np.ndarray       # (B, T) int64, PAD = 0
    mask: np.ndarray            # (B, T) float64, 1 for real tokens
    targets: np.ndarray         # (B, n_labels) 0/1
    labels: list[LocalHierarchy]
    indices: np.ndarray

    def __len__(self) -> int:
        return self.token_ids.shape[0]


def make_batch(samples: Sequence[Sample], n_labels: int, indices=None) -> Batch:
    if any(not s.token_ids for s in samples):
        raise CorpusError("samples need token ids; load them through a Vocab first")
    width = max(len(s.token_ids) for s in samples)
    ids = np.zeros((len(samples), width), dtype=np.int64)
    mask = np.zeros((len(samples), width))
    targets = np.zeros((len(samples), n_labels))
    for r, s in enumerate(samples):
        ids[r, :len(s.token_ids)] = s.token_ids
        mask[r, :len(s.token_ids)] = 1.0
        targets[r, list(s.labels.members)] = 1.0
    idx = np.arange(len(samples)) if indices is None else np.asarray(indices)
    return Batch(ids, mask, targets, [s.labels for s in samples], idx)


def batcher(samples: Sequence[Sample], batch_size: int, n_labels: int,
            seed: int | None = None) -> Iterator[Batch]:
    """Yield padded batches; shuffled by ``seed`` when given, final partial batch kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(samples))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(samples))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield make_batch([samples[i] for i in idx], n_labels, idx)


def write_corpus(out_dir: str | Path, spec: SynthSpec, force: bool = False) -> dict[str, Path]:
    """Generate a taxonomy and splits and write them under ``out_dir``."""
    out = Path(out_dir)
    paths = {name: out / f"{name}.jsonl" for name in ("train", "dev", "test")}
    paths["taxonomy"] = out / "taxonomy.json"
    existing = [p for p in paths.values() if p.exists()]
    if existing and not force:
        raise FileExistsError(f"refusing to overwrite {existing[0]} (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    h = gen_taxonomy(spec)
    splits = gen_dataset(spec, h)
    paths["taxonomy"].write_text(json.dumps(h.to_document(), indent=1) + "\n", encoding="utf-8")
    for name, samples in splits.items():
        write_jsonl(samples, h, paths[name])
    return paths


__all__ = [
    "Batch", "CorpusError", "HierarchyError", "PAD", "Sample", "SynthSpec", "UNK", "Vocab",
    "batcher", "gen_dataset", "gen_taxonomy", "indicator_tokens", "label_counts",
    "load_jsonl", "make_batch", "read_jsonl", "write_corpus", "write_jsonl",
]
