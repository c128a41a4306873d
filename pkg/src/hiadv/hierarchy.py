"""Label taxonomy (a rooted tree) and per-sample local hierarchies."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels

CORRUPTION_MODES = ("full", "partial", "none", "wrong")


class HierarchyError(ValueError):
    """Base class for malformed taxonomies and label sets."""


class DuplicateLabelError(HierarchyError):
    pass


class UnknownParentError(HierarchyError):
    pass


class MultipleParentsError(HierarchyError):
    pass


class CycleError(HierarchyError):
    pass


class DisconnectedError(HierarchyError):
    pass


class UnknownLabelError(HierarchyError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class NotClosedError(HierarchyError):
    pass


@dataclass(frozen=True, eq=False)
class LabelHierarchy:
    labels: tuple[str, ...]
    parent: tuple[int, ...]          # -1 for the root
    root_id: int
    depth: tuple[int, ...] = field(init=False)
    children: tuple[tuple[int, ...], ...] = field(init=False)
    spd: np.ndarray = field(init=False, repr=False)
    index: Mapping[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.labels)
        kids: list[list[int]] = [[] for _ in range(n)]
        for i, p in enumerate(self.parent):
            if p >= 0:
                kids[p].append(i)
        depth = [-1] * n
        depth[self.root_id] = 0
        order = [self.root_id]
        for node in order:
            for c in kids[node]:
                depth[c] = depth[node] + 1
                order.append(c)
        set_ = object.__setattr__
        set_(self, "children", tuple(tuple(k) for k in kids))
        set_(self, "depth", tuple(depth))
        set_(self, "index", {name: i for i, name in enumerate(self.labels)})
        spd = shortest_path_matrix(self)
        spd.setflags(write=False)
        set_(self, "spd", spd)

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        return (isinstance(other, LabelHierarchy) and self.labels == other.labels
                and self.parent == other.parent and self.root_id == other.root_id)

    def __hash__(self) -> int:
        return hash((self.labels, self.parent))

    @property
    def max_depth(self) -> int:
        return max(self.depth)

    @property
    def non_root(self) -> tuple[int, ...]:
        return tuple(i for i in range(len(self.labels)) if i != self.root_id)

    def id_of(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise UnknownLabelError(f"unknown label {name!r}") from None

    def ancestors(self, i: int) -> list[int]:
        """Strict ancestors of ``i`` from parent upward, root excluded."""
        out = []
        p = self.parent[i]
        while p >= 0 and p != self.root_id:
            out.append(p)
            p = self.parent[p]
        return out

    def neighbors(self, i: int) -> tuple[int, ...]:
        p = self.parent[i]
        return ((p,) if p >= 0 else ()) + self.children[i]

    def to_document(self) -> dict:
        return {"labels": [
            {"name": name, "parent": None if p < 0 else self.labels[p]}
            for name, p in zip(self.labels, self.parent)
        ]}

    def digest(self) -> str:
        blob = json.dumps(self.to_document(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LocalHierarchy:
    members: frozenset[int]

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(sorted(self.members))

    def __contains__(self, i) -> bool:
        return i in self.members


@dataclass(frozen=True)
class CorruptedLocalHierarchy:
    members: frozenset[int]
    mode: str

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(sorted(self.members))

    def __contains__(self, i) -> bool:
        return i in self.members


def parse_taxonomy(document: Mapping) -> LabelHierarchy:
    """Validate a taxonomy document and build the hierarchy.

    Raises a distinct :class:`HierarchyError` subclass for each structural
    defect: duplicate names, unknown parents, multiple parents, cycles and
    nodes not connected to the root.
    """
    if not isinstance(document, Mapping) or not isinstance(document.get("labels"), list):
        raise HierarchyError('taxonomy must be an object with a "labels" list')
    names: list[str] = []
    parent_names: dict[str, str | None] = {}
    for pos, entry in enumerate(document["labels"]):
        if not isinstance(entry, Mapping) or not isinstance(entry.get("name"), str):
            raise HierarchyError(f"labels[{pos}]: expected an object with a string 'name'")
        name = entry["name"]
        par = entry.get("parent")
        if isinstance(par, list):
            if len(par) > 1:
                raise MultipleParentsError(f"label {name!r} lists parents {par}")
            par = par[0] if par else None
        if par is not None and not isinstance(par, str):
            raise HierarchyError(f"labels[{pos}]: 'parent' must be a string or null")
        if name in parent_names:
            if parent_names[name] != par:
                raise MultipleParentsError(
                    f"label {name!r} has parents {parent_names[name]!r} and {par!r}")
            raise DuplicateLabelError(f"label {name!r} is listed twice")
        parent_names[name] = par
        names.append(name)

    index = {n: i for i, n in enumerate(names)}
    parent = []
    for name in names:
        par = parent_names[name]
        if par is None:
            parent.append(-1)
        elif par not in index:
            raise UnknownParentError(f"label {name!r} refers to unknown parent {par!r}")
        else:
            parent.append(index[par])

    roots = [i for i, p in enumerate(parent) if p < 0]
    if not roots:
        raise CycleError("no root: every label has a parent")
    # cycle check before connectivity, so a loop is reported as a loop
    state = [0] * len(names)  # 0 unseen, 1 on current walk, 2 done
    for start in range(len(names)):
        walk = []
        node = start
        while node >= 0 and state[node] == 0:
            state[node] = 1
            walk.append(node)
            node = parent[node]
        if node >= 0 and state[node] == 1:
            raise CycleError(f"cycle through label {names[node]!r}")
        for w in walk:
            state[w] = 2
    if len(roots) > 1:
        extra = [names[r] for r in roots[1:]]
        raise DisconnectedError(
            f"labels {extra} are not connected to root {names[roots[0]]!r}")
    return LabelHierarchy(tuple(names), tuple(parent), roots[0])


def load_taxonomy(path: str | Path) -> LabelHierarchy:
    with open(path, encoding="utf-8") as fh:
        return parse_taxonomy(json.load(fh))


def dump_taxonomy(h: LabelHierarchy, path: str | Path) -> None:
    Path(path).write_text(json.dumps(h.to_document(), indent=1) + "\n", encoding="utf-8")


def shortest_path_matrix(h: LabelHierarchy) -> np.ndarray:
    """Hop counts between every pair of nodes on the undirected tree."""
    return _kernels.tree_distances(np.asarray(h.parent, dtype=np.int64),
                                   np.asarray(h.depth, dtype=np.int64))


def _check_ids(h: LabelHierarchy, ids: Iterable[int]) -> list[int]:
    ids = list(ids)
    n = len(h)
    for i in ids:
        if not isinstance(i, (int, np.integer)) or not 0 <= i < n:
            raise UnknownLabelError(f"label id {i!r} is outside the hierarchy (size {n})")
    return [int(i) for i in ids]


def ancestor_closure(h: LabelHierarchy, leaves: Iterable[int]) -> LocalHierarchy:
    out: set[int] = set()
    for i in _check_ids(h, leaves):
        if i == h.root_id or i in out:
            continue
        out.add(i)
        out.update(h.ancestors(i))
    return LocalHierarchy(frozenset(out))


def is_closed(h: LabelHierarchy, members: Iterable[int]) -> bool:
    m = set(members)
    return all(h.parent[i] in m or h.parent[i] == h.root_id for i in m)


def decompose_paths(h: LabelHierarchy, y: LocalHierarchy) -> list[list[int]]:
    """Split an ancestor-closed label set into root-to-end paths."""
    members = set(_check_ids(h, y.members))
    if h.root_id in members or not is_closed(h, members):
        raise NotClosedError("label set is not ancestor-closed")
    ends = sorted(i for i in members if not any(c in members for c in h.children[i]))
    paths = []
    for e in ends:
        chain = [e] + h.ancestors(e)
        paths.append([h.root_id] + chain[::-1])
    return paths


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def corrupt(y: LocalHierarchy, mode: str, fraction: float, rng: np.random.Generator,
            h: LabelHierarchy | None = None) -> CorruptedLocalHierarchy:
    """Degrade a local hierarchy for the ablation runs.

    ``partial`` drops ``round(fraction * |y|)`` members uniformly and ``wrong``
    draws ``|y|`` labels uniformly from the non-root labels of ``h``. Neither
    result is re-closed under ancestors.
    """
    if mode not in CORRUPTION_MODES:
        raise ValueError(f"unknown corruption mode {mode!r}; expected one of {CORRUPTION_MODES}")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    members = sorted(y.members)
    if mode == "full":
        kept = members
    elif mode == "none":
        kept = []
    elif mode == "partial":
        n_drop = _round_half_up(fraction * len(members))
        drop = rng.choice(len(members), size=n_drop, replace=False) if n_drop else []
        dropped = {members[i] for i in drop}
        kept = [m for m in members if m not in dropped]
    else:
        if h is None:
            raise ValueError("mode 'wrong' needs the hierarchy to sample from")
        pool = np.asarray(h.non_root)
        kept = [int(i) for i in rng.choice(pool, size=len(members), replace=False)]
    return CorruptedLocalHierarchy(frozenset(kept), mode)


def label_names(h: LabelHierarchy, ids: Iterable[int]) -> list[str]:
    return [h.labels[i] for i in sorted(ids)]


def resolve_labels(h: LabelHierarchy, names: Sequence[str]) -> LocalHierarchy:
    return ancestor_closure(h, [h.id_of(n) for n in names])
