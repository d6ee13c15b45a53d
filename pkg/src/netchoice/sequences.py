"""Turn a timestamped directed edge list into choice sequences."""
from __future__ import annotations

import csv
import enum
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .model import Alternative, ChoiceSequence, ChoiceSituation, Dataset
from .rng import Stream, as_stream

EDGE_COLUMNS = ("source", "target", "order_key")


@dataclass(frozen=True)
class EdgeRecord:
    source: Hashable
    target: Hashable
    order_key: float

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError(f"self-edge rejected: {self.source!r} -> {self.target!r}")


class PolicyMode(str, enum.Enum):
    ALL_OTHERS = "AllOthers"
    PREDECESSORS_ONLY = "PredecessorsOnly"
    FILTERED_BY_ATTRIBUTE = "FilteredByAttribute"

    @classmethod
    def parse(cls, value: "PolicyMode | str") -> "PolicyMode":
        if isinstance(value, cls):
            return value
        key = str(value).replace("-", "").replace("_", "").lower()
        for m in cls:
            if m.value.lower() == key:
                return m
        raise ValueError(f"unknown policy mode {value!r}")


@dataclass(frozen=True)
class AlternativePolicy:
    """Which nodes a chooser may pick from.

    ``AllOthers`` admits every node but the chooser. ``PredecessorsOnly``
    admits nodes whose time strictly precedes the chooser's; times come from
    ``node_times`` or, when absent, from the smallest order key among a
    node's out-edges (nodes without out-edges count as always prior).
    ``FilteredByAttribute`` admits nodes whose ``attributes`` value equals the
    chooser's. ``negative_sample_size`` keeps the chosen node plus that many
    uniformly drawn others.
    """

    mode: PolicyMode = PolicyMode.ALL_OTHERS
    negative_sample_size: int | None = None
    attributes: Mapping[Hashable, Hashable] | None = None
    node_times: Mapping[Hashable, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", PolicyMode.parse(self.mode))
        if self.negative_sample_size is not None and self.negative_sample_size < 1:
            raise ValueError("negative_sample_size must be >= 1")
        if self.mode is PolicyMode.FILTERED_BY_ATTRIBUTE and self.attributes is None:
            raise ValueError("FilteredByAttribute needs an attributes mapping")


@dataclass(frozen=True)
class SituationContext:
    chooser: Hashable
    situation_index: int
    order_key: float
    chosen: Hashable


CovariateFn = Callable[[Hashable, Hashable, SituationContext], Sequence[float]]


def node_sort_key(node) -> tuple:
    """Canonical node order: integers (or integer strings) numerically, then text."""
    if isinstance(node, (int, np.integer)):
        return (0, int(node), "")
    s = str(node)
    try:
        return (0, int(s), "")
    except ValueError:
        return (1, 0, s)


# ---------------------------------------------------------------------------
# Negative sampling


def sample_negative_indices(n_candidates: int, chosen_index: int, k: int,
                            stream: "Stream | int | np.random.Generator") -> np.ndarray:
    """``k`` distinct indices in ``range(n_candidates)`` other than ``chosen_index``.

    Only ``k`` integers are materialized, so ``n_candidates`` can be large.
    """
    return sample_excluding(n_candidates, np.array([chosen_index]), k, stream)


def sample_excluding(n: int, excluded, k: int, stream: "Stream | int | np.random.Generator") -> np.ndarray:
    """``k`` distinct indices drawn uniformly from ``range(n)`` minus ``excluded``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    excl = np.unique(np.asarray(excluded, dtype=np.int64))
    excl = excl[(excl >= 0) & (excl < n)]
    avail = n - excl.size
    if avail < k:
        raise ValueError(f"need {k} negatives but only {avail} candidates are available")
    gen = stream if isinstance(stream, np.random.Generator) else as_stream(stream).generator()
    ranks = gen.choice(avail, size=k, replace=False)
    # rank r maps to the r-th index not in excl
    shifted = excl - np.arange(excl.size)
    return ranks + np.searchsorted(shifted, ranks, side="right")


def negative_sample(full_set: Sequence[Alternative], chosen_index: int, k: int,
                    stream: "Stream | int") -> ChoiceSituation:
    """The chosen alternative plus ``k`` non-chosen ones drawn uniformly without
    replacement; alternatives keep their relative order from ``full_set``."""
    n = len(full_set)
    if not 0 <= chosen_index < n:
        raise ValueError("chosen_index out of range")
    if n <= k:
        raise ValueError(f"full set of {n} cannot supply {k} negatives")
    picked = np.sort(np.append(sample_negative_indices(n, chosen_index, k, stream), chosen_index))
    alts = tuple(full_set[int(i)] for i in picked)
    return ChoiceSituation(alts, int(np.searchsorted(picked, chosen_index)))


# ---------------------------------------------------------------------------
# Sequence construction


def _node_times(edges: Sequence[EdgeRecord], policy: AlternativePolicy) -> dict:
    if policy.node_times is not None:
        return dict(policy.node_times)
    times: dict = {}
    for e in edges:
        t = times.get(e.source)
        times[e.source] = e.order_key if t is None else min(t, e.order_key)
    return times


def admitted_candidates(chooser, nodes: Sequence, policy: AlternativePolicy, times: Mapping) -> list:
    """Nodes the policy lets ``chooser`` pick, in canonical order, chooser excluded."""
    if policy.mode is PolicyMode.ALL_OTHERS:
        return [v for v in nodes if v != chooser]
    if policy.mode is PolicyMode.PREDECESSORS_ONLY:
        t0 = times.get(chooser, -math.inf)
        return [v for v in nodes if v != chooser and times.get(v, -math.inf) < t0]
    a0 = policy.attributes.get(chooser)
    return [v for v in nodes if v != chooser and policy.attributes.get(v) == a0]


def build_sequences(edges: Iterable[EdgeRecord], policy: AlternativePolicy | None = None,
                    covariate_fn: CovariateFn | None = None, stream: "Stream | int" = 0,
                    characteristic_names: Sequence[str] | None = None,
                    nodes: Iterable | None = None) -> Dataset:
    """One choice sequence per node with at least one out-edge.

    Situations follow ``order_key`` (ties by target). Each alternative set is
    the chosen target plus the policy's candidates; with negative sampling,
    situation ``t`` of the ``i``-th chooser (canonical order) draws its
    negatives from the stream ``stream.child(i, t)``. Covariates default to
    the candidate's in-degree before the situation's order key.
    """
    edges = list(edges)
    if not edges:
        raise ValueError("edge list is empty")
    policy = policy or AlternativePolicy()
    root = as_stream(stream)
    if covariate_fn is None:
        covariate_fn = in_degree_covariate(edges)
        characteristic_names = characteristic_names or ("in_degree",)
    all_nodes = set(nodes or ())
    out: dict = defaultdict(list)
    for e in edges:
        all_nodes.update((e.source, e.target))
        out[e.source].append(e)
    node_list = sorted(all_nodes, key=node_sort_key)
    times = _node_times(edges, policy)
    k = policy.negative_sample_size

    sequences = []
    for ci, chooser in enumerate(sorted(out, key=node_sort_key)):
        own = sorted(out[chooser], key=lambda e: (e.order_key, node_sort_key(e.target)))
        base = admitted_candidates(chooser, node_list, policy, times)
        sits = []
        for t, e in enumerate(own):
            cands = base if e.target in base else sorted(base + [e.target], key=node_sort_key)
            chosen_pos = cands.index(e.target)
            if k is not None:
                if len(cands) < 2:
                    raise ValueError(f"policy admits no non-chosen candidates for {chooser!r}, situation {t}")
                kk = min(k, len(cands) - 1)
                picked = np.sort(np.append(
                    sample_negative_indices(len(cands), chosen_pos, kk, root.child(ci, t)), chosen_pos))
                cands = [cands[int(i)] for i in picked]
                chosen_pos = int(np.searchsorted(picked, chosen_pos))
            ctx = SituationContext(chooser, t, e.order_key, e.target)
            alts = []
            for v in cands:
                x = np.asarray(covariate_fn(chooser, v, ctx), dtype=float).ravel()
                if not np.all(np.isfinite(x)):
                    raise ValueError(f"non-finite covariates for chooser {chooser!r}, candidate {v!r}")
                alts.append(Alternative(v, x))
            sits.append(ChoiceSituation(tuple(alts), chosen_pos))
        sequences.append(ChoiceSequence(chooser, tuple(sits)))
    width = len(sequences[0].situations[0].alternatives[0].covariates)
    names = tuple(characteristic_names or (f"x{i + 1}" for i in range(width)))
    return Dataset(tuple(sequences), names)


def in_degree_covariate(edges: Sequence[EdgeRecord]) -> CovariateFn:
    """Covariate: the candidate's in-degree from edges strictly before the situation."""
    keys: dict = defaultdict(list)
    for e in edges:
        keys[e.target].append(e.order_key)
    sorted_keys = {v: np.sort(np.asarray(ks, dtype=float)) for v, ks in keys.items()}

    def fn(chooser, candidate, ctx: SituationContext):
        ks = sorted_keys.get(candidate)
        if ks is None:
            return (0.0,)
        return (float(np.searchsorted(ks, ctx.order_key, side="left")),)

    return fn


# ---------------------------------------------------------------------------
# Edge-list CSV


def parse_order_key(text: str) -> float:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return datetime.fromisoformat(text).timestamp()


def read_edges(path_or_buf) -> list[EdgeRecord]:
    """Read an edge CSV with header ``source,target,order_key``."""
    fh = open(path_or_buf, newline="", encoding="utf-8") if not hasattr(path_or_buf, "read") else path_or_buf
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != EDGE_COLUMNS:
            raise ValueError(f"edge CSV header must be {','.join(EDGE_COLUMNS)}")
        edges = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"line {lineno}: expected 3 fields, got {len(row)}")
            try:
                edges.append(EdgeRecord(row[0].strip(), row[1].strip(), parse_order_key(row[2])))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        return edges
    finally:
        if fh is not path_or_buf:
            fh.close()


def write_edges(edges: Iterable[EdgeRecord], path_or_buf) -> None:
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if not hasattr(path_or_buf, "write") else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EDGE_COLUMNS)
        for e in edges:
            w.writerow((e.source, e.target, e.order_key))
    finally:
        if fh is not path_or_buf:
            fh.close()
