"""Mondrian multidimensional k-anonymity (relaxed partitioning).

Recursively cuts the table on the quasi-identifier with the widest
normalized range, numeric columns at the median (left takes <= median) and
categorical columns by bisecting the sorted distinct values, as long as
both children keep at least k rows. Each final partition is generalized to
a range (numeric) or value set (categorical); sensitive columns pass
through untouched.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QiTable",
    "AnonymizedTable",
    "mondrian_partition",
    "generalize",
    "verify_k_anonymity",
    "anonymize",
]


@dataclass
class QiTable:
    columns: dict            # name -> list of values
    qi: list                 # of (name, "numeric" | "categorical")
    sensitive: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self)
        for name, _ in self.qi:
            if name not in self.columns or len(self.columns[name]) != n:
                raise ValueError(f"QI column {name!r} missing or ragged")
        for name, kind in self.qi:
            if kind not in ("numeric", "categorical"):
                raise ValueError(f"unknown QI kind {kind!r}")

    def __len__(self):
        return len(next(iter(self.columns.values()), []))


@dataclass
class AnonymizedTable:
    columns: dict        # QI columns generalized to strings, others verbatim
    qi_names: list
    partition_ids: list  # partition index per row

    def __len__(self):
        return len(self.partition_ids)


def _normalized_width(values, kind, global_span):
    if kind == "numeric":
        if global_span == 0:
            return 0.0
        return (max(values) - min(values)) / global_span
    return len(set(values)) / global_span if global_span else 0.0


def _try_split(values, kind, idx):
    """Candidate (left, right) row-index split on one column, or None."""
    vals = [values[i] for i in idx]
    if kind == "numeric":
        med = float(np.median(np.asarray(vals, dtype=np.float64)))
        left = [i for i in idx if float(values[i]) <= med]
        right = [i for i in idx if float(values[i]) > med]
    else:
        distinct = sorted(set(vals))
        if len(distinct) < 2:
            return None
        left_set = set(distinct[: len(distinct) // 2])
        left = [i for i in idx if values[i] in left_set]
        right = [i for i in idx if values[i] not in left_set]
    if not left or not right:
        return None
    return left, right


def mondrian_partition(table: QiTable, k: int):
    """Row-index partitions, every one of size >= k."""
    n = len(table)
    if k < 1:
        raise ValueError("k must be at least 1")
    if n < k:
        raise ValueError("fewer rows than k")
    spans = {}
    for name, kind in table.qi:
        col = table.columns[name]
        if kind == "numeric":
            spans[name] = float(max(col)) - float(min(col))
        else:
            spans[name] = len(set(col))

    partitions = []

    def recurse(idx):
        widths = []
        for pos, (name, kind) in enumerate(table.qi):
            vals = [table.columns[name][i] for i in idx]
            widths.append((-_normalized_width(vals, kind, spans[name]), pos))
        for _, pos in sorted(widths):
            name, kind = table.qi[pos]
            split = _try_split(table.columns[name], kind, idx)
            if split is not None and len(split[0]) >= k and len(split[1]) >= k:
                recurse(split[0])
                recurse(split[1])
                return
        partitions.append(sorted(idx))

    recurse(list(range(n)))
    return partitions


def _fmt_num(v):
    f = float(v)
    return str(int(f)) if f.is_integer() else repr(f)


def generalize(table: QiTable, partitions) -> AnonymizedTable:
    """Replace QI values by per-partition ranges / value sets."""
    n = len(table)
    seen = sorted(i for part in partitions for i in part)
    if seen != list(range(n)):
        raise ValueError("partitions do not cover the rows disjointly")
    qi_names = [name for name, _ in table.qi]
    out = {name: [None] * n for name in table.columns}
    pids = [0] * n
    for pid, part in enumerate(partitions):
        for name, kind in table.qi:
            vals = [table.columns[name][i] for i in part]
            if kind == "numeric":
                label = f"{_fmt_num(min(vals))}-{_fmt_num(max(vals))}"
            else:
                label = ",".join(sorted(set(str(v) for v in vals)))
            for i in part:
                out[name][i] = label
        for i in part:
            pids[i] = pid
    for name in table.columns:
        if name not in qi_names:
            out[name] = list(table.columns[name])
    return AnonymizedTable(out, qi_names, pids)


def verify_k_anonymity(anon: AnonymizedTable, k: int) -> bool:
    """Exhaustive group-by over generalized QI tuples."""
    groups = {}
    for i in range(len(anon)):
        key = tuple(anon.columns[name][i] for name in anon.qi_names)
        groups[key] = groups.get(key, 0) + 1
    return all(size >= k for size in groups.values())


def anonymize(table: QiTable, k: int) -> AnonymizedTable:
    return generalize(table, mondrian_partition(table, k))
