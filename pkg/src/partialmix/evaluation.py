"""Agreement between two partitions of the same cases."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _labels(a, b):
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.size != b.size:
        raise ValueError(f"label vectors differ in length ({a.size} vs {b.size})")
    if a.size < 2:
        raise ValueError("need at least two cases")
    return a, b


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    counts: np.ndarray
    row_labels: np.ndarray
    col_labels: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def contingency_table(a, b) -> ContingencyTable:
    a, b = _labels(a, b)
    ra, ia = np.unique(a, return_inverse=True)
    rb, ib = np.unique(b, return_inverse=True)
    counts = np.zeros((ra.size, rb.size), dtype=np.int64)
    np.add.at(counts, (ia.ravel(), ib.ravel()), 1)
    return ContingencyTable(counts, ra, rb)


def _pairs(x):
    x = np.asarray(x, dtype=np.int64)
    return x * (x - 1) // 2


def pair_counts(a, b) -> tuple[int, int, int, int]:
    """(together in both, together only in a, together only in b, apart in both)."""
    t = contingency_table(a, b)
    both = int(_pairs(t.counts).sum())
    in_a = int(_pairs(t.row_sums).sum())
    in_b = int(_pairs(t.col_sums).sum())
    total = int(_pairs(t.n))
    return both, in_a - both, in_b - both, total - in_a - in_b + both


def rand_index(a, b) -> float:
    both, only_a, only_b, neither = pair_counts(a, b)
    return (both + neither) / (both + only_a + only_b + neither)


def adjusted_rand_index(a, b) -> float:
    """Hubert-Arabie adjusted Rand index.

    When both partitions are trivial the adjustment is 0/0; the result is
    then 1.0 if the partitions coincide and 0.0 otherwise.
    """
    t = contingency_table(a, b)
    index = float(_pairs(t.counts).sum())
    sa = float(_pairs(t.row_sums).sum())
    sb = float(_pairs(t.col_sums).sum())
    total = float(_pairs(t.n))
    expected = sa * sb / total
    top = 0.5 * (sa + sb)
    if top == expected:
        return 1.0 if sa == sb == index else 0.0
    return (index - expected) / (top - expected)


def align_labels(reference, labels) -> np.ndarray:
    """Relabel ``labels`` to best match ``reference`` by greedy confusion mass.

    For reporting only; the indices above are invariant to relabeling.
    """
    reference, labels = _labels(reference, labels)
    t = contingency_table(labels, reference)
    counts = t.counts.astype(float)
    mapping = {}
    free = set(range(t.col_labels.size))
    for _ in range(min(counts.shape)):
        i, j = np.unravel_index(np.argmax(counts), counts.shape)
        mapping[t.row_labels[i]] = t.col_labels[j]
        free.discard(j)
        counts[i, :] = -1
        counts[:, j] = -1
    spare = iter(sorted(set(np.unique(labels)) - set(mapping)))
    next_label = max(np.max(reference), np.max(labels)) + 1
    for lab in spare:
        mapping[lab] = next_label
        next_label += 1
    return np.array([mapping[x] for x in labels])
