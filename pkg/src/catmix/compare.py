"""Cross-tabulation and agreement between two hard partitions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class CrossTab:
    """counts[r, c] = #{i : a_i = row_labels[r], b_i = col_labels[c]}.

    Percentages are column-wise by default (each column of ``b`` sums to 100).
    """

    counts: np.ndarray
    row_labels: tuple
    col_labels: tuple

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def percentages(self, orientation: str = "column") -> np.ndarray:
        c = self.counts.astype(float)
        if orientation == "column":
            tot = c.sum(axis=0, keepdims=True)
        elif orientation == "row":
            tot = c.sum(axis=1, keepdims=True)
        else:
            raise ValueError("orientation must be 'column' or 'row'")
        return 100.0 * np.divide(c, tot, out=np.zeros_like(c), where=tot > 0)

    def transpose(self) -> "CrossTab":
        return CrossTab(self.counts.T.copy(), self.col_labels, self.row_labels)

    def to_dict(self, orientation: str = "column") -> dict:
        return {
            "rows": [_jsonable(v) for v in self.row_labels],
            "columns": [_jsonable(v) for v in self.col_labels],
            "counts": self.counts.tolist(),
            "percentages": self.percentages(orientation).tolist(),
            "orientation": orientation,
            "row_totals": self.row_totals.tolist(),
            "column_totals": self.col_totals.tolist(),
            "total": self.total,
        }


def _jsonable(v):
    return v.item() if isinstance(v, np.generic) else v


def crosstab(labels_a, labels_b) -> CrossTab:
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    rows, ia = np.unique(a, return_inverse=True)
    cols, ib = np.unique(b, return_inverse=True)
    counts = np.zeros((rows.size, cols.size), dtype=np.int64)
    np.add.at(counts, (ia.ravel(), ib.ravel()), 1)
    return CrossTab(counts, tuple(rows.tolist()), tuple(cols.tolist()))


def agreement(tab: CrossTab, orientation: str = "column") -> dict:
    """Column (or row) maxima plus many-to-one and greedy one-to-one agreement.

    many_to_one maps every column to its largest row.  one_to_one walks cells
    in decreasing count order (ties: lower row, then lower column) and keeps a
    cell when neither its row nor column is already taken.
    """
    counts = tab.counts if orientation == "column" else tab.counts.T
    pct = tab.percentages(orientation)
    pct = pct if orientation == "column" else pct.T
    n = tab.total
    maxima = pct.max(axis=0)
    best_rows = counts.argmax(axis=0)
    many_to_one = counts.max(axis=0).sum() / n if n else 0.0

    order = sorted(((-counts[r, c], r, c) for r in range(counts.shape[0]) for c in range(counts.shape[1])))
    used_r, used_c, matched, pairs = set(), set(), 0, []
    for neg, r, c in order:
        if r in used_r or c in used_c:
            continue
        used_r.add(r)
        used_c.add(c)
        matched += -neg
        pairs.append((r, c))
    return {
        "column_max_pct": maxima.tolist(),
        "column_best_row": best_rows.tolist(),
        "many_to_one": float(many_to_one),
        "one_to_one": float(matched / n) if n else 0.0,
        "one_to_one_pairs": pairs,
    }


def format_crosstab(tab: CrossTab, row_name: str = "Cluster", col_name: str = "Class",
                    orientation: str = "column") -> str:
    pct = tab.percentages(orientation)
    head = [""] + [f"{col_name} {c}" for c in tab.col_labels] + ["Total"]
    body = []
    for r, lab in enumerate(tab.row_labels):
        cells = [f"{tab.counts[r, c]} ({pct[r, c]:.1f}%)" for c in range(len(tab.col_labels))]
        body.append([f"{row_name} {lab}"] + cells + [str(tab.row_totals[r])])
    body.append(["Total"] + [str(v) for v in tab.col_totals] + [str(tab.total)])
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    lines = ["  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(row, widths)))
             for row in [head] + body]
    return "\n".join(lines)
