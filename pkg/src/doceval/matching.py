"""Optimal one-to-one assignment of predictions to ground-truth objects.

Both regimes (3D centroid distance and 2D IoU) reduce to the same problem:
among pairs that pass the regime threshold, pick the assignment with the most
pairs and, among those, the best total score. Remaining ties are broken by the
lexicographically smallest vector of (prediction index assigned to each
object), objects taken in ``object_id`` order.

Costs are turned into exact integers before solving (every float is a dyadic
rational), so optimality is exact rather than up to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .geometry import BBox2D, distance3, iou


@dataclass(frozen=True)
class FrameMatchResult:
    t: float
    pairs: tuple[tuple[int, str, float], ...]
    unmatched_predictions: tuple[int, ...]
    unmatched_objects: tuple[str, ...]

    @property
    def total(self) -> float:
        return math.fsum(p[2] for p in self.pairs)

    def object_for(self, pred_index: int) -> str | None:
        for i, oid, _ in self.pairs:
            if i == pred_index:
                return oid
        return None


def hungarian(cost: Sequence[Sequence[int]]) -> list[int]:
    """Minimum-cost perfect assignment on a square matrix.

    Shortest augmenting path with potentials; exact for integer (or
    Fraction) costs. Returns ``col`` such that row ``i`` is assigned to
    column ``col[i]``.
    """
    n = len(cost)
    inf = math.inf
    u = [0] * (n + 1)
    v = [0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row matched to column j (1-based, 0 = none)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = cost[i0 - 1]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col = [0] * n
    for j in range(1, n + 1):
        if p[j]:
            col[p[j] - 1] = j - 1
    return col


def _components(feasible: np.ndarray) -> list[tuple[list[int], list[int]]]:
    """Connected components of the bipartite feasibility graph (rows, cols)."""
    n_rows, n_cols = feasible.shape
    parent = list(range(n_rows + n_cols))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in zip(*np.nonzero(feasible)):
        a, b = find(int(i)), find(n_rows + int(j))
        if a != b:
            parent[max(a, b)] = min(a, b)
    groups: dict[int, tuple[list[int], list[int]]] = {}
    for i in range(n_rows):
        if feasible[i].any():
            groups.setdefault(find(i), ([], []))[0].append(i)
    for j in range(n_cols):
        if feasible[:, j].any():
            groups.setdefault(find(n_rows + j), ([], []))[1].append(j)
    return [groups[k] for k in sorted(groups)]


def _solve_component(primary: list[list[Fraction | None]]) -> list[tuple[int, int]]:
    """Lexicographic (max pairs, min primary, min tie vector) assignment.

    ``primary[i][j]`` is the non-negative exact cost of row i with column j,
    or None when infeasible. Columns are objects in tie-break order.
    """
    n_rows = len(primary)
    n_cols = len(primary[0])
    denom = 1
    for row in primary:
        for c in row:
            if c is not None:
                denom = max(denom, c.denominator)  # dyadic: the max is a common multiple
    base = n_rows + 1
    tie_span = base**n_cols  # exceeds any total tie weight

    def tie(i: int, j: int) -> int:
        return i * base ** (n_cols - 1 - j)

    real = [[None if c is None else int(c * denom) * tie_span + tie(i, j) for j, c in enumerate(row)]
            for i, row in enumerate(primary)]
    big = 1 + sum(c for row in real for c in row if c is not None) + tie_span
    size = n_rows + n_cols
    cost = [[0] * size for _ in range(size)]
    for i in range(size):
        for j in range(size):
            if i < n_rows and j < n_cols:
                c = real[i][j]
                cost[i][j] = 3 * big if c is None else c
            elif i < n_rows:
                cost[i][j] = big  # prediction left unmatched
            elif j < n_cols:
                cost[i][j] = big + tie(n_rows, j)  # object left unmatched
    col = hungarian(cost)
    return [(i, col[i]) for i in range(n_rows) if col[i] < n_cols and real[i][col[i]] is not None]


def optimal_assignment(
    scores: np.ndarray, feasible: np.ndarray, to_cost: Callable[[float], Fraction]
) -> list[tuple[int, int]]:
    """Assignment over a (predictions x objects) score matrix.

    ``to_cost`` maps a score to a non-negative exact cost (lower is better).
    Columns must already be in tie-break order.
    """
    pairs: list[tuple[int, int]] = []
    for rows, cols in _components(feasible):
        if len(rows) == 1 and len(cols) == 1:
            pairs.append((rows[0], cols[0]))
            continue
        primary = [
            [to_cost(float(scores[i, j])) if feasible[i, j] else None for j in cols] for i in rows
        ]
        pairs.extend((rows[a], cols[b]) for a, b in _solve_component(primary))
    return sorted(pairs)


def _result(t, pairs, scores, n_pred, object_ids) -> FrameMatchResult:
    matched_p = {i for i, _ in pairs}
    matched_o = {j for _, j in pairs}
    return FrameMatchResult(
        t=t,
        pairs=tuple((i, object_ids[j], float(scores[i, j])) for i, j in pairs),
        unmatched_predictions=tuple(i for i in range(n_pred) if i not in matched_p),
        unmatched_objects=tuple(object_ids[j] for j in range(len(object_ids)) if j not in matched_o),
    )


def match_frame(
    pred_positions: Sequence[Sequence[float]],
    objects: Sequence[tuple[str, Sequence[float]]],
    tau_loc: float,
    t: float = 0.0,
    pred_indices: Sequence[int] | None = None,
) -> FrameMatchResult:
    """Class-agnostic 3D centroid matching for one frame.

    ``objects`` is a list of ``(object_id, centroid)`` for the objects visible
    at ``t``. Prediction indices in the result refer to ``pred_indices`` when
    given (e.g. stream positions), otherwise to list positions.
    """
    if not tau_loc > 0:
        raise ValueError("tau_loc must be positive")
    objects = sorted(objects, key=lambda o: o[0])
    object_ids = [o[0] for o in objects]
    n_pred = len(pred_positions)
    # same norm as distance3 so reported distances agree with it bit for bit
    dist = np.array(
        [[distance3(p, c) for _, c in objects] for p in pred_positions], dtype=float
    ).reshape(n_pred, len(objects))
    feasible = dist <= tau_loc
    pairs = optimal_assignment(dist, feasible, Fraction)
    res = _result(t, pairs, dist, n_pred, object_ids)
    if pred_indices is not None:
        idx = list(pred_indices)
        res = FrameMatchResult(
            t,
            tuple((idx[i], oid, d) for i, oid, d in res.pairs),
            tuple(idx[i] for i in res.unmatched_predictions),
            res.unmatched_objects,
        )
    return res


def match_iou(
    predicted: Sequence[BBox2D],
    truths: Sequence[tuple[str, BBox2D]] | Sequence[BBox2D],
    iou_threshold: float,
    t: float = 0.0,
) -> FrameMatchResult:
    """Maximum-total-IoU matching among pairs with IoU >= threshold.

    ``truths`` may be bare boxes (ids become their list positions) or
    ``(object_id, box)`` pairs.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")
    truths = [(str(k), tb) if isinstance(tb, BBox2D) else tb for k, tb in enumerate(truths)]
    truths = sorted(truths, key=lambda o: o[0])
    object_ids = [o[0] for o in truths]
    scores = np.zeros((len(predicted), len(truths)))
    for i, pb in enumerate(predicted):
        for j, (_, tb) in enumerate(truths):
            if pb.x_max > tb.x_min and tb.x_max > pb.x_min and pb.y_max > tb.y_min and tb.y_max > pb.y_min:
                scores[i, j] = iou(pb, tb)
    feasible = scores >= iou_threshold
    pairs = optimal_assignment(scores, feasible, lambda s: 1 - Fraction(s))
    return _result(t, pairs, scores, len(predicted), object_ids)
