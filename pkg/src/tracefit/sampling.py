"""Greedy selection of fitting indices on the sorted approximate diagonal.

Positions refer to the ascending order of ``M`` (0-based); the first and
last position are always selected. Intervals between consecutive selected
positions are refined by the interior point that minimizes the three-point
trapezoid residual, largest residual first, with a midpoint bisection of the
widest interval after every fifth sample. Once the largest residual drops to
``rel_threshold`` times the initial one, only widest-interval bisection is
used until ``max_pts`` positions are selected.
"""

from __future__ import annotations

import bisect
import heapq
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .approx_diag import DiagApprox

MIDPOINT_EVERY = 5


@dataclass(frozen=True, eq=False)
class FitSampleSet:
    """Selected positions in sorted order and the matching original indices.

    ``s_fit_original[k] == J[s_fit_sorted[k]]`` for the approximation the set
    was built against. ``queue_state`` holds the pending ``(err, L, R)``
    intervals of the greedy phase.
    """

    s_fit_sorted: np.ndarray
    s_fit_original: np.ndarray
    queue_state: tuple = ()

    def __len__(self):
        return len(self.s_fit_sorted)


def trapezoid_split(M_hat, L: int, R: int) -> tuple[int, float]:
    """Interior position ``t`` of ``(L, R)`` minimizing
    ``|(M[L]-M[R])(L-R) - (M[L]-M[t])(L-t) - (M[t]-M[R])(t-R)|``.

    Ties go to the smallest ``t``. Raises ``ValueError`` when ``R < L + 2``.
    """
    return _kernels.trapezoid_scan(M_hat, int(L), int(R))


def trapezoid_estimate(M_hat, positions) -> float:
    """Sum over all positions of the piecewise-linear interpolant of
    ``M_hat`` through the selected positions."""
    M_hat = np.asarray(M_hat, dtype=np.float64)
    positions = np.sort(np.asarray(positions, dtype=np.int64))
    grid = np.arange(len(M_hat), dtype=np.float64)
    return float(np.interp(grid, positions, M_hat[positions]).sum())


class _Selector:
    def __init__(self, m: np.ndarray):
        self.m = m
        self.points = [0, len(m) - 1]
        self.heap: list[tuple[float, int, int, int]] = []
        self.live: set[tuple[int, int]] = set()

    def push(self, L, R, err=None):
        if R - L < 2:
            return
        t, scan_err = trapezoid_split(self.m, L, R)
        heapq.heappush(self.heap, (-(scan_err if err is None else err), L, R, t))
        self.live.add((L, R))

    def peek(self):
        while self.heap and (self.heap[0][1], self.heap[0][2]) not in self.live:
            heapq.heappop(self.heap)
        return self.heap[0] if self.heap else None

    def insert(self, t, L, R):
        self.live.discard((L, R))
        bisect.insort(self.points, t)
        self.push(L, t)
        self.push(t, R)

    def widest(self):
        best = None
        for L, R in zip(self.points[:-1], self.points[1:]):
            if R - L >= 2 and (best is None or R - L > best[1] - best[0]):
                best = (L, R)
        return best

    def bisect_widest(self) -> bool:
        iv = self.widest()
        if iv is None:
            return False
        L, R = iv
        self.insert((L + R) // 2, L, R)
        return True


def select_fit_points(approx: DiagApprox, max_pts: int,
                      rel_threshold: float = 0.001) -> FitSampleSet:
    """Pick ``max_pts`` fitting positions on the sorted approximation.

    The whole range ``(0, n-1)`` starts in the queue with error
    ``|sum(M) - (M_hat[0] + M_hat[n-1]) (n-1) / 2|``; that value also sets
    the switch threshold ``rel_threshold * initial_error``.
    """
    n = approx.n
    if n < 2:
        raise ValueError("need at least two diagonal entries")
    if max_pts < 2:
        raise ValueError(f"max_pts must be >= 2, got {max_pts}")
    if max_pts > n:
        warnings.warn(f"max_pts={max_pts} exceeds n={n}; clamped", stacklevel=2)
        max_pts = n
    m = np.ascontiguousarray(approx.M_sorted)
    init_err = abs(float(m.sum()) - (m[0] + m[-1]) * (n - 1) / 2.0)
    threshold = rel_threshold * init_err

    sel = _Selector(m)
    sel.push(0, n - 1, err=init_err)
    count = 2
    while count < max_pts:
        top = sel.peek()
        if top is None or -top[0] <= threshold:
            break
        heapq.heappop(sel.heap)
        _, L, R, t = top
        sel.insert(t, L, R)
        count += 1
        if count % MIDPOINT_EVERY == 0 and count < max_pts:
            if sel.bisect_widest():
                count += 1
    while count < max_pts and sel.bisect_widest():
        count += 1

    pos = np.array(sel.points, dtype=np.int64)
    queue = tuple(sorted((-e, L, R) for e, L, R, _ in sel.heap if (L, R) in sel.live))
    return FitSampleSet(pos, approx.J[pos], queue)


def grow_fit_points(prev: FitSampleSet, approx: DiagApprox, target: int,
                    rel_threshold: float = 0.001) -> FitSampleSet:
    """Extend ``prev`` to ``target`` indices under a possibly updated ``approx``.

    A fresh selection of size ``target`` is made for ``approx``. For every
    previous index the fresh position closest to it (in sorted position,
    ties to the smaller position) is discarded, exact matches first; the
    survivors are merged into ``prev``. All previous indices are kept.
    """
    if target <= len(prev):
        raise ValueError(f"target {target} must exceed current size {len(prev)}")
    fresh = select_fit_points(approx, target, rel_threshold)
    prev_pos = sorted(int(p) for p in approx.Jinv[prev.s_fit_original])
    remaining = [int(p) for p in fresh.s_fit_sorted]
    pending = []
    for p in prev_pos:
        k = bisect.bisect_left(remaining, p)
        if k < len(remaining) and remaining[k] == p:
            remaining.pop(k)
        else:
            pending.append(p)
    for p in pending:
        if not remaining:
            break
        k = bisect.bisect_left(remaining, p)
        cands = [c for c in (k - 1, k) if 0 <= c < len(remaining)]
        best = min(cands, key=lambda c: (abs(remaining[c] - p), remaining[c]))
        remaining.pop(best)
    pos = np.array(sorted(set(prev_pos) | set(remaining)), dtype=np.int64)
    return FitSampleSet(pos, approx.J[pos], fresh.queue_state)
