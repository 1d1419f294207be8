"""Brute-force reference answers and seeded instance generators.

Nothing here goes through the index or the geometry primitives used by the
indexed paths: cell ids are decoded bit by bit, intersections use Python
sets, and distances are exhaustive over all cell pairs. That keeps these
functions usable as independent oracles.
"""
from __future__ import annotations

import hashlib
import itertools
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import GuardExceededError
from .geometry import GridConfig, SpatialSet, zorder_encode
from .mcqc import McqcResult
from .miq import TopKResults

MIQ_GUARD = 100_000
MCQC_GUARD = 1_000_000


def decode_cell(z: int) -> tuple[int, int]:
    col = row = 0
    bit = 0
    while z:
        col |= (z & 1) << bit
        row |= ((z >> 1) & 1) << bit
        z >>= 2
        bit += 1
    return col, row


def encode_cell(col: int, row: int) -> int:
    z = 0
    for bit in range(16):
        z |= ((col >> bit) & 1) << (2 * bit)
        z |= ((row >> bit) & 1) << (2 * bit + 1)
    return z


class _Plain:
    """A spatial set seen only as Python ints."""

    __slots__ = ("id", "cells", "_coords")

    def __init__(self, s: SpatialSet):
        self.id = s.dataset_id
        self.cells = frozenset(int(c) for c in s.cells.tolist())
        self._coords = None

    @property
    def coords(self) -> np.ndarray:
        if self._coords is None:
            self._coords = np.array([decode_cell(c) for c in sorted(self.cells)], dtype=np.int64)
        return self._coords


def pair_sq_distance(a: _Plain, b: _Plain) -> int:
    if a.cells & b.cells:
        return 0
    ca, cb = a.coords, b.coords
    best = None
    for start in range(0, len(ca), 256):
        blk = ca[start:start + 256]
        d = ((blk[:, None, :] - cb[None, :, :]) ** 2).sum(axis=2).min()
        best = d if best is None else min(best, d)
    return int(best)


def brute_distance(a: SpatialSet, b: SpatialSet) -> float:
    return math.sqrt(pair_sq_distance(_Plain(a), _Plain(b)))


def _connected(a: _Plain, b: _Plain, delta: float) -> bool:
    return math.sqrt(pair_sq_distance(a, b)) <= delta


def _canonical(scores: dict[str, int], k: int) -> list[tuple[str, int]]:
    ordered = sorted(((d, s) for d, s in scores.items() if s > 0), key=lambda e: (-e[1], e[0]))
    return ordered[:k]


def brute_miq(sets: Sequence[SpatialSet], query: SpatialSet, k: int) -> TopKResults:
    """Exact top-k by a sorted two-pointer merge per dataset."""
    if len(sets) > MIQ_GUARD:
        raise GuardExceededError(f"{len(sets)} datasets exceeds the {MIQ_GUARD} scan guard")
    q = sorted(int(c) for c in query.cells.tolist())
    scores = {}
    for s in sets:
        d = sorted(int(c) for c in s.cells.tolist())
        i = j = n = 0
        while i < len(q) and j < len(d):
            if q[i] == d[j]:
                n += 1
                i += 1
                j += 1
            elif q[i] < d[j]:
                i += 1
            else:
                j += 1
        scores[s.dataset_id] = n
    return TopKResults(k, _canonical(scores, k))


def hash_miq(sets: Sequence[SpatialSet], query: SpatialSet, k: int) -> TopKResults:
    """Second exact top-k, via hash-set intersection."""
    q = set(query.cells.tolist())
    scores = {s.dataset_id: len(q.intersection(s.cells.tolist())) for s in sets}
    return TopKResults(k, _canonical(scores, k))


def brute_mcqc(
    sets: Sequence[SpatialSet], query: SpatialSet, delta: float, k: int
) -> tuple[int, tuple[str, ...]]:
    """Optimal coverage over every connected selection of at most k datasets.

    Returns the optimum and the lexicographically smallest optimal id tuple.
    """
    m = len(sets)
    total = sum(comb(m, i) for i in range(0, min(k, m) + 1))
    if total > MCQC_GUARD:
        raise GuardExceededError(f"{total} subsets exceeds the {MCQC_GUARD} enumeration guard")
    plain = sorted((_Plain(s) for s in sets), key=lambda p: p.id)
    qp = _Plain(query)
    q_link = [_connected(p, qp, delta) for p in plain]
    link = [[False] * m for _ in range(m)]
    for i in range(m):
        for j in range(i + 1, m):
            link[i][j] = link[j][i] = _connected(plain[i], plain[j], delta)

    best_cov = len(qp.cells)
    best_pick: tuple[str, ...] = ()
    for size in range(1, min(k, m) + 1):
        for combo in itertools.combinations(range(m), size):
            # the query plus the combo must form one component
            seen = {i for i in combo if q_link[i]}
            frontier = list(seen)
            while frontier:
                i = frontier.pop()
                for j in combo:
                    if j not in seen and link[i][j]:
                        seen.add(j)
                        frontier.append(j)
            if len(seen) != size:
                continue
            cov = len(qp.cells.union(*(plain[i].cells for i in combo)))
            pick = tuple(plain[i].id for i in combo)
            if cov > best_cov or (cov == best_cov and pick < best_pick):
                best_cov, best_pick = cov, pick
    return best_cov, best_pick


def standard_greedy(sets: Sequence[SpatialSet], query: SpatialSet, delta: float, k: int) -> McqcResult:
    """Index-free greedy: every round scans all datasets for the best connected gain."""
    plain = [_Plain(s) for s in sets]
    members = [_Plain(query)]
    covered = set(members[0].cells)
    out = McqcResult()
    chosen: set[str] = set()
    while len(chosen) < k:
        best = None
        best_g = -1
        for p in plain:
            if p.id in chosen:
                continue
            if not any(_connected(p, mem, delta) for mem in members):
                continue
            g = len(p.cells - covered)
            if g > best_g or (g == best_g and p.id < best.id):
                best, best_g = p, g
        if best is None:
            out.truncated = True
            break
        chosen.add(best.id)
        members.append(best)
        covered |= best.cells
        out.selected.append((best.id, best_g))
    out.total_coverage = len(covered)
    return out


def greedy_premise_log(
    sets: Sequence[SpatialSet], query: SpatialSet, delta: float, picks: Sequence[str], optimal: Sequence[str]
) -> list[bool]:
    """Per greedy round i: is the union covered before round i within ``delta`` of some
    optimal set whose fresh gain is at least the optimal sets' average fresh gain?"""
    by_id = {s.dataset_id: _Plain(s) for s in sets}
    opt = [by_id[d] for d in optimal]
    members = [_Plain(query)]
    covered = set(members[0].cells)
    log = []
    for d in picks:
        if not opt:
            log.append(False)
        else:
            gains = [len(o.cells - covered) for o in opt]
            avg = sum(gains) / len(opt)
            log.append(any(
                gains[i] >= avg and any(_connected(o, mem, delta) for mem in members)
                for i, o in enumerate(opt)
            ))
        members.append(by_id[d])
        covered |= by_id[d].cells
    return log


@dataclass
class OracleReport:
    fingerprint: str
    kind: str
    oracle_answer: object
    system_answer: object
    match: bool
    ratio: float | None = None
    notes: dict = field(default_factory=dict)


def instance_fingerprint(sets: Sequence[SpatialSet], query: SpatialSet, *params) -> str:
    h = hashlib.sha256()
    for s in sorted(sets, key=lambda s: s.dataset_id):
        h.update(s.dataset_id.encode())
        h.update(s.cells.tobytes())
    h.update(query.cells.tobytes())
    h.update(repr(params).encode())
    return h.hexdigest()[:16]


# --- instance generators ----------------------------------------------------------


def unit_grid(theta: int) -> GridConfig:
    """Grid whose cells are 1x1 degree squares anchored at the origin."""
    side = 1 << theta
    return GridConfig(0.0, 0.0, float(side), float(side), theta)


def _clip_cells(cols, rows, side) -> np.ndarray:
    cols = np.clip(np.asarray(cols, dtype=np.int64), 0, side - 1)
    rows = np.clip(np.asarray(rows, dtype=np.int64), 0, side - 1)
    return zorder_encode(cols, rows)


def gen_cluster_set(rng: np.random.Generator, center, spread: float, n: int, side: int) -> np.ndarray:
    pts = rng.normal(loc=center, scale=max(spread, 0.5), size=(n, 2))
    return _clip_cells(np.floor(pts[:, 0]), np.floor(pts[:, 1]), side)


def gen_uniform_set(rng: np.random.Generator, window, n: int, side: int) -> np.ndarray:
    x0, y0, x1, y1 = window
    return _clip_cells(rng.integers(x0, x1 + 1, size=n), rng.integers(y0, y1 + 1, size=n), side)


def gen_corridor_set(rng: np.random.Generator, start, n: int, side: int, wobble: float = 0.0) -> np.ndarray:
    """A polyline of cells walking from ``start`` in a few straight legs (transit-line-like)."""
    x, y = float(start[0]), float(start[1])
    cols, rows = [], []
    steps_left = n
    while steps_left > 0:
        ang = rng.uniform(0, 2 * math.pi)
        leg = int(rng.integers(3, max(4, n // 2 + 1)))
        dx, dy = math.cos(ang), math.sin(ang)
        for _ in range(min(leg, steps_left)):
            x = min(max(x + dx, 0), side - 1)
            y = min(max(y + dy, 0), side - 1)
            cols.append(math.floor(x + rng.normal(0, wobble)) if wobble else math.floor(x))
            rows.append(math.floor(y + rng.normal(0, wobble)) if wobble else math.floor(y))
        steps_left -= leg
    return _clip_cells(cols, rows, side)


def random_corpus(
    rng: np.random.Generator,
    grid: GridConfig,
    m: int,
    *,
    kind: str = "mixed",
    max_cells: int = 60,
    region=None,
    n_clusters: int | None = None,
    prefix: str = "d",
) -> list[SpatialSet]:
    """Seeded synthetic corpus.

    ``kind`` is one of ``clustered``, ``uniform``, ``corridor`` or ``mixed``.
    ``region`` restricts generation to a (min_col, min_row, max_col, max_row)
    window of the grid.
    """
    side = grid.side
    x0, y0, x1, y1 = region or (0, 0, side - 1, side - 1)
    w, h = x1 - x0 + 1, y1 - y0 + 1
    n_clusters = n_clusters or max(1, min(8, m // 4 + 1))
    centers = np.column_stack((rng.uniform(x0, x1 + 1, n_clusters), rng.uniform(y0, y1 + 1, n_clusters)))
    spread = max(1.0, min(w, h) / 16)
    out = []
    width = len(str(max(m - 1, 0)))
    for i in range(m):
        k = kind if kind != "mixed" else ("clustered", "uniform", "corridor")[int(rng.integers(0, 3))]
        n = int(rng.integers(1, max_cells + 1))
        if k == "clustered":
            c = centers[int(rng.integers(0, n_clusters))] + rng.normal(0, spread, 2)
            cells = gen_cluster_set(rng, c, spread * rng.uniform(0.3, 1.5), n, side)
        elif k == "uniform":
            cx = int(rng.integers(x0, x1 + 1))
            cy = int(rng.integers(y0, y1 + 1))
            r = int(max(1, rng.integers(1, max(2, int(spread * 3)))))
            cells = gen_uniform_set(rng, (max(x0, cx - r), max(y0, cy - r), min(x1, cx + r), min(y1, cy + r)), n, side)
        elif k == "corridor":
            c = centers[int(rng.integers(0, n_clusters))] + rng.normal(0, spread * 2, 2)
            cells = gen_corridor_set(rng, np.clip(c, (x0, y0), (x1, y1)), n, side)
        else:
            raise ValueError(f"unknown corpus kind {kind!r}")
        # keep everything inside the requested window
        cols, rows = decode_many(cells)
        keep = (cols >= x0) & (cols <= x1) & (rows >= y0) & (rows <= y1)
        cells = cells[keep] if keep.any() else _clip_cells([x0], [y0], side)
        out.append(SpatialSet.from_cells(f"{prefix}{i:0{width}d}", cells.tolist(), grid))
    return out


def decode_many(cells) -> tuple[np.ndarray, np.ndarray]:
    pairs = np.array([decode_cell(int(c)) for c in np.asarray(cells).tolist()], dtype=np.int64).reshape(-1, 2)
    return pairs[:, 0], pairs[:, 1]


def random_query(rng: np.random.Generator, corpus: Sequence[SpatialSet], grid: GridConfig, *, max_cells: int = 60,
                 region=None) -> SpatialSet:
    """A query that usually overlaps the corpus: a perturbed copy of a random dataset."""
    side = grid.side
    if corpus and rng.random() < 0.8:
        base = corpus[int(rng.integers(0, len(corpus)))]
        cols, rows = decode_many(base.cells)
        keep = rng.random(cols.size) < rng.uniform(0.3, 1.0)
        extra = int(rng.integers(0, max_cells // 2 + 1))
        ec = rng.integers(max(0, cols.min() - 3), min(side - 1, cols.max() + 3) + 1, size=extra)
        er = rng.integers(max(0, rows.min() - 3), min(side - 1, rows.max() + 3) + 1, size=extra)
        c = np.concatenate((cols[keep], ec))
        r = np.concatenate((rows[keep], er))
        if c.size == 0:
            c, r = cols[:1], rows[:1]
        cells = _clip_cells(c, r, side)[:max(max_cells, 1)]
    else:
        x0, y0, x1, y1 = region or (0, 0, side - 1, side - 1)
        cells = gen_uniform_set(rng, (x0, y0, x1, y1), int(rng.integers(1, max_cells + 1)), side)
    return SpatialSet.from_cells("query", cells.tolist(), grid)
