"""Seeded agreement checks between the indexed algorithms and the oracles."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np

from .geometry import SpatialSet
from .graph import build_graph
from .ibtree import IBtree
from .mcqc import gadg, gasm
from .miq import search
from .oracle import (
    MCQC_GUARD,
    OracleReport,
    brute_mcqc,
    brute_miq,
    hash_miq,
    instance_fingerprint,
    random_corpus,
    random_query,
    standard_greedy,
    unit_grid,
)


@dataclass
class SuiteResult:
    lines: list[str] = field(default_factory=list)
    reports: list[OracleReport] = field(default_factory=list)
    mismatches: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def text(self) -> str:
        return "\n".join(self.lines) + ("\n" if self.lines else "")


def _dump(sets: Sequence[SpatialSet], query: SpatialSet, **params) -> dict:
    return {
        "params": params,
        "grid": list(map(float, (query.grid.origin_lon, query.grid.origin_lat, query.grid.width, query.grid.height)))
        + [query.grid.theta],
        "query": query.cell_list(),
        "sets": {s.dataset_id: s.cell_list() for s in sets},
    }


def _instance(rng: np.random.Generator, pool: Sequence[SpatialSet] | None):
    if pool:
        m = int(rng.integers(1, min(40, len(pool)) + 1))
        idx = sorted(rng.choice(len(pool), size=m, replace=False).tolist())
        sets = [pool[i] for i in idx]
        grid = sets[0].grid
    else:
        theta = int(rng.integers(5, 9))
        grid = unit_grid(theta)
        kind = ("clustered", "uniform", "corridor", "mixed")[int(rng.integers(0, 4))]
        sets = random_corpus(rng, grid, int(rng.integers(1, 40)), kind=kind, max_cells=40)
    query = random_query(rng, sets, grid, max_cells=40)
    return sets, query


def run_suite(instances: int, seed: int, pool: Sequence[SpatialSet] | None = None) -> SuiteResult:
    """Three-way MIQ and MCQC agreement on ``instances`` seeded instances.

    With ``pool`` the instances are random subsets of those datasets;
    otherwise they are synthetic. Small instances also get the exhaustive
    MCQC optimum and the greedy/optimal ratio.
    """
    out = SuiteResult()
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        sets, query = _instance(rng, pool)
        k = int(rng.choice([1, 3, 5, 10]))
        delta = float(rng.choice([0, 1, 3, 8]))
        f = int(rng.choice([2, 4, 10]))
        fp = instance_fingerprint(sets, query, k, delta, f)
        tree = IBtree.build(sets, f)

        mine = search(tree, query, k)
        ref = brute_miq(sets, query, k)
        alt = hash_miq(sets, query, k)
        miq_ok = mine.entries == ref.entries == alt.entries
        out.reports.append(OracleReport(fp, "miq", ref.entries, mine.entries, miq_ok))

        a = gasm(tree, query, delta, k)
        b = gadg(tree, build_graph(tree, delta), query, delta, k)
        c = standard_greedy(sets, query, delta, k)
        mcqc_ok = a == b == c
        ratio = None
        kk = min(k, 3)
        if len(sets) <= 14 and sum(comb(len(sets), j) for j in range(kk + 1)) <= MCQC_GUARD:
            opt, _ = brute_mcqc(sets, query, delta, kk)
            greedy = gasm(tree, query, delta, kk).total_coverage
            ratio = greedy / opt if opt else None
        out.reports.append(OracleReport(fp, "mcqc", c.selected, a.selected, mcqc_ok, ratio))

        r = "-" if ratio is None else f"{ratio:.4f}"
        out.lines.append(
            f"instance={i} fp={fp} m={len(sets)} k={k} delta={delta:g} f={f} "
            f"miq={'ok' if miq_ok else 'MISMATCH'} mcqc={'ok' if mcqc_ok else 'MISMATCH'} ratio={r}"
        )
        if not (miq_ok and mcqc_ok):
            dump = _dump(sets, query, instance=i, seed=seed, k=k, delta=delta, f=f)
            dump["miq"] = {"search": mine.entries, "brute": ref.entries, "hash": alt.entries}
            dump["mcqc"] = {"gasm": a.selected, "gadg": b.selected, "standard_greedy": c.selected}
            out.mismatches.append(dump)
    ratios = [r.ratio for r in out.reports if r.ratio is not None]
    summary = f"instances={instances} mismatches={len(out.mismatches)}"
    if ratios:
        summary += f" ratio_min={min(ratios):.4f} ratio_mean={sum(ratios) / len(ratios):.4f}"
    out.lines.append(summary)
    return out


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=list)
