"""Command line entry points.

Exit codes: 0 ok, 1 usage or input error, 2 partial result (a source
failed), 3 no candidate source, 4 oracle mismatch.
"""
from __future__ import annotations

import logging
import os
import sys
import time
from pathlib import Path

import click

EXIT_PARTIAL = 2
EXIT_NO_CANDIDATE = 3
EXIT_MISMATCH = 4


def _setup_logging() -> None:
    level = os.environ.get("MSDS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _extent(text: str | None):
    if not text:
        return None
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 4:
        raise click.BadParameter("extent is origin_lon,origin_lat,width,height")
    return vals


def _fail(msg: str, code: int = 1):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


@click.group()
@click.version_option(package_name="msds")
def main():
    """Multi-source spatial dataset search."""
    _setup_logging()


@main.command("build-index")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(file_okay=False))
@click.option("--theta", default=12, show_default=True, type=int)
@click.option("--capacity", "f", default=10, show_default=True, type=int, help="leaf capacity f")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--source", "source_id", default=None, help="only the datasets the manifest assigns to this source")
@click.option("--extent", default=None, help="grid origin_lon,origin_lat,width,height (default: whole globe)")
def build_index(corpus_dir, theta, f, out, source_id, extent):
    """Rasterize a corpus directory and write an IBtree snapshot."""
    from .corpus import CorpusManifest, world_grid
    from .errors import MSDSError
    from .geometry import GridConfig
    from .ibtree import IBtree

    try:
        ext = _extent(extent)
        grid = GridConfig(*ext, theta) if ext else world_grid(theta)
        sets = CorpusManifest.scan(corpus_dir).load(grid, source_id)
        t0 = time.perf_counter()
        tree = IBtree.build(sets, f)
        ms = (time.perf_counter() - t0) * 1000
        Path(out).write_bytes(tree.serialize())
    except (MSDSError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"datasets={len(tree)} leaves={len(tree.leaves())} depth={tree.depth()} build_ms={ms:.1f}")


@main.command("build-graph")
@click.option("--index", "index_path", required=True, type=click.Path(dir_okay=False))
@click.option("--delta", default=5.0, show_default=True, type=float)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def build_graph_cmd(index_path, delta, out):
    """Build the dataset graph for one delta from an index snapshot."""
    from .errors import MSDSError
    from .graph import build_graph, save_graph
    from .ibtree import IBtree

    try:
        tree = IBtree.deserialize(Path(index_path).read_bytes())
        t0 = time.perf_counter()
        g = build_graph(tree, delta)
        ms = (time.perf_counter() - t0) * 1000
        Path(out).write_bytes(save_graph(g))
    except (MSDSError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"nodes={len(g)} edges={g.edge_count()} build_ms={ms:.1f}")


@main.command("serve-source")
@click.option("--index", "index_path", required=True, type=click.Path(dir_okay=False))
@click.option("--graph", "graph_paths", multiple=True, type=click.Path(dir_okay=False))
@click.option("--listen", default="127.0.0.1:7001", show_default=True)
@click.option("--id", "source_id", default=None, help="source id (default: index file stem)")
def serve_source(index_path, graph_paths, listen, source_id):
    """Serve one source over the binary protocol."""
    from .errors import MSDSError
    from .graph import load_graph
    from .ibtree import IBtree
    from .source import DataSource
    from .transport import SourceServer, parse_address

    try:
        tree = IBtree.deserialize(Path(index_path).read_bytes())
        graphs = [load_graph(Path(p).read_bytes(), tree) for p in graph_paths]
        host, port = parse_address(listen)
        source = DataSource(source_id or Path(index_path).stem, tree, graphs, address=listen)
        server = SourceServer(source, host, port)
    except (MSDSError, OSError, ValueError) as exc:
        _fail(str(exc))
    click.echo(f"source {source.source_id} listening on {server.address} ({len(tree)} datasets)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass


def _connect_all(center, addresses, wait: float):
    from .transport import TCPLink

    for addr in addresses:
        deadline = time.monotonic() + wait
        while True:
            try:
                desc = center.connect(TCPLink(addr))
                click.echo(f"registered {desc.source_id} at {addr}")
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise
                time.sleep(0.2)


@main.command("run-center")
@click.option("--sources", default="", help="comma-separated host:port list of sources")
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False),
              help="read source addresses from a run config")
@click.option("--listen", default="127.0.0.1:8000", show_default=True)
@click.option("--wait", default=10.0, show_default=True, help="seconds to keep retrying each source")
def run_center(sources, config_path, listen, wait):
    """Register the sources and serve the query API over HTTP."""
    import uvicorn

    from .config import RunConfig
    from .coordinator import Center
    from .errors import MSDSError
    from .service import create_app
    from .transport import parse_address

    addresses = [a.strip() for a in sources.split(",") if a.strip()]
    if config_path:
        addresses += list(RunConfig.load(config_path).sources)
    if not addresses:
        _fail("no sources given")
    center = Center()
    try:
        _connect_all(center, addresses, wait)
        host, port = parse_address(listen)
    except (MSDSError, OSError, ValueError) as exc:
        center.close()
        _fail(f"registration failed: {exc}")
    uvicorn.run(create_app(center), host=host, port=port, log_level=os.environ.get("MSDS_LOG", "warning").lower())


@main.command("query")
@click.option("--center", "center_addr", default="127.0.0.1:8000", show_default=True)
@click.option("--mode", type=click.Choice(["miq", "mcqc"]), default="miq", show_default=True)
@click.option("--query", "query_path", required=True, type=click.Path(dir_okay=False))
@click.option("--k", default=10, show_default=True, type=int)
@click.option("--delta", default=5.0, show_default=True, type=float)
@click.option("--timeout", default=60.0, show_default=True)
def query_cmd(center_addr, mode, query_path, k, delta, timeout):
    """Run one global query against a running center."""
    import httpx

    from .corpus import read_points
    from .errors import MSDSError
    from .geometry import GridConfig, in_extent, rasterize

    base = center_addr if center_addr.startswith("http") else f"http://{center_addr}"
    try:
        points = read_points(query_path)
    except (MSDSError, OSError) as exc:
        _fail(str(exc))
    if not points:
        _fail(f"{query_path}: no points")
    with httpx.Client(base_url=base, timeout=timeout) as client:
        try:
            g = client.get("/grid")
            g.raise_for_status()
            grid = GridConfig(**g.json())
            inside = [p for p in points if in_extent(p[0], p[1], grid)]
            if not inside:
                click.echo("no candidate sources: query lies outside the center's grid")
                sys.exit(EXIT_NO_CANDIDATE)
            cells = rasterize(inside, grid, "query").cell_list()
            body = {"k": k, "cells": cells}
            if mode == "mcqc":
                body["delta"] = delta
            resp = client.post(f"/query/{mode}", json=body)
        except httpx.HTTPError as exc:
            _fail(f"center unreachable: {exc}")
    data = resp.json()
    if resp.status_code == 502:
        click.echo(f"partial result: failed sources {', '.join(sorted(data['failed']))}", err=True)
        for sid, why in sorted(data["failed"].items()):
            click.echo(f"  {sid}: {why}", err=True)
        sys.exit(EXIT_PARTIAL)
    if resp.status_code != 200:
        _fail(f"center answered {resp.status_code}: {data.get('detail')}")
    if not data["candidates"]:
        click.echo("no candidate sources")
        sys.exit(EXIT_NO_CANDIDATE)
    if mode == "miq":
        for rank, e in enumerate(data["entries"], 1):
            click.echo(f"{rank}\t{e['source_id']}\t{e['dataset_id']}\t{e['score']}")
    else:
        click.echo(f"source={data['source_id']} coverage={data['total_coverage']} truncated={data['truncated']}")
        for rank, e in enumerate(data["selected"], 1):
            click.echo(f"{rank}\t{e['dataset_id']}\t+{e['increment']}")
    for sid, t in sorted(data["traffic"].items()):
        click.echo(f"bytes {sid} tx={t['bytes_tx']} rx={t['bytes_rx']}")


@main.command("bench")
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def bench_cmd(config_path, out):
    """Sweep one parameter and write a CSV row per value (and mode)."""
    from .config import RunConfig
    from .errors import MSDSError
    from .workload import bench, write_csv

    try:
        cfg = RunConfig.load(config_path) if config_path else RunConfig()
        rows = bench(cfg)
    except (MSDSError, OSError, ValueError) as exc:
        _fail(str(exc))
    write_csv(rows, out)
    for r in rows:
        click.echo(" ".join(f"{k}={v}" for k, v in r.items()))


@main.command("gen-corpus")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--datasets", default=100, show_default=True, type=int)
@click.option("--sources", "n_sources", default=5, show_default=True, type=int)
@click.option("--queries", default=5, show_default=True, type=int)
@click.option("--seed", default=7, show_default=True, type=int)
def gen_corpus(out_dir, datasets, n_sources, queries, seed):
    """Write a synthetic corpus (one lat,lon file per dataset, plus a manifest and query files)."""
    from .corpus import MANIFEST, write_points
    from .workload import make_workload

    if datasets < n_sources or n_sources < 1:
        _fail("need at least one dataset per source")
    wl = make_workload(seed, n_sources, datasets, queries, 0)
    root = Path(out_dir)
    (root / "queries").mkdir(parents=True, exist_ok=True)
    lines = []
    for sid in wl.source_ids:
        for did, pts in sorted(wl.datasets[sid].items()):
            write_points(root / f"{did}.csv", pts)
            lines.append(f"{sid},{did}")
    (root / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    for i, q in enumerate(wl.queries):
        write_points(root / "queries" / f"q{i}.csv", q)
    click.echo(f"wrote {datasets} datasets over {n_sources} sources and {queries} queries to {root}")


@main.command("oracle-check")
@click.option("--corpus", "corpus_dir", default=None, type=click.Path(file_okay=False),
              help="draw instances from this corpus instead of synthetic data")
@click.option("--instances", default=100, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--theta", default=10, show_default=True, type=int, help="resolution for --corpus")
@click.option("--report", default=None, type=click.Path(dir_okay=False), help="also write the report here")
def oracle_check(corpus_dir, instances, seed, theta, report):
    """Check the indexed algorithms against the brute-force oracles."""
    from .checks import dump_json, run_suite
    from .corpus import CorpusManifest, world_grid
    from .errors import MSDSError

    if instances < 0:
        _fail("--instances must be >= 0")
    try:
        pool = CorpusManifest.scan(corpus_dir).load(world_grid(theta)) if corpus_dir else None
    except (MSDSError, OSError) as exc:
        _fail(str(exc))
    result = run_suite(instances, seed, pool)
    click.echo(result.text(), nl=False)
    if report:
        Path(report).write_text(result.text(), encoding="utf-8")
    if not result.ok:
        for dump in result.mismatches:
            click.echo(dump_json(dump), err=True)
        sys.exit(EXIT_MISMATCH)


if __name__ == "__main__":  # pragma: no cover
    main()
