"""Reading point datasets from disk.

A corpus is a directory with one file per dataset. Each line holds a
``lat,lon`` record; a non-numeric first line is treated as a header and
blank lines and ``#`` comments are skipped. The dataset id is the file stem.
An optional ``manifest.txt`` assigns datasets to sources, one
``source_id,dataset_id`` pair per line.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError, InvalidParameterError
from .geometry import GridConfig, SpatialSet, rasterize

MANIFEST = "manifest.txt"
SUFFIXES = {".csv", ".txt", ".pts"}

WORLD = GridConfig(-180.0, -90.0, 360.0, 180.0, 12)


def world_grid(theta: int) -> GridConfig:
    return GridConfig(WORLD.origin_lon, WORLD.origin_lat, WORLD.width, WORLD.height, theta)


def read_points(path: str | Path) -> list[tuple[float, float]]:
    """Parse one ``lat,lon`` file; errors name the file and the line."""
    path = Path(path)
    pts = []
    seen_content = False
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            first, seen_content = not seen_content, True
            parts = [p.strip() for p in text.split(",")]
            try:
                if len(parts) != 2:
                    raise ValueError
                lat, lon = float(parts[0]), float(parts[1])
            except ValueError:
                if first:
                    continue  # header
                raise FormatError(f"{path}:{lineno}: expected 'lat,lon', got {text!r}") from None
            if not (math.isfinite(lat) and math.isfinite(lon)) or abs(lat) > 90 or abs(lon) > 180:
                raise FormatError(f"{path}:{lineno}: coordinates out of range: {text!r}")
            pts.append((lat, lon))
    return pts


@dataclass
class CorpusManifest:
    root: Path
    files: dict[str, Path] = field(default_factory=dict)
    assignment: dict[str, list[str]] = field(default_factory=dict)  # source_id -> dataset ids

    @classmethod
    def scan(cls, root: str | Path) -> "CorpusManifest":
        root = Path(root)
        if not root.is_dir():
            raise InvalidParameterError(f"corpus directory {root} does not exist")
        m = cls(root)
        for p in sorted(root.iterdir()):
            if p.is_file() and p.suffix.lower() in SUFFIXES and p.name != MANIFEST:
                if p.stem in m.files:
                    raise FormatError(f"duplicate dataset id {p.stem!r} in {root}")
                m.files[p.stem] = p
        if not m.files:
            raise InvalidParameterError(f"corpus directory {root} holds no dataset files")
        man = root / MANIFEST
        if man.exists():
            for lineno, line in enumerate(man.read_text(encoding="utf-8").splitlines(), 1):
                text = line.strip()
                if not text or text.startswith("#"):
                    continue
                sid, sep, did = (t.strip() for t in text.partition(","))
                if not sep or did not in m.files:
                    raise FormatError(f"{man}:{lineno}: bad manifest entry {text!r}")
                m.assignment.setdefault(sid, []).append(did)
        return m

    def dataset_ids(self, source_id: str | None = None) -> list[str]:
        if source_id is None:
            return sorted(self.files)
        if source_id not in self.assignment:
            raise InvalidParameterError(f"source {source_id!r} is not in the manifest")
        return sorted(self.assignment[source_id])

    def load(self, grid: GridConfig, source_id: str | None = None) -> list[SpatialSet]:
        out = []
        for did in self.dataset_ids(source_id):
            pts = read_points(self.files[did])
            if not pts:
                raise FormatError(f"{self.files[did]}: no points")
            out.append(rasterize(pts, grid, did))
        return out


def write_points(path: str | Path, points) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("lat,lon\n")
        for lat, lon in points:
            fh.write(f"{lat:.8f},{lon:.8f}\n")
