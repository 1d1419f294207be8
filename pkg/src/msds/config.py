"""Run configuration in a plain ``key = value`` file.

Blank lines and ``#`` comments are ignored. Defaults are the standard
experiment settings (k=10, n=10, theta=12, delta=5, f=10).
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import InvalidParameterError

SWEEPABLE = ("k", "n", "theta", "delta", "f", "beta")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class RunConfig:
    theta: int = 12
    delta: float = 5.0
    f: int = 10
    k: int = 10
    n: int = 10
    beta: int = 100  # number of dataset updates in the script
    batch: int = 10  # updates delivered per batch; static mode re-queries after each batch
    mode: str = "static"  # static | dynamic | both
    query: str = "miq"  # miq | mcqc
    seed: int = 7
    sources: tuple[str, ...] = ()  # TCP addresses; empty means synthetic in-process sources
    n_sources: int = 5
    datasets: int = 500  # synthetic corpus size over all sources
    transport: str = "inproc"  # inproc | tcp (synthetic sources served on loopback)
    reps: int = 5
    sweep: str = "k"
    values: tuple[float, ...] = field(default=(10, 20, 30, 40, 50))

    def __post_init__(self):
        checks = [
            (1 <= self.theta <= 15, "theta must be in 1..15"),
            (self.delta >= 0, "delta must be non-negative"),
            (self.f >= 1, "f must be >= 1"),
            (self.k >= 1, "k must be >= 1"),
            (self.n >= 1, "n must be >= 1"),
            (self.beta >= 0, "beta must be >= 0"),
            (self.batch >= 1, "batch must be >= 1"),
            (self.mode in ("static", "dynamic", "both"), "mode must be static, dynamic or both"),
            (self.query in ("miq", "mcqc"), "query must be miq or mcqc"),
            (self.n_sources >= 1, "n_sources must be >= 1"),
            (self.datasets >= self.n_sources, "need at least one dataset per source"),
            (self.transport in ("inproc", "tcp"), "transport must be inproc or tcp"),
            (self.reps >= 1, "reps must be >= 1"),
            (self.sweep in SWEEPABLE, f"sweep must be one of {', '.join(SWEEPABLE)}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidParameterError(msg)

    def with_param(self, name: str, value) -> "RunConfig":
        kind = {f.name: f.type for f in fields(self)}[name]
        return replace(self, **{name: float(value) if kind == "float" else int(value)})

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (t.strip() for t in line.partition("="))
            if not sep or key not in types:
                raise InvalidParameterError(f"config line {lineno}: unknown or malformed entry {line!r}")
            t = types[key]
            try:
                if t == "int":
                    kw[key] = int(value)
                elif t == "float":
                    kw[key] = float(value)
                elif key == "sources":
                    kw[key] = tuple(v.strip() for v in value.split(",") if v.strip())
                elif key == "values":
                    kw[key] = _floats(value)
                else:
                    kw[key] = value
            except ValueError:
                raise InvalidParameterError(f"config line {lineno}: bad value for {key}: {value!r}") from None
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def dump(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(_fmt(x) for x in v)
            out.append(f"{f.name} = {_fmt(v)}")
        return "\n".join(out) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)
