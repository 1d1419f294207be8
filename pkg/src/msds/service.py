"""HTTP front of the center (FastAPI). Sources talk to the center over the
binary protocol; clients talk to it here."""
from __future__ import annotations

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, model_validator

from .coordinator import Center, GlobalMcqc, GlobalTopK, Query
from .errors import MSDSError, PartialResultError
from .geometry import SpatialSet


class GridModel(BaseModel):
    origin_lon: float
    origin_lat: float
    width: float
    height: float
    theta: int


class SourceModel(BaseModel):
    source_id: str
    address: str
    grid: GridModel
    mbr_deg: tuple[float, float, float, float]
    pivot_deg: tuple[float, float]
    radius_deg: float
    dataset_count: int


class QueryRequest(BaseModel):
    """A query as cells on the advertised grid, or as raw (lat, lon) points."""

    k: int = Field(10, ge=1)
    cells: list[int] | None = None
    points: list[tuple[float, float]] | None = None

    @model_validator(mode="after")
    def _one_shape(self):
        if (self.cells is None) == (self.points is None):
            raise ValueError("give exactly one of cells or points")
        if not (self.cells or self.points):
            raise ValueError("query is empty")
        return self


class McqcRequest(QueryRequest):
    delta: float = Field(5.0, ge=0)


class LiveRequest(McqcRequest):
    mode: str = Field("miq", pattern="^(miq|mcqc)$")


class MiqEntry(BaseModel):
    source_id: str
    dataset_id: str
    score: int


class Traffic(BaseModel):
    bytes_tx: int
    bytes_rx: int


class MiqResponse(BaseModel):
    k: int
    entries: list[MiqEntry]
    candidates: list[str]
    traffic: dict[str, Traffic]


class McqcPick(BaseModel):
    dataset_id: str
    increment: int


class McqcResponse(BaseModel):
    source_id: str | None
    selected: list[McqcPick]
    total_coverage: int
    truncated: bool
    candidates: list[str]
    traffic: dict[str, Traffic]


def _traffic(t: dict) -> dict[str, Traffic]:
    return {sid: Traffic(bytes_tx=a, bytes_rx=b) for sid, (a, b) in t.items()}


def miq_response(r: GlobalTopK) -> MiqResponse:
    return MiqResponse(
        k=r.k,
        entries=[MiqEntry(source_id=s, dataset_id=d, score=v) for s, d, v in r.entries],
        candidates=r.candidates,
        traffic=_traffic(r.traffic),
    )


def mcqc_response(r: GlobalMcqc) -> McqcResponse:
    return McqcResponse(
        source_id=r.source_id,
        selected=[McqcPick(dataset_id=d, increment=g) for d, g in r.result.selected],
        total_coverage=r.result.total_coverage,
        truncated=r.result.truncated,
        candidates=r.candidates,
        traffic=_traffic(r.traffic),
    )


def create_app(center: Center) -> FastAPI:
    app = FastAPI(title="msds center")
    app.state.center = center

    def to_query(req: QueryRequest) -> Query:
        if req.points is not None:
            return Query(req.points)
        grid = center.grid
        if grid is None:
            raise HTTPException(409, "no sources registered")
        try:
            return Query.from_set(SpatialSet.from_cells("query", req.cells, grid))
        except MSDSError as exc:
            raise HTTPException(422, str(exc)) from exc

    def partial(exc: PartialResultError):
        body = {"detail": str(exc), "failed": exc.failed}
        if isinstance(exc.partial, GlobalTopK):
            body["partial"] = miq_response(exc.partial).model_dump()
        elif isinstance(exc.partial, GlobalMcqc):
            body["partial"] = mcqc_response(exc.partial).model_dump()
        return JSONResponse(status_code=502, content=body)

    @app.get("/health")
    def health():
        return {"status": "ok", "sources": len(center.sources)}

    @app.get("/grid", response_model=GridModel)
    def grid():
        g = center.grid
        if g is None:
            raise HTTPException(409, "no sources registered")
        return GridModel(origin_lon=g.origin_lon, origin_lat=g.origin_lat, width=g.width, height=g.height,
                         theta=g.theta)

    @app.get("/sources", response_model=list[SourceModel])
    def sources():
        out = []
        for sid, d in sorted(center.sources.items()):
            g = d.grid
            out.append(SourceModel(
                source_id=sid, address=d.address,
                grid=GridModel(origin_lon=g.origin_lon, origin_lat=g.origin_lat, width=g.width,
                               height=g.height, theta=g.theta),
                mbr_deg=d.mbr_deg, pivot_deg=d.pivot_deg, radius_deg=d.radius_deg, dataset_count=d.dataset_count,
            ))
        return out

    @app.post("/query/miq", response_model=MiqResponse)
    def query_miq(req: QueryRequest):
        try:
            return miq_response(center.global_miq(to_query(req), req.k))
        except PartialResultError as exc:
            return partial(exc)
        except MSDSError as exc:
            raise HTTPException(422, str(exc)) from exc

    @app.post("/query/mcqc", response_model=McqcResponse)
    def query_mcqc(req: McqcRequest):
        try:
            return mcqc_response(center.global_mcqc(to_query(req), req.delta, req.k))
        except PartialResultError as exc:
            return partial(exc)
        except MSDSError as exc:
            raise HTTPException(422, str(exc)) from exc

    @app.post("/live")
    def live(req: LiveRequest):
        try:
            return {"live_id": center.register_live(to_query(req), req.mode, req.k, req.delta)}
        except PartialResultError as exc:
            return partial(exc)
        except MSDSError as exc:
            raise HTTPException(422, str(exc)) from exc

    @app.get("/live/{live_id}")
    def live_result(live_id: int):
        try:
            r = center.live_result(live_id)
        except KeyError:
            raise HTTPException(404, f"no live query {live_id}") from None
        return miq_response(r) if isinstance(r, GlobalTopK) else mcqc_response(r)

    @app.get("/meter")
    def meter():
        return {"total": center.comm_report(), "per_source": {
            sid: {"bytes_tx": tx, "bytes_rx": rx} for sid, (tx, rx) in center.source_bytes().items()
        }}

    return app
