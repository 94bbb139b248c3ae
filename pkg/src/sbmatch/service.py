"""HTTP service exposing experiment runs, comparisons and invariant checks.

All heavy lifting lives in the core package; this module only maps pydantic
request/response models onto it. Experiments run synchronously (they are
desk-scale) and write their artifacts on the service host.
"""

from __future__ import annotations

from typing import Literal, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .config import parse_config_text, validate_config
from .errors import ConfigError, NumericalError
from .experiments import compare_tables, run_experiment
from .suite import run_suite

app = FastAPI(title="sbmatch service", version=__version__)


class HealthResponse(BaseModel):
    status: str
    version: str


class RunRequest(BaseModel):
    config_toml: Optional[str] = None
    config: Optional[dict] = None
    seed: Optional[int] = None
    steps: Optional[int] = None
    out: Optional[str] = None


class RunResponse(BaseModel):
    out_dir: str
    manifest: dict
    metrics: list[dict] = Field(default_factory=list)
    extra: dict = Field(default_factory=dict)


class CompareTable(BaseModel):
    name: str
    text: str


class CompareRequest(BaseModel):
    tables: list[CompareTable]


class CompareResponse(BaseModel):
    text: str
    csv: str


class CheckResultModel(BaseModel):
    name: str
    status: str
    value: float
    threshold: float
    runtime_s: float
    note: str = ""


class SuiteRequest(BaseModel):
    tier: Literal["fast", "full"] = "fast"
    seed: int = 0


class SuiteResponse(BaseModel):
    results: list[CheckResultModel]
    passed: bool


@app.exception_handler(ConfigError)
async def config_error_handler(request: Request, exc: ConfigError):
    return JSONResponse(
        status_code=400,
        content={"code": "config", "field": exc.field, "message": str(exc)},
    )


@app.exception_handler(NumericalError)
async def numerical_error_handler(request: Request, exc: NumericalError):
    return JSONResponse(
        status_code=500,
        content={"code": "numeric", "message": str(exc)},
    )


def _parse_request_config(req: RunRequest):
    if (req.config_toml is None) == (req.config is None):
        raise ConfigError("config", "provide exactly one of config_toml or config")
    if req.config_toml is not None:
        return parse_config_text(req.config_toml)
    return validate_config(req.config)


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/run", response_model=RunResponse)
def run(req: RunRequest) -> RunResponse:
    cfg = _parse_request_config(req)
    summary = run_experiment(cfg, out=req.out, seed=req.seed, steps=req.steps)
    def scrub(value):
        if isinstance(value, float):
            return value if value == value and abs(value) != float("inf") else None
        if isinstance(value, dict):
            return {k: scrub(v) for k, v in value.items()}
        if isinstance(value, list):
            return [scrub(v) for v in value]
        return value

    return RunResponse(
        out_dir=summary.out_dir,
        manifest=summary.manifest,
        metrics=[scrub(m) for m in summary.metrics],
        extra=scrub(summary.extra),
    )


@app.post("/compare", response_model=CompareResponse)
def compare(req: CompareRequest) -> CompareResponse:
    text, csv_text = compare_tables([(t.name, t.text) for t in req.tables])
    return CompareResponse(text=text, csv=csv_text)


@app.post("/oracle-check", response_model=SuiteResponse)
def oracle_check(req: RunRequest) -> SuiteResponse:
    cfg = _parse_request_config(req)
    summary = run_experiment(cfg, out=req.out, seed=req.seed)
    results = [CheckResultModel(**r) for r in summary.extra.get("checks", [])]
    return SuiteResponse(results=results, passed=bool(summary.extra.get("all_passed")))


@app.post("/suite", response_model=SuiteResponse)
def suite(req: SuiteRequest) -> SuiteResponse:
    results = run_suite(req.tier, req.seed)
    models = []
    for r in results:
        d = r.as_dict()
        for key in ("value", "threshold"):
            if d[key] != d[key]:  # NaN from skipped checks is not JSON-safe
                d[key] = 0.0
        models.append(CheckResultModel(**d))
    return SuiteResponse(results=models, passed=all(r.status != "fail" for r in results))
