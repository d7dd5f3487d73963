#!/usr/bin/env python3
"""
FastAPI application for EV charging schedules

Stateless endpoints for network-free scheduling (Frank-Wolfe or projected
gradient), network-constrained ADMM and feeder validation.
"""

import logging
from pathlib import Path

import pandas as pd
import uvicorn
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..core.admm_solver import AdmmSolver
from ..core.errors import EvschedError, InputError
from ..core.fleet import base_load_series, parse_fleet
from ..core.fw_scheduler import schedule
from ..core.grid_model import feeder_from_dict, network_loads_from_frame
from ..core.pgd_baseline import pgd_schedule
from ..core.reporting import network_summary, schedule_summary, trace_records
from .models import (
    FeederSummary,
    NetworkRequest,
    NetworkResponse,
    ScheduleRequest,
    ScheduleResponse,
)

logger = logging.getLogger(__name__)

app = FastAPI(
    title="evsched API",
    description="Decentralized EV charging schedules - Frank-Wolfe valley filling and network-constrained ADMM",
    version=__version__,
    docs_url=None,
    redoc_url="/docs",
)


@app.get("/", summary="API Information")
async def root():
    """Root endpoint with API information"""
    return {
        "name": "evsched API",
        "version": __version__,
        "description": "EV charging scheduling API",
        "endpoints": {
            "/schedule": "Schedule a fleet against a base load (fw or pgd)",
            "/solve-network": "Schedule a fleet on an unbalanced feeder with ADMM",
            "/feeder/validate": "Check a feeder document",
            "/health": "Service health check",
            "/docs": "API documentation",
        },
    }


@app.get("/health", summary="Health Check")
async def health_check():
    """Health check endpoint to verify API is running"""
    return {"status": "healthy", "message": "evsched API is running"}


@app.post("/schedule", response_model=ScheduleResponse, summary="Network-free Schedule")
def schedule_endpoint(body: ScheduleRequest):
    """
    Schedule an inline fleet against a base load.

    - **solver**: "fw" (Frank-Wolfe) or "pgd" (projected gradient)
    - **trace_every**: include every n-th trace row (0 leaves it out)

    Non-converged runs are returned with converged=false.
    """
    try:
        fleet = parse_fleet([v.model_dump(by_alias=True, exclude_none=True) for v in body.vehicles], body.T, body.slot_minutes)
        d = base_load_series(body.base_load, body.T)
        if body.solver == "pgd":
            result = pgd_schedule(fleet, d, body.cost, body.pgd)
        else:
            result = schedule(fleet, d, body.cost, body.fw)
    except (InputError, ValueError) as e:
        raise HTTPException(status_code=422, detail=str(e))
    except EvschedError as e:
        raise HTTPException(status_code=500, detail=f"Solver failure: {e}")

    if not result.converged:
        logger.warning("%s stopped without converging: %s", body.solver, result.stop_reason)
    summary = schedule_summary(body.solver, result, fleet, d)
    if body.trace_every:
        summary["trace"] = trace_records(result.trace.to_frame(body.trace_every))
    return summary


@app.post("/solve-network", response_model=NetworkResponse, summary="Network-constrained Schedule")
def solve_network_endpoint(body: NetworkRequest):
    """
    Run consensus ADMM on an inline feeder, fleet (kW) and base loads.

    Returns EV profiles in kW, the repaired grid state in p.u. and its health
    report.
    """
    try:
        feeder = feeder_from_dict(body.feeder)
        fleet = parse_fleet([v.model_dump(by_alias=True, exclude_none=True) for v in body.vehicles], body.T, body.slot_minutes)
        frame = pd.DataFrame(
            [row.model_dump() for row in body.loads], columns=["t", "bus", "phase", "p_kw", "q_kvar"]
        )
        d, qd = network_loads_from_frame(frame, feeder, body.T, source="request loads")
        solver = AdmmSolver(feeder, fleet.scaled(1.0 / feeder.base_kva), d, qd, body.config)
        result = solver.solve()
    except InputError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except EvschedError as e:
        raise HTTPException(status_code=500, detail=f"Solver failure: {e}")

    if not result.converged:
        logger.warning("ADMM stopped after %d iterations without converging", result.iterations)
    summary = network_summary(result, fleet, feeder)
    summary.pop("solver")
    return summary


@app.post("/feeder/validate", response_model=FeederSummary, summary="Validate Feeder")
async def validate_feeder_endpoint(body: dict):
    """
    Parse and validate a feeder document.

    Structural problems come back as valid=false with the offending location.
    """
    try:
        feeder = feeder_from_dict(body)
    except InputError as e:
        return FeederSummary(valid=False, message=str(e))
    return FeederSummary(
        valid=True,
        buses=feeder.n_buses,
        phase_counts=feeder.phase_counts(),
        generators=int(feeder.has_gen.sum()),
        message=f"Feeder with {feeder.n_buses} buses is valid",
    )


def serve(host: str = "0.0.0.0", port: int = 3000, reload: bool = False, log_level: str = "info"):
    """
    Run the API with uvicorn.

    With reload on, uvicorn imports the app by name and watches the package
    sources for changes.
    """
    if reload:
        uvicorn.run(
            "evsched.api.main:app",
            host=host,
            port=port,
            reload=True,
            reload_dirs=[str(Path(__file__).resolve().parents[1])],
            log_level=log_level,
        )
    else:
        uvicorn.run(app, host=host, port=port, log_level=log_level)


if __name__ == "__main__":
    serve()
