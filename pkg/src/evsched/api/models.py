#!/usr/bin/env python3
"""
Pydantic models for API requests and responses

Contains all data models used by the FastAPI application.
"""

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field

from ..core.admm_solver import AdmmConfig
from ..core.fleet import CostModel, FleetRecord
from ..core.fw_scheduler import FwOptions
from ..core.pgd_baseline import PgdConfig


class ScheduleRequest(BaseModel):
    """Network-free scheduling request with an inline fleet and base load."""
    T: int = Field(ge=1)
    slot_minutes: float = Field(default=15.0, gt=0)
    vehicles: List[FleetRecord]
    base_load: List[float]
    cost: CostModel = CostModel()
    solver: Literal["fw", "pgd"] = "fw"
    fw: FwOptions = FwOptions()
    pgd: PgdConfig = PgdConfig()
    trace_every: int = Field(default=0, ge=0, description="Emit every n-th trace row; 0 omits the trace")


class ScheduleResponse(BaseModel):
    """Charging profiles and convergence summary."""
    solver: str
    converged: bool
    iterations: int
    cost: float
    gap: Optional[float]
    stop_reason: str
    profiles: Dict[str, List[float]]
    total_load: List[float]
    trace: Optional[List[Dict[str, Optional[float]]]] = None


class LoadRow(BaseModel):
    """One base-load entry of a bus phase, in kW / kvar."""
    t: int = Field(ge=1)
    bus: int = Field(ge=0)
    phase: Literal["a", "b", "c"]
    p_kw: float
    q_kvar: float = 0.0


class NetworkRequest(BaseModel):
    """Network-constrained request: feeder document, fleet (kW) and loads."""
    T: int = Field(ge=1)
    slot_minutes: float = Field(default=60.0, gt=0)
    feeder: Dict[str, Any]
    vehicles: List[FleetRecord]
    loads: List[LoadRow] = Field(default_factory=list)
    config: AdmmConfig = AdmmConfig()


class HealthReport(BaseModel):
    """Grid health assessment of a network state."""
    alert_level: str
    violations: Dict[str, float]
    violated: List[str]
    voltage_margin: Optional[float]
    messages: List[str]


class NetworkResponse(BaseModel):
    """ADMM outcome; profiles in kW, grid state in p.u."""
    converged: bool
    iterations: int
    objective: float
    threshold: float
    profiles: Dict[str, List[float]]
    state: Dict[str, list]
    health: HealthReport


class FeederSummary(BaseModel):
    """Outcome of a feeder validation."""
    valid: bool
    buses: int = 0
    phase_counts: Dict[str, int] = Field(default_factory=dict)
    generators: int = 0
    message: str
