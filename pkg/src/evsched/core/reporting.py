#!/usr/bin/env python3
"""
Result summaries shared by the CLI and the API

Turns solver results into JSON-ready dictionaries and compares solver costs.
"""

import math
from itertools import combinations
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .fleet import Fleet
from .fw_scheduler import FwResult
from .grid_model import FeederModel

MAX_TRACE_ROWS = 1_000_000


def _finite(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


def profiles_dict(fleet: Fleet, profiles: np.ndarray, scale: float = 1.0) -> Dict[str, List[float]]:
    return {req.id: (np.asarray(profiles[m]) * scale).tolist() for m, req in enumerate(fleet.requests)}


def trace_stride(rows: int, every: int = 1) -> int:
    """Thinning stride that keeps a trace at most MAX_TRACE_ROWS long."""
    return max(every, 1, math.ceil(rows / MAX_TRACE_ROWS))


def trace_records(frame: pd.DataFrame) -> List[Dict[str, Optional[float]]]:
    """Trace rows with NaN replaced by None."""
    return [
        {key: (None if isinstance(v, float) and math.isnan(v) else v) for key, v in row.items()}
        for row in frame.to_dict(orient="records")
    ]


def schedule_summary(solver: str, result: FwResult, fleet: Fleet, d: np.ndarray) -> Dict:
    """JSON-ready view of a network-free result."""
    d = np.asarray(d, dtype=float)
    return {
        "solver": solver,
        "converged": result.converged,
        "iterations": result.iterations,
        "cost": result.cost,
        "gap": _finite(result.gap),
        "stop_reason": result.stop_reason,
        "profiles": profiles_dict(fleet, result.profiles),
        "total_load": (d + result.profiles.sum(axis=0)).tolist(),
    }


def health_summary(health: Dict) -> Dict:
    """Health report with an infinite voltage margin mapped to None."""
    return {**health, "voltage_margin": _finite(health["voltage_margin"])}


def network_summary(result, fleet: Fleet, feeder: FeederModel) -> Dict:
    """JSON-ready view of an ADMM result; profiles converted back to kW."""
    return {
        "solver": "admm",
        "converged": result.converged,
        "iterations": result.iterations,
        "objective": result.objective,
        "threshold": result.threshold,
        "profiles": profiles_dict(fleet, result.profiles, feeder.base_kva),
        "state": result.repaired.to_dict(),
        "health": health_summary(result.health),
    }


def substation_load_kw(feeder: FeederModel, P: np.ndarray) -> np.ndarray:
    """Total substation active power per slot in kW."""
    return (P[0] * feeder.mask[0][:, None]).sum(axis=0) * feeder.base_kva


def relative_gap(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def cost_comparison(costs: Dict[str, float]) -> Dict:
    """Pairwise relative cost gaps and their maximum."""
    pairs = {f"{x}/{y}": relative_gap(costs[x], costs[y]) for x, y in combinations(sorted(costs), 2)}
    return {"pairwise": pairs, "max_relative_gap": max(pairs.values(), default=0.0)}


def load_curves_frame(curves: Dict[str, Sequence[float]]) -> pd.DataFrame:
    """Per-slot total-load curves, one column per solver."""
    T = len(next(iter(curves.values()))) if curves else 0
    frame = pd.DataFrame({"t": np.arange(1, T + 1)})
    for name in sorted(curves):
        frame[name] = np.asarray(curves[name], dtype=float)
    return frame
