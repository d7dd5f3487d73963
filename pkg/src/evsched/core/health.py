#!/usr/bin/env python3
"""
Grid health assessment

Checks a grid state against the feeder limits and flow equations and
summarizes the worst violations.
"""

from typing import Dict, List

import numpy as np

from .grid_model import FeederModel, GridState, flow_residuals

NEAR_FRACTION = 0.01


def _worst(values: np.ndarray) -> float:
    return float(values.max()) if values.size else 0.0


def assess_grid_state(feeder: FeederModel, state: GridState, tol: float = 1e-4) -> Dict:
    """
    Measure constraint violations of a grid state.

    Args:
        feeder: Compiled feeder with limits
        state: State to assess
        tol: Violation tolerated before a constraint counts as violated;
            anything above NEAR_FRACTION * tol is reported as a warning

    Returns:
        Dictionary with alert level ("ok", "warning" or "violated"), the
        maximum violation per constraint family and readable messages
    """
    state.check(feeder)
    mask = feeder.mask[:, :, None]
    present = np.broadcast_to(mask, state.v.shape)

    v_low = np.maximum(feeder.v_min[:, None, None] - state.v, 0.0)
    v_high = np.maximum(state.v - feeder.v_max[:, None, None], 0.0)
    voltage = np.maximum(v_low, v_high)[present]

    apparent = np.sqrt(state.P[1:] ** 2 + state.Q[1:] ** 2)
    line = np.maximum(apparent - feeder.s_max[1:, None, None], 0.0)[present[1:]]

    total_P0 = (state.P[0] * feeder.mask[0][:, None]).sum(axis=0)
    total_Q0 = (state.Q[0] * feeder.mask[0][:, None]).sum(axis=0)
    feeder_cap = np.maximum(np.hypot(total_P0, total_Q0) - feeder.sf_max, 0.0)

    box = feeder.gen_box
    gen_p = np.maximum(
        np.maximum(box["pmin"][:, :, None] - state.pg, state.pg - box["pmax"][:, :, None]), 0.0
    )
    gen_q = np.maximum(
        np.maximum(box["qmin"][:, :, None] - state.qg, state.qg - box["qmax"][:, :, None]), 0.0
    )
    generation = np.maximum(gen_p, gen_q)[present]

    residuals = flow_residuals(feeder, state)
    flow = max(_worst(np.abs(r)) for r in residuals.values())

    violations = {
        "voltage": _worst(voltage),
        "line_capacity": _worst(line),
        "feeder_capacity": _worst(feeder_cap),
        "generation": _worst(generation),
        "flow_equations": flow,
    }

    messages: List[str] = []
    violated: List[str] = []
    near: List[str] = []
    for name, amount in violations.items():
        if amount > tol:
            violated.append(name)
            messages.append(f"VIOLATED: {name.replace('_', ' ')} off by {amount:.3e}")
        elif amount > NEAR_FRACTION * tol:
            near.append(name)
            messages.append(f"WARNING: {name.replace('_', ' ')} within tolerance ({amount:.1e})")

    v_margin = np.minimum(state.v - feeder.v_min[:, None, None], feeder.v_max[:, None, None] - state.v)
    margin = float(v_margin[present].min()) if present.any() and state.T else np.inf

    alert_level = "ok"
    if violated:
        alert_level = "violated"
    elif near:
        alert_level = "warning"
    else:
        messages.append("All network constraints satisfied")

    return {
        "alert_level": alert_level,
        "violations": violations,
        "violated": violated,
        "voltage_margin": margin,
        "messages": messages,
    }
