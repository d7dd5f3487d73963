#!/usr/bin/env python3
"""
Projected gradient baseline

Every controller takes a gradient step on its own profile and projects it
back onto its capped simplex {0 <= e <= caps, sum e = R}.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy.optimize import bisect

from .errors import InfeasibleBudget, LengthMismatch, MaxIterExceeded
from .fleet import CostModel, Fleet
from .fw_scheduler import FwResult, FwTrace, duality_gap, lmo_fleet, sort_prices

logger = logging.getLogger(__name__)

BISECT_MAXITER = 200
BUDGET_RTOL = 1e-10


def project_capped_simplex(v, caps, budget: float) -> np.ndarray:
    """
    Euclidean projection of v onto {e : 0 <= e <= caps, sum e = budget}.

    The solution is clip(v - tau, 0, caps) for a scalar tau; tau is bracketed
    in [min(v) - max(caps), max(v)], bisected, then recomputed exactly on the
    set of unclipped entries.

    Args:
        v: Point to project
        caps: Per-entry upper bounds (>= 0)
        budget: Required sum R

    Returns:
        The projected vector

    Raises:
        LengthMismatch: If v and caps differ in length
        InfeasibleBudget: If budget lies outside [0, sum(caps)]
    """
    v = np.asarray(v, dtype=float)
    caps = np.asarray(caps, dtype=float)
    if v.shape != caps.shape:
        raise LengthMismatch(f"point has {v.size} entries, caps have {caps.size}")
    total = float(caps.sum())
    slack = 1e-12 * max(total, 1.0)
    if budget < -slack or budget > total + slack:
        raise InfeasibleBudget(f"budget {budget:g} outside [0, {total:g}]")
    if budget <= 0.0:
        return np.zeros_like(v)
    if budget >= total:
        return caps.copy()

    def excess(tau: float) -> float:
        return float(np.clip(v - tau, 0.0, caps).sum()) - budget

    lo = float(v.min() - caps.max())
    hi = float(v.max())
    scale = max(abs(lo), abs(hi), 1.0)
    tau = bisect(excess, lo, hi, xtol=1e-15 * scale, maxiter=BISECT_MAXITER, disp=False)

    shifted = v - tau
    free = (shifted > 0.0) & (shifted < caps)
    if free.any():
        capped_mass = float(caps[shifted >= caps].sum())
        tau = (float(v[free].sum()) - (budget - capped_mass)) / int(free.sum())
    return np.clip(v - tau, 0.0, caps)


class PgdConfig(BaseModel):
    """Step size and stopping rule for the projected gradient baseline."""

    step_size: Optional[float] = Field(default=None, gt=0)
    max_iter: int = Field(default=100_000, gt=0)
    tol: float = Field(default=1e-10, ge=0)
    log_every: int = Field(default=1000, gt=0)


def default_step(fleet: Fleet, cost: CostModel) -> float:
    """1 / (M * max_t C_t''): the inverse Lipschitz constant of the gradient."""
    curvature = cost.curvature(fleet.T)
    if curvature <= 0.0 or len(fleet) == 0:
        return 1.0
    return 1.0 / (len(fleet) * curvature)


@dataclass
class PgdResult(FwResult):
    step: float = 0.0

    def raise_for_status(self) -> "PgdResult":
        if not self.converged:
            raise MaxIterExceeded(
                f"projected gradient stopped after {self.iterations} iterations",
                result=self,
            )
        return self


def pgd_schedule(fleet: Fleet, d, cost: CostModel, config: Optional[PgdConfig] = None) -> PgdResult:
    """
    Run projected gradient descent from the uniform-price greedy point.

    Args:
        fleet: Validated charging requests
        d: Base load d(1..T)
        cost: Slot cost model
        config: Step size and stopping rule

    Returns:
        PgdResult; the trace gap column holds the Frank-Wolfe gap of each iterate
    """
    config = config or PgdConfig()
    T = fleet.T
    d = np.asarray(d, dtype=float)
    if d.shape != (T,):
        raise LengthMismatch(f"base load has {d.size} entries, horizon is {T}")

    step = config.step_size or default_step(fleet, cost)
    if len(fleet) == 0:
        base = float(np.sum(cost.value(d)))
        return PgdResult(np.zeros((0, T)), FwTrace(), True, 0, base, 0.0, "empty fleet", step)

    e = lmo_fleet(fleet.caps, fleet.needs, sort_prices(np.zeros(T)))
    agg = e.sum(axis=0)
    current = float(np.sum(cost.value(d + agg)))
    trace = FwTrace()
    converged = False
    gap = float("nan")
    k = 0

    while k < config.max_iter:
        g = cost.derivative(d + agg)
        gap = duality_gap(g, e, lmo_fleet(fleet.caps, fleet.needs, sort_prices(g)))
        moved = e - step * g
        e = np.vstack(
            [project_capped_simplex(moved[m], fleet.caps[m], fleet.needs[m]) for m in range(len(fleet))]
        )
        agg = e.sum(axis=0)
        new = float(np.sum(cost.value(d + agg)))
        trace.append(k, new, gap, step)
        k += 1
        change = abs(new - current) / max(abs(current), 1e-300)
        current = new
        if k % config.log_every == 0:
            logger.debug("PGD iteration %d: cost %.10g", k, new)
        if change <= config.tol:
            converged = True
            break

    if converged:
        logger.info("PGD converged after %d iterations, cost %.10g", k, current)
    else:
        logger.warning("PGD hit max_iter=%d", config.max_iter)
    reason = "relative cost change" if converged else "max_iter"
    return PgdResult(e, trace, converged, k, current, gap, reason, step)
