#!/usr/bin/env python3
"""
Consensus ADMM for network-constrained EV charging

Every bus keeps its own voltages, injections and upstream flow (x), a copy of
its parent's voltage and of its children's flows (x_hat), and agrees with its
neighbours through consensus variables (z). One iteration is:

1. per-bus equality-constrained QPs for x and x_hat, and per-(bus, phase)
   Frank-Wolfe solves for the EV profiles;
2. closed-form consensus updates, including the line-disk and
   feeder-capacity projections;
3. scaled multiplier updates.

All arrays are (bus, phase, slot); absent phases stay zero.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from .errors import DimensionMismatch, FeederValidationError, LengthMismatch, MaxIterExceeded
from .fleet import PHASES, CostModel, Fleet
from .fw_scheduler import FwOptions, FwResult, schedule
from .grid_model import (
    FeederModel,
    GridState,
    children_sum,
    forward_sweep,
    generation_cost,
    network_objective,
    supply_cost,
)
from .health import assess_grid_state
from .kkt import EqualityQP

logger = logging.getLogger(__name__)

# x-side variable kinds inside a bus block
V, PG, PD, QG, P, Q, VH, PH, QH = range(9)
N_KINDS = 9


class AdmmConfig(BaseModel):
    """
    Penalty, stopping and inner-solver settings.

    stop_rule picks the primal residual compared against the threshold:
    "standard" uses ||Fx+Gz-b||^2. "augmented" adds the scaled multiplier,
    ||Fx+Gz-b+w||^2, which levels off at ||w*||^2 whenever a limit binds, so
    it is opt-in rather than the default. Both are recorded in the trace.
    """

    rho: float = Field(default=1.0, gt=0)
    max_iter: int = Field(default=20_000, gt=0)
    tol: float = Field(default=1e-3, gt=0)
    stop_rule: Literal["standard", "augmented"] = "standard"
    inner_tol: float = Field(default=1e-6, gt=0)
    inner_max_iter: int = Field(default=500, gt=0)
    threads: int = Field(default=1, ge=1)
    log_every: int = Field(default=100, gt=0)
    feasibility_tol: float = Field(default=1e-4, gt=0)


@dataclass
class AdmmState:
    """Originals, duplicates, consensus copies and scaled multipliers."""

    v: np.ndarray
    pg: np.ndarray
    pd: np.ndarray
    qg: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    vh: np.ndarray
    Ph: np.ndarray
    Qh: np.ndarray
    vt: np.ndarray
    pgt: np.ndarray
    pdt: np.ndarray
    qgt: np.ndarray
    Pt: np.ndarray
    Qt: np.ndarray
    lam_v: np.ndarray
    lam_p: np.ndarray
    lam_d: np.ndarray
    lam_q: np.ndarray
    lam_P: np.ndarray
    lam_Q: np.ndarray
    lamh_v: np.ndarray
    lamh_P: np.ndarray
    lamh_Q: np.ndarray
    mu: np.ndarray
    profiles: np.ndarray

    CONSENSUS = ("vt", "pgt", "pdt", "qgt", "Pt", "Qt")

    @classmethod
    def zeros(cls, feeder: FeederModel, T: int, M: int) -> "AdmmState":
        arrays = {f.name: feeder.zeros(T) for f in fields(cls) if f.name != "profiles"}
        return cls(profiles=np.zeros((M, T)), **arrays)

    def consensus(self) -> Tuple[np.ndarray, ...]:
        return tuple(getattr(self, name).copy() for name in self.CONSENSUS)


# scaled multipliers, in stacking order
MULTIPLIERS = (
    "lam_p",
    "lam_q",
    "lam_d",
    "lam_P",
    "lam_Q",
    "lam_v",
    "lamh_P",
    "lamh_Q",
    "lamh_v",
    "mu",
)


class BusBlock:
    """Equality-constrained QP of one bus: balance rows, voltage-drop rows."""

    def __init__(self, feeder: FeederModel, n: int, rho: float):
        self.n = n
        variables: List[Tuple[int, int, int]] = []
        own = [i for i in range(3) if feeder.mask[n, i]]
        for i in own:
            variables += [(V, n, i), (PG, n, i), (PD, n, i), (QG, n, i), (P, n, i), (Q, n, i)]
        if n > 0:
            variables += [(VH, n, i) for i in own]
        for k in feeder.children[n]:
            for i in range(3):
                if feeder.mask[k, i]:
                    variables += [(PH, k, i), (QH, k, i)]
        index = {var: j for j, var in enumerate(variables)}

        rows: List[np.ndarray] = []
        q_rows: List[Tuple[int, int]] = []
        for i in own:
            row = np.zeros(len(variables))
            row[index[(PG, n, i)]] = 1.0
            row[index[(PD, n, i)]] = -1.0
            row[index[(P, n, i)]] = 1.0
            for k in feeder.children[n]:
                if (PH, k, i) in index:
                    row[index[(PH, k, i)]] = -1.0
            rows.append(row)

            row = np.zeros(len(variables))
            row[index[(QG, n, i)]] = 1.0
            row[index[(Q, n, i)]] = 1.0
            for k in feeder.children[n]:
                if (QH, k, i) in index:
                    row[index[(QH, k, i)]] = -1.0
            q_rows.append((len(rows), i))
            rows.append(row)

            if n > 0:
                row = np.zeros(len(variables))
                row[index[(VH, n, i)]] = 1.0
                row[index[(V, n, i)]] = -1.0
                for j in own:
                    row[index[(P, n, j)]] -= feeder.Zbar[n, i, j].real
                    row[index[(Q, n, j)]] += feeder.Zbar[n, i, j].imag
                rows.append(row)

        hessian = np.ones(len(variables))
        self.shift = np.zeros(len(variables))
        if n == 0:
            # supply cost (2/rho) f0(P0) folded into the proximal term
            for i in own:
                hessian[index[(P, 0, i)]] = 1.0 + 2.0 * feeder.f0.a / rho
                self.shift[index[(P, 0, i)]] = -feeder.f0.b / rho

        self.kinds = np.array([v[0] for v in variables], dtype=int)
        self.buses = np.array([v[1] for v in variables], dtype=int)
        self.phases = np.array([v[2] for v in variables], dtype=int)
        self.q_rows = np.array([r for r, _ in q_rows], dtype=int)
        self.q_phases = np.array([i for _, i in q_rows], dtype=int)
        A = np.vstack(rows) if rows else np.zeros((0, len(variables)))
        self.qp = EqualityQP(A, hessian, label=f"bus {n}")

    def rhs(self, qd: np.ndarray) -> np.ndarray:
        c = np.zeros((self.qp.n_cons, qd.shape[2]))
        c[self.q_rows] = qd[self.n, self.q_phases]
        return c

    def solve(self, targets: np.ndarray, qd: np.ndarray) -> np.ndarray:
        """Block minimizer for targets of shape (kinds, bus, phase, T)."""
        t = targets[self.kinds, self.buses, self.phases]
        return self.qp.solve(t + self.shift[:, None], self.rhs(qd))

    def scatter(self, out: np.ndarray, x: np.ndarray) -> None:
        out[self.kinds, self.buses, self.phases] = x

    def residual(self, x: np.ndarray, qd: np.ndarray) -> float:
        return self.qp.residual(x, self.rhs(qd))


def x_update_bus(block: BusBlock, targets: np.ndarray, qd: np.ndarray, out: np.ndarray) -> float:
    """
    First-step update of one bus; writes x and x_hat into out.

    Returns:
        Largest violation of the block's local equalities
    """
    x = block.solve(targets, qd)
    block.scatter(out, x)
    return block.residual(x, qd)


def x_update_substation(block: BusBlock, targets: np.ndarray, qd: np.ndarray, out: np.ndarray) -> float:
    """First-step update of bus 0, whose block also carries the supply cost (2/rho) f0."""
    if block.n != 0:
        raise ValueError(f"substation update called on bus {block.n}")
    return x_update_bus(block, targets, qd, out)


def z_update_pg(pg_plus_lam, a, b, rho: float, pmin, pmax):
    """Generation consensus: clip((rho (p + lam) - b) / (2a + rho))."""
    return np.clip((rho * np.asarray(pg_plus_lam) - b) / (2.0 * np.asarray(a) + rho), pmin, pmax)


def z_update_qg(qg_plus_lam, qmin, qmax):
    return np.clip(qg_plus_lam, qmin, qmax)


def z_update_v(own, child_terms, child_count, vmin, vmax):
    """Voltage consensus: clipped average of own and children's copies."""
    return np.clip((own + child_terms) / (1.0 + child_count), vmin, vmax)


def z_update_pd(pd, lam_d, d, ev_load, mu):
    """Load consensus: 1/2 (p_d + lam_d + d + sum e + mu)."""
    return 0.5 * (pd + lam_d + d + ev_load + mu)


def project_line_disk(P_breve, Q_breve, s_max):
    """Scale (P, Q) radially onto the disk P^2 + Q^2 <= s_max^2."""
    P_breve = np.asarray(P_breve, dtype=float)
    Q_breve = np.asarray(Q_breve, dtype=float)
    radius = np.hypot(P_breve, Q_breve)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(radius > s_max, s_max / np.where(radius > 0, radius, 1.0), 1.0)
    return P_breve * scale, Q_breve * scale


def project_substation_capacity(P_breve, Q_breve, sf_max: float, phase_mask=None):
    """
    Project three-phase flows onto (1^T P)^2 + (1^T Q)^2 <= sf_max^2.

    With sigma the magnitude of the phase totals, every present phase gives
    up max(1 - sf_max / sigma, 0) times the total divided by the phase count.

    Args:
        P_breve, Q_breve: Arrays with phases on axis 0 (shape (3,) or (3, T))
        sf_max: Feeder transformer capacity
        phase_mask: Present phases (default all three)
    """
    P_breve = np.asarray(P_breve, dtype=float)
    Q_breve = np.asarray(Q_breve, dtype=float)
    mask = np.ones(3, dtype=bool) if phase_mask is None else np.asarray(phase_mask, dtype=bool)
    shape = (3,) + (1,) * (P_breve.ndim - 1)
    weight = mask.reshape(shape).astype(float)
    count = max(int(mask.sum()), 1)
    total_P = (P_breve * weight).sum(axis=0)
    total_Q = (Q_breve * weight).sum(axis=0)
    sigma = np.hypot(total_P, total_Q)
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where(sigma > sf_max, 1.0 - sf_max / np.where(sigma > 0, sigma, 1.0), 0.0)
    return (
        P_breve - weight * (shrink * total_P / count),
        Q_breve - weight * (shrink * total_Q / count),
    )


def ev_subproblem(
    fleet: Fleet,
    offset: np.ndarray,
    options: FwOptions,
    initial: Optional[np.ndarray] = None,
) -> FwResult:
    """
    Valley-filling of the EVs on one (bus, phase) on top of l = d - p_d~ + mu.
    """
    return schedule(fleet, offset, CostModel.valley(), options, initial=initial)


@dataclass(frozen=True)
class AdmmRecord:
    k: int
    cost: float
    op: float
    od: float
    op_std: float


@dataclass
class AdmmTrace:
    records: List[AdmmRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self, every: int = 1) -> pd.DataFrame:
        rows = self.records[::every]
        if self.records and rows[-1] is not self.records[-1]:
            rows = rows + [self.records[-1]]
        return pd.DataFrame(
            [(r.k, r.cost, r.op, r.od, r.op_std) for r in rows],
            columns=["iter", "cost", "op", "od", "op_std"],
        )


@dataclass
class AdmmResult:
    state: AdmmState
    raw: GridState
    repaired: GridState
    profiles: np.ndarray
    trace: AdmmTrace
    objective: float
    converged: bool
    iterations: int
    threshold: float
    health: Dict

    def raise_for_status(self) -> "AdmmResult":
        if not self.converged:
            raise MaxIterExceeded(
                f"ADMM stopped after {self.iterations} iterations above residual "
                f"threshold {self.threshold:.3e}",
                result=self,
            )
        return self


def constraint_violations(
    feeder: FeederModel, state: AdmmState, d: np.ndarray, groups: Dict[Tuple[int, int], List[int]]
) -> Dict[str, np.ndarray]:
    """Signed violation of every consensus constraint, keyed by its multiplier."""
    mask = feeder.mask[:, :, None].astype(float)
    line_mask = mask.copy()
    line_mask[0] = 0.0
    ev_load = ev_bus_load(feeder, state.profiles, groups)
    parent_vt = np.zeros_like(state.vt)
    if feeder.n_buses > 1:
        parent_vt[1:] = state.vt[feeder.parent[1:]]
    return {
        "lam_p": (state.pg - state.pgt) * mask,
        "lam_q": (state.qg - state.qgt) * mask,
        "lam_d": (state.pd - state.pdt) * mask,
        "lam_P": (state.P - state.Pt) * mask,
        "lam_Q": (state.Q - state.Qt) * mask,
        "lam_v": (state.v - state.vt) * mask,
        "lamh_P": (state.Ph - state.Pt) * line_mask,
        "lamh_Q": (state.Qh - state.Qt) * line_mask,
        "lamh_v": (state.vh - parent_vt) * line_mask,
        "mu": (d + ev_load - state.pdt) * mask,
    }


def ev_bus_load(feeder: FeederModel, profiles: np.ndarray, groups: Optional[Dict] = None) -> np.ndarray:
    """Sum of EV profiles per (bus, phase)."""
    load = feeder.zeros(profiles.shape[1] if profiles.ndim == 2 else 0)
    for (n, i), idx in (groups or {}).items():
        load[n, i] = profiles[idx].sum(axis=0)
    return load


def multiplier_update(state: AdmmState, violations: Dict[str, np.ndarray]) -> AdmmState:
    """Add each constraint's violation to its scaled multiplier."""
    for name in MULTIPLIERS:
        getattr(state, name)[...] += violations[name]
    return state


def constraint_system(
    feeder: FeederModel, state: AdmmState, d: np.ndarray, groups: Dict[Tuple[int, int], List[int]]
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stacked violation vector r = Fx + Gz - b and multipliers w.

    Entries follow MULTIPLIERS order, then (bus, phase, slot) C order over
    the entries each constraint family owns.
    """
    violations = constraint_violations(feeder, state, d, groups)
    T = state.v.shape[2]
    own = np.broadcast_to(feeder.mask[:, :, None], (feeder.n_buses, 3, T))
    lines = own.copy()
    lines[0] = False
    r_parts, w_parts = [], []
    for name in MULTIPLIERS:
        select = lines if name.startswith("lamh") else own
        r_parts.append(violations[name][select])
        w_parts.append(getattr(state, name)[select])
    return np.concatenate(r_parts), np.concatenate(w_parts)


def residual_pair(
    violations: Dict[str, np.ndarray],
    state: AdmmState,
    previous_z: Tuple[np.ndarray, ...],
    rho: float,
) -> Tuple[float, float, float]:
    """
    (o_p, o_d, standard primal residual) after the multiplier update.

    o_p = ||Fx + Gz - b + w||^2, o_d = rho ||z - z_prev||^2 and the standard
    residual is ||Fx + Gz - b||^2.
    """
    op_std = float(sum(np.sum(v * v) for v in violations.values()))
    op = float(sum(np.sum((violations[name] + getattr(state, name)) ** 2) for name in MULTIPLIERS))
    od = rho * float(sum(np.sum((now - before) ** 2) for now, before in zip(state.consensus(), previous_z)))
    return op, od, op_std


class AdmmSolver:
    """Network-constrained scheduler over one feeder, fleet and load set."""

    def __init__(
        self,
        feeder: FeederModel,
        fleet: Fleet,
        d: np.ndarray,
        qd: np.ndarray,
        config: Optional[AdmmConfig] = None,
    ):
        self.feeder = feeder
        self.fleet = fleet
        self.config = config or AdmmConfig()
        self.d = np.asarray(d, dtype=float)
        self.qd = np.asarray(qd, dtype=float)
        B = feeder.n_buses
        if self.d.ndim != 3 or self.d.shape[:2] != (B, 3) or self.qd.shape != self.d.shape:
            raise DimensionMismatch(f"loads must have shape ({B}, 3, T), got {self.d.shape} and {self.qd.shape}")
        self.T = self.d.shape[2]
        if fleet.T != self.T:
            raise LengthMismatch(f"fleet horizon {fleet.T} differs from load horizon {self.T}")
        mask = feeder.mask[:, :, None]
        self.d = self.d * mask
        self.qd = self.qd * mask

        for req in fleet.requests:
            if req.bus is None or req.phase is None:
                raise FeederValidationError("EV has no bus/phase", location=f"EV {req.id}")
            if not 0 <= req.bus < B:
                raise FeederValidationError(f"EV bus {req.bus} not in feeder", location=f"EV {req.id}")
            if not feeder.mask[req.bus, PHASES.index(req.phase)]:
                raise FeederValidationError(
                    f"phase {req.phase} absent at bus {req.bus}", location=f"EV {req.id}"
                )
        self.groups = dict(sorted(fleet.groups().items()))
        self.subfleets = {key: fleet.subset(idx) for key, idx in self.groups.items()}

        rho = self.config.rho
        self.blocks = [BusBlock(feeder, n, rho) for n in range(B)]
        self.v_lo = feeder.v_min.copy()
        self.v_hi = feeder.v_max.copy()
        self.v_lo[0] = self.v_hi[0] = feeder.v0
        self.child_count = children_sum(feeder, feeder.mask.astype(float))
        self.threshold = self.config.tol * self.T * math.sqrt(max(feeder.N, 1))

    def targets(self, state: AdmmState) -> np.ndarray:
        """Consensus values minus multipliers, stacked by variable kind."""
        out = np.zeros((N_KINDS,) + state.v.shape)
        out[V] = state.vt - state.lam_v
        out[PG] = state.pgt - state.lam_p
        out[PD] = state.pdt - state.lam_d
        out[QG] = state.qgt - state.lam_q
        out[P] = state.Pt - state.lam_P
        out[Q] = state.Qt - state.lam_Q
        if self.feeder.n_buses > 1:
            out[VH, 1:] = state.vt[self.feeder.parent[1:]] - state.lamh_v[1:]
        out[PH] = state.Pt - state.lamh_P
        out[QH] = state.Qt - state.lamh_Q
        return out

    def x_step(self, state: AdmmState) -> float:
        targets = self.targets(state)
        out = np.zeros_like(targets)
        worst = x_update_substation(self.blocks[0], targets, self.qd, out)
        for block in self.blocks[1:]:
            worst = max(worst, x_update_bus(block, targets, self.qd, out))
        state.v, state.pg, state.pd, state.qg, state.P, state.Q = (out[k] for k in (V, PG, PD, QG, P, Q))
        state.vh, state.Ph, state.Qh = out[VH], out[PH], out[QH]
        return worst

    def ev_step(self, state: AdmmState, inner_tol: float, pool: Optional[ThreadPoolExecutor]) -> None:
        options = FwOptions(
            max_iter=self.config.inner_max_iter,
            eps=None,
            gap_tol=inner_tol,
            step_rule="line-search",
            log_every=self.config.inner_max_iter,
        )
        keys = list(self.groups)
        offsets = [self.d[n, i] - state.pdt[n, i] + state.mu[n, i] for n, i in keys]
        initials = [state.profiles[self.groups[key]] for key in keys]
        warm = state.profiles.any()

        def solve_group(j: int) -> FwResult:
            return ev_subproblem(
                self.subfleets[keys[j]], offsets[j], options, initials[j] if warm else None
            )

        jobs = range(len(keys))
        results = list(pool.map(solve_group, jobs)) if pool else [solve_group(j) for j in jobs]
        for key, result in zip(keys, results):
            state.profiles[self.groups[key]] = result.profiles

    def z_step(self, state: AdmmState) -> None:
        feeder = self.feeder
        rho = self.config.rho
        mask = feeder.mask[:, :, None]
        box, cost = feeder.gen_box, feeder.gen_cost
        state.pgt = z_update_pg(
            state.pg + state.lam_p,
            cost["a"][:, :, None],
            cost["b"][:, :, None],
            rho,
            box["pmin"][:, :, None],
            box["pmax"][:, :, None],
        ) * mask
        state.qgt = z_update_qg(state.qg + state.lam_q, box["qmin"][:, :, None], box["qmax"][:, :, None]) * mask
        state.vt = z_update_v(
            state.v + state.lam_v,
            children_sum(feeder, (state.vh + state.lamh_v) * mask),
            self.child_count[:, :, None],
            self.v_lo[:, None, None],
            self.v_hi[:, None, None],
        ) * mask
        ev_load = ev_bus_load(feeder, state.profiles, self.groups)
        state.pdt = z_update_pd(state.pd, state.lam_d, self.d, ev_load, state.mu) * mask

        Pt = np.zeros_like(state.P)
        Qt = np.zeros_like(state.Q)
        if feeder.n_buses > 1:
            P_breve = 0.5 * (state.P[1:] + state.lam_P[1:] + state.Ph[1:] + state.lamh_P[1:])
            Q_breve = 0.5 * (state.Q[1:] + state.lam_Q[1:] + state.Qh[1:] + state.lamh_Q[1:])
            Pt[1:], Qt[1:] = project_line_disk(P_breve, Q_breve, feeder.s_max[1:, None, None])
        Pt[0], Qt[0] = project_substation_capacity(
            state.P[0] + state.lam_P[0], state.Q[0] + state.lam_Q[0], feeder.sf_max, feeder.mask[0]
        )
        state.Pt, state.Qt = Pt * mask, Qt * mask

    def violations(self, state: AdmmState) -> Dict[str, np.ndarray]:
        return constraint_violations(self.feeder, state, self.d, self.groups)

    def iterate_cost(self, state: AdmmState) -> float:
        return supply_cost(self.feeder, state.P[0]) + generation_cost(self.feeder, state.pgt)

    def solve(self, initial: Optional[AdmmState] = None) -> AdmmResult:
        """
        Iterate until both residuals fall below tol * T * sqrt(N) or max_iter.

        Returns:
            AdmmResult; call raise_for_status() to turn a non-converged run
            into MaxIterExceeded
        """
        config = self.config
        state = initial or AdmmState.zeros(self.feeder, self.T, len(self.fleet))
        trace = AdmmTrace()
        converged = False
        last = math.inf
        k = 0
        logger.info(
            "ADMM on %d buses, %d EVs in %d groups, T=%d, rho=%g, threshold %.3e",
            self.feeder.n_buses, len(self.fleet), len(self.groups), self.T, config.rho, self.threshold,
        )
        pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
        try:
            while k < config.max_iter:
                previous_z = state.consensus()
                local = self.x_step(state)
                inner_tol = max(config.inner_tol, min(1e-3, 0.1 * last))
                self.ev_step(state, inner_tol, pool)
                self.z_step(state)
                violations = self.violations(state)
                multiplier_update(state, violations)
                op, od, op_std = residual_pair(violations, state, previous_z, config.rho)
                k += 1
                trace.records.append(AdmmRecord(k, self.iterate_cost(state), op, od, op_std))
                primal = op if config.stop_rule == "augmented" else op_std
                last = max(op_std, od)
                if k % config.log_every == 0:
                    logger.debug(
                        "ADMM iteration %d: op %.3e od %.3e op_std %.3e local %.1e",
                        k, op, od, op_std, local,
                    )
                if primal <= self.threshold and od <= self.threshold:
                    converged = True
                    break
        finally:
            if pool is not None:
                pool.shutdown()

        return self._finish(state, trace, converged, k)

    def _finish(self, state: AdmmState, trace: AdmmTrace, converged: bool, k: int) -> AdmmResult:
        feeder = self.feeder
        ev_load = ev_bus_load(feeder, state.profiles, self.groups)
        raw = GridState(
            v=state.v.copy(),
            pg=state.pg.copy(),
            qg=state.qg.copy(),
            pd=state.pd.copy(),
            qd=self.qd.copy(),
            P=state.P.copy(),
            Q=state.Q.copy(),
        )
        repaired = forward_sweep(feeder, self.d + ev_load, self.qd, pg=state.pgt, qg=state.qgt)
        health = assess_grid_state(feeder, repaired, tol=self.config.feasibility_tol)
        objective = network_objective(feeder, repaired)
        if converged:
            logger.info("ADMM converged after %d iterations, objective %.10g", k, objective)
        else:
            logger.warning("ADMM hit max_iter=%d above threshold %.3e", self.config.max_iter, self.threshold)
        if health["alert_level"] == "violated":
            logger.warning("Repaired state violates %s", ", ".join(health["violated"]))
        return AdmmResult(
            state=state,
            raw=raw,
            repaired=repaired,
            profiles=state.profiles.copy(),
            trace=trace,
            objective=objective,
            converged=converged,
            iterations=k,
            threshold=self.threshold,
            health=health,
        )


def solve(
    feeder: FeederModel,
    fleet: Fleet,
    d: np.ndarray,
    qd: np.ndarray,
    config: Optional[AdmmConfig] = None,
) -> AdmmResult:
    """Build an AdmmSolver and run it."""
    return AdmmSolver(feeder, fleet, d, qd, config).solve()
