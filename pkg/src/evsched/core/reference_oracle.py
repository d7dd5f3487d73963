#!/usr/bin/env python3
"""
Reference solvers for checking the production schedulers

Monolithic and self-contained: the projections, linear minimization and
flow equations are re-derived here rather than imported from the solvers.
Desk-scale instances only.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy.optimize import minimize_scalar

from .errors import OracleNotConverged
from .fleet import CostModel, Fleet
from .grid_model import FeederModel

logger = logging.getLogger(__name__)

ALPHA = np.array([1.0, np.exp(-2j * np.pi / 3), np.exp(-4j * np.pi / 3)])


class OracleOptions(BaseModel):
    max_iter: int = Field(default=200_000, gt=0)
    gap_tol: float = Field(default=1e-10, gt=0)
    feas_tol: float = Field(default=1e-8, gt=0)
    stat_tol: float = Field(default=1e-6, gt=0)
    rho_init: float = Field(default=10.0, gt=0)
    rho_max: float = Field(default=1e4, gt=0)
    max_outer: int = Field(default=60, gt=0)
    strict: bool = False


@dataclass
class OracleReport:
    value: float
    optimizer: Dict[str, np.ndarray]
    certificate: Dict[str, float]
    iterations: int
    certified: bool
    tolerances: Dict[str, float] = field(default_factory=dict)


# Projections, each by a route different from the production code


def breakpoint_capped_simplex(v: np.ndarray, caps: np.ndarray, budget: float) -> np.ndarray:
    """Exact projection onto {0 <= e <= caps, sum e = budget} by breakpoint search."""
    v = np.asarray(v, dtype=float)
    caps = np.asarray(caps, dtype=float)
    if budget <= 0:
        return np.zeros_like(v)
    if budget >= caps.sum():
        return caps.copy()
    # s(tau) = sum clip(v - tau, 0, caps) is piecewise linear with kinks at v and v - caps
    knots = np.unique(np.concatenate([v, v - caps]))
    mass = np.array([np.clip(v - k, 0.0, caps).sum() for k in knots])
    # mass is non-increasing in the knot value
    j = int(np.searchsorted(-mass, -budget, side="left"))
    if j == 0:
        tau = knots[0]
    elif j >= len(knots):
        tau = knots[-1]
    else:
        lo, hi = knots[j - 1], knots[j]
        m_lo, m_hi = mass[j - 1], mass[j]
        tau = lo if m_lo == m_hi else lo + (m_lo - budget) * (hi - lo) / (m_lo - m_hi)
    return np.clip(v - tau, 0.0, caps)


@dataclass(frozen=True)
class CappedSimplexSet:
    caps: np.ndarray
    budget: float


@dataclass(frozen=True)
class DiskSet:
    radius: float


@dataclass(frozen=True)
class SubstationSet:
    capacity: float
    phase_mask: Tuple[bool, bool, bool] = (True, True, True)


SetDescriptor = Union[CappedSimplexSet, DiskSet, SubstationSet]


def _maximize(dual, lo: float, hi: float) -> float:
    result = minimize_scalar(lambda s: -dual(s), bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    best = float(result.x)
    # the bounded search never evaluates the ends
    return max((lo, best, hi), key=dual)


def brute_projection(point, descriptor: SetDescriptor):
    """
    Project by maximizing the one-dimensional concave dual.

    Args:
        point: Vector for a capped simplex; (P, Q) pair for a disk; pair of
            3-vectors for the substation set
        descriptor: The set to project onto

    Returns:
        Projected point with the same structure as the input
    """
    if isinstance(descriptor, CappedSimplexSet):
        v = np.asarray(point, dtype=float)
        caps = np.asarray(descriptor.caps, dtype=float)
        R = descriptor.budget

        def dual(tau):
            e = np.clip(v - tau, 0.0, caps)
            return 0.5 * np.sum((e - v) ** 2) + tau * (e.sum() - R)

        tau = _maximize(dual, float(v.min() - caps.max()) - 1.0, float(v.max()) + 1.0)
        return np.clip(v - tau, 0.0, caps)

    if isinstance(descriptor, DiskSet):
        y = np.asarray(point, dtype=float)
        S = descriptor.radius

        def dual(nu):
            x = y / (1.0 + 2.0 * nu)
            return 0.5 * np.sum((x - y) ** 2) + nu * (np.sum(x * x) - S * S)

        nu = _maximize(dual, 0.0, float(np.linalg.norm(y)) / max(S, 1e-300) + 1.0)
        return y / (1.0 + 2.0 * nu)

    if isinstance(descriptor, SubstationSet):
        P_in, Q_in = (np.asarray(p, dtype=float) for p in point)
        w = np.asarray(descriptor.phase_mask, dtype=float)
        k = w.sum()
        S = descriptor.capacity

        def solve(nu):
            sP = w @ P_in / (1.0 + 2.0 * nu * k)
            sQ = w @ Q_in / (1.0 + 2.0 * nu * k)
            return P_in - 2.0 * nu * sP * w, Q_in - 2.0 * nu * sQ * w, sP, sQ

        def dual(nu):
            P, Q, sP, sQ = solve(nu)
            return 0.5 * np.sum((P - P_in) ** 2 + (Q - Q_in) ** 2) + nu * (sP**2 + sQ**2 - S * S)

        sigma = math.hypot(w @ P_in, w @ Q_in)
        nu = _maximize(dual, 0.0, sigma / max(S, 1e-300) + 1.0)
        P, Q, _, _ = solve(nu)
        return P, Q

    raise TypeError(f"unsupported set descriptor {type(descriptor).__name__}")


# Network-free problem


def _greedy_vertex(g: np.ndarray, caps: np.ndarray, needs: np.ndarray) -> np.ndarray:
    r = np.zeros_like(caps)
    for m in range(caps.shape[0]):
        remaining = needs[m]
        for t in np.argsort(g, kind="mergesort"):
            if remaining <= 0:
                break
            take = min(caps[m, t], remaining)
            r[m, t] = take
            remaining -= take
    return r


def _slot_costs(cost: CostModel, load: np.ndarray) -> Tuple[float, np.ndarray]:
    a, b, c = cost.coefficients(load.size)
    return float(np.sum(a * load**2 + b * load + c)), 2.0 * a * load + b


def kkt_certificate_unconstrained(
    fleet: Fleet, d: np.ndarray, cost: CostModel, profiles: np.ndarray
) -> Dict[str, float]:
    """
    Optimality residuals of profiles for the network-free problem.

    stationarity: per EV, how far the prices on slots that still receive
    charge exceed the prices on slots that could take more (zero at a KKT
    point); gap: the Frank-Wolfe gap; feasibility: worst box/budget violation.
    """
    profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
    d = np.asarray(d, dtype=float)
    if len(fleet) == 0:
        return {"stationarity": 0.0, "gap": 0.0, "feasibility": 0.0}
    _, g = _slot_costs(cost, d + profiles.sum(axis=0))
    caps, needs = fleet.caps, fleet.needs
    slack = 1e-7 * max(float(caps.max()), 1.0)
    stationarity = 0.0
    for m in range(len(fleet)):
        charged = profiles[m] > slack
        open_ = (profiles[m] < caps[m] - slack) & (caps[m] > 0)
        if charged.any() and open_.any():
            stationarity = max(stationarity, float(g[charged].max() - g[open_].min()))
    r = _greedy_vertex(g, caps, needs)
    gap = float(np.sum((profiles - r) @ g))
    box = float(np.max(np.maximum(np.maximum(-profiles, profiles - caps), 0.0)))
    budget = float(np.max(np.abs(profiles.sum(axis=1) - needs) / np.maximum(needs, 1.0)))
    return {"stationarity": max(stationarity, 0.0), "gap": gap, "feasibility": max(box, budget)}


def oracle_unconstrained(
    fleet: Fleet, d, cost: CostModel, options: Optional[OracleOptions] = None
) -> OracleReport:
    """
    Solve the network-free problem by FISTA with gradient restart.

    Stops once the Frank-Wolfe gap is below gap_tol * max(1, |cost|).

    Raises:
        OracleNotConverged: Only with options.strict and an uncertified answer
    """
    options = options or OracleOptions()
    d = np.asarray(d, dtype=float)
    M, T = len(fleet), fleet.T
    caps, needs = np.asarray(fleet.caps), np.asarray(fleet.needs)
    if M == 0:
        value, _ = _slot_costs(cost, d)
        return OracleReport(value, {"profiles": np.zeros((0, T))}, {"gap": 0.0}, 0, True)

    a, _, _ = cost.coefficients(T)
    curvature = 2.0 * float(a.max())
    if curvature == 0.0:
        _, g = _slot_costs(cost, d)
        x = _greedy_vertex(g, caps, needs)
        iterations = 1
    else:
        step = 1.0 / (M * curvature)
        totals = caps.sum(axis=1)
        x = caps * np.divide(needs, totals, out=np.zeros(M), where=totals > 0)[:, None]
        y, t_k = x.copy(), 1.0
        iterations = 0
        for iterations in range(1, options.max_iter + 1):
            _, g = _slot_costs(cost, d + y.sum(axis=0))
            moved = y - step * g[None, :]
            x_new = np.vstack([breakpoint_capped_simplex(moved[m], caps[m], needs[m]) for m in range(M)])
            if np.sum((y - x_new) * (x_new - x)) > 0:
                t_k = 1.0
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k))
            y = x_new + ((t_k - 1.0) / t_next) * (x_new - x)
            x, t_k = x_new, t_next
            if iterations % 10 == 0:
                value, g = _slot_costs(cost, d + x.sum(axis=0))
                gap = float(np.sum((x - _greedy_vertex(g, caps, needs)) @ g))
                if gap <= options.gap_tol * max(1.0, abs(value)):
                    break

    value, _ = _slot_costs(cost, d + x.sum(axis=0))
    certificate = kkt_certificate_unconstrained(fleet, d, cost, x)
    tol = options.gap_tol * max(1.0, abs(value))
    certified = certificate["gap"] <= tol and certificate["feasibility"] <= 1e-9
    report = OracleReport(value, {"profiles": x}, certificate, iterations, certified, {"gap": tol})
    logger.info("Unconstrained oracle: value %.12g after %d iterations (gap %.2e)", value, iterations, certificate["gap"])
    if options.strict and not certified:
        raise OracleNotConverged(f"oracle gap {certificate['gap']:.3e} above {tol:.3e}")
    return report


# Network-constrained problem


class _Layout:
    """Index map of the stacked variable vector."""

    def __init__(self, feeder: FeederModel, fleet: Fleet, T: int):
        self.B, self.T, self.M = feeder.n_buses, T, len(fleet)
        self.index: Dict[str, np.ndarray] = {}
        count = 0
        for kind in ("v", "pg", "qg", "P", "Q"):
            idx = -np.ones((self.B, 3, T), dtype=int)
            for n in range(self.B):
                for i in range(3):
                    if feeder.mask[n, i]:
                        idx[n, i] = np.arange(count, count + T)
                        count += T
            self.index[kind] = idx
        self.e_start = count
        self.size = count + self.M * T

    def e_slice(self, m: int) -> slice:
        return slice(self.e_start + m * self.T, self.e_start + (m + 1) * self.T)

    def unpack(self, x: np.ndarray) -> Dict[str, np.ndarray]:
        out = {}
        for kind, idx in self.index.items():
            arr = np.zeros(idx.shape)
            present = idx >= 0
            arr[present] = x[idx[present]]
            out[kind] = arr
        out["profiles"] = x[self.e_start :].reshape(self.M, self.T)
        return out


class _NetworkProblem:
    def __init__(self, feeder: FeederModel, fleet: Fleet, d: np.ndarray, qd: np.ndarray):
        self.feeder, self.fleet = feeder, fleet
        T = d.shape[2]
        self.layout = layout = _Layout(feeder, fleet, T)
        idx = layout.index
        Zb = 2.0 * ALPHA[None, :, None] * np.conj(feeder.Z) * np.conj(ALPHA)[None, None, :]

        evs: Dict[Tuple[int, int], List[int]] = {}
        for m, req in enumerate(fleet.requests):
            evs.setdefault((req.bus, "abc".index(req.phase)), []).append(m)

        rows, cols, vals, rhs = [], [], [], []

        def add(row_terms, value):
            r = len(rhs)
            for c, coef in row_terms:
                rows.append(r)
                cols.append(c)
                vals.append(coef)
            rhs.append(value)

        kids = [[k for k in range(1, feeder.n_buses) if feeder.parent[k] == n] for n in range(feeder.n_buses)]
        for n in range(feeder.n_buses):
            for i in range(3):
                if not feeder.mask[n, i]:
                    continue
                for t in range(T):
                    terms = [(idx["pg"][n, i, t], 1.0), (idx["P"][n, i, t], 1.0)]
                    terms += [(idx["P"][k, i, t], -1.0) for k in kids[n] if feeder.mask[k, i]]
                    terms += [(layout.e_start + m * T + t, -1.0) for m in evs.get((n, i), [])]
                    add(terms, d[n, i, t])
                    terms = [(idx["qg"][n, i, t], 1.0), (idx["Q"][n, i, t], 1.0)]
                    terms += [(idx["Q"][k, i, t], -1.0) for k in kids[n] if feeder.mask[k, i]]
                    add(terms, qd[n, i, t])
                    if n == 0:
                        continue
                    parent = int(feeder.parent[n])
                    terms = [(idx["v"][parent, i, t], 1.0), (idx["v"][n, i, t], -1.0)]
                    for j in range(3):
                        if feeder.mask[n, j]:
                            terms.append((idx["P"][n, j, t], -Zb[n, i, j].real))
                            terms.append((idx["Q"][n, j, t], Zb[n, i, j].imag))
                    add(terms, 0.0)

        self.A = np.zeros((len(rhs), layout.size))
        np.add.at(self.A, (np.array(rows, dtype=int), np.array(cols, dtype=int)), np.array(vals))
        self.b = np.array(rhs)

        # diagonal quadratic objective sum q x^2 + l x + const
        self.q = np.zeros(layout.size)
        self.l = np.zeros(layout.size)
        self.const = 0.0
        for i in range(3):
            if feeder.mask[0, i]:
                self.q[idx["P"][0, i]] = feeder.f0.a
                self.l[idx["P"][0, i]] = feeder.f0.b
        for n in range(feeder.n_buses):
            if not feeder.has_gen[n]:
                continue
            for i in range(3):
                if feeder.mask[n, i]:
                    self.q[idx["pg"][n, i]] = feeder.gen_cost["a"][n, i]
                    self.l[idx["pg"][n, i]] = feeder.gen_cost["b"][n, i]
                    self.const += feeder.gen_cost["c"][n, i] * T

        lo = np.full(layout.size, -np.inf)
        hi = np.full(layout.size, np.inf)
        for n in range(feeder.n_buses):
            for i in range(3):
                if not feeder.mask[n, i]:
                    continue
                v_lo, v_hi = (feeder.v0, feeder.v0) if n == 0 else (feeder.v_min[n], feeder.v_max[n])
                lo[idx["v"][n, i]], hi[idx["v"][n, i]] = v_lo, v_hi
                lo[idx["pg"][n, i]] = feeder.gen_box["pmin"][n, i]
                hi[idx["pg"][n, i]] = feeder.gen_box["pmax"][n, i]
                lo[idx["qg"][n, i]] = feeder.gen_box["qmin"][n, i]
                hi[idx["qg"][n, i]] = feeder.gen_box["qmax"][n, i]
        self.lo, self.hi = lo, hi
        self.P0 = np.array([idx["P"][0, i] for i in range(3) if feeder.mask[0, i]])
        self.Q0 = np.array([idx["Q"][0, i] for i in range(3) if feeder.mask[0, i]])

    def objective(self, x: np.ndarray) -> float:
        return float(np.sum(self.q * x * x + self.l * x) + self.const)

    def cap(self, x: np.ndarray) -> np.ndarray:
        """(1^T P0)^2 + (1^T Q0)^2 - Sf^2 per slot."""
        sP = x[self.P0].sum(axis=0)
        sQ = x[self.Q0].sum(axis=0)
        return sP**2 + sQ**2 - self.feeder.sf_max**2

    def project(self, x: np.ndarray) -> np.ndarray:
        out = np.clip(x, self.lo, self.hi)
        idx = self.layout.index
        for n in range(1, self.feeder.n_buses):
            S = self.feeder.s_max[n]
            if not np.isfinite(S):
                continue
            for i in range(3):
                if not self.feeder.mask[n, i]:
                    continue
                p, q = out[idx["P"][n, i]], out[idx["Q"][n, i]]
                norm = np.sqrt(p * p + q * q)
                over = norm > S
                factor = np.ones_like(norm)
                factor[over] = S / norm[over]
                out[idx["P"][n, i]] = p * factor
                out[idx["Q"][n, i]] = q * factor
        caps, needs = self.fleet.caps, self.fleet.needs
        for m in range(len(self.fleet)):
            s = self.layout.e_slice(m)
            out[s] = breakpoint_capped_simplex(x[s], caps[m], needs[m])
        return out

    def lagrangian(self, x, pi, nu, rho) -> Tuple[float, np.ndarray]:
        h = self.A @ x - self.b
        g = self.cap(x)
        shifted = np.maximum(0.0, nu + rho * g)
        value = self.objective(x) - pi @ h + 0.5 * rho * h @ h + np.sum(shifted**2 - nu**2) / (2.0 * rho)
        grad = 2.0 * self.q * x + self.l + self.A.T @ (rho * h - pi)
        sP = x[self.P0].sum(axis=0)
        sQ = x[self.Q0].sum(axis=0)
        grad[self.P0] += 2.0 * shifted * sP
        grad[self.Q0] += 2.0 * shifted * sQ
        return float(value), grad


def _inner_fista(problem: _NetworkProblem, x, pi, nu, rho, tol: float, max_iter: int) -> Tuple[np.ndarray, int, float]:
    L = 1.0
    y, t_k = x.copy(), 1.0
    residual = math.inf
    for it in range(1, max_iter + 1):
        f_y, g_y = problem.lagrangian(y, pi, nu, rho)
        while True:
            x_new = problem.project(y - g_y / L)
            diff = x_new - y
            f_new, _ = problem.lagrangian(x_new, pi, nu, rho)
            if f_new <= f_y + g_y @ diff + 0.5 * L * diff @ diff + 1e-12 * max(1.0, abs(f_y)):
                break
            L *= 2.0
        if np.sum((y - x_new) * (x_new - x)) > 0:
            t_k = 1.0
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k))
        y = x_new + ((t_k - 1.0) / t_next) * (x_new - x)
        x, t_k = x_new, t_next
        L = max(L * 0.9, 1e-8)
        if it % 20 == 0:
            _, g_x = problem.lagrangian(x, pi, nu, rho)
            residual = float(np.max(np.abs(x - problem.project(x - g_x))))
            if residual <= tol:
                return x, it, residual
    _, g_x = problem.lagrangian(x, pi, nu, rho)
    residual = float(np.max(np.abs(x - problem.project(x - g_x))))
    return x, max_iter, residual


def oracle_network(
    feeder: FeederModel,
    fleet: Fleet,
    d: np.ndarray,
    qd: np.ndarray,
    options: Optional[OracleOptions] = None,
) -> OracleReport:
    """
    Solve the network-constrained problem centrally.

    Augmented Lagrangian on the flow equalities and the feeder capacity,
    projected FISTA over boxes, line disks and capped simplices inside.

    Raises:
        OracleNotConverged: Only with options.strict and an uncertified answer
    """
    options = options or OracleOptions()
    d = np.asarray(d, dtype=float) * feeder.mask[:, :, None]
    qd = np.asarray(qd, dtype=float) * feeder.mask[:, :, None]
    problem = _NetworkProblem(feeder, fleet, d, qd)
    x = problem.project(np.zeros(problem.layout.size))
    pi = np.zeros(len(problem.b))
    nu = np.zeros(d.shape[2])
    rho = options.rho_init
    omega, eta = 1e-3, 1e-2
    total = 0
    feasibility = stationarity = math.inf

    for outer in range(options.max_outer):
        x, used, stationarity = _inner_fista(
            problem, x, pi, nu, rho, max(omega, options.stat_tol), options.max_iter // options.max_outer
        )
        total += used
        h = problem.A @ x - problem.b
        g = problem.cap(x)
        feasibility = max(float(np.max(np.abs(h))) if h.size else 0.0, float(np.max(np.maximum(g, 0.0))))
        logger.debug("AL round %d: rho %g feasibility %.2e stationarity %.2e", outer, rho, feasibility, stationarity)
        if feasibility <= options.feas_tol and stationarity <= options.stat_tol:
            break
        if feasibility <= eta:
            pi = pi - rho * h
            nu = np.maximum(0.0, nu + rho * g)
            eta = max(eta * 0.1, options.feas_tol * 0.1)
            omega = max(omega * 0.1, options.stat_tol)
        else:
            rho = min(rho * 10.0, options.rho_max)

    certified = feasibility <= options.feas_tol and stationarity <= options.stat_tol
    value = problem.objective(x)
    optimizer = problem.layout.unpack(x)
    certificate = {"feasibility": feasibility, "stationarity": stationarity}
    logger.info("Network oracle: value %.10g, feasibility %.2e, stationarity %.2e", value, feasibility, stationarity)
    if options.strict and not certified:
        raise OracleNotConverged(
            f"network oracle stopped at feasibility {feasibility:.2e}, stationarity {stationarity:.2e}"
        )
    return OracleReport(
        value,
        optimizer,
        certificate,
        total,
        certified,
        {"feasibility": options.feas_tol, "stationarity": options.stat_tol},
    )
