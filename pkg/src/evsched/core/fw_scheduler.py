#!/usr/bin/env python3
"""
Decentralized Frank-Wolfe charging scheduler

The charging center broadcasts the price ordering of the common gradient,
every EV controller answers with its greedy vertex of the capped simplex, and
the profiles move along the convex combination. Aggregation can be simulated
over a tree of controllers rooted at the center.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from .errors import (
    DisconnectedTree,
    LengthMismatch,
    MaxIterExceeded,
    NonFiniteGradient,
)
from .fleet import ChargingRequest, CostModel, Fleet, caps_vector, validate_request

logger = logging.getLogger(__name__)

CENTER = "center"
NO_PROGRESS_TOL = 1e-9
GAP_FLOOR = 1e-13


@dataclass(frozen=True)
class PriceOrdering:
    """Slots sorted by increasing price, stored 0-based."""

    order: np.ndarray

    @property
    def permutation(self) -> Tuple[int, ...]:
        """The ordering as 1-based slot indices (t_1, ..., t_T)."""
        return tuple(int(t) + 1 for t in self.order)

    def __len__(self) -> int:
        return len(self.order)


def common_gradient(d: np.ndarray, aggregate: np.ndarray, cost: CostModel) -> np.ndarray:
    """
    Gradient shared by every EV: g(t) = C_t'(d(t) + aggregate(t)).

    Raises:
        LengthMismatch: If d and aggregate differ in length
    """
    d = np.asarray(d, dtype=float)
    aggregate = np.asarray(aggregate, dtype=float)
    if d.shape != aggregate.shape:
        raise LengthMismatch(
            f"base load has {d.size} slots, aggregate has {aggregate.size}"
        )
    return cost.derivative(d + aggregate)


def sort_prices(g: np.ndarray) -> PriceOrdering:
    """
    Sort slots by increasing price; ties keep ascending slot order.

    Raises:
        NonFiniteGradient: If g holds NaN or infinity
    """
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("price vector has non-finite entries")
    return PriceOrdering(np.argsort(g, kind="stable"))


def _greedy_fill(caps_sorted: np.ndarray, needs: np.ndarray) -> np.ndarray:
    # full caps before the pivot, the remainder at the pivot, zero after
    filled_before = np.cumsum(caps_sorted, axis=-1) - caps_sorted
    return np.clip(needs[..., None] - filled_before, 0.0, caps_sorted)


def lmo_greedy(req: ChargingRequest, ordering: PriceOrdering) -> np.ndarray:
    """
    Minimize r^T g over the request's feasible set, given only the price order.

    Args:
        req: The charging request
        ordering: Slots in increasing price order

    Returns:
        The greedy profile r_m of length T

    Raises:
        EmptyFeasibleSet: If the request cannot be met
    """
    T = len(ordering)
    validate_request(req, T)
    caps = caps_vector(req, T)
    r = np.zeros(T)
    r[ordering.order] = _greedy_fill(caps[ordering.order], np.asarray(req.energy_need))
    return r


def lmo_fleet(caps: np.ndarray, needs: np.ndarray, ordering: PriceOrdering) -> np.ndarray:
    """Greedy vertices for every EV at once (rows of caps, entries of needs)."""
    r = np.zeros_like(caps, dtype=float)
    if caps.size:
        r[:, ordering.order] = _greedy_fill(caps[:, ordering.order], needs)
    return r


def step_size(k: int) -> float:
    """Open-loop step 2/(k+2)."""
    return 2.0 / (k + 2.0)


def fw_step(e: np.ndarray, r: np.ndarray, k: int, eta: Optional[float] = None) -> np.ndarray:
    """Convex combination (1 - eta) e + eta r, eta = 2/(k+2) unless given."""
    if eta is None:
        eta = step_size(k)
    return (1.0 - eta) * np.asarray(e, dtype=float) + eta * np.asarray(r, dtype=float)


def duality_gap(g: np.ndarray, profiles: np.ndarray, lmo_profiles: np.ndarray) -> float:
    """Frank-Wolfe gap sum_m g^T (e_m - r_m)."""
    diff = np.atleast_2d(profiles) - np.atleast_2d(lmo_profiles)
    if diff.size == 0:
        return 0.0
    return float(np.sum(diff @ np.asarray(g, dtype=float)))


@dataclass
class AggregationTree:
    """Communication tree over the center and the EV controllers."""

    graph: nx.Graph
    root: str = CENTER

    @classmethod
    def star(cls, ids: Sequence[str]) -> "AggregationTree":
        graph = nx.Graph()
        graph.add_node(CENTER)
        graph.add_edges_from((CENTER, i) for i in ids)
        return cls(graph)

    @classmethod
    def chain(cls, ids: Sequence[str]) -> "AggregationTree":
        graph = nx.Graph()
        graph.add_node(CENTER)
        nx.add_path(graph, [CENTER, *ids])
        return cls(graph)

    @classmethod
    def random(cls, ids: Sequence[str], rng: np.random.Generator) -> "AggregationTree":
        """Random recursive tree: each EV attaches to an earlier node."""
        graph = nx.Graph()
        nodes = [CENTER]
        graph.add_node(CENTER)
        for i in ids:
            graph.add_edge(nodes[int(rng.integers(len(nodes)))], i)
            nodes.append(i)
        return cls(graph)

    def check(self, ids: Sequence[str]) -> List[str]:
        """
        Verify the tree spans every EV from the center.

        Returns:
            EV ids whose message the center receives unaggregated

        Raises:
            DisconnectedTree: On cycles, unreachable EVs or unknown nodes
        """
        missing = [i for i in ids if i not in self.graph]
        if missing:
            raise DisconnectedTree(f"EVs {missing[:5]} are not in the aggregation tree")
        if self.root not in self.graph or not nx.is_tree(self.graph):
            raise DisconnectedTree("aggregation graph is not a tree rooted at the center")
        extra = set(self.graph.nodes) - set(ids) - {self.root}
        if extra:
            raise DisconnectedTree(f"unknown nodes in aggregation tree: {sorted(extra)[:5]}")
        return sorted(
            str(n) for n in self.graph.neighbors(self.root) if self.graph.degree(n) == 1
        )

    def post_order(self) -> List[Tuple[str, List[str]]]:
        """(node, children) pairs with every child listed before its parent."""
        tree = nx.bfs_tree(self.graph, self.root)
        pairs = []
        for node in nx.dfs_postorder_nodes(tree, self.root):
            pairs.append((node, sorted(tree.successors(node), key=str)))
        return pairs


def aggregate_over_tree(
    tree: AggregationTree,
    profiles: np.ndarray,
    ids: Sequence[str],
    warn: bool = True,
) -> np.ndarray:
    """
    Sum profiles bottom-up: every node forwards its own profile plus its
    children's messages, so the center only sees subtree sums.

    Raises:
        DisconnectedTree: If the tree does not span every EV
    """
    exposed = tree.check(ids)
    if warn and exposed:
        logger.warning(
            "Privacy: center receives unaggregated profiles from %d EVs (%s)",
            len(exposed),
            ", ".join(exposed[:5]),
        )
    return _accumulate(tree, np.atleast_2d(profiles), ids)


def _accumulate(tree: AggregationTree, profiles: np.ndarray, ids: Sequence[str]) -> np.ndarray:
    index = {ev: m for m, ev in enumerate(ids)}
    T = profiles.shape[1] if profiles.ndim == 2 else 0
    messages: Dict[str, np.ndarray] = {}
    for node, children in tree.post_order():
        message = profiles[index[node]].copy() if node in index else np.zeros(T)
        for child in children:
            message = message + messages.pop(child)
        messages[node] = message
    return messages[tree.root]


class FwOptions(BaseModel):
    """Stopping and step options for the Frank-Wolfe scheduler."""

    max_iter: int = Field(default=100_000, gt=0)
    eps: Optional[float] = Field(default=1e-7, ge=0)
    gap_tol: Optional[float] = Field(default=None, ge=0)
    step_rule: Literal["open-loop", "line-search"] = "open-loop"
    log_every: int = Field(default=1000, gt=0)


@dataclass(frozen=True)
class FwRecord:
    k: int
    cost: float
    gap: float
    eta: float


@dataclass
class FwTrace:
    """Per-iteration records: cost after the step, gap before it, step size."""

    records: List[FwRecord] = field(default_factory=list)

    def append(self, k: int, cost: float, gap: float, eta: float) -> None:
        self.records.append(FwRecord(k, cost, gap, eta))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.records])

    def to_frame(self, every: int = 1) -> pd.DataFrame:
        """Trace as a DataFrame with columns iter, cost, gap, eta."""
        rows = self.records[::every]
        if self.records and rows[-1] is not self.records[-1]:
            rows = rows + [self.records[-1]]
        return pd.DataFrame(
            {
                "iter": [r.k for r in rows],
                "cost": [r.cost for r in rows],
                "gap": [r.gap for r in rows],
                "eta": [r.eta for r in rows],
            }
        )


@dataclass
class FwResult:
    profiles: np.ndarray
    trace: FwTrace
    converged: bool
    iterations: int
    cost: float
    gap: float
    stop_reason: str

    def raise_for_status(self) -> "FwResult":
        if not self.converged:
            raise MaxIterExceeded(
                f"Frank-Wolfe stopped after {self.iterations} iterations "
                f"(gap {self.gap:.3e})",
                result=self,
            )
        return self


def _check_base_load(d, T: int) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.shape != (T,):
        raise LengthMismatch(f"base load has {d.size} entries, horizon is {T}")
    if not np.all(np.isfinite(d)):
        raise ValueError("base load must be finite")
    return d


def schedule(
    fleet: Fleet,
    d,
    cost: CostModel,
    options: Optional[FwOptions] = None,
    initial: Optional[np.ndarray] = None,
    tree: Optional[AggregationTree] = None,
) -> FwResult:
    """
    Run the decentralized Frank-Wolfe protocol.

    Starts from all-zero profiles (or a warm start) and repeats: common
    gradient, price ordering, per-EV greedy vertex, convex combination,
    aggregation. Stops when the gap drops to gap_tol, the relative cost change
    drops to eps, or max_iter steps were taken.

    Args:
        fleet: Validated charging requests
        d: Base load d(1..T); may carry offsets when used as an inner solver
        cost: Slot cost model
        options: Stopping and step options
        initial: Optional warm-start profiles (M x T)
        tree: Optional aggregation tree over the fleet ids

    Returns:
        FwResult with feasible profiles whenever at least one step was taken
    """
    options = options or FwOptions()
    T = fleet.T
    d = _check_base_load(d, T)
    M = len(fleet)

    if M == 0:
        base = float(np.sum(cost.value(d)))
        return FwResult(np.zeros((0, T)), FwTrace(), True, 0, base, 0.0, "empty fleet")

    if tree is not None:
        exposed = tree.check(fleet.ids)
        if exposed:
            logger.warning(
                "Privacy: center receives unaggregated profiles from %d EVs", len(exposed)
            )

    def aggregate(profiles: np.ndarray) -> np.ndarray:
        if tree is None:
            return profiles.sum(axis=0)
        return _accumulate(tree, profiles, fleet.ids)

    if initial is not None:
        e = np.array(initial, dtype=float)
        if e.shape != fleet.caps.shape:
            raise LengthMismatch(f"warm start has shape {e.shape}, expected {fleet.caps.shape}")
        feasible = fleet.is_feasible(e)
        if not feasible:
            logger.debug("Warm start is not feasible; first step is a full step")
    else:
        e = np.zeros_like(fleet.caps)
        feasible = False

    trace = FwTrace()
    agg = aggregate(e)
    current_cost = float(np.sum(cost.value(d + agg)))
    gap = math.nan
    converged = False
    stop_reason = "max_iter"
    rises = 0
    k = 0

    while k < options.max_iter:
        g = common_gradient(d, agg, cost)
        r = lmo_fleet(fleet.caps, fleet.needs, sort_prices(g))
        gap = duality_gap(g, e, r) if feasible else math.nan

        if feasible:
            floor = GAP_FLOOR * max(1.0, abs(current_cost))
            if gap <= floor or (options.gap_tol is not None and gap <= options.gap_tol):
                converged, stop_reason = True, "duality gap"
                break

        if not feasible:
            eta = 1.0
        elif options.step_rule == "line-search":
            eta = cost.line_minimizer(d + agg, aggregate(r) - agg)
        else:
            eta = step_size(k)

        e = fw_step(e, r, k, eta)
        agg = aggregate(e)
        new_cost = float(np.sum(cost.value(d + agg)))
        trace.append(k, new_cost, gap, eta)
        k += 1

        if feasible and new_cost > current_cost + NO_PROGRESS_TOL:
            rises += 1
            log = logger.warning if rises == 1 else logger.debug
            log("NoProgress: cost rose from %.10g to %.10g at iteration %d",
                current_cost, new_cost, k)

        change = abs(new_cost - current_cost) / max(abs(current_cost), 1e-300)
        was_feasible = feasible
        feasible = True
        current_cost = new_cost

        if k % options.log_every == 0:
            logger.debug("FW iteration %d: cost %.10g gap %.3e", k, new_cost, gap)

        if was_feasible and options.eps is not None and change <= options.eps:
            converged, stop_reason = True, "relative cost change"
            break

    if stop_reason != "duality gap":
        g = common_gradient(d, agg, cost)
        gap = duality_gap(g, e, lmo_fleet(fleet.caps, fleet.needs, sort_prices(g)))

    if converged:
        logger.info("FW converged after %d iterations (%s), cost %.10g", k, stop_reason, current_cost)
    else:
        logger.warning("FW hit max_iter=%d with gap %.3e", options.max_iter, gap)

    return FwResult(e, trace, converged, k, current_cost, gap, stop_reason)
