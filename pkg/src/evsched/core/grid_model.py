#!/usr/bin/env python3
"""
Linearized unbalanced feeder model

Parses the feeder JSON schema into compiled numpy arrays and evaluates the
lossless multiphase flow equations: power balance per bus and the voltage
drop v_parent - v_n = Re{Zbar_n (P_n + j Q_n)} per line. Arrays are laid out
(bus, phase, slot) with phases a, b, c; absent phases are masked to zero.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import DimensionMismatch, FeederParseError, FeederValidationError, ParseError

logger = logging.getLogger(__name__)

PHASES = "abc"
ALPHA = np.exp(-2j * np.pi / 3) ** np.arange(3)
SCHEMA_VERSION = 1
SYMMETRY_TOL = 1e-12

PerPhase = Union[float, List[float]]


class ComplexEntry(BaseModel):
    re: float = 0.0
    im: float = 0.0


class GenerationRecord(BaseModel):
    """Dispatchable generation box and quadratic cost, scalar or per phase."""

    pmin: PerPhase = 0.0
    pmax: PerPhase = 0.0
    qmin: PerPhase = 0.0
    qmax: PerPhase = 0.0
    a: PerPhase = 0.0
    b: PerPhase = 0.0
    c: PerPhase = 0.0


class BusRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: int = Field(ge=0)
    parent: Optional[int] = None
    phases: str
    z: Optional[List[List[ComplexEntry]]] = None
    v_min_pu2: float = Field(default=0.9025, gt=0)
    v_max_pu2: float = Field(default=1.1025, gt=0)
    s_line_max_pu: Optional[float] = Field(default=None, gt=0)
    gen: Optional[GenerationRecord] = None

    @field_validator("phases")
    @classmethod
    def _phase_subset(cls, value: str) -> str:
        value = value.lower()
        if not value or set(value) - set(PHASES) or len(set(value)) != len(value):
            raise ValueError(f"phases must be a non-empty subset of 'abc', got '{value}'")
        return "".join(p for p in PHASES if p in value)


class BaseValues(BaseModel):
    kva: float = Field(gt=0)
    kv: float = Field(gt=0)


class SupplyCost(BaseModel):
    """Substation supply cost sum over phases of a P0^2 + b P0."""

    a: float = Field(default=1.0, ge=0)
    b: float = 0.0


class FeederFile(BaseModel):
    """Feeder JSON document."""

    version: Literal[1] = SCHEMA_VERSION
    base: BaseValues
    sf_max_pu: float = Field(gt=0)
    v0_pu2: float = Field(default=1.0, gt=0)
    f0: SupplyCost = SupplyCost()
    provenance: Optional[Any] = None
    buses: List[BusRecord]


def zbar(Z: np.ndarray) -> np.ndarray:
    """Linearized impedance 2 diag(alpha) conj(Z) diag(conj(alpha))."""
    Z = np.asarray(Z, dtype=complex)
    return 2.0 * ALPHA[:, None] * np.conj(Z) * np.conj(ALPHA)[None, :]


def _per_phase(value: PerPhase, name: str, bus: int) -> np.ndarray:
    if isinstance(value, list):
        if len(value) != 3:
            raise FeederValidationError(f"gen.{name} needs 3 entries", location=f"bus {bus}")
        return np.asarray(value, dtype=float)
    return np.full(3, float(value))


@dataclass(frozen=True)
class FeederModel:
    """Compiled radial feeder; line n connects parent[n] to bus n."""

    record: FeederFile
    parent: np.ndarray
    children: Tuple[Tuple[int, ...], ...]
    order: np.ndarray
    mask: np.ndarray
    Z: np.ndarray
    Zbar: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    s_max: np.ndarray
    has_gen: np.ndarray
    gen_box: Dict[str, np.ndarray] = field(repr=False)
    gen_cost: Dict[str, np.ndarray] = field(repr=False)

    @property
    def n_buses(self) -> int:
        return len(self.parent)

    @property
    def N(self) -> int:
        """Number of non-substation buses."""
        return len(self.parent) - 1

    @property
    def v0(self) -> float:
        return self.record.v0_pu2

    @property
    def sf_max(self) -> float:
        return self.record.sf_max_pu

    @property
    def base_kva(self) -> float:
        return self.record.base.kva

    @property
    def f0(self) -> SupplyCost:
        return self.record.f0

    def phases(self, n: int) -> str:
        return "".join(PHASES[i] for i in range(3) if self.mask[n, i])

    def phase_counts(self) -> Dict[str, int]:
        return {p: int(self.mask[:, i].sum()) for i, p in enumerate(PHASES)}

    def graph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.n_buses))
        graph.add_edges_from((int(self.parent[n]), n) for n in range(1, self.n_buses))
        return graph

    def zeros(self, T: int) -> np.ndarray:
        return np.zeros((self.n_buses, 3, T))


def compile_feeder(record: FeederFile) -> FeederModel:
    """
    Validate the structure of a feeder document and compile its arrays.

    Raises:
        FeederValidationError: With the offending bus in the message
    """
    buses = sorted(record.buses, key=lambda b: b.id)
    ids = [b.id for b in buses]
    if ids != list(range(len(buses))):
        raise FeederValidationError(f"bus ids must be exactly 0..{len(buses) - 1}")
    if buses[0].parent is not None:
        raise FeederValidationError("substation must have parent null", location="bus 0")

    graph = nx.Graph()
    graph.add_nodes_from(ids)
    for bus in buses[1:]:
        if bus.parent is None:
            raise FeederValidationError("only the substation may lack a parent", location=f"bus {bus.id}")
        if bus.parent not in graph or bus.parent == bus.id:
            raise FeederValidationError(f"unknown parent {bus.parent}", location=f"bus {bus.id}")
        if graph.has_edge(bus.id, bus.parent):
            raise FeederValidationError("not a tree", location=f"bus {bus.id}")
        graph.add_edge(bus.parent, bus.id)
    if not nx.is_tree(graph):
        cycle = nx.find_cycle(graph) if not nx.is_forest(graph) else None
        raise FeederValidationError("not a tree", location=f"edges {cycle}" if cycle else None)

    B = len(buses)
    parent = np.array([-1] + [b.parent for b in buses[1:]], dtype=int)
    children = tuple(tuple(sorted(b.id for b in buses if b.parent == n)) for n in range(B))
    order = np.array([0] + [v for _, v in nx.bfs_edges(graph, 0, sort_neighbors=sorted)], dtype=int)

    mask = np.zeros((B, 3), dtype=bool)
    for bus in buses:
        mask[bus.id] = [p in bus.phases for p in PHASES]
    for bus in buses[1:]:
        if not set(bus.phases) <= set(buses[bus.parent].phases):
            raise FeederValidationError(
                f"phases '{bus.phases}' not carried by parent {bus.parent} "
                f"('{buses[bus.parent].phases}')",
                location=f"bus {bus.id}",
            )

    Z = np.zeros((B, 3, 3), dtype=complex)
    for bus in buses:
        if bus.z is None:
            if bus.id != 0:
                raise FeederValidationError("line impedance z is required", location=f"bus {bus.id}")
            continue
        if len(bus.z) != 3 or any(len(row) != 3 for row in bus.z):
            raise FeederValidationError("z must be 3x3", location=f"bus {bus.id}")
        Zn = np.array([[complex(e.re, e.im) for e in row] for row in bus.z])
        if not np.allclose(Zn, Zn.T, rtol=0.0, atol=SYMMETRY_TOL * max(1.0, np.abs(Zn).max())):
            raise FeederValidationError("z is not symmetric", location=f"bus {bus.id}")
        absent = ~mask[bus.id]
        if np.any(Zn[absent, :] != 0) or np.any(Zn[:, absent] != 0):
            raise FeederValidationError("z has entries on absent phases", location=f"bus {bus.id}")
        Z[bus.id] = Zn

    v_min = np.array([b.v_min_pu2 for b in buses])
    v_max = np.array([b.v_max_pu2 for b in buses])
    bad = np.flatnonzero(v_min >= v_max)
    if bad.size:
        raise FeederValidationError("v_min_pu2 must be below v_max_pu2", location=f"bus {int(bad[0])}")
    s_max = np.array([np.inf if b.s_line_max_pu is None else b.s_line_max_pu for b in buses])

    gen_box = {k: np.zeros((B, 3)) for k in ("pmin", "pmax", "qmin", "qmax")}
    gen_cost = {k: np.zeros((B, 3)) for k in ("a", "b", "c")}
    has_gen = np.zeros(B, dtype=bool)
    for bus in buses:
        if bus.gen is None:
            continue
        has_gen[bus.id] = True
        for key in gen_box:
            gen_box[key][bus.id] = _per_phase(getattr(bus.gen, key), key, bus.id) * mask[bus.id]
        for key in gen_cost:
            gen_cost[key][bus.id] = _per_phase(getattr(bus.gen, key), key, bus.id) * mask[bus.id]
        if np.any(gen_cost["a"][bus.id] < 0):
            raise FeederValidationError("generation cost a must be >= 0", location=f"bus {bus.id}")
        if np.any(gen_box["pmin"][bus.id] > gen_box["pmax"][bus.id]) or np.any(
            gen_box["qmin"][bus.id] > gen_box["qmax"][bus.id]
        ):
            raise FeederValidationError("generation box is empty", location=f"bus {bus.id}")

    Zbar = np.stack([zbar(Zn) for Zn in Z]) if B else np.zeros((0, 3, 3), dtype=complex)
    model = FeederModel(
        record=record,
        parent=parent,
        children=children,
        order=order,
        mask=mask,
        Z=Z,
        Zbar=Zbar,
        v_min=v_min,
        v_max=v_max,
        s_max=s_max,
        has_gen=has_gen,
        gen_box=gen_box,
        gen_cost=gen_cost,
    )
    for arr in (parent, order, mask, Z, Zbar, v_min, v_max, s_max, has_gen):
        arr.flags.writeable = False
    return model


def feeder_from_dict(payload: Dict) -> FeederModel:
    """Parse and validate a decoded feeder document."""
    try:
        record = FeederFile.model_validate(payload)
    except ValidationError as e:
        raise FeederParseError(f"feeder does not match schema version {SCHEMA_VERSION}: {e}") from e
    if not record.buses:
        raise FeederParseError("feeder has no buses")
    return compile_feeder(record)


def parse_feeder(path: Union[str, Path]) -> FeederModel:
    """
    Read a feeder JSON file.

    Raises:
        FeederParseError: If the file is unreadable or off-schema
        FeederValidationError: If the network violates a structural rule
    """
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FeederParseError(f"cannot read feeder {path}: {e}") from e
    feeder = feeder_from_dict(payload)
    logger.info("Loaded feeder %s: %d buses, phases %s", path, feeder.n_buses, feeder.phase_counts())
    return feeder


def dump_feeder(record: FeederFile, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(record.model_dump(exclude_none=True), indent=2) + "\n")


@dataclass
class GridState:
    """Squared voltages, injections and line flows, each (bus, phase, slot)."""

    v: np.ndarray
    pg: np.ndarray
    qg: np.ndarray
    pd: np.ndarray
    qd: np.ndarray
    P: np.ndarray
    Q: np.ndarray

    @classmethod
    def zeros(cls, feeder: FeederModel, T: int) -> "GridState":
        return cls(*(feeder.zeros(T) for _ in range(7)))

    @property
    def T(self) -> int:
        return self.v.shape[2]

    def check(self, feeder: FeederModel) -> None:
        shape = (feeder.n_buses, 3)
        for name in ("v", "pg", "qg", "pd", "qd", "P", "Q"):
            arr = getattr(self, name)
            if arr.ndim != 3 or arr.shape[:2] != shape or arr.shape[2] != self.T:
                raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {shape + (self.T,)}")

    def to_dict(self) -> Dict[str, list]:
        return {name: getattr(self, name).tolist() for name in ("v", "pg", "qg", "pd", "qd", "P", "Q")}


def children_sum(feeder: FeederModel, flows: np.ndarray) -> np.ndarray:
    """sum over k in children(n) of flows[k], for every bus n."""
    total = np.zeros_like(flows)
    if feeder.n_buses > 1:
        np.add.at(total, feeder.parent[1:], flows[1:])
    return total


def voltage_drop(feeder: FeederModel, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Re{Zbar_n (P_n + j Q_n)} = Re(Zbar) P - Im(Zbar) Q for every line."""
    return np.einsum("nij,njt->nit", feeder.Zbar.real, P) - np.einsum("nij,njt->nit", feeder.Zbar.imag, Q)


def flow_residuals(feeder: FeederModel, state: GridState, t: Optional[int] = None) -> Dict[str, np.ndarray]:
    """
    Residuals of the linearized flow equations.

    Args:
        feeder: Compiled feeder
        state: Grid state to check
        t: 0-based slot, or None for every slot

    Returns:
        Dict with 'p', 'q' and 'v' residual arrays; absent phases and the
        substation voltage row are zero

    Raises:
        DimensionMismatch: If the state does not match the feeder
    """
    state.check(feeder)
    mask = feeder.mask[:, :, None]
    p = state.pg - state.pd
    q = state.qg - state.qd
    res_p = (p - (children_sum(feeder, state.P) - state.P)) * mask
    res_q = (q - (children_sum(feeder, state.Q) - state.Q)) * mask
    res_v = np.zeros_like(state.v)
    if feeder.n_buses > 1:
        drop = voltage_drop(feeder, state.P, state.Q)
        res_v[1:] = (state.v[feeder.parent[1:]] - state.v[1:]) - drop[1:]
    res_v *= mask
    if t is not None:
        return {"p": res_p[:, :, t], "q": res_q[:, :, t], "v": res_v[:, :, t]}
    return {"p": res_p, "q": res_q, "v": res_v}


def forward_sweep(
    feeder: FeederModel,
    pd: np.ndarray,
    qd: np.ndarray,
    pg: Optional[np.ndarray] = None,
    qg: Optional[np.ndarray] = None,
) -> GridState:
    """
    Solve the linear flow equations exactly for given injections.

    Flows accumulate from the leaves to the substation; voltages propagate
    from v0 down the tree, absent phases copying the parent's value.
    """
    pd = np.asarray(pd, dtype=float)
    qd = np.asarray(qd, dtype=float)
    T = pd.shape[2]
    mask = feeder.mask[:, :, None]
    pg = np.zeros_like(pd) if pg is None else np.asarray(pg, dtype=float)
    qg = np.zeros_like(qd) if qg is None else np.asarray(qg, dtype=float)
    pd, qd, pg, qg = (arr * mask for arr in (pd, qd, pg, qg))

    P = np.zeros_like(pd)
    Q = np.zeros_like(qd)
    for n in feeder.order[::-1]:
        P[n] = pd[n] - pg[n]
        Q[n] = qd[n] - qg[n]
        for k in feeder.children[n]:
            P[n] += P[k]
            Q[n] += Q[k]

    v = np.zeros_like(pd)
    v[0] = feeder.v0
    for n in feeder.order[1:]:
        drop = feeder.Zbar[n].real @ P[n] - feeder.Zbar[n].imag @ Q[n]
        v[n] = np.where(feeder.mask[n][:, None], v[feeder.parent[n]] - drop, v[feeder.parent[n]])
    return GridState(v=v, pg=pg, qg=qg, pd=pd, qd=qd, P=P, Q=Q)


def supply_cost(feeder: FeederModel, P0: np.ndarray) -> float:
    """Substation cost summed over slots and present phases."""
    P0 = P0 * feeder.mask[0][:, None]
    return float(np.sum(feeder.f0.a * P0 * P0 + feeder.f0.b * P0))


def generation_cost(feeder: FeederModel, pg: np.ndarray) -> float:
    cost = feeder.gen_cost
    T = pg.shape[2]
    mask = (feeder.mask & feeder.has_gen[:, None])[:, :, None]
    value = cost["a"][:, :, None] * pg**2 + cost["b"][:, :, None] * pg + cost["c"][:, :, None]
    return float(np.sum(value * mask)) if T else 0.0


def network_objective(feeder: FeederModel, state: GridState) -> float:
    """Total supply plus generation cost over the horizon."""
    return supply_cost(feeder, state.P[0]) + generation_cost(feeder, state.pg)


def load_network_loads(path: Union[str, Path], feeder: FeederModel, T: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Read per-bus, per-phase base loads (t, bus, phase, p_kw, q_kvar).

    Returns:
        (d, qd) arrays of shape (bus, phase, T) in p.u. of the feeder base
    """
    try:
        frame = pd.read_csv(path, comment="#")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"cannot read loads {path}: {e}") from e
    return network_loads_from_frame(frame, feeder, T, source=str(path))


def network_loads_from_frame(
    frame: pd.DataFrame, feeder: FeederModel, T: int, source: str = "loads"
) -> Tuple[np.ndarray, np.ndarray]:
    required = {"t", "bus", "phase", "p_kw"}
    if not required <= set(frame.columns):
        raise ParseError(f"{source}: needs columns {sorted(required)} (q_kvar optional)")
    if "q_kvar" not in frame:
        frame = frame.assign(q_kvar=0.0)
    frame = frame.assign(phase=frame["phase"].astype(str).str.lower())

    bad_t = frame[(frame["t"] < 1) | (frame["t"] > T)]
    if len(bad_t):
        raise ParseError(f"{source}: slot {int(bad_t['t'].iloc[0])} outside 1..{T}")
    bad_bus = frame[(frame["bus"] < 0) | (frame["bus"] >= feeder.n_buses)]
    if len(bad_bus):
        raise FeederValidationError("load on unknown bus", location=f"bus {int(bad_bus['bus'].iloc[0])}")
    unknown = set(frame["phase"]) - set(PHASES)
    if unknown:
        raise ParseError(f"{source}: unknown phases {sorted(unknown)}")

    phase_idx = frame["phase"].map(PHASES.index).to_numpy()
    bus_idx = frame["bus"].to_numpy(dtype=int)
    absent = ~feeder.mask[bus_idx, phase_idx]
    if absent.any():
        row = frame[absent].iloc[0]
        raise FeederValidationError(f"load on absent phase {row['phase']}", location=f"bus {int(row['bus'])}")

    d = feeder.zeros(T)
    qd = feeder.zeros(T)
    t_idx = frame["t"].to_numpy(dtype=int) - 1
    np.add.at(d, (bus_idx, phase_idx, t_idx), frame["p_kw"].to_numpy(dtype=float) / feeder.base_kva)
    np.add.at(qd, (bus_idx, phase_idx, t_idx), frame["q_kvar"].to_numpy(dtype=float) / feeder.base_kva)
    return d, qd


def dump_network_loads(
    d: np.ndarray, qd: np.ndarray, feeder: FeederModel, path: Union[str, Path], provenance: str = ""
) -> None:
    """Write non-zero (bus, phase) series back in kW / kvar."""
    rows = []
    B, _, T = d.shape
    for n in range(B):
        for i, phase in enumerate(PHASES):
            if not feeder.mask[n, i] or not (np.any(d[n, i]) or np.any(qd[n, i])):
                continue
            for t in range(T):
                rows.append((t + 1, n, phase, d[n, i, t] * feeder.base_kva, qd[n, i, t] * feeder.base_kva))
    frame = pd.DataFrame(rows, columns=["t", "bus", "phase", "p_kw", "q_kvar"]).sort_values(
        ["t", "bus", "phase"], kind="stable"
    )
    with open(path, "w") as handle:
        if provenance:
            handle.write(f"# {provenance}\n")
        frame.to_csv(handle, index=False)
