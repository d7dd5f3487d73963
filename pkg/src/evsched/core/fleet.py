#!/usr/bin/env python3
"""
EV charging requests and the network-free charging cost

Contains the per-vehicle request model, the fleet container used by every
solver, the slot cost models and the JSON/CSV ingestion of fleets and base
loads.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    TypeAdapter,
    ValidationError,
    field_validator,
    model_validator,
)

from .errors import (
    EmptyFeasibleSet,
    IndexOutOfRange,
    LengthMismatch,
    NonPositiveCapacity,
    ParseError,
    UnknownKind,
)

logger = logging.getLogger(__name__)

PHASES = ("a", "b", "c")
BUDGET_RTOL = 1e-9


class ChargingRequest(BaseModel):
    """Charging request of one EV: availability slots (1-based), rate cap, need."""

    model_config = ConfigDict(frozen=True)

    id: str
    availability: frozenset[int]
    rate_cap: float = Field(ge=0, allow_inf_nan=False)
    energy_need: float = Field(ge=0, allow_inf_nan=False)
    bus: Optional[int] = None
    phase: Optional[Literal["a", "b", "c"]] = None

    @property
    def capacity(self) -> float:
        """Most energy the window can deliver, |availability| * rate_cap."""
        return len(self.availability) * self.rate_cap


def validate_request(req: ChargingRequest, T: int) -> ChargingRequest:
    """
    Check that the request has a non-empty feasible set over T slots.

    Raises:
        IndexOutOfRange: If an availability slot lies outside 1..T
        EmptyFeasibleSet: If the need exceeds |availability| * rate_cap
    """
    bad = sorted(t for t in req.availability if t < 1 or t > T)
    if bad:
        raise IndexOutOfRange(
            f"EV {req.id}: slots {bad} outside 1..{T}"
        )
    capacity = req.capacity
    if req.energy_need > capacity * (1 + 1e-12) + 1e-12:
        raise EmptyFeasibleSet(
            f"EV {req.id}: needs {req.energy_need:g} but can receive at most "
            f"{capacity:g} ({len(req.availability)} slots x {req.rate_cap:g})"
        )
    return req


def caps_vector(req: ChargingRequest, T: int) -> np.ndarray:
    """Per-slot charge limits: rate_cap on available slots, zero elsewhere."""
    caps = np.zeros(T)
    if req.availability:
        caps[np.fromiter(sorted(req.availability), dtype=int) - 1] = req.rate_cap
    return caps


def energy_need_from_soc(
    battery_capacity: float,
    daily_miles: float,
    e100: float = 15.0,
    target_soc: float = 0.9,
) -> float:
    """
    Energy to bring a battery from its post-commute state of charge to target.

    The initial state of charge is target_soc - miles * e100 / (100 * capacity),
    clamped to [0, 1]; charging efficiency is taken as 1.
    """
    if not battery_capacity > 0:
        raise NonPositiveCapacity(
            f"battery capacity must be positive, got {battery_capacity}"
        )
    if not 0 < target_soc <= 1:
        raise ValueError(f"target_soc must lie in (0, 1], got {target_soc}")
    initial_soc = target_soc - daily_miles * e100 / (100.0 * battery_capacity)
    initial_soc = min(max(initial_soc, 0.0), 1.0)
    return max((target_soc - initial_soc) * battery_capacity, 0.0)


class CostModel(BaseModel):
    """
    Per-slot convex cost C_t applied to the total load d(t) + sum_m e_m(t).

    quadratic-valley: x^2/2; convex-quadratic: a_t x^2 + b_t x + c_t (a_t >= 0);
    linear: b_t x + c_t. Coefficients are scalars or per-slot lists.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["quadratic-valley", "convex-quadratic", "linear"] = "quadratic-valley"
    a: Union[float, List[float]] = 0.0
    b: Union[float, List[float]] = 0.0
    c: Union[float, List[float]] = 0.0

    @field_validator("a")
    @classmethod
    def _convex(cls, value):
        values = value if isinstance(value, list) else [value]
        if any(v < 0 or not math.isfinite(v) for v in values):
            raise ValueError("quadratic coefficients must be finite and >= 0")
        return value

    @classmethod
    def valley(cls) -> "CostModel":
        return cls(kind="quadratic-valley")

    @classmethod
    def quadratic(cls, a, b=0.0, c=0.0) -> "CostModel":
        return cls(kind="convex-quadratic", a=_listify(a), b=_listify(b), c=_listify(c))

    @classmethod
    def linear(cls, b, c=0.0) -> "CostModel":
        return cls(kind="linear", b=_listify(b), c=_listify(c))

    def coefficients(self, T: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-slot (a, b, c) arrays of length T."""
        if self.kind == "quadratic-valley":
            return np.full(T, 0.5), np.zeros(T), np.zeros(T)
        a = np.zeros(T) if self.kind == "linear" else _broadcast(self.a, T, "a")
        return a, _broadcast(self.b, T, "b"), _broadcast(self.c, T, "c")

    def value(self, x: np.ndarray) -> np.ndarray:
        """Per-slot cost C_t(x(t))."""
        a, b, c = self.coefficients(len(x))
        return a * x * x + b * x + c

    def derivative(self, x: np.ndarray) -> np.ndarray:
        """Per-slot derivative C_t'(x(t))."""
        a, b, _ = self.coefficients(len(x))
        return 2.0 * a * x + b

    def curvature(self, T: int) -> float:
        """Largest second derivative max_t C_t''."""
        a, _, _ = self.coefficients(T)
        return float(2.0 * a.max()) if T else 0.0

    def line_minimizer(self, x: np.ndarray, direction: np.ndarray) -> float:
        """Step in [0, 1] minimizing sum_t C_t(x + eta * direction)."""
        a, b, _ = self.coefficients(len(x))
        slope = float(np.dot(2.0 * a * x + b, direction))
        if slope >= 0.0:
            return 0.0
        bend = float(np.dot(2.0 * a, direction * direction))
        if bend <= 0.0:
            return 1.0
        return min(-slope / bend, 1.0)


def _listify(value):
    if isinstance(value, (list, tuple, np.ndarray)):
        return [float(v) for v in value]
    return float(value)


def _broadcast(value, T: int, name: str) -> np.ndarray:
    if isinstance(value, list):
        if len(value) != T:
            raise LengthMismatch(
                f"cost coefficient {name} has {len(value)} entries, horizon is {T}"
            )
        return np.asarray(value, dtype=float)
    return np.full(T, float(value))


def base_load_series(values: Iterable[float], T: int) -> np.ndarray:
    """Validate a base load d(1..T): exactly T finite, non-negative entries."""
    d = np.asarray(list(values), dtype=float)
    if d.shape != (T,):
        raise LengthMismatch(f"base load has {d.size} entries, horizon is {T}")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ValueError("base load must be finite and non-negative")
    return d


def total_cost(profiles, d: np.ndarray, cost: CostModel) -> float:
    """
    Network-free charging cost sum_t C_t(d(t) + sum_m e_m(t)).

    Raises:
        LengthMismatch: If a profile and the base load differ in length
    """
    d = np.asarray(d, dtype=float)
    aggregate = aggregate_load(profiles, d.size)
    return float(np.sum(cost.value(d + aggregate)))


def aggregate_load(profiles, T: int) -> np.ndarray:
    """Sum of profiles in fixed row order; empty fleets give zeros."""
    profiles = np.asarray(profiles, dtype=float)
    if profiles.size == 0:
        return np.zeros(T)
    profiles = np.atleast_2d(profiles)
    if profiles.shape[1] != T:
        raise LengthMismatch(
            f"profiles span {profiles.shape[1]} slots, horizon is {T}"
        )
    total = np.zeros(T)
    for row in profiles:
        total += row
    return total


@dataclass(frozen=True)
class Fleet:
    """Validated requests over a common horizon, with cap and need arrays."""

    requests: Tuple[ChargingRequest, ...]
    T: int
    slot_minutes: float = 15.0
    caps: np.ndarray = field(init=False, repr=False, compare=False)
    needs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for req in self.requests:
            validate_request(req, self.T)
        caps = np.zeros((len(self.requests), self.T))
        for m, req in enumerate(self.requests):
            caps[m] = caps_vector(req, self.T)
        needs = np.array([req.energy_need for req in self.requests], dtype=float)
        caps.flags.writeable = False
        needs.flags.writeable = False
        object.__setattr__(self, "caps", caps)
        object.__setattr__(self, "needs", needs)

    @classmethod
    def from_requests(
        cls, requests: Sequence[ChargingRequest], T: int, slot_minutes: float = 15.0
    ) -> "Fleet":
        return cls(tuple(requests), T, slot_minutes)

    def __len__(self) -> int:
        return len(self.requests)

    @property
    def ids(self) -> List[str]:
        return [req.id for req in self.requests]

    def subset(self, indices: Sequence[int]) -> "Fleet":
        return Fleet(tuple(self.requests[i] for i in indices), self.T, self.slot_minutes)

    def scaled(self, factor: float) -> "Fleet":
        """Same fleet with caps and needs multiplied by factor (unit changes)."""
        scaled = [
            req.model_copy(
                update={
                    "rate_cap": req.rate_cap * factor,
                    "energy_need": req.energy_need * factor,
                }
            )
            for req in self.requests
        ]
        return Fleet(tuple(scaled), self.T, self.slot_minutes)

    def groups(self) -> Dict[Tuple[int, int], List[int]]:
        """EV indices per (bus, phase index), in fleet order."""
        grouped: Dict[Tuple[int, int], List[int]] = {}
        for m, req in enumerate(self.requests):
            if req.bus is None or req.phase is None:
                continue
            grouped.setdefault((req.bus, PHASES.index(req.phase)), []).append(m)
        return grouped

    def infeasibility(self, profiles: np.ndarray) -> np.ndarray:
        """Per-EV worst violation of the box and budget constraints."""
        profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
        if len(self) == 0:
            return np.zeros(0)
        box = np.maximum(np.maximum(-profiles, profiles - self.caps), 0.0).max(axis=1)
        budget = np.abs(profiles.sum(axis=1) - self.needs) / np.maximum(self.needs, 1.0)
        return np.maximum(box, budget)

    def is_feasible(self, profiles: np.ndarray, rtol: float = BUDGET_RTOL) -> bool:
        """True when every profile obeys 0 <= e <= cap and sum e = need."""
        profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
        if len(self) == 0:
            return True
        if profiles.shape != self.caps.shape:
            return False
        box_ok = bool(np.all(profiles >= 0.0) and np.all(profiles <= self.caps))
        budget = np.abs(profiles.sum(axis=1) - self.needs)
        return box_ok and bool(np.all(budget <= rtol * np.maximum(self.needs, 1.0)))


class SlotWindow(BaseModel):
    """Inclusive 1-based plug-in window; from > to wraps past the horizon end."""

    model_config = ConfigDict(populate_by_name=True)

    start: int = Field(alias="from", ge=1)
    end: int = Field(alias="to", ge=1)

    def slots(self, T: int) -> List[int]:
        if self.start <= self.end:
            return list(range(self.start, self.end + 1))
        return list(range(self.start, T + 1)) + list(range(1, self.end + 1))


class FleetRecord(BaseModel):
    """One entry of the fleet JSON file."""

    model_config = ConfigDict(populate_by_name=True)

    id: Union[str, int]
    bus: Optional[int] = None
    phase: Optional[Literal["a", "b", "c"]] = None
    slots: Optional[List[int]] = None
    window: Optional[SlotWindow] = None
    rate_cap_kw: float = Field(ge=0, allow_inf_nan=False)
    energy_need_kwh: Optional[float] = Field(default=None, ge=0, allow_inf_nan=False)
    battery_kwh: Optional[float] = None
    daily_miles: Optional[float] = Field(default=None, ge=0)
    e100_kwh: float = 15.0
    target_soc: float = 0.9

    @model_validator(mode="after")
    def _one_of_each(self):
        if (self.slots is None) == (self.window is None):
            raise ValueError("give exactly one of 'slots' or 'window'")
        if self.energy_need_kwh is None and (
            self.battery_kwh is None or self.daily_miles is None
        ):
            raise ValueError(
                "give 'energy_need_kwh' or both 'battery_kwh' and 'daily_miles'"
            )
        return self

    def to_request(self, T: int) -> ChargingRequest:
        slots = self.slots if self.slots is not None else self.window.slots(T)
        need = self.energy_need_kwh
        if need is None:
            need = energy_need_from_soc(
                self.battery_kwh, self.daily_miles, self.e100_kwh, self.target_soc
            )
        return ChargingRequest(
            id=str(self.id),
            availability=frozenset(slots),
            rate_cap=self.rate_cap_kw,
            energy_need=need,
            bus=self.bus,
            phase=self.phase,
        )


_records_adapter = TypeAdapter(List[FleetRecord])


def parse_fleet(payload, T: int, slot_minutes: float = 15.0) -> Fleet:
    """Build a fleet from decoded JSON (a list, or an object with 'vehicles')."""
    if isinstance(payload, dict):
        payload = payload.get("vehicles", [])
    try:
        records = _records_adapter.validate_python(payload)
    except ValidationError as e:
        raise ParseError(f"invalid fleet file: {e}") from e
    requests = [record.to_request(T) for record in records]
    ids = [req.id for req in requests]
    if len(set(ids)) != len(ids):
        raise ParseError("fleet file has duplicate EV ids")
    return Fleet.from_requests(requests, T, slot_minutes)


def load_fleet(path: Union[str, Path], T: int, slot_minutes: float = 15.0) -> Fleet:
    """Read and validate a fleet JSON file."""
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"cannot read fleet file {path}: {e}") from e
    fleet = parse_fleet(payload, T, slot_minutes)
    logger.info("Loaded %d EVs from %s", len(fleet), path)
    return fleet


def dump_fleet(
    records: Sequence[FleetRecord],
    path: Union[str, Path],
    provenance: Optional[dict] = None,
) -> None:
    """Write fleet records, wrapped with a provenance header when given."""
    vehicles = [r.model_dump(by_alias=True, exclude_none=True) for r in records]
    payload = {"provenance": provenance, "vehicles": vehicles} if provenance else vehicles
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_base_load(path: Union[str, Path], T: int) -> np.ndarray:
    """
    Read a base-load CSV (columns t, p_kw) into d(1..T).

    Files carrying bus/phase columns are summed per slot. Lines starting with
    '#' are treated as provenance comments.
    """
    try:
        frame = pd.read_csv(path, comment="#")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"cannot read base load {path}: {e}") from e
    if not {"t", "p_kw"} <= set(frame.columns):
        raise ParseError(f"{path}: base load needs columns 't' and 'p_kw'")
    per_slot = frame.groupby("t")["p_kw"].sum()
    expected = pd.RangeIndex(1, T + 1)
    if set(per_slot.index) != set(expected):
        raise LengthMismatch(
            f"{path}: base load covers slots {sorted(per_slot.index)[:3]}..., "
            f"expected 1..{T}"
        )
    return base_load_series(per_slot.reindex(expected).to_numpy(), T)


def dump_base_load(d: np.ndarray, path: Union[str, Path], provenance: str = "") -> None:
    """Write d(1..T) as a t,p_kw CSV with an optional provenance comment."""
    frame = pd.DataFrame({"t": np.arange(1, len(d) + 1), "p_kw": np.asarray(d)})
    with open(path, "w") as handle:
        if provenance:
            handle.write(f"# {provenance}\n")
        frame.to_csv(handle, index=False)


def cost_from_name(
    name: str, T: int, coeffs_path: Optional[Union[str, Path]] = None
) -> CostModel:
    """Build a cost model from a CLI name and an optional t,a,b,c CSV."""
    if name in ("quadratic", "quadratic-valley", "valley"):
        return CostModel.valley()
    if name not in ("convex-quadratic", "linear"):
        raise UnknownKind(f"unknown cost kind '{name}'")
    if coeffs_path is None:
        raise ParseError(f"cost kind '{name}' needs a coefficient file")
    frame = pd.read_csv(coeffs_path, comment="#").sort_values("t")
    if len(frame) != T:
        raise LengthMismatch(f"{coeffs_path}: {len(frame)} rows, horizon is {T}")
    columns = {col: frame[col].tolist() if col in frame else 0.0 for col in "abc"}
    if name == "linear":
        return CostModel.linear(columns["b"], columns["c"])
    return CostModel.quadratic(columns["a"], columns["b"], columns["c"])
