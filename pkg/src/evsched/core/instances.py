#!/usr/bin/env python3
"""
Synthetic scenarios and the scenario file

Deterministic generators for the three stock instances (a 59-EV valley-filling
fleet, a 3-bus toy feeder and a 123-bus synthetic feeder) and the Scenario
document tying a fleet, loads, a feeder, a cost and a solver together.
Every generated file carries a provenance header marking it synthetic.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from .errors import ParseError, UnknownKind
from .fleet import (
    CostModel,
    Fleet,
    FleetRecord,
    SlotWindow,
    cost_from_name,
    dump_base_load,
    dump_fleet,
    load_base_load,
    load_fleet,
)
from .grid_model import (
    PHASES,
    BaseValues,
    BusRecord,
    ComplexEntry,
    FeederFile,
    FeederModel,
    GenerationRecord,
    compile_feeder,
    dump_feeder,
    dump_network_loads,
    load_network_loads,
    parse_feeder,
)

logger = logging.getLogger(__name__)

INSTANCE_KINDS = ("valley-59ev", "toy-3bus", "synthetic-123bus")
SYNTHETIC_NOTE = "synthetic data standing in for unavailable utility load and travel-survey records"

# Fleet parameters of the 59-EV valley-filling case
VALLEY_EVS = 59
BATTERY_KWH = 20.0
RATE_CAP_KW = 3.45
TARGET_SOC = 0.9
E100_KWH = 15.0
PEAK_KW = 1000.0

# EV placement on the 123-bus feeder: bus -> number of EVs
FEEDER_EV_PLACEMENT = {3: 5, 15: 10, 64: 15, 82: 25, 102: 5}
FEEDER_BUSES = 123
FEEDER_DG_UNITS = 15

# Per-mile phase impedance (ohm) of a typical overhead three-phase line
LINE_Z_OHM_PER_MILE = np.array(
    [
        [0.3465 + 1.0179j, 0.1560 + 0.5017j, 0.1580 + 0.4236j],
        [0.1560 + 0.5017j, 0.3375 + 1.0478j, 0.1535 + 0.3849j],
        [0.1580 + 0.4236j, 0.1535 + 0.3849j, 0.3414 + 1.0348j],
    ]
)


class CostSpec(BaseModel):
    kind: str = "quadratic-valley"
    coefficients: Optional[str] = None


class Scenario(BaseModel):
    """Scenario document; file paths are relative to the scenario file."""

    kind: Literal["network-free", "network"]
    T: int = Field(ge=1)
    slot_minutes: float = Field(default=15.0, gt=0)
    fleet: str
    base_load: Optional[str] = None
    feeder: Optional[str] = None
    loads: Optional[str] = None
    cost: CostSpec = CostSpec()
    solver: Literal["fw", "pgd", "admm", "oracle"] = "fw"
    parameters: Dict[str, Any] = Field(default_factory=dict)
    seed: int = 0
    provenance: Optional[Dict[str, Any]] = None

    @model_validator(mode="after")
    def _inputs_for_kind(self):
        if self.kind == "network" and (self.feeder is None or self.loads is None):
            raise ValueError("network scenarios need 'feeder' and 'loads'")
        if self.kind == "network-free" and self.base_load is None:
            raise ValueError("network-free scenarios need 'base_load'")
        if self.kind == "network-free" and self.solver == "admm":
            raise ValueError("solver 'admm' needs a network scenario")
        return self


@dataclass
class ScenarioInputs:
    """
    Loaded scenario data.

    For network scenarios the fleet, d and qd are in p.u. of the feeder base
    and base_load is the aggregate kW curve of the equivalent network-free
    problem; otherwise everything is in kW.
    """

    scenario: Scenario
    fleet: Fleet
    base_load: Optional[np.ndarray]
    cost: CostModel
    feeder: Optional[FeederModel] = None
    d: Optional[np.ndarray] = None
    qd: Optional[np.ndarray] = None
    fleet_kw: Optional[Fleet] = None


def load_scenario(path: Union[str, Path]) -> ScenarioInputs:
    """
    Read a scenario file and every file it references.

    Raises:
        ParseError: If the scenario or a referenced file cannot be read
    """
    path = Path(path)
    try:
        scenario = Scenario.model_validate_json(path.read_text())
    except OSError as e:
        raise ParseError(f"cannot read scenario {path}: {e}") from e
    except ValidationError as e:
        raise ParseError(f"invalid scenario {path}: {e}") from e

    root = path.parent
    fleet = load_fleet(root / scenario.fleet, scenario.T, scenario.slot_minutes)
    base_load = load_base_load(root / scenario.base_load, scenario.T) if scenario.base_load else None
    coeffs = root / scenario.cost.coefficients if scenario.cost.coefficients else None
    cost = cost_from_name(scenario.cost.kind, scenario.T, coeffs)

    if scenario.kind == "network-free":
        return ScenarioInputs(scenario, fleet, base_load, cost, fleet_kw=fleet)

    feeder = parse_feeder(root / scenario.feeder)
    d, qd = load_network_loads(root / scenario.loads, feeder, scenario.T)
    if base_load is None:
        base_load = d.sum(axis=(0, 1)) * feeder.base_kva
    return ScenarioInputs(
        scenario,
        fleet.scaled(1.0 / feeder.base_kva),
        base_load,
        cost,
        feeder=feeder,
        d=d,
        qd=qd,
        fleet_kw=fleet,
    )


@dataclass
class GeneratedInstance:
    """In-memory synthetic instance, written out by write_instance."""

    scenario: Scenario
    fleet_records: List[FleetRecord]
    base_load: np.ndarray
    provenance: Dict[str, Any]
    feeder_record: Optional[FeederFile] = None
    loads: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)

    @property
    def fleet(self) -> Fleet:
        """Fleet in the scenario's file units (kW)."""
        requests = [r.to_request(self.scenario.T) for r in self.fleet_records]
        return Fleet.from_requests(requests, self.scenario.T, self.scenario.slot_minutes)

    @property
    def feeder(self) -> Optional[FeederModel]:
        return compile_feeder(self.feeder_record) if self.feeder_record else None


def double_hump(T: int, slot_minutes: float, peak: float = PEAK_KW) -> np.ndarray:
    """
    Residential base load over a horizon starting at midnight.

    A floor plus a morning hump centred at 08:30 and a larger evening hump at
    19:00 (circular in the hour of day), scaled so the maximum equals peak.
    """
    hours = (np.arange(T) + 0.5) * slot_minutes / 60.0

    def bump(center: float, width: float) -> np.ndarray:
        dist = np.abs((hours - center + 12.0) % 24.0 - 12.0)
        return np.exp(-((dist / width) ** 2))

    shape = 0.45 + 0.25 * bump(8.5, 2.0) + 0.5 * bump(19.0, 2.5)
    return peak * shape / shape.max()


def _overnight_window(
    rng: np.random.Generator, T: int, slot_minutes: float
) -> SlotWindow:
    """Plug-in from an evening arrival to a morning departure, wrapping at midnight."""
    per_hour = 60.0 / slot_minutes
    arrival = float(np.clip(rng.normal(18.5, 1.5), 15.0, 23.0))
    departure = float(np.clip(rng.normal(7.5, 1.0), 5.0, 10.0))
    start = int(math.floor(arrival * per_hour)) + 1
    end = max(int(math.floor(departure * per_hour)), 1)
    return SlotWindow(start=min(start, T), end=end)


def _daily_miles(rng: np.random.Generator) -> float:
    return round(float(np.clip(rng.lognormal(math.log(25.0), 0.6), 2.0, 120.0)), 1)


def _provenance(kind: str, seed: int) -> Dict[str, Any]:
    return {
        "generator": f"evsched.core.instances:{kind}",
        "seed": seed,
        "synthetic": True,
        "note": SYNTHETIC_NOTE,
    }


def valley_59ev(seed: int, T: int = 96) -> GeneratedInstance:
    """59 EVs with 20 kWh batteries on a 1000 kW peak double-hump base load."""
    slot_minutes = 24 * 60 / T
    rng = np.random.default_rng(seed)
    records = []
    for m in range(VALLEY_EVS):
        window = _overnight_window(rng, T, slot_minutes)
        records.append(
            FleetRecord(
                id=f"ev-{m + 1:02d}",
                window=window,
                rate_cap_kw=RATE_CAP_KW,
                battery_kwh=BATTERY_KWH,
                daily_miles=_daily_miles(rng),
                e100_kwh=E100_KWH,
                target_soc=TARGET_SOC,
            )
        )
    provenance = _provenance("valley-59ev", seed)
    scenario = Scenario(
        kind="network-free",
        T=T,
        slot_minutes=slot_minutes,
        fleet="fleet.json",
        base_load="base_load.csv",
        solver="fw",
        parameters={"eps": 1e-7},
        seed=seed,
        provenance=provenance,
    )
    return GeneratedInstance(scenario, records, double_hump(T, slot_minutes), provenance)


def _impedance(Z: np.ndarray) -> List[List[ComplexEntry]]:
    return [[ComplexEntry(re=float(z.real), im=float(z.imag)) for z in row] for row in Z]


def _masked(Z: np.ndarray, phases: str) -> np.ndarray:
    present = np.array([p in phases for p in PHASES])
    return Z * np.outer(present, present)


def toy_3bus(seed: int = 0) -> GeneratedInstance:
    """Chain 0-1-2, all three phases, two EVs on phase a, four hourly slots."""
    T, slot_minutes = 4, 60.0
    base = BaseValues(kva=1000.0, kv=4.16)
    Z = np.full((3, 3), 0.004 + 0.008j)
    np.fill_diagonal(Z, 0.01 + 0.02j)
    buses = [BusRecord(id=0, parent=None, phases="abc", v_min_pu2=0.81, v_max_pu2=1.21)]
    for n in (1, 2):
        buses.append(
            BusRecord(
                id=n,
                parent=n - 1,
                phases="abc",
                z=_impedance(Z),
                v_min_pu2=0.81,
                v_max_pu2=1.21,
                s_line_max_pu=10.0,
            )
        )
    provenance = _provenance("toy-3bus", seed)
    feeder_record = FeederFile(base=base, sf_max_pu=10.0, provenance=provenance, buses=buses)

    shape = np.array([1.0, 0.8, 0.5, 0.9])
    per_phase_kw = {1: [60.0, 50.0, 40.0], 2: [50.0, 40.0, 30.0]}
    d = np.zeros((3, 3, T))
    for n, loads in per_phase_kw.items():
        d[n] = np.outer(loads, shape) / base.kva
    qd = 0.3 * d

    records = [
        FleetRecord(id=f"ev-{n}", bus=n, phase="a", window=SlotWindow(start=1, end=T),
                    rate_cap_kw=50.0, energy_need_kwh=80.0)
        for n in (1, 2)
    ]
    scenario = Scenario(
        kind="network",
        T=T,
        slot_minutes=slot_minutes,
        fleet="fleet.json",
        base_load="base_load.csv",
        feeder="feeder.json",
        loads="loads.csv",
        solver="admm",
        parameters={"rho": 1.0, "max_iter": 5000},
        seed=seed,
        provenance=provenance,
    )
    return GeneratedInstance(
        scenario, records, d.sum(axis=(0, 1)) * base.kva, provenance, feeder_record, (d, qd)
    )


def _child_phases(rng: np.random.Generator, parent_phases: str) -> str:
    draw = rng.random()
    if parent_phases == "abc":
        if draw < 0.55:
            return "abc"
        if draw < 0.7:
            return str(rng.choice(["ab", "bc", "ac"]))
        return str(rng.choice(list(PHASES)))
    if len(parent_phases) == 2 and draw < 0.5:
        return parent_phases
    return str(rng.choice(list(parent_phases)))


def synthetic_123bus(seed: int, T: int = 24) -> GeneratedInstance:
    """
    Radial 123-bus feeder with 60 EVs and 15 dispatchable generators.

    The topology, phasing, line lengths, loads and generator data are drawn
    from the seed; the EV placement is fixed (5, 10, 15, 25 and 5 EVs at buses
    3, 15, 64, 82 and 102) and voltage limits are [0.95^2, 1.05^2].
    """
    slot_minutes = 24 * 60 / T
    rng = np.random.default_rng(seed)
    base = BaseValues(kva=1000.0, kv=4.16)
    z_base = base.kv**2 / (base.kva / 1000.0)

    parents = [-1]
    phases = ["abc"]
    for n in range(1, FEEDER_BUSES):
        if n == 1 or rng.random() < 0.6:
            parent = n - 1
        else:
            parent = int(rng.integers(max(0, n - 15), n))
        parents.append(parent)
        keep = n in FEEDER_EV_PLACEMENT or parent == 0
        phases.append(phases[parent] if keep else _child_phases(rng, phases[parent]))

    lengths = rng.uniform(0.02, 0.12, size=FEEDER_BUSES)
    dg_buses = set(int(n) for n in rng.choice(np.arange(1, FEEDER_BUSES), FEEDER_DG_UNITS, replace=False))

    buses = [BusRecord(id=0, parent=None, phases="abc")]
    for n in range(1, FEEDER_BUSES):
        Z = _masked(LINE_Z_OHM_PER_MILE * lengths[n] / z_base, phases[n])
        gen = None
        if n in dg_buses:
            present = np.array([p in phases[n] for p in PHASES], dtype=float)
            pmax = rng.uniform(10.0, 40.0, size=3) / base.kva * present
            gen = GenerationRecord(
                pmin=0.0,
                pmax=pmax.tolist(),
                qmin=(-0.5 * pmax).tolist(),
                qmax=(0.5 * pmax).tolist(),
                a=(rng.uniform(0.5, 2.0, size=3) * present).tolist(),
                b=(rng.uniform(0.0, 0.3, size=3) * present).tolist(),
                c=0.0,
            )
        buses.append(
            BusRecord(
                id=n,
                parent=parents[n],
                phases=phases[n],
                z=_impedance(Z),
                s_line_max_pu=5.0,
                gen=gen,
            )
        )
    provenance = _provenance("synthetic-123bus", seed)
    feeder_record = FeederFile(base=base, sf_max_pu=5.0, provenance=provenance, buses=buses)

    shape = double_hump(T, slot_minutes, peak=1.0)
    d = np.zeros((FEEDER_BUSES, 3, T))
    for n in range(1, FEEDER_BUSES):
        has_load = rng.random() < 0.75
        kw = rng.uniform(2.0, 8.0, size=3)
        if has_load:
            for i, p in enumerate(PHASES):
                if p in phases[n]:
                    d[n, i] = kw[i] * shape / base.kva
    qd = 0.35 * d

    records = []
    for bus, count in FEEDER_EV_PLACEMENT.items():
        for _ in range(count):
            records.append(
                FleetRecord(
                    id=f"ev-{len(records) + 1:02d}",
                    bus=bus,
                    phase=str(rng.choice(list(phases[bus]))),
                    window=_overnight_window(rng, T, slot_minutes),
                    rate_cap_kw=RATE_CAP_KW,
                    battery_kwh=BATTERY_KWH,
                    daily_miles=_daily_miles(rng),
                    e100_kwh=E100_KWH,
                    target_soc=TARGET_SOC,
                )
            )
    scenario = Scenario(
        kind="network",
        T=T,
        slot_minutes=slot_minutes,
        fleet="fleet.json",
        base_load="base_load.csv",
        feeder="feeder.json",
        loads="loads.csv",
        solver="admm",
        parameters={"rho": 1.0, "max_iter": 5000},
        seed=seed,
        provenance=provenance,
    )
    return GeneratedInstance(
        scenario, records, d.sum(axis=(0, 1)) * base.kva, provenance, feeder_record, (d, qd)
    )


GENERATORS = {
    "valley-59ev": valley_59ev,
    "toy-3bus": toy_3bus,
    "synthetic-123bus": synthetic_123bus,
}


def generate_instance(kind: str, seed: int) -> GeneratedInstance:
    """
    Build a stock synthetic instance.

    Raises:
        UnknownKind: If kind is not one of INSTANCE_KINDS
    """
    try:
        generator = GENERATORS[kind]
    except KeyError:
        raise UnknownKind(f"unknown instance kind '{kind}' (choose from {', '.join(INSTANCE_KINDS)})") from None
    instance = generator(seed)
    logger.info(
        "Generated %s (seed %d): %d EVs, T=%d", kind, seed, len(instance.fleet_records), instance.scenario.T
    )
    return instance


def write_instance(instance: GeneratedInstance, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write the scenario and its files into out_dir; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = json.dumps(instance.provenance, sort_keys=True)
    scenario = instance.scenario
    written = {
        "fleet": out / scenario.fleet,
        "base_load": out / scenario.base_load,
        "scenario": out / "scenario.json",
    }
    dump_fleet(instance.fleet_records, written["fleet"], instance.provenance)
    dump_base_load(instance.base_load, written["base_load"], header)
    if instance.feeder_record is not None:
        written["feeder"] = out / scenario.feeder
        written["loads"] = out / scenario.loads
        dump_feeder(instance.feeder_record, written["feeder"])
        d, qd = instance.loads
        dump_network_loads(d, qd, instance.feeder, written["loads"], header)
    written["scenario"].write_text(scenario.model_dump_json(indent=2) + "\n")
    return written
