"""
Tests for charging requests, fleets, cost models and file ingestion
"""

import json

import numpy as np
import pytest

from src.evsched.core.errors import (
    EmptyFeasibleSet,
    IndexOutOfRange,
    LengthMismatch,
    NonPositiveCapacity,
    ParseError,
    UnknownKind,
)
from src.evsched.core.fleet import (
    ChargingRequest,
    CostModel,
    Fleet,
    FleetRecord,
    SlotWindow,
    caps_vector,
    cost_from_name,
    dump_base_load,
    dump_fleet,
    energy_need_from_soc,
    load_base_load,
    load_fleet,
    parse_fleet,
    total_cost,
    validate_request,
)


class TestValidateRequest:
    """Tests for request validation"""

    def test_feasible_request_passes(self):
        """Test a request whose need fits its window"""
        req = ChargingRequest(id="a", availability=frozenset({1, 2}), rate_cap=2.0, energy_need=4.0)
        assert validate_request(req, T=3) is req

    def test_need_above_capacity(self):
        """Test the empty feasible set is reported with the EV id"""
        req = ChargingRequest(id="ev-9", availability=frozenset({1, 2}), rate_cap=2.0, energy_need=4.5)
        with pytest.raises(EmptyFeasibleSet, match="ev-9"):
            validate_request(req, T=3)

    def test_slot_outside_horizon(self):
        """Test availability slots must lie in 1..T"""
        req = ChargingRequest(id="a", availability=frozenset({0, 2}), rate_cap=1.0, energy_need=1.0)
        with pytest.raises(IndexOutOfRange):
            validate_request(req, T=3)
        req = ChargingRequest(id="b", availability=frozenset({4}), rate_cap=1.0, energy_need=1.0)
        with pytest.raises(IndexOutOfRange):
            validate_request(req, T=3)

    def test_zero_need_is_feasible(self):
        """Test a zero need is fine even without availability"""
        req = ChargingRequest(id="a", availability=frozenset(), rate_cap=1.0, energy_need=0.0)
        assert validate_request(req, T=2).capacity == 0.0


class TestCapsVector:
    """Tests for per-slot charge limits"""

    def test_caps_zero_outside_window(self):
        """Test caps are the rate cap on available slots only"""
        req = ChargingRequest(id="a", availability=frozenset({2, 4}), rate_cap=3.0, energy_need=1.0)
        np.testing.assert_array_equal(caps_vector(req, 5), [0.0, 3.0, 0.0, 3.0, 0.0])


class TestEnergyNeedFromSoc:
    """Tests for the state-of-charge need model"""

    def test_typical_commute(self):
        """Test 30 miles on a 20 kWh battery at 15 kWh per 100"""
        assert energy_need_from_soc(20.0, 30.0) == pytest.approx(4.5)

    def test_long_commute_clamps_at_empty(self):
        """Test the initial state of charge is clamped at zero"""
        assert energy_need_from_soc(20.0, 200.0) == pytest.approx(18.0)

    def test_no_driving_needs_nothing(self):
        """Test zero miles gives zero need"""
        assert energy_need_from_soc(20.0, 0.0) == 0.0

    def test_non_positive_capacity(self):
        """Test zero battery capacity is rejected"""
        with pytest.raises(NonPositiveCapacity):
            energy_need_from_soc(0.0, 10.0)


class TestCostModel:
    """Tests for slot cost models"""

    def test_valley_value_and_derivative(self):
        """Test x^2/2 and its derivative"""
        cost = CostModel.valley()
        x = np.array([1.0, -2.0, 3.0])
        np.testing.assert_allclose(cost.value(x), [0.5, 2.0, 4.5])
        np.testing.assert_allclose(cost.derivative(x), x)
        assert cost.curvature(3) == 1.0

    def test_per_slot_quadratic(self):
        """Test per-slot coefficients"""
        cost = CostModel.quadratic([1.0, 2.0], [0.5, 0.0], 1.0)
        np.testing.assert_allclose(cost.value(np.array([1.0, 1.0])), [2.5, 3.0])
        np.testing.assert_allclose(cost.derivative(np.array([1.0, 1.0])), [2.5, 4.0])

    def test_linear_has_no_curvature(self):
        """Test linear costs ignore a"""
        cost = CostModel.linear([1.0, 2.0, 3.0])
        assert cost.curvature(3) == 0.0
        np.testing.assert_allclose(cost.derivative(np.zeros(3)), [1.0, 2.0, 3.0])

    def test_negative_curvature_rejected(self):
        """Test concave quadratics are refused"""
        with pytest.raises(ValueError):
            CostModel.quadratic(-1.0)

    def test_coefficient_length_mismatch(self):
        """Test per-slot lists must match the horizon"""
        with pytest.raises(LengthMismatch):
            CostModel.quadratic([1.0, 2.0]).value(np.zeros(3))

    def test_line_minimizer(self):
        """Test the exact line search on the valley cost"""
        cost = CostModel.valley()
        assert cost.line_minimizer(np.array([-1.0, -1.0]), np.array([4.0, 4.0])) == pytest.approx(0.25)
        assert cost.line_minimizer(np.array([-1.0, -1.0]), np.array([1.0, 1.0])) == 1.0
        assert cost.line_minimizer(np.array([1.0, 1.0]), np.array([1.0, 1.0])) == 0.0

    def test_total_cost(self):
        """Test the network-free objective"""
        profiles = np.array([[1.0, 0.0], [0.0, 2.0]])
        assert total_cost(profiles, np.array([1.0, 1.0]), CostModel.valley()) == pytest.approx(2.0 + 4.5)

    @pytest.mark.parametrize(
        "cost",
        [
            CostModel.valley(),
            CostModel.quadratic([0.5, 2.0, 0.0, 1.0], [1.0, -1.0, 0.5, 0.0], 3.0),
            CostModel.linear([1.0, 2.0, 3.0, 4.0]),
        ],
        ids=["valley", "per-slot", "linear"],
    )
    def test_total_cost_is_convex(self, cost):
        """Test the midpoint inequality on random profile pairs"""
        rng = np.random.default_rng(8)
        d = rng.uniform(0.0, 5.0, size=4)
        for _ in range(200):
            a = rng.uniform(0.0, 3.0, size=(3, 4))
            b = rng.uniform(0.0, 3.0, size=(3, 4))
            mid = total_cost((a + b) / 2.0, d, cost)
            ends = (total_cost(a, d, cost) + total_cost(b, d, cost)) / 2.0
            assert mid <= ends + 1e-12 * max(abs(ends), 1.0)


class TestFleet:
    """Tests for the fleet container"""

    def test_arrays(self, small_fleet):
        """Test caps and needs arrays follow request order"""
        assert small_fleet.caps.shape == (3, 6)
        np.testing.assert_array_equal(small_fleet.needs, [5.0, 3.0, 4.0])
        np.testing.assert_array_equal(small_fleet.caps[2], [3.0, 0, 0, 0, 0, 3.0])
        assert small_fleet.ids == ["ev-1", "ev-2", "ev-3"]

    def test_arrays_are_read_only(self, small_fleet):
        """Test the compiled arrays cannot be modified"""
        with pytest.raises(ValueError):
            small_fleet.caps[0, 0] = 9.0

    def test_invalid_request_rejected(self):
        """Test the fleet validates every request"""
        req = ChargingRequest(id="x", availability=frozenset({1}), rate_cap=1.0, energy_need=2.0)
        with pytest.raises(EmptyFeasibleSet):
            Fleet.from_requests([req], T=2)

    def test_feasibility_check(self, small_fleet):
        """Test box and budget checks"""
        e = np.zeros((3, 6))
        e[0, :4] = [2.0, 2.0, 1.0, 0.0]
        e[1, 2:] = [0.75, 0.75, 0.75, 0.75]
        e[2, [0, 5]] = [2.0, 2.0]
        assert small_fleet.is_feasible(e)
        np.testing.assert_allclose(small_fleet.infeasibility(e), 0.0)
        e[0, 0] = 2.5
        assert not small_fleet.is_feasible(e)

    def test_scaled(self, small_fleet):
        """Test unit scaling of caps and needs"""
        scaled = small_fleet.scaled(0.001)
        np.testing.assert_allclose(scaled.needs, small_fleet.needs * 0.001)
        np.testing.assert_allclose(scaled.caps, small_fleet.caps * 0.001)

    def test_groups(self):
        """Test EVs are grouped by bus and phase index"""
        reqs = [
            ChargingRequest(id=str(i), availability=frozenset({1}), rate_cap=1.0, energy_need=0.5, bus=b, phase=p)
            for i, (b, p) in enumerate([(1, "a"), (2, "c"), (1, "a"), (1, "b")])
        ]
        groups = Fleet.from_requests(reqs, T=1).groups()
        assert groups == {(1, 0): [0, 2], (2, 2): [1], (1, 1): [3]}


class TestFleetFiles:
    """Tests for fleet and base-load files"""

    def test_window_wraps_past_horizon(self):
        """Test an overnight window wraps to the start of the horizon"""
        assert SlotWindow.model_validate({"from": 5, "to": 2}).slots(6) == [5, 6, 1, 2]
        assert SlotWindow.model_validate({"from": 2, "to": 4}).slots(6) == [2, 3, 4]

    def test_parse_fleet_with_soc_need(self):
        """Test needs derived from battery size and miles"""
        fleet = parse_fleet(
            [{"id": 7, "window": {"from": 3, "to": 1}, "rate_cap_kw": 3.45, "battery_kwh": 20, "daily_miles": 30}],
            T=4,
        )
        assert fleet.ids == ["7"]
        assert fleet.needs[0] == pytest.approx(4.5)
        np.testing.assert_allclose(fleet.caps[0], [3.45, 0.0, 3.45, 3.45])

    def test_parse_fleet_needs_one_window(self):
        """Test slots and window are mutually exclusive"""
        with pytest.raises(ParseError):
            parse_fleet([{"id": 1, "slots": [1], "window": {"from": 1, "to": 1},
                          "rate_cap_kw": 1, "energy_need_kwh": 1}], T=2)

    def test_duplicate_ids(self):
        """Test duplicate EV ids are rejected"""
        record = {"id": "a", "slots": [1], "rate_cap_kw": 1, "energy_need_kwh": 0.5}
        with pytest.raises(ParseError, match="duplicate"):
            parse_fleet([record, record], T=1)

    def test_infeasible_ev_named(self):
        """Test an infeasible record names its EV"""
        with pytest.raises(EmptyFeasibleSet, match="late-ev"):
            parse_fleet([{"id": "late-ev", "slots": [1], "rate_cap_kw": 1, "energy_need_kwh": 5}], T=2)

    def test_dump_and_load(self, tmp_path):
        """Test a written fleet file reads back with its provenance header"""
        records = [
            FleetRecord(id="a", window=SlotWindow(start=4, end=1), rate_cap_kw=2.0, energy_need_kwh=3.0),
            FleetRecord(id="b", slots=[2, 3], rate_cap_kw=1.0, energy_need_kwh=1.5, bus=1, phase="b"),
        ]
        path = tmp_path / "fleet.json"
        dump_fleet(records, path, {"synthetic": True})
        assert json.loads(path.read_text())["provenance"] == {"synthetic": True}
        fleet = load_fleet(path, T=4)
        assert fleet.ids == ["a", "b"]
        assert fleet.requests[0].availability == frozenset({4, 1})
        assert fleet.requests[1].phase == "b"

    def test_unreadable_fleet(self, tmp_path):
        """Test a malformed file raises ParseError"""
        path = tmp_path / "fleet.json"
        path.write_text("{not json")
        with pytest.raises(ParseError):
            load_fleet(path, T=2)

    def test_base_load_round_trip(self, tmp_path):
        """Test base-load CSV with a provenance comment"""
        path = tmp_path / "base.csv"
        dump_base_load(np.array([1.5, 2.5, 3.5]), path, provenance="synthetic")
        assert path.read_text().startswith("# synthetic")
        np.testing.assert_allclose(load_base_load(path, 3), [1.5, 2.5, 3.5])

    def test_base_load_sums_bus_rows(self, tmp_path):
        """Test rows with bus/phase columns are summed per slot"""
        path = tmp_path / "base.csv"
        path.write_text("t,bus,phase,p_kw\n1,1,a,1.0\n1,2,b,2.0\n2,1,a,4.0\n")
        np.testing.assert_allclose(load_base_load(path, 2), [3.0, 4.0])

    def test_base_load_missing_slot(self, tmp_path):
        """Test a missing slot is a length mismatch"""
        path = tmp_path / "base.csv"
        path.write_text("t,p_kw\n1,1.0\n3,1.0\n")
        with pytest.raises(LengthMismatch):
            load_base_load(path, 3)

    def test_cost_from_name(self, tmp_path):
        """Test cost construction from a coefficient file"""
        assert cost_from_name("quadratic-valley", 2).kind == "quadratic-valley"
        path = tmp_path / "coeffs.csv"
        path.write_text("t,b\n2,3.0\n1,1.0\n")
        cost = cost_from_name("linear", 2, path)
        np.testing.assert_allclose(cost.derivative(np.zeros(2)), [1.0, 3.0])
        with pytest.raises(UnknownKind):
            cost_from_name("cubic", 2)
