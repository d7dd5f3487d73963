"""
Tests for the feeder schema, compilation and linearized flow equations
"""

import copy
import json

import numpy as np
import pytest

from src.evsched.core.errors import DimensionMismatch, FeederParseError, FeederValidationError, ParseError
from src.evsched.core.grid_model import (
    GridState,
    dump_network_loads,
    feeder_from_dict,
    flow_residuals,
    forward_sweep,
    load_network_loads,
    network_objective,
    parse_feeder,
    supply_cost,
    zbar,
)


def _z(diag, off=0.0, phases="abc"):
    present = [p in phases for p in "abc"]
    rows = []
    for i in range(3):
        row = []
        for j in range(3):
            value = 0j
            if present[i] and present[j]:
                value = complex(diag) if i == j else complex(off)
            row.append({"re": value.real, "im": value.imag})
        rows.append(row)
    return rows


@pytest.fixture
def feeder_dict():
    """Four buses: 0-1-2 three phase, bus 3 single phase b off bus 1"""
    return {
        "version": 1,
        "base": {"kva": 1000.0, "kv": 4.16},
        "sf_max_pu": 5.0,
        "f0": {"a": 1.0, "b": 0.5},
        "buses": [
            {"id": 0, "parent": None, "phases": "abc"},
            {"id": 1, "parent": 0, "phases": "abc", "z": _z(0.01 + 0.02j, 0.004 + 0.008j), "s_line_max_pu": 2.0},
            {"id": 2, "parent": 1, "phases": "cab", "z": _z(0.02 + 0.01j, 0.005 + 0.002j),
             "gen": {"pmax": [0.1, 0.2, 0.3], "qmin": -0.1, "qmax": 0.1, "a": 2.0, "b": 1.0}},
            {"id": 3, "parent": 1, "phases": "b", "z": _z(0.03 + 0.03j, phases="b")},
        ],
    }


class TestZbar:
    """Tests for the linearized impedance"""

    def test_identity(self):
        """Test Z = I maps to 2I"""
        np.testing.assert_allclose(zbar(np.eye(3)), 2.0 * np.eye(3), atol=1e-15)

    def test_pure_reactance(self):
        """Test Z = jI maps to -2jI"""
        np.testing.assert_allclose(zbar(1j * np.eye(3)), -2j * np.eye(3), atol=1e-15)

    def test_off_diagonal_rotation(self):
        """Test mutual terms pick up the phase rotation"""
        Z = np.full((3, 3), 1.0 + 0j)
        alpha = np.exp(-2j * np.pi / 3)
        assert zbar(Z)[0, 1] == pytest.approx(2.0 * np.conj(alpha))
        assert zbar(Z)[1, 0] == pytest.approx(2.0 * alpha)


class TestCompileFeeder:
    """Tests for structural validation"""

    def test_valid_feeder(self, feeder_dict):
        """Test arrays compiled from a valid document"""
        feeder = feeder_from_dict(feeder_dict)
        assert feeder.n_buses == 4 and feeder.N == 3
        assert feeder.phases(2) == "abc"
        assert feeder.phases(3) == "b"
        assert feeder.phase_counts() == {"a": 3, "b": 4, "c": 3}
        assert feeder.children[1] == (2, 3)
        assert list(feeder.order) == [0, 1, 2, 3]
        assert feeder.s_max[1] == 2.0 and np.isinf(feeder.s_max[2])
        np.testing.assert_allclose(feeder.gen_box["pmax"][2], [0.1, 0.2, 0.3])
        np.testing.assert_allclose(feeder.gen_box["qmin"][2], [-0.1, -0.1, -0.1])
        assert feeder.has_gen.tolist() == [False, False, True, False]
        assert sorted(feeder.graph().edges()) == [(0, 1), (1, 2), (1, 3)]
        assert feeder.v0 == 1.0 and feeder.base_kva == 1000.0

    def test_ids_must_be_contiguous(self, feeder_dict):
        """Test a gap in bus ids"""
        feeder_dict["buses"][3]["id"] = 7
        with pytest.raises(FeederValidationError):
            feeder_from_dict(feeder_dict)

    def test_substation_parent(self, feeder_dict):
        """Test bus 0 must have a null parent"""
        feeder_dict["buses"][0]["parent"] = 1
        with pytest.raises(FeederValidationError, match="bus 0"):
            feeder_from_dict(feeder_dict)

    def test_unknown_parent(self, feeder_dict):
        """Test a parent outside the bus list"""
        feeder_dict["buses"][3]["parent"] = 9
        with pytest.raises(FeederValidationError, match="bus 3"):
            feeder_from_dict(feeder_dict)

    def test_cycle(self, feeder_dict):
        """Test two buses pointing at each other"""
        feeder_dict["buses"][1]["parent"] = 2
        with pytest.raises(FeederValidationError, match="not a tree"):
            feeder_from_dict(feeder_dict)

    def test_phase_not_carried(self, feeder_dict):
        """Test a child phase missing at the parent names the bus"""
        feeder_dict["buses"].append(
            {"id": 4, "parent": 3, "phases": "ab", "z": _z(0.01, phases="ab")}
        )
        with pytest.raises(FeederValidationError, match="bus 4"):
            feeder_from_dict(feeder_dict)

    def test_asymmetric_impedance(self, feeder_dict):
        """Test z must equal its transpose"""
        feeder_dict["buses"][1]["z"][0][1] = {"re": 0.5, "im": 0.0}
        with pytest.raises(FeederValidationError, match="symmetric"):
            feeder_from_dict(feeder_dict)

    def test_impedance_on_absent_phase(self, feeder_dict):
        """Test z entries on phases the line does not carry"""
        feeder_dict["buses"][3]["z"] = _z(0.03)
        with pytest.raises(FeederValidationError, match="absent"):
            feeder_from_dict(feeder_dict)

    def test_missing_impedance(self, feeder_dict):
        """Test every line needs z"""
        del feeder_dict["buses"][2]["z"]
        with pytest.raises(FeederValidationError, match="bus 2"):
            feeder_from_dict(feeder_dict)

    def test_voltage_limits_ordered(self, feeder_dict):
        """Test v_min below v_max"""
        feeder_dict["buses"][2].update(v_min_pu2=1.2, v_max_pu2=1.1)
        with pytest.raises(FeederValidationError, match="bus 2"):
            feeder_from_dict(feeder_dict)

    def test_generation_list_length(self, feeder_dict):
        """Test per-phase generation data needs three entries"""
        feeder_dict["buses"][2]["gen"]["pmax"] = [0.1, 0.2]
        with pytest.raises(FeederValidationError, match="pmax"):
            feeder_from_dict(feeder_dict)

    def test_off_schema(self, feeder_dict):
        """Test schema violations are parse errors"""
        bad = copy.deepcopy(feeder_dict)
        bad["buses"][1]["phases"] = "ad"
        with pytest.raises(FeederParseError):
            feeder_from_dict(bad)
        bad = copy.deepcopy(feeder_dict)
        bad["version"] = 2
        with pytest.raises(FeederParseError):
            feeder_from_dict(bad)
        bad = copy.deepcopy(feeder_dict)
        bad["buses"][1]["colour"] = "red"
        with pytest.raises(FeederParseError):
            feeder_from_dict(bad)

    def test_parse_file(self, feeder_dict, tmp_path):
        """Test reading from disk and unreadable files"""
        path = tmp_path / "feeder.json"
        path.write_text(json.dumps(feeder_dict))
        assert parse_feeder(path).n_buses == 4
        path.write_text("[")
        with pytest.raises(FeederParseError):
            parse_feeder(path)
        with pytest.raises(ParseError):
            parse_feeder(tmp_path / "missing.json")

    def test_arrays_are_read_only(self, feeder_dict):
        """Test compiled arrays cannot be modified"""
        feeder = feeder_from_dict(feeder_dict)
        with pytest.raises(ValueError):
            feeder.v_min[0] = 0.0


class TestFlowEquations:
    """Tests for the flow residuals and the forward sweep"""

    def test_forward_sweep_solves_equations(self, feeder_dict):
        """Test the sweep satisfies every balance and drop equation"""
        feeder = feeder_from_dict(feeder_dict)
        rng = np.random.default_rng(3)
        pd = rng.uniform(0.0, 0.1, size=(4, 3, 5))
        qd = rng.uniform(0.0, 0.05, size=(4, 3, 5))
        pg = feeder.zeros(5)
        pg[2] = 0.05
        state = forward_sweep(feeder, pd, qd, pg=pg)
        for residual in flow_residuals(feeder, state).values():
            np.testing.assert_allclose(residual, 0.0, atol=1e-14)
        assert np.all(state.v[0] == 1.0)
        np.testing.assert_array_equal(state.P[3, [0, 2]], 0.0)

    def test_absent_phase_copies_parent_voltage(self, feeder_dict):
        """Test voltages on absent phases follow the parent"""
        feeder = feeder_from_dict(feeder_dict)
        pd = np.full((4, 3, 2), 0.1)
        state = forward_sweep(feeder, pd, pd * 0.3)
        np.testing.assert_array_equal(state.v[3, 0], state.v[1, 0])
        assert np.all(state.v[1] < 1.0)

    def test_heavier_load_lowers_voltage(self, feeder_dict):
        """Test resistive lines drop voltage under load"""
        feeder = feeder_from_dict(feeder_dict)
        light = forward_sweep(feeder, np.full((4, 3, 1), 0.01), np.zeros((4, 3, 1)))
        heavy = forward_sweep(feeder, np.full((4, 3, 1), 0.1), np.zeros((4, 3, 1)))
        assert np.all(heavy.v[2] < light.v[2])

    def test_single_slot_residuals(self, feeder_dict):
        """Test residuals of one slot"""
        feeder = feeder_from_dict(feeder_dict)
        state = GridState.zeros(feeder, 3)
        state.pd[1, 0, 1] = 0.2
        residuals = flow_residuals(feeder, state, t=1)
        assert residuals["p"][1, 0] == pytest.approx(-0.2)
        assert residuals["p"].shape == (4, 3)

    def test_dimension_mismatch(self, feeder_dict):
        """Test a state that does not fit the feeder"""
        feeder = feeder_from_dict(feeder_dict)
        state = GridState.zeros(feeder, 2)
        state.P = np.zeros((3, 3, 2))
        with pytest.raises(DimensionMismatch):
            flow_residuals(feeder, state)

    def test_objective(self, feeder_dict):
        """Test supply plus generation cost"""
        feeder = feeder_from_dict(feeder_dict)
        state = GridState.zeros(feeder, 2)
        state.P[0] = 0.5
        state.pg[2, 1] = 0.1
        assert supply_cost(feeder, state.P[0]) == pytest.approx(6 * (0.25 + 0.25))
        assert network_objective(feeder, state) == pytest.approx(3.0 + 2 * (2.0 * 0.01 + 0.1))


class TestNetworkLoads:
    """Tests for per-bus load files"""

    def test_units_and_summing(self, feeder_dict, tmp_path):
        """Test kW are converted to p.u. and duplicate rows summed"""
        feeder = feeder_from_dict(feeder_dict)
        path = tmp_path / "loads.csv"
        path.write_text("t,bus,phase,p_kw,q_kvar\n1,1,A,100,30\n1,1,a,50,0\n2,3,b,20,5\n")
        d, qd = load_network_loads(path, feeder, 2)
        assert d.shape == (4, 3, 2)
        assert d[1, 0, 0] == pytest.approx(0.15)
        assert qd[1, 0, 0] == pytest.approx(0.03)
        assert d[3, 1, 1] == pytest.approx(0.02)
        assert d.sum() == pytest.approx(0.17)

    def test_dump_and_load(self, feeder_dict, tmp_path):
        """Test a dumped load file reads back"""
        feeder = feeder_from_dict(feeder_dict)
        d = feeder.zeros(3)
        qd = feeder.zeros(3)
        d[2, 2] = [0.01, 0.02, 0.03]
        qd[3, 1] = [0.005, 0.0, 0.001]
        path = tmp_path / "loads.csv"
        dump_network_loads(d, qd, feeder, path, provenance="synthetic")
        assert path.read_text().startswith("# synthetic")
        d2, qd2 = load_network_loads(path, feeder, 3)
        np.testing.assert_allclose(d2, d, atol=1e-15)
        np.testing.assert_allclose(qd2, qd, atol=1e-15)

    def test_absent_phase_rejected(self, feeder_dict, tmp_path):
        """Test load on a phase the bus does not carry"""
        feeder = feeder_from_dict(feeder_dict)
        path = tmp_path / "loads.csv"
        path.write_text("t,bus,phase,p_kw\n1,3,a,10\n")
        with pytest.raises(FeederValidationError, match="bus 3"):
            load_network_loads(path, feeder, 1)

    def test_bad_rows(self, feeder_dict, tmp_path):
        """Test slots, buses and columns are checked"""
        feeder = feeder_from_dict(feeder_dict)
        path = tmp_path / "loads.csv"
        path.write_text("t,bus,phase,p_kw\n3,1,a,10\n")
        with pytest.raises(ParseError):
            load_network_loads(path, feeder, 2)
        path.write_text("t,bus,phase,p_kw\n1,8,a,10\n")
        with pytest.raises(FeederValidationError):
            load_network_loads(path, feeder, 2)
        path.write_text("t,bus,p_kw\n1,1,10\n")
        with pytest.raises(ParseError):
            load_network_loads(path, feeder, 2)
