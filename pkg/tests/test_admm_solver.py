"""
Tests for the consensus ADMM network solver
"""

from itertools import product

import numpy as np
import pytest

from src.evsched.core.admm_solver import (
    AdmmConfig,
    AdmmSolver,
    AdmmState,
    BusBlock,
    MULTIPLIERS,
    PD,
    PG,
    PH,
    QG,
    QH,
    N_KINDS,
    P,
    Q,
    V,
    VH,
    constraint_system,
    ev_bus_load,
    multiplier_update,
    project_line_disk,
    project_substation_capacity,
    residual_pair,
    solve,
    x_update_bus,
    x_update_substation,
    z_update_pd,
    z_update_pg,
    z_update_qg,
    z_update_v,
)
from src.evsched.core.errors import DimensionMismatch, FeederValidationError, LengthMismatch, MaxIterExceeded
from src.evsched.core.fleet import ChargingRequest, CostModel, Fleet
from src.evsched.core.grid_model import SupplyCost, compile_feeder
from src.evsched.core.instances import synthetic_123bus
from src.evsched.core.reference_oracle import (
    DiskSet,
    SubstationSet,
    brute_projection,
    oracle_network,
    oracle_unconstrained,
)

# phase-a valley fill of the toy instance: level 0.128 p.u. over base loads
TOY_EV_AGGREGATE = np.array([0.018, 0.040, 0.073, 0.029])


def _toy_optimum(d):
    totals = d.sum(axis=0)
    totals[0] += TOY_EV_AGGREGATE
    return float(np.sum(totals**2))


class TestBusBlock:
    """Tests for the per-bus equality-constrained QP"""

    def test_block_sizes(self, toy_inputs):
        """Test variables and rows of the substation and a line bus"""
        feeder, _, _, _ = toy_inputs
        root = BusBlock(feeder, 0, rho=1.0)
        middle = BusBlock(feeder, 1, rho=1.0)
        assert root.qp.n_cons == 6
        assert root.qp.n_vars == 18 + 6
        assert middle.qp.n_cons == 9
        assert middle.qp.n_vars == 18 + 3 + 6

    def test_local_equations_hold(self, toy_inputs):
        """Test every block solution satisfies its balance and drop rows"""
        feeder, _, _, qd = toy_inputs
        rng = np.random.default_rng(1)
        targets = rng.normal(size=(N_KINDS, 3, 3, 4))
        out = np.zeros_like(targets)
        for n in range(3):
            assert x_update_bus(BusBlock(feeder, n, rho=1.0), targets, qd, out) < 1e-12

        np.testing.assert_allclose(out[PG, 1] - out[PD, 1] + out[P, 1] - out[PH, 2], 0.0, atol=1e-12)
        np.testing.assert_allclose(out[QG, 1] + out[Q, 1] - out[QH, 2], qd[1], atol=1e-12)
        drop = feeder.Zbar[1].real @ out[P, 1] - feeder.Zbar[1].imag @ out[Q, 1]
        np.testing.assert_allclose(out[VH, 1] - out[V, 1], drop, atol=1e-12)
        np.testing.assert_allclose(out[PG, 2] - out[PD, 2] + out[P, 2], 0.0, atol=1e-12)

    def test_supply_cost_in_root_block(self, toy_inputs):
        """Test the substation flow minimizes rho/2 (x - t)^2 + f0"""
        feeder, _, _, _ = toy_inputs
        block = BusBlock(feeder, 0, rho=2.0)
        index = list(zip(block.kinds, block.phases)).index((P, 0))
        # a = 1, b = 0: minimizer of (x - t)^2 + x^2 is t / 2
        assert block.qp.h_inv[index] == pytest.approx(0.5)

    def test_heavy_supply_cost_shuts_substation(self, toy_instance):
        """Test a very large f0 weight drives the substation flow to zero"""
        record = toy_instance.feeder_record.model_copy(update={"f0": SupplyCost(a=1e9)})
        feeder = compile_feeder(record)
        _, qd = toy_instance.loads
        targets = np.random.default_rng(2).normal(size=(N_KINDS, 3, 3, 4))
        out = np.zeros_like(targets)

        assert x_update_substation(BusBlock(feeder, 0, rho=1.0), targets, qd, out) < 1e-9
        assert np.abs(out[P, 0]).max() <= 1e-6

    def test_substation_update_refuses_line_bus(self, toy_inputs):
        """Test the substation update only runs on bus 0"""
        feeder, _, _, qd = toy_inputs
        targets = np.zeros((N_KINDS, 3, 3, 4))
        with pytest.raises(ValueError, match="bus 1"):
            x_update_substation(BusBlock(feeder, 1, rho=1.0), targets, qd, np.zeros_like(targets))


class TestConsensusUpdates:
    """Tests for the closed-form second-step updates"""

    def test_generation_update(self):
        """Test the prox of a quadratic generation cost with box clipping"""
        assert z_update_pg(1.0, 1.0, 0.5, 2.0, -10.0, 10.0) == pytest.approx(0.375)
        assert z_update_pg(1.0, 1.0, 0.5, 2.0, 0.0, 0.2) == pytest.approx(0.2)
        assert z_update_pg(-5.0, 0.0, 0.0, 1.0, 0.0, 1.0) == 0.0
        np.testing.assert_array_equal(z_update_qg(np.array([-2.0, 0.5, 2.0]), -1.0, 1.0), [-1.0, 0.5, 1.0])

    def test_voltage_update(self):
        """Test averaging with children's copies and clipping"""
        assert z_update_v(1.0, 2.0, 2, 0.0, 5.0) == pytest.approx(1.0)
        assert z_update_v(1.0, 3.0, 1, 0.0, 1.5) == pytest.approx(1.5)
        assert z_update_v(0.9, 0.0, 0, 0.95, 1.05) == pytest.approx(0.95)

    def test_load_update(self):
        """Test the load consensus is the midpoint of its two terms"""
        assert z_update_pd(1.0, 0.5, 2.0, 0.5, -1.0) == pytest.approx(1.5)

    def test_line_disk_matches_dual_search(self):
        """Test radial scaling against an independent projection"""
        rng = np.random.default_rng(9)
        for _ in range(100):
            point = rng.normal(scale=2.0, size=2)
            P_new, Q_new = project_line_disk(point[0], point[1], 1.0)
            np.testing.assert_allclose([P_new, Q_new], brute_projection(point, DiskSet(1.0)), atol=1e-6)

    def test_line_disk_inside_and_origin(self):
        """Test points inside the disk and the origin are unchanged"""
        P_new, Q_new = project_line_disk(np.array([0.0, 0.3]), np.array([0.0, 0.4]), 1.0)
        np.testing.assert_array_equal(P_new, [0.0, 0.3])
        np.testing.assert_array_equal(Q_new, [0.0, 0.4])
        P_new, Q_new = project_line_disk(3.0, 4.0, np.inf)
        assert (P_new, Q_new) == (3.0, 4.0)

    @pytest.mark.parametrize("mask", [m for m in product((True, False), repeat=3) if any(m)])
    def test_substation_matches_dual_search(self, mask):
        """Test the feeder capacity projection against an independent projection"""
        rng = np.random.default_rng(4)
        for _ in range(50):
            P_in = rng.normal(size=3)
            Q_in = rng.normal(size=3)
            P_new, Q_new = project_substation_capacity(P_in, Q_in, 0.5, mask)
            P_ref, Q_ref = brute_projection((P_in, Q_in), SubstationSet(0.5, mask))
            np.testing.assert_allclose(P_new, P_ref, atol=1e-6)
            np.testing.assert_allclose(Q_new, Q_ref, atol=1e-6)

    def test_substation_per_slot(self):
        """Test columns are projected independently"""
        P_in = np.array([[1.0, 0.1], [1.0, 0.1], [1.0, 0.1]])
        Q_in = np.zeros((3, 2))
        P_new, Q_new = project_substation_capacity(P_in, Q_in, 1.5)
        np.testing.assert_allclose(P_new[:, 0], [0.5, 0.5, 0.5])
        np.testing.assert_allclose(P_new[:, 1], [0.1, 0.1, 0.1])
        np.testing.assert_array_equal(Q_new, 0.0)


class TestResiduals:
    """Tests for the stacked constraint system and residuals"""

    def test_zero_state(self, toy_inputs):
        """Test only the load-coupling rows are violated at zero"""
        feeder, fleet, d, qd = toy_inputs
        solver = AdmmSolver(feeder, fleet, d, qd)
        state = AdmmState.zeros(feeder, 4, len(fleet))
        r, w = constraint_system(feeder, state, solver.d, solver.groups)

        assert r.shape == (7 * 36 + 3 * 24,)
        np.testing.assert_array_equal(w, 0.0)
        np.testing.assert_allclose(r[-36:], solver.d.ravel())
        np.testing.assert_array_equal(r[:-36], 0.0)

    def test_multiplier_update_and_residuals(self, toy_inputs):
        """Test scaled multipliers accumulate violations"""
        feeder, fleet, d, qd = toy_inputs
        solver = AdmmSolver(feeder, fleet, d, qd)
        state = AdmmState.zeros(feeder, 4, len(fleet))
        previous = state.consensus()
        violations = solver.violations(state)
        multiplier_update(state, violations)
        np.testing.assert_allclose(state.mu, solver.d)

        op, od, op_std = residual_pair(violations, state, previous, rho=1.0)
        assert op_std == pytest.approx(np.sum(solver.d**2))
        assert op == pytest.approx(4.0 * op_std)
        assert od == 0.0
        assert set(violations) == set(MULTIPLIERS)

    def test_ev_bus_load(self, toy_inputs):
        """Test EV profiles are summed onto their bus and phase"""
        feeder, fleet, _, _ = toy_inputs
        profiles = np.array([[0.01, 0.0, 0.0, 0.0], [0.0, 0.02, 0.0, 0.0]])
        load = ev_bus_load(feeder, profiles, fleet.groups())
        assert load[1, 0, 0] == 0.01
        assert load[2, 0, 1] == 0.02
        assert load.sum() == pytest.approx(0.03)


class TestAdmmSolver:
    """Tests for the ADMM iteration"""

    def test_ev_placement_checked(self, toy_inputs):
        """Test EVs must sit on an existing bus and phase"""
        feeder, _, d, qd = toy_inputs
        loose = ChargingRequest(id="x", availability=frozenset({1}), rate_cap=0.01, energy_need=0.01)
        with pytest.raises(FeederValidationError, match="EV x"):
            AdmmSolver(feeder, Fleet.from_requests([loose], T=4), d, qd)
        far = loose.model_copy(update={"bus": 7, "phase": "a"})
        with pytest.raises(FeederValidationError, match="EV x"):
            AdmmSolver(feeder, Fleet.from_requests([far], T=4), d, qd)

    def test_load_shapes_checked(self, toy_inputs):
        """Test loads must match the feeder and the fleet horizon"""
        feeder, fleet, d, qd = toy_inputs
        with pytest.raises(DimensionMismatch):
            AdmmSolver(feeder, fleet, d[:2], qd[:2])
        longer = np.concatenate([d, d[:, :, :1]], axis=2)
        with pytest.raises(LengthMismatch):
            AdmmSolver(feeder, fleet, longer, longer)

    def test_iteration_limit(self, toy_inputs):
        """Test a short run reports its partial result"""
        feeder, fleet, d, qd = toy_inputs
        result = solve(feeder, fleet, d, qd, AdmmConfig(max_iter=3, tol=1e-12))

        assert not result.converged
        assert result.iterations == 3
        assert len(result.trace) == 3
        assert list(result.trace.to_frame().columns) == ["iter", "cost", "op", "od", "op_std"]
        assert fleet.is_feasible(result.profiles, rtol=1e-8)
        assert result.health["violations"]["flow_equations"] < 1e-12
        with pytest.raises(MaxIterExceeded) as excinfo:
            result.raise_for_status()
        assert excinfo.value.result is result

    def test_threads_do_not_change_iterates(self, toy_inputs):
        """Test the thread pool only reorders independent solves"""
        feeder, fleet, d, qd = toy_inputs
        serial = solve(feeder, fleet, d, qd, AdmmConfig(max_iter=5, tol=1e-12))
        pooled = solve(feeder, fleet, d, qd, AdmmConfig(max_iter=5, tol=1e-12, threads=2))
        np.testing.assert_array_equal(serial.profiles, pooled.profiles)
        np.testing.assert_array_equal(serial.state.Pt, pooled.state.Pt)

    @pytest.mark.slow
    def test_toy_reaches_valley_fill(self, toy_inputs):
        """Test loose network limits reduce to valley filling on phase a"""
        feeder, fleet, d, qd = toy_inputs
        result = solve(feeder, fleet, d, qd, AdmmConfig(rho=1.0, tol=1e-8, max_iter=2000))

        assert result.objective == pytest.approx(_toy_optimum(d), rel=1e-2)
        np.testing.assert_allclose(result.profiles.sum(axis=0), TOY_EV_AGGREGATE, atol=5e-3)
        assert result.health["alert_level"] != "violated"

        aggregate = oracle_unconstrained(fleet, d[:, 0].sum(axis=0), CostModel.valley())
        np.testing.assert_allclose(aggregate.optimizer["profiles"].sum(axis=0), TOY_EV_AGGREGATE, atol=1e-4)

    @pytest.mark.slow
    def test_network_oracle_on_toy(self, toy_inputs):
        """Test the central solver agrees with the valley-fill optimum"""
        feeder, fleet, d, qd = toy_inputs
        report = oracle_network(feeder, fleet, d, qd)
        assert report.value == pytest.approx(_toy_optimum(d), rel=1e-3)
        np.testing.assert_allclose(report.optimizer["profiles"].sum(axis=0), TOY_EV_AGGREGATE, atol=5e-3)

    @pytest.mark.slow
    def test_123bus_converges(self):
        """Test the 60-EV feeder meets the residual threshold within 5000 iterations"""
        instance = synthetic_123bus(seed=7, T=24)
        feeder = instance.feeder
        fleet = instance.fleet.scaled(1.0 / feeder.base_kva)
        d, qd = instance.loads

        result = solve(feeder, fleet, d, qd, AdmmConfig(rho=1.0, tol=1e-3, max_iter=5000, threads=4))
        assert result.converged
        assert result.iterations <= 5000
        last = result.trace.records[-1]
        assert max(last.op_std, last.od) <= result.threshold
        assert result.threshold == pytest.approx(1e-3 * 24 * np.sqrt(122))
        assert fleet.is_feasible(result.profiles, rtol=1e-8)
        assert result.health["violations"]["flow_equations"] < 1e-9
