"""
Tests for the prefactorized equality-constrained QP
"""

import numpy as np
import pytest

from src.evsched.core.errors import DimensionMismatch, SingularKkt
from src.evsched.core.kkt import EqualityQP


class TestEqualityQP:
    """Tests for EqualityQP"""

    def test_matches_full_kkt_system(self):
        """Test against a dense solve of the KKT system"""
        rng = np.random.default_rng(5)
        A = rng.normal(size=(2, 5))
        H = rng.uniform(0.5, 2.0, size=5)
        h = rng.normal(size=(5, 3))
        c = rng.normal(size=(2, 3))
        x = EqualityQP(A, H).solve(h, c)

        kkt = np.block([[np.diag(H), A.T], [A, np.zeros((2, 2))]])
        expected = np.linalg.solve(kkt, np.vstack([h, c]))[:5]
        np.testing.assert_allclose(x, expected, atol=1e-10)
        np.testing.assert_allclose(A @ x, c, atol=1e-10)

    def test_residual(self):
        """Test the constraint violation of a given point"""
        qp = EqualityQP(np.array([[1.0, 1.0]]), np.ones(2))
        assert qp.residual(np.array([[1.0], [1.0]]), np.array([[1.5]])) == pytest.approx(0.5)
        assert qp.n_vars == 2 and qp.n_cons == 1

    def test_unconstrained(self):
        """Test a block without constraint rows"""
        qp = EqualityQP(np.zeros((0, 3)), np.array([1.0, 2.0, 4.0]))
        x = qp.solve(np.ones((3, 2)), np.zeros((0, 2)))
        np.testing.assert_allclose(x, [[1.0, 1.0], [0.5, 0.5], [0.25, 0.25]])
        assert qp.residual(x, np.zeros((0, 2))) == 0.0

    def test_dependent_rows(self):
        """Test repeated constraint rows are rejected"""
        with pytest.raises(SingularKkt, match="bus 4"):
            EqualityQP(np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]), np.ones(3), label="bus 4")

    def test_hessian_checks(self):
        """Test the Hessian must be positive and sized to A"""
        with pytest.raises(SingularKkt):
            EqualityQP(np.ones((1, 2)), np.array([1.0, 0.0]))
        with pytest.raises(DimensionMismatch):
            EqualityQP(np.ones((1, 2)), np.ones(3))
