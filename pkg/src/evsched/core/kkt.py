#!/usr/bin/env python3
"""
Equality-constrained quadratic programs with a diagonal Hessian

    minimize    1/2 x^T diag(H) x - h^T x
    subject to  A x = c

Solved through the Schur complement A H^-1 A^T, factorized once and applied
to many right-hand sides (one column per time slot).
"""

import logging

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DimensionMismatch, SingularKkt

logger = logging.getLogger(__name__)


class EqualityQP:
    """Prefactorized equality-constrained QP sharing A and H across solves."""

    def __init__(self, A: np.ndarray, hessian_diag: np.ndarray, label: str = ""):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        hessian_diag = np.asarray(hessian_diag, dtype=float)
        if A.shape[1] != hessian_diag.size:
            raise DimensionMismatch(
                f"{label}: {A.shape[1]} columns but {hessian_diag.size} Hessian entries"
            )
        if np.any(hessian_diag <= 0):
            raise SingularKkt(f"{label}: Hessian must be positive definite")
        self.A = A
        self.h_inv = 1.0 / hessian_diag
        self.label = label
        self.factor = None
        if A.shape[0]:
            schur = (A * self.h_inv) @ A.T
            try:
                self.factor = cho_factor(schur, lower=True, check_finite=True)
            except LinAlgError as e:
                raise SingularKkt(f"{label}: constraint rows are linearly dependent") from e

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_cons(self) -> int:
        return self.A.shape[0]

    def solve(self, h: np.ndarray, c: np.ndarray) -> np.ndarray:
        """
        Minimizers for every column of h and c.

        Args:
            h: Linear terms, shape (n_vars, K)
            c: Constraint right-hand sides, shape (n_cons, K)

        Returns:
            Array of shape (n_vars, K)
        """
        free = self.h_inv[:, None] * h
        if self.factor is None:
            return free
        multipliers = cho_solve(self.factor, self.A @ free - c)
        return free - self.h_inv[:, None] * (self.A.T @ multipliers)

    def residual(self, x: np.ndarray, c: np.ndarray) -> float:
        """Largest constraint violation |A x - c|."""
        if self.factor is None:
            return 0.0
        return float(np.max(np.abs(self.A @ x - c))) if x.size else 0.0
