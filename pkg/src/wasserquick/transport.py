"""Exact discrete optimal transport.

Wasserstein-1 distances between finitely supported distributions and
worst-case expectations over Wasserstein balls, both solved as exact linear
programs (HiGHS dual simplex via scipy). Supports here are small (at most a
few hundred atoms), so the dense transportation LP is the right tool; no
entropic regularization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .core import (
    AmbiguitySpec,
    DiscreteDistribution,
    DimensionMismatchError,
    InvalidInputError,
    NumericalError,
    cost_matrix,
)

MARGINAL_ATOL = 1e-9
GAP_ATOL = 1e-8


@dataclass(frozen=True)
class TransportPlan:
    """Coupling between two discrete distributions.

    matrix[l, m] is the mass moved from source atom l to target atom m.
    Row sums reproduce the source marginal, column sums the target marginal,
    and cost is the total transport cost under the generating cost matrix.
    """

    matrix: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    cost: float

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        row = np.asarray(self.row_marginal, dtype=float).ravel()
        col = np.asarray(self.col_marginal, dtype=float).ravel()
        if matrix.shape != (row.size, col.size):
            raise InvalidInputError(
                f"plan shape {matrix.shape} does not match marginals "
                f"({row.size}, {col.size})"
            )
        if np.any(matrix < -MARGINAL_ATOL):
            raise InvalidInputError("transport plan has negative entries")
        matrix = np.maximum(matrix, 0.0).copy()
        matrix.flags.writeable = False
        row = row.copy()
        col = col.copy()
        row.flags.writeable = False
        col.flags.writeable = False
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "row_marginal", row)
        object.__setattr__(self, "col_marginal", col)

    def residuals(self, costs: np.ndarray | None = None) -> dict[str, float]:
        """Max feasibility violations: row/column sums and cost consistency."""
        out = {
            "row": float(np.abs(self.matrix.sum(axis=1) - self.row_marginal).max()),
            "col": float(np.abs(self.matrix.sum(axis=0) - self.col_marginal).max()),
        }
        if costs is not None:
            out["cost"] = abs(float((self.matrix * costs).sum()) - self.cost)
        return out

    def validate(self, costs: np.ndarray | None = None, atol: float = MARGINAL_ATOL):
        res = self.residuals(costs)
        bad = {k: v for k, v in res.items() if v > atol}
        if bad:
            raise NumericalError(f"transport plan violates feasibility: {bad}")


def _marginal_constraints(k: int, m: int) -> sparse.csc_matrix:
    """Equality matrix mapping a flattened k*m plan to its row and column sums."""
    rows = sparse.kron(sparse.eye(k), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, k)), sparse.eye(m))
    return sparse.vstack([rows, cols]).tocsc()


def wasserstein_distance(
    P: DiscreteDistribution, Q: DiscreteDistribution, metric
) -> tuple[float, TransportPlan]:
    """Order-1 Wasserstein distance between two discrete distributions.

    Solves the transportation linear program exactly and returns the optimal
    value with a primal-optimal coupling.
    """
    if P.dimension != Q.dimension:
        raise DimensionMismatchError(
            f"distributions have dimensions {P.dimension} and {Q.dimension}"
        )
    C = cost_matrix(metric, P.support, Q.support)
    k, m = C.shape
    A_eq = _marginal_constraints(k, m)
    b_eq = np.concatenate([P.weights, Q.weights])
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise NumericalError(
            f"transport LP failed (status {res.status}): {res.message}"
        )
    matrix = res.x.reshape(k, m)
    value = float(res.fun)
    plan = TransportPlan(
        matrix=matrix,
        row_marginal=P.weights,
        col_marginal=Q.weights,
        cost=value,
    )
    plan.validate(C)
    return value, plan


def worst_case_expectation(
    f: np.ndarray, spec: AmbiguitySpec, costs: np.ndarray | None = None
) -> tuple[float, DiscreteDistribution]:
    """Maximize the expectation of f over the Wasserstein ball.

    Candidates are distributions on the nominal's support Z. The maximizer is
    found from the joint LP over (mu, coupling):

        max  sum_m mu_m f_m
        s.t. coupling rows sum to the nominal, columns to mu,
             total transport cost <= radius.

    Returns the optimal value and a witness distribution attaining it.
    """
    nominal = spec.nominal
    f = np.asarray(f, dtype=float).ravel()
    if f.size != nominal.size:
        raise InvalidInputError(
            f"expected {nominal.size} function values, got {f.size}"
        )
    if not np.all(np.isfinite(f)):
        raise InvalidInputError("function values must be finite")
    if costs is None:
        costs = cost_matrix(spec.metric, nominal.support, nominal.support)
    k = nominal.size
    if spec.radius == 0.0:
        return float(nominal.weights @ f), nominal
    # After eliminating mu = column sums, the LP is over the coupling alone.
    rows = sparse.kron(sparse.eye(k), np.ones((1, k))).tocsc()
    res = linprog(
        np.tile(-f, k),
        A_eq=rows,
        b_eq=nominal.weights,
        A_ub=costs.ravel()[None, :],
        b_ub=[spec.radius],
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        # Radius >= 0 always admits the identity coupling, so this is internal.
        raise NumericalError(
            f"worst-case expectation LP failed (status {res.status}): {res.message}"
        )
    plan = res.x.reshape(k, k)
    mu = np.maximum(plan.sum(axis=0), 0.0)
    mu = mu / mu.sum()
    witness = DiscreteDistribution(support=nominal.support, weights=mu)
    return float(-res.fun), witness
