"""Least favorable distributions over Wasserstein (and KL) ambiguity balls.

The central routine solves, over the joint empirical support Z of the pre- and
post-change training samples, the convex program

    minimize   sum_l p2_l log(p2_l / p1_l)
    subject to <Gamma_k, C> <= r_k                    k = 1, 2
               Gamma_1 1 = mu0,   Gamma_1^T 1 = p1
               Gamma_2 1 = nu0,   Gamma_2^T 1 = p2
               p1, p2 >= 0,  Gamma_1, Gamma_2 >= 0

whose optimizer is the least favorable pair (p1, p2). The backend is an
exponential-cone interior-point solver (Clarabel via cvxpy), but optimality is
never taken on faith: every solve is post-processed into an exactly feasible
primal point and certified against an independently evaluated Lagrangian dual
bound. The dual of the program above is

    maximize   -lam1 r1 - lam2 r2 + u1.mu0 + u2.nu0
    subject to u_k[l] + v_k[m] <= lam_k C[l, m]       for all l, m, k
               log v1[m] + 1 + v2[m] >= 0             for all m
               lam1, lam2 >= 0

and any feasible dual point yields a valid lower bound, so we repair the
solver's dual estimates into feasibility and evaluate the bound ourselves.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    AmbiguitySpec,
    DiscreteDistribution,
    GroundMetric,
    InfeasibleError,
    InvalidInputError,
    NumericalError,
    as_point_matrix,
    cost_matrix,
    merge_duplicate_points,
)
from .transport import TransportPlan, worst_case_expectation

# Log-likelihood ratios are clamped to this magnitude before use in CUSUM
# sums; e^30 dwarfs any threshold reachable in the experiments.
LOG_RATIO_CLAMP = 30.0

# Masses below this are treated as numerical zeros when both p1 and p2 fall
# under it: at an optimum p2/p1 is bounded by the dual variable, so genuine
# atoms cannot have one tiny and one sizable mass.
DEFAULT_CLEANUP_TOL = 1e-6


@dataclass(frozen=True)
class SolveTolerances:
    """Binding numerical contract for LFD solves.

    feas_tol bounds marginal and budget residuals of the returned primal;
    gap_tol bounds the relative duality gap certified against the
    independently evaluated dual bound. max_iterations caps backend solver
    iterations; exhausting it raises instead of returning silently.
    """

    feas_tol: float = 1e-8
    gap_tol: float = 1e-6
    max_iterations: int = 100_000
    cleanup_tol: float = DEFAULT_CLEANUP_TOL


@dataclass(frozen=True)
class LfdProblem:
    """Training data and ambiguity radii defining an LFD instance."""

    pre_samples: np.ndarray
    post_samples: np.ndarray
    r1: float
    r2: float
    metric: GroundMetric = GroundMetric.L1

    def __post_init__(self):
        pre = as_point_matrix(self.pre_samples)
        post = as_point_matrix(self.post_samples, expected_dim=pre.shape[1])
        if not np.isfinite(self.r1) or self.r1 < 0:
            raise InvalidInputError(f"r1 must be >= 0, got {self.r1}")
        if not np.isfinite(self.r2) or self.r2 < 0:
            raise InvalidInputError(f"r2 must be >= 0, got {self.r2}")
        pre = pre.copy()
        post = post.copy()
        pre.flags.writeable = False
        post.flags.writeable = False
        object.__setattr__(self, "pre_samples", pre)
        object.__setattr__(self, "post_samples", post)

    @property
    def n1(self) -> int:
        return self.pre_samples.shape[0]

    @property
    def n2(self) -> int:
        return self.post_samples.shape[0]


@dataclass(frozen=True)
class SolverCertificate:
    """Optimality evidence attached to every LFD solution."""

    primal_residual: float
    dual_bound: float
    relative_gap: float
    iterations: int
    dual_variables: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.relative_gap < -1e-9:
            raise InvalidInputError(
                f"negative duality gap {self.relative_gap}: dual bound exceeds objective"
            )


@dataclass(frozen=True)
class LfdSolution:
    """Least favorable pair on the joint support with transport evidence."""

    joint_support: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    plan1: TransportPlan
    plan2: TransportPlan
    objective: float
    certificate: SolverCertificate
    r1: float
    r2: float
    metric: GroundMetric

    def __post_init__(self):
        Z = as_point_matrix(self.joint_support)
        p1 = np.asarray(self.p1, dtype=float).ravel()
        p2 = np.asarray(self.p2, dtype=float).ravel()
        n = Z.shape[0]
        if p1.size != n or p2.size != n:
            raise InvalidInputError("p1/p2 length does not match the joint support")
        if np.any((p2 > 0) & (p1 <= 0)):
            raise InvalidInputError(
                "absolute continuity violated: p2 puts mass where p1 is zero"
            )
        C = cost_matrix(self.metric, Z, Z)
        for plan, r, name in ((self.plan1, self.r1, "plan1"), (self.plan2, self.r2, "plan2")):
            plan.validate()
            cost = float((plan.matrix * C).sum())
            if cost > r + 1e-8:
                raise InvalidInputError(
                    f"{name} cost {cost} exceeds radius {r} beyond tolerance"
                )
        if abs(_kl(p2, p1) - self.objective) > 1e-8:
            raise InvalidInputError("objective inconsistent with p1, p2")
        Z = Z.copy()
        p1 = p1.copy()
        p2 = p2.copy()
        for arr in (Z, p1, p2):
            arr.flags.writeable = False
        object.__setattr__(self, "joint_support", Z)
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p2", p2)

    def to_json_dict(self) -> dict:
        cert = self.certificate
        return {
            "support": self.joint_support.tolist(),
            "p1": self.p1.tolist(),
            "p2": self.p2.tolist(),
            "objective": self.objective,
            "gap": cert.relative_gap,
            "r1": self.r1,
            "r2": self.r2,
            "metric": self.metric.value,
            "plan1": self.plan1.matrix.tolist(),
            "plan2": self.plan2.matrix.tolist(),
            "mu0": self.plan1.row_marginal.tolist(),
            "nu0": self.plan2.row_marginal.tolist(),
            "certificate": {
                "primal_residual": cert.primal_residual,
                "dual_bound": cert.dual_bound,
                "relative_gap": cert.relative_gap,
                "iterations": cert.iterations,
            },
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_json_dict(), **kwargs)

    @classmethod
    def from_json_dict(cls, d: dict) -> "LfdSolution":
        Z = np.asarray(d["support"], dtype=float)
        p1 = np.asarray(d["p1"], dtype=float)
        p2 = np.asarray(d["p2"], dtype=float)
        mu0 = np.asarray(d["mu0"], dtype=float)
        nu0 = np.asarray(d["nu0"], dtype=float)
        metric = GroundMetric(d["metric"])
        C = cost_matrix(metric, Z, Z)
        plan1 = _plan_from_matrix(np.asarray(d["plan1"], dtype=float), mu0, p1, C)
        plan2 = _plan_from_matrix(np.asarray(d["plan2"], dtype=float), nu0, p2, C)
        cert = d.get("certificate", {})
        certificate = SolverCertificate(
            primal_residual=float(cert.get("primal_residual", 0.0)),
            dual_bound=float(cert.get("dual_bound", d["objective"] - abs(d["gap"]))),
            relative_gap=float(cert.get("relative_gap", d["gap"])),
            iterations=int(cert.get("iterations", 0)),
        )
        return cls(
            joint_support=Z,
            p1=p1,
            p2=p2,
            plan1=plan1,
            plan2=plan2,
            objective=float(d["objective"]),
            certificate=certificate,
            r1=float(d["r1"]),
            r2=float(d["r2"]),
            metric=metric,
        )

    @classmethod
    def from_json(cls, text: str) -> "LfdSolution":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class LlrTable:
    """Log-likelihood-ratio values log(p2/p1) on the joint support."""

    support: np.ndarray
    log_ratio: np.ndarray

    def __post_init__(self):
        support = as_point_matrix(self.support)
        lr = np.asarray(self.log_ratio, dtype=float).ravel()
        if lr.size != support.shape[0]:
            raise InvalidInputError("log_ratio length does not match support")
        if not np.all(np.isfinite(lr)):
            raise InvalidInputError("log ratios must be finite")
        support = support.copy()
        lr = lr.copy()
        support.flags.writeable = False
        lr.flags.writeable = False
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "log_ratio", lr)


@dataclass(frozen=True)
class WeakBoundednessReport:
    """Result of checking the worst-case mean likelihood ratio over the ball."""

    worst_case_mean_lr: float
    satisfied: bool
    witness: DiscreteDistribution


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p||q) with 0 log 0 = 0; +inf when p puts mass where q does not."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _plan_from_matrix(matrix, row, col, C) -> TransportPlan:
    return TransportPlan(
        matrix=matrix,
        row_marginal=row,
        col_marginal=col,
        cost=float((np.maximum(matrix, 0.0) * C).sum()),
    )


def build_joint_support(problem: LfdProblem):
    """Joint support Z (pre then post order, duplicates merged) and the
    empirical nominal weight vectors on Z."""
    pre = problem.pre_samples
    post = problem.post_samples
    stacked = np.vstack([pre, post])
    mu_w = np.concatenate([np.full(problem.n1, 1.0 / problem.n1), np.zeros(problem.n2)])
    nu_w = np.concatenate([np.zeros(problem.n1), np.full(problem.n2, 1.0 / problem.n2)])
    Z, mu0 = merge_duplicate_points(stacked, mu_w)
    _, nu0 = merge_duplicate_points(stacked, nu_w)
    return Z, mu0, nu0


def _check_feasible(C: np.ndarray, mu0: np.ndarray, nu0: np.ndarray, r1: float, r2: float):
    """Detect the only infeasible regime: r1 = 0 pins p1 = mu0, and moving the
    post-change nominal onto supp(mu0) may exceed the r2 budget."""
    if r1 > 0:
        return
    sup1 = mu0 > 0
    if not np.any(sup1):
        raise InvalidInputError("pre-change nominal has empty support")
    required = float(nu0 @ C[:, sup1].min(axis=1))
    if required > r2:
        raise InfeasibleError(
            "no absolutely continuous pair exists: r1 = 0 pins the pre-change "
            f"LFD to the empirical nominal, and the post-change transport "
            f"budget constraint <Gamma_2, C> <= r2 = {r2} cannot reach its "
            f"support (minimum cost {required:.6g})"
        )


def _trivial_solution(Z, mu0, nu0, C, r1, r2, metric) -> LfdSolution:
    """Exact solution when the nominals coincide: p1 = p2 = mu0, KL = 0."""
    n = len(mu0)
    diag1 = np.diag(mu0)
    diag2 = np.diag(nu0)
    cert = SolverCertificate(
        primal_residual=0.0,
        dual_bound=0.0,
        relative_gap=0.0,
        iterations=0,
        dual_variables={"lambda1": 0.0, "lambda2": 0.0},
    )
    return LfdSolution(
        joint_support=Z,
        p1=mu0,
        p2=nu0,
        plan1=_plan_from_matrix(diag1, mu0, mu0, C),
        plan2=_plan_from_matrix(diag2, nu0, nu0, C),
        objective=0.0,
        certificate=cert,
        r1=r1,
        r2=r2,
        metric=metric,
    )


def _solve_eq10_conic(C, mu0, nu0, r1, r2, max_iter, tol_scale):
    """One backend pass over the exponential-cone form; returns raw arrays."""
    import cvxpy as cp

    n = len(mu0)
    one = np.ones(n)
    p1 = cp.Variable(n, nonneg=True)
    p2 = cp.Variable(n, nonneg=True)
    G1 = cp.Variable((n, n), nonneg=True)
    G2 = cp.Variable((n, n), nonneg=True)
    c_cost1 = cp.sum(cp.multiply(G1, C)) <= r1
    c_cost2 = cp.sum(cp.multiply(G2, C)) <= r2
    c_col1 = G1.T @ one == p1
    c_col2 = G2.T @ one == p2
    constraints = [c_cost1, c_cost2, G1 @ one == mu0, G2 @ one == nu0, c_col1, c_col2]
    prob = cp.Problem(cp.Minimize(cp.sum(cp.rel_entr(p2, p1))), constraints)
    try:
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            prob.solve(
                solver=cp.CLARABEL,
                tol_gap_abs=tol_scale,
                tol_gap_rel=tol_scale,
                tol_feas=tol_scale,
                max_iter=max_iter,
            )
    except cp.SolverError as exc:
        raise NumericalError(f"conic backend failed: {exc}") from exc
    status = prob.status
    if status in ("infeasible", "infeasible_inaccurate"):
        raise InfeasibleError(
            "LFD program reported infeasible: no (p1, p2) with p2 absolutely "
            f"continuous w.r.t. p1 satisfies both transport budgets r1={r1}, r2={r2}"
        )
    if prob.value is None or status in ("unbounded", "unbounded_inaccurate"):
        raise NumericalError(f"conic backend returned status {status!r}")
    iters = getattr(prob.solver_stats, "num_iters", None) or 0
    return {
        "G1": np.asarray(G1.value, dtype=float),
        "G2": np.asarray(G2.value, dtype=float),
        "lam1": max(float(c_cost1.dual_value or 0.0), 0.0),
        "lam2": max(float(c_cost2.dual_value or 0.0), 0.0),
        "v1": np.asarray(c_col1.dual_value, dtype=float),
        "v2": np.asarray(c_col2.dual_value, dtype=float),
        "iterations": int(iters),
        "status": status,
    }


def _repair_plan(G, marg, C, r):
    """Make a plan exactly row-feasible with cost strictly inside the budget.

    Rows are rescaled to the marginal; if the cost then exceeds the budget the
    plan is mixed toward the zero-cost diagonal coupling (which has the same
    row sums), leaving a small safety margin for later perturbations.
    """
    n = len(marg)
    G = np.maximum(np.asarray(G, dtype=float), 0.0)
    rows = G.sum(axis=1)
    for l in range(n):
        if rows[l] <= 0.0:
            G[l, :] = 0.0
            G[l, l] = marg[l]
        else:
            G[l, :] *= marg[l] / rows[l]
    if r <= 0.0:
        return np.diag(marg)
    cost = float((G * C).sum())
    target = r - min(1e-9, 0.5 * r)
    if cost > target and cost > 0.0:
        theta = min(1.0, (cost - target) / cost)
        G *= 1.0 - theta
        G[np.arange(n), np.arange(n)] += theta * marg
    return G


def _cleanup_dust(G1, G2, C, r1, r2, ztol):
    """Zero out columns where both LFD masses are numerical dust.

    Dust mass is rerouted to each source row's own atom when that column
    survives, otherwise to the nearest surviving atom. Rerouting is applied
    only while it keeps both plans inside their budgets.
    """
    n = C.shape[0]
    p1 = G1.sum(axis=0)
    p2 = G2.sum(axis=0)
    dust = (p1 < ztol) & (p2 < ztol)
    if not np.any(dust):
        return G1, G2
    live_idx = np.where(~dust)[0]
    if live_idx.size == 0:
        return G1, G2
    nearest_live = live_idx[np.argmin(C[:, live_idx], axis=1)]
    for G, r in ((G1, r1), (G2, r2)):
        budget = r - float((G * C).sum())
        for m in np.where(dust)[0]:
            col = G[:, m]
            src = np.where(col > 0)[0]
            if src.size == 0:
                continue
            dests = np.where(dust[src], nearest_live[src], src)
            delta = float((col[src] * (C[src, dests] - C[src, m])).sum())
            if delta > budget:
                continue
            budget -= delta
            G[:, m] = 0.0
            np.add.at(G, (src, dests), col[src])
    return G1, G2


def _dual_bound_eq10(C, mu0, nu0, r1, r2, lam1, lam2, v1, v2):
    """Evaluate the Lagrangian dual at a repaired dual point.

    For any lam >= 0 and any (v1, v2), tightening v1 to exp(-1 - v2) and
    taking u_k as row minima of lam_k C - v_k yields a dual-feasible point, so
    the returned value is a true lower bound on the optimum.
    """
    best = -math.inf
    best_point = None
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            w1 = np.maximum(s1 * v1, np.exp(-1.0 - s2 * v2))
            w2 = s2 * v2
            u1 = (lam1 * C - w1[None, :]).min(axis=1)
            u2 = (lam2 * C - w2[None, :]).min(axis=1)
            val = -lam1 * r1 - lam2 * r2 + float(u1 @ mu0) + float(u2 @ nu0)
            if val > best:
                best = val
                best_point = {
                    "lambda1": lam1,
                    "lambda2": lam2,
                    "u1": u1,
                    "u2": u2,
                    "v1": w1,
                    "v2": w2,
                }
    return best, best_point


def solve_lfd(problem: LfdProblem, tol: SolveTolerances = SolveTolerances()) -> LfdSolution:
    """Solve the LFD convex program and certify the result.

    Returns a primal point with marginal/budget residuals below tol.feas_tol
    and a relative duality gap below tol.gap_tol, certified against a
    self-computed dual bound. Raises InfeasibleError when no absolutely
    continuous pair exists, NumericalError when certification fails.
    """
    Z, mu0, nu0 = build_joint_support(problem)
    C = cost_matrix(problem.metric, Z, Z)
    if np.array_equal(mu0, nu0):
        return _trivial_solution(Z, mu0, nu0, C, problem.r1, problem.r2, problem.metric)
    _check_feasible(C, mu0, nu0, problem.r1, problem.r2)
    attempts = [
        {"max_iter": min(tol.max_iterations, 500), "tol_scale": 1e-12},
        {"max_iter": min(tol.max_iterations, 2000), "tol_scale": 1e-10},
    ]
    last_error: Exception | None = None
    last_cert: SolverCertificate | None = None
    for params in attempts:
        try:
            raw = _solve_eq10_conic(
                C, mu0, nu0, problem.r1, problem.r2, params["max_iter"], params["tol_scale"]
            )
        except NumericalError as exc:
            last_error = exc
            continue
        solution = _assemble_solution(problem, Z, mu0, nu0, C, raw, tol)
        cert = solution.certificate
        if (
            cert.relative_gap <= tol.gap_tol
            and cert.primal_residual <= tol.feas_tol
        ):
            return solution
        last_cert = cert
        last_error = NumericalError(
            f"certification failed: relative gap {cert.relative_gap:.3e}, "
            f"primal residual {cert.primal_residual:.3e}"
        )
    if isinstance(last_error, NumericalError) and last_cert is not None:
        raise NumericalError(f"{last_error} (certificate: {last_cert})")
    raise last_error if last_error else NumericalError("LFD solve failed")


def _assemble_solution(problem, Z, mu0, nu0, C, raw, tol) -> LfdSolution:
    G1 = _repair_plan(raw["G1"], mu0, C, problem.r1)
    G2 = _repair_plan(raw["G2"], nu0, C, problem.r2)
    G1, G2 = _cleanup_dust(G1, G2, C, problem.r1, problem.r2, tol.cleanup_tol)
    p1 = G1.sum(axis=0)
    p2 = G2.sum(axis=0)
    objective = _kl(p2, p1)
    if not math.isfinite(objective):
        raise NumericalError(
            "repaired primal lost absolute continuity; cannot certify"
        )
    dual_bound, dual_point = _dual_bound_eq10(
        C, mu0, nu0, problem.r1, problem.r2,
        raw["lam1"], raw["lam2"], raw["v1"], raw["v2"],
    )
    rel_gap = (objective - dual_bound) / max(1.0, abs(objective))
    primal_residual = max(
        float(np.abs(G1.sum(axis=1) - mu0).max()),
        float(np.abs(G2.sum(axis=1) - nu0).max()),
        max(0.0, float((G1 * C).sum()) - problem.r1),
        max(0.0, float((G2 * C).sum()) - problem.r2),
    )
    cert = SolverCertificate(
        primal_residual=primal_residual,
        dual_bound=dual_bound,
        relative_gap=max(rel_gap, 0.0),
        iterations=raw["iterations"],
        dual_variables=dual_point or {},
    )
    return LfdSolution(
        joint_support=Z,
        p1=p1,
        p2=p2,
        plan1=_plan_from_matrix(G1, mu0, p1, C),
        plan2=_plan_from_matrix(G2, nu0, p2, C),
        objective=objective,
        certificate=cert,
        r1=problem.r1,
        r2=problem.r2,
        metric=problem.metric,
    )


def likelihood_ratio_values(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Pointwise ratio p2/p1 with the convention 0/0 = 0.

    Raises if p2 carries mass where p1 has none (not a valid LFD pair).
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if np.any((p2 > 0) & (p1 <= 0)):
        raise InvalidInputError(
            "likelihood ratio undefined: p2 > 0 on an atom with p1 = 0"
        )
    f = np.zeros_like(p1)
    mask = p1 > 0
    f[mask] = p2[mask] / p1[mask]
    return f


def verify_weak_boundedness(
    solution: LfdSolution, problem: LfdProblem
) -> WeakBoundednessReport:
    """Check E_mu[p2/p1] <= 1 for every mu in the pre-change ball on Z.

    The supremum is an exact linear program over couplings restricted to the
    joint support. At a true optimum it equals 1 (attained by the pre-change
    LFD itself); values above 1 + 1e-6 are reported as violations.
    """
    Z, mu0, nu0 = build_joint_support(problem)
    if Z.shape != solution.joint_support.shape or not np.allclose(
        Z, solution.joint_support
    ):
        raise InvalidInputError("solution support does not match the problem data")
    f = likelihood_ratio_values(solution.p1, solution.p2)
    nominal = DiscreteDistribution(support=Z, weights=mu0)
    spec = AmbiguitySpec(nominal=nominal, radius=problem.r1, metric=problem.metric)
    C = cost_matrix(problem.metric, Z, Z)
    value, witness = worst_case_expectation(f, spec, C)
    return WeakBoundednessReport(
        worst_case_mean_lr=value,
        satisfied=bool(value <= 1.0 + 1e-6),
        witness=witness,
    )


def llr_table(solution: LfdSolution) -> LlrTable:
    """Tabulate log(p2/p1), clamped to +-LOG_RATIO_CLAMP.

    Atoms with p2 = 0 < p1 get the clamp floor (-30, standing in for -inf);
    atoms with p1 = p2 = 0 get 0.
    """
    p1 = solution.p1
    p2 = solution.p2
    likelihood_ratio_values(p1, p2)  # raises on absolute-continuity violation
    lr = np.zeros(len(p1))
    both = (p1 > 0) & (p2 > 0)
    lr[both] = np.log(p2[both] / p1[both])
    lr[(p1 > 0) & (p2 <= 0)] = -LOG_RATIO_CLAMP
    lr = np.clip(lr, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)
    return LlrTable(support=solution.joint_support, log_ratio=lr)


# ---------------------------------------------------------------------------
# KL-ball baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KlLfdSolution:
    """LFD pair for KL ambiguity balls over a fixed bin alphabet."""

    p1: np.ndarray
    p2: np.ndarray
    objective: float
    certificate: SolverCertificate
    r1: float
    r2: float

    def __post_init__(self):
        p1 = np.asarray(self.p1, dtype=float).ravel()
        p2 = np.asarray(self.p2, dtype=float).ravel()
        if p1.size != p2.size:
            raise InvalidInputError("p1 and p2 must share a length")
        p1 = p1.copy()
        p2 = p2.copy()
        p1.flags.writeable = False
        p2.flags.writeable = False
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p2", p2)


def _w_exp(eta: np.ndarray) -> np.ndarray:
    """Stable principal-branch W0(exp(eta)), vectorized over eta."""
    from scipy.special import lambertw

    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    small = eta < 600.0
    if small.any():
        out[small] = np.real(lambertw(np.exp(eta[small])))
    big = ~small
    if big.any():
        y = eta[big] - np.log(eta[big])
        for _ in range(6):
            y = y - (y + np.log(y) - eta[big]) / (1.0 + 1.0 / y)
        out[big] = y
    return out


def _kl_dual_value(mu0, nu0, r1, r2, alpha, beta, t1, t2) -> float:
    """Lagrangian dual of the KL-ball program at (alpha, beta, t1, t2).

    The inner infimum over (p1, p2) >= 0 separates per coordinate; the
    p2-minimization is closed-form and the remaining scalar problem in p1 is
    solved exactly with the Lambert W function. Any alpha, beta >= 0 gives a
    valid lower bound.
    """
    alpha = max(alpha, 0.0)
    beta = max(beta, 0.0)
    p = 1.0 / (1.0 + beta)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        logK = math.log1p(beta) - 1.0 - t2 * p + beta * p * np.log(nu0)
        K = np.exp(logK)
        if alpha > 0.0:
            c = np.log(mu0)
            F = alpha + t1 - alpha * c
            if beta == 0.0:
                a = mu0 * np.exp((K - t1) / alpha - 1.0)
                vals = -alpha * a
            else:
                q = 1.0 - p
                eta = np.log(q * K * p / alpha) + q * F / alpha
                y = _w_exp(eta)
                w = y / q - F / alpha
                if np.any(~np.isfinite(w)) or np.any(w > 700.0):
                    # evaluating away from the true minimizer would overstate
                    # the bound; discard this dual candidate instead
                    return -math.inf
                a = np.exp(w)
                vals = alpha * a * (w - c) + t1 * a - K * a**p
            vals = np.nan_to_num(vals, nan=-np.inf)
            total = float(np.minimum(vals, 0.0).sum())
        elif beta > 0.0:
            if t1 <= 0.0:
                return -math.inf
            a = (K * p / t1) ** (1.0 / (1.0 - p))
            vals = np.nan_to_num(t1 * a - K * a**p, nan=-np.inf)
            total = float(np.minimum(vals, 0.0).sum())
        else:
            if np.any(t1 < K):
                return -math.inf
            total = 0.0
    if not np.isfinite(total):
        return -math.inf
    return total - alpha * r1 - beta * r2 - t1 - t2


def _kl_dual_value_pinned_p1(mu0, nu0, r2, beta, t2) -> float:
    """Dual of the r1 = 0 variant (p1 pinned to mu0); fully closed form."""
    beta = max(beta, 0.0)
    p = 1.0 / (1.0 + beta)
    with np.errstate(over="ignore", invalid="ignore"):
        expo = (np.log(mu0) + beta * np.log(nu0) - t2) * p - 1.0
        vals = -(1.0 + beta) * np.exp(expo)
    total = float(vals.sum())
    if not np.isfinite(total):
        return -math.inf
    return total - beta * r2 - t2


def _kl_dual_value_pinned_p2(mu0, nu0, r1, alpha, t1) -> float:
    """Dual of the r2 = 0 variant (p2 pinned to nu0); scalar root per bin."""
    from scipy.optimize import brentq

    alpha = max(alpha, 0.0)
    total = float(np.sum(nu0 * np.log(nu0)))
    for nu_l, mu_l in zip(nu0, mu0):
        if alpha > 0.0:
            def deriv(a, nu_l=nu_l, mu_l=mu_l):
                return -nu_l / a + alpha * (math.log(a / mu_l) + 1.0) + t1

            lo, hi = 1e-300, 1.0
            while deriv(hi) < 0 and hi < 1e12:
                hi *= 10.0
            if deriv(hi) < 0:
                return -math.inf
            a = brentq(deriv, lo, hi, xtol=1e-15, rtol=1e-14)
            total += -nu_l * math.log(a) + alpha * a * math.log(a / mu_l) + t1 * a
        else:
            if t1 <= 0.0:
                return -math.inf
            a = nu_l / t1
            total += -nu_l * math.log(a) + t1 * a
    return total - alpha * r1 - t1


def _polish_dual(fn, x0, bounds_mask, budget=4000):
    """Nelder-Mead ascent of a dual function; never worsens the start value."""
    from scipy.optimize import minimize

    def neg(x):
        x = np.where(bounds_mask, np.maximum(x, 0.0), x)
        v = fn(*x)
        return -v if np.isfinite(v) else 1e30

    res = minimize(
        neg,
        np.asarray(x0, dtype=float),
        method="Nelder-Mead",
        options={"xatol": 1e-13, "fatol": 1e-15, "maxiter": budget},
    )
    x = np.where(bounds_mask, np.maximum(res.x, 0.0), res.x)
    return max(fn(*x0), fn(*x))


def _pull_into_kl_ball(pv: np.ndarray, nominal: np.ndarray, r: float) -> np.ndarray:
    """Mix toward the nominal until KL(p||nominal) <= r (KL is convex, so a
    small mixing coefficient suffices)."""
    d = _kl(pv, nominal)
    if d <= r:
        return pv
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _kl((1 - mid) * pv + mid * nominal, nominal) <= r:
            hi = mid
        else:
            lo = mid
    theta = min(1.0, hi * (1.0 + 1e-9) + 1e-15)
    return (1 - theta) * pv + theta * nominal


ZERO_RADIUS_TOL = 1e-11


def solve_lfd_kl(
    mu0: np.ndarray,
    nu0: np.ndarray,
    r1: float,
    r2: float,
    tol: SolveTolerances = SolveTolerances(),
) -> KlLfdSolution:
    """LFD pair for KL ambiguity sets on a fixed finite alphabet:

        minimize KL(p2||p1)  s.t.  KL(p1||mu0) <= r1,  KL(p2||nu0) <= r2.

    Nominals must be strictly positive (binned distributions are floored
    upstream). Certification mirrors solve_lfd: the primal is repaired into
    exact feasibility and checked against a self-evaluated dual bound.
    """
    mu0 = np.asarray(mu0, dtype=float).ravel()
    nu0 = np.asarray(nu0, dtype=float).ravel()
    if mu0.size != nu0.size or mu0.size < 2:
        raise InvalidInputError("mu0 and nu0 must share a length of at least 2")
    if np.any(mu0 <= 0) or np.any(nu0 <= 0):
        raise InvalidInputError("KL-ball nominals must be strictly positive")
    if abs(mu0.sum() - 1) > 1e-9 or abs(nu0.sum() - 1) > 1e-9:
        raise InvalidInputError("nominals must be probability vectors")
    if r1 < 0 or r2 < 0:
        raise InvalidInputError("radii must be nonnegative")
    pin1 = r1 <= ZERO_RADIUS_TOL
    pin2 = r2 <= ZERO_RADIUS_TOL
    if pin1 and pin2:
        objective = _kl(nu0, mu0)
        cert = SolverCertificate(
            primal_residual=0.0, dual_bound=objective, relative_gap=0.0, iterations=0
        )
        return KlLfdSolution(
            p1=mu0, p2=nu0, objective=objective, certificate=cert, r1=r1, r2=r2
        )
    raw = _solve_kl_conic(mu0, nu0, r1, r2, pin1, pin2, tol)
    p1v = np.maximum(raw["p1"], 0.0)
    p2v = np.maximum(raw["p2"], 0.0)
    p1v /= p1v.sum()
    p2v /= p2v.sum()
    if not pin1:
        p1v = _pull_into_kl_ball(p1v, mu0, r1)
    if not pin2:
        p2v = _pull_into_kl_ball(p2v, nu0, r2)
    if np.any((p2v > 0) & (p1v <= 0)):
        p1v = 0.999999 * p1v + 1e-6 * mu0
    objective = _kl(p2v, p1v)
    alpha, beta, t1, t2 = raw["alpha"], raw["beta"], raw["t1"], raw["t2"]
    if pin1:
        candidates = [
            _kl_dual_value_pinned_p1(mu0, nu0, r2, beta, s * t2) for s in (1, -1)
        ]
        bound = max(candidates)
        bound = max(
            bound,
            _polish_dual(
                lambda b, t: _kl_dual_value_pinned_p1(mu0, nu0, r2, b, t),
                [beta, t2 if candidates[0] >= candidates[1] else -t2],
                np.array([True, False]),
            ),
        )
    elif pin2:
        candidates = [
            _kl_dual_value_pinned_p2(mu0, nu0, r1, alpha, s * t1) for s in (1, -1)
        ]
        bound = max(candidates)
        bound = max(
            bound,
            _polish_dual(
                lambda a, t: _kl_dual_value_pinned_p2(mu0, nu0, r1, a, t),
                [alpha, t1 if candidates[0] >= candidates[1] else -t1],
                np.array([True, False]),
            ),
        )
    else:
        best = -math.inf
        best_x = [alpha, beta, t1, t2]
        for s1 in (1, -1):
            for s2 in (1, -1):
                v = _kl_dual_value(mu0, nu0, r1, r2, alpha, beta, s1 * t1, s2 * t2)
                if v > best:
                    best = v
                    best_x = [alpha, beta, s1 * t1, s2 * t2]
        bound = best
        gap = (objective - bound) / max(1.0, abs(objective))
        if gap > 0.1 * tol.gap_tol:
            bound = max(
                bound,
                _polish_dual(
                    lambda a, b, u, w: _kl_dual_value(mu0, nu0, r1, r2, a, b, u, w),
                    best_x,
                    np.array([True, True, False, False]),
                ),
            )
    rel_gap = (objective - bound) / max(1.0, abs(objective))
    feas = max(
        0.0 if pin1 else _kl(p1v, mu0) - r1,
        0.0 if pin2 else _kl(p2v, nu0) - r2,
        0.0,
    )
    if rel_gap > tol.gap_tol or feas > tol.feas_tol:
        raise NumericalError(
            f"KL LFD certification failed: gap {rel_gap:.3e}, feasibility {feas:.3e}"
        )
    cert = SolverCertificate(
        primal_residual=feas,
        dual_bound=bound,
        relative_gap=max(rel_gap, 0.0),
        iterations=raw["iterations"],
        dual_variables={"alpha": alpha, "beta": beta, "t1": t1, "t2": t2},
    )
    return KlLfdSolution(
        p1=p1v, p2=p2v, objective=objective, certificate=cert, r1=r1, r2=r2
    )


def _solve_kl_conic(mu0, nu0, r1, r2, pin1, pin2, tol):
    import cvxpy as cp

    L = mu0.size
    p1 = mu0 if pin1 else cp.Variable(L, nonneg=True)
    p2 = nu0 if pin2 else cp.Variable(L, nonneg=True)
    constraints = []
    c_ball1 = c_ball2 = e1 = e2 = None
    if not pin1:
        c_ball1 = cp.sum(cp.rel_entr(p1, mu0)) <= r1
        e1 = cp.sum(p1) == 1
        constraints += [c_ball1, e1]
    if not pin2:
        c_ball2 = cp.sum(cp.rel_entr(p2, nu0)) <= r2
        e2 = cp.sum(p2) == 1
        constraints += [c_ball2, e2]
    prob = cp.Problem(cp.Minimize(cp.sum(cp.rel_entr(p2, p1))), constraints)
    try:
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            prob.solve(
                solver=cp.CLARABEL,
                tol_gap_abs=1e-11,
                tol_gap_rel=1e-11,
                tol_feas=1e-11,
                max_iter=min(tol.max_iterations, 500),
            )
    except cp.SolverError as exc:
        raise NumericalError(f"conic backend failed: {exc}") from exc
    if prob.value is None:
        raise NumericalError(f"conic backend returned status {prob.status!r}")
    def _dual(c):
        if c is None or c.dual_value is None:
            return 0.0
        return float(np.ravel(c.dual_value)[0])

    return {
        "p1": mu0 if pin1 else np.asarray(p1.value, dtype=float),
        "p2": nu0 if pin2 else np.asarray(p2.value, dtype=float),
        "alpha": max(_dual(c_ball1), 0.0),
        "beta": max(_dual(c_ball2), 0.0),
        "t1": _dual(e1),
        "t2": _dual(e2),
        "iterations": int(getattr(prob.solver_stats, "num_iters", 0) or 0),
    }
