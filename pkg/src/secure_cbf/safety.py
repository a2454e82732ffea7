"""Control barrier function machinery for polyhedral safe sets.

Safe set C = {x : H x + q >= 0}; decay rate gamma in (0, 1). The CBF
condition for a state x and input u reads

    H (A x + B u) + q >= (1 - gamma) (H x + q),

rearranged throughout as HB u >= w(x) with
w(x) = (1 - gamma)(H x + q) - H A x - q.
"""
from dataclasses import dataclass, field
from itertools import product
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import DEFAULT, NumericConfig
from .errors import (
    AttackModelViolated,
    Infeasible,
    InvalidInputError,
    KernelConditionViolated,
    PreconditionError,
)
from .model import (
    LtiSystem,
    SensorSubset,
    is_r_sparse_observable,
    kernel_included,
    numerical_rank,
    observability_matrix,
)
from .qp import QpProblem, QpSolution, solve_qp
from .reconstruction import PlausibleSet, SolutionKind


@dataclass(frozen=True, eq=False)
class PolyhedralCbf:
    H: np.ndarray
    q: np.ndarray
    gamma: float

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        q = np.asarray(self.q, dtype=float).ravel()
        if H.shape[0] != q.size:
            raise InvalidInputError(f"H has {H.shape[0]} rows but q has {q.size} entries")
        if not 0.0 < self.gamma < 1.0:
            raise InvalidInputError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(q))):
            raise InvalidInputError("H and q must be finite")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def l(self) -> int:
        return self.H.shape[0]

    def check(self, sys: LtiSystem):
        if self.H.shape[1] != sys.n:
            raise InvalidInputError(f"H has {self.H.shape[1]} columns, system has n = {sys.n}")

    def rhs(self, sys: LtiSystem, x) -> np.ndarray:
        """w(x): the lower bound on HB u imposed by the CBF condition at x."""
        x = np.asarray(x, dtype=float)
        return (1.0 - self.gamma) * (self.H @ x + self.q) - self.H @ (sys.A @ x) - self.q


def cbf_margin(cbf: PolyhedralCbf, x) -> np.ndarray:
    return cbf.H @ np.asarray(x, dtype=float) + cbf.q


def box_cbf(lower, upper, gamma: float, rows: Optional[Sequence[int]] = None, n: Optional[int] = None):
    """CBF for lower <= x[rows] <= upper, upper bounds first."""
    lower = np.asarray(lower, dtype=float).ravel()
    upper = np.asarray(upper, dtype=float).ravel()
    n = n if n is not None else lower.size
    rows = list(range(n)) if rows is None else list(rows)
    S = np.eye(n)[rows]
    H = np.vstack([-S, S])
    q = np.concatenate([upper * np.ones(len(rows)), -lower * np.ones(len(rows))])
    return PolyhedralCbf(H, q, gamma)


@dataclass(frozen=True)
class CbfFeasibility:
    """Three-valued outcome of the CBF existence check."""

    kind: str  # "proved_sufficient" | "falsified" | "unknown"
    witness: Optional[tuple] = None
    samples: int = 0

    PROVED = "proved_sufficient"
    FALSIFIED = "falsified"
    UNKNOWN = "unknown"

    @property
    def falsified(self) -> bool:
        return self.kind == self.FALSIFIED

    def to_json(self):
        out = {"kind": self.kind, "samples": self.samples}
        if self.witness is not None:
            out["witness"] = list(self.witness)
        return out


def _sample_states(n: int, cfg: NumericConfig) -> np.ndarray:
    R = cfg.sample_radius
    budget = max(cfg.feasibility_samples, 1)
    pts = []
    if 3**n <= budget // 2:
        pts.extend(np.array(c) for c in product((-R, 0.0, R), repeat=n))
    else:
        eye = np.eye(n)
        pts.extend(list(R * eye) + list(-R * eye))
    rng = np.random.default_rng(cfg.sample_seed)
    while len(pts) < budget:
        pts.append(rng.uniform(-R, R, n))
    return np.array(pts[:budget]) if len(pts) > budget else np.array(pts)


def check_cbf_feasibility(sys: LtiSystem, cbf: PolyhedralCbf, cfg: NumericConfig = DEFAULT) -> CbfFeasibility:
    """Does every state admit an input satisfying the CBF condition?

    Full row rank of HB proves it; otherwise states are sampled on a grid
    plus uniformly in a box and a counterexample is reported if found. A
    clean sample run proves nothing, hence ``unknown``.
    """
    cbf.check(sys)
    HB = cbf.H @ sys.B
    if numerical_rank(HB, cfg.tol_rank) == cbf.l:
        return CbfFeasibility(CbfFeasibility.PROVED)
    samples = _sample_states(sys.n, cfg)
    for x in samples:
        sol = solve_qp(QpProblem(np.zeros(sys.m), HB, cbf.rhs(sys, x)), cfg)
        if not sol.ok:
            return CbfFeasibility(CbfFeasibility.FALSIFIED, tuple(float(v) for v in x), len(samples))
    return CbfFeasibility(CbfFeasibility.UNKNOWN, samples=len(samples))


def _safety_stack(sys: LtiSystem, cbf: PolyhedralCbf) -> np.ndarray:
    """[H; HA; ...; HA^(n-1)]."""
    rows, HAk = [], cbf.H
    for _ in range(sys.n):
        rows.append(HAk)
        HAk = HAk @ sys.A
    return np.vstack(rows)


@dataclass
class OfflineReport:
    s: int
    sparse_obs_ok: bool
    p_gt_2s: bool
    cond_i: List[Tuple[SensorSubset, bool]]
    cond_ii: CbfFeasibility

    @property
    def verdict(self) -> bool:
        return (
            self.sparse_obs_ok
            and self.p_gt_2s
            and all(ok for _, ok in self.cond_i)
            and not self.cond_ii.falsified
        )

    @property
    def cond_i_ok(self) -> bool:
        return all(ok for _, ok in self.cond_i)

    def to_json(self) -> dict:
        return {
            "s": self.s,
            "sparse_observable": self.sparse_obs_ok,
            "p_gt_2s": self.p_gt_2s,
            "cond_i": [{"lambda": list(lam.indices), "ok": ok} for lam, ok in self.cond_i],
            "cond_i_ok": self.cond_i_ok,
            "cond_ii": self.cond_ii.to_json(),
            "verdict": self.verdict,
        }


def check_offline_conditions(
    sys: LtiSystem, s: int, cbf: PolyhedralCbf, cfg: NumericConfig = DEFAULT
) -> OfflineReport:
    """Worst-case admissibility of a safe set against any attack on s sensors."""
    cbf.check(sys)
    sparse_ok = 0 <= s < sys.p and is_r_sparse_observable(sys, s, cfg.tol_rank)
    p_gt_2s = sys.p > 2 * s
    cond_i = []
    if p_gt_2s:
        stack = _safety_stack(sys, cbf)
        for lam in sys.all_subsets(sys.p - 2 * s):
            O = observability_matrix(sys, lam, sys.n)
            cond_i.append((lam, kernel_included(O, stack, cfg.tol_rank)))
    return OfflineReport(s, sparse_ok, p_gt_2s, cond_i, check_cbf_feasibility(sys, cbf, cfg))


def _annihilates(M: np.ndarray, kernel, tol_rank: float) -> bool:
    """span(kernel) is inside ker(M), via the same rank test as kernel_included."""
    K = kernel.vectors
    if K.shape[1] == 0:
        return True
    return kernel_included(np.eye(K.shape[0]) - K @ K.T, M, tol_rank)


def containment_check(ps: PlausibleSet, cbf: PolyhedralCbf, sys: LtiSystem, cfg: NumericConfig = DEFAULT) -> bool:
    """Is the whole plausible set inside the safe set?

    Affine entries must be flat along H (their kernels are already mapped
    forward by A^t, so H A^t ker(O) = H ker_t), and every base point must
    have nonnegative margin.
    """
    cbf.check(sys)
    for _, sol in ps.affine():
        if not _annihilates(cbf.H, sol.kernel, cfg.tol_rank):
            return False
    for _, sol in ps.nonempty():
        margin = cbf_margin(cbf, sol.base)
        if np.any(margin < -cfg.margin_tol(np.max(np.abs(cbf.q)) if cbf.q.size else 1.0)):
            return False
    return True


def online_kernel_condition(ps: PlausibleSet, sys: LtiSystem, cbf: PolyhedralCbf, cfg: NumericConfig = DEFAULT) -> bool:
    """ker(O_Gamma) inside ker(H A^(t+1) - (1 - gamma) H A^t) for every affine entry."""
    M = cbf.H @ sys.A - (1.0 - cbf.gamma) * cbf.H
    return all(_annihilates(M, sol.kernel, cfg.tol_rank) for _, sol in ps.affine())


def premise_implies_kernel_condition(
    sets: Sequence[PlausibleSet], sys: LtiSystem, cbf: PolyhedralCbf, cfg: NumericConfig = DEFAULT
) -> bool:
    """True when n consecutive plausible sets all lie in the safe set, which
    forces the kernel condition at every later time."""
    return len(sets) >= sys.n and all(containment_check(ps, cbf, sys, cfg) for ps in sets[: sys.n])


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Stacked CBF constraints G u >= w, one l-row block per representative."""

    G: np.ndarray
    w: np.ndarray
    representatives: List[np.ndarray] = field(default_factory=list)

    @property
    def blocks(self) -> int:
        return len(self.representatives)

    def satisfied(self, u, tol: float = 0.0) -> bool:
        return bool(np.all(self.G @ np.asarray(u, dtype=float) >= self.w - tol))


def _unique_states(states: Sequence[np.ndarray], rel_tol: float = 1e-12) -> List[np.ndarray]:
    kept: List[np.ndarray] = []
    for x in states:
        if all(np.linalg.norm(x - k) > rel_tol * max(1.0, np.linalg.norm(k)) for k in kept):
            kept.append(x)
    return kept


def build_cbf_constraints(ps: PlausibleSet, sys: LtiSystem, cbf: PolyhedralCbf) -> ConstraintSet:
    cbf.check(sys)
    reps = _unique_states(ps.representatives())
    if not reps:
        raise AttackModelViolated(
            f"no sensor combination is consistent with the data at time {ps.time_index}"
        )
    HB = cbf.H @ sys.B
    G = np.vstack([HB] * len(reps))
    w = np.concatenate([cbf.rhs(sys, x) for x in reps])
    return ConstraintSet(G, w, reps)


def sufficient_conditions_check(
    sys: LtiSystem, cbf: PolyhedralCbf, subsets: Sequence[SensorSubset], cfg: NumericConfig = DEFAULT
):
    """Easy-to-check sufficient conditions for the online CBF condition.

    Returns ([(Gamma, H factors through C_Gamma, M_Gamma)], HB full row rank).
    """
    cbf.check(sys)
    scale = max(1.0, float(np.linalg.norm(cbf.H)))
    cond14 = []
    for gamma in subsets:
        Cg = sys.C[gamma.zero_based]
        Mt, *_ = np.linalg.lstsq(Cg.T, cbf.H.T, rcond=None)
        M = Mt.T
        ok = float(np.linalg.norm(cbf.H - M @ Cg)) <= cfg.tol_factor * scale
        cond14.append((gamma, ok, M))
    cond15 = numerical_rank(cbf.H @ sys.B, cfg.tol_rank) == cbf.l
    return cond14, cond15


def aggregate_rhs(constraints: ConstraintSet, l: int) -> np.ndarray:
    """Row-wise maximum of w over all blocks; HB u >= this covers every block."""
    return constraints.w.reshape(-1, l).max(axis=0)


def closed_form_feasible_input(sys: LtiSystem, cbf: PolyhedralCbf, z) -> np.ndarray:
    """Minimum-norm u with HB u = z; needs HB to have full row rank."""
    HB = cbf.H @ sys.B
    if numerical_rank(HB) < cbf.l:
        raise PreconditionError("HB is not full row rank; no closed-form input exists")
    z = np.asarray(z, dtype=float).ravel()
    return HB.T @ np.linalg.solve(HB @ HB.T, z)


@dataclass(frozen=True, eq=False)
class FilterResult:
    u: np.ndarray
    modified: bool
    constraints: ConstraintSet
    qp: QpSolution


def filter_input(u_nom, ps: PlausibleSet, sys: LtiSystem, cbf: PolyhedralCbf, cfg: NumericConfig = DEFAULT) -> FilterResult:
    """Project u_nom onto the inputs meeting the CBF condition at every plausible state."""
    if not online_kernel_condition(ps, sys, cbf, cfg):
        bad = [list(g.indices) for g, sol in ps.affine()]
        raise KernelConditionViolated(
            f"plausible subspaces from combinations {bad} are not annihilated by H A - (1 - gamma) H"
        )
    cs = build_cbf_constraints(ps, sys, cbf)
    sol = solve_qp(QpProblem(u_nom, cs.G, cs.w), cfg)
    if not sol.ok:
        raise Infeasible(f"safety QP infeasible at time {ps.time_index}", sol.certificate)
    return FilterResult(sol.u, sol.active_rows != (), cs, sol)


def safe_control(u_nom, ps: PlausibleSet, sys: LtiSystem, cbf: PolyhedralCbf, cfg: NumericConfig = DEFAULT) -> np.ndarray:
    return filter_input(u_nom, ps, sys, cbf, cfg).u
