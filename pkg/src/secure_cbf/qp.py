"""Projection QP: minimize 0.5 * ||u - u_nom||^2 subject to G u >= w.

Dual active-set method (Goldfarb-Idnani) for the identity Hessian. It starts
at the unconstrained minimizer u_nom and adds violated rows one at a time,
so a feasible u_nom comes back untouched and an empty feasible set is
detected together with a Farkas-type certificate.
"""
import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import DEFAULT, NumericConfig
from .errors import InvalidInputError, SolverFailure


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class QpProblem:
    u_nom: np.ndarray
    G: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u_nom, dtype=float).ravel()
        G = np.asarray(self.G, dtype=float).reshape(-1, u.size)
        w = np.asarray(self.w, dtype=float).ravel()
        if G.shape[0] != w.size:
            raise InvalidInputError(f"G has {G.shape[0]} rows but w has {w.size} entries")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(G)) and np.all(np.isfinite(w))):
            raise InvalidInputError("QP data must be finite")
        object.__setattr__(self, "u_nom", u)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "w", w)


@dataclass(frozen=True, eq=False)
class QpSolution:
    u: Optional[np.ndarray]
    status: QpStatus
    active_rows: tuple = ()
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # nonnegative y with y @ G = 0 and y @ w > 0 (only when infeasible)
    certificate: Optional[np.ndarray] = None
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def _merge_rows(G: np.ndarray, w: np.ndarray, tol: float):
    """Normalize rows and merge parallel duplicates, keeping the tighter w.

    Returns (G', w', origin) where origin[k] is the original row behind k.
    Satisfied zero rows are dropped; a zero row with w > tol stays and makes
    the problem infeasible.
    """
    norms = np.linalg.norm(G, axis=1)
    zero = norms <= tol
    bad_zero = np.where(zero & (w > tol))[0]
    live = np.where(~zero)[0]
    Gn = G[live] / norms[live, None]
    wn = w[live] / norms[live]
    # rows equal after rounding are parallel duplicates; near-misses simply stay separate
    _, group = np.unique(np.round(Gn, 12), axis=0, return_inverse=True)
    group = group.ravel()
    rows, origin = [], []
    for gid in range(group.max() + 1 if group.size else 0):
        members = np.where(group == gid)[0]
        best = members[np.argmax(wn[members])]
        rows.append(best)
        origin.append(int(live[best]))
    G_out = np.vstack([Gn[rows], np.zeros((bad_zero.size, G.shape[1]))])
    w_out = np.concatenate([wn[rows], w[bad_zero]])
    origin.extend(int(k) for k in bad_zero)
    return G_out, w_out, origin


def solve_qp(problem: QpProblem, cfg: NumericConfig = DEFAULT) -> QpSolution:
    u0, G0, w0 = problem.u_nom, problem.G, problem.w
    tol = cfg.qp_tol
    if G0.shape[0] == 0 or np.all(G0 @ u0 >= w0 - tol * np.maximum(1.0, np.abs(w0))):
        return QpSolution(u0.copy(), QpStatus.OPTIMAL, (), np.zeros(0))

    G, w, origin = _merge_rows(G0, w0, 1e-12)
    u = u0.copy()
    active: list = []
    lam = np.zeros(0)
    iterations = 0

    def slack(k):
        return G[k] @ u - w[k]

    while True:
        s = G @ u - w
        viol = np.where(s < -tol * np.maximum(1.0, np.abs(w)))[0]
        viol = [k for k in viol if k not in active]
        if not viol:
            break
        k = min(viol, key=lambda j: s[j])
        npl = G[k]
        lam_k = 0.0
        while True:
            iterations += 1
            if iterations > cfg.qp_max_iter:
                raise SolverFailure(f"QP exceeded {cfg.qp_max_iter} iterations")
            if active:
                N = G[active]
                # r solves (N N^T) r = N n+; z is n+ projected off the active normals
                r, *_ = np.linalg.lstsq(N.T, npl, rcond=None)
                z = npl - N.T @ r
            else:
                r = np.zeros(0)
                z = npl.copy()
            # partial step: largest dual step before some active multiplier hits 0
            t1, drop = np.inf, None
            for j, rj in enumerate(r):
                if rj > tol and lam[j] / rj < t1:
                    t1, drop = lam[j] / rj, j
            zz = float(z @ npl)
            t2 = -slack(k) / zz if np.linalg.norm(z) > 1e-12 and zz > 1e-14 else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                # n+ = N^T r with r <= 0: rows k and -r combine to 0 >= w_k - r.w > 0
                y_merged = np.zeros(G.shape[0])
                y_merged[k] = 1.0
                for j, a in enumerate(active):
                    y_merged[a] = max(-r[j], 0.0)
                y = np.zeros(G0.shape[0])
                for j, row in enumerate(origin):
                    scale = np.linalg.norm(G0[row])
                    y[row] += y_merged[j] / scale if scale > 0 else y_merged[j]
                return QpSolution(None, QpStatus.INFEASIBLE, certificate=y, iterations=iterations)
            if np.isfinite(t2):
                u = u + t * z
            lam = lam - t * r
            lam_k += t
            if t == t2:
                active.append(k)
                lam = np.append(lam, lam_k)
                break
            del active[drop]
            lam = np.delete(lam, drop)

    if active:
        # polish: exact projection onto the final active face
        N = G[active]
        lam_polished = np.linalg.solve(N @ N.T, w[active] - N @ u0)
        u_polished = u0 + N.T @ lam_polished
        if np.all(lam_polished >= -tol) and np.all(G @ u_polished >= w - tol * np.maximum(1.0, np.abs(w))):
            u, lam = u_polished, np.maximum(lam_polished, 0.0)

    # report multipliers on the original rows
    act_rows, mult = [], []
    for a, l in zip(active, lam):
        row = origin[a]
        act_rows.append(row)
        mult.append(l / np.linalg.norm(G0[row]))
    order = np.argsort(act_rows)
    return QpSolution(
        u,
        QpStatus.OPTIMAL,
        tuple(int(act_rows[i]) for i in order),
        np.array([mult[i] for i in order]),
        iterations=iterations,
    )


def kkt_residuals(problem: QpProblem, sol: QpSolution) -> dict:
    """Primal, stationarity, complementarity and dual-sign residuals."""
    G, w, u = problem.G, problem.w, sol.u
    lam = np.zeros(G.shape[0])
    lam[list(sol.active_rows)] = sol.multipliers
    s = G @ u - w if G.shape[0] else np.zeros(0)
    return {
        "primal": float(max(0.0, -s.min())) if s.size else 0.0,
        "stationarity": float(np.linalg.norm((u - problem.u_nom) - G.T @ lam)),
        "complementarity": float(np.max(np.abs(lam * s))) if s.size else 0.0,
        "dual": float(max(0.0, -lam.min())) if lam.size else 0.0,
    }
