"""Secure state reconstruction over all (p - s)-sensor combinations.

For every combination Gamma the stacked regression O_Gamma x = Y_Gamma is
solved by minimum-norm least squares and classified as empty, a single point,
or an affine subspace. The plausible set is the union of the non-empty ones.
"""
import enum
import warnings
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import DEFAULT, NumericConfig
from .errors import InvalidInputError
from .model import (
    KernelBasis,
    LtiSystem,
    SensorSubset,
    is_r_sparse_observable,
    kernel_basis,
    observability_matrix,
    orthonormalize,
)


@dataclass(frozen=True, eq=False)
class DataWindow:
    """Inputs u(0..t-1) and outputs y(0..t); ``start_time`` is the absolute
    index of the first output."""

    inputs: np.ndarray
    outputs: np.ndarray
    start_time: int = 0

    def __post_init__(self):
        # 1-D arrays are sequences of scalars
        outputs = np.asarray(self.outputs, dtype=float)
        inputs = np.asarray(self.inputs, dtype=float)
        if outputs.ndim == 1:
            outputs = outputs.reshape(-1, 1)
        if inputs.ndim == 1:
            inputs = inputs.reshape(-1, 1) if inputs.size else inputs.reshape(0, 0)
        if outputs.ndim != 2 or inputs.ndim != 2:
            raise InvalidInputError("window inputs and outputs must be 2-D (time x dimension)")
        if outputs.shape[0] == 0:
            raise InvalidInputError("data window has no outputs")
        if inputs.shape[0] != outputs.shape[0] - 1:
            raise InvalidInputError(
                f"window needs len(outputs) = len(inputs) + 1, got {outputs.shape[0]} and {inputs.shape[0]}"
            )
        if self.start_time < 0:
            raise InvalidInputError("start_time must be nonnegative")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)

    @property
    def t(self) -> int:
        return self.outputs.shape[0] - 1

    def check(self, sys: LtiSystem):
        if self.outputs.shape[1] != sys.p:
            raise InvalidInputError(f"outputs have dimension {self.outputs.shape[1]}, system has p = {sys.p}")
        if not np.all(np.isfinite(self.outputs)) or not np.all(np.isfinite(self.inputs)):
            raise InvalidInputError("window contains non-finite values")
        if self.t > 0 and self.inputs.shape[1] != sys.m:
            raise InvalidInputError(f"inputs have dimension {self.inputs.shape[1]}, system has m = {sys.m}")


class SolutionKind(enum.Enum):
    EMPTY = "empty"
    POINT = "point"
    AFFINE = "affine"


@dataclass(frozen=True, eq=False)
class SubspaceSolution:
    kind: SolutionKind
    base: Optional[np.ndarray] = None
    kernel: Optional[KernelBasis] = None
    residual: float = float("inf")  # mean squared matching error

    @classmethod
    def empty(cls, residual: float = float("inf")) -> "SubspaceSolution":
        return cls(SolutionKind.EMPTY, residual=residual)

    @property
    def is_empty(self) -> bool:
        return self.kind is SolutionKind.EMPTY

    def contains(self, x, tol: float) -> bool:
        if self.is_empty:
            return False
        d = np.asarray(x, dtype=float) - self.base
        if self.kind is SolutionKind.AFFINE:
            return self.kernel.distance(d) <= tol
        return float(np.linalg.norm(d)) <= tol


@dataclass(frozen=True, eq=False)
class PlausibleSet:
    """Plausible states at ``time_index``: one solution per (p - s)-combination."""

    time_index: int
    s: int
    entries: Dict[SensorSubset, SubspaceSolution]

    def nonempty(self) -> List[Tuple[SensorSubset, SubspaceSolution]]:
        return [(g, sol) for g, sol in sorted(self.entries.items()) if not sol.is_empty]

    def affine(self) -> List[Tuple[SensorSubset, SubspaceSolution]]:
        return [(g, sol) for g, sol in self.nonempty() if sol.kind is SolutionKind.AFFINE]

    @property
    def is_finite(self) -> bool:
        return not self.affine()

    def contains(self, x, tol: float) -> bool:
        return any(sol.contains(x, tol) for _, sol in self.nonempty())

    def representatives(self) -> List[np.ndarray]:
        return [sol.base for _, sol in self.nonempty()]

    def points(self, merge_tol: float) -> List[np.ndarray]:
        """Deduplicated base points of the non-empty entries.

        Bases closer than ``merge_tol`` collapse; the one with the smallest
        matching error is kept.
        """
        return dedup_points([(sol.residual, sol.base) for _, sol in self.nonempty()], merge_tol)

    def to_json(self) -> dict:
        entries = []
        for gamma, sol in sorted(self.entries.items()):
            item = {"gamma": list(gamma.indices), "kind": sol.kind.value}
            if not sol.is_empty:
                item["base"] = [float(v) for v in sol.base]
                vecs = sol.kernel.vectors if sol.kernel is not None else np.zeros((len(sol.base), 0))
                item["kernel"] = [[float(v) for v in col] for col in vecs.T]
                item["residual"] = float(sol.residual)
            entries.append(item)
        return {"time": int(self.time_index), "s": int(self.s), "entries": entries}

    @classmethod
    def from_json(cls, obj: dict) -> "PlausibleSet":
        entries = {}
        for item in obj["entries"]:
            gamma = SensorSubset(item["gamma"])
            kind = SolutionKind(item["kind"])
            if kind is SolutionKind.EMPTY:
                entries[gamma] = SubspaceSolution.empty()
                continue
            base = np.array(item["base"], dtype=float)
            vecs = np.array(item.get("kernel", []), dtype=float).reshape(-1, len(base)).T
            entries[gamma] = SubspaceSolution(
                kind, base, KernelBasis(vecs), float(item.get("residual", 0.0))
            )
        return cls(int(obj["time"]), int(obj["s"]), entries)


def dedup_points(scored: Iterable[Tuple[float, np.ndarray]], merge_tol: float) -> List[np.ndarray]:
    kept: List[np.ndarray] = []
    for _, x in sorted(scored, key=lambda item: item[0]):
        if all(np.linalg.norm(x - k) > merge_tol for k in kept):
            kept.append(x)
    return kept


def free_response(sys: LtiSystem, inputs: np.ndarray) -> np.ndarray:
    """States z(0..t) driven from z(0) = 0 by ``inputs``; row k is z(k)."""
    t = len(inputs)
    z = np.zeros((t + 1, sys.n))
    for k in range(t):
        z[k + 1] = sys.A @ z[k] + sys.B @ inputs[k]
    return z


def build_regression(window: DataWindow, sys: LtiSystem, subset: SensorSubset):
    """Stacked (O_Gamma, Y_Gamma) with the input contribution removed."""
    window.check(sys)
    depth = window.t + 1
    O = observability_matrix(sys, subset, depth)
    forced = free_response(sys, window.inputs) @ sys.C.T  # (t+1) x p, equals F_i U per sensor
    Y = (window.outputs - forced)[:, subset.zero_based].T.ravel()
    return O, Y


class _Solver:
    """Minimum-norm least-squares pieces of one fixed regression matrix."""

    __slots__ = ("pinv", "rank", "kernel", "O", "rows", "depth")

    def __init__(self, O: np.ndarray, tol_rank: float, depth: Optional[int] = None):
        n = O.shape[1]
        u, sv, vt = np.linalg.svd(O, full_matrices=True)
        r = int(np.sum(sv > tol_rank * max(1.0, sv[0]))) if sv.size else 0
        self.pinv = (vt[:r].T / sv[:r]) @ u[:, :r].T
        self.rank = r
        self.kernel = KernelBasis(vt[r:].T.copy()) if r < n else None
        self.O = O
        self.rows = max(O.shape[0], 1)
        self.depth = depth  # rows per sensor, needed for the per-sensor test

    def classify(self, Y: np.ndarray, residual_tol: float, mode: str = "pooled") -> SubspaceSolution:
        x = self.pinv @ Y
        r = self.O @ x - Y
        if mode == "per_sensor" and self.depth and r.size:
            mse = float(np.max(np.mean(r.reshape(-1, self.depth) ** 2, axis=1)))
        else:
            mse = float(np.sum(r**2)) / self.rows
        if not mse <= residual_tol:
            return SubspaceSolution.empty(mse)
        if self.kernel is None:
            return SubspaceSolution(SolutionKind.POINT, x, KernelBasis(np.zeros((len(x), 0))), mse)
        return SubspaceSolution(SolutionKind.AFFINE, x, self.kernel, mse)


def classify_solution(O, Y, cfg: NumericConfig = DEFAULT, depth: Optional[int] = None) -> SubspaceSolution:
    """``depth`` (rows per sensor) is only used by the per-sensor residual test."""
    O = np.atleast_2d(np.asarray(O, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    if O.shape[0] != Y.shape[0]:
        raise InvalidInputError(f"O has {O.shape[0]} rows but Y has {Y.shape[0]} entries")
    if depth is not None and O.shape[0] % depth:
        raise InvalidInputError(f"{O.shape[0]} rows do not split into blocks of {depth}")
    return _Solver(O, cfg.tol_rank, depth).classify(Y, cfg.residual_tol, cfg.residual_mode)


def _check_budget(sys: LtiSystem, s: int):
    if s < 0 or s >= sys.p:
        raise InvalidInputError(f"attack budget s must satisfy 0 <= s < p = {sys.p}, got {s}")


def plausible_initial_states(
    window: DataWindow, sys: LtiSystem, s: int, cfg: NumericConfig = DEFAULT
) -> PlausibleSet:
    _check_budget(sys, s)
    window.check(sys)
    if window.t < sys.n - 1:
        warnings.warn(
            f"window of {window.t + 1} samples is shorter than n = {sys.n}; unmeasured "
            "directions make extra states plausible",
            stacklevel=2,
        )
    entries = {}
    for gamma in sys.all_subsets(sys.p - s):
        O, Y = build_regression(window, sys, gamma)
        entries[gamma] = classify_solution(O, Y, cfg, depth=window.t + 1)
    return PlausibleSet(window.start_time, s, entries)


class Reconstructor:
    """Reconstruction for a fixed window length with per-combination
    factorizations cached; gives the same result as
    :func:`plausible_initial_states`, much faster in a closed loop."""

    def __init__(self, sys: LtiSystem, s: int, window_length: int, cfg: NumericConfig = DEFAULT):
        _check_budget(sys, s)
        if window_length < 1:
            raise InvalidInputError("window length must be >= 1")
        self.sys, self.s, self.cfg = sys, s, cfg
        self.length = window_length
        self.subsets = list(sys.all_subsets(sys.p - s))
        self._solvers = [
            _Solver(observability_matrix(sys, g, window_length), cfg.tol_rank, window_length) for g in self.subsets
        ]

    def reconstruct(self, window: DataWindow, excluded: frozenset = frozenset()) -> PlausibleSet:
        """``excluded`` combinations are reported as empty without solving."""
        if window.t + 1 != self.length:
            raise InvalidInputError(f"expected a window of {self.length} outputs, got {window.t + 1}")
        window.check(self.sys)
        forced = free_response(self.sys, window.inputs) @ self.sys.C.T
        per_sensor = (window.outputs - forced).T  # p x length
        entries = {}
        for gamma, solver in zip(self.subsets, self._solvers):
            if gamma in excluded:
                entries[gamma] = SubspaceSolution.empty()
                continue
            Y = per_sensor[gamma.zero_based].ravel()
            entries[gamma] = solver.classify(Y, self.cfg.residual_tol, self.cfg.residual_mode)
        return PlausibleSet(window.start_time, self.s, entries)


class HistoryReconstructor:
    """Reconstruction from the full record y(0..t), u(0..t-1).

    Keeps per-sensor normal equations (Gram matrix, cross term, sum of
    squares) so each new sample costs O(p n^2) regardless of t. The plausible
    set is returned at time 0; :meth:`current` pushes it to time t.
    """

    def __init__(self, sys: LtiSystem, s: int, cfg: NumericConfig = DEFAULT):
        _check_budget(sys, s)
        self.sys, self.s, self.cfg = sys, s, cfg
        self.subsets = list(sys.all_subsets(sys.p - s))
        n, p = sys.n, sys.p
        self._gram = np.zeros((p, n, n))
        self._cross = np.zeros((p, n))
        self._sq = np.zeros(p)
        self._Ak = np.eye(n)
        self._z = np.zeros(n)
        self.inputs: List[np.ndarray] = []
        self.samples = 0

    def update(self, y, u_prev=None):
        """Add y(t); ``u_prev`` is u(t-1), required for every sample after the first."""
        y = np.asarray(y, dtype=float).ravel()
        if self.samples > 0:
            if u_prev is None:
                raise InvalidInputError("u_prev is required after the first sample")
            u_prev = np.asarray(u_prev, dtype=float).ravel()
            self._z = self.sys.A @ self._z + self.sys.B @ u_prev
            self._Ak = self._Ak @ self.sys.A
            self.inputs.append(u_prev)
        rows = self.sys.C @ self._Ak  # p x n, row i is C_i A^t
        resid = y - self.sys.C @ self._z
        self._gram += rows[:, :, None] * rows[:, None, :]
        self._cross += rows * resid[:, None]
        self._sq += resid**2
        self.samples += 1

    def initial(self, excluded: frozenset = frozenset()) -> PlausibleSet:
        n = self.sys.n
        entries = {}
        for gamma in self.subsets:
            if gamma in excluded:
                entries[gamma] = SubspaceSolution.empty()
                continue
            idx = gamma.zero_based
            G = self._gram[idx].sum(axis=0)
            b = self._cross[idx].sum(axis=0)
            c = self._sq[idx].sum()
            evals, evecs = np.linalg.eigh(G)
            sv = np.sqrt(np.clip(evals, 0.0, None))
            keep = sv > self.cfg.tol_rank * max(1.0, sv.max())
            x = evecs[:, keep] @ ((evecs[:, keep].T @ b) / evals[keep])
            if self.cfg.residual_mode == "per_sensor":
                ssr_i = self._sq[idx] - 2.0 * self._cross[idx] @ x + np.einsum("j,ijk,k->i", x, self._gram[idx], x)
                mse = float(np.max(np.clip(ssr_i, 0.0, None))) / self.samples
            else:
                ssr = max(c - 2.0 * x @ b + x @ G @ x, 0.0)
                mse = ssr / (len(idx) * self.samples)
            if not mse <= self.cfg.residual_tol:
                entries[gamma] = SubspaceSolution.empty(mse)
            elif keep.all():
                entries[gamma] = SubspaceSolution(SolutionKind.POINT, x, KernelBasis(np.zeros((n, 0))), mse)
            else:
                entries[gamma] = SubspaceSolution(SolutionKind.AFFINE, x, KernelBasis(evecs[:, ~keep]), mse)
        return PlausibleSet(0, self.s, entries)

    def current(self, excluded: frozenset = frozenset(), ps0: Optional[PlausibleSet] = None) -> PlausibleSet:
        """Plausible set at the latest sample time: x(t) = A^t x0 + forced part."""
        if ps0 is None:
            ps0 = self.initial(excluded)
        entries = {}
        for gamma, sol in ps0.entries.items():
            if sol.is_empty:
                entries[gamma] = sol
                continue
            base = self._Ak @ sol.base + self._z
            if sol.kind is SolutionKind.POINT:
                entries[gamma] = SubspaceSolution(SolutionKind.POINT, base, sol.kernel, sol.residual)
                continue
            kern = orthonormalize(self._Ak @ sol.kernel.vectors, self.cfg.tol_rank)
            kind = SolutionKind.AFFINE if kern.dim else SolutionKind.POINT
            entries[gamma] = SubspaceSolution(kind, base, kern, sol.residual)
        return PlausibleSet(self.samples - 1, self.s, entries)


def propagate_set(ps: PlausibleSet, sys: LtiSystem, inputs: Sequence) -> PlausibleSet:
    """Push every entry through k = len(inputs) steps of the dynamics."""
    inputs = np.asarray(inputs, dtype=float).reshape(-1, sys.m)
    k = inputs.shape[0]
    if k == 0:
        return ps
    Ak = sys.matrix_power(k)
    offset = free_response(sys, inputs)[-1]
    entries = {}
    for gamma, sol in ps.entries.items():
        if sol.is_empty:
            entries[gamma] = sol
            continue
        base = Ak @ sol.base + offset
        if sol.kind is SolutionKind.AFFINE:
            kernel = orthonormalize(Ak @ sol.kernel.vectors)
            kind = SolutionKind.AFFINE if kernel.dim > 0 else SolutionKind.POINT
        else:
            kernel, kind = sol.kernel, SolutionKind.POINT
        entries[gamma] = SubspaceSolution(kind, base, kernel, sol.residual)
    return PlausibleSet(ps.time_index + k, ps.s, entries)


def worst_case_envelope(
    sys: LtiSystem, s: int, cfg: NumericConfig = DEFAULT
) -> List[Tuple[SensorSubset, KernelBasis]]:
    """ker(O_Lambda) for every (p - 2s)-combination Lambda.

    Any plausible initial state lies in x_true plus the union of these kernels.
    """
    if sys.p <= 2 * s:
        raise InvalidInputError(f"the envelope needs p > 2s (p = {sys.p}, s = {s})")
    if s < 0:
        raise InvalidInputError("s must be nonnegative")
    if not is_r_sparse_observable(sys, s, cfg.tol_rank):
        warnings.warn(f"system is not {s}-sparse observable; the plausible set may be infinite", stacklevel=2)
    return [
        (lam, kernel_basis(observability_matrix(sys, lam, sys.n), cfg.tol_rank))
        for lam in sys.all_subsets(sys.p - 2 * s)
    ]
