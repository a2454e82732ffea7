"""Linear system representation and the linear-algebra substrate.

Sensor indices are 1-based everywhere a caller can see them.
"""
from dataclasses import dataclass
from functools import total_ordering
from itertools import combinations
from typing import Iterable, Iterator, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from .config import DEFAULT, NumericConfig
from .errors import InvalidInputError


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """x(k+1) = A x(k) + B u(k), y(k) = C x(k) (+ attack)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        C = _as_matrix(self.C, "C")
        n = A.shape[0]
        if A.shape != (n, n) or n < 1:
            raise InvalidInputError(f"A must be square, got {A.shape}")
        if B.shape[0] != n or B.shape[1] < 1:
            raise InvalidInputError(f"B must have {n} rows, got {B.shape}")
        if C.shape[1] != n or C.shape[0] < 1:
            raise InvalidInputError(f"C must have {n} columns, got {C.shape}")
        for name, arr in (("A", A), ("B", B), ("C", C)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def matrix_power(self, k: int) -> np.ndarray:
        return np.linalg.matrix_power(self.A, k)

    def all_subsets(self, size: int) -> Iterator["SensorSubset"]:
        """Every ``size``-combination of sensors, in lexicographic order."""
        for combo in combinations(range(1, self.p + 1), size):
            yield SensorSubset(combo, p=self.p)


@total_ordering
class SensorSubset:
    """Sorted, duplicate-free set of 1-based sensor indices."""

    __slots__ = ("indices",)

    def __init__(self, indices: Iterable[int], p: int = None):
        idx = tuple(int(i) for i in indices)
        if len(idx) == 0:
            raise InvalidInputError("sensor subset must be non-empty")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise InvalidInputError(f"sensor indices must be strictly increasing: {idx}")
        if idx[0] < 1 or (p is not None and idx[-1] > p):
            raise InvalidInputError(f"sensor indices {idx} out of range 1..{p}")
        object.__setattr__(self, "indices", idx)

    def __setattr__(self, key, value):
        raise AttributeError("SensorSubset is immutable")

    @property
    def zero_based(self) -> list:
        return [i - 1 for i in self.indices]

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, i):
        return i in self.indices

    def __eq__(self, other):
        return isinstance(other, SensorSubset) and self.indices == other.indices

    def __lt__(self, other):
        return self.indices < other.indices

    def __hash__(self):
        return hash(self.indices)

    def __repr__(self):
        return f"SensorSubset({list(self.indices)})"


@dataclass(frozen=True, eq=False)
class KernelBasis:
    """Orthonormal basis (columns of an n x d array) of a subspace; d may be 0."""

    vectors: np.ndarray

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def projector(self) -> np.ndarray:
        return self.vectors @ self.vectors.T

    def distance(self, v: np.ndarray) -> float:
        """Euclidean distance from ``v`` to the subspace."""
        v = np.asarray(v, dtype=float)
        return float(np.linalg.norm(v - self.projector() @ v))


def zoh_discretize(Ac, Bc, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold sampling via the exponential of [[Ac, Bc], [0, 0]] * dt."""
    Ac = np.asarray(Ac, dtype=float)
    Bc = np.asarray(Bc, dtype=float)
    if Bc.ndim == 1:
        Bc = Bc.reshape(-1, 1)
    if not (np.all(np.isfinite(Ac)) and np.all(np.isfinite(Bc)) and np.isfinite(dt)):
        raise InvalidInputError("zoh_discretize: non-finite input")
    if dt <= 0:
        raise InvalidInputError(f"zoh_discretize: dt must be positive, got {dt}")
    n, m = Ac.shape[0], Bc.shape[1]
    if Ac.shape != (n, n) or Bc.shape[0] != n:
        raise InvalidInputError(f"zoh_discretize: shapes {Ac.shape}, {Bc.shape} do not match")
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = Ac
    aug[:n, n:] = Bc
    E = expm(aug * dt)
    return E[:n, :n].copy(), E[:n, n:].copy()


def observability_matrix(sys: LtiSystem, subset: SensorSubset, depth: int) -> np.ndarray:
    """Rows C_i A^k (k < depth), all rows of sensor i1 first, then i2, ..."""
    if depth < 1:
        raise InvalidInputError(f"depth must be >= 1, got {depth}")
    powers = [np.eye(sys.n)]
    for _ in range(depth - 1):
        powers.append(powers[-1] @ sys.A)
    blocks = []
    for i in subset.zero_based:
        ci = sys.C[i]
        blocks.append(np.vstack([ci @ Ak for Ak in powers]))
    return np.vstack(blocks)


def _singular_values(M: np.ndarray) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return np.zeros(0)
    return np.linalg.svd(M, compute_uv=False)


def numerical_rank(M, tol_rank: float = DEFAULT.tol_rank) -> int:
    sv = _singular_values(M)
    if sv.size == 0:
        return 0
    return int(np.sum(sv > tol_rank * max(1.0, sv[0])))


def kernel_basis(M, tol_rank: float = DEFAULT.tol_rank) -> KernelBasis:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[1]
    if M.shape[0] == 0:
        return KernelBasis(np.eye(n))
    _, sv, vt = np.linalg.svd(M, full_matrices=True)
    r = int(np.sum(sv > tol_rank * max(1.0, sv[0]))) if sv.size else 0
    return KernelBasis(vt[r:].T.copy())


def orthonormalize(V, tol_rank: float = DEFAULT.tol_rank) -> KernelBasis:
    """Orthonormal basis of the column span of ``V``."""
    V = np.asarray(V, dtype=float)
    if V.shape[1] == 0:
        return KernelBasis(V.reshape(V.shape[0], 0))
    u, sv, _ = np.linalg.svd(V, full_matrices=False)
    r = int(np.sum(sv > tol_rank * max(1.0, sv[0])))
    return KernelBasis(u[:, :r].copy())


def kernel_included(M1, M2, tol_rank: float = DEFAULT.tol_rank) -> bool:
    """ker(M1) is a subset of ker(M2), decided by rank([M1; M2]) == rank(M1)."""
    M1 = np.atleast_2d(np.asarray(M1, dtype=float))
    M2 = np.atleast_2d(np.asarray(M2, dtype=float))
    if M1.shape[1] != M2.shape[1]:
        raise InvalidInputError(
            f"kernel_included: column counts differ ({M1.shape[1]} vs {M2.shape[1]})"
        )
    return numerical_rank(np.vstack([M1, M2]), tol_rank) == numerical_rank(M1, tol_rank)


def is_r_sparse_observable(sys: LtiSystem, r: int, tol_rank: float = DEFAULT.tol_rank) -> bool:
    if r < 0 or r >= sys.p:
        raise InvalidInputError(f"r must satisfy 0 <= r < p = {sys.p}, got {r}")
    return all(
        numerical_rank(observability_matrix(sys, gamma, sys.n), tol_rank) == sys.n
        for gamma in sys.all_subsets(sys.p - r)
    )


def max_sparse_observability(sys: LtiSystem, tol_rank: float = DEFAULT.tol_rank) -> int:
    """Largest r with r-sparse observability, or -1 if (A, C) is unobservable."""
    best = -1
    for r in range(sys.p):
        if not is_r_sparse_observable(sys, r, tol_rank):
            break
        best = r
    return best


# JSON matrix helper: {"rows": R, "cols": C, "data": [row-major]}


def matrix_to_json(M) -> dict:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return {"rows": int(M.shape[0]), "cols": int(M.shape[1]), "data": [float(v) for v in M.ravel()]}


def matrix_from_json(obj, name: str = "matrix") -> np.ndarray:
    """Accepts the {"rows","cols","data"} object or a nested list of rows."""
    if isinstance(obj, dict):
        try:
            rows, cols, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"{name}: expected keys rows, cols, data") from exc
        if len(data) != rows * cols:
            raise InvalidInputError(f"{name}: data has {len(data)} entries, expected {rows * cols}")
        M = np.array(data, dtype=float).reshape(rows, cols)
    elif isinstance(obj, Sequence) and not isinstance(obj, str):
        try:
            M = np.array(obj, dtype=float)
        except ValueError as exc:
            raise InvalidInputError(f"{name}: ragged nested list") from exc
        if M.ndim != 2:
            raise InvalidInputError(f"{name}: expected a 2-D nested list, got {M.ndim}-D")
    else:
        raise InvalidInputError(f"{name}: expected matrix object or nested list")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{name}: non-finite entries")
    return M


def vehicle_system(dt: float = 0.01) -> LtiSystem:
    """Omnidirectional planar vehicle with 8 sensors, y_i = x_ceil(i/2)."""
    Ac, Bc, C = vehicle_continuous()
    A, B = zoh_discretize(Ac, Bc, dt)
    return LtiSystem(A, B, C)


def vehicle_continuous():
    Ac = np.array(
        [[0.0, 1.0, 0.0, 0.0], [0.0, -0.2, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, -0.2]]
    )
    Bc = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    C = np.zeros((8, 4))
    for i in range(8):
        C[i, i // 2] = 1.0
    return Ac, Bc, C
