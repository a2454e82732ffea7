from dataclasses import asdict, dataclass, fields, replace
from typing import Optional


@dataclass(frozen=True)
class NumericConfig:
    """All numerical tolerances, threaded explicitly through the library.

    ``residual_tol`` bounds the *mean squared* matching error of a sensor
    combination, ``||O x - Y||^2 / rows``; it is a noise-level parameter
    (1e-3 suits sigma = 0.01, noiseless data wants something like 1e-10).
    With ``residual_mode = "per_sensor"`` the bound applies to every sensor's
    own rows instead of the pooled stack, so one inconsistent sensor is not
    averaged away by the others.
    """

    tol_rank: float = 1e-8
    tol_orth: float = 1e-10
    residual_tol: float = 1e-3
    residual_mode: str = "pooled"  # or "per_sensor"
    dedup_tol: Optional[float] = None  # None -> 10 * residual_tol
    tol_margin_abs: float = 1e-9
    tol_margin_rel: float = 1e-9
    tol_factor: float = 1e-8
    qp_tol: float = 1e-10
    qp_max_iter: int = 500
    feasibility_samples: int = 256
    sample_radius: float = 10.0
    sample_seed: int = 0

    def __post_init__(self):
        if self.residual_mode not in ("pooled", "per_sensor"):
            from .errors import ConfigError

            raise ConfigError(f"numeric.residual_mode: expected 'pooled' or 'per_sensor', got {self.residual_mode!r}")

    @property
    def point_merge_tol(self) -> float:
        return 10.0 * self.residual_tol if self.dedup_tol is None else self.dedup_tol

    def margin_tol(self, scale: float = 1.0) -> float:
        return self.tol_margin_abs + self.tol_margin_rel * abs(scale)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NumericConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            from .errors import ConfigError

            raise ConfigError(f"numeric: unknown field(s) {sorted(unknown)}")
        return replace(cls(), **data)


DEFAULT = NumericConfig()
