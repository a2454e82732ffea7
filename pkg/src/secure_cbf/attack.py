"""Closed-loop plant plus sensor attacker, and the trace it produces."""
import csv
import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .config import DEFAULT, NumericConfig
from .errors import Infeasible, InvalidInputError, PreconditionError, SecureCbfError
from .model import LtiSystem, SensorSubset
from .reconstruction import DataWindow, HistoryReconstructor, PlausibleSet, Reconstructor, propagate_set
from .safety import PolyhedralCbf, cbf_margin, containment_check, filter_input

STRATEGIES = ("none", "fake_state", "script")


@dataclass(frozen=True, eq=False)
class AttackConfig:
    """Which sensors the adversary owns and what they report.

    ``fake_state``: attacked sensors read C_i x_fake(k), where x_fake starts at
    ``x_fake`` and is driven by the same inputs as the plant.
    ``script``: attacked sensors get ``script[k]`` (a p-vector) added at step k.
    Noise is added to every sensor, attacked or not.
    """

    attacked: Optional[SensorSubset] = None
    strategy: str = "none"
    x_fake: Optional[np.ndarray] = None
    script: Optional[np.ndarray] = None
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InvalidInputError(f"attack.strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.noise_std < 0:
            raise InvalidInputError("attack.noise_std must be nonnegative")
        if self.strategy == "fake_state" and self.x_fake is None:
            raise InvalidInputError("fake_state strategy requires x_fake")
        if self.strategy == "script" and self.script is None:
            raise InvalidInputError("script strategy requires script")
        if self.strategy != "none" and self.attacked is None:
            raise InvalidInputError(f"strategy {self.strategy!r} needs a set of attacked sensors")
        if self.x_fake is not None:
            object.__setattr__(self, "x_fake", np.asarray(self.x_fake, dtype=float).ravel())
        if self.script is not None:
            object.__setattr__(self, "script", np.atleast_2d(np.asarray(self.script, dtype=float)))

    @property
    def n_attacked(self) -> int:
        return 0 if self.attacked is None else len(self.attacked)

    def validate(self, sys: LtiSystem, s: int):
        """The adversary may own at most s sensors."""
        if self.n_attacked > s:
            raise InvalidInputError(f"{self.n_attacked} attacked sensors exceed the budget s = {s}")
        if self.attacked is not None and self.attacked.indices[-1] > sys.p:
            raise InvalidInputError(f"attacked sensor index out of range 1..{sys.p}")
        if self.x_fake is not None and self.x_fake.size != sys.n:
            raise InvalidInputError(f"x_fake has {self.x_fake.size} entries, system has n = {sys.n}")
        if self.script is not None and self.script.shape[1] != sys.p:
            raise InvalidInputError(f"script rows must have p = {sys.p} entries")


def step_plant(sys: LtiSystem, x, u) -> np.ndarray:
    return sys.A @ np.asarray(x, dtype=float) + sys.B @ np.asarray(u, dtype=float)


def measure(sys: LtiSystem, x_true, x_fake_state, cfg: AttackConfig, rng: np.random.Generator, step: int = 0) -> np.ndarray:
    y = sys.C @ np.asarray(x_true, dtype=float)
    if cfg.attacked is not None:
        att = cfg.attacked.zero_based
        if cfg.strategy == "fake_state":
            if x_fake_state is None:
                raise InvalidInputError("fake_state strategy needs the current fake state")
            y[att] = sys.C[att] @ np.asarray(x_fake_state, dtype=float)
        elif cfg.strategy == "script":
            if step >= cfg.script.shape[0]:
                raise InvalidInputError(f"attack script exhausted at step {step}")
            y[att] += cfg.script[step][att]
    if cfg.noise_std > 0:
        y = y + cfg.noise_std * rng.standard_normal(sys.p)
    return y


@dataclass
class StepRecord:
    step: int
    x_true: np.ndarray
    x_fake: Optional[np.ndarray]
    u_nom: np.ndarray
    u: np.ndarray
    y: np.ndarray
    plausible: List[np.ndarray]
    margin_true: np.ndarray
    margin_fake: Optional[np.ndarray]
    status: str


@dataclass
class SimTrace:
    records: List[StepRecord] = field(default_factory=list)
    dt: Optional[float] = None
    premise_ok: Optional[bool] = None
    halted: bool = False
    error: Optional[str] = None
    excluded: List[List[int]] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def min_margin_true(self) -> np.ndarray:
        return np.array([float(np.min(r.margin_true)) for r in self.records])

    @property
    def min_margin_fake(self) -> np.ndarray:
        return np.array([float(np.min(r.margin_fake)) if r.margin_fake is not None else np.nan for r in self.records])

    def header(self) -> List[str]:
        r0 = self.records[0]
        n, m, p = r0.x_true.size, r0.u.size, r0.y.size
        return (
            ["step", "time_s"]
            + [f"x{i + 1}" for i in range(n)]
            + [f"fake_x{i + 1}" for i in range(n)]
            + [f"u_nom_{j + 1}" for j in range(m)]
            + [f"u_{j + 1}" for j in range(m)]
            + [f"y_{i + 1}" for i in range(p)]
            + ["n_plausible", "min_margin_true", "min_margin_fake", "filter_status"]
        )

    def to_csv(self, path):
        fmt = lambda v: format(float(v), ".12g")
        n = self.records[0].x_true.size if self.records else 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            if not self.records:
                return
            writer.writerow(self.header())
            for r in self.records:
                t = r.step * self.dt if self.dt is not None else r.step
                fake = [fmt(v) for v in r.x_fake] if r.x_fake is not None else [""] * n
                fake_margin = fmt(np.min(r.margin_fake)) if r.margin_fake is not None else ""
                writer.writerow(
                    [r.step, fmt(t)]
                    + [fmt(v) for v in r.x_true]
                    + fake
                    + [fmt(v) for v in r.u_nom]
                    + [fmt(v) for v in r.u]
                    + [fmt(v) for v in r.y]
                    + [len(r.plausible), fmt(np.min(r.margin_true)), fake_margin, r.status]
                )

    def to_json(self) -> dict:
        vec = lambda a: None if a is None else [float(v) for v in a]
        return {
            "dt": self.dt,
            "premise_ok": self.premise_ok,
            "halted": self.halted,
            "error": self.error,
            "excluded_combinations": self.excluded,
            "steps": [
                {
                    "step": r.step,
                    "x_true": vec(r.x_true),
                    "x_fake": vec(r.x_fake),
                    "u_nom": vec(r.u_nom),
                    "u": vec(r.u),
                    "y": vec(r.y),
                    "plausible": [vec(x) for x in r.plausible],
                    "margin_true": vec(r.margin_true),
                    "margin_fake": vec(r.margin_fake),
                    "status": r.status,
                }
                for r in self.records
            ],
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


def read_trace_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_scenario(
    sys: LtiSystem,
    cbf: PolyhedralCbf,
    x_true0,
    attack: AttackConfig,
    u_nom_fn: Callable[[int], np.ndarray],
    horizon: int,
    window: int,
    s: int,
    cfg: NumericConfig = DEFAULT,
    *,
    on_infeasible: str = "halt",
    warmup: str = "nominal",
    remember_exclusions: bool = True,
    history: str = "window",
    require_premise: bool = False,
    dt: Optional[float] = None,
) -> SimTrace:
    """Simulate the plant under attack with the reconstruction-based safety filter.

    The first ``window - 1`` steps apply the warm-up input. From then on the
    plausible set is rebuilt every step from the last ``window`` samples,
    pushed forward to the current time and used to filter u_nom. On the
    first filtered step the plausible sets at times 0..window-1 are checked
    for containment in the safe set (recorded in ``premise_ok``).

    With ``remember_exclusions`` a combination that was inconsistent once is
    never solved again: the attacked set is fixed for the run, so a
    combination that ever disagreed with the data contains a corrupted sensor.

    A failed premise is only recorded unless ``require_premise`` is set, in
    which case the run stops with PreconditionError.

    ``history="full"`` reconstructs from every sample since time 0 instead of
    the sliding window (the window then only sets the warm-up length).
    """
    if not 1 <= window <= horizon:
        raise InvalidInputError(f"need 1 <= window <= horizon, got window={window}, horizon={horizon}")
    if on_infeasible not in ("halt", "hold-zero-input"):
        raise InvalidInputError("on_infeasible must be 'halt' or 'hold-zero-input'")
    if warmup not in ("nominal", "zero"):
        raise InvalidInputError("warmup must be 'nominal' or 'zero'")
    if history not in ("window", "full"):
        raise InvalidInputError("history must be 'window' or 'full'")
    attack.validate(sys, s)
    cbf.check(sys)
    x = np.asarray(x_true0, dtype=float).ravel()
    if x.size != sys.n:
        raise InvalidInputError(f"x_true0 has {x.size} entries, system has n = {sys.n}")
    xf = attack.x_fake.copy() if attack.strategy == "fake_state" else None

    rng = np.random.default_rng(attack.seed)
    recon = Reconstructor(sys, s, window, cfg) if history == "window" else None
    hist = HistoryReconstructor(sys, s, cfg) if history == "full" else None
    excluded = set()
    trace = SimTrace(dt=dt)
    ys, us = [], []
    merge_tol = cfg.point_merge_tol

    for k in range(horizon):
        y = measure(sys, x, xf, attack, rng, step=k)
        ys.append(y)
        if hist is not None:
            hist.update(y, us[-1] if us else None)
        u_nom = np.asarray(u_nom_fn(k), dtype=float).ravel()
        plausible: List[np.ndarray] = []
        if k < window - 1:
            u = u_nom.copy() if warmup == "nominal" else np.zeros(sys.m)
            status = "warmup"
        else:
            if hist is None:
                start = k - window + 1
                inputs = np.array(us[start:k]).reshape(window - 1, sys.m)
                win = DataWindow(inputs, np.array(ys[start : k + 1]), start_time=start)
                ps0 = recon.reconstruct(win, frozenset(excluded))
            else:
                inputs = np.array(us[:k]).reshape(k, sys.m)
                ps0 = hist.initial(frozenset(excluded))
            if remember_exclusions:
                excluded.update(g for g, sol in ps0.entries.items() if sol.is_empty)
            ps = propagate_set(ps0, sys, inputs) if hist is None else hist.current(ps0=ps0)
            plausible = ps.points(merge_tol)
            if trace.premise_ok is None:
                trace.premise_ok = _premise(ps0, inputs, sys, cbf, cfg)
                if require_premise and not trace.premise_ok:
                    trace.halted, trace.error = True, "PreconditionError: initial plausible sets leave the safe set"
                    exc = PreconditionError("initial plausible sets are not contained in the safe set")
                    exc.trace = trace
                    raise exc
            try:
                res = filter_input(u_nom, ps, sys, cbf, cfg)
                u = res.u
                status = "filtered" if res.modified else "nominal"
            except Infeasible as exc:
                status = "infeasible"
                if on_infeasible == "halt":
                    trace.records.append(_record(k, x, xf, u_nom, u_nom * np.nan, y, plausible, cbf, status))
                    trace.halted, trace.error = True, f"Infeasible: {exc}"
                    break
                u = np.zeros(sys.m)
            except SecureCbfError as exc:
                trace.records.append(_record(k, x, xf, u_nom, u_nom * np.nan, y, plausible, cbf, type(exc).__name__))
                trace.halted, trace.error = True, f"{type(exc).__name__}: {exc}"
                exc.trace = trace
                raise
        trace.records.append(_record(k, x, xf, u_nom, u, y, plausible, cbf, status))
        us.append(u)
        x = step_plant(sys, x, u)
        if xf is not None:
            xf = step_plant(sys, xf, u)
    trace.excluded = [list(g.indices) for g in sorted(excluded)]
    return trace


def _premise(ps0: PlausibleSet, inputs, sys, cbf, cfg) -> bool:
    """Plausible sets at every time covered by the first window lie in C."""
    ok = containment_check(ps0, cbf, sys, cfg)
    ps = ps0
    for u in inputs:
        ps = propagate_set(ps, sys, [u])
        ok = ok and containment_check(ps, cbf, sys, cfg)
    return bool(ok)


def _record(k, x, xf, u_nom, u, y, plausible, cbf, status) -> StepRecord:
    return StepRecord(
        step=k,
        x_true=x.copy(),
        x_fake=None if xf is None else xf.copy(),
        u_nom=u_nom,
        u=np.asarray(u, dtype=float),
        y=y,
        plausible=[p.copy() for p in plausible],
        margin_true=cbf_margin(cbf, x),
        margin_fake=None if xf is None else cbf_margin(cbf, xf),
        status=status,
    )


def sinusoid_nominal(amp: float = 1.0, freq: float = 0.01, m: int = 2) -> Callable[[int], np.ndarray]:
    """u_j(k) = amp * sin(freq * k + j * pi / 2): (sin, cos) for m = 2."""
    phases = np.arange(m) * np.pi / 2

    def u_nom(k: int) -> np.ndarray:
        return amp * np.sin(freq * k + phases)

    return u_nom
