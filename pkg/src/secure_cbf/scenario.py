"""Scenario configuration: JSON in, validated dataclass out, canonical JSON back.

Matrices may be written as nested row lists or as {"rows", "cols", "data"}
objects; the echo always uses the object form.
"""
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, List, Optional, Union

import numpy as np

from .attack import AttackConfig, STRATEGIES, sinusoid_nominal
from .config import NumericConfig
from .errors import ConfigError, InvalidInputError
from .model import LtiSystem, SensorSubset, matrix_from_json, matrix_to_json, zoh_discretize
from .safety import PolyhedralCbf

DEFAULT_GAMMA = 0.05
BUNDLED = ("vehicle", "vehicle_offline")

_TOP_KEYS = {
    "name", "system", "safe_set", "gamma", "s", "attack", "x_true0", "horizon", "window",
    "nominal", "numeric", "on_infeasible", "warmup", "history", "remember_exclusions",
    "require_premise", "notes",
}


@dataclass(eq=False)
class ScenarioConfig:
    system_form: str  # "discrete" | "continuous"
    sys_matrices: dict  # A, B, C  or  Ac, Bc, C
    dt: Optional[float]
    H: np.ndarray
    q: np.ndarray
    gamma: float
    s: int
    attack: dict
    x_true0: np.ndarray
    horizon: int
    window: int
    nominal: Union[str, dict, list]
    numeric: NumericConfig = field(default_factory=NumericConfig)
    on_infeasible: str = "halt"
    warmup: str = "nominal"
    history: str = "window"
    remember_exclusions: bool = True
    require_premise: bool = False
    name: str = ""
    notes: List[str] = field(default_factory=list)

    def system(self) -> LtiSystem:
        M = self.sys_matrices
        if self.system_form == "discrete":
            return LtiSystem(M["A"], M["B"], M["C"])
        A, B = zoh_discretize(M["Ac"], M["Bc"], self.dt)
        return LtiSystem(A, B, M["C"])

    def cbf(self) -> PolyhedralCbf:
        return PolyhedralCbf(self.H, self.q, self.gamma)

    def attack_config(self) -> AttackConfig:
        a = self.attack
        return AttackConfig(
            attacked=SensorSubset(a["attacked"]) if a["attacked"] else None,
            strategy=a["strategy"],
            x_fake=None if a["x_fake"] is None else np.array(a["x_fake"], dtype=float),
            script=None if a["script"] is None else np.array(a["script"], dtype=float),
            noise_std=a["noise_std"],
            seed=a["seed"],
        )

    def nominal_fn(self, m: int) -> Callable[[int], np.ndarray]:
        nom = self.nominal
        if nom == "zero":
            return lambda k: np.zeros(m)
        if isinstance(nom, dict):
            return sinusoid_nominal(nom["amp"], nom["freq"], m)
        table = np.array(nom, dtype=float)

        def u_nom(k: int) -> np.ndarray:
            if k >= table.shape[0]:
                raise ConfigError(f"nominal: explicit list has {table.shape[0]} entries, step {k} needs more")
            return table[k]

        return u_nom

    def to_dict(self) -> dict:
        """Canonical form; :func:`parse_config` of this gives back an equal config."""
        system = {k: matrix_to_json(v) for k, v in self.sys_matrices.items()}
        if self.dt is not None:
            system["dt"] = self.dt
        return {
            "name": self.name,
            "system": system,
            "safe_set": {"H": matrix_to_json(self.H), "q": [float(v) for v in self.q]},
            "gamma": self.gamma,
            "s": self.s,
            "attack": dict(self.attack),
            "x_true0": [float(v) for v in self.x_true0],
            "horizon": self.horizon,
            "window": self.window,
            "nominal": self.nominal,
            "numeric": self.numeric.to_dict(),
            "on_infeasible": self.on_infeasible,
            "warmup": self.warmup,
            "history": self.history,
            "remember_exclusions": self.remember_exclusions,
            "require_premise": self.require_premise,
        }

    def to_json(self, with_notes: bool = True) -> str:
        d = self.to_dict()
        if with_notes and self.notes:
            d["notes"] = list(self.notes)
        return json.dumps(d, indent=2, sort_keys=True)

    def __eq__(self, other):
        return isinstance(other, ScenarioConfig) and self.to_dict() == other.to_dict()

    def with_overrides(self, seed=None, window=None, horizon=None, halt_on_infeasible=None) -> "ScenarioConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, attack={**cfg.attack, "seed": int(seed)})
        if window is not None:
            cfg = replace(cfg, window=int(window))
        if horizon is not None:
            cfg = replace(cfg, horizon=int(horizon))
        if halt_on_infeasible is not None:
            cfg = replace(cfg, on_infeasible="halt" if halt_on_infeasible else "hold-zero-input")
        if not 1 <= cfg.window <= cfg.horizon:
            raise ConfigError(f"window: need 1 <= window <= horizon, got {cfg.window} and {cfg.horizon}")
        return cfg


def _matrix(obj, name):
    try:
        return matrix_from_json(obj, name)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc


def _vector(obj, name, size=None):
    try:
        v = np.array(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected a list of numbers") from exc
    if v.ndim != 1 or not np.all(np.isfinite(v)):
        raise ConfigError(f"{name}: expected a finite 1-D list of numbers")
    if size is not None and v.size != size:
        raise ConfigError(f"{name}: expected {size} entries, got {v.size}")
    return v


def _number(obj, name, kind=float, minimum=None):
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {obj!r}")
    if kind is int and obj != int(obj):
        raise ConfigError(f"{name}: expected an integer, got {obj!r}")
    val = kind(obj)
    if not np.isfinite(val) or (minimum is not None and val < minimum):
        raise ConfigError(f"{name}: value {obj!r} out of range")
    return val


def _choice(obj, name, options):
    if obj not in options:
        raise ConfigError(f"{name}: expected one of {list(options)}, got {obj!r}")
    return obj


def _flag(obj, name):
    if not isinstance(obj, bool):
        raise ConfigError(f"{name}: expected true or false, got {obj!r}")
    return obj


def _parse_system(d):
    if not isinstance(d, dict):
        raise ConfigError("system: expected an object")
    discrete = "A" in d or "B" in d
    continuous = "Ac" in d or "Bc" in d
    if discrete == continuous:
        raise ConfigError("system: give exactly one of the discrete (A, B, C) or continuous (Ac, Bc, C, dt) forms")
    names = ("A", "B", "C") if discrete else ("Ac", "Bc", "C")
    allowed = set(names) | {"dt"}
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"system: unknown field(s) {sorted(extra)}")
    for k in names:
        if k not in d:
            raise ConfigError(f"system.{k}: missing")
    mats = {k: _matrix(d[k], f"system.{k}") for k in names}
    dt = None if d.get("dt") is None else _number(d["dt"], "system.dt")
    if not discrete and (dt is None or dt <= 0):
        raise ConfigError("system.dt: continuous form needs a positive dt")
    A = mats[names[0]]
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigError(f"system.{names[0]}: must be square, got {A.shape}")
    if mats[names[1]].shape[0] != n:
        raise ConfigError(f"system.{names[1]}: expected {n} rows, got {mats[names[1]].shape[0]}")
    if mats["C"].shape[1] != n:
        raise ConfigError(f"system.C: expected {n} columns, got {mats['C'].shape[1]}")
    return ("discrete" if discrete else "continuous"), mats, dt


def _parse_attack(d, n, p, s):
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError("attack: expected an object")
    known = {"attacked", "strategy", "x_fake", "script", "noise_std", "seed"}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"attack: unknown field(s) {sorted(extra)}")
    strategy = d.get("strategy", "none")
    strategy = "none" if strategy is None else _choice(strategy, "attack.strategy", STRATEGIES)
    attacked = d.get("attacked") or []
    if not isinstance(attacked, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in attacked):
        raise ConfigError("attack.attacked: expected a list of 1-based sensor indices")
    attacked = sorted(attacked)
    if len(set(attacked)) != len(attacked) or any(i < 1 or i > p for i in attacked):
        raise ConfigError(f"attack.attacked: indices must be distinct and within 1..{p}")
    if len(attacked) > s:
        raise ConfigError(f"attack.attacked: {len(attacked)} attacked sensors exceed the budget s = {s}")
    x_fake = d.get("x_fake")
    if x_fake is not None:
        x_fake = [float(v) for v in _vector(x_fake, "attack.x_fake", n)]
    script = d.get("script")
    if script is not None:
        arr = _matrix(script, "attack.script")
        if arr.shape[1] != p:
            raise ConfigError(f"attack.script: rows must have p = {p} entries")
        script = arr.tolist()
    if strategy == "fake_state" and x_fake is None:
        raise ConfigError("attack.x_fake: required by the fake_state strategy")
    if strategy == "script" and script is None:
        raise ConfigError("attack.script: required by the script strategy")
    if strategy != "none" and not attacked:
        raise ConfigError("attack.attacked: the strategy needs at least one attacked sensor")
    return {
        "attacked": attacked,
        "strategy": strategy,
        "x_fake": x_fake,
        "script": script,
        "noise_std": _number(d.get("noise_std", 0.0), "attack.noise_std", minimum=0.0),
        "seed": _number(d.get("seed", 0), "attack.seed", kind=int, minimum=0),
    }


def _parse_nominal(obj, m):
    if obj is None or obj == "zero":
        return "zero"
    if obj == "sinusoid":
        obj = {"type": "sinusoid"}
    if isinstance(obj, dict):
        body = obj.get("sinusoid", obj) if "sinusoid" in obj else obj
        if not isinstance(body, dict):
            raise ConfigError("nominal.sinusoid: expected an object with amp and freq")
        extra = set(body) - {"type", "amp", "freq"}
        if extra or body.get("type", "sinusoid") != "sinusoid":
            raise ConfigError(f"nominal: unsupported form {obj!r}")
        return {
            "type": "sinusoid",
            "amp": _number(body.get("amp", 1.0), "nominal.amp"),
            "freq": _number(body.get("freq", 0.01), "nominal.freq"),
        }
    if isinstance(obj, list):
        arr = _matrix(obj, "nominal")
        if arr.shape[1] != m:
            raise ConfigError(f"nominal: each entry needs m = {m} inputs")
        return arr.tolist()
    raise ConfigError(f"nominal: expected 'zero', 'sinusoid', a sinusoid object or a list, got {obj!r}")


def parse_config(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object")
    extra = set(data) - _TOP_KEYS
    if extra:
        raise ConfigError(f"config: unknown field(s) {sorted(extra)}")
    notes = []
    if "system" not in data:
        raise ConfigError("system: missing")
    form, mats, dt = _parse_system(data["system"])
    n = mats["C"].shape[1]
    m = mats["B" if form == "discrete" else "Bc"].shape[1]
    p = mats["C"].shape[0]

    ss = data.get("safe_set")
    if not isinstance(ss, dict) or "H" not in ss or "q" not in ss:
        raise ConfigError("safe_set: expected an object with H and q")
    if set(ss) - {"H", "q"}:
        raise ConfigError(f"safe_set: unknown field(s) {sorted(set(ss) - {'H', 'q'})}")
    H = _matrix(ss["H"], "safe_set.H")
    if H.shape[1] != n:
        raise ConfigError(f"safe_set.H: expected {n} columns, got {H.shape[1]}")
    q = _vector(ss["q"], "safe_set.q", H.shape[0])

    if "gamma" in data:
        gamma = _number(data["gamma"], "gamma")
    else:
        gamma = DEFAULT_GAMMA
        notes.append(f"gamma not given, default {DEFAULT_GAMMA} applied")
    if not 0 < gamma < 1:
        raise ConfigError(f"gamma: must lie in (0, 1), got {gamma}")

    if "s" not in data:
        raise ConfigError("s: missing")
    s = _number(data["s"], "s", kind=int, minimum=0)
    if s >= p:
        raise ConfigError(f"s: must be smaller than p = {p}")

    attack = _parse_attack(data.get("attack"), n, p, s)
    if "x_true0" not in data:
        raise ConfigError("x_true0: missing")
    x0 = _vector(data["x_true0"], "x_true0", n)
    horizon = _number(data.get("horizon", 100), "horizon", kind=int, minimum=1)
    if "window" in data:
        window = _number(data["window"], "window", kind=int, minimum=1)
    else:
        window = n
        notes.append(f"window not given, default n = {n} applied")
    if window > horizon:
        raise ConfigError(f"window: {window} exceeds horizon {horizon}")

    numeric = data.get("numeric", {})
    if not isinstance(numeric, dict):
        raise ConfigError("numeric: expected an object")
    try:
        num = NumericConfig.from_dict(numeric)
    except TypeError as exc:
        raise ConfigError(f"numeric: {exc}") from exc
    if "residual_tol" not in numeric:
        notes.append(f"numeric.residual_tol not given, default {num.residual_tol} applied")

    return ScenarioConfig(
        system_form=form,
        sys_matrices=mats,
        dt=dt,
        H=H,
        q=q,
        gamma=gamma,
        s=s,
        attack=attack,
        x_true0=x0,
        horizon=horizon,
        window=window,
        nominal=_parse_nominal(data.get("nominal", "zero"), m),
        numeric=num,
        on_infeasible=_choice(data.get("on_infeasible", "halt"), "on_infeasible", ("halt", "hold-zero-input")),
        warmup=_choice(data.get("warmup", "nominal"), "warmup", ("nominal", "zero")),
        history=_choice(data.get("history", "window"), "history", ("window", "full")),
        remember_exclusions=_flag(data.get("remember_exclusions", True), "remember_exclusions"),
        require_premise=_flag(data.get("require_premise", False), "require_premise"),
        name=str(data.get("name", "")),
        notes=notes,
    )


def bundled_path(name: str) -> Path:
    if name not in BUNDLED:
        raise ConfigError(f"no bundled scenario {name!r}; choose from {list(BUNDLED)}")
    return Path(str(resources.files("secure_cbf") / "data" / f"{name}.json"))


def load_config(path) -> ScenarioConfig:
    """Read and validate a scenario file; a bare bundled name also works."""
    path = Path(path)
    if not path.exists() and str(path) in BUNDLED:
        path = bundled_path(str(path))
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc.msg}, line {exc.lineno})") from exc
    return parse_config(data)
