"""Command-line front end.

    secure-cbf check-observability --config vehicle
    secure-cbf offline-check       --config vehicle_offline
    secure-cbf reconstruct         --config vehicle --data window.json
    secure-cbf simulate            --config vehicle --out runs/a --seed 3

``--config`` takes a path or the name of a bundled scenario. Exit status:
0 success, 2 config error, 3 infeasible safety problem, 4 attack model
violated, 5 numerical failure.

trace.csv columns, in order: step, time_s, x1..xn, fake_x1..xn,
u_nom_1..m, u_1..m, y_1..p, n_plausible, min_margin_true, min_margin_fake,
filter_status.
"""
import argparse
import json
import sys
import warnings
from collections import Counter
from pathlib import Path

import numpy as np

from .attack import run_scenario
from .errors import AttackModelViolated, ConfigError, SecureCbfError
from .model import is_r_sparse_observable, numerical_rank, observability_matrix
from .reconstruction import DataWindow, plausible_initial_states, propagate_set, worst_case_envelope
from .safety import check_offline_conditions
from .scenario import ScenarioConfig, load_config


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_check_observability(cfg: ScenarioConfig, out: Path) -> int:
    sys_ = cfg.system()
    tol = cfg.numeric.tol_rank
    print(f"system: n = {sys_.n}, m = {sys_.m}, p = {sys_.p}")
    results, best = [], -1
    for r in range(sys_.p):
        ok = is_r_sparse_observable(sys_, r, tol)
        entry = {"r": r, "observable": ok}
        line = f"{r}-sparse observable: {'yes' if ok else 'no'}"
        if not ok:
            for gamma in sys_.all_subsets(sys_.p - r):
                rank = numerical_rank(observability_matrix(sys_, gamma, sys_.n), tol)
                if rank < sys_.n:
                    entry["witness"] = {"sensors": list(gamma.indices), "rank": rank}
                    line += f" (sensors {list(gamma.indices)} reach rank {rank} < {sys_.n})"
                    break
        results.append(entry)
        print(line)
        if not ok:
            break  # r-sparse observability is monotone in r
        best = r
    print(f"largest r: {best}")
    _write_json(out / "observability.json", {"max_sparse_observability": best, "results": results})
    return 0


def cmd_offline_check(cfg: ScenarioConfig, out: Path) -> int:
    sys_, cbf, num = cfg.system(), cfg.cbf(), cfg.numeric
    report = check_offline_conditions(sys_, cfg.s, cbf, num)
    yn = lambda b: "yes" if b else "no"
    print(f"attack budget s = {cfg.s}, p = {sys_.p}")
    print(f"{cfg.s}-sparse observable: {yn(report.sparse_obs_ok)}")
    print(f"p > 2s: {yn(report.p_gt_2s)}")
    failed = [list(lam.indices) for lam, ok in report.cond_i if not ok]
    print(f"kernel inclusion over {len(report.cond_i)} sensor sets: {yn(report.cond_i_ok)}")
    for lam in failed[:5]:
        print(f"  fails for {lam}")
    if len(failed) > 5:
        print(f"  ... and {len(failed) - 5} more")
    print(f"CBF input feasibility: {report.cond_ii.kind}")
    if report.cond_ii.witness is not None:
        print(f"  no admissible input at x = {list(report.cond_ii.witness)}")
    print(f"verdict: {'admissible' if report.verdict else 'not admissible'}")
    payload = report.to_json()
    if report.p_gt_2s:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # sparse observability is already reported above
            envelope = worst_case_envelope(sys_, cfg.s, num)
        payload["envelope"] = [{"sensors": list(lam.indices), "kernel": kb.vectors.T.tolist()} for lam, kb in envelope]
    _write_json(out / "offline_report.json", payload)
    return 0


def _load_window(path) -> DataWindow:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"data: cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"data: {path} is not valid JSON ({exc.msg})") from exc
    if not isinstance(data, dict) or "outputs" not in data:
        raise ConfigError("data: expected an object with outputs (and inputs, start_time)")
    try:
        outputs = np.array(data["outputs"], dtype=float)
        inputs = np.array(data.get("inputs", []), dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError("data.inputs / data.outputs: expected nested lists of numbers") from exc
    if inputs.size == 0:
        inputs = np.zeros((max(outputs.shape[0] - 1, 0), 0))
    return DataWindow(inputs, outputs, int(data.get("start_time", 0)))


def cmd_reconstruct(cfg: ScenarioConfig, data_path, out: Path) -> int:
    sys_, num = cfg.system(), cfg.numeric
    win = _load_window(data_path)
    if win.inputs.shape[1] == 0 and win.t > 0:
        win = DataWindow(np.zeros((win.t, sys_.m)), win.outputs, win.start_time)
    ps0 = plausible_initial_states(win, sys_, cfg.s, num)
    ps = propagate_set(ps0, sys_, win.inputs)
    entries = ps0.nonempty()
    print(f"window: {win.t + 1} samples from time {win.start_time}, s = {cfg.s}")
    print(f"consistent sensor sets: {len(entries)} of {len(ps0.entries)}")
    payload = {"initial": ps0.to_json(), "current": ps.to_json()}
    if not entries:
        _write_json(out / "plausible_set.json", payload)
        raise AttackModelViolated("no sensor combination is consistent with the data")
    affine = [(g, sol) for g, sol in entries if sol.kernel.dim]
    print(f"point entries: {len(entries) - len(affine)}, affine entries: {len(affine)}")
    for gamma, sol in affine[:10]:
        print(f"  {list(gamma.indices)}: affine, base {np.array2string(sol.base, precision=6)}, {sol.kernel.dim}-dim kernel")
    if len(affine) > 10:
        print(f"  ... and {len(affine) - 10} more affine entries")
    points = ps0.points(num.point_merge_tol)
    if ps0.is_finite:
        print(f"distinct plausible states at time {win.start_time}: {len(points)}")
        for x in points:
            print(f"  {np.array2string(x, precision=6)}")
    payload["points"] = [x.tolist() for x in points]
    payload["points_current"] = [x.tolist() for x in ps.points(num.point_merge_tol)]
    _write_json(out / "plausible_set.json", payload)
    return 0


def cmd_simulate(cfg: ScenarioConfig, out: Path) -> int:
    sys_ = cfg.system()
    cbf = cfg.cbf()
    (out / "config.json").write_text(cfg.to_json() + "\n")
    for note in cfg.notes:
        print(f"note: {note}")
    code, trace, err = 0, None, None
    try:
        trace = run_scenario(
            sys_, cbf, cfg.x_true0, cfg.attack_config(), cfg.nominal_fn(sys_.m),
            cfg.horizon, cfg.window, cfg.s, cfg.numeric,
            on_infeasible=cfg.on_infeasible,
            warmup=cfg.warmup,
            remember_exclusions=cfg.remember_exclusions,
            history=cfg.history,
            require_premise=cfg.require_premise,
            dt=cfg.dt,
        )
    except SecureCbfError as exc:
        trace, err = getattr(exc, "trace", None), exc
        code = exc.exit_code
    if trace is not None and len(trace):
        trace.to_csv(out / "trace.csv")
        trace.write_json(out / "trace.json")
        mt, mf = trace.min_margin_true, trace.min_margin_fake
        counts = Counter(r.status for r in trace.records)
        sizes = Counter(len(r.plausible) for r in trace.records if r.status != "warmup")
        print(f"steps run: {len(trace)} of {cfg.horizon}")
        print(f"premise (first plausible sets inside the safe set): {trace.premise_ok}")
        print(f"min margin, true state: {mt.min():.6g}")
        if not np.all(np.isnan(mf)):
            print(f"min margin, fake state: {np.nanmin(mf):.6g}")
        print("filter status: " + ", ".join(f"{k} {v}" for k, v in sorted(counts.items())))
        print("plausible points per step: " + ", ".join(f"{k}: {v}" for k, v in sorted(sizes.items())))
        if trace.halted and trace.error and err is None:
            print(f"halted: {trace.error}")
            if counts.get("infeasible"):
                code = 3
    print(f"artifacts written to {out}")
    if err is not None:
        raise err
    return code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario JSON file, or a bundled name (vehicle, vehicle_offline)")
    common.add_argument("--out", default="secure_cbf_out", help="directory for artifacts")
    common.add_argument("--seed", type=int, help="override attack.seed")
    common.add_argument("--window", type=int, help="override the reconstruction window")
    common.add_argument("--horizon", type=int, help="override the number of simulated steps")
    common.add_argument("--halt-on-infeasible", type=_bool, metavar="BOOL",
                        help="true: stop at an infeasible QP; false: apply zero input and continue")
    parser = argparse.ArgumentParser(prog="secure-cbf", description="Secure state reconstruction and CBF safety filtering.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("check-observability", parents=[common], help="sparse observability report")
    sub.add_parser("offline-check", parents=[common], help="worst-case admissibility of the safe set")
    rec = sub.add_parser("reconstruct", parents=[common], help="plausible states from one data window")
    rec.add_argument("--data", required=True, help='JSON {"inputs": [[...]], "outputs": [[...]], "start_time": 0}')
    sub.add_parser("simulate", parents=[common], help="closed-loop run with the safety filter")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.window, args.horizon, args.halt_on_infeasible)
        out = _outdir(args)
        if args.command == "check-observability":
            return cmd_check_observability(cfg, out)
        if args.command == "offline-check":
            return cmd_offline_check(cfg, out)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg, args.data, out)
        return cmd_simulate(cfg, out)
    except SecureCbfError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
