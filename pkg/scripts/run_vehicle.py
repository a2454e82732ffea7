"""Reproduce the planar vehicle experiment and write plotting data.

Runs the bundled scenario (fake initial state (2, 2, 2, 1)) and the variant
with fake state (2, 2, 2, 2), each with and without measurement noise, and
writes one trace.csv / trace.json per run under --out.

    python scripts/run_vehicle.py --out runs/vehicle
"""
import argparse
from collections import Counter
from dataclasses import replace
from pathlib import Path

import numpy as np

from secure_cbf import AttackConfig, check_offline_conditions, load_config, run_scenario, worst_case_envelope

VARIANTS = {
    "fake_2221": (2.0, 2.0, 2.0, 1.0),
    "fake_2222": (2.0, 2.0, 2.0, 2.0),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/vehicle")
    ap.add_argument("--horizon", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)

    offline = load_config("vehicle_offline")
    sys_ = offline.system()
    report = check_offline_conditions(sys_, offline.s, offline.cbf(), offline.numeric)
    print(f"offline design, s = {offline.s}: kernel inclusion {report.cond_i_ok}, "
          f"input feasibility {report.cond_ii.kind}")
    for lam, kb in worst_case_envelope(sys_, offline.s, offline.numeric):
        if kb.dim:
            print(f"  sensors {list(lam.indices)} leave direction {np.round(kb.vectors[:, 0], 12)} unresolved")

    cfg = load_config("vehicle")
    horizon = args.horizon or cfg.horizon
    base = cfg.attack_config()
    for name, x_fake in VARIANTS.items():
        for noise in (cfg.attack["noise_std"], 0.0):
            attack = AttackConfig(base.attacked, base.strategy, np.array(x_fake), noise_std=noise, seed=args.seed)
            num = cfg.numeric if noise > 0 else replace(cfg.numeric, residual_tol=1e-10)
            trace = run_scenario(cfg.system(), cfg.cbf(), cfg.x_true0, attack, cfg.nominal_fn(2), horizon,
                                 cfg.window, cfg.s, num, dt=cfg.dt)
            run_dir = out / f"{name}_{'noisy' if noise else 'clean'}"
            run_dir.mkdir(parents=True, exist_ok=True)
            trace.to_csv(run_dir / "trace.csv")
            trace.write_json(run_dir / "trace.json")
            sizes = Counter(len(r.plausible) for r in trace.records if r.status != "warmup")
            first = next(r for r in trace.records if r.status != "warmup")
            print(f"{run_dir.name}: min h true {trace.min_margin_true.min():.4g}, "
                  f"min h fake {np.nanmin(trace.min_margin_fake):.4g}, points per step {dict(sizes)}")
            for p in sorted(first.plausible, key=tuple):
                print(f"    at step {first.step}: {np.round(p, 3)}")


if __name__ == "__main__":
    main()
