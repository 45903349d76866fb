"""Command-line front end: run scenarios, calibrate radii, verify feasibility.

    ftcbf run       --scenario wmr.yaml --seeds 20 --out results/
    ftcbf calibrate --scenario wmr.yaml --runs 200 --epsilon 0.05 --out calib.yaml
    ftcbf verify    --scenario boeing.yaml --budget 10000 --out report.json

--seeds takes either a count (seeds 0..n-1) or a comma list. Exit codes:
0 success, 1 validation/parse error, 2 verify found a counterexample.
FTCBF_THREADS caps the seed-sweep worker pool.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import FtcbfError
from .estimators import calibrate_gammas
from .runner import run_sweep, sweep_metrics, write_csv, write_metrics
from .scenarios import load_scenario, save_config
from .verifier import falsify_actuator_region, falsify_sensor_region


def _parse_seeds(spec: str) -> list:
    spec = spec.strip()
    if "," in spec:
        return [int(s) for s in spec.split(",") if s.strip() != ""]
    return list(range(int(spec)))


def cmd_run(args) -> int:
    scn = load_scenario(args.scenario)
    seeds = _parse_seeds(args.seeds)
    for note in scn.notes:
        print(f"note: {note}", file=sys.stderr)
    if not seeds:
        return 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_sweep(scn, seeds)
    for res in results:
        write_csv(res, out / f"{scn.name}_seed{res.seed}.csv")
    metrics = sweep_metrics(results)
    write_metrics(metrics, out / f"{scn.name}_metrics.json")
    print(f"{scn.name}: {len(results)} runs, safety_rate={metrics['safety_rate']}, "
          f"min_h={metrics['min_h']:.6g}")
    return 0


def cmd_calibrate(args) -> int:
    scn = load_scenario(args.scenario)
    if scn.family != "sensor":
        raise FtcbfError("calibration applies to sensor-fault scenarios")
    calib = calibrate_gammas(scn.model, scn.faults, args.runs, scn.horizon,
                             args.epsilon, dt=scn.dt, seed=args.seed,
                             mode=scn.estimator_mode)
    block = {"calibration": calib.as_config()}
    save_config(block, args.out)
    print(f"gammas={[round(float(g), 6) for g in calib.gammas]} -> {args.out}")
    return 0


def cmd_verify(args) -> int:
    scn = load_scenario(args.scenario)
    if args.budget < 1:
        raise FtcbfError("verification budget must be positive")
    if scn.family == "actuator":
        report = falsify_actuator_region(
            scn.af_chain_sets, scn.af_patterns, scn.model, scn.verify_box,
            args.budget, seed=args.seed,
            alpha=lambda s, k=scn.policy.alpha_kappa: k * s)
    else:
        from .estimators import make_bank
        bank = make_bank(scn.model, scn.bank_patterns, scn.x0,
                         mode=scn.estimator_mode, with_pairs=False)
        gammas = [float(g) for g in scn.gammas]
        report = falsify_sensor_region(scn.chains, scn.model, bank.singles, gammas,
                                       scn.thetas, scn.verify_box, args.budget,
                                       seed=args.seed)
    Path(args.out).write_text(_report_json(report) + "\n", encoding="utf-8")
    print(report["verdict"])
    return 2 if report["counterexample"] is not None else 0


def _report_json(report: dict) -> str:
    def clean(obj):
        if hasattr(obj, "tolist"):
            return obj.tolist()
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        if isinstance(obj, (bool, int, float, str)) or obj is None:
            return obj
        return str(obj)
    return json.dumps(clean(report), indent=2, sort_keys=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ftcbf", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario over seeds")
    run.add_argument("--scenario", required=True)
    run.add_argument("--seeds", default="1", help="count or comma list")
    run.add_argument("--out", required=True)
    run.set_defaults(fn=cmd_run)

    cal = sub.add_parser("calibrate", help="Monte Carlo gamma/theta calibration")
    cal.add_argument("--scenario", required=True)
    cal.add_argument("--runs", type=int, default=200)
    cal.add_argument("--epsilon", type=float, default=0.05)
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--out", required=True)
    cal.set_defaults(fn=cmd_calibrate)

    ver = sub.add_parser("verify", help="sampling-based feasibility falsification")
    ver.add_argument("--scenario", required=True)
    ver.add_argument("--budget", type=int, default=10_000)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--out", required=True)
    ver.set_defaults(fn=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (FtcbfError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
