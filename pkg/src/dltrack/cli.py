"""Command-line entry point.

Subcommands: simulate, track, roc, bench, verify. Every run is a pure
function of its config file plus flag overrides; outputs carry the resolved
config hash and seed in a leading comment (CSV) or "comment" field (JSON).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 verification
failure.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import RunConfig, load_run_config
from .engine import run_dl, update_amplitude, update_x_motion, update_y_motion
from .errors import (
    BatchValidationError,
    ConfigError,
    DegenerateLikelihoodError,
    OracleFailureError,
    OracleSizeError,
)
from .evaluation import (
    complexity_probe,
    roc_curve,
    write_complexity_csv,
    write_roc_csv,
    COMPLEXITY_FIELDS,
    ROC_FIELDS,
)
from .lifecycle import declare_detections, detection_candidates
from .likelihood import batch_log_likelihood
from .model import (
    BATCH_CSV_COLUMNS,
    ClutterHypothesis,
    HypothesisSet,
    MeasurementBounds,
    TrackHypothesis,
    batch_from_arrays,
    read_batch_csv,
    write_batch_csv,
)
from .oracle import (
    exhaustive_association_likelihood,
    finite_difference_gradient,
    numeric_mstep,
    weighted_objective,
)
from .scenario import generate, scr_report, write_assignment_csv, write_truth_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_VERIFY = 4


def _write_json(path, fields, rows, comment: str) -> None:
    payload = {"comment": comment, "fields": list(fields), "rows": rows}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _write_table(path_base: str, fields, rows, fmt: str, comment: str) -> str:
    """Write dict-rows as CSV (with comment line) or JSON; returns the path."""
    if fmt == "json":
        path = path_base + ".json"
        _write_json(path, fields, rows, comment)
        return path
    path = path_base + ".csv"
    with open(path, "w", newline="") as fh:
        fh.write(f"# {comment}\n")
        w = csv.DictWriter(fh, fieldnames=list(fields), restval="")
        w.writeheader()
        for row in rows:
            w.writerow(row)
    return path


def _out(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


# ===================== simulate =====================


def cmd_simulate(args, cfg: RunConfig) -> int:
    batch, truth = generate(cfg.scenario)
    header = cfg.output_header()
    if cfg.fmt == "json":
        rows = [
            {"scan": int(s), "t": float(t), "x": float(x), "y": float(y),
             "amplitude": float(a), "doppler": float(d)}
            for s, t, x, y, a, d in zip(batch.scan, batch.t, batch.x,
                                        batch.y, batch.a, batch.d)
        ]
        _write_json(_out(cfg, "batch.json"), BATCH_CSV_COLUMNS, rows, header)
        tr = [{"target_id": j, "x0": t.x0, "y0": t.y0, "vx": t.vx,
               "vy": t.vy, "a_mean": t.a_mean}
              for j, t in enumerate(truth.targets)]
        _write_json(_out(cfg, "truth_targets.json"),
                    ("target_id", "x0", "y0", "vx", "vy", "a_mean"), tr, header)
        am = [{"measurement_index": i, "target_id": int(j)}
              for i, j in enumerate(truth.measurement_target) if j >= 0]
        _write_json(_out(cfg, "truth_assignment.json"),
                    ("measurement_index", "target_id"), am, header)
    else:
        write_batch_csv(batch, _out(cfg, "batch.csv"), header_comment=header)
        write_truth_csv(truth, _out(cfg, "truth_targets.csv"), header_comment=header)
        write_assignment_csv(truth, _out(cfg, "truth_assignment.csv"),
                             header_comment=header)
    print(f"wrote batch: N={batch.n} measurements, "
          f"{cfg.scenario.num_scans} scans, seed={cfg.seed}")
    if cfg.scenario.targets:
        rep = scr_report(cfg.scenario)
        print(f"separation: amplitude {rep.amplitude_ratio:.3f} "
              f"({rep.amplitude_db:+.2f} dB), doppler {rep.doppler_ratio:.3f} "
              f"({rep.doppler_db:+.2f} dB)")
    else:
        print("separation: no targets configured")
    return EXIT_OK


# ===================== track =====================


def _hypotheses_dump(hs: HypothesisSet, result, comment: str) -> dict:
    return {
        "comment": comment,
        "converged": bool(result.converged),
        "iterations": int(result.iterations),
        "diagnostics": {k: int(v) for k, v in result.diagnostics.items()},
        "clutter": {"track_id": hs.clutter.track_id,
                    "prior": float(hs.clutter.prior)},
        "tracks": [
            {"track_id": h.track_id, "status": h.status.value,
             "prior": float(h.prior), "x0": float(h.x0), "y0": float(h.y0),
             "vx": float(h.vx), "vy": float(h.vy), "a": float(h.a),
             "d": float(h.d), "sigma": [float(s) for s in h.sigma]}
            for h in hs.tracks
        ],
    }


def cmd_track(args, cfg: RunConfig) -> int:
    batch = read_batch_csv(args.batch, cfg.scenario.bounds())
    result = run_dl(batch, cfg.dl)
    detections, report = declare_detections(
        result.hypotheses, batch, threshold=cfg.detection_threshold,
        candidates=detection_candidates(result.hypotheses, cfg.dl),
    )
    header = cfg.output_header()

    fields, rows = report.to_rows()
    _write_table(_out(cfg, "detections"), fields, rows, cfg.fmt, header)
    tfields, trows = result.trace.to_rows()
    _write_table(_out(cfg, "trace"), tfields, trows, cfg.fmt, header)
    with open(_out(cfg, "hypotheses.json"), "w") as fh:
        json.dump(_hypotheses_dump(result.hypotheses, result, header), fh, indent=2)
        fh.write("\n")
    if args.dump_association:
        ids = [result.hypotheses.clutter.track_id] + result.hypotheses.track_ids()
        afields = ["measurement_index"] + [f"f_{i}" for i in ids]
        arows = [
            dict({"measurement_index": n},
                 **{f"f_{i}": float(v) for i, v in zip(ids, result.association[n])})
            for n in range(batch.n)
        ]
        _write_table(_out(cfg, "association"), afields, arows, cfg.fmt, header)

    print(f"N={batch.n} iterations={result.iterations} "
          f"converged={result.converged}")
    print(f"active tracks: {len(result.hypotheses.active_tracks())}, "
          f"detections above threshold {cfg.detection_threshold}: "
          f"{len(detections)}")
    for row in report.rows:
        flag = "DETECTED" if row.detected else "below"
        print(f"  track {row.track_id}: llr={row.llr:.2f} gate={row.gate_size} "
              f"[{flag}] x0={row.x0:.1f} y0={row.y0:.1f} "
              f"vx={row.vx:.3f} vy={row.vy:.3f}")
    return EXIT_OK


# ===================== roc =====================


def cmd_roc(args, cfg: RunConfig) -> int:
    n_jobs = args.threads if args.threads else -1
    header = cfg.output_header()
    print(f"{'clutter':>8} {'threshold':>10} {'pd':>8} {'pfa/batch':>10}")
    for level in cfg.roc_clutter_levels:
        scenario = replace(cfg.scenario, clutter_per_scan=int(level))
        points = roc_curve(
            scenario, cfg.dl, cfg.roc_thresholds, cfg.roc_trials,
            criteria=cfg.match, base_seed=cfg.seed, n_jobs=n_jobs,
        )
        if cfg.fmt == "json":
            rows = [
                {"clutter_per_scan": p.clutter_per_scan, "threshold": p.threshold,
                 "pd": p.pd, "pfa_per_batch": p.pfa_per_batch,
                 "pfa_per_area": p.pfa_per_area, "trials": p.trials}
                for p in points
            ]
            _write_json(_out(cfg, f"roc_{level}.json"), ROC_FIELDS, rows, header)
        else:
            write_roc_csv(points, _out(cfg, f"roc_{level}.csv"), header_comment=header)
        for p in (points[0], points[len(points) // 2], points[-1]):
            print(f"{p.clutter_per_scan:>8} {p.threshold:>10.1f} "
                  f"{p.pd:>8.3f} {p.pfa_per_batch:>10.3f}")
    return EXIT_OK


# ===================== bench =====================


def cmd_bench(args, cfg: RunConfig) -> int:
    report = complexity_probe(
        cfg.dl, cfg.bench_n_values, cfg.bench_h_values,
        passes=cfg.bench_passes, seed=cfg.seed,
    )
    header = cfg.output_header()
    if cfg.fmt == "json":
        rows = [
            {"N": r.n, "H": r.h, "iters": r.iters,
             "ops_per_iter": r.ops_per_iter, "wall_ms": r.wall_ms}
            for r in report.rows
        ]
        _write_json(_out(cfg, "complexity.json"), COMPLEXITY_FIELDS, rows, header)
    else:
        write_complexity_csv(report, _out(cfg, "complexity.csv"), header_comment=header)
    print(f"rows={len(report.rows)} slope={report.slope:.3f} "
          f"ops/iter per (N*H) unit, R^2={report.r_squared:.6f}")
    return EXIT_OK


# ===================== verify =====================

_VERIFY_BOUNDS_ARGS = dict(
    x=(0.0, 100.0), y=(0.0, 100.0), a=(0.0, 1.0), d=(-5.0, 5.0)
)


def _random_instance(rng, n, n_tracks):
    bounds = MeasurementBounds(**_VERIFY_BOUNDS_ARGS)
    scan = np.sort(np.arange(n) % 4)
    batch = batch_from_arrays(
        scan=scan, t=scan * 10.0,
        x=rng.uniform(0, 100, n), y=rng.uniform(0, 100, n),
        a=rng.uniform(0, 1, n), d=rng.uniform(-5, 5, n),
        bounds=bounds,
    )
    priors = rng.dirichlet(np.ones(n_tracks + 1))
    tracks = []
    for k in range(n_tracks):
        vx = rng.uniform(-5, 5)
        tracks.append(TrackHypothesis(
            track_id=k + 1, x0=rng.uniform(0, 100), y0=rng.uniform(0, 100),
            vx=vx, vy=rng.uniform(-2, 2), a=rng.uniform(0, 1), d=vx,
            sigma=rng.uniform(0.5, 3.0, size=4), prior=float(priors[k + 1]),
        ))
    hs = HypothesisSet(
        clutter=ClutterHypothesis(prior=float(priors[0])), tracks=tracks
    )
    return batch, hs


def cmd_verify(args, cfg: RunConfig) -> int:
    rng = np.random.default_rng(cfg.seed)
    failures = []

    # 1. mixture likelihood against brute-force assignment enumeration
    worst_rel = 0.0
    for _ in range(args.instances):
        n = int(rng.integers(1, args.max_n + 1))
        batch, hs = _random_instance(rng, n, int(rng.integers(1, args.max_tracks + 1)))
        ours = batch_log_likelihood(batch, hs)
        ref = exhaustive_association_likelihood(batch, hs)
        rel = abs(ours - ref) / max(1.0, abs(ref))
        worst_rel = max(worst_rel, rel)
    ok = worst_rel <= 1e-10
    print(f"[{'PASS' if ok else 'FAIL'}] exhaustive-likelihood: "
          f"worst relative error {worst_rel:.3e} (limit 1e-10)")
    if not ok:
        failures.append("exhaustive-likelihood")

    # 2. closed-form updates against an independent numeric maximizer
    worst_param = 0.0
    worst_grad = 0.0
    for _ in range(args.instances):
        n = int(rng.integers(6, 30))
        batch, hs = _random_instance(rng, n, 1)
        trk = hs.tracks[0]
        f_col = rng.uniform(0.05, 1.0, size=n)
        a_hat = update_amplitude(f_col, batch)
        y0_hat, vy_hat = update_y_motion(f_col, batch)
        c = float(trk.sigma[0] ** 2 / trk.sigma[3] ** 2)
        x0_hat, vx_hat = update_x_motion(f_col, batch, c)
        if args.inject_fault:
            x0_hat += 1e-3
        closed = np.array([x0_hat, y0_hat, vx_hat, vy_hat, a_hat])
        start = np.array([50.0, 50.0, 0.0, 0.0, 0.5])
        numeric = numeric_mstep(f_col, batch, trk.sigma, start)
        worst_param = max(worst_param, float(np.max(np.abs(closed - numeric))))
        grad = finite_difference_gradient(
            lambda p: weighted_objective(p, f_col, batch, trk.sigma), closed
        )
        mass = max(1.0, float(f_col.sum()))
        worst_grad = max(worst_grad, float(np.max(np.abs(grad))) / mass)
    ok = worst_param <= 1e-6
    print(f"[{'PASS' if ok else 'FAIL'}] m-step vs numeric maximizer: "
          f"worst parameter gap {worst_param:.3e} (limit 1e-6)")
    if not ok:
        failures.append("m-step closed form (parameter gap)")
    ok = worst_grad <= 1e-4
    print(f"[{'PASS' if ok else 'FAIL'}] m-step gradient: "
          f"worst scaled gradient {worst_grad:.3e} (limit 1e-4)")
    if not ok:
        failures.append("m-step stationarity (gradient)")

    if failures:
        print(f"verification FAILED: {', '.join(failures)}")
        return EXIT_VERIFY
    print("verification passed")
    return EXIT_OK


# ===================== parser / main =====================


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run-config path")
    common.add_argument("--seed", type=int, default=None,
                        help="override the run seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=None,
                        help="worker count for Monte-Carlo runs (default: all cores)")
    common.add_argument("--format", choices=("csv", "json"), default=None,
                        help="output table format")
    common.add_argument("--print-config", action="store_true",
                        help="print the fully-resolved config and exit")

    p = argparse.ArgumentParser(
        prog="dltrack",
        description="Joint detection/association/tracking over cluttered "
                    "multi-scan batches.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", parents=[common],
                        help="generate a synthetic batch + ground truth")
    sp.set_defaults(func=cmd_simulate)

    tp = sub.add_parser("track", parents=[common],
                        help="fit the mixture to a batch CSV")
    tp.add_argument("batch", help="measurement batch CSV")
    tp.add_argument("--dump-association", action="store_true",
                    help="also write the (large) N x H association matrix")
    tp.set_defaults(func=cmd_track)

    rp = sub.add_parser("roc", parents=[common],
                        help="Monte-Carlo detection-rate curves per clutter level")
    rp.set_defaults(func=cmd_roc)

    bp = sub.add_parser("bench", parents=[common],
                        help="per-iteration cost scaling over an (N, H) grid")
    bp.set_defaults(func=cmd_bench)

    vp = sub.add_parser("verify", parents=[common],
                        help="check core math against brute-force references")
    vp.add_argument("--instances", type=int, default=25)
    vp.add_argument("--max-n", type=int, default=6,
                    help="largest batch for the enumeration check")
    vp.add_argument("--max-tracks", type=int, default=2,
                    help="most track hypotheses for the enumeration check")
    vp.add_argument("--inject-fault", action="store_true",
                    help="negative control: corrupt one update and expect FAIL")
    vp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, seed=args.seed,
                              out_dir=args.out, fmt=args.format)
        if args.print_config:
            print(json.dumps(cfg.resolved_dict(), indent=2, sort_keys=True))
            return EXIT_OK
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OracleSizeError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BatchValidationError, DegenerateLikelihoodError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OracleFailureError as exc:
        print(f"verification error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
