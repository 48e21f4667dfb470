"""Truth matching, Monte-Carlo detection-rate curves, and cost scaling.

The detection-rate harness runs each trial's fit exactly once and sweeps
thresholds over the cached LLR scores afterwards. That is sound because the
greedy matcher works in descending LLR order: raising the threshold only
removes a suffix of the candidate list, which never changes the assignment
of the detections that remain.
"""

import csv
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from .engine import DLConfig, OpCounter, e_step, m_step, run_dl
from .errors import ConfigError
from .lifecycle import DetectionRow, declare_detections, detection_candidates
from .model import (
    Batch,
    ClutterHypothesis,
    HypothesisSet,
    MeasurementBounds,
    TrackHypothesis,
    TrackStatus,
    batch_from_arrays,
)
from .scenario import GroundTruth, ScenarioConfig, generate


# ===================== truth matching =====================


@dataclass(frozen=True)
class MatchCriteria:
    """Gates for declaring a detection 'the same object' as a truth target.

    Position error is evaluated at time t_mid (mid-batch), velocity error as
    the Euclidean norm over (vx, vy). amplitude_gate of None disables the
    amplitude check.
    """

    position_gate: float
    velocity_gate: float
    t_mid: float = 0.0
    amplitude_gate: Optional[float] = None

    def __post_init__(self):
        if not (self.position_gate > 0 and self.velocity_gate > 0):
            raise ConfigError("match gates must be positive")
        if self.amplitude_gate is not None and not self.amplitude_gate > 0:
            raise ConfigError("amplitude_gate must be positive when set")


def default_match_criteria(cfg: ScenarioConfig) -> MatchCriteria:
    """Gates scaled to what a constant-velocity fit over the batch can
    resolve: 4x the sensor position noise, and that over the batch span for
    velocity."""
    pos_sigma = max(cfg.sensor_sigma[0], cfg.sensor_sigma[1])
    duration = (cfg.num_scans - 1) * cfg.revisit_interval
    return MatchCriteria(
        position_gate=4.0 * pos_sigma,
        velocity_gate=4.0 * pos_sigma / duration,
        t_mid=0.5 * duration,
    )


@dataclass
class MatchResult:
    pairs: List[Tuple[int, int]]  # (track_id, target index)
    unmatched_detections: List[int]
    unmatched_targets: List[int]

    def target_for_track(self, track_id: int) -> Optional[int]:
        for tid, tgt in self.pairs:
            if tid == track_id:
                return tgt
        return None


def match_tracks(
    detections: Sequence[DetectionRow],
    truth: GroundTruth,
    criteria: MatchCriteria,
) -> MatchResult:
    """One-to-one greedy assignment, strongest LLR first.

    A detection claims the nearest still-unclaimed target that passes every
    gate; detections that claim nothing are false. Deterministic under
    permutation of the input (ties broken by track_id).
    """
    order = sorted(detections, key=lambda r: (-r.llr, r.track_id))
    t = criteria.t_mid
    taken = set()
    pairs: List[Tuple[int, int]] = []
    false_ids: List[int] = []
    for det in order:
        px = det.x0 + det.vx * t
        py = det.y0 + det.vy * t
        best = None
        best_err = math.inf
        for j, tgt in enumerate(truth.targets):
            if j in taken:
                continue
            err_pos = math.hypot(px - (tgt.x0 + tgt.vx * t),
                                 py - (tgt.y0 + tgt.vy * t))
            if err_pos >= criteria.position_gate:
                continue
            if math.hypot(det.vx - tgt.vx, det.vy - tgt.vy) >= criteria.velocity_gate:
                continue
            if (criteria.amplitude_gate is not None
                    and abs(det.a - tgt.a_mean) >= criteria.amplitude_gate):
                continue
            if err_pos < best_err:
                best, best_err = j, err_pos
        if best is None:
            false_ids.append(det.track_id)
        else:
            taken.add(best)
            pairs.append((det.track_id, best))
    unmatched_targets = [j for j in range(len(truth.targets)) if j not in taken]
    return MatchResult(pairs=pairs, unmatched_detections=false_ids,
                       unmatched_targets=unmatched_targets)


# ===================== detection-rate curves =====================


@dataclass(frozen=True)
class RocPoint:
    clutter_per_scan: int
    threshold: float
    pd: float
    pfa_per_batch: float
    pfa_per_area: float
    trials: int


def _roc_trial(cfg: ScenarioConfig, dl_cfg: DLConfig, criteria: MatchCriteria,
               base_seed: int, trial: int):
    """One seeded scenario -> (per-target matched LLR or -inf, false LLRs)."""
    rng = np.random.default_rng(np.random.SeedSequence((base_seed, trial)))
    batch, truth = generate(cfg, seed=rng)
    result = run_dl(batch, dl_cfg)
    _, report = declare_detections(
        result.hypotheses, batch, threshold=-math.inf,
        candidates=detection_candidates(result.hypotheses, dl_cfg),
    )
    match = match_tracks(report.rows, truth, criteria)
    llr_by_id = {r.track_id: r.llr for r in report.rows}
    matched = np.full(len(truth.targets), -math.inf)
    for tid, tgt in match.pairs:
        matched[tgt] = llr_by_id[tid]
    false_llrs = np.array([llr_by_id[tid] for tid in match.unmatched_detections])
    return matched, false_llrs


def roc_curve(
    cfg: ScenarioConfig,
    dl_cfg: DLConfig,
    thresholds: Sequence[float],
    trials: int,
    criteria: Optional[MatchCriteria] = None,
    base_seed: Optional[int] = None,
    n_jobs: int = 1,
) -> List[RocPoint]:
    """Monte-Carlo pd/pfa at each threshold for one clutter density.

    Every trial re-derives its seed from (base_seed, trial index), so results
    are independent of n_jobs and each trial is individually reproducible.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if criteria is None:
        criteria = default_match_criteria(cfg)
    if base_seed is None:
        base_seed = cfg.rng_seed
    outcomes = Parallel(n_jobs=n_jobs)(
        delayed(_roc_trial)(cfg, dl_cfg, criteria, base_seed, i)
        for i in range(trials)
    )
    area = cfg.area[0] * cfg.area[1]
    points = []
    for thr in sorted(thresholds):
        pd_sum = 0.0
        fa_sum = 0
        for matched, false_llrs in outcomes:
            pd_sum += float((matched > thr).mean())
            fa_sum += int((false_llrs > thr).sum())
        points.append(RocPoint(
            clutter_per_scan=cfg.clutter_per_scan,
            threshold=float(thr),
            pd=pd_sum / trials,
            pfa_per_batch=fa_sum / trials,
            pfa_per_area=fa_sum / trials / area,
            trials=trials,
        ))
    return points


# ===================== cost scaling =====================

_PROBE_BOUNDS = MeasurementBounds(
    x=(0.0, 500.0), y=(0.0, 500.0), a=(0.0, 1.0), d=(-5.0, 5.0)
)
_PROBE_SCANS = 4


@dataclass(frozen=True)
class ComplexityRow:
    n: int
    h: int
    iters: int
    ops_per_iter: float
    wall_ms: float


@dataclass
class ComplexityReport:
    rows: List[ComplexityRow]
    slope: float
    r_squared: float


def _probe_batch(n: int, rng: np.random.Generator) -> Batch:
    b = _PROBE_BOUNDS
    scan = np.arange(n) % _PROBE_SCANS
    scan.sort()
    return batch_from_arrays(
        scan=scan,
        t=scan * 10.0,
        x=rng.uniform(*b.x, size=n),
        y=rng.uniform(*b.y, size=n),
        a=rng.uniform(*b.a, size=n),
        d=rng.uniform(*b.d, size=n),
        bounds=b,
    )


def _probe_roster(h: int, rng: np.random.Generator) -> HypothesisSet:
    b = _PROBE_BOUNDS
    prior = 1.0 / (h + 1)
    tracks = []
    for k in range(h):
        vx = rng.uniform(*b.d)
        tracks.append(TrackHypothesis(
            track_id=k + 1,
            x0=rng.uniform(*b.x), y0=rng.uniform(*b.y),
            vx=vx, vy=rng.uniform(-2.0, 2.0),
            a=rng.uniform(*b.a), d=vx,
            sigma=0.25 * b.half_widths,
            prior=prior, status=TrackStatus.ACTIVE,
        ))
    return HypothesisSet(clutter=ClutterHypothesis(prior=prior), tracks=tracks)


def complexity_probe(
    dl_cfg: DLConfig,
    n_values: Sequence[int],
    h_values: Sequence[int],
    passes: int = 3,
    seed: int = 0,
) -> ComplexityReport:
    """Counted association/update work per iteration over an (N, H) grid.

    H counts track hypotheses; the clutter hypothesis is always present on
    top. Each grid cell runs `passes` fixed-roster iterations (association
    pass + parameter updates, no lifecycle) with instrumented op counts; the
    report fits ops_per_iter against N*H through the origin. Wall time is
    informational only.
    """
    if len(n_values) < 3 or len(h_values) < 3:
        raise ConfigError("need at least three N and three H values")
    rows = []
    for n in n_values:
        for h in h_values:
            rng = np.random.default_rng(np.random.SeedSequence((seed, n, h)))
            batch = _probe_batch(int(n), rng)
            hs = _probe_roster(int(h), rng)
            counter = OpCounter()
            t0 = time.perf_counter()
            for _ in range(passes):
                f = e_step(batch, hs, counter=counter)
                m_step(hs, f, batch, dl_cfg, counter=counter)
            wall_ms = (time.perf_counter() - t0) * 1e3
            rows.append(ComplexityRow(
                n=int(n), h=int(h), iters=passes,
                ops_per_iter=counter.total() / passes,
                wall_ms=wall_ms,
            ))
    x = np.array([r.n * r.h for r in rows], dtype=float)
    y = np.array([r.ops_per_iter for r in rows])
    slope = float(np.dot(x, y) / np.dot(x, x))
    ss_res = float(np.sum((y - slope * x) ** 2))
    ss_tot = float(np.sum(y * y))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return ComplexityReport(rows=rows, slope=slope, r_squared=r_squared)


# ===================== CSV output =====================

ROC_FIELDS = ("clutter_per_scan", "threshold", "pd",
              "pfa_per_batch", "pfa_per_area", "trials")
COMPLEXITY_FIELDS = ("N", "H", "iters", "ops_per_iter", "wall_ms")


def write_roc_csv(points: Sequence[RocPoint], path, header_comment: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(ROC_FIELDS)
        for p in points:
            w.writerow([
                p.clutter_per_scan, repr(float(p.threshold)), repr(float(p.pd)),
                repr(float(p.pfa_per_batch)), repr(float(p.pfa_per_area)),
                p.trials,
            ])


def write_complexity_csv(report: ComplexityReport, path, header_comment: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(COMPLEXITY_FIELDS)
        for r in report.rows:
            w.writerow([r.n, r.h, r.iters, repr(float(r.ops_per_iter)),
                        repr(float(r.wall_ms))])
