"""Roster management between fitting iterations, plus detection scoring.

Four concerns live here:

* ``seed_probe`` — propose a reserve track from the best-supported coherent
  pair of still-unexplained measurements, so new probes start where the
  data suggests a trajectory instead of restarting from total vagueness
  (a blind vague restart has no gradient toward a weak target and only
  rediscovers the clutter bulk).
* ``lifecycle_step`` — promote at most one reserve track whose prior has
  grown past the activation threshold, drop active tracks whose prior has
  collapsed, and (when allowed) replenish the reserve pool.
* ``prune_duplicates`` — merge crisp tracks that have locked onto the same
  trajectory and drop crisp tracks with too little associated mass.
* ``compute_llr`` / ``declare_detections`` — score tracks against the
  clutter-only explanation of their gated measurements.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Set, Tuple

import numpy as np

from .likelihood import batch_residuals, clutter_pdf, track_log_pdf
from .model import (
    Batch,
    HypothesisSet,
    MeasurementBounds,
    TrackHypothesis,
    TrackStatus,
    vague_track,
)

log = logging.getLogger("dltrack")

# A probe proposal must pick up unexplained measurements in at least this
# many distinct intermediate scans beyond its two anchors. Demanding most of
# the batch depth keeps the proposal rate for chance alignments of clutter
# near zero while real trajectories, present in every scan, sail through.
MIN_SEED_SUPPORT = 3

# Probes are born slightly wider than the sensor floors: wide enough to
# forgive the anchor-noise error in the seeded line, narrow enough that
# unrelated neighbours carry no weight and cannot inflate the fit away
# from its trajectory.
PROBE_SIGMA_SCALE = 1.5

# Pairs of measurement indices: the return type of the seed search.
SeedPair = Tuple[int, int]


@dataclass(frozen=True)
class LifecycleEvent:
    kind: str  # activated | eliminated | spawned | merged | support_pruned
    track_id: int
    detail: str = ""


def is_crisp(track: TrackHypothesis, sigma_floor: np.ndarray, ratio: float) -> bool:
    """A track is crisp once every sigma has shrunk to within ``ratio``
    times its floor — i.e. it stopped being a wide probe and describes
    point-like structure."""
    return bool((track.sigma < ratio * np.asarray(sigma_floor, dtype=float)).all())


# ===================== probe seeding =====================


def residual_weight(hs: HypothesisSet, f: np.ndarray, sigma_floor: np.ndarray,
                    crisp_sigma_ratio: float) -> np.ndarray:
    """Per-measurement mass not yet claimed by any tight track.

    "Tight" means every sigma within one notch above the crisp ratio, which
    covers locked tracks and freshly seeded probes but not wide searching
    tracks — a wide track soft-covers everything and would mask the very
    structure a new probe should look at.
    """
    floors = np.asarray(sigma_floor, dtype=float)
    out = np.ones(f.shape[0])
    for j, h in enumerate(hs.tracks, start=1):
        if (h.sigma <= (crisp_sigma_ratio + 1.0) * floors).all():
            out -= f[:, j]
    return np.clip(out, 0.0, 1.0)


def _score_pairs(batch: Batch, ia: np.ndarray, ib: np.ndarray, im: np.ndarray,
                 dt: float, floors: np.ndarray, d_cap: float):
    """All gate-consistent anchor pairs (ia x ib) with their mid-scan support.

    Returns (support, i_anchor, j_anchor, x0, y0, vx, vy, amp) as flat
    arrays over surviving pairs, or None when no pair passes the gates.
    The implied pair velocity must agree with both measured dopplers, the
    two amplitudes must be close, and speeds must stay physical. Support is
    the number of *distinct* intermediate scans holding a measurement within
    sensor-scale gates of the implied line — a real trajectory echoes in
    every scan, while chance alignments of clutter rarely span three.
    """
    ta = float(batch.t[ia[0]])
    vx_p = (batch.x[ib][None, :] - batch.x[ia][:, None]) / dt
    vy_p = (batch.y[ib][None, :] - batch.y[ia][:, None]) / dt
    gate_d = 3.0 * floors[3] + 6.0 * floors[0] / dt
    ok = np.abs(vx_p - batch.d[ia][:, None]) <= gate_d
    ok &= np.abs(vx_p - batch.d[ib][None, :]) <= gate_d
    ok &= np.abs(batch.a[ib][None, :] - batch.a[ia][:, None]) <= 4.0 * floors[2]
    ok &= (np.abs(vx_p) <= d_cap) & (np.abs(vy_p) <= d_cap)
    ka, kb = np.nonzero(ok)
    if ka.size == 0:
        return None
    vx = vx_p[ka, kb]
    vy = vy_p[ka, kb]
    x0 = batch.x[ia][ka] - vx * ta
    y0 = batch.y[ia][ka] - vy * ta
    amp = 0.5 * (batch.a[ia][ka] + batch.a[ib][kb])

    tm = batch.t[im]
    xm, ym = batch.x[im], batch.y[im]
    am, dm = batch.a[im], batch.d[im]
    # column groups of the mid block, one per scan, for distinct-scan counting
    scan_cols = [np.flatnonzero(batch.scan[im] == s) for s in np.unique(batch.scan[im])]
    support = np.zeros(ka.size, dtype=int)
    for lo in range(0, ka.size, 256):
        hi = min(lo + 256, ka.size)
        sl = slice(lo, hi)
        pred_x = x0[sl, None] + vx[sl, None] * tm[None, :]
        near = np.abs(xm[None, :] - pred_x) <= 3.5 * floors[0]
        pred_y = y0[sl, None] + vy[sl, None] * tm[None, :]
        near &= np.abs(ym[None, :] - pred_y) <= 3.5 * floors[1]
        near &= np.abs(am[None, :] - amp[sl, None]) <= 4.0 * floors[2]
        near &= np.abs(dm[None, :] - vx[sl, None]) <= 3.0 * floors[3]
        for cols in scan_cols:
            support[sl] += near[:, cols].any(axis=1)
    return support, ia[ka], ib[kb], x0, y0, vx, vy, amp


def seed_probe(
    hs: HypothesisSet,
    f: np.ndarray,
    batch: Batch,
    cfg,
    track_id: int,
    exclude: Optional[Set[SeedPair]] = None,
) -> Optional[Tuple[TrackHypothesis, SeedPair]]:
    """Best coherent two-point trajectory proposal from unexplained data.

    Anchors come from the two most separated scans that still hold
    unexplained measurements; the winning pair is the one whose implied
    constant-velocity line picks up the most unexplained mid-scan
    measurements (ties resolve by index order, so reruns are identical).
    Pairs listed in ``exclude`` — already probed and failed — are skipped.
    Returns (dormant probe, anchor index pair), or None when nothing in the
    residual looks like a trajectory.
    """
    floors = cfg.floor_array()
    resid = residual_weight(hs, f, floors, cfg.crisp_sigma_ratio)
    cand = resid > 0.5
    if int(cand.sum()) < MIN_SEED_SUPPORT + 2:
        return None
    scans = np.unique(batch.scan[cand])
    if scans.size < 3:
        return None
    times = {int(s): float(batch.t[batch.scan == s][0]) for s in np.unique(batch.scan)}
    pairs = [(int(sa), int(sb)) for i, sa in enumerate(scans) for sb in scans[i + 1:]]
    pairs.sort(key=lambda p: (-(times[p[1]] - times[p[0]]), p[0]))
    d_cap = float(max(abs(batch.bounds.d[0]), abs(batch.bounds.d[1])))
    exclude = exclude or set()

    all_scan_times = np.array([times[int(s)] for s in np.unique(batch.scan)])
    for sa, sb in pairs[:5]:
        ta, tb = times[sa], times[sb]
        # shorter anchor spans hold fewer intermediate scans, so the support
        # demand shrinks with them (but never below two corroborating scans)
        n_mid_scans = int(np.sum((all_scan_times > ta) & (all_scan_times < tb)))
        required = min(MIN_SEED_SUPPORT, max(2, n_mid_scans - 1))
        ia = np.flatnonzero(cand & (batch.scan == sa))
        ib = np.flatnonzero(cand & (batch.scan == sb))
        mid = cand & (batch.t > ta) & (batch.t < tb)
        im = np.flatnonzero(mid)
        if ia.size == 0 or ib.size == 0 or im.size < required:
            continue
        scored = _score_pairs(batch, ia, ib, im, tb - ta, floors, d_cap)
        if scored is None:
            continue
        support, gi, gj, x0, y0, vx, vy, amp = scored
        order = np.argsort(-support, kind="stable")
        for k in order:
            if support[k] < required:
                break
            pair = (int(gi[k]), int(gj[k]))
            if pair in exclude:
                continue
            probe = TrackHypothesis(
                track_id=track_id,
                x0=float(x0[k]), y0=float(y0[k]),
                vx=float(vx[k]), vy=float(vy[k]),
                a=float(amp[k]), d=float(vx[k]),
                sigma=PROBE_SIGMA_SCALE * floors,
                prior=0.0,
                status=TrackStatus.DORMANT,
            )
            log.debug("seed_probe: pair %s support %d vx %.2f", pair, support[k], vx[k])
            return probe, pair
    return None


# ===================== lifecycle =====================


def lifecycle_step(
    hs: HypothesisSet,
    f: np.ndarray,
    batch: Batch,
    cfg,
    *,
    activation_threshold: Optional[float] = None,
    elimination_threshold: Optional[float] = None,
    next_track_id: Optional[int] = None,
    allow_spawn: bool = True,
    probe_source: Optional[Callable[[int], Optional[TrackHypothesis]]] = None,
) -> Tuple[HypothesisSet, List[LifecycleEvent], int]:
    """One roster update: eliminate starved actives, activate at most one
    ripe reserve, optionally spawn a replacement reserve.

    Only one reserve activates per call even if several qualify — staggering
    them keeps simultaneously-born probes from converging to identical
    copies of each other. When the reserve pool is empty and spawning is
    allowed, ``probe_source(next_track_id)`` supplies the replacement (the
    fitting loop binds it to the data-driven seeder); without a source a
    fully vague reserve is spawned. A source returning None means the data
    offers nothing worth probing, and the pool is left empty. Returns (new
    roster, events, next unused id).
    """
    act = activation_threshold if activation_threshold is not None else cfg.resolved_activation(batch.n)
    elim = elimination_threshold if elimination_threshold is not None else cfg.resolved_elimination(batch.n)
    if next_track_id is None:
        next_track_id = max([hs.clutter.track_id] + hs.track_ids()) + 1
    out = hs.copy()
    events: List[LifecycleEvent] = []

    kept = []
    for h in out.tracks:
        if h.is_active and h.prior < elim:
            events.append(LifecycleEvent("eliminated", h.track_id,
                                         f"prior {h.prior:.3e} < {elim:.3e}"))
        else:
            kept.append(h)
    out.tracks = kept

    dormant = [h for h in out.tracks if h.is_dormant and h.prior > act]
    if dormant:
        ripe = max(dormant, key=lambda h: h.prior)
        ripe.status = TrackStatus.ACTIVE
        events.append(LifecycleEvent("activated", ripe.track_id,
                                     f"prior {ripe.prior:.3e} > {act:.3e}"))

    if not any(h.is_dormant for h in out.tracks) and allow_spawn:
        if probe_source is not None:
            fresh = probe_source(next_track_id)
        else:
            fresh = vague_track(batch.bounds, cfg.floor_array(),
                                track_id=next_track_id,
                                status=TrackStatus.DORMANT, prior=0.0)
        if fresh is not None:
            seed = cfg.dormant_seed_prior
            scale = 1.0 - seed
            out.clutter = type(out.clutter)(
                prior=out.clutter.prior * scale, track_id=out.clutter.track_id
            )
            for h in out.tracks:
                h.prior *= scale
            fresh.prior = seed
            out.tracks.append(fresh)
            events.append(LifecycleEvent("spawned", next_track_id))
            next_track_id += 1

    if any(ev.kind == "eliminated" for ev in events):
        out = out.renormalized()
    for ev in events:
        log.debug("lifecycle: %s track %d %s", ev.kind, ev.track_id, ev.detail)
    return out, events, next_track_id


# ===================== pruning =====================


def _same_trajectory(a: TrackHypothesis, b: TrackHypothesis,
                     t_lo: float, t_hi: float) -> bool:
    """True when two tracks agree within one combined sigma in every
    dimension, with position checked at both ends of the batch window so
    crossing trajectories that only touch mid-window stay distinct."""
    comb = np.sqrt(a.sigma ** 2 + b.sigma ** 2)
    for t in (t_lo, t_hi):
        if abs((a.x0 + a.vx * t) - (b.x0 + b.vx * t)) > comb[0]:
            return False
        if abs((a.y0 + a.vy * t) - (b.y0 + b.vy * t)) > comb[1]:
            return False
    return abs(a.a - b.a) <= comb[2] and abs(a.d - b.d) <= comb[3]


def prune_duplicates(
    hs: HypothesisSet, f: np.ndarray, batch: Batch, cfg,
    crisp_ids: Optional[set] = None,
) -> Tuple[HypothesisSet, List[LifecycleEvent]]:
    """Merge crisp duplicate tracks and drop crisp under-supported ones.

    Expects ``f`` column-aligned with the roster (clutter first). Merging
    keeps the higher-prior twin and hands it the victim's prior and support;
    afterwards crisp tracks whose total support falls below
    ``cfg.min_track_support`` points are removed. Vague (still-searching)
    tracks are never touched. Idempotent once the roster is clean.

    ``crisp_ids`` names the tracks that were crisp when ``f`` was computed;
    pass it when the parameters have been updated since, so a track is only
    judged on association mass it earned in its current shape. When omitted,
    crispness is read off the tracks as they stand.
    """
    floors = cfg.floor_array()
    events: List[LifecycleEvent] = []
    out = hs.copy()
    support = {
        h.track_id: float(f[:, j].sum()) for j, h in enumerate(hs.tracks, start=1)
    }
    times = batch.scan_times
    t_lo, t_hi = float(times[0]), float(times[-1])

    if crisp_ids is None:
        crisp_ids = {h.track_id for h in out.tracks
                     if is_crisp(h, floors, cfg.crisp_sigma_ratio)}
    crisp = [h for h in out.tracks
             if h.is_active and h.track_id in crisp_ids]
    crisp.sort(key=lambda h: (-h.prior, h.track_id))
    removed: set = set()
    for i, survivor in enumerate(crisp):
        if survivor.track_id in removed:
            continue
        for other in crisp[i + 1:]:
            if other.track_id in removed:
                continue
            if _same_trajectory(survivor, other, t_lo, t_hi):
                survivor.prior += other.prior
                support[survivor.track_id] += support[other.track_id]
                removed.add(other.track_id)
                events.append(LifecycleEvent(
                    "merged", other.track_id, f"into {survivor.track_id}"))
    out.tracks = [h for h in out.tracks if h.track_id not in removed]

    starved: set = set()
    for h in out.tracks:
        if (h.is_active and h.track_id in crisp_ids
                and support[h.track_id] < cfg.min_track_support):
            starved.add(h.track_id)
            events.append(LifecycleEvent(
                "support_pruned", h.track_id,
                f"support {support[h.track_id]:.2f} < {cfg.min_track_support}"))
    if starved:
        out.tracks = [h for h in out.tracks if h.track_id not in starved]
        out = out.renormalized()
    for ev in events:
        log.debug("prune: %s track %d %s", ev.kind, ev.track_id, ev.detail)
    return out, events


# ===================== detection =====================


def compute_llr(track: TrackHypothesis, batch: Batch,
                bounds: Optional[MeasurementBounds] = None
                ) -> Tuple[float, np.ndarray]:
    """Log-likelihood ratio of a track against the clutter explanation.

    Measurements within two sigma of the track prediction in every
    dimension form the gate; the LLR sums, over the gate, the track's log
    density minus the uniform clutter log density. Returns (llr, gate row
    indices). An empty gate gives llr 0.0.
    """
    if bounds is None:
        bounds = batch.bounds
    e = batch_residuals(batch, track)
    inside = (np.abs(e) <= 2.0 * track.sigma).all(axis=1)
    gate = np.flatnonzero(inside)
    if gate.size == 0:
        return 0.0, gate
    log_c = math.log(clutter_pdf(bounds))
    lp = track_log_pdf(e[gate], track)
    return float(np.sum(lp - log_c)), gate


@dataclass(frozen=True)
class DetectionRow:
    track_id: int
    llr: float
    gate_size: int
    detected: bool
    x0: float
    y0: float
    vx: float
    vy: float
    a: float
    d: float


REPORT_FIELDS = ("track_id", "llr", "gate_size", "detected",
                 "x0", "y0", "vx", "vy", "a", "d")


@dataclass
class DetectionReport:
    threshold: float
    rows: List[DetectionRow] = field(default_factory=list)

    def detected(self) -> List[DetectionRow]:
        return [r for r in self.rows if r.detected]

    def to_rows(self) -> Tuple[Tuple[str, ...], List[dict]]:
        out = []
        for r in self.rows:
            out.append({
                "track_id": r.track_id, "llr": r.llr,
                "gate_size": r.gate_size, "detected": int(r.detected),
                "x0": r.x0, "y0": r.y0, "vx": r.vx, "vy": r.vy,
                "a": r.a, "d": r.d,
            })
        return REPORT_FIELDS, out


def detection_candidates(hs: HypothesisSet, cfg) -> List[TrackHypothesis]:
    """Active tracks that finished their vague-to-crisp descent.

    A converged, fitted track has sigmas at the sensor-noise scale; an
    active track still carrying wide sigmas is an unfinished (or failed)
    probe whose LLR measures bulk coverage, not a trajectory, so the
    fitting pipelines score only the crisp subset.
    """
    floors = cfg.floor_array()
    return [h for h in hs.active_tracks()
            if is_crisp(h, floors, cfg.crisp_sigma_ratio)]


def declare_detections(
    hs: HypothesisSet, batch: Batch, threshold: float,
    candidates: Optional[List[TrackHypothesis]] = None,
) -> Tuple[List[TrackHypothesis], DetectionReport]:
    """Score every active track; those with LLR above the threshold are
    detections. Both the detection list and the report rows come back
    sorted by LLR, strongest first. ``candidates`` restricts scoring to a
    subset of the actives (the pipelines pass the crisp ones)."""
    scored = []
    for h in (hs.active_tracks() if candidates is None else candidates):
        llr, gate = compute_llr(h, batch)
        scored.append((llr, gate.size, h))
    scored.sort(key=lambda item: (-item[0], item[2].track_id))
    report = DetectionReport(threshold=threshold)
    detections = []
    for llr, gate_size, h in scored:
        hit = llr > threshold
        report.rows.append(DetectionRow(
            track_id=h.track_id, llr=llr, gate_size=gate_size, detected=hit,
            x0=h.x0, y0=h.y0, vx=h.vx, vy=h.vy, a=h.a, d=h.d,
        ))
        if hit:
            detections.append(h)
    return detections, report
