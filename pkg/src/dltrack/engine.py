"""Vague-to-crisp mixture fitting over a measurement batch.

The engine alternates an association E-step with closed-form parameter
updates, starting from maximally vague tracks (sigmas spanning half the
measurement space) and letting them sharpen onto whatever coherent structure
the batch supports. Track lifecycle decisions (activation of reserve tracks,
elimination, pruning, spawning) run once per iteration after the updates.

Update equations (association weights f, track h, measurement n):

    r(h)    = <1>_h / N
    a_h     = <a>_h / <1>_h
    y:  [ <1>  <t> ] [y0]   [ <y> ]
        [ <t> <t²> ] [vy] = [ <yt>]
    x:  [ <1>  <t>        ] [x0]   [ <x>        ]
        [ <t>  <t²> + c<1>] [vx] = [ <xt> + c<D>]
    σ_s² = <(e_s)²>_h / <1>_h   (floored; doppler model value tied to vx)

where <q>_h = sum_n f(h|n) q(n) and c couples the x slope to the measured
dopplers (by default c = σ_x²/σ_d², the exact stationarity weight).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import lifecycle as _lifecycle
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    EmptySupportError,
)
from .likelihood import (
    batch_residuals,
    log_weighted_terms,
)
from .model import (
    Batch,
    ClutterHypothesis,
    HypothesisSet,
    TrackStatus,
    vague_track,
)

log = logging.getLogger("dltrack")

C_MODES = ("derived_xd", "paper_xy", "unity")


@dataclass
class DLConfig:
    """Knobs for one fitting run.

    activation/elimination thresholds default to 3/N and 1.5/N when left
    None. sigma_floor is per dimension in DIMS order and should sit at the
    sensor noise scale of the data source.
    """

    max_iterations: int = 200
    loglik_rel_tolerance: float = 1e-6
    sigma_floor: Tuple[float, float, float, float] = (1.0, 1.0, 0.02, 0.25)
    c_mode: str = "derived_xd"
    tie_sigma_x_d: bool = False
    dormant_count: int = 2
    activation_threshold: Optional[float] = None
    elimination_threshold: Optional[float] = None
    dormant_seed_prior: float = 0.02
    max_probe_failures: int = 6
    crisp_sigma_ratio: float = 3.0
    min_track_support: float = 2.5
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not (self.loglik_rel_tolerance > 0):
            raise ConfigError("loglik_rel_tolerance must be positive")
        floors = np.asarray(self.sigma_floor, dtype=float)
        if floors.shape != (4,) or not (floors > 0).all():
            raise ConfigError("sigma_floor must be four positive values")
        if self.c_mode not in C_MODES:
            raise ConfigError(f"c_mode must be one of {C_MODES}")
        if self.dormant_count < 1:
            raise ConfigError("dormant_count must be >= 1")
        for name in ("activation_threshold", "elimination_threshold"):
            v = getattr(self, name)
            if v is not None and not (0.0 < v < 1.0):
                raise ConfigError(f"{name} must lie in (0, 1)")
        if (
            self.activation_threshold is not None
            and self.elimination_threshold is not None
            and not (self.elimination_threshold < self.activation_threshold)
        ):
            raise ConfigError(
                "elimination_threshold must be below activation_threshold"
            )
        if not (0.0 < self.dormant_seed_prior < 1.0):
            raise ConfigError("dormant_seed_prior must lie in (0, 1)")
        if self.max_probe_failures < 0:
            raise ConfigError("max_probe_failures must be >= 0")
        if not (self.crisp_sigma_ratio >= 1.0):
            raise ConfigError("crisp_sigma_ratio must be >= 1")
        if self.min_track_support < 0:
            raise ConfigError("min_track_support must be >= 0")

    def floor_array(self) -> np.ndarray:
        return np.asarray(self.sigma_floor, dtype=float)

    def resolved_activation(self, n: int) -> float:
        return self.activation_threshold if self.activation_threshold is not None else 3.0 / n

    def resolved_elimination(self, n: int) -> float:
        return self.elimination_threshold if self.elimination_threshold is not None else 1.5 / n


class OpCounter:
    """Tally of per-point work. Keys: pdf_evals, mstep_ops."""

    def __init__(self):
        self.counts: Dict[str, int] = {}

    def add(self, key: str, amount: int) -> None:
        self.counts[key] = self.counts.get(key, 0) + int(amount)

    def total(self) -> int:
        return sum(self.counts.values())

    def snapshot(self) -> Dict[str, int]:
        return dict(self.counts)


# ===================== trace =====================


@dataclass
class IterationRecord:
    iteration: int
    loglik: float
    num_active: int
    num_dormant: int
    roster_changed: bool
    hypotheses: Dict[int, dict]


@dataclass
class IterationTrace:
    records: List[IterationRecord] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.records)

    def logliks(self) -> np.ndarray:
        return np.array([r.loglik for r in self.records])

    def roster_changes(self) -> np.ndarray:
        return np.array([r.roster_changed for r in self.records], dtype=bool)

    def to_rows(self) -> Tuple[List[str], List[dict]]:
        """Flatten to tabular rows (per-hypothesis columns, blank if absent)."""
        ids: List[int] = []
        for rec in self.records:
            for tid in rec.hypotheses:
                if tid not in ids:
                    ids.append(tid)
        ids.sort()
        fields = ["iteration", "loglik", "num_active", "num_dormant", "roster_changed"]
        for tid in ids:
            if tid == 0:
                fields.append("r_0")
                continue
            fields += [f"r_{tid}", f"status_{tid}",
                       f"sx_{tid}", f"sy_{tid}", f"sa_{tid}", f"sd_{tid}"]
        rows = []
        for rec in self.records:
            row = {
                "iteration": rec.iteration,
                "loglik": rec.loglik,
                "num_active": rec.num_active,
                "num_dormant": rec.num_dormant,
                "roster_changed": int(rec.roster_changed),
            }
            for tid, snap in rec.hypotheses.items():
                row[f"r_{tid}"] = snap["prior"]
                if tid != 0:
                    row[f"status_{tid}"] = snap["status"]
                    sx, sy, sa, sd = snap["sigma"]
                    row[f"sx_{tid}"] = sx
                    row[f"sy_{tid}"] = sy
                    row[f"sa_{tid}"] = sa
                    row[f"sd_{tid}"] = sd
            rows.append(row)
        return fields, rows


def _snapshot(hs: HypothesisSet) -> Dict[int, dict]:
    snap = {0: {"prior": hs.clutter.prior}}
    for h in hs.tracks:
        snap[h.track_id] = {
            "prior": h.prior,
            "status": h.status.value,
            "sigma": tuple(float(s) for s in h.sigma),
        }
    return snap


# ===================== initialization =====================


def init_hypotheses(batch_or_bounds, cfg: DLConfig) -> HypothesisSet:
    """Vague starting roster: clutter + 1 active track + dormant reserves.

    All tracks start at the measurement-space midpoints with sigmas equal to
    half the widths (floored), zero transverse velocity, and the doppler/vx
    pair at the doppler midpoint. Priors are uniform over all hypotheses.
    """
    bounds = getattr(batch_or_bounds, "bounds", batch_or_bounds)
    h_total = 2 + cfg.dormant_count
    prior = 1.0 / h_total
    tracks = [
        vague_track(bounds, cfg.floor_array(), track_id=1,
                    status=TrackStatus.ACTIVE, prior=prior)
    ]
    for k in range(cfg.dormant_count):
        tracks.append(
            vague_track(bounds, cfg.floor_array(), track_id=2 + k,
                        status=TrackStatus.DORMANT, prior=prior)
        )
    return HypothesisSet(clutter=ClutterHypothesis(prior=prior), tracks=tracks)


# ===================== E-step =====================


def _e_step_full(batch: Batch, hs: HypothesisSet, counter: Optional[OpCounter] = None):
    """Association weights plus the batch log-likelihood of the current
    parameters (both from one density pass).

    Returns (f, loglik, underflow_rows). Rows whose every weighted term
    vanished are assigned fully to clutter and counted.
    """
    w = log_weighted_terms(batch, hs, counter=counter)
    m = w.max(axis=1)
    dead = ~np.isfinite(m)
    n_dead = int(dead.sum())
    if n_dead:
        log.warning("e_step: %d measurement rows underflowed; assigned to clutter", n_dead)
        m = np.where(dead, 0.0, m)
    shifted = np.exp(w - m[:, None])
    norms = shifted.sum(axis=1)
    f = shifted / norms[:, None]
    if n_dead:
        f[dead] = 0.0
        f[dead, 0] = 1.0
    # per-row log mixture = shift + log(sum exp(shifted)); dead rows excluded
    clutter_term = np.log(hs.clutter.prior) if hs.clutter.prior > 0 else 0.0
    row_ll = m + np.log(norms)
    if n_dead:
        row_ll = np.where(dead, clutter_term, row_ll)
    return f, float(row_ll.sum()), n_dead


def e_step(batch: Batch, hs: HypothesisSet, counter: Optional[OpCounter] = None) -> np.ndarray:
    """(N, H) association weights f(h|n), rows summing to one."""
    f, _, _ = _e_step_full(batch, hs, counter=counter)
    return f


# ===================== M-step pieces =====================

_TINY_MASS = 1e-12


def weighted_moment(f_col: np.ndarray, values: np.ndarray) -> float:
    """Association-weighted sum of values over the batch."""
    return float(np.dot(f_col, values))


def update_priors(f: np.ndarray) -> np.ndarray:
    """New hypothesis priors: column masses over batch size."""
    return f.sum(axis=0) / f.shape[0]


def update_amplitude(f_col: np.ndarray, batch: Batch) -> float:
    """Weighted mean amplitude."""
    mass = f_col.sum()
    if mass <= _TINY_MASS:
        raise EmptySupportError("amplitude update with zero association mass")
    return float(np.dot(f_col, batch.a) / mass)


def _solve_2x2(m00, m01, m11, r0, r1, what: str) -> Tuple[float, float]:
    det = m00 * m11 - m01 * m01
    scale = max(abs(m00 * m11), m01 * m01, _TINY_MASS)
    if det <= 1e-12 * scale:
        raise DegenerateGeometryError(f"singular normal equations for {what}")
    return ((m11 * r0 - m01 * r1) / det, (m00 * r1 - m01 * r0) / det)


def update_y_motion(f_col: np.ndarray, batch: Batch) -> Tuple[float, float]:
    """Weighted straight-line fit of y against time: (y0, vy)."""
    s0 = f_col.sum()
    if s0 <= _TINY_MASS:
        raise EmptySupportError("y-motion update with zero association mass")
    st = np.dot(f_col, batch.t)
    stt = np.dot(f_col, batch.t * batch.t)
    sy = np.dot(f_col, batch.y)
    syt = np.dot(f_col, batch.y * batch.t)
    return _solve_2x2(s0, st, stt, sy, syt, "y motion")


def update_x_motion(f_col: np.ndarray, batch: Batch, c: float) -> Tuple[float, float]:
    """Weighted x-against-time fit with the doppler coupling term: (x0, vx).

    The measured dopplers enter the slope equation with weight c, because the
    model ties the doppler value to vx.
    """
    s0 = f_col.sum()
    if s0 <= _TINY_MASS:
        raise EmptySupportError("x-motion update with zero association mass")
    st = np.dot(f_col, batch.t)
    stt = np.dot(f_col, batch.t * batch.t)
    sx = np.dot(f_col, batch.x)
    sxt = np.dot(f_col, batch.x * batch.t)
    sd = np.dot(f_col, batch.d)
    return _solve_2x2(s0, st, stt + c * s0, sx, sxt + c * sd, "x motion")


def compute_c(track, cfg: DLConfig) -> float:
    """Doppler coupling weight for the x-motion update."""
    if cfg.c_mode == "derived_xd":
        return float(track.sigma[0] ** 2 / track.sigma[3] ** 2)
    if cfg.c_mode == "paper_xy":
        return float(track.sigma[0] ** 2 / track.sigma[1] ** 2)
    return 1.0


def update_sigmas(f_col: np.ndarray, batch: Batch, track, cfg: DLConfig) -> np.ndarray:
    """Per-dimension weighted RMS residual against the track's current
    parameters, optionally tying x and doppler, floored at cfg.sigma_floor."""
    mass = f_col.sum()
    if mass <= _TINY_MASS:
        raise EmptySupportError("sigma update with zero association mass")
    e = batch_residuals(batch, track)
    var = (f_col[:, None] * e * e).sum(axis=0) / mass
    if cfg.tie_sigma_x_d:
        shared = 0.5 * (var[0] + var[3])
        var[0] = shared
        var[3] = shared
    floors = cfg.floor_array()
    return np.sqrt(np.maximum(var, floors * floors))


def m_step(hs: HypothesisSet, f: np.ndarray, batch: Batch, cfg: DLConfig,
           counter: Optional[OpCounter] = None) -> None:
    """One full parameter update pass, in place.

    Priors update for every hypothesis; motion/amplitude/sigma only for
    active tracks (reserves keep their vague shape). Starved or degenerate
    updates keep the previous value — the lifecycle reaps such tracks.
    """
    pri = update_priors(f)
    if counter is not None:
        counter.add("prior_ops", f.size)
    hs.clutter = ClutterHypothesis(prior=float(pri[0]), track_id=hs.clutter.track_id)
    for j, trk in enumerate(hs.tracks, start=1):
        trk.prior = float(pri[j])
    n = batch.n
    for j, trk in enumerate(hs.tracks, start=1):
        if not trk.is_active:
            continue
        f_col = f[:, j]
        if f_col.sum() <= _TINY_MASS:
            continue
        c = compute_c(trk, cfg)
        try:
            a_new = update_amplitude(f_col, batch)
        except EmptySupportError:
            a_new = trk.a
        try:
            y0, vy = update_y_motion(f_col, batch)
        except DegenerateGeometryError:
            y0, vy = trk.y0, trk.vy
        try:
            x0, vx = update_x_motion(f_col, batch, c)
        except DegenerateGeometryError:
            x0, vx = trk.x0, trk.vx
        trk.a = a_new
        trk.y0, trk.vy = y0, vy
        trk.x0, trk.vx = x0, vx
        trk.d = trk.vx
        trk.sigma = update_sigmas(f_col, batch, trk, cfg)
        if counter is not None:
            counter.add("mstep_ops", 11 * n)


# ===================== run driver =====================


@dataclass
class DLResult:
    hypotheses: HypothesisSet
    association: np.ndarray
    trace: IterationTrace
    converged: bool
    iterations: int
    diagnostics: Dict[str, int] = field(default_factory=dict)


def run_dl(batch: Batch, cfg: DLConfig, counter: Optional[OpCounter] = None) -> DLResult:
    """Fit the mixture to a batch from a vague start.

    Stops when the relative log-likelihood increase between two consecutive
    iterations with an unchanged roster drops below cfg.loglik_rel_tolerance,
    or at max_iterations (flagged, not an error). The returned association
    matrix is recomputed against the final roster.
    """
    hs = init_hypotheses(batch.bounds, cfg)
    next_id = 2 + cfg.dormant_count
    trace = IterationTrace()
    activation = cfg.resolved_activation(batch.n)
    elimination = cfg.resolved_elimination(batch.n)
    if not elimination < activation:
        raise ConfigError(
            f"elimination threshold {elimination} not below activation {activation}"
        )

    probe_failures = 0
    locked_ids: set = set()
    seeded_pairs: set = set()
    probe_idle = False  # seeder came up empty; skip rescans until something moves
    underflows = 0
    roster_changed = True  # first row has no comparable predecessor
    ll_prev = None
    converged = False

    def make_probe_source(hs_now, f_now):
        # bound to the pre-prune roster so f columns stay aligned
        def source(track_id: int):
            hit = _lifecycle.seed_probe(
                hs_now, f_now, batch, cfg, track_id, exclude=seeded_pairs
            )
            if hit is None:
                return None
            probe, pair = hit
            seeded_pairs.add(pair)
            return probe
        return source

    for it in range(1, cfg.max_iterations + 1):
        f, ll, n_dead = _e_step_full(batch, hs, counter=counter)
        underflows += n_dead
        trace.records.append(IterationRecord(
            iteration=it, loglik=ll,
            num_active=len(hs.active_tracks()),
            num_dormant=len(hs.dormant_tracks()),
            roster_changed=roster_changed,
            hypotheses=_snapshot(hs),
        ))
        plateau = (
            ll_prev is not None
            and ll - ll_prev < cfg.loglik_rel_tolerance * abs(ll_prev)
        )
        if plateau and not roster_changed:
            converged = True
            break
        ll_prev = ll

        # crispness as of the association snapshot, so prune decisions below
        # judge tracks on mass they earned in that shape
        crisp_ids = {
            h.track_id for h in hs.active_tracks()
            if _lifecycle.is_crisp(h, cfg.floor_array(), cfg.crisp_sigma_ratio)
        }
        m_step(hs, f, batch, cfg, counter=counter)

        # pruning first: f columns are still aligned with the roster
        support = {
            h.track_id: float(f[:, j].sum())
            for j, h in enumerate(hs.tracks, start=1)
        }
        probe_source = make_probe_source(hs, f)
        hs, prune_events = _lifecycle.prune_duplicates(
            hs, f, batch, cfg, crisp_ids=crisp_ids)
        probe_failures += sum(
            1 for ev in prune_events if ev.kind == "support_pruned"
        )
        allow = probe_failures < cfg.max_probe_failures and not probe_idle
        hs, life_events, next_id = _lifecycle.lifecycle_step(
            hs, f, batch, cfg,
            activation_threshold=activation,
            elimination_threshold=elimination,
            next_track_id=next_id,
            allow_spawn=allow,
            probe_source=probe_source,
        )
        probe_failures += sum(1 for ev in life_events if ev.kind == "eliminated")
        if allow and not hs.dormant_tracks() and not any(
            ev.kind == "spawned" for ev in life_events
        ):
            probe_idle = True
        # Only a strong capture — crisp, and owning about a full trajectory's
        # worth of points — revives the spawn budget. Crisp blobs that barely
        # clear the support-prune bar are chance alignments, and letting them
        # reset the budget would keep the probe loop alive indefinitely.
        new_lock = False
        for h in hs.active_tracks():
            if h.track_id in locked_ids:
                continue
            if (
                _lifecycle.is_crisp(h, cfg.floor_array(), cfg.crisp_sigma_ratio)
                and support.get(h.track_id, 0.0) >= 2.0 * cfg.min_track_support
            ):
                locked_ids.add(h.track_id)
                probe_failures = 0
                new_lock = True
        roster_changed = bool(prune_events or life_events)
        if roster_changed or new_lock:
            probe_idle = False

    trace.converged = converged
    f_final, _, n_dead = _e_step_full(batch, hs, counter=counter)
    underflows += n_dead
    return DLResult(
        hypotheses=hs,
        association=f_final,
        trace=trace,
        converged=converged,
        iterations=trace.iterations,
        diagnostics={"underflow_rows": underflows, "probe_failures": probe_failures},
    )
