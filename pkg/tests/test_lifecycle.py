"""Roster lifecycle: activation, elimination, probes, pruning, detection."""

import math

import numpy as np
import pytest

from dltrack.engine import DLConfig
from dltrack.lifecycle import (
    PROBE_SIGMA_SCALE,
    compute_llr,
    declare_detections,
    detection_candidates,
    is_crisp,
    lifecycle_step,
    prune_duplicates,
    residual_weight,
    seed_probe,
)
from dltrack.model import (
    ClutterHypothesis,
    HypothesisSet,
    MeasurementBounds,
    TrackHypothesis,
    TrackStatus,
    batch_from_arrays,
)

BOUNDS = MeasurementBounds(x=(0, 200), y=(0, 200), a=(0, 1), d=(-5, 5))
FLOORS = np.array([1.0, 1.0, 0.03, 0.5])


def make_track(tid, prior, status=TrackStatus.ACTIVE, sigma=None, **kw):
    p = dict(x0=50.0, y0=50.0, vx=1.0, vy=0.0, a=0.5)
    p.update(kw)
    return TrackHypothesis(
        track_id=tid, x0=p["x0"], y0=p["y0"], vx=p["vx"], vy=p["vy"],
        a=p["a"], d=p["vx"],
        sigma=np.array(sigma if sigma is not None else [2.0, 2.0, 0.05, 0.8]),
        prior=prior, status=status,
    )


def uniform_batch(n=100, n_scans=5, seed=0):
    rng = np.random.default_rng(seed)
    per = n // n_scans
    scan = np.repeat(np.arange(n_scans), per)
    return batch_from_arrays(
        scan=scan, t=scan * 4.0,
        x=rng.uniform(0, 200, n), y=rng.uniform(0, 200, n),
        a=rng.uniform(0, 1, n), d=rng.uniform(-5, 5, n), bounds=BOUNDS,
    )


def flat_f(n, n_hyp):
    return np.full((n, n_hyp), 1.0 / n_hyp)


# ----------------------------------------------------------- activation


def test_quiet_reserve_stays_dormant():
    # activation default is 3/N = 0.03 at N=100; a 0.02 reserve is not ripe
    hs = HypothesisSet(
        clutter=ClutterHypothesis(prior=0.50),
        tracks=[make_track(1, 0.48),
                make_track(2, 0.02, status=TrackStatus.DORMANT)],
    )
    b = uniform_batch(100)
    out, events, _ = lifecycle_step(hs, flat_f(100, 3), b, DLConfig())
    assert events == []
    assert out.dormant_tracks()[0].prior == 0.02


def test_grown_reserve_activates():
    hs = HypothesisSet(
        clutter=ClutterHypothesis(prior=0.50),
        tracks=[make_track(1, 0.45),
                make_track(2, 0.05, status=TrackStatus.DORMANT)],
    )
    b = uniform_batch(100)
    out, events, _ = lifecycle_step(hs, flat_f(100, 3), b, DLConfig(),
                                    allow_spawn=False)
    assert [ev.kind for ev in events] == ["activated"]
    assert events[0].track_id == 2
    assert len(out.active_tracks()) == 2
    assert out.dormant_tracks() == []


def test_only_the_ripest_reserve_activates():
    hs = HypothesisSet(
        clutter=ClutterHypothesis(prior=0.80),
        tracks=[make_track(1, 0.06, status=TrackStatus.DORMANT),
                make_track(2, 0.14, status=TrackStatus.DORMANT)],
    )
    b = uniform_batch(100)
    out, events, _ = lifecycle_step(hs, flat_f(100, 3), b, DLConfig(),
                                    allow_spawn=False)
    assert [ev.track_id for ev in events if ev.kind == "activated"] == [2]
    assert [h.track_id for h in out.dormant_tracks()] == [1]


def test_starved_active_is_eliminated_and_mass_renormalizes():
    # elimination default is 1.5/N = 0.015 at N=100
    hs = HypothesisSet(
        clutter=ClutterHypothesis(prior=0.799),
        tracks=[make_track(1, 0.001),
                make_track(2, 0.2, status=TrackStatus.DORMANT)],
    )
    b = uniform_batch(100)
    out, events, _ = lifecycle_step(hs, flat_f(100, 3), b, DLConfig(),
                                    allow_spawn=False)
    kinds = [ev.kind for ev in events]
    assert "eliminated" in kinds
    assert 1 not in out.track_ids()
    assert out.priors().sum() == pytest.approx(1.0, abs=1e-12)


def test_spawn_refills_an_empty_reserve_pool():
    hs = HypothesisSet(clutter=ClutterHypothesis(prior=0.6),
                       tracks=[make_track(1, 0.4)])
    b = uniform_batch(100)
    cfg = DLConfig()
    out, events, next_id = lifecycle_step(hs, flat_f(100, 2), b, cfg,
                                          next_track_id=9)
    assert [ev.kind for ev in events] == ["spawned"]
    assert next_id == 10
    fresh = out.dormant_tracks()[0]
    assert fresh.track_id == 9
    assert fresh.prior == pytest.approx(cfg.dormant_seed_prior)
    assert out.priors().sum() == pytest.approx(1.0, abs=1e-12)


def test_spawn_respects_the_probe_source_verdict():
    hs = HypothesisSet(clutter=ClutterHypothesis(prior=0.6),
                       tracks=[make_track(1, 0.4)])
    b = uniform_batch(100)
    out, events, _ = lifecycle_step(hs, flat_f(100, 2), b, DLConfig(),
                                    probe_source=lambda tid: None)
    assert events == []
    assert out.dormant_tracks() == []


def test_spawn_can_be_disabled():
    hs = HypothesisSet(clutter=ClutterHypothesis(prior=0.6),
                       tracks=[make_track(1, 0.4)])
    b = uniform_batch(100)
    out, events, _ = lifecycle_step(hs, flat_f(100, 2), b, DLConfig(),
                                    allow_spawn=False)
    assert events == []
    assert out.dormant_tracks() == []


# ----------------------------------------------------------- crispness


def test_crisp_means_every_sigma_near_its_floor():
    ratio = 3.0
    t1 = make_track(1, 0.5, sigma=FLOORS * 2.9)
    assert is_crisp(t1, FLOORS, ratio)
    t2 = make_track(2, 0.5, sigma=FLOORS * 3.0)
    assert not is_crisp(t2, FLOORS, ratio)  # boundary is exclusive
    sig = FLOORS * 2.0
    sig[1] = FLOORS[1] * 5.0  # one wide dimension spoils it
    t3 = make_track(3, 0.5, sigma=sig)
    assert not is_crisp(t3, FLOORS, ratio)


def test_residual_weight_removes_tight_track_claims():
    tight = make_track(1, 0.5, sigma=FLOORS * 1.2)
    wide = make_track(2, 0.3, sigma=FLOORS * 50.0)
    hs = HypothesisSet(clutter=ClutterHypothesis(prior=0.2),
                       tracks=[tight, wide])
    f = np.array([
        [0.0, 1.0, 0.0],   # fully owned by the tight track
        [0.2, 0.5, 0.3],
        [0.3, 0.0, 0.7],   # wide-track mass is not subtracted
    ])
    w = residual_weight(hs, f, FLOORS, crisp_sigma_ratio=3.0)
    np.testing.assert_allclose(w, [0.0, 0.5, 1.0])
    assert (w >= 0).all() and (w <= 1).all()


# ----------------------------------------------------------- probe seeding


def trajectory_batch(seed=12):
    """Five scans: six clutter points each plus one planted target
    (x0=40, y0=60, vx=2.5, vy=-1, a=0.7)."""
    rng = np.random.default_rng(seed)
    rows = []
    for s in range(5):
        ts = s * 4.0
        for _ in range(6):
            rows.append((s, ts, rng.uniform(0, 200), rng.uniform(0, 200),
                         rng.uniform(0, 1), rng.uniform(-5, 5)))
        rows.append((s, ts,
                     40 + 2.5 * ts + rng.normal(0, 0.5),
                     60 - 1.0 * ts + rng.normal(0, 0.5),
                     0.7 + rng.normal(0, 0.02),
                     2.5 + rng.normal(0, 0.2)))
    rows = np.array(rows)
    return batch_from_arrays(
        scan=rows[:, 0].astype(int), t=rows[:, 1],
        x=np.clip(rows[:, 2], 0, 200), y=np.clip(rows[:, 3], 0, 200),
        a=np.clip(rows[:, 4], 0, 1), d=np.clip(rows[:, 5], -5, 5),
        bounds=BOUNDS,
    )


def clutter_only_hypotheses(n):
    hs = HypothesisSet(clutter=ClutterHypothesis(prior=1.0), tracks=[])
    return hs, np.ones((n, 1))


def test_seed_probe_lands_on_the_planted_trajectory():
    b = trajectory_batch()
    hs, f = clutter_only_hypotheses(b.n)
    cfg = DLConfig(sigma_floor=tuple(FLOORS))
    probe, pair = seed_probe(hs, f, b, cfg, track_id=7)
    assert probe.track_id == 7
    assert probe.status is TrackStatus.DORMANT
    np.testing.assert_allclose(probe.sigma, PROBE_SIGMA_SCALE * FLOORS)
    assert probe.x0 == pytest.approx(40.0, abs=3.0)
    assert probe.y0 == pytest.approx(60.0, abs=3.0)
    assert probe.vx == pytest.approx(2.5, abs=0.3)
    assert probe.vy == pytest.approx(-1.0, abs=0.3)
    assert probe.a == pytest.approx(0.7, abs=0.1)
    assert probe.d == probe.vx


def test_seed_probe_is_deterministic_and_honours_exclusions():
    b = trajectory_batch()
    hs, f = clutter_only_hypotheses(b.n)
    cfg = DLConfig(sigma_floor=tuple(FLOORS))
    _, pair1 = seed_probe(hs, f, b, cfg, track_id=7)
    _, pair2 = seed_probe(hs, f, b, cfg, track_id=7)
    assert pair1 == pair2
    skipped = seed_probe(hs, f, b, cfg, track_id=7, exclude={pair1})
    assert skipped is None or skipped[1] != pair1


def test_seed_probe_declines_pure_noise():
    b = uniform_batch(n=25, n_scans=5, seed=13)
    hs, f = clutter_only_hypotheses(b.n)
    cfg = DLConfig(sigma_floor=tuple(FLOORS))
    assert seed_probe(hs, f, b, cfg, track_id=7) is None


# ----------------------------------------------------------- pruning


def crisp_pair_hypotheses(offset=0.0, support_each=5.0, n=20):
    """Two crisp actives on (almost) the same line, plus the f that gives
    each of them `support_each` points of mass."""
    a = make_track(1, 0.3, sigma=FLOORS * 1.5)
    btrk = make_track(2, 0.25, sigma=FLOORS * 1.5, x0=50.0 + offset)
    hs = HypothesisSet(clutter=ClutterHypothesis(prior=0.45), tracks=[a, btrk])
    f = np.zeros((n, 3))
    f[:, 1] = support_each / n
    f[:, 2] = support_each / n
    f[:, 0] = 1.0 - f[:, 1] - f[:, 2]
    return hs, f


def test_prune_merges_identical_tracks():
    hs, f = crisp_pair_hypotheses(offset=0.0)
    b = uniform_batch(20, n_scans=2)
    cfg = DLConfig(sigma_floor=tuple(FLOORS))
    out, events = prune_duplicates(hs, f, b, cfg)
    assert [ev.kind for ev in events] == ["merged"]
    assert [h.track_id for h in out.tracks] == [1]  # higher prior wins
    assert out.tracks[0].prior == pytest.approx(0.55)


def test_prune_keeps_well_separated_tracks():
    hs, f = crisp_pair_hypotheses(offset=20.0)  # >5 combined sigma apart
    b = uniform_batch(20, n_scans=2)
    out, events = prune_duplicates(hs, f, b, DLConfig(sigma_floor=tuple(FLOORS)))
    assert events == []
    assert len(out.tracks) == 2


def test_prune_drops_crisp_track_with_thin_support():
    a = make_track(1, 0.2, sigma=FLOORS * 1.5)
    hs = HypothesisSet(clutter=ClutterHypothesis(prior=0.8), tracks=[a])
    n = 20
    f = np.zeros((n, 2))
    f[:, 1] = 2.0 / n          # two points' worth, below the 2.5 default
    f[:, 0] = 1.0 - f[:, 1]
    b = uniform_batch(n, n_scans=2)
    out, events = prune_duplicates(hs, f, b, DLConfig(sigma_floor=tuple(FLOORS)))
    assert [ev.kind for ev in events] == ["support_pruned"]
    assert out.tracks == []
    assert out.priors().sum() == pytest.approx(1.0, abs=1e-12)


def test_prune_never_touches_vague_tracks():
    a = make_track(1, 0.3, sigma=FLOORS * 40)
    btrk = make_track(2, 0.3, sigma=FLOORS * 40)
    hs = HypothesisSet(clutter=ClutterHypothesis(prior=0.4), tracks=[a, btrk])
    f = flat_f(20, 3)
    b = uniform_batch(20, n_scans=2)
    out, events = prune_duplicates(hs, f, b, DLConfig(sigma_floor=tuple(FLOORS)))
    assert events == []
    assert len(out.tracks) == 2


def test_prune_is_idempotent():
    hs, f = crisp_pair_hypotheses(offset=0.0)
    b = uniform_batch(20, n_scans=2)
    cfg = DLConfig(sigma_floor=tuple(FLOORS))
    once, ev1 = prune_duplicates(hs, f, b, cfg)
    assert ev1
    f2 = f.copy()
    f2[:, 1] += f2[:, 2]  # survivor inherits the victim's column
    f2 = f2[:, :2]
    twice, ev2 = prune_duplicates(once, f2, b, cfg)
    assert ev2 == []
    assert [h.track_id for h in twice.tracks] == [h.track_id for h in once.tracks]


def test_prune_snapshot_crispness_protects_fresh_captures():
    """A track that sharpened only in the latest update is judged by the
    crispness it had when its association was computed — stale vague-era
    support must not kill the capture."""
    a = make_track(1, 0.5, sigma=FLOORS * 1.2)
    hs = HypothesisSet(clutter=ClutterHypothesis(prior=0.5), tracks=[a])
    n = 20
    f = np.zeros((n, 2))
    f[:, 1] = 1.2 / n  # stale support, below min_track_support
    f[:, 0] = 1.0 - f[:, 1]
    b = uniform_batch(n, n_scans=2)
    cfg = DLConfig(sigma_floor=tuple(FLOORS))
    out, events = prune_duplicates(hs, f, b, cfg, crisp_ids=set())
    assert events == []
    assert len(out.tracks) == 1
    # same call without the snapshot treats the track as crisp now
    out2, events2 = prune_duplicates(hs, f, b, cfg)
    assert [ev.kind for ev in events2] == ["support_pruned"]
    assert out2.tracks == []


# ----------------------------------------------------------- LLR / declare


def density_matched_track(bounds, efold=0.0):
    """Track whose peak density is exp(efold) times the clutter density."""
    volume = 1.0
    for lo, hi in (bounds.x, bounds.y, bounds.a, bounds.d):
        volume *= hi - lo
    prod_sigma = volume * (2 * math.pi) ** -2 * math.exp(-efold)
    sig = prod_sigma ** 0.25
    return TrackHypothesis(track_id=1, x0=5.0, y0=5.0, vx=0.0, vy=0.0,
                           a=0.5, d=0.0, sigma=np.full(4, sig), prior=0.5)


def test_llr_zero_when_track_matches_clutter_density():
    bounds = MeasurementBounds(x=(0, 10), y=(0, 10), a=(0, 1), d=(-8, 8))
    trk = density_matched_track(bounds)
    b = batch_from_arrays(scan=np.array([0]), t=np.array([0.0]),
                          x=np.array([5.0]), y=np.array([5.0]),
                          a=np.array([0.5]), d=np.array([0.0]), bounds=bounds)
    llr, gate = compute_llr(trk, b)
    assert gate.size == 1
    assert llr == pytest.approx(0.0, abs=1e-12)


def test_llr_counts_log_density_advantage():
    bounds = MeasurementBounds(x=(0, 10), y=(0, 10), a=(0, 1), d=(-8, 8))
    trk = density_matched_track(bounds, efold=2.0)
    b = batch_from_arrays(scan=np.array([0]), t=np.array([0.0]),
                          x=np.array([5.0]), y=np.array([5.0]),
                          a=np.array([0.5]), d=np.array([0.0]), bounds=bounds)
    llr, gate = compute_llr(trk, b)
    assert gate.size == 1
    assert llr == pytest.approx(2.0, abs=1e-12)


def test_llr_empty_gate_scores_zero():
    trk = make_track(1, 0.5, sigma=FLOORS, x0=190.0, y0=190.0)
    b = batch_from_arrays(scan=np.array([0]), t=np.array([0.0]),
                          x=np.array([5.0]), y=np.array([5.0]),
                          a=np.array([0.5]), d=np.array([0.0]), bounds=BOUNDS)
    llr, gate = compute_llr(trk, b)
    assert llr == 0.0
    assert gate.size == 0


def test_llr_gate_survives_measurement_reordering():
    rng = np.random.default_rng(21)
    n = 12
    x = rng.uniform(40, 60, n)
    y = rng.uniform(40, 60, n)
    a = rng.uniform(0.3, 0.7, n)
    d = rng.uniform(-1, 3, n)
    trk = make_track(1, 0.5, sigma=np.array([4.0, 4.0, 0.2, 2.0]))
    b1 = batch_from_arrays(scan=np.zeros(n, dtype=int), t=np.zeros(n),
                           x=x, y=y, a=a, d=d, bounds=BOUNDS)
    perm = rng.permutation(n)
    b2 = batch_from_arrays(scan=np.zeros(n, dtype=int), t=np.zeros(n),
                           x=x[perm], y=y[perm], a=a[perm], d=d[perm],
                           bounds=BOUNDS)
    llr1, gate1 = compute_llr(trk, b1)
    llr2, gate2 = compute_llr(trk, b2)
    assert llr1 == pytest.approx(llr2, rel=1e-12)
    set1 = {(x[i], y[i], a[i], d[i]) for i in gate1}
    set2 = {(b2.x[i], b2.y[i], b2.a[i], b2.d[i]) for i in gate2}
    assert set1 == set2


def scored_roster():
    bounds = MeasurementBounds(x=(0, 10), y=(0, 10), a=(0, 1), d=(-8, 8))
    strong = density_matched_track(bounds, efold=3.0)
    weak = density_matched_track(bounds, efold=1.0)
    weak.track_id = 2
    strong.prior = 0.3
    weak.prior = 0.3
    hs = HypothesisSet(clutter=ClutterHypothesis(prior=0.4),
                       tracks=[strong, weak])
    b = batch_from_arrays(scan=np.array([0]), t=np.array([0.0]),
                          x=np.array([5.0]), y=np.array([5.0]),
                          a=np.array([0.5]), d=np.array([0.0]), bounds=bounds)
    return hs, b


def test_declare_thresholds_sweep_from_all_to_none():
    hs, b = scored_roster()
    dets, report = declare_detections(hs, b, float("-inf"))
    assert [h.track_id for h in dets] == [1, 2]  # sorted strongest first
    assert [r.llr for r in report.rows] == sorted(
        (r.llr for r in report.rows), reverse=True)
    dets_hi, report_hi = declare_detections(hs, b, float("inf"))
    assert dets_hi == []
    assert report_hi.detected() == []
    assert len(report_hi.rows) == 2  # still scored, just not declared


def test_declare_is_monotone_in_the_threshold():
    hs, b = scored_roster()
    previous = None
    for thr in (-5.0, 0.5, 1.5, 2.5, 3.5):
        dets, _ = declare_detections(hs, b, thr)
        ids = {h.track_id for h in dets}
        if previous is not None:
            assert ids <= previous
        previous = ids


def test_declare_respects_candidate_restriction():
    hs, b = scored_roster()
    only_weak = [hs.tracks[1]]
    dets, report = declare_detections(hs, b, float("-inf"),
                                      candidates=only_weak)
    assert [h.track_id for h in dets] == [2]
    assert len(report.rows) == 1


def test_detection_candidates_are_the_crisp_actives():
    cfg = DLConfig(sigma_floor=tuple(FLOORS))
    crisp = make_track(1, 0.3, sigma=FLOORS * 1.5)
    wide = make_track(2, 0.3, sigma=FLOORS * 10)
    resting = make_track(3, 0.2, status=TrackStatus.DORMANT,
                         sigma=FLOORS * 1.5)
    hs = HypothesisSet(clutter=ClutterHypothesis(prior=0.2),
                       tracks=[crisp, wide, resting])
    assert [h.track_id for h in detection_candidates(hs, cfg)] == [1]
