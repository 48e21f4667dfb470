"""Truth matching, detection-rate sweeps, and cost-scaling probes."""

import csv
import math

import numpy as np
import pytest

from dltrack.engine import DLConfig
from dltrack.errors import ConfigError
from dltrack.evaluation import (
    COMPLEXITY_FIELDS,
    ROC_FIELDS,
    MatchCriteria,
    complexity_probe,
    default_match_criteria,
    match_tracks,
    roc_curve,
    write_complexity_csv,
    write_roc_csv,
)
from dltrack.lifecycle import DetectionRow
from dltrack.scenario import (
    GroundTruth,
    TargetSpec,
    single_target_scenario,
    three_target_scenario,
)


def det(track_id, llr, x0=100.0, y0=100.0, vx=2.0, vy=1.0, a=0.6):
    return DetectionRow(track_id=track_id, llr=llr, gate_size=8,
                        detected=True, x0=x0, y0=y0, vx=vx, vy=vy, a=a, d=vx)


def truth_with(*targets):
    return GroundTruth(targets=list(targets),
                       measurement_target=np.empty(0, dtype=int))


CRIT = MatchCriteria(position_gate=4.0, velocity_gate=0.5, t_mid=0.0)
TGT = TargetSpec(x0=100.0, y0=100.0, vx=2.0, vy=1.0, a_mean=0.6)


# ----------------------------------------------------------- matching


def test_exact_detection_matches_its_target():
    res = match_tracks([det(1, 10.0)], truth_with(TGT), CRIT)
    assert res.pairs == [(1, 0)]
    assert res.unmatched_detections == []
    assert res.unmatched_targets == []


def test_detection_ten_gates_away_is_false():
    far = det(1, 10.0, x0=100.0 + 10 * CRIT.position_gate)
    res = match_tracks([far], truth_with(TGT), CRIT)
    assert res.pairs == []
    assert res.unmatched_detections == [1]
    assert res.unmatched_targets == [0]


def test_velocity_gate_rejects_a_wrong_heading():
    res = match_tracks([det(1, 10.0, vx=2.0 + 0.6)], truth_with(TGT), CRIT)
    assert res.pairs == []
    assert res.unmatched_detections == [1]


def test_stronger_llr_claims_a_contested_target():
    near_a = det(1, 5.0, x0=101.0)
    near_b = det(2, 9.0, x0=99.0)
    res = match_tracks([near_a, near_b], truth_with(TGT), CRIT)
    assert res.pairs == [(2, 0)]
    assert res.unmatched_detections == [1]


def test_matching_is_one_to_one():
    t2 = TargetSpec(x0=101.5, y0=100.0, vx=2.0, vy=1.0, a_mean=0.6)
    res = match_tracks([det(1, 9.0), det(2, 5.0, x0=100.5)],
                       truth_with(TGT, t2), CRIT)
    assert len(res.pairs) == 2
    assert {p[1] for p in res.pairs} == {0, 1}


def test_matching_ignores_input_order():
    rows = [det(1, 5.0, x0=101.0), det(2, 9.0, x0=99.0), det(3, 1.0, x0=130.0)]
    res_fwd = match_tracks(rows, truth_with(TGT), CRIT)
    res_rev = match_tracks(rows[::-1], truth_with(TGT), CRIT)
    assert res_fwd.pairs == res_rev.pairs
    assert sorted(res_fwd.unmatched_detections) == sorted(res_rev.unmatched_detections)


def test_position_is_compared_mid_batch():
    crit = MatchCriteria(position_gate=4.0, velocity_gate=10.0, t_mid=10.0)
    # starts 12 away but converges onto the target's mid-batch position
    drifting = det(1, 3.0, x0=100.0 - 12.0, vx=2.0 + 1.2)
    assert match_tracks([drifting], truth_with(TGT), crit).pairs == [(1, 0)]
    assert match_tracks([drifting], truth_with(TGT), CRIT).pairs == []


def test_amplitude_gate_is_optional_but_binding():
    dim = det(1, 5.0, a=0.2)
    assert match_tracks([dim], truth_with(TGT), CRIT).pairs == [(1, 0)]
    strict = MatchCriteria(position_gate=4.0, velocity_gate=0.5,
                           amplitude_gate=0.1)
    assert match_tracks([dim], truth_with(TGT), strict).pairs == []


def test_default_criteria_scale_with_the_scenario():
    crit = default_match_criteria(single_target_scenario())
    assert crit.position_gate == pytest.approx(4.0)       # sensor sigma 1.0
    assert crit.velocity_gate == pytest.approx(4.0 / 35.0)  # over 7 revisits
    assert crit.t_mid == pytest.approx(17.5)
    crit3 = default_match_criteria(three_target_scenario())
    assert crit3.position_gate == pytest.approx(8.0)
    assert crit3.t_mid == pytest.approx(25.0)


def test_criteria_reject_non_positive_gates():
    with pytest.raises(ConfigError):
        MatchCriteria(position_gate=0.0, velocity_gate=0.5)
    with pytest.raises(ConfigError):
        MatchCriteria(position_gate=4.0, velocity_gate=0.5, amplitude_gate=0.0)


def test_match_result_lookup_helper():
    res = match_tracks([det(7, 10.0)], truth_with(TGT), CRIT)
    assert res.target_for_track(7) == 0
    assert res.target_for_track(99) is None


# ----------------------------------------------------------- detection sweeps

DL = DLConfig(sigma_floor=(1.0, 1.0, 0.03, 0.5))


def test_roc_sweep_spans_all_to_nothing():
    sc = single_target_scenario(clutter_per_scan=50)
    pts = roc_curve(sc, DL, thresholds=[float("-inf"), float("inf")],
                    trials=3, base_seed=5)
    assert pts[0].threshold == -math.inf
    assert pts[0].pd == 1.0
    assert pts[-1].threshold == math.inf
    assert pts[-1].pd == 0.0
    assert pts[-1].pfa_per_batch == 0.0


def test_roc_is_monotone_and_sorted_by_threshold():
    sc = single_target_scenario(clutter_per_scan=50)
    pts = roc_curve(sc, DL, thresholds=[80.0, -10.0, 140.0, 40.0],
                    trials=3, base_seed=5)
    thr = [p.threshold for p in pts]
    assert thr == sorted(thr)
    pds = [p.pd for p in pts]
    assert all(a >= b for a, b in zip(pds, pds[1:]))
    fas = [p.pfa_per_batch for p in pts]
    assert all(a >= b for a, b in zip(fas, fas[1:]))
    area = sc.area[0] * sc.area[1]
    for p in pts:
        assert p.pfa_per_area == pytest.approx(p.pfa_per_batch / area)
        assert p.trials == 3
        assert p.clutter_per_scan == 50


def test_roc_trials_are_reproducible_from_the_base_seed():
    sc = single_target_scenario(clutter_per_scan=50)
    a = roc_curve(sc, DL, thresholds=[0.0, 60.0], trials=3, base_seed=9)
    b = roc_curve(sc, DL, thresholds=[0.0, 60.0], trials=3, base_seed=9)
    assert a == b


def test_roc_does_not_depend_on_worker_count():
    sc = single_target_scenario(clutter_per_scan=50)
    serial = roc_curve(sc, DL, thresholds=[0.0], trials=3, base_seed=5,
                       n_jobs=1)
    forked = roc_curve(sc, DL, thresholds=[0.0], trials=3, base_seed=5,
                       n_jobs=2)
    assert serial == forked


def test_roc_rejects_a_trial_count_below_one():
    with pytest.raises(ConfigError):
        roc_curve(single_target_scenario(), DL, thresholds=[0.0], trials=0)


# ----------------------------------------------------------- cost scaling


def test_counted_work_per_iteration_is_exact():
    # association pass: N(H+1) densities + N(H+1) prior ops;
    # updates: 11N per active track => N(13H + 2) in total
    rep = complexity_probe(DL, [200, 400, 800], [2, 4, 8], passes=2, seed=0)
    for row in rep.rows:
        assert row.ops_per_iter == row.n * (13 * row.h + 2)
        assert row.iters == 2
        assert row.wall_ms > 0


def test_counted_work_grows_linearly_in_n_times_h():
    rep = complexity_probe(DL, [200, 400, 800], [2, 4, 8], passes=2, seed=0)
    assert rep.r_squared > 0.99
    by_nh = {(r.n, r.h): r.ops_per_iter for r in rep.rows}
    for h in (2, 4, 8):
        assert by_nh[(400, h)] / by_nh[(200, h)] == pytest.approx(2.0)
    for n in (200, 400, 800):
        ratio = by_nh[(n, 8)] / by_nh[(n, 4)]
        assert 1.4 <= ratio <= 2.6


def test_probe_needs_a_three_point_grid():
    with pytest.raises(ConfigError):
        complexity_probe(DL, [200, 400], [2, 4, 8])
    with pytest.raises(ConfigError):
        complexity_probe(DL, [200, 400, 800], [2, 4])


# ----------------------------------------------------------- CSV output


def test_roc_csv_layout(tmp_path):
    sc = single_target_scenario(clutter_per_scan=50)
    pts = roc_curve(sc, DL, thresholds=[0.0, 60.0], trials=2, base_seed=5)
    path = tmp_path / "roc.csv"
    write_roc_csv(pts, path, header_comment="sweep")
    lines = path.read_text().splitlines()
    assert lines[0] == "# sweep"
    assert lines[1] == ",".join(ROC_FIELDS)
    rows = list(csv.DictReader(lines[1:]))
    assert len(rows) == 2
    assert float(rows[0]["pd"]) == pts[0].pd
    assert int(rows[0]["clutter_per_scan"]) == 50


def test_complexity_csv_layout(tmp_path):
    rep = complexity_probe(DL, [200, 400, 800], [2, 4, 8], passes=1, seed=1)
    path = tmp_path / "complexity.csv"
    write_complexity_csv(rep, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(COMPLEXITY_FIELDS)
    rows = list(csv.DictReader(lines))
    assert len(rows) == 9
    assert {int(r["N"]) for r in rows} == {200, 400, 800}
    for r in rows:
        assert float(r["ops_per_iter"]) == int(r["N"]) * (13 * int(r["H"]) + 2)
