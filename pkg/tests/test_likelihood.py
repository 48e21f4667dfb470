"""Mixture density layer: predictions, residuals, log-domain likelihood."""

import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from dltrack.errors import (
    DegenerateLikelihoodError,
    UnsupportedHypothesisError,
)
from dltrack.likelihood import (
    batch_log_likelihood,
    batch_residuals,
    clutter_pdf,
    conditional_pdf,
    log_conditional_matrix,
    predict,
    residual,
    track_log_pdf,
)
from dltrack.model import (
    ClutterHypothesis,
    HypothesisSet,
    Measurement,
    MeasurementBounds,
    TrackHypothesis,
    batch_from_arrays,
)

BOUNDS = MeasurementBounds(x=(0, 500), y=(0, 500), a=(0, 1), d=(-10, 10))


def track(x0=1.0, y0=2.0, vx=3.0, vy=4.0, a=0.5, sigma=(1, 1, 1, 1), prior=0.5):
    return TrackHypothesis(track_id=1, x0=x0, y0=y0, vx=vx, vy=vy, a=a, d=vx,
                           sigma=np.asarray(sigma, dtype=float), prior=prior)


# ---------------------------------------------------------------- predict


def test_predict_at_time_zero_returns_initial_state():
    np.testing.assert_allclose(predict(track(), 0.0), [1.0, 2.0, 0.5, 3.0])


def test_predict_advances_linearly():
    np.testing.assert_allclose(predict(track(), 2.0), [7.0, 10.0, 0.5, 3.0])


def test_predict_vectorizes_over_times():
    out = predict(track(), np.array([0.0, 1.0, 2.0]))
    assert out.shape == (3, 4)
    np.testing.assert_allclose(out[2], [7.0, 10.0, 0.5, 3.0])


def test_predict_rejects_clutter_hypothesis():
    with pytest.raises(UnsupportedHypothesisError):
        predict(ClutterHypothesis(prior=0.5), 0.0)


def test_residual_zero_at_exact_prediction():
    m = Measurement(x=7.0, y=10.0, a=0.5, d=3.0, t=2.0, scan=1)
    np.testing.assert_allclose(residual(m, track()), [0.0, 0.0, 0.0, 0.0])


def test_residual_isolates_single_offset():
    m = Measurement(x=8.0, y=10.0, a=0.5, d=3.0, t=2.0, scan=1)
    np.testing.assert_allclose(residual(m, track()), [1.0, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------- densities


def test_clutter_pdf_values():
    assert clutter_pdf(BOUNDS) == pytest.approx(2.0e-7)
    unit = MeasurementBounds(x=(0, 1), y=(0, 1), a=(0, 1), d=(0, 1))
    assert clutter_pdf(unit) == 1.0
    b1600 = MeasurementBounds(x=(0, 10), y=(0, 10), a=(0, 1), d=(-8, 8))
    assert clutter_pdf(b1600) == pytest.approx(6.25e-4)


def test_track_log_pdf_zero_residual_unit_sigma():
    lp = track_log_pdf(np.zeros(4), track())
    assert lp == pytest.approx(math.log((2 * math.pi) ** -2))
    assert math.exp(lp) == pytest.approx(0.0253303, rel=1e-5)


def test_track_log_pdf_single_dimension_quadratic():
    base = track_log_pdf(np.zeros(4), track())
    lp = track_log_pdf(np.array([1.0, 0.0, 0.0, 0.0]), track())
    assert lp == pytest.approx(base - 0.5)


def test_track_log_pdf_matches_dense_gaussian():
    """Cross-check against a full-covariance density from another library."""
    sigma = np.array([2.0, 2.0, 0.05, 1.0])
    e = np.array([1.0, 2.0, 0.1, 0.5])
    ours = track_log_pdf(e, track(sigma=sigma))
    ref = multivariate_normal(mean=np.zeros(4), cov=np.diag(sigma**2)).logpdf(e)
    assert ours == pytest.approx(ref, rel=1e-12)


def test_track_log_pdf_batched_rows():
    trk = track(sigma=(2, 2, 0.05, 1))
    e = np.array([[0.0, 0, 0, 0], [1.0, 2.0, 0.1, 0.5]])
    out = track_log_pdf(e, trk)
    assert out.shape == (2,)
    assert out[1] == pytest.approx(track_log_pdf(e[1], trk))


def test_conditional_pdf_dispatch():
    assert conditional_pdf(
        Measurement(x=1, y=1, a=0.5, d=0, t=0.0, scan=0),
        ClutterHypothesis(prior=0.5), BOUNDS,
    ) == pytest.approx(2.0e-7)
    m = Measurement(x=1.0, y=2.0, a=0.5, d=3.0, t=0.0, scan=0)
    assert conditional_pdf(m, track(), BOUNDS) == pytest.approx(0.0253303, rel=1e-5)
    with pytest.raises(UnsupportedHypothesisError):
        conditional_pdf(m, object(), BOUNDS)


def test_far_track_underflows_linear_but_not_log():
    m = Measurement(x=1.0 + 40.0, y=2.0, a=0.5, d=3.0, t=0.0, scan=0)  # 40 sigma
    assert conditional_pdf(m, track(), BOUNDS) == 0.0
    lp = track_log_pdf(residual(m, track()), track())
    assert np.isfinite(lp)


def test_track_log_pdf_integrates_to_one():
    """Plain Monte-Carlo over a 6-sigma box recovers unit mass within 1%."""
    sig = np.array([2.0, 2.0, 0.05, 1.0])
    trk = track(x0=0, y0=0, vx=0, vy=0, a=0, sigma=sig)
    trk.d = 0.0
    trk.vx = 0.0
    rng = np.random.default_rng(11)
    lo, hi = -6.0 * sig, 6.0 * sig
    pts = rng.uniform(lo, hi, size=(4_000_000, 4))
    est = np.exp(track_log_pdf(pts, trk)).mean() * float(np.prod(hi - lo))
    assert abs(est - 1.0) < 0.01


# ---------------------------------------------------------------- batch mixture


def toy_batch(n=6, seed=0):
    rng = np.random.default_rng(seed)
    scan = np.sort(np.arange(n) % 3)
    return batch_from_arrays(
        scan=scan,
        t=scan * 10.0,
        x=rng.uniform(0, 500, n),
        y=rng.uniform(0, 500, n),
        a=rng.uniform(0, 1, n),
        d=rng.uniform(-10, 10, n),
        bounds=BOUNDS,
    )


def test_clutter_only_loglik_is_minus_n_log_volume():
    b = toy_batch(n=7)
    hs = HypothesisSet(clutter=ClutterHypothesis(prior=1.0), tracks=[])
    got = batch_log_likelihood(b, hs)
    assert got == pytest.approx(-7 * math.log(5.0e6), rel=1e-14)


def test_log_conditional_matrix_layout():
    b = toy_batch(n=5)
    hs = HypothesisSet(clutter=ClutterHypothesis(prior=0.5), tracks=[track()])
    m = log_conditional_matrix(b, hs)
    assert m.shape == (5, 2)
    np.testing.assert_allclose(m[:, 0], math.log(2.0e-7))


def test_loglik_invariant_under_measurement_permutation():
    b = toy_batch(n=12, seed=3)
    hs = HypothesisSet(
        clutter=ClutterHypothesis(prior=0.6),
        tracks=[track(sigma=(5, 5, 0.2, 2), prior=0.4)],
    )
    base = batch_log_likelihood(b, hs)
    rng = np.random.default_rng(4)
    perm = rng.permutation(12)
    # keep scan/time pairing intact while permuting row order
    b2 = batch_from_arrays(scan=b.scan[perm], t=b.t[perm], x=b.x[perm],
                           y=b.y[perm], a=b.a[perm], d=b.d[perm], bounds=BOUNDS)
    assert batch_log_likelihood(b2, hs) == pytest.approx(base, rel=1e-12)


def test_loglik_invariant_under_track_permutation():
    b = toy_batch(n=10, seed=5)
    t1 = track(x0=100, y0=100, vx=2, sigma=(5, 5, 0.2, 2), prior=0.3)
    t2 = track(x0=300, y0=300, vx=-2, sigma=(8, 8, 0.1, 1), prior=0.2)
    t2.track_id = 2
    fwd = HypothesisSet(clutter=ClutterHypothesis(prior=0.5), tracks=[t1, t2])
    rev = HypothesisSet(clutter=ClutterHypothesis(prior=0.5), tracks=[t2, t1])
    assert batch_log_likelihood(b, fwd) == pytest.approx(
        batch_log_likelihood(b, rev), rel=1e-12)


def test_vague_and_crisp_tracks_coexist_without_underflow():
    """A sensor-scale track and a space-spanning one differ by hundreds of
    log units; the mixture must stay finite anyway."""
    b = toy_batch(n=20, seed=8)
    crisp = track(x0=b.x[0], y0=b.y[0], vx=0, vy=0, a=0.5,
                  sigma=(0.1, 0.1, 0.01, 0.05), prior=0.1)
    vague = track(x0=250, y0=250, vx=0, vy=0, a=0.5,
                  sigma=(250, 250, 0.5, 10), prior=0.4)
    vague.track_id = 2
    hs = HypothesisSet(clutter=ClutterHypothesis(prior=0.5), tracks=[crisp, vague])
    assert np.isfinite(batch_log_likelihood(b, hs))


def test_all_zero_priors_raise_degenerate_likelihood():
    b = toy_batch(n=3)
    hs = HypothesisSet(clutter=ClutterHypothesis(prior=0.0), tracks=[])
    with pytest.raises(DegenerateLikelihoodError):
        batch_log_likelihood(b, hs)


def test_batch_residuals_shape_and_content():
    b = toy_batch(n=4)
    trk = track()
    e = batch_residuals(b, trk)
    assert e.shape == (4, 4)
    m = b.measurement(2)
    np.testing.assert_allclose(e[2], residual(m, trk))
