"""Mixture likelihood over a measurement batch.

Each measurement is explained by exactly one hypothesis: uniform clutter over
the bounded measurement space, or a 4-D diagonal Gaussian centered on a
constant-velocity track's prediction. The batch log-likelihood is

    sum_n log sum_h r(h) * pdf(e(n) | h)

computed entirely in the log domain with per-row max shifts, so vague tracks
(sigmas spanning the whole space) and crisp tracks (sigmas at sensor scale)
coexist without underflow.
"""

import numpy as np

from .errors import DegenerateLikelihoodError, UnsupportedHypothesisError
from .model import (
    Batch,
    ClutterHypothesis,
    HypothesisSet,
    Measurement,
    MeasurementBounds,
    TrackHypothesis,
    measurement_volume,
)

_LOG_2PI = float(np.log(2.0 * np.pi))


def predict(track: TrackHypothesis, t) -> np.ndarray:
    """Model 4-vector(s) (x, y, a, d) of a track at time(s) t.

    Scalar t gives shape (4,); an array of times gives (len(t), 4). Only
    track hypotheses have a trajectory — the clutter hypothesis has no
    model vector.
    """
    if not isinstance(track, TrackHypothesis):
        raise UnsupportedHypothesisError(
            f"predict needs a track hypothesis, got {type(track).__name__}"
        )
    t = np.asarray(t, dtype=float)
    x = track.x0 + track.vx * t
    y = track.y0 + track.vy * t
    a = np.broadcast_to(track.a, t.shape)
    d = np.broadcast_to(track.d, t.shape)
    return np.stack([x, y, a, d], axis=-1)


def residual(m: Measurement, track: TrackHypothesis) -> np.ndarray:
    """Measurement minus track prediction at the measurement's time."""
    return m.vector() - predict(track, m.t)


def batch_residuals(batch: Batch, track: TrackHypothesis) -> np.ndarray:
    """(N, 4) residuals of every measurement against one track."""
    return batch.values() - predict(track, batch.t)


def clutter_pdf(bounds: MeasurementBounds) -> float:
    """Uniform clutter density: one over the measurement-space volume."""
    return 1.0 / measurement_volume(bounds)


def track_log_pdf(e, track: TrackHypothesis):
    """Log density of residual(s) e under the track's diagonal Gaussian.

    e is (4,) or (N, 4); returns a scalar or (N,).
    """
    e = np.asarray(e, dtype=float)
    sig = track.sigma
    quad = np.sum((e / sig) ** 2, axis=-1)
    return -2.0 * _LOG_2PI - np.log(sig).sum() - 0.5 * quad


def conditional_pdf(m: Measurement, h, bounds: MeasurementBounds) -> float:
    """pdf(m | h) in linear domain, dispatching on hypothesis kind."""
    if isinstance(h, ClutterHypothesis):
        return clutter_pdf(bounds)
    if isinstance(h, TrackHypothesis):
        return float(np.exp(track_log_pdf(residual(m, h), h)))
    raise UnsupportedHypothesisError(f"unknown hypothesis type {type(h)!r}")


def log_conditional_matrix(batch: Batch, hs: HypothesisSet, counter=None) -> np.ndarray:
    """(N, H) matrix of log pdf(n | h), clutter in column 0.

    `counter` (optional) tallies density evaluations for complexity probes.
    """
    n = batch.n
    out = np.empty((n, hs.n_hypotheses))
    out[:, 0] = np.log(clutter_pdf(batch.bounds))
    for j, h in enumerate(hs.tracks, start=1):
        out[:, j] = track_log_pdf(batch_residuals(batch, h), h)
    if counter is not None:
        counter.add("pdf_evals", n * hs.n_hypotheses)
    return out


def log_weighted_terms(batch: Batch, hs: HypothesisSet, counter=None) -> np.ndarray:
    """(N, H) matrix of log(r(h) * pdf(n | h)); zero priors map to -inf."""
    logpdf = log_conditional_matrix(batch, hs, counter=counter)
    with np.errstate(divide="ignore"):
        logpri = np.log(hs.priors())
    return logpdf + logpri[None, :]


def _row_logsumexp(w: np.ndarray) -> np.ndarray:
    """Row-wise logsumexp with max shift; rows of all -inf stay -inf."""
    m = w.max(axis=1)
    safe = np.isfinite(m)
    out = np.full(w.shape[0], -np.inf)
    if safe.any():
        shifted = w[safe] - m[safe, None]
        out[safe] = m[safe] + np.log(np.exp(shifted).sum(axis=1))
    return out


def batch_log_likelihood(batch: Batch, hs: HypothesisSet, counter=None) -> float:
    """Total mixture log-likelihood of the batch under the roster.

    Raises DegenerateLikelihoodError if every term underflows for some
    measurement (only possible with zero priors or infinite residuals).
    """
    w = log_weighted_terms(batch, hs, counter=counter)
    rows = _row_logsumexp(w)
    if not np.isfinite(rows).all():
        i = int(np.flatnonzero(~np.isfinite(rows))[0])
        raise DegenerateLikelihoodError(
            f"all mixture terms vanished for measurement {i}"
        )
    return float(rows.sum())
