"""Estimator-style front door for the mixture fitter.

``DynamicLogicTracker`` follows scikit-learn conventions: constructor stores
hyperparameters verbatim (get_params/set_params/clone all work), ``fit``
consumes an (N, 6) array of ``[scan, t, x, y, amplitude, doppler]`` rows (or
a prepared Batch) and exposes the fitted roster through trailing-underscore
attributes. Measurement-space bounds are a hyperparameter, never inferred
from data — the clutter density must not float with the sample.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .engine import DLConfig, run_dl, e_step
from .errors import ConfigError
from .lifecycle import declare_detections, detection_candidates
from .likelihood import batch_log_likelihood
from .model import Batch, MeasurementBounds, batch_from_arrays

X_COLUMNS = ("scan", "t", "x", "y", "amplitude", "doppler")


class DynamicLogicTracker(BaseEstimator):
    """Joint detection/association/tracking over one multi-scan batch.

    Parameters mirror DLConfig plus the measurement bounds and the detection
    threshold. After ``fit``:

    hypotheses_    fitted roster (clutter + tracks)
    association_   (N, H) responsibility matrix, clutter column first
    labels_        per-measurement hard assignment (track_id, 0 = clutter)
    trace_         per-iteration log-likelihood / roster history
    detections_    active tracks whose LLR cleared detection_threshold
    report_        full per-track LLR table
    """

    def __init__(
        self,
        bounds=None,
        max_iterations=200,
        loglik_rel_tolerance=1e-6,
        sigma_floor=(1.0, 1.0, 0.02, 0.25),
        c_mode="derived_xd",
        tie_sigma_x_d=False,
        dormant_count=2,
        activation_threshold=None,
        elimination_threshold=None,
        dormant_seed_prior=0.02,
        max_probe_failures=6,
        crisp_sigma_ratio=3.0,
        min_track_support=2.5,
        detection_threshold=0.0,
        rng_seed=0,
    ):
        self.bounds = bounds
        self.max_iterations = max_iterations
        self.loglik_rel_tolerance = loglik_rel_tolerance
        self.sigma_floor = sigma_floor
        self.c_mode = c_mode
        self.tie_sigma_x_d = tie_sigma_x_d
        self.dormant_count = dormant_count
        self.activation_threshold = activation_threshold
        self.elimination_threshold = elimination_threshold
        self.dormant_seed_prior = dormant_seed_prior
        self.max_probe_failures = max_probe_failures
        self.crisp_sigma_ratio = crisp_sigma_ratio
        self.min_track_support = min_track_support
        self.detection_threshold = detection_threshold
        self.rng_seed = rng_seed

    # -------- plumbing --------

    def _resolved_bounds(self) -> MeasurementBounds:
        if self.bounds is None:
            raise ConfigError(
                "bounds must be provided; they define the clutter density "
                "and are never inferred from data"
            )
        if isinstance(self.bounds, MeasurementBounds):
            return self.bounds
        if isinstance(self.bounds, dict):
            return MeasurementBounds.from_dict(self.bounds)
        x, y, a, d = self.bounds
        return MeasurementBounds(x=tuple(x), y=tuple(y), a=tuple(a), d=tuple(d))

    def _config(self) -> DLConfig:
        return DLConfig(
            max_iterations=self.max_iterations,
            loglik_rel_tolerance=self.loglik_rel_tolerance,
            sigma_floor=tuple(self.sigma_floor),
            c_mode=self.c_mode,
            tie_sigma_x_d=self.tie_sigma_x_d,
            dormant_count=self.dormant_count,
            activation_threshold=self.activation_threshold,
            elimination_threshold=self.elimination_threshold,
            dormant_seed_prior=self.dormant_seed_prior,
            max_probe_failures=self.max_probe_failures,
            crisp_sigma_ratio=self.crisp_sigma_ratio,
            min_track_support=self.min_track_support,
            rng_seed=self.rng_seed,
        )

    def _to_batch(self, X) -> Batch:
        bounds = self._resolved_bounds()
        if isinstance(X, Batch):
            if X.bounds != bounds:
                raise ConfigError("batch bounds differ from estimator bounds")
            return X
        arr = np.asarray(X, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 6:
            raise ConfigError(
                f"X must be (n, 6) with columns {X_COLUMNS}, got shape {arr.shape}"
            )
        return batch_from_arrays(
            scan=arr[:, 0].astype(int), t=arr[:, 1], x=arr[:, 2],
            y=arr[:, 3], a=arr[:, 4], d=arr[:, 5], bounds=bounds,
        )

    def _check_fitted(self):
        if not hasattr(self, "hypotheses_"):
            raise NotFittedError(
                "This DynamicLogicTracker instance is not fitted yet."
            )

    # -------- estimator API --------

    def fit(self, X, y=None):
        batch = self._to_batch(X)
        result = run_dl(batch, self._config())
        self.batch_ = batch
        self.hypotheses_ = result.hypotheses
        self.association_ = result.association
        self.trace_ = result.trace
        self.converged_ = result.converged
        self.n_iter_ = result.iterations
        self.diagnostics_ = result.diagnostics
        self.labels_ = self._hard_labels(result.association)
        self.detections_, self.report_ = declare_detections(
            result.hypotheses, batch, threshold=self.detection_threshold,
            candidates=detection_candidates(result.hypotheses, self._config()),
        )
        return self

    def _hard_labels(self, assoc: np.ndarray) -> np.ndarray:
        ids = np.array(
            [self.hypotheses_.clutter.track_id] + self.hypotheses_.track_ids()
        )
        return ids[np.argmax(assoc, axis=1)]

    def predict_proba(self, X=None) -> np.ndarray:
        """Responsibility matrix of (new) measurements under the fitted
        roster, clutter column first."""
        self._check_fitted()
        if X is None:
            return self.association_
        return e_step(self._to_batch(X), self.hypotheses_)

    def transform(self, X=None) -> np.ndarray:
        return self.predict_proba(X)

    def predict(self, X=None) -> np.ndarray:
        """Hard per-measurement origin labels (track_id; 0 means clutter)."""
        self._check_fitted()
        if X is None:
            return self.labels_
        return self._hard_labels(self.predict_proba(X))

    def fit_predict(self, X, y=None) -> np.ndarray:
        return self.fit(X).predict()

    def score(self, X=None, y=None) -> float:
        """Mean per-measurement log-likelihood under the fitted roster."""
        self._check_fitted()
        batch = self.batch_ if X is None else self._to_batch(X)
        return batch_log_likelihood(batch, self.hypotheses_) / batch.n
