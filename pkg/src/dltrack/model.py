"""Core domain types: measurement space, batches, track hypotheses.

A measurement is a 4-vector (x, y, amplitude, doppler) stamped with its scan
index and scan time. Batches are immutable column arrays over a declared
bounded measurement space; bounds always come from configuration, never from
the data itself, so the clutter density stays fixed across trials.

Hypothesis column order everywhere in the package: clutter first, then
tracks in roster order.
"""

import csv
import io
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    BatchValidationError,
    InvalidBoundsError,
    InvalidCovarianceError,
)

# Dimension order used for every 4-vector in the package.
DIMS = ("x", "y", "a", "d")


# ===================== bounds =====================


@dataclass(frozen=True)
class MeasurementBounds:
    """Axis-aligned bounds of the measurement space, one (lo, hi) per dimension."""

    x: Tuple[float, float]
    y: Tuple[float, float]
    a: Tuple[float, float]
    d: Tuple[float, float]

    def __post_init__(self):
        for name in DIMS:
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise InvalidBoundsError(f"non-finite bounds on dimension {name!r}")
            if not hi > lo:
                raise InvalidBoundsError(
                    f"degenerate bounds on dimension {name!r}: [{lo}, {hi}]"
                )

    @property
    def lows(self) -> np.ndarray:
        return np.array([getattr(self, n)[0] for n in DIMS], dtype=float)

    @property
    def highs(self) -> np.ndarray:
        return np.array([getattr(self, n)[1] for n in DIMS], dtype=float)

    @property
    def widths(self) -> np.ndarray:
        return self.highs - self.lows

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.lows + self.highs)

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * self.widths

    def to_dict(self) -> dict:
        return {n: list(map(float, getattr(self, n))) for n in DIMS}

    @classmethod
    def from_dict(cls, d: dict) -> "MeasurementBounds":
        return cls(**{n: tuple(d[n]) for n in DIMS})


def measurement_volume(bounds: MeasurementBounds) -> float:
    """Volume of the bounded measurement space (product of the four widths).

    The clutter hypothesis is uniform over this volume.
    """
    return float(np.prod(bounds.widths))


# ===================== measurements / batches =====================


@dataclass(frozen=True)
class Measurement:
    """One pre-detected return: position, amplitude, doppler, scan stamp."""

    x: float
    y: float
    a: float
    d: float
    t: float
    scan: int

    def vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.a, self.d], dtype=float)


@dataclass(frozen=True)
class Batch:
    """Validated multi-scan measurement batch as immutable column arrays."""

    scan: np.ndarray
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    a: np.ndarray
    d: np.ndarray
    bounds: MeasurementBounds

    @property
    def n(self) -> int:
        return int(self.t.shape[0])

    def __len__(self) -> int:
        return self.n

    @property
    def scans(self) -> np.ndarray:
        """Sorted unique scan indices."""
        return np.unique(self.scan)

    @property
    def scan_times(self) -> np.ndarray:
        """Representative time per unique scan (first occurrence)."""
        scans = self.scans
        out = np.empty(scans.shape[0])
        for i, s in enumerate(scans):
            out[i] = self.t[self.scan == s][0]
        return out

    @property
    def duration(self) -> float:
        return float(self.t.max() - self.t.min())

    @property
    def t_mid(self) -> float:
        return float(0.5 * (self.t.min() + self.t.max()))

    def values(self) -> np.ndarray:
        """Stacked (N, 4) array in DIMS order."""
        return np.column_stack([self.x, self.y, self.a, self.d])

    def measurement(self, i: int) -> Measurement:
        return Measurement(
            x=float(self.x[i]), y=float(self.y[i]), a=float(self.a[i]),
            d=float(self.d[i]), t=float(self.t[i]), scan=int(self.scan[i]),
        )


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


def batch_from_arrays(scan, t, x, y, a, d, bounds: MeasurementBounds) -> Batch:
    """Build and validate a Batch from column arrays.

    Raises BatchValidationError naming the offending measurement index and
    dimension where applicable.
    """
    scan = np.asarray(scan, dtype=int)
    cols = [np.asarray(c, dtype=float) for c in (t, x, y, a, d)]
    t, x, y, a, d = cols
    n = scan.shape[0]
    if n == 0:
        raise BatchValidationError("empty batch")
    for name, col in zip(("scan", "t", "x", "y", "a", "d"), [scan] + cols):
        if col.shape != (n,):
            raise BatchValidationError(
                f"column {name!r} has shape {col.shape}, expected ({n},)"
            )
    for name, col in zip(("t", "x", "y", "a", "d"), cols):
        bad = np.flatnonzero(~np.isfinite(col))
        if bad.size:
            raise BatchValidationError(
                f"non-finite value in dimension {name!r} at measurement {bad[0]}"
            )
    if (scan < 0).any():
        i = int(np.flatnonzero(scan < 0)[0])
        raise BatchValidationError(f"negative scan index at measurement {i}")
    if (t < 0).any():
        i = int(np.flatnonzero(t < 0)[0])
        raise BatchValidationError(f"negative time at measurement {i}")

    for name, col in zip(DIMS, (x, y, a, d)):
        lo, hi = getattr(bounds, name)
        bad = np.flatnonzero((col < lo) | (col > hi))
        if bad.size:
            i = int(bad[0])
            raise BatchValidationError(
                f"measurement {i} out of bounds on dimension {name!r}: "
                f"{col[i]} not in [{lo}, {hi}]"
            )

    # time must be non-decreasing with scan index: every return of a later
    # scan is no earlier than every return of an earlier scan
    order = np.argsort(scan, kind="stable")
    ss, ts = scan[order], t[order]
    boundaries = np.flatnonzero(np.diff(ss) > 0)
    for b in boundaries:
        if ts[b + 1] < ts[:b + 1].max():
            raise BatchValidationError(
                f"non-monotone time vs scan index near measurement {int(order[b + 1])}"
            )

    return Batch(
        scan=_freeze(scan), t=_freeze(t), x=_freeze(x), y=_freeze(y),
        a=_freeze(a), d=_freeze(d), bounds=bounds,
    )


def validate_batch(
    measurements: Union[Batch, Iterable[Measurement]],
    bounds: MeasurementBounds,
) -> Batch:
    """Validate measurements against bounds and return an immutable Batch.

    Idempotent: revalidating a Batch against the same bounds returns it
    unchanged.
    """
    if isinstance(measurements, Batch):
        if measurements.bounds == bounds:
            return measurements
        return batch_from_arrays(
            measurements.scan, measurements.t, measurements.x,
            measurements.y, measurements.a, measurements.d, bounds,
        )
    ms = list(measurements)
    if not ms:
        raise BatchValidationError("empty batch")
    return batch_from_arrays(
        scan=[m.scan for m in ms], t=[m.t for m in ms], x=[m.x for m in ms],
        y=[m.y for m in ms], a=[m.a for m in ms], d=[m.d for m in ms],
        bounds=bounds,
    )


# ===================== batch CSV I/O =====================

BATCH_CSV_COLUMNS = ("scan", "t", "x", "y", "amplitude", "doppler")


def write_batch_csv(batch: Batch, path, header_comment: Optional[str] = None) -> None:
    """Write a batch as CSV (columns: scan,t,x,y,amplitude,doppler).

    An optional '# ...' comment line is emitted before the header.
    """
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(BATCH_CSV_COLUMNS)
        for i in range(batch.n):
            w.writerow([
                int(batch.scan[i]), repr(float(batch.t[i])),
                repr(float(batch.x[i])), repr(float(batch.y[i])),
                repr(float(batch.a[i])), repr(float(batch.d[i])),
            ])


def read_batch_csv(path, bounds: MeasurementBounds) -> Batch:
    """Read a batch CSV written by write_batch_csv (comment lines skipped)."""
    with open(path, "r", newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    rd = csv.reader(io.StringIO("".join(lines)))
    header = next(rd, None)
    if header is None or tuple(h.strip() for h in header) != BATCH_CSV_COLUMNS:
        raise BatchValidationError(
            f"bad batch CSV header: {header!r}, expected {list(BATCH_CSV_COLUMNS)}"
        )
    rows = list(rd)
    if not rows:
        raise BatchValidationError("empty batch")
    try:
        scan = [int(r[0]) for r in rows]
        cols = [[float(r[j]) for r in rows] for j in range(1, 6)]
    except (ValueError, IndexError) as e:
        raise BatchValidationError(f"malformed batch CSV row: {e}") from e
    t, x, y, a, d = cols
    return batch_from_arrays(scan, t, x, y, a, d, bounds)


# ===================== hypotheses =====================


class TrackStatus(str, Enum):
    ACTIVE = "active"
    DORMANT = "dormant"


@dataclass(frozen=True)
class ClutterHypothesis:
    """The uniform-over-bounds hypothesis; carries only its prior."""

    prior: float
    track_id: int = 0


@dataclass
class TrackHypothesis:
    """Constant-velocity track over the batch window.

    Model vector at time t: (x0 + vx*t, y0 + vy*t, a, d) with d tied to vx.
    sigma holds the four per-dimension standard deviations in DIMS order.
    """

    track_id: int
    x0: float
    y0: float
    vx: float
    vy: float
    a: float
    d: float
    sigma: np.ndarray
    prior: float
    status: TrackStatus = TrackStatus.ACTIVE

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float).copy()
        if self.sigma.shape != (4,):
            raise InvalidCovarianceError(
                f"track {self.track_id}: sigma must have shape (4,)"
            )
        if not (np.isfinite(self.sigma).all() and (self.sigma > 0).all()):
            raise InvalidCovarianceError(
                f"track {self.track_id}: non-positive or non-finite sigma {self.sigma}"
            )

    @property
    def is_active(self) -> bool:
        return self.status is TrackStatus.ACTIVE

    @property
    def is_dormant(self) -> bool:
        return self.status is TrackStatus.DORMANT

    def copy(self) -> "TrackHypothesis":
        return replace(self, sigma=self.sigma.copy())


def vague_track(
    bounds: MeasurementBounds,
    sigma_floor: np.ndarray,
    track_id: int,
    status: TrackStatus,
    prior: float,
) -> TrackHypothesis:
    """Maximally vague track: measurement-space midpoints, sigmas at half the
    widths (never below the floor), zero transverse velocity, and vx pinned to
    the doppler midpoint so the vx/doppler tie holds from the start."""
    mid = bounds.midpoints
    sigma = np.maximum(bounds.half_widths, np.asarray(sigma_floor, dtype=float))
    return TrackHypothesis(
        track_id=track_id,
        x0=float(mid[0]),
        y0=float(mid[1]),
        vx=float(mid[3]),
        vy=0.0,
        a=float(mid[2]),
        d=float(mid[3]),
        sigma=sigma,
        prior=prior,
        status=status,
    )


@dataclass
class HypothesisSet:
    """Mixture roster: one clutter hypothesis plus zero or more tracks."""

    clutter: ClutterHypothesis
    tracks: List[TrackHypothesis] = field(default_factory=list)

    @property
    def n_hypotheses(self) -> int:
        return 1 + len(self.tracks)

    def priors(self) -> np.ndarray:
        """Priors in column order (clutter first)."""
        return np.array([self.clutter.prior] + [h.prior for h in self.tracks])

    def active_tracks(self) -> List[TrackHypothesis]:
        return [h for h in self.tracks if h.is_active]

    def dormant_tracks(self) -> List[TrackHypothesis]:
        return [h for h in self.tracks if h.is_dormant]

    def track_ids(self) -> List[int]:
        return [h.track_id for h in self.tracks]

    def copy(self) -> "HypothesisSet":
        return HypothesisSet(
            clutter=self.clutter, tracks=[h.copy() for h in self.tracks]
        )

    def renormalized(self) -> "HypothesisSet":
        """Return a copy with priors rescaled to sum to one."""
        total = self.clutter.prior + sum(h.prior for h in self.tracks)
        if total <= 0:
            raise InvalidCovarianceError("hypothesis priors sum to zero")
        out = self.copy()
        out.clutter = ClutterHypothesis(
            prior=self.clutter.prior / total, track_id=self.clutter.track_id
        )
        for h in out.tracks:
            h.prior = h.prior / total
        return out

    def validate(self, atol: float = 1e-12) -> None:
        """Assert structural invariants (unit prior sum, positive sigmas,
        doppler/vx tie, unique ids)."""
        pri = self.priors()
        if (pri < -atol).any():
            raise InvalidCovarianceError("negative hypothesis prior")
        if abs(pri.sum() - 1.0) > max(atol, 1e-12 * self.n_hypotheses):
            raise InvalidCovarianceError(
                f"hypothesis priors sum to {pri.sum()!r}, not 1"
            )
        ids = [self.clutter.track_id] + self.track_ids()
        if len(set(ids)) != len(ids):
            raise InvalidCovarianceError(f"duplicate track ids: {ids}")
        for h in self.tracks:
            if not (np.isfinite(h.sigma).all() and (h.sigma > 0).all()):
                raise InvalidCovarianceError(
                    f"track {h.track_id}: bad sigma {h.sigma}"
                )
            if h.d != h.vx:
                raise InvalidCovarianceError(
                    f"track {h.track_id}: doppler {h.d} != vx {h.vx}"
                )


def check_association_matrix(f: np.ndarray, hs: HypothesisSet, n: int,
                             atol: float = 1e-12) -> None:
    """Assert f is a valid (N, H) association matrix for the roster."""
    if f.shape != (n, hs.n_hypotheses):
        raise BatchValidationError(
            f"association matrix shape {f.shape}, expected {(n, hs.n_hypotheses)}"
        )
    if (f < -atol).any() or (f > 1 + atol).any():
        raise BatchValidationError("association weights outside [0, 1]")
    rows = f.sum(axis=1)
    if np.abs(rows - 1.0).max() > atol * max(1, hs.n_hypotheses):
        raise BatchValidationError(
            f"association rows do not sum to 1 (max dev {np.abs(rows-1).max():.3e})"
        )
