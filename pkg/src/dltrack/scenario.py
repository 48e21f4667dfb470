"""Synthetic multi-scan batches with controllable signal-to-clutter ratio.

Each scan contributes ``clutter_per_scan`` uniform-position clutter points
plus one noisy return per target. Clutter amplitude follows a Gaussian
restricted to the amplitude bounds (sampled exactly, no boundary pile-up);
clutter doppler is uniform around its mean with the configured standard
deviation. Target returns sit at the true trajectory position plus sensor
noise, with doppler equal to vx plus noise.

The separation report defines, per dimension,

    S/C = |mu_target - mu_clutter| / (sigma_clutter + sigma_target)

with effective (post-restriction) clutter moments, and 20*log10 for dB.
The shipped factory configs invert this formula, so their reports land on
round numbers by construction.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .errors import ConfigError
from .model import Batch, MeasurementBounds, batch_from_arrays

SeedLike = Union[None, int, np.random.SeedSequence, np.random.Generator]


@dataclass(frozen=True)
class TargetSpec:
    """One constant-velocity target: start position, velocity, mean amplitude."""

    x0: float
    y0: float
    vx: float
    vy: float
    a_mean: float


@dataclass
class ScenarioConfig:
    area: Tuple[float, float] = (500.0, 500.0)
    num_scans: int = 6
    revisit_interval: float = 10.0
    clutter_per_scan: int = 500
    targets: List[TargetSpec] = field(default_factory=list)
    clutter_amplitude_mean: float = 0.4
    clutter_amplitude_sigma: float = 0.18
    target_amplitude_sigma: float = 0.0
    clutter_doppler_mean: float = 0.0
    clutter_doppler_sigma: float = 6.6
    sensor_sigma: Tuple[float, float, float, float] = (2.0, 2.0, 0.05, 0.5)
    amplitude_bounds: Tuple[float, float] = (0.0, 0.8)
    doppler_bounds: Tuple[float, float] = (-11.5, 11.5)
    detection_probability: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        w, h = self.area
        if not (w > 0 and h > 0):
            raise ConfigError("area sides must be positive")
        if self.num_scans < 1:
            raise ConfigError("num_scans must be >= 1")
        if self.revisit_interval <= 0:
            raise ConfigError("revisit_interval must be positive")
        if self.clutter_per_scan < 0:
            raise ConfigError("clutter_per_scan must be >= 0")
        for name in ("clutter_amplitude_sigma", "clutter_doppler_sigma"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.target_amplitude_sigma < 0:
            raise ConfigError("target_amplitude_sigma must be >= 0")
        if not all(s >= 0 for s in self.sensor_sigma) or len(self.sensor_sigma) != 4:
            raise ConfigError("sensor_sigma must be four non-negative values")
        if not (0.0 <= self.detection_probability <= 1.0):
            raise ConfigError("detection_probability must lie in [0, 1]")
        a_lo, a_hi = self.amplitude_bounds
        d_lo, d_hi = self.doppler_bounds
        if not (a_hi > a_lo and d_hi > d_lo):
            raise ConfigError("amplitude/doppler bounds must be increasing")
        half = self.clutter_doppler_sigma * math.sqrt(3.0)
        if (self.clutter_doppler_mean - half < d_lo
                or self.clutter_doppler_mean + half > d_hi):
            raise ConfigError(
                "clutter doppler spread exceeds the doppler bounds"
            )
        t_end = (self.num_scans - 1) * self.revisit_interval
        for j, tgt in enumerate(self.targets):
            for t in (0.0, t_end):
                x = tgt.x0 + tgt.vx * t
                y = tgt.y0 + tgt.vy * t
                if not (0.0 <= x <= w and 0.0 <= y <= h):
                    raise ConfigError(
                        f"target {j} leaves the area at t={t} (x={x}, y={y})"
                    )
            if not (a_lo <= tgt.a_mean <= a_hi):
                raise ConfigError(f"target {j} amplitude mean outside bounds")
            if not (d_lo <= tgt.vx <= d_hi):
                raise ConfigError(f"target {j} vx outside doppler bounds")

    def bounds(self) -> MeasurementBounds:
        return MeasurementBounds(
            x=(0.0, self.area[0]),
            y=(0.0, self.area[1]),
            a=tuple(self.amplitude_bounds),
            d=tuple(self.doppler_bounds),
        )

    def scan_times(self) -> np.ndarray:
        return np.arange(self.num_scans) * self.revisit_interval


@dataclass
class GroundTruth:
    """True target parameters plus the per-measurement origin labels.

    measurement_target[i] is the index into ``targets`` that produced
    measurement i, or -1 for clutter.
    """

    targets: List[TargetSpec]
    measurement_target: np.ndarray

    def target_measurements(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.measurement_target == j)

    @property
    def n_clutter(self) -> int:
        return int((self.measurement_target < 0).sum())


def _as_rng(seed: SeedLike, fallback: int) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        seed = fallback
    return np.random.default_rng(seed)


def _clutter_amp_dist(cfg: ScenarioConfig):
    lo, hi = cfg.amplitude_bounds
    mu, sig = cfg.clutter_amplitude_mean, cfg.clutter_amplitude_sigma
    return stats.truncnorm((lo - mu) / sig, (hi - mu) / sig, loc=mu, scale=sig)


def generate(cfg: ScenarioConfig, seed: SeedLike = None) -> Tuple[Batch, GroundTruth]:
    """Draw one batch. Deterministic for a given seed (default cfg.rng_seed).

    Per scan, clutter rows come first, then target returns in target order.
    Measured values are clipped into the bounds; with the shipped configs the
    clip is multiple sigma away from every target so it is statistically
    inert, but it guarantees the batch validates.
    """
    cfg.validate()
    rng = _as_rng(seed, cfg.rng_seed)
    w, h = cfg.area
    a_lo, a_hi = cfg.amplitude_bounds
    d_lo, d_hi = cfg.doppler_bounds
    sx, sy, sa, sd = cfg.sensor_sigma
    amp_total_sigma = math.hypot(cfg.target_amplitude_sigma, sa)
    amp_dist = _clutter_amp_dist(cfg)
    dopp_half = cfg.clutter_doppler_sigma * math.sqrt(3.0)

    scan_col: List[int] = []
    t_col: List[float] = []
    xs: List[float] = []
    ys: List[float] = []
    amps: List[float] = []
    dopps: List[float] = []
    origin: List[int] = []

    for s in range(cfg.num_scans):
        t = s * cfg.revisit_interval
        k = cfg.clutter_per_scan
        if k:
            cx = rng.uniform(0.0, w, size=k)
            cy = rng.uniform(0.0, h, size=k)
            ca = amp_dist.rvs(size=k, random_state=rng)
            cd = rng.uniform(cfg.clutter_doppler_mean - dopp_half,
                             cfg.clutter_doppler_mean + dopp_half, size=k)
            xs.extend(cx)
            ys.extend(cy)
            amps.extend(ca)
            dopps.extend(cd)
            scan_col.extend([s] * k)
            t_col.extend([t] * k)
            origin.extend([-1] * k)
        for j, tgt in enumerate(cfg.targets):
            if cfg.detection_probability < 1.0:
                if rng.random() >= cfg.detection_probability:
                    continue
            mx = tgt.x0 + tgt.vx * t + (rng.normal(0.0, sx) if sx else 0.0)
            my = tgt.y0 + tgt.vy * t + (rng.normal(0.0, sy) if sy else 0.0)
            ma = tgt.a_mean + (rng.normal(0.0, amp_total_sigma)
                               if amp_total_sigma else 0.0)
            md = tgt.vx + (rng.normal(0.0, sd) if sd else 0.0)
            xs.append(min(max(mx, 0.0), w))
            ys.append(min(max(my, 0.0), h))
            amps.append(min(max(ma, a_lo), a_hi))
            dopps.append(min(max(md, d_lo), d_hi))
            scan_col.append(s)
            t_col.append(t)
            origin.append(j)

    batch = batch_from_arrays(
        scan=np.array(scan_col, dtype=int),
        t=np.array(t_col, dtype=float),
        x=np.array(xs, dtype=float),
        y=np.array(ys, dtype=float),
        a=np.array(amps, dtype=float),
        d=np.array(dopps, dtype=float),
        bounds=cfg.bounds(),
    )
    truth = GroundTruth(
        targets=list(cfg.targets),
        measurement_target=np.array(origin, dtype=int),
    )
    return batch, truth


# ===================== separation report =====================


@dataclass(frozen=True)
class ScrReport:
    amplitude_ratio: float
    doppler_ratio: float

    @property
    def amplitude_db(self) -> float:
        return 20.0 * math.log10(self.amplitude_ratio) if self.amplitude_ratio > 0 else -math.inf

    @property
    def doppler_db(self) -> float:
        return 20.0 * math.log10(self.doppler_ratio) if self.doppler_ratio > 0 else -math.inf


def scr_report(cfg: ScenarioConfig) -> ScrReport:
    """Mean over targets of the per-dimension separation ratio.

    Amplitude uses the clutter distribution's effective moments after
    restriction to the bounds; the target side combines intrinsic amplitude
    spread with sensor noise. Doppler clutter sigma is the configured value
    (the uniform spread is constructed to have exactly that sigma).
    """
    if not cfg.targets:
        raise ConfigError("separation report needs at least one target")
    amp_dist = _clutter_amp_dist(cfg)
    mu_c = float(amp_dist.mean())
    sig_c = float(amp_dist.std())
    sig_t_amp = math.hypot(cfg.target_amplitude_sigma, cfg.sensor_sigma[2])
    sig_t_dopp = cfg.sensor_sigma[3]
    amp_ratios = [abs(t.a_mean - mu_c) / (sig_c + sig_t_amp) for t in cfg.targets]
    dopp_ratios = [
        abs(t.vx - cfg.clutter_doppler_mean)
        / (cfg.clutter_doppler_sigma + sig_t_dopp)
        for t in cfg.targets
    ]
    return ScrReport(
        amplitude_ratio=float(np.mean(amp_ratios)),
        doppler_ratio=float(np.mean(dopp_ratios)),
    )


# ===================== shipped configurations =====================


def three_target_scenario(rng_seed: int = 0) -> ScenarioConfig:
    """Dense-clutter three-target setup: 6 scans, 500 clutter points per
    scan, separation -2 dB in amplitude and -3 dB in doppler.

    Target amplitude and speed are computed by inverting the separation
    formula, so scr_report on the result returns those dB values exactly.
    """
    sensor = (2.0, 2.0, 0.05, 0.5)
    base = ScenarioConfig(
        area=(500.0, 500.0),
        num_scans=6,
        revisit_interval=10.0,
        clutter_per_scan=500,
        clutter_amplitude_mean=0.4,
        clutter_amplitude_sigma=0.18,
        clutter_doppler_mean=0.0,
        clutter_doppler_sigma=6.6,
        sensor_sigma=sensor,
        amplitude_bounds=(0.0, 0.8),
        doppler_bounds=(-11.5, 11.5),
        rng_seed=rng_seed,
    )
    amp_dist = _clutter_amp_dist(base)
    a_mean = float(amp_dist.mean()) + 10.0 ** (-2.0 / 20.0) * (
        float(amp_dist.std()) + sensor[2]
    )
    speed = 10.0 ** (-3.0 / 20.0) * (base.clutter_doppler_sigma + sensor[3])
    base.targets = [
        TargetSpec(x0=60.0, y0=120.0, vx=speed, vy=3.2, a_mean=a_mean),
        TargetSpec(x0=440.0, y0=350.0, vx=-speed, vy=-2.6, a_mean=a_mean),
        TargetSpec(x0=120.0, y0=430.0, vx=speed, vy=-3.8, a_mean=a_mean),
    ]
    base.validate()
    return base


def single_target_scenario(clutter_per_scan: int = 200, rng_seed: int = 0) -> ScenarioConfig:
    """Single-target setup for detection-rate sweeps: 8 scans, separation
    ratios 1.7 (amplitude) and 2.0 (doppler), clutter density adjustable.

    The surveillance region is kept small relative to the clutter counts so
    that chance alignments of clutter occur at a measurable, density-graded
    rate — that population of weak false tracks is what the threshold sweep
    trades against detections.
    """
    sensor = (1.0, 1.0, 0.03, 0.5)
    base = ScenarioConfig(
        area=(350.0, 350.0),
        num_scans=8,
        revisit_interval=5.0,
        clutter_per_scan=clutter_per_scan,
        clutter_amplitude_mean=0.5,
        clutter_amplitude_sigma=0.17,
        clutter_doppler_mean=0.0,
        clutter_doppler_sigma=1.25,
        sensor_sigma=sensor,
        amplitude_bounds=(0.0, 1.0),
        doppler_bounds=(-5.0, 5.0),
        rng_seed=rng_seed,
    )
    amp_dist = _clutter_amp_dist(base)
    a_mean = float(amp_dist.mean()) + 1.7 * (float(amp_dist.std()) + sensor[2])
    vx = 2.0 * (base.clutter_doppler_sigma + sensor[3])
    base.targets = [TargetSpec(x0=100.0, y0=140.0, vx=vx, vy=1.8, a_mean=a_mean)]
    base.validate()
    return base


# ===================== truth sidecar files =====================


def write_truth_csv(truth: GroundTruth, path, header_comment: str = "") -> None:
    """Target table: target_id,x0,y0,vx,vy,a_mean."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["target_id", "x0", "y0", "vx", "vy", "a_mean"])
        for j, t in enumerate(truth.targets):
            w.writerow([j] + [repr(float(v)) for v in (t.x0, t.y0, t.vx, t.vy, t.a_mean)])


def write_assignment_csv(truth: GroundTruth, path, header_comment: str = "") -> None:
    """Measurement-origin table: measurement_index,target_id (clutter omitted)."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["measurement_index", "target_id"])
        for i, j in enumerate(truth.measurement_target):
            if j >= 0:
                w.writerow([i, int(j)])
