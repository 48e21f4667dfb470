"""Run configuration: one JSON file drives every command reproducibly.

Schema (all keys optional; unknown keys are rejected with their path):

    {
      "seed": 0,
      "detection_threshold": 0.0,
      "scenario": {"preset": "three_target" | "single_target", ...field overrides},
      "dl": {...DLConfig fields; "sigma_floor": null derives from sensor noise},
      "match": {"position_gate": ..., "velocity_gate": ..., "t_mid": ...,
                "amplitude_gate": null},
      "roc": {"thresholds": [...], "trials": 100, "clutter_levels": [50,100,200]},
      "bench": {"n_values": [...], "h_values": [...], "passes": 3},
      "out_dir": ".", "format": "csv"
    }

One seed governs a run: the --seed flag beats the file's "seed", which beats
the scenario's own rng_seed. The config hash covers every value that can
influence output numbers (out_dir/format/threads are excluded — they change
where and how results are written, not what they are).
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import List, Optional

from .engine import DLConfig
from .errors import ConfigError
from .evaluation import MatchCriteria, default_match_criteria
from .scenario import (
    ScenarioConfig,
    TargetSpec,
    single_target_scenario,
    three_target_scenario,
)

_SCENARIO_PRESETS = {
    "three_target": three_target_scenario,
    "single_target": single_target_scenario,
}

_DEFAULT_ROC_THRESHOLDS = [float(v) for v in range(-25, 155, 5)]
_DEFAULT_ROC_TRIALS = 100
_DEFAULT_ROC_CLUTTER = [50, 100, 200]
_DEFAULT_BENCH_N = [500, 1000, 2000, 4000, 8000]
_DEFAULT_BENCH_H = [2, 4, 8]


@dataclass
class RunConfig:
    scenario: ScenarioConfig
    dl: DLConfig
    match: MatchCriteria
    detection_threshold: float = 0.0
    roc_thresholds: List[float] = field(default_factory=lambda: list(_DEFAULT_ROC_THRESHOLDS))
    roc_trials: int = _DEFAULT_ROC_TRIALS
    roc_clutter_levels: List[int] = field(default_factory=lambda: list(_DEFAULT_ROC_CLUTTER))
    bench_n_values: List[int] = field(default_factory=lambda: list(_DEFAULT_BENCH_N))
    bench_h_values: List[int] = field(default_factory=lambda: list(_DEFAULT_BENCH_H))
    bench_passes: int = 3
    seed: int = 0
    out_dir: str = "."
    fmt: str = "csv"

    def resolved_dict(self) -> dict:
        """Every output-affecting value, fully resolved, JSON-ready."""
        sc = dataclasses.asdict(self.scenario)
        sc["targets"] = [list(dataclasses.astuple(t)) for t in self.scenario.targets]
        dl = dataclasses.asdict(self.dl)
        match = dataclasses.asdict(self.match)
        return {
            "seed": self.seed,
            "detection_threshold": self.detection_threshold,
            "scenario": sc,
            "dl": dl,
            "match": match,
            "roc": {
                "thresholds": list(self.roc_thresholds),
                "trials": self.roc_trials,
                "clutter_levels": list(self.roc_clutter_levels),
            },
            "bench": {
                "n_values": list(self.bench_n_values),
                "h_values": list(self.bench_h_values),
                "passes": self.bench_passes,
            },
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.resolved_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def output_header(self) -> str:
        return f"config_sha256={self.config_hash()} seed={self.seed}"


def _reject_unknown(section: dict, allowed, path: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown config key: {path}{key}")


def _build_scenario(raw: Optional[dict]) -> ScenarioConfig:
    if raw is None:
        return three_target_scenario()
    allowed = {"preset"} | {f.name for f in dataclasses.fields(ScenarioConfig)}
    _reject_unknown(raw, allowed, "scenario.")
    raw = dict(raw)
    preset = raw.pop("preset", None)
    if preset is not None:
        if preset not in _SCENARIO_PRESETS:
            raise ConfigError(
                f"scenario.preset must be one of {sorted(_SCENARIO_PRESETS)}"
            )
        base = _SCENARIO_PRESETS[preset]()
    else:
        base = None
    if "targets" in raw:
        raw["targets"] = [_build_target(t, i) for i, t in enumerate(raw["targets"])]
    for name in ("area", "sensor_sigma", "amplitude_bounds", "doppler_bounds"):
        if name in raw and isinstance(raw[name], list):
            raw[name] = tuple(raw[name])
    try:
        if base is not None:
            return dataclasses.replace(base, **raw)
        return ScenarioConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad scenario section: {exc}") from exc


def _build_target(t, index: int) -> TargetSpec:
    if isinstance(t, dict):
        _reject_unknown(t, {"x0", "y0", "vx", "vy", "a_mean"},
                        f"scenario.targets[{index}].")
        try:
            return TargetSpec(**t)
        except TypeError as exc:
            raise ConfigError(f"scenario.targets[{index}]: {exc}") from exc
    if isinstance(t, (list, tuple)) and len(t) == 5:
        return TargetSpec(*[float(v) for v in t])
    raise ConfigError(
        f"scenario.targets[{index}] must be [x0,y0,vx,vy,a_mean] or a dict"
    )


def _derive_sigma_floor(scenario: ScenarioConfig):
    """Sensor-noise floors; dimensions with zero sensor noise fall back to
    the engine's generic defaults."""
    generic = DLConfig.__dataclass_fields__["sigma_floor"].default
    return tuple(
        s if s > 0 else g for s, g in zip(scenario.sensor_sigma, generic)
    )


def _build_dl(raw: Optional[dict], scenario: ScenarioConfig) -> DLConfig:
    allowed = {f.name for f in dataclasses.fields(DLConfig)}
    raw = dict(raw) if raw else {}
    _reject_unknown(raw, allowed, "dl.")
    if raw.get("sigma_floor") is None:
        raw["sigma_floor"] = _derive_sigma_floor(scenario)
    else:
        raw["sigma_floor"] = tuple(raw["sigma_floor"])
    try:
        return DLConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad dl section: {exc}") from exc


def _build_match(raw: Optional[dict], scenario: ScenarioConfig) -> MatchCriteria:
    if raw is None:
        return default_match_criteria(scenario)
    _reject_unknown(raw, {"position_gate", "velocity_gate", "t_mid",
                          "amplitude_gate"}, "match.")
    base = default_match_criteria(scenario)
    kwargs = dict(
        position_gate=raw.get("position_gate", base.position_gate),
        velocity_gate=raw.get("velocity_gate", base.velocity_gate),
        t_mid=raw.get("t_mid", base.t_mid),
        amplitude_gate=raw.get("amplitude_gate"),
    )
    return MatchCriteria(**kwargs)


def resolve_run_config(
    raw: Optional[dict] = None,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    fmt: Optional[str] = None,
) -> RunConfig:
    """Turn a parsed config dict plus flag overrides into a RunConfig."""
    raw = dict(raw) if raw else {}
    _reject_unknown(raw, {"seed", "detection_threshold", "scenario", "dl",
                          "match", "roc", "bench", "out_dir", "format"}, "")
    scenario = _build_scenario(raw.get("scenario"))

    eff_seed = seed
    if eff_seed is None:
        eff_seed = raw.get("seed")
    if eff_seed is None:
        eff_seed = scenario.rng_seed
    eff_seed = int(eff_seed)
    scenario.rng_seed = eff_seed

    dl_raw = dict(raw.get("dl") or {})
    dl_raw.setdefault("rng_seed", eff_seed)
    dl = _build_dl(dl_raw, scenario)
    match = _build_match(raw.get("match"), scenario)

    roc_raw = dict(raw.get("roc") or {})
    _reject_unknown(roc_raw, {"thresholds", "trials", "clutter_levels"}, "roc.")
    bench_raw = dict(raw.get("bench") or {})
    _reject_unknown(bench_raw, {"n_values", "h_values", "passes"}, "bench.")

    thresholds = [float(v) for v in roc_raw.get("thresholds", _DEFAULT_ROC_THRESHOLDS)]
    if not thresholds:
        raise ConfigError("roc.thresholds must not be empty")

    eff_fmt = fmt or raw.get("format", "csv")
    if eff_fmt not in ("csv", "json"):
        raise ConfigError("format must be 'csv' or 'json'")

    return RunConfig(
        scenario=scenario,
        dl=dl,
        match=match,
        detection_threshold=float(raw.get("detection_threshold", 0.0)),
        roc_thresholds=thresholds,
        roc_trials=int(roc_raw.get("trials", _DEFAULT_ROC_TRIALS)),
        roc_clutter_levels=[int(v) for v in roc_raw.get("clutter_levels", _DEFAULT_ROC_CLUTTER)],
        bench_n_values=[int(v) for v in bench_raw.get("n_values", _DEFAULT_BENCH_N)],
        bench_h_values=[int(v) for v in bench_raw.get("h_values", _DEFAULT_BENCH_H)],
        bench_passes=int(bench_raw.get("passes", 3)),
        seed=eff_seed,
        out_dir=out_dir or raw.get("out_dir", "."),
        fmt=eff_fmt,
    )


def load_run_config(path: Optional[str] = None, **overrides) -> RunConfig:
    """Read the JSON config file (if any) and apply flag overrides."""
    raw = None
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"config {path} is not valid JSON (line {exc.lineno}): {exc.msg}"
            ) from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
    return resolve_run_config(raw, **overrides)
