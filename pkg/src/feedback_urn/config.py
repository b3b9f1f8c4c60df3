"""TOML experiment files: parsing into :class:`ScenarioConfig` and writing back.

Grammar (unknown keys anywhere are errors)::

    output_dir = "runs/urn"        # optional
    plot = true                    # optional, default true

    [[scenario]]
    name = "top1-top2"             # required, unique
    engine = "urn"                 # "urn" | "sepp"
    horizon_days = 1000
    reps = 1000
    master_seed = 1
    correction = "none"            # "none" | "discovered_rejection" | "mixed_rejection"
    unvisited_reported = "as_reported"
    training_window_days = 180     # sepp
    warmup_days = 180              # sepp, defaults to the window
    warm_start = true              # sepp
    em_max_iters = 20              # sepp, per day
    em_tolerance = 1e-5            # sepp
    target = 0.567                 # optional golden value for the day-H median
    tolerance = 0.02               # optional

    [scenario.incident_mode]
    kind = "mixed"                 # "discovered_only" | "mixed"
    w_d = 0.5
    w_r = 0.5

    [scenario.decay]               # urn
    p_d = 0.01
    mode = "expected_multiplicative"

    [[scenario.regions]]
    label = "Top1"
    prior = 609
    rate = 3.69

``mixed_rejection`` takes its weights from ``incident_mode``.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .correction import CorrectionKind, CorrectionMode
from .deployment import Engine, IncidentKind, IncidentMode, RegionSpec, ScenarioConfig
from .errors import ConfigError
from .urn import DecayPolicy

__all__ = ["ExperimentFile", "load_config", "loads_config", "dumps_config", "scenario_from_dict", "scenario_to_dict"]

_TOP_KEYS = {"output_dir", "plot", "scenario"}
_SCALAR_KEYS = {
    "name", "engine", "horizon_days", "reps", "master_seed", "training_window_days", "warmup_days",
    "unvisited_reported", "warm_start", "em_max_iters", "em_tolerance", "target", "tolerance",
}
_SCENARIO_KEYS = _SCALAR_KEYS | {"correction", "incident_mode", "decay", "regions"}


@dataclass(frozen=True)
class ExperimentFile:
    scenarios: tuple[ScenarioConfig, ...]
    output_dir: str | None = None
    plot: bool = True


def _reject_unknown(where: str, table: dict, allowed: set[str]) -> None:
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


def _table(where: str, value: Any) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a table")
    return value


def scenario_from_dict(raw: dict) -> ScenarioConfig:
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigError("scenario: missing 'name'")
    where = f"scenario {name!r}"
    _reject_unknown(where, raw, _SCENARIO_KEYS)

    regions_raw = raw.get("regions")
    if not isinstance(regions_raw, list) or not regions_raw:
        raise ConfigError(f"{where}: needs a [[scenario.regions]] list")
    regions = []
    for i, r in enumerate(regions_raw):
        r = _table(f"{where} region {i}", r)
        _reject_unknown(f"{where} region {i}", r, {"label", "prior", "rate"})
        try:
            regions.append(RegionSpec(str(r["label"]), float(r["prior"]), float(r["rate"])))
        except KeyError as exc:
            raise ConfigError(f"{where} region {i}: missing {exc.args[0]!r}") from None

    try:
        im_raw = _table(f"{where} incident_mode", raw.get("incident_mode", {}))
        _reject_unknown(f"{where} incident_mode", im_raw, {"kind", "w_d", "w_r"})
        kind = IncidentKind(im_raw.get("kind", "discovered_only"))
        if kind is IncidentKind.MIXED:
            if "w_d" not in im_raw or "w_r" not in im_raw:
                raise ConfigError(f"{where}: mixed incident mode needs w_d and w_r")
            incident_mode = IncidentMode(kind, float(im_raw["w_d"]), float(im_raw["w_r"]))
        else:
            incident_mode = IncidentMode(kind)

        ck = CorrectionKind(raw.get("correction", "none"))
        if ck is CorrectionKind.MIXED_REJECTION:
            correction = CorrectionMode(ck, incident_mode.w_d, incident_mode.w_r)
        else:
            correction = CorrectionMode(ck)

        decay_raw = _table(f"{where} decay", raw.get("decay", {}))
        _reject_unknown(f"{where} decay", decay_raw, {"p_d", "mode"})
        decay = DecayPolicy(**decay_raw) if decay_raw else DecayPolicy(0.01)

        kwargs = {k: raw[k] for k in _SCALAR_KEYS if k in raw}
        return ScenarioConfig(
            regions=tuple(regions), incident_mode=incident_mode, correction=correction, decay=decay, **kwargs
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    out: dict[str, Any] = {}
    defaults = {f.name: f.default for f in fields(ScenarioConfig)}
    for key in ("name", "engine", "horizon_days", "reps", "master_seed"):
        out[key] = getattr(cfg, key)
    out["engine"] = cfg.engine.value
    out["correction"] = cfg.correction.kind.value
    for key in sorted(_SCALAR_KEYS - set(out)):
        value = getattr(cfg, key)
        if value is None or value == defaults.get(key):
            continue
        out[key] = getattr(value, "value", value)
    im = cfg.incident_mode
    out["incident_mode"] = {"kind": im.kind.value}
    if im.mixed:
        out["incident_mode"].update(w_d=im.w_d, w_r=im.w_r)
    if cfg.engine is Engine.URN:
        out["decay"] = {"p_d": cfg.decay.p_d, "mode": cfg.decay.mode.value}
    out["regions"] = [{"label": r.label, "prior": r.prior, "rate": r.rate} for r in cfg.regions]
    return out


def loads_config(text: str) -> ExperimentFile:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"not valid TOML: {exc}") from None
    _reject_unknown("config", raw, _TOP_KEYS)
    scen_raw = raw.get("scenario")
    if not isinstance(scen_raw, list) or not scen_raw:
        raise ConfigError("config: needs at least one [[scenario]]")
    scenarios = tuple(scenario_from_dict(_table("scenario", s)) for s in scen_raw)
    names = [s.name for s in scenarios]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError(f"config: duplicate scenario names {dupes}")
    output_dir = raw.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("config: output_dir must be a string")
    plot = raw.get("plot", True)
    if not isinstance(plot, bool):
        raise ConfigError("config: plot must be true or false")
    return ExperimentFile(scenarios, output_dir, plot)


def load_config(path: str | Path) -> ExperimentFile:
    return loads_config(Path(path).read_text(encoding="utf-8"))


def dumps_config(exp: ExperimentFile) -> str:
    doc: dict[str, Any] = {}
    if exp.output_dir is not None:
        doc["output_dir"] = exp.output_dir
    doc["plot"] = exp.plot
    doc["scenario"] = [scenario_to_dict(s) for s in exp.scenarios]
    return tomli_w.dumps(doc)
