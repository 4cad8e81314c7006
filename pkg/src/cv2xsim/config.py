"""Run configuration: INI-style files with sections, named presets, CLI
overrides, strict key checking, and reproducible manifests."""

from __future__ import annotations

import configparser
import difflib
import json
from dataclasses import asdict

from . import dcc, mobility
from .channel import ChannelModel
from .dcc import DccScheme, RangeControlConfig, RateControlConfig
from .engine import RunConfig
from .mac_sps import SpsConfig


class ConfigError(Exception):
    """Raised with one message per violation, newline-joined."""

    def __init__(self, errors):
        self.errors = list(errors) if isinstance(errors, (list, tuple)) else [errors]
        super().__init__("\n".join(str(e) for e in self.errors))


_RUN_DEFAULTS = {
    "duration_s": 20.0, "warmup_s": 10.0, "seed": 1, "subchannels": 2,
    "payload_bytes": 190, "mcs_index": 5, "scenario": "freeway-high",
    "scheme": "baseline", "mobility_tick_ms": 100, "density_period_ms": 1000,
    "power_period_ms": 200, "cbp_window_ms": 100, "cbp_rssi_threshold_dbm": -94.0,
    "timeseries_period_ms": 1000, "log_rx_outcomes": False,
}
_SCENARIO_DEFAULTS = {
    "vehicle_count": 300, "speed_kmh": 140.0, "road_length_km": 3.6, "lanes": 12,
    "lane_width_m": 4.0, "wraparound": False, "region": "middle-third",
    "speed_sigma": 0.0, "speed_reversion": 0.5,
}
_METRICS_DEFAULTS = {"bin_width_m": 25.0, "roi_radius_m": 100.0}
_CR_DEFAULTS = {"enabled": False, "cbp_limit": 0.6, "calibration": "0:0,1:200"}


def default_config() -> dict[str, object]:
    """Flat {section.key: value} map with every supported key."""
    out = {}
    for section, mapping in (
            ("run", _RUN_DEFAULTS),
            ("channel", asdict(ChannelModel())),
            ("sps", asdict(SpsConfig())),
            ("rate", asdict(RateControlConfig())),
            ("range", asdict(RangeControlConfig())),
            ("scenario", _SCENARIO_DEFAULTS),
            ("metrics", _METRICS_DEFAULTS),
            ("cr", _CR_DEFAULTS)):
        for key, value in mapping.items():
            out[f"{section}.{key}"] = value
    return out


def _convert(key: str, raw, default):
    if not isinstance(raw, str):
        if isinstance(default, bool):
            return bool(raw)
        if isinstance(default, float) and isinstance(raw, (int, float)):
            return float(raw)
        return raw
    text = raw.strip()
    if default is None or isinstance(default, float):
        if text.lower() in ("none", "null", ""):
            if default is None:
                return None
            raise ConfigError(f"{key}: expected a number, got {raw!r}")
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if isinstance(default, bool):
        if text.lower() in ("true", "yes", "on", "1"):
            return True
        if text.lower() in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    return text


def _reject_unknown(key: str, known: dict) -> None:
    if key in known:
        return
    hint = difflib.get_close_matches(key, known.keys(), n=1)
    suffix = f" (did you mean {hint[0]!r}?)" if hint else ""
    raise ConfigError(f"unknown config key {key!r}{suffix}")


def _apply(resolved: dict, updates: dict[str, object], errors: list) -> None:
    for key, raw in updates.items():
        try:
            _reject_unknown(key, resolved)
            resolved[key] = _convert(key, raw, resolved[key])
        except ConfigError as e:
            errors.extend(e.errors)


def _scheme_layer(name: str) -> dict[str, object]:
    scheme = dcc.scheme_by_name(name)
    layer: dict[str, object] = {}
    for key, value in asdict(scheme.rate).items():
        layer[f"rate.{key}"] = value
    for key, value in asdict(scheme.range).items():
        layer[f"range.{key}"] = value
    if scheme.slrrc_min is not None:
        layer["sps.slrrc_min"] = scheme.slrrc_min
        layer["sps.slrrc_max"] = scheme.slrrc_max
    if scheme.p_resel is not None:
        layer["sps.p_resel"] = scheme.p_resel
    return layer


def _scenario_layer(name: str) -> dict[str, object]:
    preset = mobility.preset_by_name(name)
    layer = {f"scenario.{k}": getattr(preset, k) for k in _SCENARIO_DEFAULTS}
    layer.update(preset.adjustments)
    return layer


def read_config_file(path: str) -> dict[str, object]:
    """Parse an INI config (or a run manifest in JSON) into {section.key: raw}."""
    text = open(path).read()
    if path.endswith(".json"):
        data = json.loads(text)
        return dict(data["config"] if "config" in data else data)
    parser = configparser.ConfigParser()
    parser.read_string(text, source=path)
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            out[f"{section}.{key}"] = value
    return out


def resolve(file_values: dict[str, object] | None = None,
            overrides: dict[str, object] | None = None,
            scenario: str | None = None, scheme: str | None = None,
            seed: int | None = None) -> dict[str, object]:
    """Layer defaults, scheme preset, scenario preset, file, then overrides.

    CLI arguments (scenario/scheme/seed) beat the file's [run] entries; every
    key is validated against the schema with a nearest-name suggestion.
    """
    errors: list[str] = []
    resolved = default_config()
    file_values = dict(file_values or {})
    overrides = dict(overrides or {})

    scheme_name = scheme or overrides.get("run.scheme") or file_values.get("run.scheme") \
        or resolved["run.scheme"]
    scenario_name = scenario or overrides.get("run.scenario") or file_values.get("run.scenario") \
        or resolved["run.scenario"]
    try:
        _apply(resolved, _scheme_layer(str(scheme_name)), errors)
        resolved["run.scheme"] = str(scheme_name)
    except KeyError as e:
        errors.append(str(e.args[0]))
    try:
        _apply(resolved, _scenario_layer(str(scenario_name)), errors)
        resolved["run.scenario"] = str(scenario_name)
    except KeyError as e:
        errors.append(str(e.args[0]))

    _apply(resolved, file_values, errors)
    _apply(resolved, overrides, errors)
    resolved["run.scheme"] = str(scheme_name)
    resolved["run.scenario"] = str(scenario_name)
    if seed is not None:
        resolved["run.seed"] = int(seed)
    if errors:
        raise ConfigError(errors)
    return resolved


def _section(resolved: dict, name: str) -> dict:
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in resolved.items() if k.startswith(prefix)}


def parse_calibration(text: str) -> tuple[tuple[float, float], ...]:
    """Comma-separated cbp:density pairs, e.g. "0:0,0.5:100,1:200"."""
    points = []
    for part in str(text).split(","):
        cbp, _, density = part.partition(":")
        points.append((float(cbp), float(density)))
    return tuple(points)


def build_run_config(resolved: dict[str, object]) -> RunConfig:
    """Materialize the typed RunConfig; invariant violations become ConfigError."""
    errors: list[str] = []
    channel = sps = rate = rng_cfg = preset = None
    try:
        channel = ChannelModel(**_section(resolved, "channel"))
    except (ValueError, TypeError) as e:
        errors.append(f"[channel] {e}")
    try:
        sps = SpsConfig(**_section(resolved, "sps"))
    except (ValueError, TypeError) as e:
        errors.append(f"[sps] {e}")
    try:
        rate = RateControlConfig(**_section(resolved, "rate"))
    except (ValueError, TypeError) as e:
        errors.append(f"[rate] {e}")
    try:
        rng_cfg = RangeControlConfig(**_section(resolved, "range"))
    except (ValueError, TypeError) as e:
        errors.append(f"[range] {e}")
    try:
        preset = mobility.ScenarioPreset(name=str(resolved["run.scenario"]),
                                         **_section(resolved, "scenario"))
    except (ValueError, TypeError) as e:
        errors.append(f"[scenario] {e}")
    run = _section(resolved, "run")
    if run["warmup_s"] >= run["duration_s"]:
        errors.append("run.warmup_s must be below run.duration_s")
    try:
        calibration = parse_calibration(resolved["cr.calibration"])
    except ValueError as e:
        errors.append(f"cr.calibration: {e}")
        calibration = ((0.0, 0.0), (1.0, 200.0))
    if errors:
        raise ConfigError(errors)

    scheme_name = str(run["scheme"])
    scheme = DccScheme(name=scheme_name, enabled=scheme_name != "baseline",
                       rate=rate, range=rng_cfg)
    cfg = RunConfig(
        scenario=preset, scheme=scheme, channel=channel, sps=sps,
        duration_s=float(run["duration_s"]), warmup_s=float(run["warmup_s"]),
        seed=int(run["seed"]), subchannels=int(run["subchannels"]),
        payload_bytes=int(run["payload_bytes"]), mcs_index=int(run["mcs_index"]),
        mobility_tick_ms=int(run["mobility_tick_ms"]),
        density_period_ms=int(run["density_period_ms"]),
        power_period_ms=int(run["power_period_ms"]),
        cbp_window_ms=int(run["cbp_window_ms"]),
        cbp_rssi_threshold_dbm=float(run["cbp_rssi_threshold_dbm"]),
        timeseries_period_ms=int(run["timeseries_period_ms"]),
        bin_width_m=float(resolved["metrics.bin_width_m"]),
        roi_radius_m=float(resolved["metrics.roi_radius_m"]),
        log_rx_outcomes=bool(run["log_rx_outcomes"]),
        cr_limit_enabled=bool(resolved["cr.enabled"]),
        cbp_limit=float(resolved["cr.cbp_limit"]),
        cr_calibration=calibration)
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError([str(e)]) from None
    return cfg


def write_manifest(path, resolved: dict[str, object], version: str) -> None:
    body = {"tool": "cv2xsim", "version": version,
            "config": {k: resolved[k] for k in sorted(resolved)}}
    with open(path, "w") as f:
        json.dump(body, f, indent=2, sort_keys=True)
        f.write("\n")
