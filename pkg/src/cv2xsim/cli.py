"""Command-line entry points: single runs, baseline-vs-scheme sweeps, config
validation, and preset listing.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import os
import sys
from pathlib import Path

from . import __version__, config, dcc, engine, metrics, mobility


def _parse_sets(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise config.ConfigError(f"--set expects section.key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def _out_root(explicit: str | None) -> Path:
    return Path(explicit or os.environ.get("CV2XSIM_OUT", "runs"))


def _resolve_from_args(args) -> dict[str, object]:
    file_values = config.read_config_file(args.config) if args.config else None
    overrides = _parse_sets(args.set)
    return config.resolve(file_values, overrides, scenario=args.scenario,
                          scheme=args.scheme, seed=args.seed)


def write_outputs(out_dir: Path, resolved: dict[str, object],
                  result: engine.RunResult) -> dict:
    """Emit the full artifact set for one run and return its summary."""
    out_dir.mkdir(parents=True, exist_ok=True)
    config.write_manifest(out_dir / "manifest.json", resolved, __version__)

    store = result.metrics
    pdr_rows = metrics.pdr(store)
    slt_rows = metrics.slt(store, result.observation_s)
    ipg = metrics.ipg_stats(store)
    blind = metrics.blind_nodes(store)
    metrics.write_pdr_csv(out_dir / "pdr_vs_distance.csv", pdr_rows)
    metrics.write_slt_csv(out_dir / "slt_vs_distance.csv", slt_rows)
    metrics.write_ipg_csv(out_dir / "ipg.csv", ipg)
    metrics.write_blind_csv(out_dir / "blind_nodes.csv", blind)
    metrics.write_timeseries_csv(out_dir / "timeseries.csv", result.timeseries)
    result.event_log.write_csv(out_dir / "txevents.csv")

    warmup = result.config.warmup_s
    post = [row for row in result.timeseries if row[0] >= warmup]
    summary = {
        "n_ue": result.n_ue,
        "observation_s": result.observation_s,
        "tx_events": len(result.event_log.tx_events),
        "event_log_digest": result.event_log.digest(),
        "mean_cbp_pct": sum(r[1] for r in post) / len(post) if post else 0.0,
        "mean_power_dbm": sum(r[2] for r in post) / len(post) if post else 0.0,
        "mean_itt_ms": sum(r[3] for r in post) / len(post) if post else 0.0,
        "blind_ue_count": blind.blind_ue_count,
        "blind_pairs": len(blind.pairs),
        "collided_by_second": {str(k): v for k, v in sorted(result.collided_by_second().items())},
    }
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary


def execute_run(resolved: dict[str, object], out_dir: Path) -> dict:
    cfg = config.build_run_config(resolved)
    result = engine.run(cfg)
    return write_outputs(out_dir, resolved, result)


def _cmd_run(args) -> int:
    resolved = _resolve_from_args(args)
    name = f"{resolved['run.scenario']}__{resolved['run.scheme']}__seed{resolved['run.seed']}"
    out_dir = Path(args.out) if args.out else _out_root(None) / name
    summary = execute_run(resolved, out_dir)
    print(f"run complete: {out_dir}")
    print(f"  tx_events={summary['tx_events']} blind_ues={summary['blind_ue_count']} "
          f"mean_itt={summary['mean_itt_ms']:.1f}ms mean_cbp={summary['mean_cbp_pct']:.1f}%")
    return 0


def _read_bin_csv(path: Path, value_col: str) -> list[metrics.BinValue]:
    rows = []
    with open(path) as f:
        for rec in csv.DictReader(f):
            rows.append(metrics.BinValue(float(rec["bin_lo_m"]), float(rec["bin_hi_m"]),
                                         float(rec[value_col]), int(rec["n_pairs"])))
    return rows


def _sweep_worker(job) -> tuple[str, str, int, str]:
    resolved, out_dir = job
    execute_run(resolved, Path(out_dir))
    return (resolved["run.scenario"], resolved["run.scheme"], resolved["run.seed"], out_dir)


def _mean_gains(per_seed: list[list[metrics.GainBin]]) -> list[metrics.GainBin]:
    by_bin: dict[tuple[float, float], list[metrics.GainBin]] = {}
    for rows in per_seed:
        for g in rows:
            by_bin.setdefault((g.bin_lo_m, g.bin_hi_m), []).append(g)
    out = []
    for (lo, hi), entries in sorted(by_bin.items()):
        out.append(metrics.GainBin(lo, hi,
                                   sum(e.pdr_gain_pp for e in entries) / len(entries),
                                   sum(e.slt_gain_bps for e in entries) / len(entries)))
    return out


def _cmd_sweep(args) -> int:
    scenarios = [s.strip() for s in args.scenarios.split(",") if s.strip()]
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not scenarios or not schemes or not seeds:
        raise config.ConfigError("sweep needs at least one scenario, scheme, and seed")
    file_values = config.read_config_file(args.config) if args.config else None
    overrides = _parse_sets(args.set)
    root = _out_root(args.out)

    jobs = []
    for scenario in scenarios:
        for scheme in schemes:
            for seed in seeds:
                resolved = config.resolve(file_values, overrides, scenario=scenario,
                                          scheme=scheme, seed=seed)
                out_dir = root / f"{scenario}__{scheme}__seed{seed}"
                jobs.append((resolved, str(out_dir)))

    failures = []
    with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
        futures = {pool.submit(_sweep_worker, job): job for job in jobs}
        for fut in concurrent.futures.as_completed(futures):
            resolved, out_dir = futures[fut]
            tag = f"{resolved['run.scenario']}/{resolved['run.scheme']}/seed{resolved['run.seed']}"
            try:
                fut.result()
                print(f"done {tag}")
            except Exception as e:  # noqa: BLE001 - sweep reports every failure
                failures.append(f"{tag}: {e}")
    if failures:
        print("sweep failed:", file=sys.stderr)
        for f in failures:
            print(f"  {f}", file=sys.stderr)
        return 3

    # per-scheme gains against the baseline run of the same scenario and seed
    if "baseline" in schemes:
        for scenario in scenarios:
            for scheme in schemes:
                if scheme == "baseline":
                    continue
                per_seed = []
                for seed in seeds:
                    sdir = root / f"{scenario}__{scheme}__seed{seed}"
                    bdir = root / f"{scenario}__baseline__seed{seed}"
                    per_seed.append(metrics.gains(
                        _read_bin_csv(sdir / "pdr_vs_distance.csv", "pdr"),
                        _read_bin_csv(sdir / "slt_vs_distance.csv", "slt_bytes_per_s"),
                        _read_bin_csv(bdir / "pdr_vs_distance.csv", "pdr"),
                        _read_bin_csv(bdir / "slt_vs_distance.csv", "slt_bytes_per_s")))
                metrics.write_gains_csv(root / f"gains__{scenario}__{scheme}.csv",
                                        _mean_gains(per_seed), n_seeds=len(seeds))
    print(f"sweep complete: {len(jobs)} runs under {root}")
    return 0


def _cmd_validate(args) -> int:
    resolved = _resolve_from_args(args)
    config.build_run_config(resolved)
    print("configuration OK; resolved values:")
    for key in sorted(resolved):
        print(f"  {key} = {resolved[key]}")
    return 0


def _cmd_presets(_args) -> int:
    print("scenario presets:")
    for p in mobility.PRESETS.values():
        print(f"  {p.name:16s} {p.vehicle_count:5d} vehicles  "
              f"{p.density_veh_km_lane:6.1f} veh/(km.lane)  {p.speed_kmh:5.1f} km/h  "
              f"{p.road_length_km:.1f} km {'ring' if p.wraparound else 'road'}")
    print("congestion-control schemes:")
    for s in dcc.SCHEMES.values():
        if not s.enabled:
            print(f"  {s.name:8s} rate/range control off (100 ms, max power)")
            continue
        extra = f"  slrrc [{s.slrrc_min},{s.slrrc_max}]" if s.slrrc_min is not None else ""
        print(f"  {s.name:8s} B={s.rate.density_coefficient:<4.0f} "
              f"P [{s.range.p_min_dbm:g},{s.range.p_max_dbm:g}] dBm  "
              f"U [{s.range.u_min_pct:g},{s.range.u_max_pct:g}] %{extra}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cv2xsim",
                                     description="C-V2X mode-4 sidelink simulator")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="INI config file or a prior run's manifest.json")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one resolved value (repeatable)")

    p_run = sub.add_parser("run", help="execute one simulation")
    add_common(p_run)
    p_run.add_argument("--scenario", help="scenario preset name")
    p_run.add_argument("--scheme", help="congestion-control scheme name")
    p_run.add_argument("--seed", type=int, help="run seed")
    p_run.add_argument("--out", help="output directory (default: $CV2XSIM_OUT/<auto>)")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a scenario x scheme x seed grid")
    add_common(p_sweep)
    p_sweep.add_argument("--scenarios", required=True, help="comma-separated preset names")
    p_sweep.add_argument("--schemes", required=True, help="comma-separated scheme names")
    p_sweep.add_argument("--seeds", required=True, help="comma-separated integers")
    p_sweep.add_argument("--workers", type=int, default=None, help="parallel worker count")
    p_sweep.add_argument("--out", help="output root (default: $CV2XSIM_OUT or ./runs)")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_val = sub.add_parser("validate", help="check a configuration without running")
    add_common(p_val)
    p_val.add_argument("--scenario", help="scenario preset name")
    p_val.add_argument("--scheme", help="congestion-control scheme name")
    p_val.add_argument("--seed", type=int, help="run seed")
    p_val.set_defaults(func=_cmd_validate)

    p_presets = sub.add_parser("presets", help="list scenario and scheme presets")
    p_presets.set_defaults(func=_cmd_presets)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except config.ConfigError as e:
        print(f"configuration error:\n{e}", file=sys.stderr)
        return 2
    except (KeyError, FileNotFoundError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
