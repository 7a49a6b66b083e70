"""``laneform`` command line: runs, presets, sweeps and artifact writing.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.  Every command writes ``manifest.json`` next to its
artifacts; each CSV has a JSON sidecar carrying the run id.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_from_dict, config_to_dict, load_config, set_dotted
from .diagnostics import classify_lanes, entropy_report
from .io import ArtifactWriter, run_id_for
from .lattice import LatticeError
from .model import InitialConditionError, ScenarioConfig
from .pde import PDEError
from .runner import (
    TIMESERIES_HEADER,
    CompareSetupError,
    run_compare,
    run_lattice,
    run_pde,
    run_sample,
    run_stationary,
    summary,
    timeseries_row,
)
from .scenarios import PRESETS, preset
from .stationary import StationaryError, overlap_metrics

logger = logging.getLogger("laneform")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("pde", "lattice", "sample", "stationary", "compare", "scenario", "sweep")
SWEEPABLE = ("pde", "lattice", "stationary")
# shorthand axis names
AXIS_ALIASES = {"c": ("initial.c_r", "initial.c_b")}


def _snapshot_name(k: int) -> str:
    return f"snapshots/snapshot_{k:04d}.csv"


# ---------------------------------------------------------------------------
# per-command artifact writers; each returns the summary dict


def _write_pde(cfg: ScenarioConfig, w: ArtifactWriter) -> dict:
    run = run_pde(cfg)
    meta = {"seed": cfg.seed, "scheme": cfg.solver.scheme, "variant": cfg.solver.variant,
            "params": config_to_dict(cfg.params)}
    w.write_csv("timeseries.csv", TIMESERIES_HEADER, run.rows(cfg.grid), meta)
    if cfg.output.snapshots:
        for k, (s, rep) in enumerate(zip(run.states, run.reports)):
            w.write_snapshot(_snapshot_name(k), s, cfg.grid, dict(
                meta, t=s.t, step=run.step_index[k], dt=run.step_size[k], dt_max=run.dt_max,
                entropy=rep.E, masses=list(s.masses(cfg.grid))))
    return summary(cfg, run)


def _write_lattice(cfg: ScenarioConfig, w: ArtifactWriter) -> dict:
    run = run_lattice(cfg)
    grid, p = cfg.grid, cfg.params
    meta = {"seed": cfg.seed, "rate_scale": run.rate_scale, "params": config_to_dict(p)}
    rows = []
    for k, s in zip(run.steps, run.states):
        rep = entropy_report(s, grid, p)
        rows.append((k,) + timeseries_row(s, rep, grid))
    w.write_csv("timeseries.csv", ("step",) + TIMESERIES_HEADER, rows, meta)
    if cfg.output.snapshots:
        for k, s in enumerate(run.states):
            w.write_snapshot(_snapshot_name(k), s, grid, dict(meta, t=s.t, step=run.steps[k]), with_rho=False)
    first, last = run.states[0], run.states[-1]
    lanes = classify_lanes(last, grid, p=p)
    return {
        "t_end": last.t,
        "steps": run.steps[-1],
        "rate_scale": run.rate_scale,
        "classification": lanes.classification,
        "crossing_y": lanes.crossing_y,
        "mass_drift": (np.array(last.masses(grid)) - np.array(first.masses(grid))).tolist(),
        "min_r": float(min(s.r.min() for s in run.states)),
        "min_b": float(min(s.b.min() for s in run.states)),
        "max_rho": float(max(s.rho.max() for s in run.states)),
    }


def _write_sample(cfg: ScenarioConfig, w: ArtifactWriter) -> dict:
    run = run_sample(cfg)
    grid = cfg.grid
    meta = {"seed": cfg.seed, "ensemble": cfg.lattice.ensemble, "sweeps": run.sweeps,
            "rate_scale": run.rate_scale, "params": config_to_dict(cfg.params), "t": run.mean.t}
    w.write_snapshot("ensemble_mean.csv", run.mean, grid, meta, with_rho=False)
    w.write_snapshot("master_reference.csv", run.reference, grid, meta, with_rho=False)
    z = np.abs(run.z)
    return {
        "t_end": run.mean.t,
        "sweeps": run.sweeps,
        "ensemble": cfg.lattice.ensemble,
        "rate_scale": run.rate_scale,
        "max_abs_z": float(z.max()),
        "cells_above_3sigma": int((z > 3.0).sum()),
        "max_abs_diff": float(max(np.abs(run.mean.r - run.reference.r).max(),
                                  np.abs(run.mean.b - run.reference.b).max())),
    }


def _write_stationary(cfg: ScenarioConfig, w: ArtifactWriter) -> dict:
    run = run_stationary(cfg)
    prof = run.profile
    p = cfg.params
    meta = {"seed": cfg.seed, "params": config_to_dict(p), "C": prof.C, "C_drift": prof.C_drift,
            "truncated": prof.truncated, "masses": list(run.masses)}
    w.write_csv("profile.csv", ("y", "r", "b", "rho", "C"),
                zip(prof.y, prof.r, prof.b, prof.rho, prof.curve_values(p)), meta)
    rows = []
    for c in run.curves:
        rows.extend((r, b, c.C) for r, b in zip(c.r, c.b))
    w.write_csv("curves.csv", ("r", "b", "C"), rows,
                {"params": config_to_dict(p), "C_values": [c.C for c in run.curves],
                 "points": [len(c.r) for c in run.curves]})
    dr = np.diff(prof.r)
    db = np.diff(prof.b)
    return {
        "C": prof.C,
        "C_drift": prof.C_drift,
        "truncated": prof.truncated,
        "masses_target": list(run.masses),
        "masses_profile": list(prof.masses(cfg.grid.Lx)),
        "monotone": bool((dr < 0).all() and (db > 0).all()),
        **overlap_metrics(prof, cfg.grid.Lx),
    }


def _write_compare(cfg: ScenarioConfig, w: ArtifactWriter) -> dict:
    levels = run_compare(cfg)
    rows = [(lv.h, lv.grid.Nx, lv.grid.Ny, lv.rate_scale, lv.lattice_steps, lv.pde_steps, lv.T, lv.l2, lv.sup)
            for lv in levels]
    w.write_csv("compare.csv", ("h", "Nx", "Ny", "rate_scale", "lattice_steps", "pde_steps", "T", "l2", "sup"),
                rows, {"seed": cfg.seed, "pde_refine": cfg.compare.pde_refine})
    for lv in levels:
        w.write_snapshot(f"compare/lattice_h{lv.h:g}.csv", lv.lattice, lv.grid, {"h": lv.h, "t": lv.T})
        w.write_snapshot(f"compare/pde_h{lv.h:g}.csv", lv.pde, lv.grid, {"h": lv.h, "t": lv.T})
    l2 = [lv.l2 for lv in levels]
    return {
        "h_levels": [lv.h for lv in levels],
        "l2": l2,
        "sup": [lv.sup for lv in levels],
        "decreasing": all(b < a for a, b in zip(l2, l2[1:])),
    }


WRITERS = {
    "pde": _write_pde,
    "scenario": _write_pde,
    "lattice": _write_lattice,
    "sample": _write_sample,
    "stationary": _write_stationary,
    "compare": _write_compare,
}


# ---------------------------------------------------------------------------
# sweeps


def parse_axis(spec: str) -> tuple[tuple[str, ...], list]:
    """``key[+key2]=v1,v2,...``; values are JSON literals, an empty list is allowed."""
    if "=" not in spec:
        raise ConfigError(f"axis {spec!r}: expected key=v1,v2,...")
    keys_part, values_part = spec.split("=", 1)
    keys: list[str] = []
    for k in keys_part.split("+"):
        k = k.strip()
        if not k:
            raise ConfigError(f"axis {spec!r}: empty key")
        keys.extend(AXIS_ALIASES.get(k, (k,)))
    values = []
    for tok in values_part.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            values.append(json.loads(tok))
        except json.JSONDecodeError:
            values.append(tok)
    return tuple(keys), values


def _sweep_job(args):
    command, raw, out_dir, run_id = args
    cfg = config_from_dict(raw)
    w = ArtifactWriter(out_dir, run_id)
    result = WRITERS[command](cfg, w)
    return result, w.files


def _scalar_items(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is None or isinstance(v, (int, float, str, bool, np.number))}


def run_sweep(command: str, raw: dict, axes, out: Path, writer: ArtifactWriter, workers: int) -> dict:
    combos = list(itertools.product(*(vals for _, vals in axes)))
    if not axes or any(not vals for _, vals in axes):
        combos = []
    jobs = []
    for idx, combo in enumerate(combos):
        data = raw
        for (keys, _), value in zip(axes, combo):
            for key in keys:
                data = set_dotted(data, key, value)
        config_from_dict(data)  # fail fast with exit 2 before any run starts
        jobs.append((command, data, str(out / f"run_{idx:03d}"), writer.run_id))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]

    axis_cols = [keys[0] if len(keys) == 1 else "+".join(keys) for keys, _ in axes]
    summaries = []
    for idx, (combo, (res, files)) in enumerate(zip(combos, results)):
        writer.files.extend(f"run_{idx:03d}/{f}" for f in files)
        summaries.append(dict(zip(axis_cols, combo), run=f"run_{idx:03d}", **_scalar_items(res)))
    metric_cols = sorted({k for s in summaries for k in s} - set(axis_cols) - {"run"})
    header = axis_cols + ["run"] + metric_cols
    writer.write_csv("sweep_summary.csv", header, ([s.get(c) for c in header] for s in summaries),
                     {"axes": [list(k) for k, _ in axes], "command": command})
    return {"runs": len(combos), "axes": {c: v for c, (_, v) in zip(axis_cols, axes)}}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="laneform", description="Bidirectional lane-formation simulator.")
    ap.add_argument("--version", action="version", version=f"laneform {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON scenario config")
        sp.add_argument("--out", default=None, help="output directory (default: runs/<command>)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config value, e.g. params.gamma0=1e-3 (repeatable)")
        sp.add_argument("--workers", type=int, default=1, help="parallel workers (sweeps)")
        sp.add_argument("--log-level", default="WARNING")

    for name in ("pde", "lattice", "sample", "stationary", "compare"):
        common(sub.add_parser(name))
    sc = sub.add_parser("scenario", help="built-in corridor presets")
    sc.add_argument("name", choices=sorted(PRESETS))
    common(sc, config_required=False)
    sw = sub.add_parser("sweep", help="one run per value of the swept key(s)")
    common(sw, config_required=False)
    sw.add_argument("--scenario", choices=sorted(PRESETS), help="sweep a preset instead of --config")
    sw.add_argument("--axis", action="append", default=[], required=True,
                    help="key[+key2]=v1,v2,... ; 'c' sweeps both initial masses")
    sw.add_argument("--run", dest="sweep_command", choices=SWEEPABLE, default="pde",
                    help="command run at each point (default pde)")
    return ap


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _resolve(args) -> tuple[ScenarioConfig, dict]:
    if args.command == "scenario" or (args.command == "sweep" and args.scenario):
        name = args.name if args.command == "scenario" else args.scenario
        if args.config:
            raise ConfigError("--config cannot be combined with a built-in scenario")
        raw = preset(name)
    elif args.config:
        _, raw = load_config(args.config)
    else:
        raise ConfigError("--config or --scenario is required")
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
        key, value = item.split("=", 1)
        raw = set_dotted(raw, key.strip(), _parse_value(value))
    if args.seed is not None:
        raw = dict(raw, seed=args.seed)
    return config_from_dict(raw), raw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    writer = None
    manifest: dict = {"command": args.command, "version": __version__,
                      "started": started.isoformat(), "argv": list(argv if argv is not None else sys.argv[1:])}
    try:
        cfg, raw = _resolve(args)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        axes = [parse_axis(a) for a in args.axis] if args.command == "sweep" else []
        label = args.command if args.command != "scenario" else f"scenario_{args.name}"
        out = Path(args.out) if args.out else Path("runs") / label
        snapshot = config_to_dict(cfg)
        run_id = run_id_for({"command": label, "config": snapshot, "axes": [[list(k), v] for k, v in axes],
                             "sweep_command": getattr(args, "sweep_command", None)})
        manifest.update(config=snapshot, seed=cfg.seed, run_id=run_id)
        writer = ArtifactWriter(out, run_id)
        if args.command == "sweep":
            result = run_sweep(args.sweep_command, raw, axes, out, writer, args.workers)
        else:
            result = WRITERS[args.command](cfg, writer)
            writer.write_json("summary.json", result)
        status, code = "ok", EXIT_OK
    except (ConfigError, InitialConditionError, CompareSetupError) as exc:
        status, code = f"config error: {exc}", EXIT_CONFIG
    except (PDEError, LatticeError, StationaryError, FloatingPointError) as exc:
        status, code = f"numerical failure ({type(exc).__name__}): {exc}", EXIT_NUMERIC
    except OSError as exc:
        status, code = f"I/O error: {exc}", EXIT_IO
    if code != EXIT_OK:
        print(f"laneform: {status}", file=sys.stderr)
    if writer is not None:
        manifest.update(
            finished=datetime.now(timezone.utc).isoformat(),
            wall_seconds=time.perf_counter() - t0,
            status=status,
            files=list(writer.files),
        )
        try:
            manifest["files"].append("manifest.json")
            writer.write_json("manifest.json", manifest)
        except OSError as exc:
            print(f"laneform: I/O error writing manifest: {exc}", file=sys.stderr)
            return EXIT_IO
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
