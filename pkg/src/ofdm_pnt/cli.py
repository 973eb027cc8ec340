"""Command-line entry point: bounds, zzb, estimate, mc, prs-search, leo, validate.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 config schema error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .alloc import search_allocations
from .bounds import bound_rows
from .channel import realize_channel
from .config import ExperimentConfig, LeoConfig, PrsSearchConfig, apply_overrides, config_hash, load_config
from .grid import Constellation, ThetaParams
from .io import write_csv, write_json
from .leo import leo_campaign
from .montecarlo import _draw_realization, ccdf, percentile, run_sweep
from .quadrature import GaussHermiteRule
from .zzb import zzb_modes

EXIT_RUNTIME, EXIT_USAGE, EXIT_SCHEMA = 1, 2, 3


class SchemaError(Exception):
    pass


def mode_tag(mode: str) -> str:
    """File-name-safe form of an estimator mode."""
    return mode.replace("+", "_plus_").replace("-", "_")


def _pmap(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items, chunksize=1))
    return [fn(i) for i in items]


def _nominal_channel(spec, i_snr):
    # first channel realization of this SNR, placed at theta = 0
    offset, taps = _draw_realization(spec, i_snr, 0)
    return realize_channel(spec.grid, spec.channel, float(spec.snr_db[i_snr]), offset, taps, ThetaParams(0.0, 0.0))


# ----------------------------------------------------------------- workers
def _bounds_row(args):
    spec, i, bound_mode = args
    chan = _nominal_channel(spec, i)
    rule = GaussHermiteRule(spec.zzb.gh_order)
    z = zzb_modes(spec.grid, chan, spec.constellation, (bound_mode,), spec.zzb.zgrid_step,
                  spec.zzb.phigrid_step, rule)[bound_mode]
    b = bound_rows(spec.grid, chan, spec.constellation, spec.zzb.crlb_gh_order)
    return [spec.snr_db[i], b["crlb_pilot_m"], b["mcrlb_m"], b["crlb_data_m"], z.rmse_m]


def _zzb_rows(args):
    spec, i, modes = args
    chan = _nominal_channel(spec, i)
    rule = GaussHermiteRule(spec.zzb.gh_order)
    return zzb_modes(spec.grid, chan, spec.constellation, tuple(modes), spec.zzb.zgrid_step,
                     spec.zzb.phigrid_step, rule)


def _prs_job(args):
    cfg, n_prs, snr = args
    return search_allocations(cfg.ofdm.params(), n_prs, snr, Constellation.from_name(cfg.constellation),
                              cfg.n_blocks, cfg.block_size, cfg.comb, cfg.top, cfg.zzb.zstep,
                              math.radians(cfg.zzb.phistep_deg), cfg.zzb.gh_order)


# ---------------------------------------------------------------- commands
def _meta(cfg, h):
    return {"config_sha256": h, "seed": cfg.seed, "version": __version__}


def cmd_bounds(cfg: ExperimentConfig, out: Path, h: str, args) -> dict:
    spec = cfg.build()
    rows = _pmap(_bounds_row, [(spec, i, cfg.zzb.bound_mode) for i in range(len(spec.snr_db))], args.workers)
    write_csv(out / "bounds.csv", ["snr_db", "crlb_pilot_m", "mcrlb_m", "crlb_data_m", "zzb_m"], rows, _meta(cfg, h))
    return {"files": ["bounds.csv"], "zzb_mode": cfg.zzb.bound_mode}


def cmd_zzb(cfg: ExperimentConfig, out: Path, h: str, args) -> dict:
    spec = cfg.build()
    modes = list(cfg.zzb.modes)
    results = _pmap(_zzb_rows, [(spec, i, modes) for i in range(len(spec.snr_db))], args.workers)
    rows, prof = [], []
    for snr, res in zip(spec.snr_db, results):
        for m in modes:
            r = res[m]
            rows.append([snr, m, r.rmse_m])
            if args.profile:
                prof.extend([snr, m, z, p] for z, p in zip(r.z, r.pmin_profile))
    write_csv(out / "zzb.csv", ["snr_db", "mode", "zzb_rmse_m"], rows, _meta(cfg, h))
    files = ["zzb.csv"]
    if args.profile:
        write_csv(out / "zzb_profile.csv", ["snr_db", "mode", "z1", "max_phi_pmin"], prof, _meta(cfg, h))
        files.append("zzb_profile.csv")
    return {"files": files}


def cmd_estimate(cfg: ExperimentConfig, out: Path, h: str, args) -> dict:
    spec = replace(cfg.build(), compute_bounds=False)
    res = run_sweep(spec, args.workers)
    rows = [[r["snr_db"], r["mode"], r["rmse_m"], r["rmse_se_m"], r["mean_bias_m"], r["trials"], r["failures"]]
            for r in res.rows()]
    write_csv(out / "estimate.csv", ["snr_db", "mode", "rmse_m", "rmse_se_m", "mean_bias_m", "trials", "failures"],
              rows, _meta(cfg, h))
    return {"files": ["estimate.csv"]}


def cmd_mc(cfg: ExperimentConfig, out: Path, h: str, args) -> dict:
    spec = cfg.build()
    res = run_sweep(spec, args.workers)
    header = ["snr_db", "mode", "rmse_m", "rmse_se_m", "mean_bias_m", "trials", "failures", "zzb_m",
              "crlb_pilot_m", "mcrlb_m", "crlb_data_m"]
    rows = [[r[k] for k in header] for r in res.rows()]
    write_csv(out / "sweep.csv", header, rows, _meta(cfg, h))
    files = ["sweep.csv"]
    if spec.n_channel > 1:
        per = res.per_realization_rmse()
        for j, m in enumerate(spec.modes):
            crow = []
            for i, snr in enumerate(spec.snr_db):
                xs, fr = ccdf(per[i, :, j])
                crow.extend([snr, x, f] for x, f in zip(xs, fr))
            name = f"ccdf_{mode_tag(m)}.csv"
            write_csv(out / name, ["snr_db", "rmse_m", "fraction_exceeding"], crow, _meta(cfg, h))
            files.append(name)
    return {"files": files}


def cmd_prs(cfg: PrsSearchConfig, out: Path, h: str, args) -> dict:
    jobs = [(cfg, n, s) for s in cfg.snr_db for n in cfg.n_prs]
    results = _pmap(_prs_job, jobs, args.workers)
    rows, best = [], []
    for (_, n, s), ranked in zip(jobs, results):
        for rank, r in enumerate(ranked[: cfg.top]):
            rows.append([s, n, rank + 1, r.layout.bitmask(), " ".join(map(str, r.layout.prs_blocks)),
                         r.pilot_zzb_m, r.pilot_plus_data_zzb_m])
        top = ranked[0]
        best.append({
            "snr_db": s,
            "n_prs": n,
            "pilot_zzb_m": top.pilot_zzb_m,
            "pilot_plus_data_zzb_m": top.pilot_plus_data_zzb_m,
            "allocation": {"prs": {"n_blocks": cfg.n_blocks, "block_size": cfg.block_size, "comb": cfg.comb,
                                   "prs_blocks": list(top.layout.prs_blocks)}},
        })
    write_csv(out / "prs_ranked.csv",
              ["snr_db", "n_prs", "rank", "layout_bitmask", "prs_blocks", "pilot_zzb_m", "pilot_plus_data_zzb_m"],
              rows, _meta(cfg, h))
    write_json(out / "best.json", {"config_sha256": h, "best": best})
    return {"files": ["prs_ranked.csv", "best.json"]}


def cmd_leo(cfg: LeoConfig, out: Path, h: str, args) -> dict:
    spec = cfg.build()
    res = leo_campaign(spec, args.workers)
    files = []
    pct = {}
    for axis, emp_key, zzb_key in (("horizontal", "horiz_emp", "horiz_zzb"), ("vertical", "vert_emp", "vert_zzb")):
        emp, zb = res.stack(emp_key), res.stack(zzb_key)
        for j, m in enumerate(spec.modes):
            rows = []
            for source, vals in (("empirical", emp[:, j]), ("zzb", zb[:, j])):
                xs, fr = ccdf(vals)
                rows.extend([source, x, f] for x, f in zip(xs, fr))
            name = f"ccdf_{axis}_{mode_tag(m)}.csv"
            write_csv(out / name, ["source", "rmse_m", "fraction_exceeding"], rows, _meta(cfg, h))
            files.append(name)
            pct.setdefault(m, {})[axis] = {
                "empirical_p50_m": percentile(emp[:, j], 50), "empirical_p90_m": percentile(emp[:, j], 90),
                "zzb_p50_m": percentile(zb[:, j], 50), "zzb_p90_m": percentile(zb[:, j], 90),
            }
    for m, ell in res.ellipses(0.95).items():
        doc = {k: {"center_m": list(e.center), "semi_major_m": e.semi_major, "semi_minor_m": e.semi_minor,
                   "orientation_rad": e.orientation} for k, e in ell.items()}
        doc["confidence"] = 0.95
        doc["config_sha256"] = h
        name = f"ellipse_{mode_tag(m)}.json"
        write_json(out / name, doc)
        files.append(name)
    fails = res.stack("failures").sum(axis=0)
    enu = res.geometry.sat_positions
    return {
        "files": files,
        "satellites": {
            "ids": [int(s) for s in res.sat_ids],
            "enu_m": enu,
            "elevation_deg": np.degrees(np.arctan2(enu[:, 2], np.hypot(enu[:, 0], enu[:, 1]))),
            "nominal_snr_db": res.nominal_snr_db,
        },
        "percentiles": pct,
        "solver_failures": {m: int(f) for m, f in zip(spec.modes, fails)},
    }


COMMANDS = {
    "bounds": (ExperimentConfig, cmd_bounds),
    "zzb": (ExperimentConfig, cmd_zzb),
    "estimate": (ExperimentConfig, cmd_estimate),
    "mc": (ExperimentConfig, cmd_mc),
    "prs-search": (PrsSearchConfig, cmd_prs),
    "leo": (LeoConfig, cmd_leo),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ofdm-pnt", description="OFDM ranging bounds, estimators and LEO positioning")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in [*COMMANDS, "validate"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        if name == "validate":
            continue
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--zstep", type=float, help="ZZB z-grid step in samples")
        p.add_argument("--phistep", type=float, help="ZZB phase-grid step in degrees")
        p.add_argument("--gh-order", type=int, help="Gauss-Hermite order for the data-cell moments")
        if name == "zzb":
            p.add_argument("--profile", action="store_true", help="also write the max-phi Pmin profile")
    return ap


def _load(path: Path):
    try:
        return load_config(path)
    except ValidationError as e:
        lines = []
        for err in e.errors():
            loc = ".".join(str(x) for x in err["loc"]) or "<root>"
            lines.append(f"{loc}: {err['msg']}")
        raise SchemaError("; ".join(lines)) from None
    except json.JSONDecodeError as e:
        raise SchemaError(f"<root>: invalid JSON ({e})") from None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if getattr(args, "workers", 1) is not None and getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if not args.config.is_file():
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _load(args.config)
        if args.command == "validate":
            if hasattr(cfg, "build"):
                try:
                    cfg.build()
                except (ValueError, LookupError) as e:
                    print(f"error: {e}", file=sys.stderr)
                    return EXIT_RUNTIME
            print(f"ok {cfg.kind} {config_hash(cfg)}")
            return 0
        model, fn = COMMANDS[args.command]
        if not isinstance(cfg, model):
            raise SchemaError(f"kind: subcommand {args.command!r} does not accept kind {cfg.kind!r}")
        try:
            cfg = apply_overrides(cfg, args.seed, args.zstep, args.phistep, args.gh_order)
        except ValidationError as e:
            raise SchemaError("; ".join(f"{'.'.join(map(str, x['loc']))}: {x['msg']}" for x in e.errors())) from None
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    h = config_hash(cfg)
    out = args.out
    try:
        extra = fn(cfg, out, h, args)
    except (ValueError, LookupError, ArithmeticError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    z = cfg.zzb
    manifest = {
        "subcommand": args.command,
        "config_path": str(args.config),
        "config_sha256": h,
        "seed": cfg.seed,
        "output_dir": str(out),
        "version": __version__,
        "zzb_grids": {"zstep": z.zstep, "phistep_deg": z.phistep_deg, "gh_order": z.gh_order},
        **extra,
    }
    write_json(out / "run.json", manifest)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
