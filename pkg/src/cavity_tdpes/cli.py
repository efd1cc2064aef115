"""Command line: ``cavity-tdpes {surfaces,propagate,invert,qcl,verify}``.

Exit status: 0 success, 1 configuration error, 2 numerical failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import ConfigError, RunConfig, default_config, dumps, load
from .efactor import TDPESRecord
from .grid import Grid1D, GridError
from .propagator import FS_AU, NumericalError
from .storage import atomic_open, read_csv, write_csv, write_json

log = logging.getLogger("cavity_tdpes")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
def build_config(args) -> RunConfig:
    if args.config:
        cfg = load(args.config)
        if args.preset:
            cfg = cfg.with_overrides([f"model.preset={args.preset}"])
    else:
        cfg = default_config(args.preset or "pcet")
    extra = list(args.override or [])
    if args.out:
        extra.append(f"output.dir={args.out}")
    if args.seed is not None:
        extra.append(f"qcl.seed={args.seed}")
    if args.threads is not None:
        extra.append(f"run.threads={args.threads}")
    return cfg.with_overrides(extra) if extra else cfg


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    with atomic_open(out / "config.ini") as fh:
        fh.write(dumps(cfg))
    return out


def _write_text(path: Path, text: str) -> None:
    with atomic_open(path) as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# surfaces
# ---------------------------------------------------------------------------
def cmd_surfaces(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    cfg = cfg.with_overrides(["model.cavity=true"])
    surf = pipeline.compute_surfaces(cfg)
    bo, pol = surf.bo, surf.pol
    R = bo.R_grid.points
    write_csv(out / "bo_surfaces.csv", ["R"] + [f"E{i}" for i in range(bo.n_el)],
              [R] + [bo.energies[:, i] for i in range(bo.n_el)])
    K = pol.size
    write_csv(out / "polaritonic_surfaces.csv", ["R"] + [f"P{k}" for k in range(K)],
              [R] + [pol.energies[:, k] for k in range(K)])
    cols, head = [R], ["R"]
    for k in range(K):
        head += [f"P{k}_el", f"P{k}_ph", f"P{k}_weight"]
        cols += [pol.character[:, k, 0], pol.character[:, k, 1], pol.weight[:, k]]
    write_csv(out / "characters.csv", head, cols)
    n_show = min(6, K)
    lines = [
        "# BO surfaces (dashed) shifted by half a photon, polaritonic surfaces (solid)",
        "set datafile separator ','",
        "set xlabel 'R (a.u.)'",
        "set ylabel 'energy (a.u.)'",
        f"w = {cfg.params().omega_c!r}",
        "plot \\",
    ]
    parts = [f"  'bo_surfaces.csv' using 1:(${i + 2}+w/2) with lines dt 2 title 'BO {i}'" for i in range(min(3, bo.n_el))]
    parts += [f"  'bo_surfaces.csv' using 1:(${i + 2}+3*w/2) with lines dt 2 notitle" for i in range(min(2, bo.n_el))]
    parts += [f"  'polaritonic_surfaces.csv' using 1:{k + 2} with lines lw 2 title 'pol {k}'" for k in range(n_show)]
    _write_text(out / "plot_surfaces.gp", "\n".join(lines) + "\n" + ", \\\n".join(parts) + "\n")
    log.info("wrote surfaces for preset %s to %s", cfg.model.preset, out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# propagate
# ---------------------------------------------------------------------------
def write_scenario(res: pipeline.ScenarioResult, out: Path) -> None:
    name = res.name
    res.series.to_csv(out / f"observables_{name}.csv")
    R = res.grid.R.points
    tf = res.store_times / FS_AU
    head = ["R"] + [f"t{t:.3f}fs" for t in tf]
    write_csv(out / f"densities_{name}.csv", head, [R] + list(res.densities))
    for i in range(res.r_resolved.shape[1]):
        write_csv(out / f"r_resolved_pop{i + 1}_{name}.csv", head, [R] + list(res.r_resolved[:, i]))
    if res.photon_resolved is not None:
        for n in range(res.photon_resolved.shape[1]):
            write_csv(out / f"photon{n}_density_{name}.csv", head, [R] + list(res.photon_resolved[:, n]))
    tdir = out / "tdpes" / name
    for rec in res.records:
        rec.to_csv(tdir / f"frame_{rec.time / FS_AU:08.3f}fs.csv")
    if res.audits:
        keys = ["time_au", "H", "E_wpol", "T_marg", "E_kin_cond", "E_GD", "H_nuc", "residual_total", "residual_gd"]
        write_csv(out / f"energy_audit_{name}.csv", keys, [[a[k] for a in res.audits] for k in keys])
        diag = ["gauge_residual", "partial_norm_error", "reconstruction_error", "segments"]
        write_csv(out / f"tdpes_diagnostics_{name}.csv", ["time_fs", "alignment_offset"] + diag,
                  [[r.time / FS_AU for r in res.records], [r.alignment_offset for r in res.records]]
                  + [[r.diagnostics[k] for r in res.records] for k in diag])


def _plot_dynamics(out: Path, names) -> None:
    head = ["set datafile separator ','", "set key autotitle columnhead", "set xlabel 't (fs)'"]
    dip = head + ["set ylabel '<R> (a.u.)'", "plot " + ", ".join(
        f"'observables_{n}.csv' using 1:6 with lines title '{n}'" for n in names)]
    _write_text(out / "plot_dipoles.gp", "\n".join(dip) + "\n")
    pops = head + ["set ylabel 'population'", "plot " + ", ".join(
        f"'observables_{n}.csv' using 1:{8 + i} with lines title '{n} state {i}'" for n in names for i in range(3))]
    _write_text(out / "plot_populations.gp", "\n".join(pops) + "\n")


def cmd_propagate(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    scenarios = pipeline.batch_configs(cfg)
    snap_dir = out / "snapshots" if cfg.propagation.snapshots else None
    summary = {}
    for name, sc in scenarios.items():
        log.info("propagating %s to %.2f fs", name, sc.propagation.t_final_fs)
        res = pipeline.run_scenario(sc, name, snapshot_dir=snap_dir, workers=cfg.run.threads)
        write_scenario(res, out)
        e = res.series.column("energy")
        summary[name] = {
            "max_norm_error": float(np.max(np.abs(res.series.column("norm") - 1.0))),
            "max_energy_drift": float(np.max(np.abs(e - e[0]))),
            "max_boundary_density": res.max_boundary,
            "trapped_fraction_final": pipeline.trapped_fraction(res.densities[-1], res.grid.R),
            "wall_time_s": res.wall_time,
        }
    write_json(out / "propagate_summary.json", summary)
    _plot_dynamics(out, list(scenarios))
    return EXIT_OK


# ---------------------------------------------------------------------------
# invert
# ---------------------------------------------------------------------------
def cmd_invert(cfg: RunConfig, snapshot_dir: str | None) -> int:
    out = _outdir(cfg)
    src = Path(snapshot_dir) if snapshot_dir else out / "snapshots"
    for name, sc in pipeline.batch_configs(cfg).items():
        records, audits = pipeline.invert_snapshot_dir(src, sc, name)
        for rec in records:
            rec.to_csv(out / "tdpes" / name / f"frame_{rec.time / FS_AU:08.3f}fs.csv")
        keys = ["time_au", "H", "E_wpol", "T_marg", "E_kin_cond", "E_GD", "H_nuc", "residual_total", "residual_gd"]
        write_csv(out / f"energy_audit_{name}.csv", keys, [[a[k] for a in audits] for k in keys])
    plot = [
        "set datafile separator ','", "set key autotitle columnhead", "set xlabel 'R (a.u.)'",
        "# usage: gnuplot -e \"frame='tdpes/<scenario>/frame_<t>fs.csv'\" plot_tdpes.gp",
        "plot frame using 1:7 with lines title 'eps', frame using 1:4 with lines title 'eps_wpol', "
        "frame using 1:5 with lines title 'eps_gd', frame using 1:($2*0.05) with filledcurves y=0 title 'density'",
    ]
    _write_text(out / "plot_tdpes.gp", "\n".join(plot) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# qcl
# ---------------------------------------------------------------------------
def load_records(directory: Path) -> list[TDPESRecord]:
    files = sorted(directory.glob("frame_*fs.csv"))
    if not files:
        raise FileNotFoundError(f"no TDPES frames in {directory}")
    recs = []
    for f in files:
        t_fs = float(f.stem[len("frame_"):-2])
        R = read_csv(f)["R"]
        grid = Grid1D(R[0], R[-1], len(R))
        recs.append(TDPESRecord.from_csv(f, t_fs * FS_AU, grid))
    recs.sort(key=lambda r: r.time)
    return recs


def cmd_qcl(cfg: RunConfig, tdpes_dir: str | None) -> int:
    out = _outdir(cfg)
    base = Path(tdpes_dir) if tdpes_dir else out / "tdpes"
    rows = {"scenario": [], "mode": [], "time_fs": [], "l1": []}
    for name, sc in pipeline.batch_configs(cfg).items():
        recs = load_records(base / name)
        results = {mode: pipeline.run_qcl(recs, sc, mode) for mode in sc.qcl.modes}
        first = next(iter(results.values()))
        for j, t in enumerate(first.times):
            cols = [recs[0].R_grid.points, first.exact[j]] + [results[m].histograms[j] for m in results]
            write_csv(out / "qcl" / name / f"hist_{t / FS_AU:08.3f}fs.csv", ["R", "exact"] + list(results), cols)
        for m, r in results.items():
            for t, v in zip(r.times, r.l1):
                rows["scenario"].append(name)
                rows["mode"].append(m)
                rows["time_fs"].append(t / FS_AU)
                rows["l1"].append(v)
            if r.exits:
                log.info("%s/%s: %d trajectory-steps used the off-mesh force extension", name, m, r.exits)
    write_csv(out / "qcl_summary.csv", list(rows), [rows[k] for k in rows])
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------
def cmd_verify(cfg: RunConfig, full: bool, quick: bool) -> int:
    from .verify import run_checks

    out = _outdir(cfg)
    checks = run_checks(coarse=not full, with_dynamics=not quick)
    for c in checks:
        print(c.line())
    report = {c.name: {"value": c.value, "bound": c.bound, "passed": c.passed, "note": c.note} for c in checks}
    write_json(out / "verify_report.json", report)
    failed = [c.name for c in checks if not c.passed]
    if failed:
        print("verification failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------
def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="sectioned key = value config file")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--preset", choices=["pcet", "elex"], help="model preset")
    common.add_argument("--override", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="trajectory sampling seed")
    common.add_argument("--threads", type=int, help="FFT worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cavity-tdpes", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("surfaces", parents=[common], help="BO and polaritonic surfaces")
    p = sub.add_parser("propagate", parents=[common], help="propagate (and invert) one scenario or a batch")
    p.add_argument("--batch", choices=["none", "pcet", "elex"], help="run every scenario of a case study")
    p = sub.add_parser("invert", parents=[common], help="invert stored snapshots into TDPES frames")
    p.add_argument("--snapshots", help="snapshot directory (default OUT/snapshots)")
    p.add_argument("--batch", choices=["none", "pcet", "elex"])
    p = sub.add_parser("qcl", parents=[common], help="quasiclassical trajectories on TDPES frames")
    p.add_argument("--tdpes", help="directory of per-scenario TDPES frame folders (default OUT/tdpes)")
    p.add_argument("--batch", choices=["none", "pcet", "elex"])
    p = sub.add_parser("verify", parents=[common], help="run the self-check suite")
    p.add_argument("--full", action="store_true", help="default resolution instead of the coarse grids")
    p.add_argument("--quick", action="store_true", help="skip the dynamics checks")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        if getattr(args, "batch", None):
            cfg = cfg.with_overrides([f"run.batch={args.batch}"])
        if args.command == "surfaces":
            return cmd_surfaces(cfg)
        if args.command == "propagate":
            return cmd_propagate(cfg)
        if args.command == "invert":
            return cmd_invert(cfg, args.snapshots)
        if args.command == "qcl":
            return cmd_qcl(cfg, args.tdpes)
        return cmd_verify(cfg, args.full, args.quick)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError, GridError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
