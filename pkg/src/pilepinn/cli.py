"""Command-line entry point and file exporters.

Usage::

    pilepinn solve CONFIG [--seed N] [--epochs N] [--out-dir DIR] [--threads N]

Exit codes: 0 success, 2 invalid configuration, 3 training divergence,
1 any other failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

FIELD_COLUMNS = ("x_or_r", "z", "region", "u_1", "u_2", "eps_11", "eps_22", "eps_12",
                 "sig_11", "sig_22", "sig_12")
NORMALIZED_COLUMNS = ("u_1_over_lT", "u_2_over_lT")
PROFILE_COLUMNS = ("x_or_r", "z", "sig_22")


def _fmt(x: float) -> str:
    return repr(float(x))


def field_grid(region_set, grid: tuple[int, int]) -> np.ndarray:
    """Uniform ``nx`` by ``nz`` sample points, x varying fastest."""
    nx, nz = grid
    X, Z = np.meshgrid(np.linspace(0.0, region_set.width, nx), np.linspace(0.0, region_set.depth, nz))
    return np.column_stack([X.ravel(), Z.ravel()])


def sample_fields(source, grid: tuple[int, int]) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    """Points, region indices and ``u``/``eps``/``sig`` arrays for a trained
    model or a reference grid field."""
    from pilepinn.oracle import GridField

    rs = source.region_set
    pts = field_grid(rs, grid)
    region = rs.locate(pts)
    out = {"u": np.zeros((len(pts), 2)), "eps": np.zeros((len(pts), 3)), "sig": np.zeros((len(pts), 3))}
    if isinstance(source, GridField):
        out["u"] = source.displacement_at(pts)
    else:
        out["u"] = source.displacement(pts)
    for k, name in enumerate(rs.names):
        sel = region == k
        if not np.any(sel):
            continue
        if isinstance(source, GridField):
            out["eps"][sel] = source.strain_at(pts[sel], name)[:, :3]
            out["sig"][sel] = source.stress_at(pts[sel], name)[:, :3]
        else:
            f = source.region_fields(name, pts[sel])
            out["eps"][sel] = f["eps"]
            out["sig"][sel] = f["sig"]
    return pts, region, out


def export_field(source, path: str | Path, grid: tuple[int, int] = (41, 41),
                 vtk_path: str | Path | None = None) -> Path:
    """Write displacement, strain and stress on a uniform grid as CSV.

    ``source`` is a trained :class:`~pilepinn.trainer.PinnModel` or an oracle
    :class:`~pilepinn.oracle.GridField`; both produce the same schema.
    """
    rs = source.region_set
    pts, region, f = sample_fields(source, grid)
    depth = rs.depth
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELD_COLUMNS + NORMALIZED_COLUMNS)
        for i in range(len(pts)):
            u = f["u"][i]
            w.writerow([_fmt(pts[i, 0]), _fmt(pts[i, 1]), rs.names[region[i]],
                        *map(_fmt, u), *map(_fmt, f["eps"][i]), *map(_fmt, f["sig"][i]),
                        _fmt(u[0] / depth), _fmt(u[1] / depth)])
    if vtk_path is not None:
        write_vtk(vtk_path, rs, grid, region, f)
    return path


def write_vtk(path: str | Path, region_set, grid: tuple[int, int], region: np.ndarray,
              f: dict[str, np.ndarray]) -> Path:
    """Legacy ASCII VTK structured-points file of the sampled fields."""
    nx, nz = grid
    dx = region_set.width / (nx - 1)
    dz = region_set.depth / (nz - 1)
    lines = ["# vtk DataFile Version 3.0", "pile-soil field", "ASCII", "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {nx} {nz} 1", "ORIGIN 0 0 0", f"SPACING {dx!r} {dz!r} 1",
             f"POINT_DATA {nx * nz}", "SCALARS region int 1", "LOOKUP_TABLE default"]
    lines += [str(int(r)) for r in region]
    lines.append("VECTORS displacement double")
    lines += [f"{u[0]!r} {u[1]!r} 0.0" for u in f["u"]]
    for name, key in (("eps", "eps"), ("sig", "sig")):
        for c, comp in enumerate(("11", "22", "12")):
            lines += [f"SCALARS {name}_{comp} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(v)) for v in f[key][:, c]]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def report_inversion(record, unknowns: Sequence, path: str | Path) -> tuple[Path, Path]:
    """Identified moduli with truth and relative error, plus the trajectory.

    Writes ``path`` and ``<stem>_trajectory.csv`` next to it; the error
    column is blank when no truth is known.
    """
    path = Path(path)
    final = record.final_moduli()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "identified_E", "truth_E", "relative_error_percent", "epochs"])
        for u in unknowns:
            E = final[u.region]
            truth = "" if u.truth is None else _fmt(u.truth)
            err = "" if u.truth is None else _fmt(100.0 * abs(E - u.truth) / u.truth)
            w.writerow([u.region, _fmt(E), truth, err, len(record)])
    traj = path.with_name(path.stem + "_trajectory.csv")
    with open(traj, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch"] + [f"E_{n}" for n in record.unknown_names])
        for epoch, moduli in zip(record.epochs, record.moduli):
            w.writerow([epoch] + [_fmt(m) for m in moduli])
    return path, traj


def write_profile(data, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_COLUMNS)
        for (x, z), s in zip(np.asarray(data.points), np.asarray(data.values)):
            w.writerow([_fmt(x), _fmt(z), _fmt(s)])
    return path


def read_profile(path: str | Path):
    from pilepinn.errors import DataError
    from pilepinn.loss import DataSet

    try:
        raw = np.genfromtxt(path, delimiter=",", names=True, dtype=float, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read profile {path}: {exc}") from exc
    raw = np.atleast_1d(raw)
    if raw.dtype.names is None or set(PROFILE_COLUMNS) - set(raw.dtype.names):
        raise DataError(f"profile {path} needs columns {','.join(PROFILE_COLUMNS)}")
    return DataSet(np.column_stack([raw["x_or_r"], raw["z"]]), np.asarray(raw["sig_22"]), "P")


# ---------------------------------------------------------------------------

def _reference_profile(cfg, problem):
    from pilepinn.oracle import fd_solve, synth_stress_profile

    field = fd_solve(problem, cfg.data.resolution)
    return synth_stress_profile(field, cfg.data.points)


def run(config_path: str | Path, out_dir: str | Path | None = None, seed: int | None = None,
        epochs: int | None = None, log=print) -> int:
    """Execute one configured run and write its artifacts; returns an exit code."""
    from pilepinn.config import load_config
    from pilepinn.errors import ConfigurationError, DataError, MaterialError, GeometryError, TrainingDiverged
    from pilepinn.oracle import fd_solve, synth_stress_profile
    from pilepinn.trainer import train_forward, train_inverse

    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg = replace(cfg, training=replace(cfg.training, seed=seed),
                          sampling=replace(cfg.sampling, seed=seed))
        if epochs is not None:
            if epochs < 1:
                raise ConfigurationError(f"--epochs must be positive, got {epochs}")
            cfg = replace(cfg, training=replace(cfg.training, epochs=epochs))
        problem = cfg.problem()
    except (ConfigurationError, MaterialError, GeometryError) as exc:
        log(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    grid = tuple(cfg.output.grid)
    vtk = out / "field.vtk" if cfg.output.vtk else None
    try:
        if cfg.mode == "oracle":
            field = fd_solve(problem, cfg.output.oracle_resolution)
            export_field(field, out / "field.csv", grid, vtk)
            if problem.region_set.has_pile:
                write_profile(synth_stress_profile(field, cfg.output.profile_points), out / "profile.csv")
            log(f"reference solution written to {out}")
            return EXIT_OK

        setup, tcfg = cfg.setup(), cfg.train_config()
        if cfg.mode == "forward":
            model, record = train_forward(problem, tcfg, setup)
        else:
            if cfg.data.path is not None:
                data_path = Path(cfg.data.path)
                if not data_path.is_absolute():
                    data_path = Path(config_path).resolve().parent / data_path
                data = read_profile(data_path)
            else:
                data = _reference_profile(cfg, problem)
            unknowns = cfg.unknowns()
            if cfg.data.path is not None:
                unknowns = [replace(u, truth=None) for u in unknowns]
            model, moduli, record = train_inverse(problem, data, unknowns, tcfg, setup)
            report_inversion(record, unknowns, out / "inversion_report.csv")
            for name, E in moduli.items():
                log(f"identified E_{name} = {E:.6g} Pa")
        record.write_csv(out / "loss_history.csv")
        export_field(model, out / "field.csv", grid, vtk)
        log(f"{cfg.mode} run finished after {len(record)} epochs,"
            f" normalized loss {record.final_normalized:.3e}; results in {out}")
        return EXIT_OK
    except TrainingDiverged as exc:
        exc.record.write_csv(out / "loss_history.csv")
        log(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigurationError, DataError) as exc:
        log(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _set_threads(n: int) -> None:
    flags = os.environ.get("XLA_FLAGS", "")
    extra = f"--xla_cpu_multi_thread_eigen={'true' if n > 1 else 'false'} intra_op_parallelism_threads={n}"
    os.environ["XLA_FLAGS"] = (flags + " " + extra).strip()


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="pilepinn", description="Pile-soil PINN solver")
    sub = parser.add_subparsers(dest="command", required=True)
    solve = sub.add_parser("solve", help="run a configured forward, inverse or reference solve")
    solve.add_argument("config", help="config file, or the name of a bundled config")
    solve.add_argument("--seed", type=int, default=None, help="override training and sampling seeds")
    solve.add_argument("--epochs", type=int, default=None, help="override the epoch budget")
    solve.add_argument("--out-dir", default=".", help="directory for output files")
    solve.add_argument("--threads", type=int, default=None, help="CPU threads for the numerics")
    args = parser.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("configuration error: --threads must be positive", file=sys.stderr)
            return EXIT_CONFIG
        _set_threads(args.threads)

    def log(msg: Any, file=sys.stdout):
        print(msg, file=file, flush=True)

    try:
        return run(args.config, args.out_dir, args.seed, args.epochs, log)
    except Exception as exc:  # noqa: BLE001
        log(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
