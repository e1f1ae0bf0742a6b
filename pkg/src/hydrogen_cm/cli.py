"""Command-line front end for configured simulations and their output artifacts.

Exit codes: 0 success, 2 configuration error, 3 numerical-health failure.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from importlib import metadata

import numpy as np

from .config import ConfigError, RunConfig, parse_config
from .grid import build_grid
from .hydrogen import GridCapacityError, eigenstate_coeffs, max_shell, populations_from_coeffs
from .observables import (
    CM_CHANNELS,
    ELECTRON_CHANNELS,
    TimeSeries,
    UndefinedCorrelationError,
    all_spectra,
    kinetic_energy_average,
    spectral_shape_correlation,
)
from .potentials import NumericalHealthError
from .propagator import PropagationPlan, run

log = logging.getLogger("hydrogen_cm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
MANIFEST_SCHEMA = 1
TIME_UNIT_LABEL = "t (a.u., 1 a.u. = 2.42e-17 s)"

# CSV column names; the in-memory series uses the short channel names.
CSV_COLUMNS = {"Px": "P_x", "Py": "P_y", "Pz": "P_z", "E": "E_field"}


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def config_hash(cfg: RunConfig):
    """SHA-256 of the resolved configuration and code version (output location and wall time excluded)."""
    resolved = {k: v for k, v in cfg.resolved().items() if k != "output_dir"}
    payload = json.dumps({"config": resolved, "version": _version()}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def _fmt(x):
    return format(float(x), ".17g")


def write_csv(path, header, rows, digest, note=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# manifest_hash={digest}\n")
        if note:
            fh.write(f"# {note}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(r if isinstance(r, str) else _fmt(r) for r in row) + "\n")


def read_csv(path):
    """Return (header, float array, manifest hash) of a file written by ``write_csv``."""
    digest, header, rows = None, None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# manifest_hash="):
                digest = line.split("=", 1)[1]
            elif line.startswith("#") or not line:
                continue
            elif header is None:
                header = line.split(",")
            else:
                rows.append([float(v) for v in line.split(",")])
    return header, np.array(rows).reshape(-1, len(header)), digest


def _series_rows(series: TimeSeries):
    names = [CSV_COLUMNS.get(c, c) for c in TimeSeries.columns()]
    return names, series.to_array()


def _correlation_summary(spectra, cfg: RunConfig):
    summary = {"band": list(cfg.correlation_band), "max_lag": cfg.correlation_max_lag,
               "threshold": cfg.correlation_threshold, "pairs": {}}
    for cm, el in zip(CM_CHANNELS, ELECTRON_CHANNELS):
        try:
            r, lag = spectral_shape_correlation(spectra[cm], spectra[el], cfg.correlation_band,
                                                cfg.correlation_max_lag, return_lag=True)
            summary["pairs"][f"{cm}:{el}"] = {"correlation": r, "lag": lag}
        except UndefinedCorrelationError as exc:
            summary["pairs"][f"{cm}:{el}"] = {"correlation": None, "error": str(exc)}
    main = summary["pairs"]["Px:px"]["correlation"]
    summary["passed"] = main is not None and main >= cfg.correlation_threshold
    return summary


def _plot(out, series: TimeSeries, spectra, pops, cfg: RunConfig):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    axes[0].plot(series.t, series.X, label="X")
    axes[0].plot(series.t, series.Z, label="Z")
    axes[0].set_ylabel("CM position (a.u.)")
    axes[1].plot(series.t, series.Px, label="P_x")
    axes[1].plot(series.t, series.Pz, label="P_z")
    axes[1].set_ylabel("CM momentum (a.u.)")
    axes[2].plot(series.t, series.px, label="<p_x>")
    axes[2].plot(series.t, series.pz, label="<p_z>")
    axes[2].set_ylabel("electron momentum (a.u.)")
    axes[2].set_xlabel(TIME_UNIT_LABEL)
    for ax in axes:
        ax.legend(loc="upper right")
    fig.tight_layout()
    paths.append(os.path.join(out, "time_series.svg"))
    fig.savefig(paths[-1], metadata={"Date": None})
    plt.close(fig)

    lo, hi = cfg.correlation_band
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for ax, names, title in ((axes[0], CM_CHANNELS, "|P_s(w)|^2"), (axes[1], ELECTRON_CHANNELS, "|p_s(w)|^2")):
        for c in names:
            s = spectra[c]
            sel = (s.omega >= lo) & (s.omega < hi)
            ax.plot(s.omega[sel] + cfg.axis_offset, s.density[sel], label=c)
        ax.set_ylabel(title)
        ax.set_yscale("log")
        ax.legend(loc="upper right")
    axes[1].set_xlabel("w (a.u.)" + (f" + {cfg.axis_offset}" if cfg.axis_offset else ""))
    fig.tight_layout()
    paths.append(os.path.join(out, "spectra.svg"))
    fig.savefig(paths[-1], metadata={"Date": None})
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4))
    ns = sorted(pops.W)
    ax.bar(ns, [pops.W[n] for n in ns])
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("W_n")
    fig.tight_layout()
    paths.append(os.path.join(out, "populations.svg"))
    fig.savefig(paths[-1], metadata={"Date": None})
    plt.close(fig)
    return paths


def execute(cfg: RunConfig, output_dir=None, checkpoint=None, resume=False, plot=True, progress=None):
    """Run the configured simulation and write all artifacts; returns the manifest dict.

    Raises ConfigError or NumericalHealthError; on a numerical failure the
    partial time series and a manifest marked ``"status": "failed"`` are written.
    """
    out = output_dir or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    digest = config_hash(cfg)
    grid = build_grid(cfg.grid)
    limit = max_shell(grid, cfg.constants)
    if cfg.n_max > limit:
        raise ConfigError(f"n_max={cfg.n_max} exceeds grid capacity (largest usable shell {limit})")
    try:
        C0 = eigenstate_coeffs(cfg.state_label, grid, cfg.constants)
    except GridCapacityError as exc:
        raise ConfigError(str(exc)) from None
    plan = PropagationPlan(dt=cfg.dt, t_start=cfg.t_start, t_end=cfg.t_end,
                           record_stride=cfg.record_stride, sub_solver=cfg.sub_solver,
                           checkpoint_every=cfg.checkpoint_every or (1000 if checkpoint else 0))
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "manifest_hash": digest,
        "code_version": _version(),
        "config": cfg.resolved(),
        "ordering": "half kick with moments(psi_n); drift R; quantum Strang step with R at the "
                    "step midpoint; half kick with moments(psi_n+1)",
        "files": {},
    }
    t0 = time.perf_counter()
    try:
        result = run(grid, cfg.pulse, plan, C0, cfg.R0, cfg.P0, alpha=cfg.coupling_alpha,
                     freeze_cm=cfg.freeze_cm, checkpoint_path=checkpoint,
                     resume_from=checkpoint if resume else None, progress=progress)
    except NumericalHealthError as exc:
        manifest.update(status="failed", error=str(exc), checkpoint=getattr(exc, "checkpoint", None),
                        wall_time_s=time.perf_counter() - t0)
        rec = getattr(exc, "partial_records", None)
        if rec is not None and len(rec):
            names = [CSV_COLUMNS.get(c, c) for c in TimeSeries.columns()]
            write_csv(os.path.join(out, "time_series.partial.csv"), names, rec, digest,
                      "PARTIAL: run aborted by a numerical-health error")
            manifest["files"]["time_series"] = "time_series.partial.csv"
        _write_manifest(out, manifest)
        raise
    wall = time.perf_counter() - t0
    series = result.series

    names, data = _series_rows(series)
    write_csv(os.path.join(out, "time_series.csv"), names, data, digest)
    manifest["files"]["time_series"] = "time_series.csv"

    spectra = all_spectra(series, cfg.window, cfg.spectrum_taper, cfg.spectrum_pad)
    omega = spectra["Px"].omega
    cols = ["omega"] + [f"|{c}|^2" for c in CM_CHANNELS + ELECTRON_CHANNELS]
    rows = np.column_stack([omega] + [spectra[c].density for c in CM_CHANNELS + ELECTRON_CHANNELS])
    write_csv(os.path.join(out, "spectra.csv"), cols, rows, digest,
              f"window={list(cfg.window)} taper={cfg.spectrum_taper} pad={cfg.spectrum_pad}")
    manifest["files"]["spectra"] = "spectra.csv"

    pops = populations_from_coeffs(result.coeffs, grid, cfg.n_max, result.cm.t, cfg.constants)
    write_csv(os.path.join(out, "populations.csv"), ["n", "W_n"],
              [[n, pops.W[n]] for n in sorted(pops.W)], digest)
    manifest["files"]["populations"] = "populations.csv"

    M, mu = cfg.constants.M, cfg.constants.mu
    manifest.update(
        status="ok",
        wall_time_s=wall,
        steps=result.steps,
        final={"R": result.cm.R.tolist(), "P": result.cm.P.tolist(),
               "norm": float(np.linalg.norm(result.coeffs))},
        tolerances={"max_norm_drift": result.max_norm_drift,
                    "population_residual": pops.residual},
        kinetic_energy={
            "cm": kinetic_energy_average(series, M, cfg.window, "cm"),
            "electron": kinetic_energy_average(series, mu, cfg.window, "electron"),
        },
        populations={str(n): w for n, w in pops.W.items()},
        population_basis="reduced-mass hydrogen eigenstates sampled on the run grid; "
                         "m-channels beyond the azimuthal cutoff are omitted",
        correlation=_correlation_summary(spectra, cfg),
        cm_channels_constant={c: bool(np.all(series.channel(c) == series.channel(c)[0]))
                              for c in ("X", "Y", "Z") + CM_CHANNELS},
    )
    if plot:
        manifest["files"]["plots"] = [os.path.basename(p) for p in _plot(out, series, spectra, pops, cfg)]
    _write_manifest(out, manifest)
    return manifest


def _write_manifest(out, manifest):
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path):
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


_COMPARED = ("final", "kinetic_energy", "populations", "correlation", "cm_channels_constant")


def compare_runs(manifest_a, manifest_b):
    """Side-by-side report of two finished runs (manifests as dicts or paths)."""
    a = load_manifest(manifest_a) if isinstance(manifest_a, (str, os.PathLike)) else manifest_a
    b = load_manifest(manifest_b) if isinstance(manifest_b, (str, os.PathLike)) else manifest_b
    for m, name in ((a, "a"), (b, "b")):
        if m.get("schema") != MANIFEST_SCHEMA or m.get("status") != "ok":
            raise ValueError(f"manifest {name} is not a finished run with schema {MANIFEST_SCHEMA}")
        missing = [k for k in _COMPARED if k not in m]
        if missing:
            raise ValueError(f"manifest {name} lacks fields {missing}")
    if set(a["populations"]) != set(b["populations"]):
        raise ValueError("population tables cover different shells")

    def row(va, vb):
        return {"a": va, "b": vb, "diff": vb - va}

    pz_a, pz_b = a["final"]["P"][2], b["final"]["P"][2]
    report = {
        "final_Pz": row(pz_a, pz_b),
        "final_abs_Pz_larger": "a" if abs(pz_a) > abs(pz_b) else "b" if abs(pz_b) > abs(pz_a) else "equal",
        "kinetic_energy": {k: row(a["kinetic_energy"][k], b["kinetic_energy"][k]) for k in ("cm", "electron")},
        "populations": {n: row(a["populations"][n], b["populations"][n]) for n in sorted(a["populations"], key=int)},
        "correlation": {
            pair: {"a": a["correlation"]["pairs"].get(pair, {}).get("correlation"),
                   "b": b["correlation"]["pairs"].get(pair, {}).get("correlation")}
            for pair in a["correlation"]["pairs"]
        },
        "cm_channels": {
            c: {"a": "constant" if a["cm_channels_constant"][c] else "varying",
                "b": "constant" if b["cm_channels_constant"][c] else "varying"}
            for c in a["cm_channels_constant"]
        },
        "omega": row(a["config"]["omega_au"], b["config"]["omega_au"]),
    }
    return report


def _set_threads(n):
    if n is None:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def build_parser():
    p = argparse.ArgumentParser(prog="hydrogen-cm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a configured simulation")
    r.add_argument("--config", required=True, help="key=value configuration file")
    r.add_argument("--output", help="output directory (overrides output_dir)")
    r.add_argument("--checkpoint", help="checkpoint file written periodically and on failure")
    r.add_argument("--resume", action="store_true", help="resume from --checkpoint")
    r.add_argument("--threads", type=int, help="BLAS thread count")
    r.add_argument("--plot", dest="plot", action="store_true", default=True)
    r.add_argument("--no-plot", dest="plot", action="store_false")
    r.add_argument("-v", "--verbose", action="store_true")

    c = sub.add_parser("compare", help="compare two finished runs")
    c.add_argument("manifest_a")
    c.add_argument("manifest_b")

    v = sub.add_parser("validate-config", help="parse a configuration and print resolved values")
    v.add_argument("--config", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "validate-config":
            cfg = parse_config(args.config)
            print(json.dumps(cfg.resolved(), indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "compare":
            print(json.dumps(compare_runs(args.manifest_a, args.manifest_b), indent=2))
            return EXIT_OK
        cfg = parse_config(args.config)
        if args.resume and not args.checkpoint:
            raise ConfigError("--resume requires --checkpoint")
        _set_threads(args.threads)

        def progress(step, total):
            if step % 1000 == 0 or step == total:
                log.info("step %d/%d", step, total)

        manifest = execute(cfg, args.output, args.checkpoint, args.resume, args.plot, progress)
        print(json.dumps({"status": manifest["status"], "final_P": manifest["final"]["P"],
                          "correlation_passed": manifest["correlation"]["passed"]}))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalHealthError as exc:
        where = getattr(exc, "checkpoint", None)
        print(f"numerical failure: {exc}" + (f" (checkpoint: {where})" if where else ""), file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
