"""Command-line front end: simulate, approximate, certify, sweep, reproduce.

Artifacts are CSV files plus generated gnuplot scripts, never rendered
images.  Every command writes a manifest.json recording the resolved
configuration, the seeds, any calibrated values, the tool version, the
produced files, and the wall time.  CSV output is a pure function of
(config, seed, version): rerunning a command reproduces the data files
byte for byte.  All numeric CSV fields use %.17g.

Exit codes: 0 ok/feasible, 1 infeasible, 2 usage or config error,
3 simulation divergence, 4 training failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import morris_lecar as ml
from .certify import (CertProblem, SolverOptions, certify, save_certificate,
                      sigma_sweep, sweep_to_csv)
from .embedding import EmbeddingConfig, build_embedding
from .lure import LureSystem, load_system
from .sde import SimConfig, lowpass, simulate
from .shallow import embedding_to_dict, load_embedding, save_net

CHANNEL_NAMES = ("leak", "ca", "k")


class CliError(Exception):
    """Usage or configuration problem; maps to exit code 2."""


# ---------------------------------------------------------------------------
# small helpers

def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def _load_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"no such file: {p}")
    try:
        with open(p) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed JSON in {p}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliError(f"{p}: expected a JSON object")
    return doc


def parse_range(text: str, name: str) -> np.ndarray:
    """Parse 'a:b:step' into an inclusive ascending grid."""
    parts = text.split(":")
    if len(parts) != 3:
        raise CliError(f"--{name} wants a:b:step, got {text!r}")
    try:
        a, b, step = (float(t) for t in parts)
    except ValueError as exc:
        raise CliError(f"--{name}: non-numeric bound in {text!r}") from exc
    if step <= 0:
        raise CliError(f"--{name}: step must be > 0")
    grid = np.arange(a, b + step / 2.0, step)
    if grid.size == 0:
        raise CliError(f"--{name}: empty range {text!r}")
    return grid


def _odd_window(w) -> int:
    w = int(w)
    if w < 1 or w % 2 == 0:
        raise CliError("filter window must be a positive odd integer")
    return w


def write_csv(path, header: list[str], columns: list[np.ndarray]) -> None:
    cols = [np.asarray(c, dtype=float) for c in columns]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_manifest(out_dir: Path, command: str, config: dict, seeds: dict,
                   calibrated: dict | None, outputs: list[str], t0: float) -> None:
    doc = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "calibrated": calibrated,
        "version": __version__,
        "outputs": outputs,
        "wall_time_s": time.monotonic() - t0,
    }
    missing = [o for o in outputs if not (out_dir / o).is_file()]
    if missing:
        raise RuntimeError(f"manifest lists missing outputs: {missing}")
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _literal(s: str) -> str:
    return s.replace("\\", "\\\\").replace("'", "''")


def traj_plot_script(csv_name: str, columns: list[str], title: str) -> str:
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set xlabel 't'",
        f"set title '{_literal(title)}'",
    ]
    plots = [f"'{_literal(csv_name)}' using 1:{i + 2} with lines"
             for i in range(len(columns))]
    lines.append("plot \\\n  " + ", \\\n  ".join(plots))
    return "\n".join(lines) + "\n"


def sweep_plot_script(csv_name: str, boundary: float | None) -> str:
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set xlabel 'sigma'",
        "set ylabel 'feasibility margin'",
        "set title 'certificate margin vs noise level'",
        "zero(x) = 0",
    ]
    if boundary is not None:
        lines += [
            f"set arrow from {_fmt(boundary)}, graph 0 to {_fmt(boundary)}, graph 1 nohead dashtype 2",
            f"set label 'feasibility boundary' at {_fmt(boundary)}, graph 0.95 offset 1,0",
        ]
    else:
        lines.append("# no feasible sigma on the sweep grid; no boundary to mark")
    lines.append(f"plot '{_literal(csv_name)}' using 1:2 with linespoints, zero(x) with lines dashtype 3 title ''")
    return "\n".join(lines) + "\n"


def _resolve_iapp(p: ml.MorrisLecarParams, spec) -> tuple[ml.MorrisLecarParams, float]:
    """spec is a number, or the string 'calibrate' (scan for the smallest
    current giving sustained spiking)."""
    if isinstance(spec, str):
        if spec != "calibrate":
            raise CliError(f"i_app must be a number or 'calibrate', got {spec!r}")
        value = ml.calibrate_iapp(p)
    else:
        try:
            value = float(spec)
        except (TypeError, ValueError) as exc:
            raise CliError(f"bad i_app: {spec!r}") from exc
    return p.with_iapp(value), value


def _ml_params(config: dict) -> ml.MorrisLecarParams:
    if "params" in config:
        try:
            return ml.params_from_dict(config["params"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(f"bad params block: {exc}") from exc
    return ml.MorrisLecarParams()


def _load_cert_target(path) -> tuple[LureSystem, bool]:
    """A certification target is a bare system JSON or an embedding JSON
    (detected by the n_phys field, whose C block is rank-deficient by
    construction)."""
    doc = _load_json(path)
    try:
        if "n_phys" in doc:
            return load_embedding(path).system, True
        return load_system(path), False
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"bad system file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    config = _load_json(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()

    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    sim = SimConfig(t_end=float(config.get("t_end", 500.0)),
                    dt=float(config.get("dt", 5e-3)),
                    seed=seed,
                    record_stride=int(config.get("record_stride", 10)))
    model = config.get("model", "ml")
    calibrated = None

    if model == "ml":
        sigma = float(config.get("sigma", 0.0))
        noise_mode = args.noise_mode or config.get("noise_mode", "state")
        if noise_mode not in ("state", "current"):
            raise CliError(f"noise_mode must be state or current, got {noise_mode!r}")
        p = _ml_params(config)
        p, i_app = _resolve_iapp(p, config.get("i_app", "calibrate"))
        calibrated = {"i_app": i_app, "v2": p.v2}
        x0 = np.asarray(config.get("x0", ml.DEFAULT_INIT.tolist()), dtype=float)
        path = ml.simulate_ml(p, x0, sim, sigma=sigma, noise_mode=noise_mode)
        header = ["t", "V", "N"]
        cols = [path.times, path.states[:, 0], path.states[:, 1]]
        if sigma > 0.0:
            window = _odd_window(args.filter_window if args.filter_window is not None
                                 else config.get("filter_window", 101))
            filt = lowpass(path.states, window)
            header += ["V_filt", "N_filt"]
            cols += [filt[:, 0], filt[:, 1]]
        title = f"membrane trajectory, sigma={sigma:g}, mode={noise_mode}"
    elif model == "lure":
        if "system" not in config:
            raise CliError("lure model config needs a 'system' file path")
        system = _load_cert_target(config["system"])[0]
        if "sigma" in config:
            system = system.with_sigma(float(config["sigma"]))
        x0 = np.asarray(config.get("x0", np.zeros(system.n)), dtype=float)
        path = simulate(system, x0, sim)
        header = ["t"] + [f"x{i + 1}" for i in range(system.n)]
        cols = [path.times] + [path.states[:, i] for i in range(system.n)]
        title = f"state trajectory, sigma={system.sigma:g}"
    else:
        raise CliError(f"unknown model {model!r} (want ml or lure)")

    write_csv(out_dir / "traj.csv", header, cols)
    with open(out_dir / "traj.plt", "w") as fh:
        fh.write(traj_plot_script("traj.csv", header[1:], title))
    resolved = dict(config)
    resolved["seed"] = seed
    write_manifest(out_dir, "simulate", resolved, {"simulation": seed},
                   calibrated, ["traj.csv", "traj.plt"], t0)
    if path.diverged:
        print(f"divergence at t={path.times[-1] if path.times.size else 0.0:g}; "
              "partial trajectory written", file=sys.stderr)
        return 3
    print(f"wrote {out_dir / 'traj.csv'} ({path.times.size} samples)")
    return 0


def cmd_approximate(args) -> int:
    config = _load_json(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()

    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    p = _ml_params(config)
    p, i_app = _resolve_iapp(p, config.get("i_app", "calibrate"))
    box = config.get("box", [[-80.0, 0.0], [120.0, 1.0]])
    ecfg = EmbeddingConfig(
        hidden=int(config.get("width", 10)),
        kappa=float(config.get("kappa", 1.0)),
        box=(tuple(box[0]), tuple(box[1])),
        n_samples=int(config.get("n_samples", 10000)),
        epochs=int(config.get("epochs", 1500)),
        batch_size=int(config.get("batch_size", 128)),
        lr=float(config.get("lr", 0.02)),
        lr_decay=float(config.get("lr_decay", 0.004)),
        seed=seed,
        sigma=float(config.get("sigma", 0.0)),
        i_app=i_app,
        offset_tol=float(config.get("offset_tol", 1e-3)),
    )
    report = build_embedding(p, ecfg)
    if report.diverged:
        print("training diverged (non-finite loss); no embedding written", file=sys.stderr)
        return 4

    outputs = []
    for name, net in zip(CHANNEL_NAMES, report.nets):
        fname = f"net_{name}.json"
        save_net(net, out_dir / fname)
        outputs.append(fname)
    with open(out_dir / "embedding.json", "w") as fh:
        json.dump(embedding_to_dict(report.embedding), fh, indent=2)
        fh.write("\n")
    outputs.append("embedding.json")

    rng_pct = 100.0 * report.channel_rms / report.channel_range
    residuals = {
        "channel_rms": report.channel_rms.tolist(),
        "channel_range": report.channel_range.tolist(),
        "channel_rms_pct_of_range": rng_pct.tolist(),
        "recovery_rms": report.recovery_rms,
        "recovery_max": report.recovery_max,
        "final_losses": [float(h[-1]) for h in report.loss_histories],
        "state_dim": report.embedding.system.n,
        "units": int(report.embedding.system.m),
    }
    with open(out_dir / "residuals.json", "w") as fh:
        json.dump(residuals, fh, indent=2)
        fh.write("\n")
    outputs.append("residuals.json")

    resolved = dict(config)
    resolved["seed"] = seed
    write_manifest(out_dir, "approximate", resolved, {"training": seed},
                   {"i_app": i_app, "v2": p.v2}, outputs, t0)
    print(f"embedded system: n={report.embedding.system.n}, "
          f"channel RMS % of range: {np.array2string(rng_pct, precision=3)}")
    return 0


def _certify_options(args, embedded: bool) -> SolverOptions:
    return SolverOptions(seed=args.seed if args.seed is not None else 0,
                         allow_nonorthonormal_c=embedded)


def cmd_certify(args) -> int:
    system, embedded = _load_cert_target(args.system)
    if args.sigma is not None:
        if ":" in args.sigma:
            raise CliError("certify wants a single --sigma value")
        system = system.with_sigma(float(args.sigma))
    nu_grid = (parse_range(args.nu_grid, "nu-grid")
               if args.nu_grid is not None else None)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()

    kwargs = {} if nu_grid is None else {"nu_grid": nu_grid}
    try:
        cert = certify(CertProblem(system, options=_certify_options(args, embedded),
                                   **kwargs))
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    save_certificate(cert, out_dir / "certificate.json")
    write_manifest(out_dir, "certify",
                   {"system": str(args.system), "sigma": system.sigma,
                    "nu_grid": None if nu_grid is None else nu_grid.tolist()},
                   {"solver": args.seed if args.seed is not None else 0},
                   None, ["certificate.json"], t0)
    verdict = "feasible" if cert.feasible else "infeasible"
    print(f"sigma={system.sigma:g}: {verdict}, margin={cert.margin:.6g}, nu={cert.nu:g}")
    return 0 if cert.feasible else 1


def cmd_sweep(args) -> int:
    if args.sigma is None:
        raise CliError("sweep needs --sigma a:b:step")
    sigmas = parse_range(args.sigma, "sigma")
    if np.any(sigmas < 0):
        raise CliError("--sigma: noise levels must be >= 0")
    system, embedded = _load_cert_target(args.system)
    nu_grid = (parse_range(args.nu_grid, "nu-grid")
               if args.nu_grid is not None else None)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()

    results = sigma_sweep(system, sigmas, nu_grid=nu_grid,
                          options=_certify_options(args, embedded), jobs=args.jobs)
    sweep_to_csv(results, out_dir / "sweep.csv")
    feasible = [s for s, cert in results if cert.feasible]
    boundary = feasible[0] if feasible else None
    with open(out_dir / "sweep.plt", "w") as fh:
        fh.write(sweep_plot_script("sweep.csv", boundary))
    write_manifest(out_dir, "sweep",
                   {"system": str(args.system), "sigmas": sigmas.tolist(),
                    "nu_grid": None if nu_grid is None else nu_grid.tolist()},
                   {"solver": args.seed if args.seed is not None else 0},
                   None, ["sweep.csv", "sweep.plt"], t0)
    if boundary is None:
        print(f"no feasible sigma among {sigmas.size} grid points "
              f"(best margin {min(c.margin for _, c in results):.6g})")
    else:
        print(f"first feasible sigma: {boundary:g}")
    return 0


# -- reproduce ---------------------------------------------------------------

FIG_SEEDS = {"fig3": 0, "fig4": 11, "fig5": 7}


def _fig3(out_dir: Path, seed: int, jobs: int) -> int:
    t0 = time.monotonic()
    p, i_app = _resolve_iapp(ml.MorrisLecarParams(), "calibrate")
    sim = SimConfig(t_end=500.0, dt=5e-3, seed=seed, record_stride=10)
    path = ml.simulate_ml(p, ml.DEFAULT_INIT, sim, sigma=0.0)
    write_csv(out_dir / "traj.csv", ["t", "V", "N"],
              [path.times, path.states[:, 0], path.states[:, 1]])
    with open(out_dir / "traj.plt", "w") as fh:
        fh.write(traj_plot_script("traj.csv", ["V", "N"],
                                  f"unforced spiking, i_app={i_app:g}"))
    write_manifest(out_dir, "reproduce fig3",
                   {"t_end": 500.0, "dt": 5e-3, "record_stride": 10, "sigma": 0.0},
                   {"simulation": seed}, {"i_app": i_app, "v2": p.v2},
                   ["traj.csv", "traj.plt"], t0)
    return 3 if path.diverged else 0


def _fig4(out_dir: Path, seed: int, jobs: int, window: int) -> int:
    t0 = time.monotonic()
    p, i_app = _resolve_iapp(ml.MorrisLecarParams(), "calibrate")
    sim = SimConfig(t_end=500.0, dt=5e-3, seed=seed, record_stride=10)
    base = ml.simulate_ml(p, ml.DEFAULT_INIT, sim, sigma=0.0)
    noisy = ml.simulate_ml(p, ml.DEFAULT_INIT, sim, sigma=0.85, noise_mode="state")
    write_csv(out_dir / "traj_sigma0.csv", ["t", "V", "N"],
              [base.times, base.states[:, 0], base.states[:, 1]])
    filt = lowpass(noisy.states, window)
    write_csv(out_dir / "traj_sigma085.csv", ["t", "V", "N", "V_filt", "N_filt"],
              [noisy.times, noisy.states[:, 0], noisy.states[:, 1],
               filt[:, 0], filt[:, 1]])
    script = (
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        "set xlabel 't'\nset ylabel 'V (mV)'\n"
        "set title 'noise injection at sigma=0.85 vs sigma=0'\n"
        "plot 'traj_sigma0.csv' using 1:2 with lines, \\\n"
        "  'traj_sigma085.csv' using 1:2 with lines, \\\n"
        "  'traj_sigma085.csv' using 1:4 with lines lw 2\n")
    with open(out_dir / "traj.plt", "w") as fh:
        fh.write(script)
    write_manifest(out_dir, "reproduce fig4",
                   {"t_end": 500.0, "dt": 5e-3, "record_stride": 10,
                    "sigmas": [0.0, 0.85], "noise_mode": "state",
                    "filter_window": window},
                   {"simulation": seed}, {"i_app": i_app, "v2": p.v2},
                   ["traj_sigma0.csv", "traj_sigma085.csv", "traj.plt"], t0)
    return 3 if (base.diverged or noisy.diverged) else 0


def _fig5(out_dir: Path, seed: int, jobs: int, sigma_text: str | None) -> int:
    t0 = time.monotonic()
    p, i_app = _resolve_iapp(ml.MorrisLecarParams(), "calibrate")
    ecfg = EmbeddingConfig(seed=seed, i_app=i_app)
    report = build_embedding(p, ecfg)
    if report.diverged:
        print("training diverged; fig5 artifacts not written", file=sys.stderr)
        return 4

    outputs = []
    for name, net in zip(CHANNEL_NAMES, report.nets):
        fname = f"net_{name}.json"
        save_net(net, out_dir / fname)
        outputs.append(fname)
    with open(out_dir / "embedding.json", "w") as fh:
        json.dump(embedding_to_dict(report.embedding), fh, indent=2)
        fh.write("\n")
    outputs.append("embedding.json")

    sigmas = parse_range(sigma_text, "sigma") if sigma_text else np.arange(0.2, 2.0001, 0.2)
    opts = SolverOptions(seed=seed, allow_nonorthonormal_c=True)
    results = sigma_sweep(report.embedding.system, sigmas, options=opts, jobs=jobs)
    sweep_to_csv(results, out_dir / "sweep.csv")
    feasible = [s for s, cert in results if cert.feasible]
    with open(out_dir / "sweep.plt", "w") as fh:
        fh.write(sweep_plot_script("sweep.csv", feasible[0] if feasible else None))
    outputs += ["sweep.csv", "sweep.plt"]

    cert = certify(CertProblem(report.embedding.system.with_sigma(0.85), options=opts))
    save_certificate(cert, out_dir / "certificate.json")
    outputs.append("certificate.json")

    write_manifest(out_dir, "reproduce fig5",
                   {"sigmas": sigmas.tolist(), "embedding": "embedding.json"},
                   {"training": seed, "solver": seed},
                   {"i_app": i_app, "v2": p.v2}, outputs, t0)
    print(f"sweep: {len(feasible)}/{sigmas.size} feasible; "
          f"sigma=0.85 margin {cert.margin:.6g} "
          f"({'feasible' if cert.feasible else 'infeasible'})")
    return 0


def cmd_reproduce(args) -> int:
    fig = args.figure
    if fig not in FIG_SEEDS:
        raise CliError(f"unknown figure id {fig!r} (want fig3, fig4 or fig5)")
    seed = args.seed if args.seed is not None else FIG_SEEDS[fig]
    out_dir = Path(args.out) / fig
    out_dir.mkdir(parents=True, exist_ok=True)
    if fig == "fig3":
        return _fig3(out_dir, seed, args.jobs)
    if fig == "fig4":
        window = _odd_window(args.filter_window if args.filter_window is not None else 101)
        return _fig4(out_dir, seed, args.jobs, window)
    return _fig5(out_dir, seed, args.jobs, args.sigma)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sarlab",
        description="noise-injection stability toolbox: simulate, approximate, "
                    "certify, sweep, reproduce")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        if config_required:
            sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--seed", type=int, default=None, help="master seed")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="max parallel workers")

    sp = sub.add_parser("simulate", help="integrate one trajectory to CSV")
    common(sp, config_required=True)
    sp.add_argument("--filter-window", type=int, default=None,
                    help="odd moving-average window for the filtered columns")
    sp.add_argument("--noise-mode", choices=("state", "current"), default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("approximate", help="train the channel nets and embed")
    common(sp, config_required=True)
    sp.set_defaults(func=cmd_approximate)

    sp = sub.add_parser("certify", help="run the stability certificate search")
    common(sp)
    sp.add_argument("system", help="system or embedding JSON")
    sp.add_argument("--sigma", default=None, help="override the noise level")
    sp.add_argument("--nu-grid", default=None, help="a:b:step grid in (0,1)")
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("sweep", help="certify across a noise-level grid")
    common(sp)
    sp.add_argument("system", help="system or embedding JSON")
    sp.add_argument("--sigma", default=None, help="a:b:step noise grid", required=False)
    sp.add_argument("--nu-grid", default=None, help="a:b:step grid in (0,1)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("reproduce", help="regenerate a figure's artifacts")
    common(sp)
    sp.add_argument("figure", help="fig3 | fig4 | fig5")
    sp.add_argument("--sigma", default=None, help="fig5 sweep grid a:b:step")
    sp.add_argument("--filter-window", type=int, default=None)
    sp.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help; pass both through
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
