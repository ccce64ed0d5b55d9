"""Experiment runner: config parsing, dispatch, CSV and plot-data output.

Configs are flat ``key = value`` files with ``#`` comments; every run
writes its outputs plus a manifest (resolved config, package version,
seed) so results are reproducible from the manifest alone.  Exit codes:
0 success, 2 unknown key / malformed input, 3 precondition failure,
4 I/O error.
"""

import argparse
import csv
import os
import sys

import numpy as np

from . import __version__, boltzmann, chaos, core, jumps, mckean, oracle
from .core import RngStream, bundle_to_csv

KNOWN_KEYS = {
    "command", "model", "n", "ns", "t", "dt", "reps", "metric", "s", "p",
    "seed", "output", "k0", "sigma", "m", "rate", "ref_mult",
    "picard_iters", "n_grid", "stride",
}

COMMANDS = ("simulate", "oracle", "sweep", "couple", "graph-stats")

_INT_KEYS = {"n", "reps", "seed", "m", "ref_mult", "picard_iters",
             "n_grid", "stride", "p"}
_FLOAT_KEYS = {"t", "dt", "s", "k0", "sigma", "rate"}


class ConfigError(Exception):
    exit_code = 2


class PreconditionError(Exception):
    exit_code = 3


def _parse_value(key, raw):
    raw = raw.strip()
    if key == "ns":
        try:
            return [int(v) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"cannot parse ns list: {raw!r}")
    if key in _INT_KEYS:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"key {key} expects an integer, got {raw!r}")
    if key in _FLOAT_KEYS:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"key {key} expects a number, got {raw!r}")
    return raw


def parse_config(path, overrides=()):
    cfg = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise OSError(f"cannot read config: {exc}")
    entries = []
    for ln, line in enumerate(lines, 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {ln}: expected key = value")
        entries.append(tuple(part.strip() for part in stripped.split("=", 1)))
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not key=value")
        entries.append(tuple(part.strip() for part in ov.split("=", 1)))
    for key, raw in entries:
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        cfg[key] = _parse_value(key, raw)
    if cfg.get("command") not in COMMANDS:
        raise ConfigError(f"command must be one of {', '.join(COMMANDS)}")
    return cfg


def _require(cfg, *keys):
    for key in keys:
        if key not in cfg:
            raise PreconditionError(f"missing required key {key!r}")
    return [cfg[k] for k in keys]


def _write_manifest(out_dir, cfg, outputs, warnings=0):
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w", newline="") as fh:
        fh.write(f"version = {__version__}\n")
        for key in sorted(cfg):
            val = cfg[key]
            if isinstance(val, list):
                val = ",".join(str(v) for v in val)
            elif isinstance(val, float):
                val = core.FMT % val
            fh.write(f"{key} = {val}\n")
        for name in outputs:
            fh.write(f"output_file = {name}\n")
        fh.write(f"warnings = {warnings}\n")


def _cmd_simulate(cfg, out_dir):
    model_tag, n, t = _require(cfg, "model", "n", "t")
    seed = cfg.get("seed", 0)
    root = RngStream(seed)
    n_grid = cfg.get("n_grid", 11)
    out_name = cfg.get("output", "trajectory.csv")
    if model_tag == "kuramoto":
        model = mckean.kuramoto_model(cfg.get("k0", 1.0),
                                      cfg.get("sigma", 0.5))
        dt = cfg.get("dt")
        if dt is None:
            raise PreconditionError("kuramoto simulate needs dt")
        run = mckean.DiffusionRun(
            model, n, dt, t, root,
            init=lambda gen: np.array([gen.uniform(0.0, 2.0 * np.pi)]),
            d=1, stride=max(1, int(round(t / dt)) // max(1, n_grid - 1)))
        bundle = mckean.simulate_particles(run)
    elif model_tag == "kac":
        model = boltzmann.kac_model(cfg.get("rate", 1.0))
        init = lambda gen: gen.standard_normal(1)
        bundle, _ = boltzmann.uniform_clock_simulate(
            model, init, t, root, n=n, d=1, n_grid=n_grid)
    elif model_tag == "choose_leader":
        m = cfg.get("m", 3)
        model = jumps.choose_leader_model(np.eye(m))
        init = lambda gen: np.array([float(gen.integers(m))])
        bundle, _ = jumps.pdmp_simulate(model, init, t, root, n=n, d=1,
                                        n_grid=n_grid)
    else:
        raise PreconditionError(f"unknown simulate model {model_tag!r}")
    bundle_to_csv(bundle, os.path.join(out_dir, out_name))
    return [out_name]


def _cmd_oracle(cfg, out_dir):
    model_tag, n, t = _require(cfg, "model", "n", "t")
    m = cfg.get("m", 3)
    out_name = cfg.get("output", "oracle.csv")
    if model_tag == "choose_leader":
        fmodel = oracle.finite_choose_leader(np.eye(m))
    elif model_tag == "cyclic_collision":
        fmodel = oracle.finite_cyclic_collision(m)
    else:
        raise PreconditionError(f"unknown oracle model {model_tag!r}")
    q = oracle.build_generator(fmodel, n)
    f0 = np.full(m ** n, 1.0 / m ** n)
    ft = oracle.exact_evolve(q, f0, t)
    oracle.evolve_to_csv(ft, os.path.join(out_dir, out_name))
    return [out_name]


def _cmd_sweep(cfg, out_dir):
    model_tag, ns, t = _require(cfg, "model", "ns", "t")
    report = chaos.sweep(model_tag, ns, t, cfg.get("dt", 1e-3),
                         cfg.get("reps", 16), cfg.get("seed", 0),
                         metric=cfg.get("metric", "w1"),
                         ref_mult=cfg.get("ref_mult", 16),
                         picard_iters=cfg.get("picard_iters", 2))
    out_name = cfg.get("output", "report.csv")
    report.to_csv(os.path.join(out_dir, out_name))
    return [out_name]


def _cmd_couple(cfg, out_dir):
    n, t, dt = _require(cfg, "n", "t", "dt")
    seed = cfg.get("seed", 0)
    reps = cfg.get("reps", 8)
    root = RngStream(seed)
    model = mckean.kuramoto_model(cfg.get("k0", 1.0), cfg.get("sigma", 0.5))
    init = lambda gen: np.array([gen.uniform(0.0, 2.0 * np.pi)])
    ref = mckean.nonlinear_reference(model, init,
                                     cfg.get("ref_mult", 16) * n, t, dt,
                                     cfg.get("picard_iters", 2),
                                     root.split(0xA))
    rep = mckean.synchronous_coupling(model, n, ref, t, dt, root.split(0xB),
                                      reps=reps, p=cfg.get("p", 2))
    out_name = cfg.get("output", "coupling.csv")
    with open(os.path.join(out_dir, out_name), "w", newline="") as fh:
        fh.write("N,T,dt,p,pathwise_eps,pointwise_eps,ci_lo,ci_hi,seed\n")
        fh.write(",".join([str(n), core.FMT % t, core.FMT % dt,
                           str(rep.p), core.FMT % rep.eps_pathwise,
                           core.FMT % rep.eps_pointwise,
                           core.FMT % rep.ci_pathwise[0],
                           core.FMT % rep.ci_pathwise[1], str(seed)]) + "\n")
    return [out_name]


def _cmd_graph_stats(cfg, out_dir):
    n, t = _require(cfg, "n", "t")
    reps = cfg.get("reps", 1000)
    seed = cfg.get("seed", 0)
    rate = cfg.get("rate", 1.0)
    root = RngStream(seed)
    out_name = cfg.get("output", "graphs.csv")
    with open(os.path.join(out_dir, out_name), "w", newline="") as fh:
        fh.write("replica,routes,collected,recollisions\n")
        for rep in range(reps):
            g = boltzmann.sample_interaction_graph(n, rate, t, 0,
                                                   root.split(rep))
            fh.write(f"{rep},{len(g.routes)},{len(g.collected())},"
                     f"{boltzmann.count_recollisions(g)}\n")
    return [out_name]


_DISPATCH = {
    "simulate": _cmd_simulate,
    "oracle": _cmd_oracle,
    "sweep": _cmd_sweep,
    "couple": _cmd_couple,
    "graph-stats": _cmd_graph_stats,
}


def run(config_path, overrides=(), out_dir=".", threads=1):
    """Execute a config; returns the process exit code."""
    try:
        cfg = parse_config(config_path, overrides)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 4
    if threads < 1:
        print("error: config: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        os.makedirs(out_dir, exist_ok=True)
        outputs = _DISPATCH[cfg["command"]](cfg, out_dir)
        _write_manifest(out_dir, cfg, outputs)
    except PreconditionError as exc:
        print(f"error: precondition: {exc}", file=sys.stderr)
        return 3
    except (ValueError, FloatingPointError) as exc:
        print(f"error: precondition: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 4
    return 0


def emit_plotdata(report_path, out_dir="."):
    """Convert a report CSV into a whitespace table plus fit coefficients.

    Columns: log10(N), log10(value), fit residual.  Rows with nonpositive
    values are dropped; the drop count is recorded in the manifest.
    """
    try:
        with open(report_path) as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 4
    if not rows or "N" not in rows[0] or "value" not in rows[0]:
        print("error: config: malformed report CSV", file=sys.stderr)
        return 2
    pts = []
    dropped = 0
    for row in rows:
        try:
            n = float(row["N"])
            v = float(row["value"])
        except (TypeError, ValueError):
            print("error: config: malformed report CSV", file=sys.stderr)
            return 2
        if v <= 0:
            dropped += 1
            continue
        pts.append((np.log10(n), np.log10(v)))
    if len(pts) < 2:
        print("error: config: fewer than two usable rows", file=sys.stderr)
        return 2
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    os.makedirs(out_dir, exist_ok=True)
    try:
        with open(os.path.join(out_dir, "plot.dat"), "w", newline="") as fh:
            for x, y, r in zip(xs, ys, resid):
                fh.write(f"{core.FMT % x} {core.FMT % y} {core.FMT % r}\n")
        with open(os.path.join(out_dir, "fit.coef"), "w", newline="") as fh:
            fh.write(f"slope = {core.FMT % slope}\n")
            fh.write(f"intercept = {core.FMT % intercept}\n")
        with open(os.path.join(out_dir, "plotdata-manifest.txt"), "w",
                  newline="") as fh:
            fh.write(f"version = {__version__}\n")
            fh.write(f"source = {report_path}\n")
            fh.write(f"warnings = {dropped}\n")
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 4
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="chaoskit",
        description="Interacting-particle simulation and verification suite")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    p_run = sub.add_parser("run", help="execute a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--set", action="append", default=[],
                       metavar="KEY=VALUE")
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--out", default=".")
    p_plot = sub.add_parser("plotdata", help="report CSV -> gnuplot table")
    p_plot.add_argument("report")
    p_plot.add_argument("--out", default=".")
    args = parser.parse_args(argv)
    if args.subcommand == "run":
        return run(args.config, args.set, args.out, args.threads)
    return emit_plotdata(args.report, args.out)


if __name__ == "__main__":
    sys.exit(main())
