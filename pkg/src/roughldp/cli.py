"""Command-line entry point: ``roughldp {simulate,rate,verify,diagnose,check}``."""

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import warnings

import numpy as np

from . import __version__
from .applications import barrier_rate, terminal_tail_rate
from .config import SUBCOMMANDS, ConfigError, build_config, load_yaml
from .diagnostics import roughness_report
from .gaussian import (IndefiniteCovarianceError, canonical_metric, covariance_matrix,
                       metric_sandwich_report, sample_cholesky, sample_convolution)
from .kernels import l2_modulus
from .mc import compare_rate, ldp_sweep
from .model import ModelError, simulate_log_price
from .moduli import fernique_classify, make_modulus
from .rates import (SolverOptions, VolterraHat, it_hat_rate, it_rate, j_rate, qt_rate,
                    zero_cost_terminal)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_INCONSISTENT = 0, 2, 3, 4
log = logging.getLogger("roughldp")


def _f(x):
    return "%.17g" % x


def _write_atomic(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(text):
    return hashlib.sha256(text.encode()).hexdigest()


def _matrix_csv(header, rows):
    lines = [",".join(_f(h) for h in header)]
    lines += [",".join(_f(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _table_csv(columns, rows):
    def cell(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (float, np.floating)):
            return _f(v)
        return str(v)
    return ",".join(columns) + "\n" + "".join(",".join(cell(v) for v in r) + "\n" for r in rows)


# --- subcommands -----------------------------------------------------------------

def cmd_simulate(cfg):
    exp, m, g = cfg.experiment, cfg.model, cfg.grid
    n_paths = exp.get("n_paths", 1000)
    scheme = exp.get("scheme", "convolution")
    export = exp.get("export", "both")
    if exp.get("process", "log_price") == "driver":
        if scheme == "cholesky":
            ens = sample_cholesky(covariance_matrix(m.kernel, g, workers=cfg.workers),
                                  n_paths, cfg.seed, cfg.workers)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                ens = sample_convolution(m.kernel, g, n_paths, cfg.seed, cfg.workers)
    else:
        ens = simulate_log_price(m, exp.get("eps", 1.0), g, n_paths, cfg.seed, scheme,
                                 cfg.workers)
    out = {}
    if export in ("paths", "both"):
        out["paths.csv"] = _matrix_csv(g.times, ens.values)
    if export in ("terminal", "both"):
        out["terminal.csv"] = "x_T\n" + "".join(_f(v) + "\n" for v in ens.values[:, -1])
    log.info("simulated %d paths on %d steps (%s)", n_paths, g.n, ens.scheme)
    return out, EXIT_OK


def _opts(cfg):
    e = cfg.experiment
    return SolverOptions(n=cfg.grid.n, tol=e.get("tol", 1e-8), maxiter=e.get("maxiter", 500),
                         n_starts=e.get("n_starts", 8), start_scale=e.get("start_scale", 1.0),
                         seed=cfg.seed, workers=cfg.workers)


def cmd_rate(cfg):
    exp, m = cfg.experiment, cfg.model
    kind = exp.get("kind", "it")
    opts = _opts(cfg)
    if kind in ("it", "it_hat"):
        xs = [float(x) for x in exp.get("x", [])]
        if "x_range" in exp:
            xr = exp["x_range"]
            xs += np.linspace(xr["start"], xr["stop"], xr.get("num", 11)).tolist()
        if "around_zero_cost" in exp:
            x_star = zero_cost_terminal(m, cfg.grid)
            for d in exp["around_zero_cost"]:
                xs += [x_star - d, x_star + d]
        solver = it_rate if kind == "it" else it_hat_rate
        rows, ok = [], True
        for x in xs:
            r = solver(x, m, opts)
            ok &= r.converged
            rows.append((float(x), float(r.value), r.converged, r.starts_agreeing, r.branch))
        text = _table_csv(["x", "rate", "converged", "starts_agreeing", "branch"], rows)
    else:
        p = exp["path"]
        vals = (np.asarray(p["values"], float) if "values" in p
                else float(p["slope"]) * cfg.grid.times)
        if kind == "qt":
            r = qt_rate(vals, m, opts)
        else:
            r = j_rate(VolterraHat(cfg.grid, vals), m.kernel, opts)
        ok = r.converged
        text = _table_csv(["path", "rate", "converged", "starts_agreeing"],
                          [(kind, float(r.value), r.converged, r.starts_agreeing)])
    return {"rates.csv": text}, EXIT_OK if ok else EXIT_NUMERICAL


def _solver_rate(cfg, threshold):
    m, ev = cfg.model, cfg.extras["event"]
    opts = SolverOptions(n=cfg.grid.n, seed=cfg.seed, workers=cfg.workers)
    if "barrier" in cfg.extras:
        return barrier_rate(m, cfg.extras["barrier"], opts)
    return terminal_tail_rate(m, threshold, opts, upper=ev.kind == "terminal_geq")


def cmd_verify(cfg):
    exp, ev = cfg.experiment, cfg.extras["event"]
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always", RuntimeWarning)
        sweep = ldp_sweep(cfg.model, ev, exp["eps"], exp.get("n_paths", 100000), cfg.seed,
                          feed=exp.get("feed", "mc"), grid=cfg.grid,
                          scheme=exp.get("scheme", "convolution"), workers=cfg.workers,
                          pilot=exp.get("pilot", True))
    for a in sweep.advisories:
        log.warning(a)
    rep = _solver_rate(cfg, exp.get("solver_threshold", ev.threshold))
    v = compare_rate(sweep, rep, exp.get("tolerance", 0.1))
    verdict = _table_csv(["L_hat", "L_solver", "gap", "threshold", "status", "reason"],
                         [(v.L_hat, v.L_solver, v.gap, v.threshold, v.status, v.reason)])
    log.info("verdict: %s (L_hat=%.6g, L_solver=%.6g)", v.status, v.L_hat, v.L_solver)
    return ({"sweep.csv": sweep.to_csv(), "verdict.csv": verdict},
            EXIT_OK if v.consistent else EXIT_INCONSISTENT)


def _driver_modulus(kernel):
    if kernel.modulus is not None:
        return kernel.modulus
    if kernel.family == "brownian":
        return make_modulus("power", {"H": 0.5}, kernel.T)
    return None


def cmd_diagnose(cfg):
    exp, m, g = cfg.experiment, cfg.model, cfg.grid
    n_paths = exp.get("n_paths", 50)
    if exp.get("scheme", "convolution") == "cholesky":
        ens = sample_cholesky(covariance_matrix(m.kernel, g, workers=cfg.workers),
                              n_paths, cfg.seed, cfg.workers)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ens = sample_convolution(m.kernel, g, n_paths, cfg.seed, cfg.workers)
    rep = roughness_report(ens.values, g.dt, _driver_modulus(m.kernel), cfg.workers,
                           exp.get("t_min"))
    log.info("median slope %.4f", rep.slope)
    return {"roughness.csv": rep.to_csv()}, EXIT_OK


def cmd_check(cfg):
    exp, k, g = cfg.experiment, cfg.model.kernel, cfg.grid
    rows = [("kernel", k.describe())]
    mod = _driver_modulus(k)
    if mod is not None:
        rows += [("modulus", mod.describe()), ("fernique", fernique_classify(mod)),
                 ("mv_flag", str(mod.mv).lower())]
    cov = covariance_matrix(k, g, quad_order=exp.get("quad_order", 16), workers=cfg.workers)
    if mod is not None:
        rep = metric_sandwich_report(canonical_metric(cov), mod, g, exp.get("slack", 0.02))
        rows += [("sandwich_pairs", str(rep.n_pairs)),
                 ("sandwich_violations", str(rep.n_violations)),
                 ("max_lower_violation", _f(rep.max_lower_violation)),
                 ("max_upper_violation", _f(rep.max_upper_violation)),
                 ("lower_pair", f"{_f(rep.lower_pair[0])};{_f(rep.lower_pair[1])}"),
                 ("upper_pair", f"{_f(rep.upper_pair[0])};{_f(rep.upper_pair[1])}")]
    for lag in exp.get("lags", []):
        rows.append((f"l2_modulus[{_f(lag)}]",
                     _f(l2_modulus(k, lag, exp.get("l2_resolution", 64)))))
    return {"check.csv": _table_csv(["key", "value"], rows)}, EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "rate": cmd_rate, "verify": cmd_verify,
            "diagnose": cmd_diagnose, "check": cmd_check}


# --- driver ------------------------------------------------------------------------

def _read_config(path, subcommand):
    """Load YAML or a manifest; returns ``(data, marks, subcommand_in_manifest)``."""
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json"):
        try:
            man = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno, source=path) from None
        if not isinstance(man, dict) or "config" not in man:
            raise ConfigError("manifest needs a 'config' entry", source=path)
        if man.get("subcommand") not in (None, subcommand):
            raise ConfigError(f"manifest was written by '{man['subcommand']}', "
                              f"not '{subcommand}'", source=path)
        return man["config"], {}
    return load_yaml(text, source=path)


def _configure_logging(quiet):
    # only the package logger is touched so embedding applications keep theirs
    log.setLevel(logging.WARNING if quiet else logging.INFO)
    if not any(getattr(h, "_roughldp", False) for h in log.handlers):
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        h._roughldp = True
        log.addHandler(h)


def run(argv=None):
    parser = argparse.ArgumentParser(prog="roughldp", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML config or manifest.json")
        p.add_argument("--seed", type=int, help="override execution.seed (unsigned 64-bit)")
        p.add_argument("--workers", type=int, help="worker threads")
        p.add_argument("--out", help="output directory")
        p.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    args = parser.parse_args(argv)
    _configure_logging(args.quiet)
    try:
        data, marks = _read_config(args.config, args.command)
        cfg = build_config(data, args.command, marks, args.config, args.seed, args.workers,
                           args.out)
    except (ConfigError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    try:
        outputs, code = COMMANDS[args.command](cfg)
    except (IndefiniteCovarianceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (ModelError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    hashes = {}
    for name, text in sorted(outputs.items()):
        _write_atomic(os.path.join(cfg.out, name), text)
        hashes[name] = _sha256(text)
        log.info("wrote %s", os.path.join(cfg.out, name))
    manifest = {"subcommand": args.command, "version": __version__, "config": cfg.data,
                "config_sha256": cfg.sha256, "seed": cfg.seed, "workers": cfg.workers,
                "out": cfg.out,
                "outputs": hashes, "exit_code": code}
    _write_atomic(os.path.join(cfg.out, "manifest.json"),
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if code == EXIT_NUMERICAL:
        log.error("a solver did not converge; see the converged column")
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
