"""Run configuration: YAML loading with line-aware validation and object builders."""

from dataclasses import dataclass, field
import copy
import hashlib
import json
import math

import yaml

from .applications import BarrierSpec
from .gaussian import Grid
from .kernels import make_kernel
from .mc import EVENT_KINDS, EventSpec
from .model import ModelError, ModelSpec, make_drift, make_volatility
from .moduli import DomainError, make_modulus

SUBCOMMANDS = ("simulate", "rate", "verify", "diagnose", "check")


class ConfigError(ValueError):
    """Invalid configuration; ``str()`` includes the source line when known."""

    def __init__(self, message, key=None, line=None, source=None):
        self.key, self.line, self.source = key, line, source
        where = f"{source or '<config>'}:{line}: " if line else ""
        what = f"{key}: " if key else ""
        super().__init__(f"{where}{what}{message}")


def _construct(node, path, marks):
    """Plain Python objects from a YAML node tree, recording line numbers."""
    marks[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = str(_construct(k, path, {}))
            marks[path + (key,)] = k.start_mark.line + 1
            out[key] = _construct(v, path + (key,), marks)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v, path + (i,), marks) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def load_yaml(text, source=None):
    """Parse YAML text; returns ``(data, marks)`` with ``marks[key_path] = line``."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        line = getattr(getattr(exc, "problem_mark", None), "line", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          line=None if line is None else line + 1, source=source) from None
    if node is None:
        raise ConfigError("empty configuration", source=source)
    marks = {}
    return _construct(node, (), marks), marks


@dataclass
class RunConfig:
    """Validated configuration with the objects built from it."""

    data: dict
    model: ModelSpec
    grid: Grid
    experiment: dict
    seed: int
    workers: int
    out: str
    extras: dict = field(default_factory=dict)

    @property
    def sha256(self):
        return config_hash(self.data)


def config_hash(data):
    blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


class _Checker:
    def __init__(self, marks, source):
        self.marks, self.source = marks, source

    def fail(self, path, msg):
        line = None
        p = tuple(path)
        while p and line is None:
            line = self.marks.get(p)
            p = p[:-1]
        raise ConfigError(msg, ".".join(map(str, path)) or None, line, self.source)

    def get(self, d, path, key, kind, default=None, required=False):
        if key not in d:
            if required:
                self.fail(path, f"missing required key {key!r}")
            return default
        v = d[key]
        p = tuple(path) + (key,)
        if kind == "number":
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                self.fail(p, f"expected a finite number, got {v!r}")
            return float(v)
        if kind == "int":
            if isinstance(v, bool) or not isinstance(v, int):
                self.fail(p, f"expected an integer, got {v!r}")
            return v
        if kind == "str":
            if not isinstance(v, str):
                self.fail(p, f"expected a string, got {v!r}")
            return v
        if kind == "map":
            if not isinstance(v, dict):
                self.fail(p, "expected a mapping")
            return v
        if kind == "bool":
            if not isinstance(v, bool):
                self.fail(p, f"expected true or false, got {v!r}")
            return v
        if kind == "list":
            if not isinstance(v, list):
                self.fail(p, "expected a list")
            return v
        return v

    def known(self, d, path, keys):
        for k in d:
            if k not in keys:
                self.fail(tuple(path) + (k,), f"unknown key (allowed: {', '.join(keys)})")


def _modulus(ck, d, path, T):
    ck.known(d, path, ("family", "H", "beta", "x", "eta"))
    fam = ck.get(d, path, "family", "str", required=True)
    params = {k: d[k] for k in ("H", "beta", "x", "eta") if k in d}
    try:
        return make_modulus(fam, params, T)
    except (DomainError, TypeError, ValueError) as exc:
        ck.fail(path, str(exc))


def _kernel(ck, d, path, T):
    ck.known(d, path, ("family", "H", "modulus"))
    fam = ck.get(d, path, "family", "str", required=True)
    params = {}
    if "H" in d:
        params["H"] = ck.get(d, path, "H", "number")
    if fam == "mv_stationary":
        mod = ck.get(d, path, "modulus", "map", required=True)
        params["modulus"] = _modulus(ck, mod, tuple(path) + ("modulus",), T)
    if fam == "custom":
        ck.fail(tuple(path) + ("family",), "custom kernels are available from Python only")
    try:
        return make_kernel(fam, params, T)
    except DomainError as exc:
        ck.fail(path, str(exc))


def _model(ck, d):
    path = ("model",)
    ck.known(d, path, ("T", "x0", "rho", "drift", "volatility", "kernel"))
    T = ck.get(d, path, "T", "number", required=True)
    if not T > 0:
        ck.fail(path + ("T",), f"horizon must be positive, got {T}")
    x0 = ck.get(d, path, "x0", "number", 0.0)
    rho = ck.get(d, path, "rho", "number", 0.0)
    if not -1 < rho < 1:
        ck.fail(path + ("rho",), f"correlation must lie in (-1, 1), got {rho}")
    kd = ck.get(d, path, "kernel", "map", required=True)
    kernel = _kernel(ck, kd, path + ("kernel",), T)

    dd = ck.get(d, path, "drift", "map", {"family": "constant", "r": 0.0})
    dp = path + ("drift",)
    ck.known(dd, dp, ("family", "r", "a0", "a1", "expr"))
    try:
        drift = make_drift(ck.get(dd, dp, "family", "str", required=True),
                           {k: v for k, v in dd.items() if k != "family"})
    except (ModelError, TypeError, ValueError) as exc:
        ck.fail(dp, str(exc))

    vd = ck.get(d, path, "volatility", "map", required=True)
    vp = path + ("volatility",)
    ck.known(vd, vp, ("family", "sigma0", "c", "H", "modulus", "expr", "strictly_positive"))
    vfam = ck.get(vd, vp, "family", "str", required=True)
    vparams = {k: v for k, v in vd.items() if k not in ("family", "modulus")}
    if vfam == "wick_exp":
        if "modulus" in vd:
            vparams["modulus"] = _modulus(ck, ck.get(vd, vp, "modulus", "map"), vp + ("modulus",), T)
        elif kernel.modulus is not None:
            vparams["modulus"] = kernel.modulus
        else:
            ck.fail(vp, "wick_exp needs a modulus (or an mv_stationary kernel)")
    try:
        vol = make_volatility(vfam, vparams)
        return ModelSpec(drift, vol, rho, kernel, T, x0)
    except (ModelError, TypeError, ValueError) as exc:
        ck.fail(vp, str(exc))


def _event(ck, d, path):
    ck.known(d, path, ("kind", "threshold"))
    kind = ck.get(d, path, "kind", "str", required=True)
    if kind not in EVENT_KINDS:
        ck.fail(tuple(path) + ("kind",), f"must be one of {', '.join(EVENT_KINDS)}")
    return EventSpec(kind, ck.get(d, path, "threshold", "number", required=True))


def _eps_list(ck, exp, path):
    eps = ck.get(exp, path, "eps", "list", required=True)
    for i, e in enumerate(eps):
        if isinstance(e, bool) or not isinstance(e, (int, float)) or not 0 < e <= 1:
            ck.fail(tuple(path) + ("eps", i), f"eps must lie in (0, 1], got {e!r}")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        ck.fail(tuple(path) + ("eps",), "eps values must be strictly decreasing")
    return [float(e) for e in eps]


EXPERIMENT_KEYS = {
    "simulate": ("eps", "n_paths", "scheme", "process", "export"),
    "rate": ("kind", "x", "x_range", "around_zero_cost", "path", "n_starts", "tol",
             "maxiter", "start_scale"),
    "verify": ("event", "eps", "n_paths", "feed", "tolerance", "solver_threshold",
               "scheme", "barrier", "pilot"),
    "diagnose": ("n_paths", "scheme", "t_min"),
    "check": ("lags", "slack", "l2_resolution", "quad_order"),
}


def _experiment(ck, sub, exp, model, grid):
    path = ("experiment",)
    ck.known(exp, path, EXPERIMENT_KEYS[sub])
    extras = {}
    pos_int = lambda key, default: _pos_int(ck, exp, path, key, default)
    if sub == "simulate":
        eps = ck.get(exp, path, "eps", "number", 1.0)
        if not 0 < eps <= 1:
            ck.fail(path + ("eps",), f"eps must lie in (0, 1], got {eps}")
        pos_int("n_paths", 1000)
        _choice(ck, exp, path, "scheme", ("convolution", "cholesky"))
        _choice(ck, exp, path, "process", ("log_price", "driver"))
        _choice(ck, exp, path, "export", ("paths", "terminal", "both"), "both")
    elif sub == "rate":
        kind = _choice(ck, exp, path, "kind", ("it", "it_hat", "qt", "j"), "it")
        if kind in ("it", "it_hat"):
            if kind == "it" and not model.volatility.strictly_positive:
                ck.fail(path + ("kind",), "it needs a strictly positive volatility; use it_hat")
            if not any(k in exp for k in ("x", "x_range", "around_zero_cost")):
                ck.fail(path, "need one of x, x_range, around_zero_cost")
            if "x" in exp:
                for i, x in enumerate(ck.get(exp, path, "x", "list")):
                    if isinstance(x, bool) or not isinstance(x, (int, float)):
                        ck.fail(path + ("x", i), f"expected a number, got {x!r}")
            if "x_range" in exp:
                xr = ck.get(exp, path, "x_range", "map")
                ck.known(xr, path + ("x_range",), ("start", "stop", "num"))
                ck.get(xr, path + ("x_range",), "start", "number", required=True)
                ck.get(xr, path + ("x_range",), "stop", "number", required=True)
                _pos_int(ck, xr, path + ("x_range",), "num", 11)
            if "around_zero_cost" in exp:
                for i, x in enumerate(ck.get(exp, path, "around_zero_cost", "list")):
                    if isinstance(x, bool) or not isinstance(x, (int, float)) or not x > 0:
                        ck.fail(path + ("around_zero_cost", i), f"expected a positive offset, got {x!r}")
        else:
            if kind == "qt" and not model.volatility.strictly_positive:
                ck.fail(path + ("kind",), "qt needs a strictly positive volatility")
            p = ck.get(exp, path, "path", "map", required=True)
            ck.known(p, path + ("path",), ("slope", "values"))
            if ("slope" in p) == ("values" in p):
                ck.fail(path + ("path",), "give exactly one of slope, values")
            if "values" in p:
                vals = ck.get(p, path + ("path",), "values", "list")
                if len(vals) != grid.n + 1:
                    ck.fail(path + ("path", "values"), f"need {grid.n + 1} values, got {len(vals)}")
            else:
                ck.get(p, path + ("path",), "slope", "number")
        pos_int("n_starts", 8)
        pos_int("maxiter", 500)
        ck.get(exp, path, "tol", "number", 1e-8)
        ck.get(exp, path, "start_scale", "number", 1.0)
    elif sub == "verify":
        _eps_list(ck, exp, path)
        feed = _choice(ck, exp, path, "feed", ("mc", "analytic"), "mc")
        pos_int("n_paths", 100000)
        if ck.get(exp, path, "n_paths", "int", 100000) < 1000:
            ck.fail(path + ("n_paths",), "need at least 1000 paths")
        _choice(ck, exp, path, "scheme", ("convolution", "cholesky"))
        tol = ck.get(exp, path, "tolerance", "number", 0.1)
        if not tol > 0:
            ck.fail(path + ("tolerance",), "tolerance must be positive")
        ck.get(exp, path, "solver_threshold", "number")
        ck.get(exp, path, "pilot", "bool", True)
        if "barrier" in exp:
            bd = ck.get(exp, path, "barrier", "map")
            bp = path + ("barrier",)
            ck.known(bd, bp, ("K", "kind", "G"))
            try:
                bar = BarrierSpec(ck.get(bd, bp, "K", "number", required=True),
                                  ck.get(bd, bp, "kind", "str", required=True),
                                  ck.get(bd, bp, "G", "number", 1.0))
            except ValueError as exc:
                ck.fail(bp, str(exc))
            if not bar.kind.endswith("_in"):
                ck.fail(bp + ("kind",), "verify supports in-kind barriers (hitting events)")
            if bar.up != (bar.K > model.s0):
                ck.fail(bp + ("K",), f"barrier orientation {bar.kind} does not match "
                                     f"s0={model.s0:g}, K={bar.K:g}")
            extras["barrier"] = bar
            extras["event"] = EventSpec("barrier_max_geq" if bar.up else "barrier_min_leq",
                                        math.log(bar.K) - model.x0)
            if "event" in exp:
                ck.fail(path + ("event",), "give either event or barrier, not both")
        else:
            ev = _event(ck, ck.get(exp, path, "event", "map", required=True), path + ("event",))
            extras["event"] = ev
        if feed == "analytic":
            if model.volatility.constant_value is None or model.drift.constant_rate is None:
                ck.fail(path + ("feed",), "analytic feed needs constant volatility and drift")
            if not extras["event"].kind.startswith("terminal"):
                ck.fail(path + ("feed",), "analytic feed covers terminal events only")
        ev = extras["event"]
        if model.drift.constant_rate is None:
            ck.fail(("model", "drift"), "verify needs a constant drift")
        if not model.volatility.strictly_positive and not ev.kind.startswith("terminal"):
            ck.fail(path + ("barrier",), "barrier rates need a strictly positive volatility")
    elif sub == "diagnose":
        pos_int("n_paths", 50)
        if grid.n < 256:
            # Hoelder slopes use dyadic lags in [4 dt, T/8]; at least four are needed
            ck.fail(("grid", "n"), f"diagnose needs n >= 256 grid steps, got {grid.n}")
        _choice(ck, exp, path, "scheme", ("convolution", "cholesky"))
        t_min = ck.get(exp, path, "t_min", "number")
        if t_min is not None and t_min < 2 * grid.dt * (1 - 1e-12):
            ck.fail(path + ("t_min",), "t_min must be at least two grid steps")
    elif sub == "check":
        lags = ck.get(exp, path, "lags", "list", [])
        for i, lag in enumerate(lags):
            if isinstance(lag, bool) or not isinstance(lag, (int, float)) or not 0 <= lag <= model.T:
                ck.fail(path + ("lags", i), f"lag must lie in [0, T], got {lag!r}")
        ck.get(exp, path, "slack", "number", 0.02)
        pos_int("l2_resolution", 64)
        pos_int("quad_order", 16)
    return extras


def _pos_int(ck, d, path, key, default):
    v = ck.get(d, path, key, "int", default)
    if v < 1:
        ck.fail(tuple(path) + (key,), f"must be a positive integer, got {v}")
    return v


def _choice(ck, d, path, key, choices, default=None):
    default = choices[0] if default is None else default
    v = ck.get(d, path, key, "str", default)
    if v not in choices:
        ck.fail(tuple(path) + (key,), f"must be one of {', '.join(choices)}, got {v!r}")
    return v


def build_config(data, subcommand, marks=None, source=None, seed=None, workers=None, out=None):
    """Validate ``data`` for ``subcommand`` and build every object before compute.

    Command-line overrides (``seed``, ``workers``, ``out``) are merged into
    the execution block of the resolved configuration.
    """
    ck = _Checker(marks or {}, source)
    if not isinstance(data, dict):
        ck.fail((), "top level must be a mapping")
    data = copy.deepcopy(data)
    ck.known(data, (), ("model", "grid", "experiment", "execution"))
    model = _model(ck, ck.get(data, (), "model", "map", required=True))
    gd = ck.get(data, (), "grid", "map", {"n": 64})
    ck.known(gd, ("grid",), ("n",))
    n = _pos_int(ck, gd, ("grid",), "n", 64)
    if n < 2:
        ck.fail(("grid", "n"), "grid needs at least 2 steps")
    grid = Grid(model.T, n)
    exp = ck.get(data, (), "experiment", "map", {})
    extras = _experiment(ck, subcommand, exp, model, grid)
    ex = ck.get(data, (), "execution", "map", {})
    ck.known(ex, ("execution",), ("seed", "workers", "out"))
    if seed is not None:
        ex["seed"] = seed
    if workers is not None:
        ex["workers"] = workers
    if out is not None:
        ex["out"] = out
    s = ck.get(ex, ("execution",), "seed", "int", 0)
    if s < 0 or s >= 2 ** 64:
        ck.fail(("execution", "seed"), "seed must be an unsigned 64-bit integer")
    w = _pos_int(ck, ex, ("execution",), "workers", 1)
    o = ck.get(ex, ("execution",), "out", "str", "out")
    # worker count and output directory do not affect results
    data["execution"] = {"seed": s}
    data.setdefault("grid", {"n": n})
    data.setdefault("experiment", exp)
    return RunConfig(data, model, grid, exp, s, w, o, extras)
