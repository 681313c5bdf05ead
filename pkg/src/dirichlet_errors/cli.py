"""Command-line front end.

Each command reads a JSON configuration, lets the global flags override it,
runs the library and writes a :class:`~dirichlet_errors.report.SensitivityReport`.

Exit codes: 0 success, 2 configuration error, 3 capability error,
4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import black_scholes as bs
from . import error_algebra as ea
from . import level_vol as lv
from . import mc_ibp
from . import wiener as wn
from ._rng import THREADS_ENV
from .errors import ConfigError, ErrorCalculusError
from .report import SensitivityReport

COMMANDS = ("price", "sens", "levelvol", "ibp", "perturb-check", "triangle")


# ---------------------------------------------------------------------------
# Config parsing helpers.

def _take(d: dict, key: str, where: str, kind=float, default=...):
    if key not in d:
        if default is ...:
            raise ConfigError(f"{where}: missing field '{key}'")
        return default
    v = d[key]
    try:
        if kind is float:
            if isinstance(v, bool):
                raise TypeError
            return float(v)
        if kind is int:
            if isinstance(v, bool) or int(v) != v:
                raise TypeError
            return int(v)
        if kind is list:
            if not isinstance(v, list):
                raise TypeError
            return [float(x) for x in v]
        if kind is str:
            if not isinstance(v, str):
                raise TypeError
            return v
        if kind is dict:
            if not isinstance(v, dict):
                raise TypeError
            return v
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got {v!r}") from None
    raise AssertionError(kind)


def _only(d: dict, allowed, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}")


def _times(cfg, where="config", key="times"):
    v = cfg.get(key)
    if v is None:
        raise ConfigError(f"{where}: missing field '{key}'")
    ts = _take(cfg, key, where, list) if isinstance(v, list) else [_take(cfg, key, where)]
    if not ts:
        raise ConfigError(f"{where}.{key}: empty")
    return ts


def parse_payoff(d, where="payoff") -> bs.Payoff:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    kind = d.get("type")
    keys = {"call": ("K",), "put": ("K",), "forward": ("K",), "constant": ("c",),
            "softplus_call": ("K", "width"), "polynomial": ("coeffs",), "table": ("xs", "ys")}
    if kind not in keys:
        raise ConfigError(f"{where}.type: expected one of {sorted(keys)}, got {kind!r}")
    _only(d, ("type",) + keys[kind], where)
    try:
        if kind == "call":
            return bs.call(_take(d, "K", where))
        if kind == "put":
            return bs.put(_take(d, "K", where))
        if kind == "forward":
            return bs.forward(_take(d, "K", where, default=0.0))
        if kind == "constant":
            return bs.constant(_take(d, "c", where))
        if kind == "softplus_call":
            return bs.softplus_call(_take(d, "K", where), _take(d, "width", where))
        if kind == "polynomial":
            return bs.polynomial(_take(d, "coeffs", where, list))
        return bs.table(_take(d, "xs", where, list), _take(d, "ys", where, list))
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from None


def parse_kernel(d, where="kernel") -> wn.ErrorKernel:
    if d is None:
        return wn.ErrorKernel.ou()
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    kind = d.get("type")
    if kind == "ou":
        _only(d, ("type",), where)
        return wn.ErrorKernel.ou()
    if kind == "weighted_ou":
        # alpha(s) = sum c_k s^k
        _only(d, ("type", "alpha"), where)
        c = np.asarray(_take(d, "alpha", where, list))
        return wn.ErrorKernel.weighted_ou(lambda s: np.polynomial.polynomial.polyval(s, c))
    if kind == "beta":
        # beta(s) = exp(-rate s)
        _only(d, ("type", "rate"), where)
        k = _take(d, "rate", where)
        if not k > 0:
            raise ConfigError(f"{where}.rate: must be positive")
        return wn.ErrorKernel.beta_kernel(lambda s: np.exp(-k * np.asarray(s)))
    if kind == "fractional":
        _only(d, ("type", "q", "truncation"), where)
        try:
            return wn.ErrorKernel.fractional(_take(d, "q", where),
                                             _take(d, "truncation", where, int, 10 ** 5))
        except ValueError as e:
            raise ConfigError(f"{where}: {e}") from None
    raise ConfigError(f"{where}.type: expected ou, weighted_ou, beta or fractional, got {kind!r}")


def parse_bs_model(d, kernel, where="model") -> bs.BSModel:
    _only(d, ("s0", "sigma", "r", "T", "switches"), where)
    sw = d.get("switches", {})
    if not isinstance(sw, dict) or not all(isinstance(v, bool) for v in sw.values()):
        raise ConfigError(f"{where}.switches: expected an object of booleans")
    try:
        return bs.BSModel(_take(d, "s0", where), _take(d, "sigma", where), _take(d, "r", where, default=0.0),
                          _take(d, "T", where), kernel, sw)
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from None


def parse_local_vol(d, where="model") -> lv.LocalVolModel:
    _only(d, ("x0", "T", "r", "sigma"), where)
    x0, T, r = _take(d, "x0", where), _take(d, "T", where), _take(d, "r", where, default=0.0)
    s = _take(d, "sigma", where, dict)
    w = where + ".sigma"
    kind = s.get("type")
    try:
        if kind == "constant":
            _only(s, ("type", "value"), w)
            return lv.LocalVolModel.constant(x0, _take(s, "value", w), T, r)
        if kind == "cev":
            _only(s, ("type", "a", "gamma"), w)
            return lv.LocalVolModel.cev(x0, _take(s, "a", w), _take(s, "gamma", w), T, r)
        if kind == "rational":
            _only(s, ("type", "a", "b", "c"), w)
            return lv.LocalVolModel.rational(x0, _take(s, "a", w), _take(s, "b", w), _take(s, "c", w), T, r)
        if kind == "polynomial":
            _only(s, ("type", "coeffs"), w)
            c = s.get("coeffs")
            if not (isinstance(c, list) and c and all(isinstance(row, list) for row in c)):
                raise ConfigError(f"{w}.coeffs: expected a list of rows a[p][q]")
            return lv.LocalVolModel.polynomial(x0, np.array(c, dtype=float), T, r)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"{w}: {e}") from None
    raise ConfigError(f"{w}.type: expected constant, cev, rational or polynomial, got {kind!r}")


def parse_scheme(d, where="scheme") -> mc_ibp.DiscreteScheme:
    _only(d, ("N", "x", "lambda", "sigma", "xi"), where)
    N, x, lam = _take(d, "N", where, int), _take(d, "x", where), _take(d, "lambda", where, default=1.0)
    xi_name = _take(d, "xi", where, str, "gaussian")
    if xi_name not in ("gaussian", "linear"):
        raise ConfigError(f"{where}.xi: expected gaussian or linear")
    xi = mc_ibp.Xi.gaussian() if xi_name == "gaussian" else mc_ibp.Xi.linear()
    s = _take(d, "sigma", where, dict)
    w = where + ".sigma"
    try:
        if s.get("type") == "constant":
            _only(s, ("type", "value"), w)
            return mc_ibp.DiscreteScheme.constant(N, x, lam, _take(s, "value", w), xi)
        if s.get("type") == "affine":
            _only(s, ("type", "a", "b"), w)
            return mc_ibp.DiscreteScheme.affine(N, x, lam, _take(s, "a", w), _take(s, "b", w), xi)
    except ValueError as e:
        raise ConfigError(f"{w}: {e}") from None
    raise ConfigError(f"{w}.type: expected constant or affine")


# ---------------------------------------------------------------------------
# Commands. Each takes the merged config dict and returns a report.

def _mean_se(a):
    a = np.asarray(a, dtype=float)
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else float("nan")


def cmd_price(cfg):
    _only(cfg, ("seed", "model", "payoff", "times", "x", "method"), "config")
    model = parse_bs_model(_take(cfg, "model", "config", dict), wn.ErrorKernel.ou())
    payoff = parse_payoff(cfg.get("payoff"))
    method = _take(cfg, "method", "config", str, "auto")
    x = _take(cfg, "x", "config", default=model.s0)
    rep = SensitivityReport("price", cfg["seed"], cfg)
    for t in _times(cfg):
        if not 0 <= t <= model.T:
            raise ConfigError(f"times: {t} outside [0, T]")
        rep.add("value", t, bs.price(t, x, model, payoff, method))
        if t < model.T:
            g = bs.greeks_grid(t, x, model, payoff)
            for k in ("delta", "gamma", "vega", "rho", "theta", "speed"):
                rep.add(k, t, float(g[k]))
    return rep


def cmd_sens(cfg):
    _only(cfg, ("seed", "model", "payoff", "kernel", "times", "sources", "paths", "normalization", "B"),
          "config")
    kernel = parse_kernel(cfg.get("kernel"))
    model = parse_bs_model(_take(cfg, "model", "config", dict), kernel)
    payoff = parse_payoff(cfg.get("payoff"))
    times = _times(cfg)
    if any(not 0 <= t < model.T for t in times):
        raise ConfigError("times: must lie in [0, T)")
    sources = cfg.get("sources", [s for s in bs.SOURCES if model.enabled(s)])
    if not isinstance(sources, list) or any(s not in bs.SOURCES for s in sources):
        raise ConfigError(f"sources: expected a subset of {list(bs.SOURCES)}")
    norm = _take(cfg, "normalization", "config", default=wn.BIAS_GENERATOR)
    n_paths = _take(cfg, "paths", "config", int, 10_000)
    pointwise = "B" in cfg
    rep = SensitivityReport("sens", cfg["seed"], cfg)
    if pointwise:
        b = _take(cfg, "B", "config")
        states = {t: np.array([b]) for t in times}
    else:
        grid = wn.TimeGrid(np.unique(np.concatenate([[0.0], times, [model.T]])))
        paths = wn.sample_paths(grid, n_paths, cfg["seed"])
        states = {t: paths.at(t) for t in times}
    smooth = payoff.at_least("C2Lip")
    for t in times:
        B = states[t]
        S = bs.stock_price(model, B, t)
        g = bs.greeks_grid(np.full(S.shape, t), S, model, payoff)
        gs = {f"gamma_{s}": bs.gamma_stock(t, S, B, model, s) for s in sources}
        gv = {f"gamma_{s}": bs.gamma_value(t, S, B, model, payoff, s, g) for s in sources}
        gh = {}
        if smooth and "B" in sources:
            gh["gamma_B"] = bs.gamma_hedge(t, S, model, payoff, g)
        bias = bs.bias_table(t, S, B, model, payoff, norm, g) if kernel.kind == "ou" else None
        for q, val, gam, a in (("S", S, gs, "A_S"), ("V", g["value"], gv, "A_V"),
                               ("H", g["delta"], gh, "A_H")):
            if q == "H" and not smooth:
                continue
            se = _mean_se(gam["gamma_B"])[1] if ("gamma_B" in gam and not pointwise) else None
            rep.add(q, t, float(np.mean(val)), std_error=se,
                    bias=None if bias is None else float(np.mean(bias[a])),
                    **{k: float(np.mean(v)) for k, v in gam.items()})
    return rep


def cmd_levelvol(cfg):
    _only(cfg, ("seed", "model", "payoff", "times", "n_outer", "n_inner", "n_steps", "cost_ceiling",
                "z_form"), "config")
    model = parse_local_vol(_take(cfg, "model", "config", dict))
    payoff = parse_payoff(cfg.get("payoff"))
    z_form = _take(cfg, "z_form", "config", str, "literal")
    if z_form not in ("literal", "consistent"):
        raise ConfigError("z_form: expected literal or consistent")
    try:
        budget = lv.NestedMCBudget(_take(cfg, "n_outer", "config", int, 2000),
                                   _take(cfg, "n_inner", "config", int, 200),
                                   _take(cfg, "n_steps", "config", int, 100),
                                   _take(cfg, "cost_ceiling", "config", default=5e9))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    grid = wn.TimeGrid.uniform(model.T, budget.n_steps)
    times = _times(cfg)
    for t in times:
        if not 0 <= t < model.T or abs(grid.t[grid.index(t)] - t) > 1e-12:
            raise ConfigError(f"times: {t} must be a grid node in [0, T)")
    rep = SensitivityReport("levelvol", cfg["seed"], cfg)
    smooth = payoff.at_least("C2Lip")
    if payoff.f_prime is None:
        raise ConfigError("payoff: needs a derivative")
    for t in times:
        res = lv.nested(t, model, payoff, budget, cfg["seed"], z_form, need_second=smooth)
        m, se = res.summary("gamma_X")
        rep.add("X", t, float(np.nanmean(res.X_t)), std_error=se, gamma_B=m)
        m, se = res.summary("gamma_V")
        rep.add("V", t, float(np.nanmean(res.V)), std_error=se, gamma_B=max(m, 0.0))
        if smooth:
            m, se = res.summary("gamma_H")
            rep.add("H", t, float(np.nanmean(res.H)), std_error=se, gamma_B=max(m, 0.0))
        if model.name == "polynomial":
            aux = lv.simulate_aux(model, grid, budget.n_outer, cfg["seed"])
            gf = lv.functional_vol_gamma(aux, model.params["coeffs"], t)
            m, se = _mean_se(gf[np.isfinite(gf)])
            rep.add("X_functional", t, float(np.nanmean(aux.X[:, grid.index(t)])), std_error=se,
                    gamma_sigma=m)
    return rep


def cmd_ibp(cfg):
    _only(cfg, ("seed", "scheme", "psi", "samples", "h"), "config")
    scheme = parse_scheme(_take(cfg, "scheme", "config", dict))
    psi = parse_payoff(cfg.get("psi"), "psi")
    n = _take(cfg, "samples", "config", int, 100_000)
    h = _take(cfg, "h", "config", default=None)
    rep = SensitivityReport("ibp", cfg["seed"], cfg)
    for param, name in (("x", "d/dx"), ("lambda", "d/dlambda")):
        c = mc_ibp.compare_fd(scheme, psi.f, n, cfg["seed"], param, h)
        rep.add(f"{name}:weight", value=c.weight.estimate, std_error=c.weight.std_error)
        rep.add(f"{name}:fd", value=c.fd, std_error=c.se_fd)
        rep.add(f"{name}:fd_richardson", value=c.richardson)
        rep.add(f"{name}:difference", value=c.weight.estimate - c.fd, std_error=c.se_diff)
    return rep


def cmd_perturb_check(cfg):
    _only(cfg, ("seed", "model", "payoff", "times", "theta", "paths"), "config")
    model = parse_bs_model(_take(cfg, "model", "config", dict), wn.ErrorKernel.ou())
    payoff = parse_payoff(cfg.get("payoff"))
    theta = _take(cfg, "theta", "config", default=1e-3)
    if not theta > 0:
        raise ConfigError("theta: must be positive")
    n_paths = _take(cfg, "paths", "config", int, 20_000)
    times = _times(cfg)
    if any(not 0 < t < model.T for t in times):
        raise ConfigError("times: must lie in (0, T)")
    grid = wn.TimeGrid(np.unique(np.concatenate([[0.0], times, [model.T]])))
    paths = wn.sample_paths(grid, n_paths, cfg["seed"])
    smooth = payoff.at_least("C2Lip")
    rep = SensitivityReport("perturb-check", cfg["seed"], cfg)
    for t in times:
        def S_of(p, t=t):
            return bs.stock_price(model, p.at(t), t)

        funcs = {"S": S_of,
                 "V": lambda p, t=t: bs.price(t, S_of(p), model, payoff)}
        if smooth:
            funcs["H"] = lambda p, t=t: bs.greeks_grid(t, S_of(p), model, payoff)["delta"]
        B = paths.at(t)
        S = S_of(paths)
        g = bs.greeks_grid(np.full(S.shape, t), S, model, payoff)
        formula = {"S": bs.gamma_stock(t, S, B, model, "B"),
                   "V": bs.gamma_value(t, S, B, model, payoff, "B", g)}
        if smooth:
            formula["H"] = bs.gamma_hedge(t, S, model, payoff, g)
        table = bs.bias_table(t, S, B, model, payoff, wn.BIAS_GENERATOR, g)
        for q, fn in funcs.items():
            m, se = wn.perturbation_gamma(fn, paths, theta)
            pb = wn.perturbation_bias(fn, paths, theta)
            rep.add(f"{q}:perturbation", t, std_error=se, gamma_B=m, bias=float(pb.mean()))
            fm, fse = _mean_se(formula[q])
            rep.add(f"{q}:formula", t, std_error=fse, gamma_B=fm, bias=float(table["A_" + q].mean()))
            rep.add(f"{q}:bias_slope", t, value=wn.regression_slope(pb, table["A_" + q]))
    return rep


def cmd_triangle(cfg):
    _only(cfg, ("seed", "l1", "l2", "theta1", "theta2", "L"), "config")

    def grid_of(k):
        v = cfg.get(k)
        if v is None:
            raise ConfigError(f"config: missing field '{k}'")
        return _take(cfg, k, "config", list) if isinstance(v, list) else [_take(cfg, k, "config")]

    L = _take(cfg, "L", "config", default=math.inf)
    rep = SensitivityReport("triangle", cfg["seed"], cfg)
    worst = 0.0
    for l1 in grid_of("l1"):
        for l2 in grid_of("l2"):
            for a1 in grid_of("theta1"):
                for a2 in grid_of("theta2"):
                    try:
                        gx, gy, gxy = ea.triangle_errors(l1, l2, a1, a2, L)
                    except ValueError as e:
                        raise ConfigError(str(e)) from None
                    m = ea.triangle_errors_matrix(l1, l2, a1, a2)
                    closed = np.array([[gx, gxy], [gxy, gy]])
                    worst = max(worst, float(np.max(np.abs(closed - m)) / np.max(np.abs(m))))
                    tag = f"[l1={l1:.17g};l2={l2:.17g};theta1={a1:.17g};theta2={a2:.17g}]"
                    rep.add("Gamma[X_B]" + tag, value=gx)
                    rep.add("Gamma[Y_B]" + tag, value=gy)
                    rep.add("Gamma[X_B,Y_B]" + tag, value=gxy)
    rep.add("max_relative_gap", value=worst)
    return rep


_DISPATCH = {"price": cmd_price, "sens": cmd_sens, "levelvol": cmd_levelvol, "ibp": cmd_ibp,
             "perturb-check": cmd_perturb_check, "triangle": cmd_triangle}
# which config key each global flag overrides, per command
_PATHS_KEY = {"sens": "paths", "levelvol": "n_outer", "ibp": "samples", "perturb-check": "paths"}
_STEPS_KEY = {"levelvol": "n_steps"}
_THETA_KEY = {"perturb-check": "theta"}


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config: top level must be an object")
    return cfg


def merge(command: str, cfg: dict, args) -> dict:
    cfg = dict(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    if isinstance(cfg["seed"], bool) or not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed: expected a nonnegative integer")
    for flag, table in (("paths", _PATHS_KEY), ("steps", _STEPS_KEY), ("theta", _THETA_KEY)):
        v = getattr(args, flag)
        if v is None:
            continue
        if command not in table:
            raise ConfigError(f"--{flag} does not apply to {command}")
        cfg[table[command]] = v
    return cfg


def run(command: str, cfg: dict):
    return _DISPATCH[command](cfg)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dirichlet-errors",
                                description="Error calculus for Black-Scholes and local-vol models.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("config", help="JSON configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--paths", type=int, help="path or sample count")
    p.add_argument("--steps", type=int, help="time steps")
    p.add_argument("--theta", type=float, help="perturbation size")
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--plot", action="store_true", help="also write a PNG next to --out")
    p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return 2
        os.environ[THREADS_ENV] = str(args.threads)
    try:
        cfg = merge(args.command, load_config(args.config), args)
        with np.errstate(all="ignore"):
            rep = run(args.command, cfg)
        text = rep.render(args.format)
        if args.plot and not args.out:
            raise ConfigError("--plot needs --out")
    except ErrorCalculusError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    if args.out:
        Path(args.out).write_text(text)
        if args.plot:
            from .plotting import plot_report
            plot_report(rep, Path(args.out).with_suffix(".png"))
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
