"""Command-line front end: experiment configs in, CSV/JSON artifacts out.

Config files are INI-style with three sections:

  [model]   family = pa | pns | calcium | simple, plus family parameters,
            activation (nu, beta), rates (lambda, alpha, mu), w0
  [run]     mode = simulate | fast | limit | sweep | invariant | figure1
            | figure2, epsilon (comma list), horizon, grid_points,
            replicas, seed, plus mode extras (w, functionals, drive_table,
            theta_p, theta_d, include_continuous, limit_replicas)
  [output]  directory, event_log

CSV schemas (documented for downstream consumers):
  trajectory:  t, x, z_1..z_ell, omega_p, omega_d, w
  sweep:       eps, t, mean_w, sd_w, sup_err, blowup_frac
  drive table: w, drive_p, drive_d, se_p, se_d
  ensemble:    t, mean_w, sd_w, se_w  (limit reference curves)
  invariant:   functional, mean, se, ess

Every output embeds a header comment with the config hash and artifact
version, floats print with 17 significant digits, and files are written
atomically (temp + rename).  Exit codes: 0 success, 2 validation failure,
3 numeric failure, 4 budget exhaustion.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import tempfile

import numpy as np

from . import analytics, engine, harness, limits, model

ARTIFACT_VERSION = 1


class BudgetError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# serialization helpers


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def _tag(v) -> str:
    # short form for file names and manifest keys
    return "%g" % float(v)


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, columns, rows, cfg_hash: str) -> None:
    lines = [f"# config_hash={cfg_hash} artifact_version={ARTIFACT_VERSION}",
             ",".join(columns)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_json(path: str, data, cfg_hash: str) -> None:
    doc = {"config_hash": cfg_hash, "artifact_version": ARTIFACT_VERSION,
           "data": data}
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def config_hash(cfg: configparser.ConfigParser) -> str:
    # the output destination does not affect the experiment identity
    items = []
    for section in sorted(s for s in cfg.sections() if s != "output"):
        for key in sorted(cfg[section]):
            items.append(f"{section}.{key}={cfg[section][key]}")
    return hashlib.sha256("\n".join(items).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# config parsing


def load_config(path: str, overrides, seed=None, out=None
                ) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    if not os.path.exists(path):
        raise model.SpecError(f"config file not found: {path}")
    cfg.read(path)
    for section in ("model", "run", "output"):
        if not cfg.has_section(section):
            cfg.add_section(section)
    for item in overrides or []:
        if "=" not in item:
            raise model.SpecError(f"--set needs section.key=value, got {item}")
        key, value = item.split("=", 1)
        if "." not in key:
            raise model.SpecError(f"--set key must be section.key, got {key}")
        section, name = key.split(".", 1)
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg[section][name.strip()] = value.strip()
    if seed is not None:
        cfg["run"]["seed"] = str(seed)
    if out is not None:
        cfg["output"]["directory"] = out
    return cfg


def _getf(cfg, section, key, default=None) -> float:
    if cfg.has_option(section, key):
        return float(cfg[section][key])
    if default is None:
        raise model.SpecError(f"missing config key [{section}] {key}")
    return default


def _geti(cfg, section, key, default=None) -> int:
    v = _getf(cfg, section, key, default)
    if int(v) != v:
        raise model.SpecError(f"[{section}] {key} must be an integer")
    return int(v)


def _gets(cfg, section, key, default=None) -> str:
    if cfg.has_option(section, key):
        return cfg[section][key].strip()
    if default is None:
        raise model.SpecError(f"missing config key [{section}] {key}")
    return default


def _eps_list(cfg) -> list:
    raw = _gets(cfg, "run", "epsilon", "0.1,0.01,0.001")
    return [float(tok) for tok in raw.split(",") if tok.strip()]


def build_model(cfg) -> dict:
    """Instantiate the configured family; returns the spec objects plus the
    shared rates."""
    family = _gets(cfg, "model", "family")
    lam = _getf(cfg, "model", "lambda")
    nu = _getf(cfg, "model", "nu", 0.0)
    slope = _getf(cfg, "model", "beta")
    alpha = _getf(cfg, "model", "alpha", 1.0)
    mu = _getf(cfg, "model", "mu", 0.0)
    w0 = _getf(cfg, "model", "w0", 0.0)
    activation = model.ActivationSpec(nu=nu, slope=slope)
    reset = model.ResetSpec()
    out = dict(family=family, lam=lam, alpha=alpha, mu=mu, w0=w0,
               activation=activation, reset=reset)
    if family == "pa":
        B = {(a, i): _getf(cfg, "model", f"B_{a}{i}")
             for a in ("p", "d") for i in (1, 2)}
        gam = {(a, i): _getf(cfg, "model", f"gamma_{a}{i}")
               for a in ("p", "d") for i in (1, 2)}
        kernel = model.pa_kernel(B, gam)
        plasticity = model.PlasticityMapSpec(form="linear", mu=mu)
    elif family == "calcium":
        drive = model.CalciumDriveSpec(
            theta_p=_getf(cfg, "model", "theta_p", 2.0),
            theta_d=_getf(cfg, "model", "theta_d", 1.0))
        kernel = model.calcium_kernel(_getf(cfg, "model", "C1"),
                                      _getf(cfg, "model", "C2"),
                                      _getf(cfg, "model", "gamma"), drive)
        out["drive"] = drive
        plasticity = model.PlasticityMapSpec(form="linear", mu=mu)
    elif family == "simple":
        params = dict(B1=_getf(cfg, "model", "B1"),
                      B2=_getf(cfg, "model", "B2"),
                      gamma=_getf(cfg, "model", "gamma"),
                      lam=lam, nu=nu, slope=slope, mu=mu)
        kernel = model.simple_kernel(params["B1"], params["B2"],
                                     params["gamma"])
        plasticity = model.PlasticityMapSpec(form="instantaneous", mu=mu,
                                             Mbar_p=lambda w: 1.0,
                                             Mbar_d=lambda w: 0.0)
        out["toy_params"] = params
    elif family == "pns":
        raise model.SpecError(
            "pns runs need programmatic curve specs; use the library API")
    else:
        raise model.SpecError(f"unknown family: {family}")
    kernel.params["lambda"] = lam
    out["kernel"] = kernel
    out["plasticity"] = plasticity
    return out


# ---------------------------------------------------------------------------
# mode handlers


def _traj_rows(traj: engine.Trajectory):
    return [tuple(row) for row in traj.samples]


def _limit_rows(sol: limits.LimitSolution, ell: int):
    rows = []
    for i, t in enumerate(sol.times):
        rows.append((t, 0.0) + (0.0,) * ell
                    + (sol.omega_p[i], sol.omega_d[i], sol.w[i]))
    return rows


def _grid(cfg, horizon):
    return engine.uniform_grid(horizon, _geti(cfg, "run", "grid_points", 101))


def mode_simulate(cfg, m, outdir, h) -> list:
    horizon = _getf(cfg, "run", "horizon")
    eps = _eps_list(cfg)[0]
    sim_cfg = engine.SimConfig(epsilon=eps, horizon=horizon,
                               seed=_geti(cfg, "run", "seed", 0),
                               sample_grid=_grid(cfg, horizon),
                               max_events=_geti(cfg, "run", "max_events",
                                                50_000_000),
                               log_events=cfg.getboolean("output", "event_log",
                                                         fallback=False))
    ell = m["kernel"].ell
    init = model.zero_state(ell, w=m["w0"])
    if m["family"] == "simple":
        traj = engine.simulate_nofilter_scaled(
            m["kernel"], m["activation"], m["reset"], m["plasticity"],
            init, sim_cfg, lam=m["lam"])
    else:
        traj = engine.simulate_scaled(
            m["kernel"], m["activation"], m["reset"], m["plasticity"],
            init, sim_cfg, lam=m["lam"], alpha=m["alpha"])
    if traj.terminated == "budget-exhausted":
        raise BudgetError("event budget exhausted before the horizon")
    path = os.path.join(outdir, "trajectory.csv")
    write_csv(path, traj.columns, _traj_rows(traj), h)
    meta = {"terminated": traj.terminated, "t_exp": traj.t_exp,
            "epsilon": eps}
    write_json(os.path.join(outdir, "trajectory.json"), meta, h)
    return [path]


def mode_fast(cfg, m, outdir, h) -> list:
    horizon = _getf(cfg, "run", "horizon")
    w = _getf(cfg, "run", "w")
    traj = engine.simulate_fast_fixed_w(
        m["kernel"], m["activation"], m["reset"], w, horizon,
        _geti(cfg, "run", "seed", 0),
        sample_dt=_getf(cfg, "run", "sample_dt", 0.05))
    cols = ["t", "x"] + [f"z_{i+1}" for i in range(m["kernel"].ell)]
    rows = [(traj.times[i], traj.x[i]) + tuple(traj.z[i])
            for i in range(len(traj.times))]
    path = os.path.join(outdir, "fast.csv")
    write_csv(path, cols, rows, h)
    return [path]


def _limit_solution(cfg, m, grid, horizon) -> limits.LimitSolution:
    if m["family"] == "pa":
        coeffs = analytics.pa_coeffs(m["kernel"], m["activation"], m["lam"])
        return limits.solve_limit_pa(coeffs, m["plasticity"], m["alpha"],
                                     m["w0"], horizon, grid)
    if m["family"] == "simple":
        p = m["toy_params"]
        c0, c1, c2 = harness.toy_drive_coeffs(p["B1"], p["B2"], p["gamma"],
                                              p["lam"], p["nu"], p["slope"])
        return limits.solve_nofilter(lambda w: c0 + c1 * w + c2 * w * w,
                                     lambda w: 0.0, m["plasticity"],
                                     m["w0"], horizon, grid)
    if m["family"] == "calcium":
        table_path = _gets(cfg, "run", "drive_table")
        table = limits.load_drive_table(table_path)
        return limits.solve_limit_table(table, m["plasticity"], m["alpha"],
                                        m["w0"], horizon, grid)
    raise model.SpecError(f"limit mode does not support family {m['family']}")


def mode_limit(cfg, m, outdir, h) -> list:
    horizon = _getf(cfg, "run", "horizon")
    grid = _grid(cfg, horizon)
    sol = _limit_solution(cfg, m, grid, horizon)
    ell = m["kernel"].ell
    cols = (["t", "x"] + [f"z_{i+1}" for i in range(ell)]
            + ["omega_p", "omega_d", "w"])
    path = os.path.join(outdir, "limit.csv")
    write_csv(path, cols, _limit_rows(sol, ell), h)
    blow = None
    if sol.blowup is not None:
        blow = {"t_exp": sol.blowup.t_exp, "bracket": list(sol.blowup.bracket)}
    write_json(os.path.join(outdir, "limit.json"), {"blowup": blow}, h)
    return [path]


def _sweep_rows(report: harness.SweepReport):
    rows = []
    for eps in report.eps_list:
        for i, t in enumerate(report.grid):
            rows.append((eps, t, report.mean_w[eps][i], report.sd_w[eps][i],
                         report.sup_err[eps], report.blowup_frac[eps]))
    return rows


def _make_sweep(cfg, m, grid, horizon, seed) -> harness.SweepReport:
    sol = _limit_solution(cfg, m, grid, horizon)
    eps_list = _eps_list(cfg)
    replicas = _geti(cfg, "run", "replicas", 50)
    if m["family"] == "simple":
        simulate = harness.toy_bundle_simulate(m["toy_params"], m["w0"], grid)
    elif m["family"] == "pa":
        def simulate(eps, s, replica):
            sc = engine.SimConfig(epsilon=eps, horizon=horizon, seed=s,
                                  sample_grid=grid, replica=replica)
            init = model.zero_state(m["kernel"].ell, w=m["w0"])
            return engine.simulate_scaled(m["kernel"], m["activation"],
                                          m["reset"], m["plasticity"], init,
                                          sc, lam=m["lam"], alpha=m["alpha"])
    else:
        raise model.SpecError(f"sweep mode does not support {m['family']}")
    return harness.eps_sweep(simulate, sol.w, eps_list, replicas, seed, grid)


def mode_sweep(cfg, m, outdir, h) -> list:
    horizon = _getf(cfg, "run", "horizon")
    grid = _grid(cfg, horizon)
    report = _make_sweep(cfg, m, grid, horizon, _geti(cfg, "run", "seed", 0))
    path = os.path.join(outdir, "sweep.csv")
    write_csv(path, ["eps", "t", "mean_w", "sd_w", "sup_err", "blowup_frac"],
              _sweep_rows(report), h)
    return [path]


_FUNCTIONALS = {
    "mean_x": lambda x, z: x,
    "mean_x2": lambda x, z: x * x,
}


def _functional(name: str, ell: int):
    if name in _FUNCTIONALS:
        return _FUNCTIONALS[name]
    if name.startswith("mean_xz"):
        i = int(name[7:]) - 1
        if not 0 <= i < ell:
            raise model.SpecError(f"trace index out of range in {name}")
        return lambda x, z, i=i: x * z[:, i]
    if name.startswith("mean_z"):
        i = int(name[6:]) - 1
        if not 0 <= i < ell:
            raise model.SpecError(f"trace index out of range in {name}")
        return lambda x, z, i=i: z[:, i]
    raise model.SpecError(f"unknown functional: {name}")


def mode_invariant(cfg, m, outdir, h) -> list:
    names = [s.strip() for s in
             _gets(cfg, "run", "functionals", "mean_x").split(",") if s.strip()]
    funcs = {n: _functional(n, m["kernel"].ell) for n in names}
    est = analytics.mc_invariant(
        m["kernel"], m["activation"], m["reset"], _getf(cfg, "run", "w"),
        funcs, horizon=_getf(cfg, "run", "horizon", 1e4),
        seed=_geti(cfg, "run", "seed", 0))
    rows = [(n, est.means[n], est.stderrs[n], est.ess[n]) for n in names]
    path = os.path.join(outdir, "invariant.csv")
    write_csv(path, ["functional", "mean", "se", "ess"], rows, h)
    if est.warnings:
        write_json(os.path.join(outdir, "invariant_warnings.json"),
                   est.warnings, h)
    return [path]


def mode_figure1(cfg, m, outdir, h) -> list:
    eps_list = _eps_list(cfg)
    replicas = _geti(cfg, "run", "replicas", 50)
    horizon = _getf(cfg, "run", "horizon", 6.0)
    seed = _geti(cfg, "run", "seed", 0)
    grid = _grid(cfg, horizon)
    w0_list = [1.0, 3.0]
    written = []
    manifest = {"panels": {}, "eps": eps_list, "w0": w0_list}
    for pi, (regime, params) in enumerate(
            sorted(harness.figure1_golden_params().items())):
        report = harness.classify_regime(params, w0_list,
                                         horizon=max(horizon, 15.0))
        panel = {"params": params, "classified": report.regime,
                 "w_eq": report.w_eq, "files": {}}
        c0, c1, c2 = (report.diagnostics[k] for k in ("c0", "c1", "c2"))
        plast = model.PlasticityMapSpec(form="instantaneous", mu=params["mu"],
                                        Mbar_p=lambda w: 1.0,
                                        Mbar_d=lambda w: 0.0)
        for wi, w0 in enumerate(w0_list):
            tag = f"{regime}_w0-{_tag(w0)}"
            sol = limits.solve_nofilter(
                lambda w: c0 + c1 * w + c2 * w * w, lambda w: 0.0,
                plast, w0, horizon, grid)
            sweep = harness.eps_sweep(
                harness.toy_bundle_simulate(params, w0, grid), sol.w,
                eps_list, replicas, seed + 97 * (2 * pi + wi), grid)
            analytic = harness.toy_analytic_solution(c0, c1, c2, params["mu"],
                                                     w0, grid)
            f_sweep = os.path.join(outdir, f"sweep_{tag}.csv")
            write_csv(f_sweep,
                      ["eps", "t", "mean_w", "sd_w", "sup_err", "blowup_frac"],
                      _sweep_rows(sweep), h)
            f_limit = os.path.join(outdir, f"limit_{tag}.csv")
            write_csv(f_limit, ["t", "x", "z_1", "omega_p", "omega_d", "w"],
                      _limit_rows(sol, 1), h)
            f_ana = os.path.join(outdir, f"analytic_{tag}.csv")
            write_csv(f_ana, ["t", "x", "z_1", "omega_p", "omega_d", "w"],
                      [(t, 0.0, 0.0, 0.0, 0.0, analytic[i])
                       for i, t in enumerate(grid) if np.isfinite(analytic[i])],
                      h)
            panel["files"][_tag(w0)] = {"sweep": os.path.basename(f_sweep),
                                       "limit": os.path.basename(f_limit),
                                       "analytic": os.path.basename(f_ana)}
            written += [f_sweep, f_limit, f_ana]
        manifest["panels"][regime] = panel
    f_man = os.path.join(outdir, "figure1_manifest.json")
    write_json(f_man, manifest, h)
    return written + [f_man]


def mode_figure2(cfg, m, outdir, h) -> list:
    params = harness.figure2_params()
    for key in list(params):
        if cfg.has_option("model", key):
            params[key] = type(params[key])(float(cfg["model"][key]))
    theta_p = _getf(cfg, "model", "theta_p", 2.0)
    theta_d = _getf(cfg, "model", "theta_d", 1.0)
    art = harness.reproduce_figure2(
        theta_p, theta_d, _eps_list(cfg),
        _geti(cfg, "run", "replicas", 100),
        _geti(cfg, "run", "seed", 0),
        w0=_geti(cfg, "model", "w0", 10),
        horizon=_getf(cfg, "run", "horizon", 50.0),
        n_grid=_geti(cfg, "run", "grid_points", 101),
        limit_replicas=_geti(cfg, "run", "limit_replicas", 400),
        include_continuous=cfg.getboolean("run", "include_continuous",
                                          fallback=True))
    written = []
    grid = art["grid"]
    sweep = art["discrete_sweep"]
    for eps in sweep.eps_list:
        path = os.path.join(outdir, f"scaled_eps-{_tag(eps)}.csv")
        rows = [(eps, t, sweep.mean_w[eps][i], sweep.sd_w[eps][i],
                 sweep.sup_err[eps], sweep.blowup_frac[eps])
                for i, t in enumerate(grid)]
        write_csv(path, ["eps", "t", "mean_w", "sd_w", "sup_err",
                         "blowup_frac"], rows, h)
        written.append(path)
    for name in ("limit_mc", "limit_ar"):
        ref = art[name]
        path = os.path.join(outdir, f"{name}.csv")
        write_csv(path, ["t", "mean_w", "sd_w", "se_w"],
                  [(t, ref["mean"][i], ref["sd"][i], ref["se"][i])
                   for i, t in enumerate(grid)], h)
        written.append(path)
    path = os.path.join(outdir, "sd_inset.json")
    write_json(path, {str(k): v for k, v in art["sd_inset"].items()}, h)
    written.append(path)
    if "continuous_sweep" in art:
        csweep = art["continuous_sweep"]
        for eps in csweep.eps_list:
            path = os.path.join(outdir, f"scaled_cont_eps-{_tag(eps)}.csv")
            rows = [(eps, t, csweep.mean_w[eps][i], csweep.sd_w[eps][i],
                     csweep.sup_err[eps], csweep.blowup_frac[eps])
                    for i, t in enumerate(grid)]
            write_csv(path, ["eps", "t", "mean_w", "sd_w", "sup_err",
                             "blowup_frac"], rows, h)
            written.append(path)
        sol = art["continuous_limit"]
        path = os.path.join(outdir, "limit_cont.csv")
        write_csv(path, ["t", "mean_w", "sd_w", "se_w"],
                  [(t, sol.w[i], 0.0, 0.0) for i, t in enumerate(grid)], h)
        written.append(path)
        path = os.path.join(outdir, "drive_table.csv")
        limits.save_drive_table(art["continuous_table"], path)
        written.append(path)
    return written


MODES = {"simulate": mode_simulate, "fast": mode_fast, "limit": mode_limit,
         "sweep": mode_sweep, "invariant": mode_invariant,
         "figure1": mode_figure1, "figure2": mode_figure2}


# ---------------------------------------------------------------------------
# entry point


def run(config_path: str, overrides=None, seed=None, out=None,
        quiet: bool = False) -> int:
    outdir = "."
    try:
        cfg = load_config(config_path, overrides, seed, out)
        outdir = _gets(cfg, "output", "directory", ".")
        os.makedirs(outdir, exist_ok=True)
        mode = _gets(cfg, "run", "mode")
        if mode not in MODES:
            raise model.SpecError(f"unknown mode: {mode}")
        h = config_hash(cfg)
        if mode in ("figure1", "figure2"):
            m = {"family": mode}  # figure modes carry their own model wiring
        else:
            m = build_model(cfg)
        written = MODES[mode](cfg, m, outdir, h)
        if not quiet:
            for path in written:
                print(f"wrote {path}")
        return 0
    except (model.SpecError, limits.RangeError, ValueError) as exc:
        _diagnostic(outdir, exc, 2, quiet)
        return 2
    except engine.NumericError as exc:
        _diagnostic(outdir, exc, 3, quiet)
        return 3
    except BudgetError as exc:
        _diagnostic(outdir, exc, 4, quiet)
        return 4


def _diagnostic(outdir: str, exc: BaseException, code: int,
                quiet: bool) -> None:
    record = {"error_type": type(exc).__name__, "message": str(exc),
              "exit_code": code}
    try:
        _atomic_write(os.path.join(outdir, "diagnostics.json"),
                      json.dumps(record, indent=2) + "\n")
    except OSError:
        pass
    if not quiet:
        print(f"error: {record['error_type']}: {record['message']}",
              file=sys.stderr)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="synscale",
        description="Slow-fast synaptic plasticity simulations and limits")
    parser.add_argument("--config", required=True, help="INI experiment config")
    parser.add_argument("--set", action="append", default=[], dest="sets",
                        metavar="SECTION.KEY=VALUE",
                        help="override a config entry (repeatable)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)
    return run(args.config, args.sets, args.seed, args.out, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
