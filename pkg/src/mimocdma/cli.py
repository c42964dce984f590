"""Command-line entry point: ``mimocdma {solve,sweep,simulate,validate}``.

Exit codes: 0 success, 1 configuration error, 2 convergence failure,
3 validation failure.
"""

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cf
from . import mc_sim as mc
from . import rmt_gaussian as rg
from . import state_evolution as se
from .errors import ConfigError, MimoCdmaError, NoConvergence
from .integration import Integrator

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_VALIDATION = 0, 1, 2, 3

log = logging.getLogger("mimocdma")

SOLUTION_FIELDS = [
    "config_hash", "scheme", "snr_db", "beta", "branch", "selected", "status", "iterations",
    "residual", "free_energy", "c_joint", "c_joint_stderr", "c_sep", "c_sep_stderr",
    "c_joint_per_antenna", "c_sep_per_antenna", "trace_A", "trace_At", "A", "At",
    "tol", "damping", "integrator", "channel_samples", "seed",
]
MOMENT_FIELDS = ["config_hash", "user", "moment", "estimate", "stderr", "trials", "detector", "seed"]
TRIAL_FIELDS = ["config_hash", "trial", "user", "antenna", "x_re", "x_im", "xhat_re", "xhat_im"]
CHECK_FIELDS = ["config_hash", "check", "item", "estimate", "stderr", "reference", "reference_stderr",
                "statistic", "threshold", "passed", "tol", "channel_samples", "trials", "seed"]


# ---------------------------------------------------------------------------
# config -> objects


def integrator(cfg):
    i = cfg["solver"]["integrator"]
    return Integrator(i["method"], order=i["order"], samples=i["samples"], seed=cfg["solver"]["seed"])


def solver_config(cfg):
    s = cfg["solver"]
    return se.SolverConfig(damping=s["damping"], tol=s["tol"], max_iter=s["max_iter"],
                           integrator=integrator(cfg), seed=s["seed"])


def scenario(cfg, beta=None, snr_db=None, overrides=None):
    """Build the asymptotic scenario, optionally at another load, SNR or noise level."""
    sc = dict(cfg["scenario"])
    sc.update(overrides or {})
    snr = sc["snr_db"] if snr_db is None else snr_db
    P = cf.power_from_snr(snr, sc["n0"])
    true = cf.build_prior(sc["true_prior"], P)
    post = None if sc["post_prior"] is None else cf.build_prior(sc["post_prior"], P)
    return se.Scenario.single(sc["scheme"], sc["beta"] if beta is None else beta, sc["n_rx"],
                              sc["antennas"], true, post, n0=sc["n0"], nt0=sc["nt0"],
                              channel_samples=sc["channel_samples"], sampler=sc["sampler"])


def sim_params(cfg):
    sc, sim = cfg["scenario"], cfg["simulation"]
    P = cf.power_from_snr(sc["snr_db"], sc["n0"])
    true = cf.build_prior(sc["true_prior"], P)
    post = None if sc["post_prior"] is None else cf.build_prior(sc["post_prior"], P)
    return mc.SimParams(K=sim["K"], L=sim["L"], scheme=sc["scheme"], n_rx=sc["n_rx"],
                        antennas=sc["antennas"], true_prior=true, post_prior=post, n0=sc["n0"],
                        nt0=sc["nt0"], chip_law=sim["chip_law"], seed=cfg["solver"]["seed"],
                        fresh=sim["fresh"])


def _detector(cfg, params):
    d = cfg["simulation"]["detector"]
    if d != "auto":
        return d
    return "lmmse" if all(vp.all_gaussian for vp in params.post_prior) else "exact"


# ---------------------------------------------------------------------------
# formatting


def _num(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _matrix(M):
    M = np.asarray(M)
    return " ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in M.ravel())


def _meta(cfg):
    s = cfg["solver"]
    i = s["integrator"]
    return {"tol": s["tol"], "damping": s["damping"], "seed": s["seed"],
            "integrator": f"{i['method']}:{i['order'] if i['method'] == 'gauss-hermite' else i['samples']}",
            "channel_samples": cfg["scenario"]["channel_samples"]}


def _solution_rows(cfg, scn, point, snr_db):
    """Rows for every solution at one sweep point, plus one row per failed pass."""
    integ = integrator(cfg)
    seed = cfg["solver"]["seed"]
    M = scn.groups[0].antennas
    base = {"config_hash": cfg.hash(), "scheme": scn.scheme, "snr_db": snr_db, "beta": point.beta}
    base.update(_meta(cfg))
    rows = []
    for i, fp in enumerate(point.solutions):
        row = dict(base, branch=fp.branch, selected=(i == point.selected), status="ok",
                   iterations=fp.iterations, residual=fp.residual, free_energy=fp.free_energy,
                   trace_A=float(np.trace(fp.A).real), trace_At=float(np.trace(fp.At).real),
                   A=_matrix(fp.A), At=_matrix(fp.At))
        cs, cs_err = se.c_sep(scn, fp, integ, seed, return_stderr=True)
        row.update(c_sep=cs, c_sep_stderr=cs_err, c_sep_per_antenna=cs / M)
        if scn.matched():
            cj, cj_err = se.c_joint(scn, fp, integ, seed, return_stderr=True)
            row.update(c_joint=cj, c_joint_stderr=cj_err, c_joint_per_antenna=cj / M)
        else:
            row.update(c_joint=None, c_joint_stderr=None, c_joint_per_antenna=None)
        rows.append(row)
    for exc in point.failures:
        st = getattr(exc, "state", None)
        rows.append(dict(base, branch=getattr(st, "branch", ""), selected=False, status="no_convergence",
                         iterations=getattr(st, "iterations", None), residual=getattr(st, "residual", None),
                         free_energy=None, c_joint=None, c_joint_stderr=None, c_sep=None,
                         c_sep_stderr=None, c_joint_per_antenna=None, c_sep_per_antenna=None,
                         trace_A=None, trace_At=None, A="", At=""))
    return rows


def _render_csv(fields, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([r.get(f) if isinstance(r.get(f), str) else _num(r.get(f)) for f in fields])
    return buf.getvalue()


def _render_json(fields, rows):
    def conv(v):
        if isinstance(v, (np.bool_, bool)):
            return bool(v)
        if isinstance(v, (np.integer,)):
            return int(v)
        if isinstance(v, (np.floating, float)):
            return float(v) if np.isfinite(v) else repr(float(v))
        return v

    return json.dumps([{f: conv(r.get(f)) for f in fields} for r in rows], indent=1) + "\n"


def _write(out, stem, fields, rows, fmt):
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out / f"{stem}.json"
        path.write_text(_render_json(fields, rows))
    else:
        path = out / f"{stem}.csv"
        path.write_text(_render_csv(fields, rows))
    return path


def _show(fields, rows, stream):
    for r in rows:
        stream.write("  ".join(f"{f}={r.get(f) if isinstance(r.get(f), str) else _num(r.get(f))}"
                               for f in fields) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg, out, fmt="csv", threads=1, stream=sys.stdout):
    """Solve at the scenario load from both initialisations and report every distinct branch."""
    scn = scenario(cfg)
    snr = cfg["scenario"]["snr_db"]
    pt = se.branch_sweep(scn, [scn.beta], solver_config(cfg), cfg["solver"]["dedup_tol"], threads)[0]
    rows = _solution_rows(cfg, scn, pt, snr)
    path = _write(out, "solve", SOLUTION_FIELDS, rows, fmt)
    _show(["beta", "branch", "selected", "free_energy", "c_joint", "c_sep"], [r for r in rows if r["status"] == "ok"], stream)
    stream.write(f"wrote {path}\n")
    if not pt.solutions:
        raise NoConvergence(f"no fixed point converged at beta={scn.beta}")
    return rows


def cmd_sweep(cfg, out, fmt="csv", threads=1, stream=sys.stdout):
    """Branch sweep over the load grid (or over the SNR grid at fixed load)."""
    sw = cfg["sweep"]
    betas, snrs = cf.grid(sw.get("beta")), cf.grid(sw.get("snr_db"))
    scv = cfg["scenario"]
    solver = solver_config(cfg)
    rows = []
    if snrs is None:
        scn = scenario(cfg)
        grid = betas if betas is not None else [scn.beta]
        for pt in se.branch_sweep(scn, grid, solver, cfg["solver"]["dedup_tol"], threads):
            rows += _solution_rows(cfg, scn.with_beta(pt.beta), pt, scv["snr_db"])
    else:
        for snr in snrs:
            scn = scenario(cfg, snr_db=snr)
            grid = betas if betas is not None else [scn.beta]
            for pt in se.branch_sweep(scn, grid, solver, cfg["solver"]["dedup_tol"], threads):
                rows += _solution_rows(cfg, scn.with_beta(pt.beta), pt, snr)
    path = _write(out, "sweep", SOLUTION_FIELDS, rows, fmt)
    if fmt == "csv":
        from .plotting import script_stub

        (out / "plot_sweep.py").write_text(script_stub(path.name))
    if "png" in cfg["output"]["formats"] and rows:
        from .plotting import render_sweep

        render_sweep(rows, out / "sweep.png", title=f"{scv['scheme']}, N={scv['n_rx']}, M={scv['antennas']}")
    failed = sum(r["status"] != "ok" for r in rows)
    stream.write(f"{len(rows) - failed} solutions, {failed} failed passes; wrote {path}\n")
    if rows and failed == len(rows):
        raise NoConvergence("no fixed point converged anywhere on the grid")
    return rows


def _user(cfg):
    u = cfg["simulation"]["user"]
    return None if u == "pooled" else int(u)


def cmd_simulate(cfg, out, fmt="csv", threads=1, stream=sys.stdout):
    """Run the finite-size simulation and write moment tables."""
    if "simulation" not in cfg.present:
        raise ConfigError("the simulate command needs a 'simulation' block", key="simulation")
    params = sim_params(cfg)
    sim = cfg["simulation"]
    det = _detector(cfg, params)
    recs = mc.run_trials(params, det, sim["trials"])
    user = _user(cfg)
    M = params.antennas[0 if user is None else user]
    rows = []
    for ex in mc.moment_list(M, sim["max_order"]):
        est, err = mc.empirical_moments(recs, user, ex)
        rows.append({"config_hash": cfg.hash(), "user": "pooled" if user is None else user,
                     "moment": mc.moment_label(ex), "estimate": est, "stderr": err,
                     "trials": sim["trials"], "detector": det, "seed": params.seed})
    path = _write(out, "moments", MOMENT_FIELDS, rows, fmt)
    if sim["write_trials"]:
        trows = []
        sl = params.user_slices()
        for t in range(len(recs)):
            for k, s in enumerate(sl):
                for m, c in enumerate(range(s.start, s.stop)):
                    x, xh = recs.x[t, c], recs.xhat[t, c]
                    trows.append({"config_hash": cfg.hash(), "trial": t, "user": k, "antenna": m,
                                  "x_re": x.real, "x_im": x.imag, "xhat_re": xh.real, "xhat_im": xh.imag})
        _write(out, "trials", TRIAL_FIELDS, trows, fmt)
    stream.write(f"{len(rows)} moments from {sim['trials']} trials; wrote {path}\n")
    return rows


def _rmt_checks(cfg, scn_pred, betas, base):
    """Matched-Gaussian cross-check of c_sep against the scalar closed forms."""
    g = scn_pred.groups[0]
    if not (scn_pred.matched() and g.true_prior.all_gaussian):
        return []
    v = cfg["validate"]
    integ = integrator(cfg)
    rows = []
    for beta in betas:
        s = scn_pred.with_beta(beta)
        fp = se.solve(s, solver_config(cfg), with_free_energy=False)
        val, err = se.c_sep(s, fp, integ, cfg["solver"]["seed"], return_stderr=True)
        gs = rg.GaussianScenario(beta, g.antennas, s.n_rx, float(g.true_prior.powers()[0]), s.n0,
                                 eig_samples=v["eig_samples"], seed=cfg["solver"]["seed"])
        if s.scheme == "STS":
            ref, rerr = rg.c_lmmse_sts(gs), 0.0
        else:
            ref, rerr = rg.c_lmmse_ts(gs, return_stderr=True)
        rel = abs(val - ref) / max(abs(ref), 1e-300)
        rows.append(dict(base, check="c_sep_vs_closed_form", item=f"beta={beta!r}", estimate=val, stderr=err,
                         reference=ref, reference_stderr=rerr, statistic=rel, threshold=v["rel_tol"],
                         passed=bool(rel < v["rel_tol"])))
    return rows


def cmd_validate(cfg, out, fmt="csv", threads=1, stream=sys.stdout):
    """Decoupling check of simulated moments plus closed-form cross-checks; exit 3 on any failure."""
    if "simulation" not in cfg.present:
        raise ConfigError("the validate command needs a 'simulation' block", key="simulation")
    params = sim_params(cfg)
    v = cfg["validate"]
    over = dict(v["prediction"])
    scn_pred = scenario(cfg, beta=params.beta, overrides=over)
    solver = solver_config(cfg)
    det = _detector(cfg, params)
    user = _user(cfg)
    M = params.antennas[0 if user is None else user]
    report = mc.decoupling_report(params, scn_pred, mc.moment_list(M, cfg["simulation"]["max_order"]),
                                  cfg["simulation"]["trials"], det, solver, user)
    base = {"config_hash": cfg.hash(), "trials": cfg["simulation"]["trials"],
            "tol": cfg["solver"]["tol"], "channel_samples": cfg["scenario"]["channel_samples"],
            "seed": cfg["solver"]["seed"]}
    rows = [dict(base, check="decoupling_moment", item=r.label, estimate=r.estimate, stderr=r.stderr,
                 reference=r.prediction, reference_stderr=r.prediction_stderr, statistic=abs(r.z),
                 threshold=v["z_max"], passed=bool(abs(r.z) < v["z_max"])) for r in report]
    if v["lmmse_check"]:
        betas = cf.grid(cfg["sweep"].get("beta")) or [params.beta]
        rows += _rmt_checks(cfg, scn_pred, betas, base)
    path = _write(out, "validate", CHECK_FIELDS, rows, fmt)
    n_fail = sum(not r["passed"] for r in rows)
    for r in rows:
        stream.write(f"{'PASS' if r['passed'] else 'FAIL'}  {r['check']:<22s} {r['item']:<28s} "
                     f"stat={r['statistic']:.3g} (< {r['threshold']:g})\n")
    stream.write(f"{len(rows) - n_fail}/{len(rows)} checks passed; wrote {path}\n")
    return rows


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "simulate": cmd_simulate, "validate": cmd_validate}


def build_parser():
    p = argparse.ArgumentParser(prog="mimocdma", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        s = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        s.add_argument("--config", required=True, help="YAML run configuration")
        s.add_argument("--seed", type=int, default=None, help="override solver.seed")
        s.add_argument("--out", default=None, help="output directory (overrides output.directory)")
        s.add_argument("--threads", type=int, default=1, help="worker threads for branch sweeps")
        s.add_argument("--format", choices=("csv", "json"), default=None, dest="fmt")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None, stream=None):
    stream = sys.stdout if stream is None else stream
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cf.load(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = Path(args.out if args.out is not None else cfg["output"]["directory"])
        fmt = args.fmt or ("json" if cfg["output"]["formats"] == ["json"] else "csv")
        rows = COMMANDS[args.command](cfg, out, fmt, args.threads, stream)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except NoConvergence as exc:
        sys.stderr.write(f"convergence failure: {exc}\n")
        return EXIT_CONVERGENCE
    except (MimoCdmaError, ValueError) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    if args.command == "validate" and not all(r["passed"] for r in rows):
        return EXIT_VALIDATION
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
