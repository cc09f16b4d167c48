"""Command-line front end: ``synthdp {tradeoff,rdp-sweep,adversary,verify}``.

Each run reads one JSON config (``--config``); ``--seed``, ``--workers`` and
``--set key=value`` override its keys.  Outputs go to ``--out``.  Exit codes:
0 success, 1 verification failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import amplification as amp
from . import mechanisms as mech
from . import oracle
from .numerics import DomainError, RngStream
from .tradeoff import MaxCurve, TradeoffCurve, tabulate, to_csv

ENV_THREADS = "SYNTHDP_THREADS"

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config schemas: key -> (type, default); a default of REQUIRED must be given
# ---------------------------------------------------------------------------

REQUIRED = object()
_num = (int, float)

_SPEC_KEYS = {
    "sigma_theta": (_num, 1.0),
    "sigma_z": (_num, 1.0),
    "n": (int, 1),
    "l": (int, 1),
    "C": (_num, 1.0),
    "shift": (str, "universal"),
    "mode": (str, "auto"),
}

SCHEMAS = {
    "tradeoff": {
        **_SPEC_KEYS,
        "d": (int, REQUIRED),
        "Delta": (_num, REQUIRED),
        "points": (int, 1000),
        "seed": (int, 0),
    },
    "rdp-sweep": {
        **_SPEC_KEYS,
        "d": (list, REQUIRED),
        "Delta": ((list, int, float), REQUIRED),
        "alpha": (_num, 2.0),
        "L": (int, 500_000),
        "M": (int, 50),
        "sampler": (str, "probit"),
        "seed": (int, 0),
        "workers": (int, None),
    },
    "adversary": {
        "source": (str, "pathological"),
        "mechanism": (str, "output"),
        "sigma_theta": (_num, 1.0),
        "lam": (_num, 1.0),
        "bounds": ((list, type(None)), None),
        "dataset": (str, None),
        "dataset_adjacent": (str, None),
        "a": (list, [1.0, 1.0]),
        "u": (list, [1.0, 0.0]),
        "v": (list, [1.0, 0.0]),
        "scale": (_num, 2.0),
        "neighbour": (str, None),
        "m": (int, 20),
        "d": (int, 3),
        "n": (int, 2),
        "eta": (_num, 0.1),
        "sigma": (_num, 1.0),
        "steps": ((int, str), "stationary"),
        "seed": (int, 0),
    },
    "verify": {
        "scenario": (str, REQUIRED),
        "d": ((list, int), None),
        "Delta": ((list, int, float), None),
        "sigma_theta": (_num, 1.0),
        "C": (_num, 1.0),
        "shift": (str, "universal"),
        "tol": (_num, 1e-3),
        "instances": (int, 20),
        "reps": (int, 10_000),
        "seed": (int, 0),
    },
}


def _validate(command: str, raw: dict) -> dict:
    schema = SCHEMAS[command]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command!r}: {', '.join(unknown)}; "
                          f"allowed: {', '.join(sorted(schema))}")
    cfg = {}
    for key, (typ, default) in schema.items():
        if key in raw:
            val = raw[key]
            if isinstance(val, bool) or not isinstance(val, typ):
                if not (val is None and default is None):
                    raise ConfigError(f"config key {key!r} has invalid value {val!r}")
            cfg[key] = val
        elif default is REQUIRED:
            raise ConfigError(f"missing required config key {key!r} for {command!r}")
        else:
            cfg[key] = default
    return cfg


def _parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, text = item.split("=", 1)
    try:
        return key.strip(), json.loads(text)
    except json.JSONDecodeError:
        return key.strip(), text


def _load_config(args) -> dict:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    for item in args.set or []:
        key, val = _parse_override(item)
        raw[key] = val
    if args.seed is not None:
        raw["seed"] = args.seed
    if getattr(args, "scenario", None):
        raw["scenario"] = args.scenario
    cfg = _validate(args.command, raw)
    return cfg


def _workers(args, cfg) -> int:
    if args.workers is not None:
        return args.workers
    if cfg.get("workers"):
        return cfg["workers"]
    try:
        return max(1, int(os.environ.get(ENV_THREADS, "1")))
    except ValueError:
        raise ConfigError(f"{ENV_THREADS} must be an integer") from None


def _fmt(x) -> str:
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _spec_and_curve(cfg: dict, d: int, Delta: float) -> tuple[amp.MechanismSpec, TradeoffCurve]:
    spec = amp.MechanismSpec(cfg["sigma_theta"], d, Delta, cfg["sigma_z"], cfg["n"], cfg["l"],
                             cfg["C"], cfg["shift"])
    mode = cfg["mode"]
    if mode == "auto":
        mode = "single" if spec.n == 1 and spec.l == 1 else "multi"
    if mode == "single":
        return spec, amp.single_point_bound(spec)
    if mode == "multi":
        return spec, amp.multi_point_bound(spec)
    raise ConfigError(f"mode must be auto, single or multi, got {mode!r}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_tradeoff(cfg: dict, out: Path, svg: bool = False) -> dict:
    spec, h = _spec_and_curve(cfg, cfg["d"], float(cfg["Delta"]))
    _write(out, "tradeoff.csv", to_csv(h, cfg["points"]))
    alphas, betas, _ = tabulate(h, cfg["points"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    crossovers = getattr(h, "crossovers", None)
    if spec.Delta == 0:
        # Both branches collapse onto the identity curve.
        w.writerow(["alpha", "h"])
        for a, b in zip(alphas, betas):
            w.writerow([_fmt(a), _fmt(b)])
    else:
        floor, branch = h.components
        name = "variance" if branch.base.kind == "variance_shift" else "chi_squared"
        w.writerow(["alpha", "h", "gaussian", name, "active"])
        active = np.asarray(h.active_index(alphas))
        for a, b, f, g, act in zip(alphas, betas, floor.eval(alphas), branch.eval(alphas), active):
            w.writerow([_fmt(a), _fmt(b), _fmt(f), _fmt(g), "gaussian" if act == 0 else name])
    _write(out, "components.csv", buf.getvalue())
    summary = {
        "spec": {k: getattr(spec, k) for k in ("sigma_theta", "sigma_z", "d", "n", "l", "Delta", "C", "shift")},
        "crossovers": None if crossovers is None else {"c1": crossovers.c1, "c2": crossovers.c2},
    }
    if isinstance(h, MaxCurve):
        summary["gamma"] = h.components[1].gamma
    _write(out, "crossovers.json", json.dumps(summary, indent=2) + "\n")
    if svg:
        _plot_tradeoff(h, alphas, out / "tradeoff.svg", crossovers)
    return summary


def _plot_tradeoff(h, alphas, path: Path, crossovers):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(alphas, 1 - alphas, color="0.7", lw=0.8, label="identity")
    if isinstance(h, MaxCurve):
        floor, branch = h.components
        ax.plot(alphas, floor.eval(alphas), "--", label="post-processing floor")
        ax.plot(alphas, branch.eval(alphas), ":", label="shifted limit branch")
    ax.plot(alphas, h.eval(alphas), "k", lw=1.5, label="h")
    if crossovers is not None:
        for c in (crossovers.c1, crossovers.c2):
            ax.axvline(c, color="r", lw=0.6)
    ax.set_xlabel("type I error")
    ax.set_ylabel("type II error")
    ax.legend(loc="upper right", fontsize=8)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_rdp_sweep(cfg: dict, out: Path, workers: int = 1) -> dict:
    deltas = cfg["Delta"] if isinstance(cfg["Delta"], list) else [cfg["Delta"]]
    ds = [int(round(float(d))) for d in cfg["d"]]
    root = RngStream(cfg["seed"])
    rows, records, slopes = [], [], []
    for j, Delta in enumerate(deltas):
        vals = []
        for i, d in enumerate(ds):
            spec, h = _spec_and_curve(cfg, d, float(Delta))
            est = amp.fdp_to_rdp_mc(h, cfg["alpha"], cfg["L"], cfg["M"], root.child(j).child(i),
                                    sampler=cfg["sampler"], workers=workers)
            vals.append(est.value)
            rows.append([str(d), str(spec.n), str(spec.l), _fmt(Delta), _fmt(cfg["alpha"]),
                         _fmt(est.value), _fmt(est.stderr)])
            rec = est.to_dict()
            rec.update({"d": d, "n": spec.n, "l": spec.l, "delta": float(Delta)})
            records.append(rec)
        plateau = amp.renyi_gaussian_shift(cfg["alpha"], float(Delta), cfg["sigma_theta"]) if Delta > 0 else 0.0
        slope, mask = amp.post_plateau_slope(ds, vals, plateau)
        slopes.append({"delta": float(Delta), "slope": None if math.isnan(slope) else slope,
                       "points_used": [d for d, m in zip(ds, mask) if m]})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["d", "n", "l", "delta", "alpha", "estimate", "stderr"])
    w.writerows(rows)
    _write(out, "rdp.csv", buf.getvalue())
    summary = {"records": records, "slopes": slopes}
    _write(out, "rdp.json", json.dumps(summary, indent=2, default=_json_default) + "\n")
    return summary


def _json_default(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(type(x))


def _models(cfg: dict, p1: mech.RidgeProblem, p2: mech.RidgeProblem):
    if cfg["mechanism"] == "output":
        st = cfg["sigma_theta"]
        return (mech.output_perturbation_model(mech.ridge_fit(p1), st),
                mech.output_perturbation_model(mech.ridge_fit(p2), st))
    if cfg["mechanism"] == "ngd":
        conf = mech.NgdConfig(cfg["eta"], cfg["sigma"], cfg["steps"])
        return mech.ngd_moments(p1, conf), mech.ngd_moments(p2, conf)
    raise ConfigError(f"mechanism must be 'output' or 'ngd', got {cfg['mechanism']!r}")


def cmd_adversary(cfg: dict, out: Path) -> dict:
    src = cfg["source"]
    bounds = cfg["bounds"]
    if src == "pathological":
        p1, p2 = mech.pathological_pair(cfg["a"], cfg["u"], cfg["v"], cfg["scale"], cfg["lam"])
    elif src == "dataset":
        if not cfg["dataset"] or not cfg["dataset_adjacent"]:
            raise ConfigError("source 'dataset' needs 'dataset' and 'dataset_adjacent' paths")
        X1, Y1 = mech.read_dataset_csv(cfg["dataset"])
        X2, Y2 = mech.read_dataset_csv(cfg["dataset_adjacent"])
        if bounds is None:
            mx = float(max(np.linalg.norm(X1, axis=1).max(), np.linalg.norm(X2, axis=1).max()))
            my = float(max(np.linalg.norm(Y1, axis=1).max(), np.linalg.norm(Y2, axis=1).max()))
            p1 = mech.problem_from_data(X1, Y1, cfg["lam"])
            bounds = (mx, my, p1.bounds[2])
        p1 = mech.problem_from_data(X1, Y1, cfg["lam"], bounds)
        p2 = mech.problem_from_data(X2, Y2, cfg["lam"], bounds)
    elif src == "random":
        gen = RngStream(cfg["seed"]).generator()
        m, d, n = cfg["m"], cfg["d"], cfg["n"]
        X = gen.standard_normal((m, d))
        Y = gen.standard_normal((m, n))
        # NGD row covariance depends on X, so only label changes keep a common covariance.
        neighbour = cfg["neighbour"] or ("label" if cfg["mechanism"] == "ngd" else "row")
        if neighbour not in ("row", "label"):
            raise ConfigError(f"neighbour must be 'row' or 'label', got {neighbour!r}")
        if neighbour == "row" and cfg["mechanism"] == "ngd":
            raise ConfigError("ngd models of row-adjacent datasets have different covariances; use neighbour='label'")
        Y2 = Y.copy()
        Y2[0] = gen.standard_normal(n)
        X2 = X.copy()
        if neighbour == "row":
            X2[0] = gen.standard_normal(d)
        mx = float(max(np.linalg.norm(X, axis=1).max(), np.linalg.norm(X2, axis=1).max()))
        my = float(max(np.linalg.norm(Y, axis=1).max(), np.linalg.norm(Y2, axis=1).max()))
        p1 = mech.RidgeProblem(X, Y, cfg["lam"], (mx, my, 0.0))
        p2 = mech.RidgeProblem(X2, Y2, cfg["lam"], (mx, my, 0.0))
    else:
        raise ConfigError(f"source must be pathological, dataset or random, got {src!r}")
    ma, mb = _models(cfg, p1, p2)
    ws = mech.worst_seed(ma, mb)
    model_mu = mech.model_parameter(ma, mb)
    shift = mb.means - ma.means
    sv = np.linalg.svd(shift, compute_uv=False)
    report = {
        "source": src,
        "mechanism": cfg["mechanism"],
        "worst_seed": ws.z.tolist(),
        "achieved_mu": ws.achieved_mu,
        "model_mu": model_mu,
        "ratio": (ws.achieved_mu / model_mu) if model_mu > 0 else 1.0,
        "degenerate": ws.degenerate,
        "shift_singular_values": sv.tolist(),
        "sensitivity": mech.ridge_sensitivity(p1.bounds, p1.lam, p1.m),
    }
    _write(out, "adversary.json", json.dumps(report, indent=2) + "\n")
    return report


# verify ---------------------------------------------------------------------


def _scenario(name: str) -> tuple[str, dict]:
    """``"single-point d=50 Delta=1"`` -> ("single-point", {"d": 50, "Delta": 1})."""
    parts = name.split()
    if not parts:
        raise ConfigError("empty scenario name")
    params = {}
    for tok in parts[1:]:
        key, val = _parse_override(tok)
        params[key] = val
    return parts[0], params


def _verify_single_point(cfg, params) -> tuple[bool, dict]:
    ds = params.get("d", cfg["d"] or [12, 50, 200])
    deltas = params.get("Delta", cfg["Delta"] or [0.5, 1.0])
    ds = ds if isinstance(ds, list) else [ds]
    deltas = deltas if isinstance(deltas, list) else [deltas]
    ok, reports = True, []
    for Delta in deltas:
        spec = amp.MechanismSpec(cfg["sigma_theta"], 12, float(Delta), C=cfg["C"], shift=cfg["shift"])
        rep = oracle.verify_single_point_bound(spec, ds, tol=cfg["tol"])
        ok &= rep.passed
        reports.append(rep.to_dict())
    return ok, {"reports": reports}


def _verify_ngd(cfg, params) -> tuple[bool, dict]:
    gen = RngStream(cfg["seed"]).generator()
    worst, checks = 0.0, []
    for i in range(int(params.get("instances", cfg["instances"]))):
        m, d, n = 8, int(gen.integers(1, 5)), int(gen.integers(1, 4))
        X = gen.standard_normal((m, d))
        Y = gen.standard_normal((m, n))
        prob = mech.problem_from_data(X, Y, float(gen.uniform(0.1, 1.0)), (10.0 * d, 10.0 * n, 10.0))
        ops = mech.ngd_operators(prob, 1.0)
        eta = float(gen.uniform(0.05, 0.9)) / ops.eigvals[-1]
        for t in (0, 1, 2, 7, 50, 100):
            conf = mech.NgdConfig(eta, float(gen.uniform(0.1, 2.0)), t)
            a = mech.ngd_moments(prob, conf)
            b = oracle.ngd_moments_by_recursion(prob, conf)
            err = max(float(np.abs(a.means - b.means).max()), float(np.abs(a.row_cov - b.row_cov).max()))
            worst = max(worst, err)
    checks.append({"check": "closed form vs recursion", "max_abs_error": worst, "pass": worst <= 1e-10})
    # Simulation against the closed form, in units of the Monte Carlo standard error.
    X = gen.standard_normal((6, 3))
    Y = gen.standard_normal((6, 2))
    prob = mech.problem_from_data(X, Y, 0.5, (10.0, 10.0, 10.0))
    conf = mech.NgdConfig(0.1, 0.8, 200)
    reps = int(params.get("reps", cfg["reps"]))
    emp, W = oracle.simulate_ngd(prob, conf, reps, RngStream(cfg["seed"]).child(1), return_samples=True)
    exact = mech.ngd_moments(prob, conf)
    var = np.diag(exact.row_cov)
    se_mean = np.sqrt(var)[None, :] / math.sqrt(reps)
    z_mean = float((np.abs(emp.means - exact.means) / se_mean).max())
    # Var of a pooled sample covariance entry: (S_jj S_kk + S_jk^2) / samples.
    se_cov = np.sqrt((np.outer(var, var) + exact.row_cov**2) / (reps * prob.n))
    z_cov = float((np.abs(emp.row_cov - exact.row_cov) / se_cov).max())
    checks.append({"check": "simulation vs closed form", "mean_z": z_mean, "cov_z": z_cov,
                   "pass": z_mean <= 5 and z_cov <= 5})
    return all(c["pass"] for c in checks), {"checks": checks}


def _verify_bessel(cfg, params) -> tuple[bool, dict]:
    d = int(params.get("d", 3))
    spec = amp.MechanismSpec(cfg["sigma_theta"], d, 0.0)
    try:
        dens = oracle.density_vz_1d([0.0], spec)
    except oracle.OracleInconsistency as exc:
        return False, {"error": str(exc)}
    err = dens.extras["bessel_sup_error"]
    return err <= 1e-6, {"d": d, "bessel_sup_error": err}


VERIFY_SCENARIOS = {
    "single-point": _verify_single_point,
    "ngd-moments": _verify_ngd,
    "bessel": _verify_bessel,
}


def cmd_verify(cfg: dict, out: Path) -> tuple[bool, dict]:
    name, params = _scenario(cfg["scenario"])
    if name not in VERIFY_SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(VERIFY_SCENARIOS)}")
    ok, detail = VERIFY_SCENARIOS[name](cfg, params)
    report = {"scenario": cfg["scenario"], "passed": bool(ok), **detail}
    _write(out, "verify.json", json.dumps(report, indent=2, default=_json_default) + "\n")
    return ok, report


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthdp", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--svg", action="store_true", help="also write an SVG plot where supported")
    common.add_argument("--workers", type=int, default=None,
                        help=f"worker threads (default: ${ENV_THREADS} or 1)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (VALUE parsed as JSON when possible)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("tradeoff", parents=[common], help="tabulate the lower bound h and its branches")
    sub.add_parser("rdp-sweep", parents=[common], help="Monte Carlo RDP estimates over a d sweep")
    sub.add_parser("adversary", parents=[common], help="worst-case seed for a single query")
    v = sub.add_parser("verify", parents=[common], help="run an oracle verification scenario")
    v.add_argument("scenario", nargs="?", help=f"one of: {', '.join(VERIFY_SCENARIOS)} (may append key=value)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out)
    try:
        cfg = _load_config(args)
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be positive")
        if args.command == "tradeoff":
            summary = cmd_tradeoff(cfg, out, args.svg)
            print(json.dumps(summary["crossovers"]))
        elif args.command == "rdp-sweep":
            summary = cmd_rdp_sweep(cfg, out, _workers(args, cfg))
            for s in summary["slopes"]:
                print(f"delta={s['delta']}: post-plateau slope {s['slope']}")
        elif args.command == "adversary":
            rep = cmd_adversary(cfg, out)
            print(f"achieved_mu={rep['achieved_mu']!r} model_mu={rep['model_mu']!r} ratio={rep['ratio']!r}")
        else:
            ok, rep = cmd_verify(cfg, out)
            print(f"{cfg['scenario']}: {'pass' if ok else 'FAIL'}")
            if not ok:
                failing = [r for r in rep.get("reports", []) for r in r["records"] if not r["pass"]]
                for rec in failing[:20]:
                    print(json.dumps(rec), file=sys.stderr)
                return EXIT_FAIL
    except mech.DatasetParseError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
