"""Command line: ``nongibrat generate | analyze | verify``.

Exit codes: 0 success, 1 analytic or statistical failure, 2 usage error.
Settings resolve as flags > JSON config file (``--config``) > built-in defaults.
Output files go to ``--outdir``, else ``$NONGIBRAT_OUTDIR``, else the current directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import __version__
from .analysis import AnalysisOptions, analyze_panel
from .balance import QuasiBalanceParams
from .binning import BinningScheme
from .errors import ConfigurationError, DomainError, FitError, NumericalError
from .io import read_panel_csv, sha256_file, write_json, write_panel_csv, write_tsv

log = logging.getLogger("nongibrat")

OUTDIR_ENV = "NONGIBRAT_OUTDIR"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

_BINS = BinningScheme()

GENERATE_DEFAULTS = {
    "mode": "static",
    "n": 200_000,
    "seed": 7,
    "alpha": 0.14,
    "mu": 1.0,
    "t_minus_x0": 0.8,
    "t_plus_x0": None,
    "x0": _BINS.lower(17),
    "xmin": _BINS.lower(9),
    "xcap": 1e9,
    "floor_decades": 1.0,
    "theta": None,
    "a": None,
    "gamma": None,
    "symmetrize": False,
    "n_chunks": 1,
    "output": None,
    "manifest": None,
    "outdir": None,
}
QUASI_DEFAULTS = {"theta": 0.95, "a": 10**0.15}

ANALYZE_DEFAULTS = {
    "n_bins": 20,
    "r_binwidth": 0.1,
    "tent_method": "poisson",
    "regression": "rma",
    "growth": "auto",
    "n_permutations": 999,
    "seed": 0,
    "level": 0.05,
    "alpha_grid": [0.10, 0.14, 0.20],
    "pdf_xmin": None,
    "xcap": None,
    "gamma": None,
    "n_jobs": 1,
    "require_balance": None,
    "tables": True,
    "report": None,
    "outdir": None,
}

VERIFY_DEFAULTS = {
    "seed": 0,
    "n_random": 20,
    "theta": 0.95,
    "a": 10**0.15,
    "inject_c2": 0.0,
    "inject_cp1": 0.0,
    "grid_halve": False,
    "report": None,
    "outdir": None,
}


class UsageError(Exception):
    pass


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _float_list(s):
    try:
        return [float(t) for t in s.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nongibrat", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        # every default is None so that config-file values can be told apart from explicit flags
        sp.add_argument("--config", type=Path, help="JSON file with default settings for this command")
        sp.add_argument("--outdir", type=Path, default=None, help=f"output directory (default ${OUTDIR_ENV} or .)")

    g = sub.add_parser("generate", help="write a seeded synthetic panel as CSV plus a JSON manifest")
    common(g)
    g.add_argument("--mode", choices=["static", "quasi"], default=None)
    g.add_argument("--n", type=_positive_int, default=None, help="number of pairs")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--alpha", type=float, default=None, help="slope of t+- against ln x below x0")
    g.add_argument("--mu", type=float, default=None, help="tail index, t_plus(x0) - t_minus(x0)")
    g.add_argument("--t-minus-x0", type=float, default=None)
    g.add_argument("--t-plus-x0", type=float, default=None, help="default t_minus(x0) + mu")
    g.add_argument("--x0", type=float, default=None)
    g.add_argument("--xmin", type=float, default=None)
    g.add_argument("--xcap", type=float, default=None)
    g.add_argument("--floor-decades", type=float, default=None,
                   help="decades of the linear law generated below xmin (default 1)")
    g.add_argument("--theta", type=float, default=None)
    g.add_argument("--a", type=float, default=None)
    g.add_argument("--gamma", type=float, default=None, help="sets theta = 1 - 2 log10(a) / gamma")
    g.add_argument("--symmetrize", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--n-chunks", type=_positive_int, default=None)
    g.add_argument("--output", type=Path, default=None, help="CSV path (default <outdir>/panel.csv)")
    g.add_argument("--manifest", type=Path, default=None, help="default: CSV path with .manifest.json")

    a = sub.add_parser("analyze", help="estimate the kernel profile, tail index and balance of a CSV panel")
    common(a)
    a.add_argument("input", type=Path)
    a.add_argument("--report", type=Path, default=None, help="report path (default <outdir>/report.json)")
    a.add_argument("--n-bins", type=_positive_int, default=None)
    a.add_argument("--r-binwidth", type=float, default=None)
    a.add_argument("--tent-method", choices=["poisson", "wls"], default=None)
    a.add_argument("--regression", choices=["rma", "ols"], default=None)
    a.add_argument("--growth", choices=["auto", "raw", "modified"], default=None)
    a.add_argument("--n-permutations", type=_positive_int, default=None)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--level", type=float, default=None)
    a.add_argument("--alpha-grid", type=_float_list, default=None, help="e.g. 0.10,0.14,0.20")
    a.add_argument("--pdf-xmin", type=float, default=None)
    a.add_argument("--xcap", type=float, default=None)
    a.add_argument("--gamma", type=float, default=None)
    a.add_argument("--n-jobs", type=_positive_int, default=None)
    a.add_argument("--require-balance", choices=["detailed", "quasi"], default=None,
                   help="exit 1 unless this symmetry test passes")
    a.add_argument("--tables", action=argparse.BooleanOptionalAction, default=None, help="write TSV plot tables")

    v = sub.add_parser("verify", help="run the analytic residual suite")
    common(v)
    v.add_argument("--seed", type=int, default=None)
    v.add_argument("--n-random", type=int, default=None)
    v.add_argument("--theta", type=float, default=None)
    v.add_argument("--a", type=float, default=None)
    v.add_argument("--inject-c2", type=float, default=None)
    v.add_argument("--inject-cp1", type=float, default=None)
    v.add_argument("--grid-halve", action=argparse.BooleanOptionalAction, default=None)
    v.add_argument("--report", type=Path, default=None, help="report path (default <outdir>/verify.json)")
    return p


def resolve(args: argparse.Namespace, defaults: dict) -> tuple[dict, set]:
    """Merge built-in defaults, the JSON config file and explicit flags, in rising priority.

    Also returns the keys set by the config file or a flag.
    """
    cfg = dict(defaults)
    explicit = set()
    if getattr(args, "config", None) is not None:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}")
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        for k, val in loaded.items():
            key = k.replace("-", "_")
            if key not in defaults:
                raise UsageError(f"unknown config key {k!r}")
            cfg[key] = val
            explicit.add(key)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
            explicit.add(key)
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()}, explicit


def _outdir(cfg) -> Path:
    return Path(cfg.get("outdir") or os.environ.get(OUTDIR_ENV) or ".")


# ---------------------------------------------------------------- generate


def _generate_config(cfg, explicit):
    from .synthesis import SynthesisConfig, default_profile

    if cfg["n"] is None or int(cfg["n"]) < 1:
        raise UsageError("n must be >= 1")
    tm = float(cfg["t_minus_x0"])
    tp = cfg["t_plus_x0"]
    mu = float(cfg["mu"])
    if tp is None:
        tp = tm + mu
    elif "mu" in explicit and not math.isclose(float(tp) - tm, mu, rel_tol=1e-9):
        raise UsageError(f"t_plus_x0 - t_minus_x0 = {float(tp) - tm} contradicts mu = {mu}")
    cfg["t_plus_x0"], cfg["mu"] = float(tp), float(tp) - tm

    quasi = None
    theta, a, gamma = cfg["theta"], cfg["a"], cfg["gamma"]
    if cfg["mode"] == "static":
        if any(v is not None for v in (theta, a, gamma)):
            raise UsageError("--theta/--a/--gamma need --mode quasi")
    else:
        if gamma is not None:
            if theta is not None and a is not None:
                raise UsageError("give at most two of --theta, --a, --gamma")
            if a is None:
                theta = QUASI_DEFAULTS["theta"] if theta is None else theta
                a = 10.0 ** ((1.0 - theta) * gamma / 2.0)
            quasi = _quasi(lambda: QuasiBalanceParams.from_gamma(a, gamma))
        else:
            theta = QUASI_DEFAULTS["theta"] if theta is None else theta
            a = QUASI_DEFAULTS["a"] if a is None else a
            quasi = _quasi(lambda: QuasiBalanceParams(theta, a))
        cfg["theta"], cfg["a"] = quasi.theta, quasi.a

    try:
        profile = default_profile(cfg["alpha"], cfg["t_plus_x0"], tm, cfg["x0"], cfg["xmin"], cfg["xcap"],
                                  cfg["floor_decades"])
    except DomainError as e:
        raise UsageError(str(e))
    return SynthesisConfig(profile=profile, n=int(cfg["n"]), seed=int(cfg["seed"]), quasi=quasi,
                           n_chunks=int(cfg["n_chunks"]), symmetrize=bool(cfg["symmetrize"]))


def _quasi(make):
    try:
        return make()
    except DomainError as e:
        raise UsageError(str(e))


def cmd_generate(args) -> int:
    from .synthesis import generate_panel

    cfg, explicit = resolve(args, GENERATE_DEFAULTS)
    scfg = _generate_config(cfg, explicit)
    panel = generate_panel(scfg)
    out = Path(cfg["output"]) if cfg["output"] else _outdir(cfg) / "panel.csv"
    manifest_path = Path(cfg["manifest"]) if cfg["manifest"] else out.with_suffix(".manifest.json")
    write_panel_csv(out, panel)
    manifest = {
        "command": "generate",
        "version": __version__,
        "config": cfg,
        "output": str(out),
        "sha256": sha256_file(out),
        "n": len(panel),
        "n_rejected": panel.n_rejected,
        "rejection_rate": panel.n_rejected / (panel.n_rejected + len(panel)),
        "support1": panel.meta["support1"],
        "support2": panel.meta["support2"],
    }
    write_json(manifest_path, manifest)
    print(f"wrote {len(panel)} pairs to {out} ({panel.n_rejected} rejected draws); manifest {manifest_path}")
    return EXIT_OK


# ---------------------------------------------------------------- analyze


def cmd_analyze(args) -> int:
    cfg, _ = resolve(args, ANALYZE_DEFAULTS)
    path = Path(args.input)
    if not path.is_file():
        raise UsageError(f"no such file: {path}")
    try:
        opt = AnalysisOptions(
            n_bins=int(cfg["n_bins"]), r_binwidth=float(cfg["r_binwidth"]), tent_method=cfg["tent_method"],
            regression=cfg["regression"], n_permutations=int(cfg["n_permutations"]), seed=int(cfg["seed"]),
            level=float(cfg["level"]), alpha_grid=tuple(float(x) for x in cfg["alpha_grid"]),
            pdf_xmin=cfg["pdf_xmin"], xcap=cfg["xcap"], Gamma=cfg["gamma"], n_jobs=int(cfg["n_jobs"]),
            growth=cfg["growth"])
    except ConfigurationError as e:
        raise UsageError(str(e))
    panel, stats = read_panel_csv(path)
    outdir = _outdir(cfg)
    provenance = {
        "command": "analyze",
        "input": str(path),
        "input_sha256": sha256_file(path),
        "rows": stats.to_dict(),
        "flags": cfg,
    }
    result = analyze_panel(panel, opt, provenance)
    report_path = Path(cfg["report"]) if cfg["report"] else outdir / "report.json"
    write_json(report_path, result.report)
    if cfg["tables"]:
        for name, cols in result.tables.items():
            write_tsv(report_path.parent / name, cols)
    est = result.report["estimates"]
    print(f"{len(panel)} pairs ({stats.n_skipped} rows skipped: {stats.n_unparseable} unparseable, "
          f"{stats.n_nonpositive} nonpositive)")
    for k in ("alpha", "x0", "xmin", "mu", "theta", "a"):
        e = est[k]
        if e["value"] is not None:
            print(f"  {k:6s} = {e['value']:.6g} +- {e['stderr'] if e['stderr'] is not None else float('nan'):.3g}"
                  f"  (bins {e['window'][0]}-{e['window'][1]})")
    for name, rep in result.report["symmetry"].items():
        if rep is not None:
            print(f"  {name}: {rep['verdict']} (p = {rep['p_value']:.4g})")
    print(f"report {report_path}")
    req = cfg["require_balance"]
    if req:
        rep = result.report["symmetry"]["detailed_balance" if req == "detailed" else "quasi_balance"]
        if rep is None or rep["verdict"] != "pass":
            print(f"required {req} balance test did not pass", file=sys.stderr)
            return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------- verify


def cmd_verify(args) -> int:
    from .verification import run_suite

    cfg, _ = resolve(args, VERIFY_DEFAULTS)
    if int(cfg["n_random"]) < 0:
        raise UsageError("n_random must be >= 0")
    suite = run_suite(seed=int(cfg["seed"]), n_random=int(cfg["n_random"]), theta=float(cfg["theta"]),
                      a=float(cfg["a"]), inject_c2=float(cfg["inject_c2"]), inject_cp1=float(cfg["inject_cp1"]),
                      grid_halve=bool(cfg["grid_halve"]))
    report = {"command": "verify", "version": __version__, "flags": cfg, **suite.to_dict()}
    report["failures"] = [r.to_dict() for r in suite.failures]
    report_path = Path(cfg["report"]) if cfg["report"] else _outdir(cfg) / "verify.json"
    write_json(report_path, report)
    names = sorted({r.name for r in suite.reports})
    for name in names:
        reps = [r for r in suite.reports if r.name == name]
        worst = max(r.max_abs_residual for r in reps)
        verdicts = {r.verdict for r in reps}
        tag = "fail" if "fail" in verdicts else ("info" if verdicts == {"info"} else "pass")
        print(f"  {name:34s} max residual {worst:.3e}  {tag}")
    print(f"  ode convergence order {suite.ode_order:.3f}")
    print(f"  quasi relations {'pass' if suite.quasi.passed else 'fail'}")
    print(("PASS" if suite.passed else f"FAIL ({len(suite.failures)} failing reports)") + f"; report {report_path}")
    return EXIT_OK if suite.passed else EXIT_FAIL


COMMANDS = {"generate": cmd_generate, "analyze": cmd_analyze, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"nongibrat {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as e:
        print(f"nongibrat {args.command}: invalid configuration: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, FitError, NumericalError) as e:
        print(f"nongibrat {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as e:
        print(f"nongibrat {args.command}: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
