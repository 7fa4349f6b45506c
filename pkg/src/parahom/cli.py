"""Command-line entry point ``parahom``.

Exit status: 0 pass, 1 acceptance fail, 2 usage or config error, 3 solver error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import (ConfigError, ExperimentConfig, ExperimentRecord, compare_baseline,
                      dumps, load_packaged)

log = logging.getLogger("parahom")


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _json_obj(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise argparse.ArgumentTypeError("expected a JSON object")
    return doc


# subcommand -> [(flag, dest param, type, help)]
_PARAM_FLAGS = {
    "cell": [("--kind", "kind", str, "lambda, infinity or zero"),
             (("--lam", "--lambda"), "lam", float, "time period of the lambda cell"),
             (("--n-y", "--Ny"), "n_y", int, "grid points per y axis"),
             (("--n-s", "--Ns"), "n_s", int, "grid points in s")],
    "effective": [("--lambdas", "lambdas", _floats, "comma-separated periods")],
    "flux-check": [(("--lam", "--lambda"), "lam", float, "period for the refinement study"),
                   (("--n", "--Ny"), "n", _ints, "comma-separated grid sizes (N_y = N_s)"),
                   ("--lambdas", "lambdas", _floats, "periods for the time-row scaling")],
    "smooth-check": [("--deltas", "deltas", _floats, "comma-separated mollifier scales"),
                     ("--eps", "eps", float, "fast scale")],
    "solve": [("--eps", "eps", float, "spatial period"),
              ("--ell", "ell", float, "kappa = eps^(ell/2)"),
              ("--nx", "nx", int, "space intervals"),
              ("--nt", "nt", int, "time steps"),
              ("--n-store", "n_store", int, "stored time levels"),
              ("--format", "format", str, "binary or csv")],
    "rate-sweep": [("--ell", "ell", float, "kappa = eps^(ell/2)"),
                   ("--eps", "eps", _floats, "comma-separated dyadic eps values")],
    "lipschitz-probe": [("--ell", "ell", float, "kappa = eps^(ell/2)"),
                        ("--eps", "eps", _floats, "comma-separated eps values"),
                        ("--radii", "radii", _floats, "comma-separated cylinder radii"),
                        ("--x0", "x0", float, "cylinder centre"),
                        ("--t0", "t0", float, "cylinder top time")],
    "excess": [("--ell", "ell", float, "kappa = eps^(ell/2)"),
               ("--eps", "eps", float, "fine scale (omit for the homogenized solution)"),
               ("--radii", "radii", _floats, "comma-separated radii"),
               ("--x0", "x0", float, "cylinder centre"),
               ("--t0", "t0", float, "cylinder top time"),
               ("--p", "p", str, "source exponent (number or inf)"),
               ("--theta", "theta", float, "Holder exponent of A in (x, t)")],
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--out", help="output directory, or a .csv/.json path")
    common.add_argument("--seed", type=int, help="RNG seed (assumption sampling)")
    common.add_argument("--workers", type=int, help="worker threads for independent solves")
    common.add_argument("--dump-config", action="store_true",
                        help="print the resolved config as JSON and exit")
    common.add_argument("--family", type=_json_obj, help="coefficient family as a JSON object")
    common.add_argument("--time-factor", type=float, help="require dt <= kappa^2 / factor")
    common.add_argument("--space-factor", type=float, help="require h <= eps / factor")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="parahom", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, flags in _PARAM_FLAGS.items():
        sp = sub.add_parser(name, parents=[common])
        for flag, dest, typ, hlp in flags:
            names = flag if isinstance(flag, tuple) else (flag,)
            sp.add_argument(*names, dest=f"p_{dest}", type=typ, help=hlp)
        if name == "solve":
            sp.add_argument("--homogenized", dest="p_homogenized", action="store_const", const=True,
                            help="solve the homogenized problem instead")
    bd = sub.add_parser("baseline-diff", help="compare a record with a baseline record")
    bd.add_argument("record", type=Path)
    bd.add_argument("baseline", type=Path)
    bd.add_argument("--tolerances", type=Path, help="JSON tolerance table (default: packaged)")
    bd.add_argument("--out", help="write the diff report as JSON here")
    bd.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = ExperimentConfig.load(args.config)
        if cfg.kind != args.command:
            raise ConfigError(f"config is for {cfg.kind!r}, not {args.command!r}")
        doc = cfg.to_dict()
    else:
        doc = ExperimentConfig.default(args.command).to_dict()
    for key in vars(args):
        if key.startswith("p_") and getattr(args, key) is not None:
            doc["params"][key[2:]] = getattr(args, key)
    if args.family is not None:
        doc["family"] = args.family
    if args.time_factor is not None:
        doc["guards"]["time_factor"] = args.time_factor
    if args.space_factor is not None:
        doc["guards"]["space_factor"] = args.space_factor
    for key in ("out", "seed", "workers"):
        if getattr(args, key) is not None:
            doc[key] = getattr(args, key)
    return ExperimentConfig.from_dict(doc)


def _baseline_diff(args) -> int:
    try:
        rec = ExperimentRecord.load(args.record)
        base = ExperimentRecord.load(args.baseline)
        tol = json.loads(args.tolerances.read_text()) if args.tolerances else load_packaged("tolerances.json")
        rep = compare_baseline(rec, base, tol)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        print(f"parahom: error: {exc}", file=sys.stderr)
        return 2
    text = dumps(rep.as_dict())
    if args.out:
        Path(args.out).write_text(text)
    for row in rep.rows:
        mark = "DRIFT" if row["flagged"] else "ok"
        print(f"{mark:5s} {row['metric']}: {row['value']} vs {row['baseline']} "
              f"(rel {row['rel_diff']:.3e}, tol {row['tolerance']:g})")
    print("baseline-diff:", "pass" if rep.passed else f"fail ({len(rep.flagged)} flagged)")
    return 0 if rep.passed else 1


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "baseline-diff":
        return _baseline_diff(args)
    try:
        cfg = resolve_config(args)
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"parahom: config error: {exc}", file=sys.stderr)
        return 2
    if args.dump_config:
        sys.stdout.write(cfg.to_json() + "\n")
        return 0
    from .harness import run
    rec = run(cfg)
    if rec.error_code is not None:
        print(f"parahom: {rec.error_code} error: {rec.message}", file=sys.stderr)
        return rec.exit_code
    for name, chk in rec.checks.items():
        print(f"{'PASS' if chk['passed'] else 'FAIL'} {name} = {chk['value']}")
    print(json.dumps({"kind": rec.kind, "status": rec.status, "config_hash": rec.config_hash,
                      "metrics": rec.metrics}, sort_keys=True, default=str))
    return rec.exit_code


if __name__ == "__main__":
    sys.exit(main())
