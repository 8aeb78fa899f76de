"""Command line entry point.

    rfkac run --kind renewal --seed 1 --paths 10000 --out runs
    rfkac renewal --seed 1 --out runs            (same, one subcommand per kind)
    rfkac report runs --out runs

Flags mirror the config keys.  With --config FILE the JSON file is applied
on top of the flags, so a key present in the file wins.
"""
from __future__ import annotations

import argparse
import json
import sys

from .experiments import KINDS, ConfigError, emit_report, load_config, merge_config, run_experiment


def _kv(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    try:
        return k, json.loads(v)
    except json.JSONDecodeError:
        return k, v


def _common(p, with_kind):
    if with_kind:
        p.add_argument("--kind", choices=KINDS)
    p.add_argument("--beta", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--paths", type=int, help="paths, samples or replicas, depending on the kind")
    p.add_argument("--out", help="output root (default: runs)")
    p.add_argument("--config", help="JSON config file; its keys override the flags")
    p.add_argument("--option", action="append", type=_kv, metavar="KEY=VALUE",
                   help="kind-specific option, value parsed as JSON")
    p.add_argument("--override", action="append", type=_kv, metavar="KEY=VALUE",
                   help="replace a derived schedule constant")
    p.add_argument("--strict", action="store_true", help="also exit nonzero on failed criterion checks")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rfkac", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(ap, True)
    sub = ap.add_subparsers(dest="command")
    # subcommand flags must not reset values given before the subcommand
    quiet = {"argument_default": argparse.SUPPRESS}
    _common(sub.add_parser("run", help="run the experiment named by --kind", **quiet), True)
    for k in KINDS:
        _common(sub.add_parser(k, help=f"run the {k} experiment", **quiet), False)
    rp = sub.add_parser("report", help="merge finished runs into one report")
    rp.add_argument("artifacts", nargs="+")
    rp.add_argument("--out")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    if a.command is None and a.kind is None:
        ap.print_usage(sys.stderr)
        print("error: name a kind (subcommand or --kind)", file=sys.stderr)
        return 2
    if a.command == "report":
        try:
            rep = emit_report(a.artifacts, a.out)
        except (ValueError, FileNotFoundError) as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        print(rep["summary"])
        return 0 if rep["asserts_ok"] else 3
    kind = a.command if a.command in KINDS else getattr(a, "kind", None)
    flags = {"kind": kind, "beta": a.beta, "theta": a.theta, "gamma": a.gamma, "seed": a.seed,
             "n_paths": a.paths, "out": a.out}
    if a.option:
        flags["options"] = dict(a.option)
    if a.override:
        flags["overrides"] = dict(a.override)
    if a.kind and a.command in KINDS and a.kind != a.command:
        print(f"error: --kind {a.kind} contradicts subcommand {a.command}", file=sys.stderr)
        return 2
    try:
        cfg = merge_config(flags, load_config(a.config) if a.config else None)
    except (ConfigError, OSError) as e:
        ap.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        res = run_experiment(cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    for c in res.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} [{c['level']}] {c['name']}")
    print(f"artifacts in {res.out_dir}")
    if res.status:
        failing = [c["name"] for c in res.checks if c["level"] == "assert" and not c["passed"]]
        print("failed invariant(s): " + "; ".join(failing), file=sys.stderr)
        return res.status
    if a.strict and res.failed:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
