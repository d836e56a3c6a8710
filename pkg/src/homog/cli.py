"""Command line entry point ``homog``.

Exit codes: 0 when every enabled criterion passes, 2 when a criterion fails,
3 on a runtime or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import HomogError
from .harness import ExperimentConfig, exit_code, parse_eps, run, with_overrides

VERBS = ("cell", "torus-sweep", "dirichlet-sweep", "diagnostics", "report")


def _default_jobs():
    try:
        return max(int(os.environ.get("HOMOG_JOBS", "1")), 1)
    except ValueError:
        return 1


def _eps_list(text):
    return tuple(parse_eps(t) for t in text.split(",") if t.strip())


def build_parser():
    parser = argparse.ArgumentParser(prog="homog", description="Periodic homogenization experiments.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment or problem JSON")
        p.add_argument("--out", help="output directory, or a .csv/.json path")
        p.add_argument("--jobs", type=int, default=_default_jobs(), help="worker threads (default $HOMOG_JOBS or 1)")
        p.add_argument("--seed", type=int, help="seed for random test data")

    p = sub.add_parser("cell", help="solve the cell problem and report g0 with bound margins")
    common(p)
    p.add_argument("--resolution", type=int)
    p.add_argument("--dump-lambda", help="write the corrector raster here")

    p = sub.add_parser("torus-sweep", help="eps sweep of the resolvent problem on a torus")
    common(p)
    p.add_argument("--variant", "--smoothing", dest="variant",
                   help="comma-separated corrector variants: steklov, fourier, no_smoothing")
    p.add_argument("--eps", type=_eps_list, help="e.g. 1/8,1/16,1/32,1/64")

    p = sub.add_parser("dirichlet-sweep", help="eps sweep of the Dirichlet problem on the unit box")
    common(p)
    p.add_argument("--path", choices=("general", "bounded-lambda"))
    p.add_argument("--eps", type=_eps_list)
    p.add_argument("--dump-fields", help="directory for raster snapshots of every field")

    p = sub.add_parser("diagnostics", help="corrector bounds, energy inequality and smoothing contracts")
    common(p)
    p.add_argument("--resolution", type=int)
    p.add_argument("--samples", type=int)

    p = sub.add_parser("report", help="summarize saved JSON reports")
    p.add_argument("reports", nargs="+", help="report JSON files")
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.add_argument("--out", help="write a combined JSON summary here")
    p.add_argument("--jobs", type=int, default=_default_jobs(), help=argparse.SUPPRESS)
    p.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    return parser


def _load_config(args):
    path = Path(args.config)
    with open(path) as fh:
        data = json.load(fh)
    if "kind" not in data:
        # bare problem descriptor
        data = {"problem": data.get("problem", data), "kind": args.verb, "name": path.stem}
    data.setdefault("name", path.stem)
    if data["kind"] != args.verb:
        raise HomogError(f"config kind {data['kind']!r} does not match the verb {args.verb!r}")
    return ExperimentConfig.from_dict(data, path.parent)


def _summary(report, label):
    status = "ERROR" if report.error else ("PASS" if report.passed else "FAIL")
    lines = [f"{label}: {report.kind} {status}"]
    if report.error:
        lines.append(f"  {report.error['type']}: {report.error['message']}")
    for key, fit in sorted(report.slopes.items()):
        if fit is None:
            lines.append(f"  slope {key}: floor-limited")
        else:
            lines.append(f"  slope {key}: {fit['slope']:.4f}")
    for key, ok in sorted(report.checks.items()):
        lines.append(f"  {key}: {'ok' if ok else 'FAILED'}")
    for w in report.warnings:
        lines.append(f"  warning: {w}")
    return "\n".join(lines)


def _report_verb(args):
    worst = 0
    combined = []
    for path in args.reports:
        data = json.loads(Path(path).read_text())
        status = "ERROR" if data.get("error") else ("PASS" if data.get("passed") else "FAIL")
        print(f"{path}: {data.get('kind')} {status}")
        for key, ok in sorted(data.get("checks", {}).items()):
            print(f"  {key}: {'ok' if ok else 'FAILED'}")
        code = 3 if data.get("error") else (0 if data.get("passed") else 2)
        worst = max(worst, code)
        combined.append({"report": str(path), "kind": data.get("kind"), "status": status,
                         "checks": data.get("checks", {})})
    if args.out:
        Path(args.out).write_text(json.dumps(combined, indent=2, sort_keys=True) + "\n")
    return worst


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "report":
            return _report_verb(args)
        config = _load_config(args)
        over = {"out": args.out, "seed": args.seed}
        if args.verb in ("cell", "diagnostics") and args.resolution:
            over["cell_resolution"] = args.resolution
        if args.verb == "cell":
            over["dump_lambda"] = args.dump_lambda
        if args.verb == "torus-sweep" and args.variant:
            over["variants"] = tuple(v.strip() for v in args.variant.split(","))
        if args.verb in ("torus-sweep", "dirichlet-sweep") and args.eps:
            over["eps"] = args.eps
        if args.verb == "dirichlet-sweep":
            over["path"] = args.path
            over["dump_fields"] = args.dump_fields
        if args.verb == "diagnostics":
            over["samples"] = args.samples
        config = with_overrides(config, **over)
    except (HomogError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    report = run(config, jobs=args.jobs)
    print(_summary(report, config.name))
    return exit_code(report)


if __name__ == "__main__":
    sys.exit(main())
