"""Command-line front end.

Subcommands: ``gen`` (emit a challenge corpus), ``solve`` (one challenge,
print its trace), ``eval`` (full run), ``perturb`` (apply the augmentation
pipeline to images), ``estimate-noise`` (print the sigma estimate per
file), ``report`` (re-render CSVs from a report.json).

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import challenge as ch
from . import harness, imaging
from . import solver as sv


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--detector", default=None, help="detector preset, JSON path, or plugin:CMD")
    parser.add_argument("--policy", default=None, help="flexibility policy preset or JSON path")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--jobs", type=int, default=None, help="parallel session workers")


def build_parser() -> _Parser:
    parser = _Parser(prog="captcha-grid-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[], help="emit a challenge corpus")
    _add_common(p)
    p.add_argument("--n", type=int, default=10, help="number of challenges")
    p.add_argument("--kind", choices=("selection", "click"), default="selection")
    p.add_argument("--unperturbed", action="store_true", help="disable noise injection")

    p = sub.add_parser("solve", help="solve one challenge and print its trace")
    _add_common(p)
    p.add_argument("--kind", choices=("selection", "click"), default="selection")

    p = sub.add_parser("eval", help="run a full evaluation")
    _add_common(p)
    p.add_argument("--n-sessions", type=int, default=None)
    p.add_argument("--security-pref", choices=ch.SECURITY_PREFS, default=None)
    p.add_argument("--kind", choices=("selection", "click"), default=None)
    p.add_argument("--no-traces", action="store_true", help="skip per-session trace files")
    p.add_argument("--scenario", choices=("sessions", "click-patterns"), default="sessions")

    p = sub.add_parser("perturb", help="apply the augmentation pipeline to PNG files")
    _add_common(p)
    p.add_argument("files", nargs="+", help="input PNG files")

    p = sub.add_parser("estimate-noise", help="print the noise sigma estimate per file")
    _add_common(p)
    p.add_argument("files", nargs="+", help="input PNG files")

    p = sub.add_parser("report", help="re-render CSVs from an existing report.json")
    _add_common(p)
    p.add_argument("report_json", help="path to report.json")

    return parser


def _eval_config(args) -> harness.EvalConfig:
    values: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values = harness.parse_kv_config(fh.read())
    overrides = {
        "seed": args.seed,
        "detector": args.detector,
        "policy": args.policy,
        "out": args.out,
        "jobs": args.jobs,
        "n_sessions": getattr(args, "n_sessions", None),
        "security_pref": getattr(args, "security_pref", None),
        "kind": getattr(args, "kind", None),
    }
    if getattr(args, "no_traces", False):
        overrides["write_traces"] = False
    return harness.eval_config_from_kv(values, **overrides)


def _cmd_gen(args) -> int:
    out = args.out or "corpus"
    paths = harness.gen_corpus(
        out, n=args.n, seed=args.seed or 0, kind=args.kind, unperturbed=args.unperturbed
    )
    print(f"wrote {len(paths)} challenges to {out}")
    return 0


def _cmd_solve(args) -> int:
    seed = args.seed or 0
    detector = harness.resolve_detector(args.detector or "perfect")
    policy = harness.resolve_policy(args.policy, "medium")
    difficulty = ch.difficulty_from_risk(0.1, "medium")
    challenge = ch.generate_challenge(difficulty, seed=seed, kind=args.kind)
    rng_det = harness.substream(seed, 0, "detector")
    rng_gen = harness.substream(seed, 0, "generation")
    rng_ver = harness.substream(seed, 0, "verification")
    if args.kind == "click":
        trace, challenge = sv.solve_click(challenge, detector, rng_det, rng_gen, timing_seed=seed)
        trace.outcome = ch.verify_click(challenge, policy, rng_ver)
    else:
        trace, challenge = sv.solve_selection(challenge, detector, rng_det, timing_seed=seed)
        trace.outcome = ch.verify_selection(challenge, set(trace.clicked_cells), policy, rng_ver)
    sys.stdout.write(trace.to_jsonl())
    return 0


def _cmd_eval(args) -> int:
    config = _eval_config(args)
    if args.scenario == "click-patterns":
        rows = harness.run_click_patterns(config.policy or "table5", seed=config.seed)
        print(json.dumps(rows, indent=2))
        return 0
    report, results = harness.run_eval(config)
    out = config.out or "eval-out"
    written = harness.write_report(report, out)
    if config.write_traces:
        harness.write_traces(results, out)
    print(f"sessions={report.totals['sessions']} passed={report.totals['passed']} "
          f"failed={report.totals['failed']} no_challenge={report.totals['no_challenge']} "
          f"success_rate={report.success_rate}")
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_perturb(args) -> int:
    import os

    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    config = imaging.PerturbationConfig()
    seed = args.seed or 0
    for i, path in enumerate(args.files):
        image = imaging.read_png(path)
        perturbed, record = imaging.augment_pipeline(image, config, seed + i)
        dest = os.path.join(out, os.path.basename(path))
        imaging.write_image_with_record(dest, perturbed, record)
        print(f"{path} -> {dest} ({len(record.ops)} ops, sigma={record.total_sigma:.2f})")
    return 0


def _cmd_estimate_noise(args) -> int:
    for path in args.files:
        image = imaging.read_png(path)
        sigma = imaging.estimate_noise_sigma(image)
        flagged = imaging.classify_perturbed(sigma)
        print(f"{path}\t{sigma:.4f}\t{'perturbed' if flagged else 'clean'}")
    return 0


def _cmd_report(args) -> int:
    with open(args.report_json, encoding="utf-8") as fh:
        report = harness.EvalReport.from_dict(json.load(fh))
    out = args.out or "."
    for path in harness.write_report(report, out):
        print(f"wrote {path}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "solve": _cmd_solve,
    "eval": _cmd_eval,
    "perturb": _cmd_perturb,
    "estimate-noise": _cmd_estimate_noise,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (harness.StartupError, FileNotFoundError, ValueError, ch.GenerationError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
