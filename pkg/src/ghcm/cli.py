"""Command-line interface: generate, recover, threshold, sweep, adversary."""
from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

import numpy as np

from .adversary import AdversaryPolicy, corrupt, recover_robust
from .errors import GHCMError
from .geometry import sample_instance
from .harness import SweepPlan, emit_csv, run_sweep
from .io import load_instance, save_instance
from .model import ModelSpec, ch_divergence, threshold_margin
from .recovery import UNKNOWN, recover

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; this tool reserves 2 for runtime
    # failures, so route usage problems to exit code 1 instead.
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_spec(path: str) -> ModelSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return ModelSpec.from_json(json.load(fh))


def _report_json(report, num_vertices: int) -> dict:
    return {
        "status": report.status,
        "agreement": report.agreement,
        "num_vertices": num_vertices,
        "unlabeled": int(np.count_nonzero(report.final == UNKNOWN)),
        "mistakes": sum(report.mistakes_per_block.values()),
        "mistakes_per_block": {
            str(b): c for b, c in sorted(report.mistakes_per_block.items())
        },
        "relabeling": {str(z): w for z, w in report.best_relabeling.perm},
        "timings_ms": report.timings_ms,
    }


def _cmd_generate(args: argparse.Namespace) -> int:
    spec = _load_spec(args.spec)
    instance = sample_instance(spec, args.seed)
    save_instance(args.out, instance)
    print(
        json.dumps(
            {
                "vertices": instance.num_vertices,
                "observations": instance.observation_count(),
                "seed": instance.seed,
                "out": args.out,
            }
        )
    )
    return EXIT_OK


def _cmd_recover(args: argparse.Namespace) -> int:
    instance = load_instance(args.infile)
    report = recover(
        instance,
        chi=args.chi,
        delta=args.delta,
        epsilon0=args.epsilon0,
        refine_rounds=args.refine_rounds,
        gauss_seidel=args.gauss_seidel,
    )
    doc = _report_json(report, instance.num_vertices)
    if args.labels_out:
        np.savetxt(args.labels_out, report.final, fmt="%d")
        doc["labels_out"] = args.labels_out
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh)
            fh.write("\n")
    print(json.dumps(doc))
    return EXIT_OK


def _cmd_threshold(args: argparse.Namespace) -> int:
    spec = _load_spec(args.spec)
    pairs = {}
    for i in range(spec.k):
        for j in range(i + 1, spec.k):
            result = ch_divergence(spec.row(i), spec.row(j), spec.prior)
            pairs[f"{spec.labels[i]},{spec.labels[j]}"] = {
                "divergence": result.value,
                "argmin_t": result.argmin_t,
            }
    print(
        json.dumps(
            {
                "margin": threshold_margin(spec),
                "nu_d": spec.nu_d,
                "lambda": spec.lam,
                "pairwise": pairs,
            }
        )
    )
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    with open(args.plan, "r", encoding="utf-8") as fh:
        plan = SweepPlan.from_json(json.load(fh))
    result = run_sweep(plan, workers=args.workers)
    csv_text = emit_csv(result)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    for vi, tr, msg in result.errors:
        print(f"trial error value_index={vi} trial={tr}: {msg}", file=sys.stderr)
    return EXIT_OK


def _cmd_adversary(args: argparse.Namespace) -> int:
    instance = load_instance(args.infile)
    try:
        doc_in = json.loads(args.policy)
    except json.JSONDecodeError:
        with open(args.policy, "r", encoding="utf-8") as fh:
            doc_in = json.load(fh)
    policy = AdversaryPolicy.from_json(doc_in)
    corrupted = corrupt(instance, policy)
    doc = {
        "flipped": int(np.count_nonzero(corrupted.values != instance.values)),
        "observations": instance.observation_count(),
    }
    if args.out:
        save_instance(args.out, corrupted)
        doc["out"] = args.out
    if args.recover:
        report = recover_robust(corrupted, refine_rounds=args.refine_rounds)
        doc["recovery"] = _report_json(report, corrupted.num_vertices)
    print(json.dumps(doc))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ghcm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample an instance to a binary file")
    p.add_argument("--spec", required=True, help="model spec JSON file")
    p.add_argument("--seed", required=True, type=int, help="generator seed")
    p.add_argument("--out", required=True, help="output instance file")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("recover", help="run two-phase recovery on an instance")
    p.add_argument("--in", dest="infile", required=True, help="instance file")
    p.add_argument("--chi", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--epsilon0", type=float, default=None)
    p.add_argument("--refine-rounds", type=int, default=1)
    p.add_argument("--gauss-seidel", action="store_true")
    p.add_argument("--report", default=None, help="write the report JSON here")
    p.add_argument("--labels-out", default=None, help="write final labels here")
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("threshold", help="print the recovery threshold margin")
    p.add_argument("--spec", required=True, help="model spec JSON file")
    p.set_defaults(func=_cmd_threshold)

    p = sub.add_parser("sweep", help="run a Monte Carlo sweep plan")
    p.add_argument("--plan", required=True, help="sweep plan JSON file")
    p.add_argument("--out", default=None, help="CSV output path (default stdout)")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("adversary", help="corrupt observations, optionally recover")
    p.add_argument("--in", dest="infile", required=True, help="instance file")
    p.add_argument(
        "--policy", required=True, help="policy JSON, inline or a file path"
    )
    p.add_argument("--out", default=None, help="write corrupted instance here")
    p.add_argument("--recover", action="store_true", help="run robust recovery")
    p.add_argument("--refine-rounds", type=int, default=1)
    p.set_defaults(func=_cmd_adversary)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except GHCMError as exc:
        print(f"ghcm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"ghcm: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
