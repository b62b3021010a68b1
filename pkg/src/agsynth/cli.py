"""Command-line front end: analyze -> synthesize -> simulate -> report.

Artifacts are plain JSON files; each embeds the run manifest (instance
path, command, overrides, seed, output target, tool version) and a
``created_utc`` timestamp. Apart from that timestamp, identical inputs
and seeds produce byte-identical artifacts: keys are sorted and volatile
solver timing is kept out of the files.

Exit codes:
    0  success (for ``simulate``: zero violations)
    1  parse/validation/usage/IO error
    2  synthesis reported infeasible
    3  solver failure or inaccurate solve
    4  simulation reported violations
    5  artifact mismatch (synthesis was produced from a different instance)
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

import agsynth
from agsynth.contract_sdp import load_result, result_to_dict, synthesize
from agsynth.infograph import compute_decomposition, is_partially_nested
from agsynth.lifting import build_lifted, lifted_to_dict
from agsynth.model import InstanceError, instance_hash, load_instance
from agsynth.simulate import SimulationConfig, report_to_dict, run

__all__ = ["main"]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_SOLVER_FAILURE = 3
EXIT_VIOLATIONS = 4
EXIT_MISMATCH = 5

_VOLATILE_DIAGNOSTICS = ("solve_time",)


def _manifest(args: argparse.Namespace, overrides: dict) -> dict:
    return {
        "tool": "agsynth",
        "version": agsynth.__version__,
        "command": args.command,
        "instance": str(getattr(args, "instance", "")),
        "overrides": {k: v for k, v in overrides.items() if v is not None},
        "seed": getattr(args, "seed", None),
        "out": str(getattr(args, "out", "") or ""),
    }


def _write_artifact(doc: dict, path: Path) -> None:
    doc = dict(doc)
    doc["created_utc"] = datetime.now(timezone.utc).isoformat()
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _strip_volatile(doc: dict) -> dict:
    diag = doc.get("diagnostics")
    if isinstance(diag, dict):
        doc["diagnostics"] = {
            k: v for k, v in diag.items() if k not in _VOLATILE_DIAGNOSTICS
        }
    return doc


def _fmt_set(values) -> str:
    values = sorted(values)
    return "{" + ", ".join(str(v) for v in values) + "}" if values else "∅"


def cmd_analyze(args) -> int:
    instance = load_instance(args.instance)
    decomp = compute_decomposition(instance)
    for i in range(1, instance.N + 1):
        print(
            f"subsystem {i}: N({i}) = {_fmt_set(decomp.nested[i])}, "
            f"C({i}) = {_fmt_set(decomp.coupled[i])}"
        )
    edges = sorted(decomp.E_C)
    print("E_C = " + (_fmt_set(edges) if edges else "∅"))
    if is_partially_nested(decomp):
        print("C = ∅; partially nested")
    else:
        print(f"C = {_fmt_set(decomp.coupled_set)}; nonclassical")
    if args.out:
        doc = {
            "kind": "analysis",
            "nested": {str(i): sorted(decomp.nested[i]) for i in decomp.nested},
            "coupled": {str(i): sorted(decomp.coupled[i]) for i in decomp.coupled},
            "E_C": [list(e) for e in edges],
            "C": sorted(decomp.coupled_set),
            "partially_nested": is_partially_nested(decomp),
            "coupled_traj_dim": decomp.coupled_traj_dim,
            "instance_sha256": instance_hash(instance),
            "manifest": _manifest(args, {}),
        }
        _write_artifact(doc, Path(args.out))
    if args.dump_lifting:
        doc = lifted_to_dict(build_lifted(instance, decomp))
        doc["manifest"] = _manifest(args, {})
        _write_artifact(doc, Path(args.dump_lifting))
    return EXIT_OK


def cmd_synthesize(args) -> int:
    instance = load_instance(args.instance)
    result = synthesize(
        instance,
        backend=args.backend,
        tol=args.solver_tol,
        optimize_orientation=not args.fixed_orientation,
    )
    doc = _strip_volatile(result_to_dict(result, instance))
    doc["manifest"] = _manifest(
        args, {"backend": args.backend, "solver_tol": args.solver_tol,
               "fixed_orientation": args.fixed_orientation or None},
    )
    _write_artifact(doc, Path(args.out))
    if result.status == "optimal":
        print(f"optimal; objective = {result.objective:.9g}; report: {args.out}")
        return EXIT_OK
    if result.status == "infeasible":
        print("infeasible; diagnostics written", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"solver did not reach optimality (status {result.status})", file=sys.stderr)
    return EXIT_SOLVER_FAILURE


def cmd_simulate(args) -> int:
    instance = load_instance(args.instance)
    result, doc = load_result(args.synthesis)
    recorded = doc.get("instance_sha256")
    actual = instance_hash(instance)
    if recorded is not None and recorded != actual:
        print(
            "synthesis report was produced from a different instance "
            f"(recorded {recorded[:12]}..., actual {actual[:12]}...)",
            file=sys.stderr,
        )
        return EXIT_MISMATCH
    if result.policy is None:
        print(f"synthesis report has no policy (status {result.status})", file=sys.stderr)
        return EXIT_ERROR
    config = SimulationConfig(
        samples=args.samples,
        seed=args.seed,
        feas_tol_abs=args.feas_tol,
        feas_tol_rel=args.feas_tol,
        membership_tol=args.membership_tol,
        cost_samples=args.cost_samples,
    )
    report = run(instance, result, config)
    out_doc = report_to_dict(report)
    out_doc["manifest"] = _manifest(
        args, {"samples": args.samples, "cost_samples": args.cost_samples},
    )
    out_doc["synthesis_sha256_checked"] = recorded is not None
    _write_artifact(out_doc, Path(args.out))
    if args.table:
        _write_table(report, Path(args.table))
    summary = (
        f"{report.constraint_violations} constraint / "
        f"{report.contract_violations} contract violations over {report.samples} samples"
    )
    if report.clean:
        print(f"clean: {summary}; report: {args.out}")
        return EXIT_OK
    print(f"violations: {summary}", file=sys.stderr)
    return EXIT_VIOLATIONS


def _write_table(report, path: Path) -> None:
    rows = np.column_stack(
        [report.per_sample_slack, report.per_sample_membership, report.per_sample_cost]
    )
    with path.open("w") as fh:
        fh.write("sample,worst_slack,membership,cost\n")
        for k, (s, m, c) in enumerate(rows):
            fh.write(f"{k},{float(s)!r},{float(m)!r},{float(c)!r}\n")


def cmd_report(args) -> int:
    directory = Path(args.directory)
    if not directory.is_dir():
        print(f"not a directory: {directory}", file=sys.stderr)
        return EXIT_ERROR
    found = 0
    for path in sorted(directory.glob("*.json")):
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError):
            continue
        kind = doc.get("kind")
        if kind == "analysis":
            verdict = "partially nested" if doc.get("partially_nested") else "nonclassical"
            print(f"{path.name}: analysis; C = {doc.get('C')}; {verdict}")
        elif kind == "synthesis":
            print(
                f"{path.name}: synthesis; status = {doc.get('status')}; "
                f"objective = {doc.get('objective')}"
            )
        elif kind == "simulation":
            print(
                f"{path.name}: simulation; {doc.get('constraint_violations')} constraint / "
                f"{doc.get('contract_violations')} contract violations over "
                f"{doc.get('samples')} samples; "
                f"surrogate cost = {doc.get('surrogate_cost_mean')}"
            )
        elif kind == "lifted_system":
            print(f"{path.name}: lifted-system debug dump")
        else:
            continue
        found += 1
    if found == 0:
        print("no artifacts found")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agsynth",
        description="decentralized affine policy synthesis with ellipsoidal contracts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="print the information decomposition")
    p.add_argument("instance")
    p.add_argument("-o", "--out", default=None, help="optional JSON dump path")
    p.add_argument(
        "--dump-lifting", default=None,
        help="optional path for a debug dump of the trajectory operators",
    )
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synthesize", help="solve the synthesis program")
    p.add_argument("instance")
    p.add_argument("-o", "--out", required=True, help="synthesis report path")
    p.add_argument("--backend", default=None, help="conic backend (mirrors AGSYNTH_BACKEND)")
    p.add_argument(
        "--solver-tol", type=float, default=None,
        help="solver feasibility tolerance (mirrors AGSYNTH_SOLVER_TOL)",
    )
    p.add_argument(
        "--fixed-orientation", action="store_true",
        help="pin the contract orientation to zero (translation and scaling only)",
    )
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", help="Monte Carlo validation of a synthesis report")
    p.add_argument("instance")
    p.add_argument("synthesis")
    p.add_argument("-n", "--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True, help="simulation report path")
    p.add_argument("--table", default=None, help="optional per-sample CSV path")
    p.add_argument("--cost-samples", type=int, default=None)
    p.add_argument("--feas-tol", type=float, default=1e-6)
    p.add_argument("--membership-tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summarize artifacts in a directory")
    p.add_argument("directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InstanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
