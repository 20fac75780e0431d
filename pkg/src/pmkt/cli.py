"""Command-line front end: preprocess, solve, verify, report and the corpus runner.

Exit codes: 0 success, 1 validation or I/O error, 2 no convergence,
3 certificate failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .diagnostics import envy_test, ir_test, pareto_test
from .equilibrium import SolverConfig, solve, verify
from .lcs_preprocess import DEFAULT_CAP
from .model import ConstraintSystem, Instance, InstanceError, dump_json, load_instance, parse_number
from .pipeline import Prepared, prepare
from .structured_constraints import BADS_KEY, primal_from_dual

EXIT_OK, EXIT_INVALID, EXIT_NO_CONVERGENCE, EXIT_CERT_FAILURE = 0, 1, 2, 3


class CliError(Exception):
    """Input problem reported with exit code 1."""


def _read_json(path: str | Path) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc.strerror or exc}") from exc


def _load(path: str) -> Instance:
    try:
        return load_instance(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _prepare(args: argparse.Namespace, instance: Instance, system: ConstraintSystem | None = None) -> Prepared:
    return prepare(instance, system, cap=getattr(args, "cap", DEFAULT_CAP), full_families=getattr(args, "full_families", None))


def _numbers(values: Any) -> list:
    if isinstance(values, list):
        return [_numbers(v) for v in values]
    return float(parse_number(values))


# ---------------------------------------------------------------------------
# Commands


def cmd_preprocess(args: argparse.Namespace) -> int:
    prepared = _prepare(args, _load(args.instance))
    _write(dump_json(prepared.system.to_dict()), args.output)
    return EXIT_OK


def solve_document(prepared: Prepared, config: SolverConfig) -> tuple[dict[str, Any], bool]:
    """Certificate document for a prepared instance, and whether it converged."""
    cert = solve(prepared.working, prepared.system, config)
    doc = cert.to_dict(prepared.working, prepared.system)
    if prepared.bads:
        info = prepared.working.metadata[BADS_KEY]
        primal = primal_from_dual(cert.assignment)
        floors = [float(q) for q in info["floors"]]
        totals = np.sum(np.array(primal), axis=0)
        doc["bads"] = {
            "objects": list(info["objects"]),
            "primal_assignment": [[float(f"{v:.12g}") + 0.0 for v in row] for row in primal],
            "floors": floors,
            "floor_shortfall": float(f"{max(0.0, float(np.max(np.array(floors) - totals))):.12g}"),
        }
    return doc, cert.converged


def _config(args: argparse.Namespace) -> SolverConfig:
    kwargs: dict[str, Any] = {"seed": args.seed}
    for name, attr in (("alpha", "alpha"), ("tol", "tol"), ("max_iters", "max_iters"), ("restarts", "starts")):
        value = getattr(args, attr, None)
        if value is not None:
            kwargs[name] = value
    try:
        return SolverConfig(**kwargs)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def cmd_solve(args: argparse.Namespace) -> int:
    instance = _load(args.instance)
    system = None
    if args.system:
        try:
            system = ConstraintSystem.from_dict(_read_json(args.system))
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(f"{args.system}: malformed constraint system: {exc}") from exc
    prepared = _prepare(args, instance, system)
    doc, converged = solve_document(prepared, _config(args))
    _write(dump_json(doc), args.output)
    if not converged:
        print("solver did not converge; best certificate written", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def _candidate(cert: dict[str, Any], prepared: Prepared) -> tuple[list[float], list[list[float]], float | None]:
    try:
        prices = _numbers(cert["prices"])
        assignment = _numbers(cert["assignment"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CliError(f"certificate lacks usable prices or assignment: {exc}") from exc
    alpha = float(parse_number(cert["alpha"])) if "alpha" in cert else None
    return prices, assignment, alpha


def cmd_verify(args: argparse.Namespace) -> int:
    instance = _load(args.instance)
    cert = _read_json(args.cert)
    prepared = _prepare(args, instance)
    prices, assignment, alpha = _candidate(cert, prepared)
    if args.alpha is not None:
        alpha = args.alpha
    try:
        result = verify(prepared.working, prepared.system, prices, assignment, alpha, args.tol)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    doc = result.to_dict(prepared.working, prepared.system)
    _write(dump_json(doc), args.output)
    if not result.passed:
        worst = max(result.residuals, key=result.residuals.get)
        print(f"certificate rejected: largest residual {worst} = {result.residuals[worst]:.3g}", file=sys.stderr)
        return EXIT_CERT_FAILURE
    print("certificate accepted", file=sys.stderr)
    return EXIT_OK


def report_bundle(prepared: Prepared, cert: dict[str, Any], tol: float) -> dict[str, Any]:
    prices, assignment, alpha = _candidate(cert, prepared)
    inst, system = prepared.working, prepared.system
    result = verify(inst, system, prices, assignment, alpha, tol)
    x = np.array(assignment)
    original = prepared.original.utility_matrix()
    # Utilities are reported on the instance's own scale, for the primal bads when relevant.
    primal = 1.0 - x if prepared.bads else x
    agents = []
    for i, name in enumerate(inst.agents):
        row = dict(result.agents[i])
        row["agent"] = name
        row["utility_original_scale"] = float(original[i] @ primal[i])
        agents.append(row)
    bundle: dict[str, Any] = {
        "passed": result.passed,
        "residuals": result.residuals,
        "agents": agents,
        "pareto": {"efficient": pareto_test(x, inst, system).efficient,
                   "weakly_efficient": pareto_test(x, inst, system, weak=True).efficient},
        "envy": {"pairs": [list(p) for p in envy_test(x, inst, system).pairs],
                 "equal_type_pairs": [list(p) for p in envy_test(x, inst, system).equal_type_pairs]},
        "checks": result.checks,
    }
    if inst.endowments is not None:
        ir = ir_test(x, inst, system, prices)
        bundle["individual_rationality"] = {"walrasian_gaps": list(ir.walrasian_gaps), "plain_gaps": list(ir.plain_gaps)}
    return bundle


def _text_report(bundle: dict[str, Any]) -> str:
    lines = [f"equilibrium conditions: {'pass' if bundle['passed'] else 'FAIL'}"]
    for key, value in sorted(bundle["residuals"].items()):
        lines.append(f"  {key:<24} {value:.3e}")
    lines.append("agents:")
    for a in bundle["agents"]:
        lines.append(
            f"  {a['agent']:<8} utility {a['utility_original_scale']:.6g}  spend {a['expenditure']:.6g}"
            f"  income {a['income']:.6g}{'  satiated' if a['satiated'] else ''}"
        )
    lines.append(f"pareto efficient: {bundle['pareto']['efficient']}")
    lines.append(f"envy pairs: {bundle['envy']['pairs']}  (equal type: {bundle['envy']['equal_type_pairs']})")
    if "individual_rationality" in bundle:
        gaps = bundle["individual_rationality"]["walrasian_gaps"]
        lines.append(f"largest individual-rationality gap: {max(gaps):.6g}")
    return "\n".join(lines) + "\n"


def cmd_report(args: argparse.Namespace) -> int:
    instance = _load(args.instance)
    cert = _read_json(args.cert)
    prepared = _prepare(args, instance)
    bundle = report_bundle(prepared, cert, args.tol)
    sys.stdout.write(_text_report(bundle))
    if args.json:
        _write(dump_json(_jsonable(bundle)), args.json)
    return EXIT_OK if bundle["passed"] else EXIT_CERT_FAILURE


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.floating, float)):
        return float(f"{float(value):.12g}")
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, Fraction):
        return str(value)
    return value


# ---------------------------------------------------------------------------
# Corpus


def corpus_dir() -> Path:
    return Path(str(resources.files("pmkt") / "corpus"))


def _corpus_job(path: Path, seed: int, out_dir: Path) -> tuple[str, int, str]:
    try:
        prepared = prepare(load_instance(path))
        doc, converged = solve_document(prepared, SolverConfig(seed=seed))
    except InstanceError as exc:
        return path.name, EXIT_INVALID, str(exc)
    target = out_dir / f"{path.stem}.cert.json"
    target.write_text(dump_json(doc))
    return path.name, EXIT_OK if converged else EXIT_NO_CONVERGENCE, "converged" if converged else "not converged"


def _check_shipped(path: Path, directory: Path) -> tuple[str, int, str]:
    cert = json.loads(path.read_text())
    name = cert.get("instance")
    if not name:
        return path.name, EXIT_INVALID, "certificate names no instance"
    prepared = prepare(load_instance(directory / name))
    prices, assignment, alpha = _candidate(cert, prepared)
    result = verify(prepared.working, prepared.system, prices, assignment, alpha, 1e-9)
    return path.name, EXIT_OK if result.passed else EXIT_CERT_FAILURE, "accepted" if result.passed else "rejected"


def cmd_corpus(args: argparse.Namespace) -> int:
    directory = Path(args.dir) if args.dir else corpus_dir()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    instances = sorted(p for p in directory.glob("*.json") if not p.name.endswith(".cert.json"))
    shipped = sorted(directory.glob("*.cert.json"))
    workers = int(os.environ.get("PMKT_THREADS", "1") or 1)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda p: _corpus_job(p, args.seed, out_dir), instances))
    results += [_check_shipped(p, directory) for p in shipped]
    code = EXIT_OK
    for name, status, note in results:
        print(f"{name:<32} {note}")
        code = max(code, status)
    if args.compare:
        ref = Path(args.compare)
        for p in instances:
            produced = (out_dir / f"{p.stem}.cert.json").read_bytes() if (out_dir / f"{p.stem}.cert.json").exists() else None
            other = ref / f"{p.stem}.cert.json"
            if produced is None or not other.exists() or other.read_bytes() != produced:
                print(f"{p.stem}.cert.json differs from {ref}")
                code = max(code, EXIT_CERT_FAILURE)
    return code


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmkt", description="Pseudo-market equilibria with priced constraints.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("instance", help="instance JSON file")
        p.add_argument("--cap", type=int, default=DEFAULT_CAP, help="coordinate cap for facet enumeration")
        p.add_argument("--full-families", action="store_true", default=None,
                       help="use every pair-set family for roommates")

    p = sub.add_parser("preprocess", help="emit the classified constraint system")
    common(p)
    p.add_argument("-o", "--output", help="output file (default stdout)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("solve", help="search for an equilibrium and write its certificate")
    common(p)
    p.add_argument("--system", help="use a preprocessed system instead of rebuilding it")
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--starts", type=int)
    p.add_argument("-o", "--output", help="certificate file (default stdout)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="recheck a certificate against an instance")
    common(p)
    p.add_argument("--cert", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("-o", "--output", help="write the recomputed certificate here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="diagnostics for a certificate")
    common(p)
    p.add_argument("--cert", required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--json", help="also write the diagnostics bundle as JSON")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("corpus", help="solve every corpus instance and check shipped certificates")
    p.add_argument("--dir", help="corpus directory (default: the packaged corpus)")
    p.add_argument("--out", default="corpus-out", help="directory for produced certificates")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--compare", help="directory of certificates to diff against")
    p.set_defaults(func=cmd_corpus)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "output", None) is None and args.command == "verify":
        args.output = os.devnull
    try:
        return args.func(args)
    except (CliError, InstanceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())
