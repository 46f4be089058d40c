"""Command-line client for the synthesis service.

By default commands call the service handlers in process; pass --url to send
the same request to a running server instead. Exit codes: 0 success (and the
threshold established, when one is given), 1 module error, 2 I/O error,
3 threshold not established.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

import httpx
from fastapi import HTTPException
from pydantic import ValidationError

from . import service

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_IO = 2
EXIT_NOT_ESTABLISHED = 3


class _Client:
    """Dispatches requests either in process or over HTTP."""

    def __init__(self, url: Optional[str]):
        self.url = url.rstrip("/") if url else None

    def call(self, path: str, handler, request, response_model):
        if self.url is None:
            return handler(request)
        response = httpx.post(f"{self.url}{path}", json=request.model_dump(mode="json"), timeout=None)
        if response.status_code != 200:
            try:
                detail = response.json().get("detail", response.text)
            except ValueError:
                detail = response.text
            raise HTTPException(status_code=response.status_code, detail=str(detail))
        return response_model.model_validate(response.json())


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        print(f"io: cannot read {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_IO)


def _scenario_doc(path: str) -> dict:
    text = _read_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        print(f"gridworld: scenario document is not valid JSON: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_ERROR)
    if not isinstance(doc, dict):
        print("gridworld: scenario document must be a JSON object", file=sys.stderr)
        raise SystemExit(EXIT_ERROR)
    return doc


def _regions_doc(path: Optional[str]):
    if path is None:
        return None
    text = _read_text(path)
    try:
        blocks = json.loads(text)
        return [[(int(x), int(y)) for x, y in block] for block in blocks]
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        print(f"abstraction: region file is not an array of cell arrays: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_ERROR)


def _write_out(out_dir: str, files: dict[str, str]) -> None:
    base = Path(out_dir)
    base.mkdir(parents=True, exist_ok=True)
    for name, content in files.items():
        (base / name).write_text(content)


def cmd_solve(args: argparse.Namespace) -> int:
    client = _Client(args.url)
    request = service.SolveRequest(
        scenario=_scenario_doc(args.scenario),
        refine=args.refine,
        regions=_regions_doc(args.regions),
        tol=args.tol,
        threshold=args.threshold,
        runs=args.runs,
        seed=args.seed,
        exports=args.export or [],
        compute_bound=not args.no_bound,
        compute_certified=not args.no_certify,
    )
    try:
        response = client.call("/solve", service.solve, request, service.SolveResponse)
    except (HTTPException, ValidationError) as exc:
        print(_detail(exc), file=sys.stderr)
        return EXIT_ERROR
    report_dict = response.report.model_dump()
    report_json = json.dumps(report_dict, indent=2, sort_keys=True) + "\n"
    text = _report_text(report_dict)
    print(text, end="")
    print("timings: " + " ".join(f"{k}={v:.3f}s" for k, v in sorted(response.timings.items())))
    if args.out:
        files = {
            "report.json": report_json,
            "report.txt": text,
            "strategy.txt": response.strategy,
            "hotspots.csv": response.hotspots_csv,
        }
        files.update(response.artifacts)
        _write_out(args.out, files)
    if args.threshold is not None:
        p_safe = response.p_safe
        if not p_safe:
            print(f"threshold {args.threshold} not established", file=sys.stderr)
            return EXIT_NOT_ESTABLISHED
        print(f"threshold {args.threshold} established")
    return EXIT_OK


def _report_text(report: dict) -> str:
    lines = [
        f"scenario  {report['scenario_digest']}",
        f"refine    {report['refinement']}",
        f"pg_value  {report['pg_value']:.6f}",
    ]
    if report.get("certified_value") is not None:
        lines.append(f"certified {report['certified_value']:.6f}")
    if report.get("mdp_upper_bound") is not None:
        lines.append(f"mdp_bound {report['mdp_upper_bound']:.6f}")
    if report.get("mc_estimate") is not None:
        lines.append(
            f"mc_est    {report['mc_estimate']:.6f} +/- {report['mc_half_width']:.6f} ({report['mc_runs']} runs)"
        )
    return "\n".join(lines) + "\n"


def cmd_bench(args: argparse.Namespace) -> int:
    client = _Client(args.url)
    request = service.BenchRequest(
        suite=args.suite,
        sizes=args.sizes,
        obstacles=args.obstacles,
        seed=args.seed,
        tol=args.tol,
        runs=args.runs,
        compute_bound=not args.no_bound,
        compute_certified=not args.no_certify,
    )
    try:
        response = client.call("/bench", service.bench, request, service.BenchResponse)
    except (HTTPException, ValidationError) as exc:
        print(_detail(exc), file=sys.stderr)
        return EXIT_ERROR
    csv_text = response.csv
    print(csv_text, end="")
    if args.out:
        _write_out(args.out, {f"bench-{args.suite}.csv": csv_text})
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    client = _Client(args.url)
    request = service.SimulateRequest(
        scenario=_scenario_doc(args.scenario),
        refine=args.refine,
        regions=_regions_doc(args.regions),
        strategy=_read_text(args.strategy) if args.strategy else None,
        runs=args.runs,
        seed=args.seed,
        horizon=args.horizon,
    )
    try:
        response = client.call("/simulate", service.simulate_endpoint, request, service.SimulateResponse)
    except (HTTPException, ValidationError) as exc:
        print(_detail(exc), file=sys.stderr)
        return EXIT_ERROR
    print(
        f"estimate {response.estimate:.6f} ci [{response.ci_low:.6f}, {response.ci_high:.6f}] "
        f"runs {response.runs} goal {response.goal_runs} bad {response.bad_runs} truncated {response.truncated_runs}"
    )
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("gridgames.service:app", host=args.host, port=args.port)
    return EXIT_OK


def _detail(exc: Exception) -> str:
    if isinstance(exc, HTTPException):
        return str(exc.detail)
    return f"request: {exc}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridgames", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--url", default=None, help="base URL of a running service (default: run in process)")
        p.add_argument("--tol", type=float, default=1e-6)
        p.add_argument("--seed", type=int, default=0)

    p_solve = sub.add_parser("solve", help="synthesize, solve, certify, and report one scenario")
    p_solve.add_argument("--scenario", required=True, help="scenario document (JSON)")
    p_solve.add_argument("--refine", choices=["none", "one-step", "regions"], default="one-step")
    p_solve.add_argument("--regions", default=None, help="region partition file (JSON cell blocks)")
    p_solve.add_argument("--threshold", type=float, default=None)
    p_solve.add_argument("--runs", type=int, default=0, help="Monte-Carlo cross-check runs")
    p_solve.add_argument("--out", default=None, help="directory for report/strategy/export files")
    p_solve.add_argument("--export", action="append", choices=["explicit", "dot", "external"])
    p_solve.add_argument("--no-bound", action="store_true", help="skip the fully observable bound")
    p_solve.add_argument("--no-certify", action="store_true", help="skip strategy certification")
    common(p_solve)
    p_solve.set_defaults(func=cmd_solve)

    p_bench = sub.add_parser("bench", help="run a scenario family and emit a CSV table")
    p_bench.add_argument("--suite", required=True, choices=["sc1", "sc2", "sc3", "sc4", "sc5"])
    p_bench.add_argument("--sizes", type=int, nargs="*", default=None)
    p_bench.add_argument("--obstacles", type=int, nargs="*", default=None)
    p_bench.add_argument("--runs", type=int, default=0)
    p_bench.add_argument("--out", default=None)
    p_bench.add_argument("--no-bound", action="store_true")
    p_bench.add_argument("--no-certify", action="store_true")
    common(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    p_sim = sub.add_parser("simulate", help="estimate a strategy's value by sampling")
    p_sim.add_argument("--scenario", required=True)
    p_sim.add_argument("--refine", choices=["none", "one-step", "regions"], default="one-step")
    p_sim.add_argument("--regions", default=None)
    p_sim.add_argument("--strategy", default=None, help="strategy dump written by solve (default: re-solve)")
    p_sim.add_argument("--runs", type=int, default=10000)
    p_sim.add_argument("--horizon", type=int, default=None)
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
