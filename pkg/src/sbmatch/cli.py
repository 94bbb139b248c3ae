"""Thin command-line client for the experiment service.

Every subcommand goes through the HTTP interface: against a remote server
when ``--server`` (or SBMATCH_SERVER) is set, otherwise against the service
app mounted in-process, which keeps single-machine usage dependency-free and
deterministic. Exit codes: 0 success, 1 failed checks or transport trouble,
2 invalid configuration, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import httpx

SERVER_ENV = "SBMATCH_SERVER"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def make_client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def _fail_from_response(resp: httpx.Response) -> int:
    try:
        payload = resp.json()
    except ValueError:
        payload = {"message": resp.text}
    code = payload.get("code", "")
    message = payload.get("message") or json.dumps(payload)
    print(f"error: {message}", file=sys.stderr)
    if resp.status_code == 400 or code == "config" or resp.status_code == 422:
        return EXIT_CONFIG
    if code == "numeric":
        return EXIT_NUMERIC
    return EXIT_FAILURE


def cmd_run(args) -> int:
    path = Path(args.config)
    if not path.is_file():
        print(f"error: config file {path} not found", file=sys.stderr)
        return EXIT_CONFIG
    body = {"config_toml": path.read_text(encoding="utf-8")}
    for key in ("seed", "steps", "out"):
        value = getattr(args, key)
        if value is not None:
            body[key] = value
    with make_client(args.server) as client:
        resp = client.post("/run", json=body)
        if resp.status_code != 200:
            return _fail_from_response(resp)
        payload = resp.json()
    print(f"run complete: {payload['out_dir']}")
    for row in payload.get("metrics", []):
        print(
            f"  {row['method']} d={row['d']} sigma={row['sigma']:g} "
            f"kl={row['kl']:.5f}±{row['kl_se']:.5f} cbw2uvp={row['cbw2uvp']:.4f}±{row['cbw2uvp_se']:.4f}"
        )
    extra = payload.get("extra", {})
    if "max_moment_gap" in extra:
        print(f"  final moments {extra['final_moments']} target {extra['target_moments']}")
        print(f"  max moment gap {extra['max_moment_gap']:.2e}")
    if "final_loss" in extra and extra["final_loss"] is not None:
        print(f"  final loss {extra['final_loss']:.5f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if not args.csv:
        print("error: no result files given", file=sys.stderr)
        return EXIT_CONFIG
    tables = []
    for name in args.csv:
        path = Path(name)
        if not path.is_file():
            print(f"error: result file {path} not found", file=sys.stderr)
            return EXIT_CONFIG
        tables.append({"name": str(path), "text": path.read_text(encoding="utf-8")})
    with make_client(args.server) as client:
        resp = client.post("/compare", json={"tables": tables})
        if resp.status_code != 200:
            return _fail_from_response(resp)
        payload = resp.json()
    print(payload["text"])
    if args.out:
        Path(args.out).write_text(payload["csv"], encoding="utf-8")
        print(f"wrote {args.out}")
    return EXIT_OK


def _print_checks(payload: dict) -> int:
    for row in payload["results"]:
        mark = {"pass": "PASS", "fail": "FAIL", "skip": "SKIP"}[row["status"]]
        print(f"{mark}  {row['name']:<36} value={row['value']:<12.4g} threshold={row['threshold']:<10.4g} {row['runtime_s']:.1f}s")
    return EXIT_OK if payload["passed"] else EXIT_FAILURE


def cmd_oracle_check(args) -> int:
    path = Path(args.config)
    if not path.is_file():
        print(f"error: config file {path} not found", file=sys.stderr)
        return EXIT_CONFIG
    body = {"config_toml": path.read_text(encoding="utf-8")}
    if args.seed is not None:
        body["seed"] = args.seed
    if args.out is not None:
        body["out"] = args.out
    with make_client(args.server) as client:
        resp = client.post("/oracle-check", json=body)
        if resp.status_code != 200:
            return _fail_from_response(resp)
        return _print_checks(resp.json())


def cmd_suite(args) -> int:
    with make_client(args.server) as client:
        resp = client.post("/suite", json={"tier": args.tier, "seed": args.seed or 0})
        if resp.status_code != 200:
            return _fail_from_response(resp)
        payload = resp.json()
    code = _print_checks(payload)
    if args.jsonl:
        with open(args.jsonl, "w", encoding="utf-8") as fh:
            for row in payload["results"]:
                fh.write(json.dumps(row) + "\n")
        print(f"wrote {args.jsonl}")
    return code


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("sbmatch.service:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbmatch", description=__doc__)
    parser.add_argument(
        "--server",
        default=os.environ.get(SERVER_ENV),
        help="service base URL; defaults to an in-process service",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a TOML config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p_run.add_argument("--steps", type=int, default=None, help="override the configured step count")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_run.set_defaults(fn=cmd_run)

    p_cmp = sub.add_parser("compare", help="summarize metric CSVs grouped by method/d/eps")
    p_cmp.add_argument("csv", nargs="*")
    p_cmp.add_argument("--out", default=None, help="write the grouped summary CSV here")
    p_cmp.set_defaults(fn=cmd_compare)

    p_oc = sub.add_parser("oracle-check", help="run only the oracle cross-validations")
    p_oc.add_argument("config")
    p_oc.add_argument("--seed", type=int, default=None)
    p_oc.add_argument("--out", default=None)
    p_oc.set_defaults(fn=cmd_oracle_check)

    p_suite = sub.add_parser("suite", help="run the invariant check suite")
    p_suite.add_argument("--tier", choices=("fast", "full"), default="fast")
    p_suite.add_argument("--seed", type=int, default=None)
    p_suite.add_argument("--jsonl", default=None, help="write machine-readable results here")
    p_suite.set_defaults(fn=cmd_suite)

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8321)
    p_serve.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except httpx.HTTPError as exc:
        print(f"error: transport failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
