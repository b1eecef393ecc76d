"""``htrcf`` command line: run scenarios, compare with the baseline, key demos,
and trace filtering.

Exit codes: 0 success, 1 usage or validation error, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import secrets
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import crypto
from .model import EventKind, read_trace
from .sim import ConfigError, ScenarioConfig, compare, load_config, run_baseline, run_scenario

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2

log = logging.getLogger("htrcf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2, which we reserve for I/O
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _configure_logging() -> None:
    level = os.environ.get("HTRCF_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def _read_config(path: str, seed: Optional[int]) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    cfg = load_config(text)
    if seed is not None:
        cfg.seed = seed
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _read_config(args.config, args.seed)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".htrcf-write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc.strerror}") from exc
    result = run_scenario(cfg)
    (out / "trace.jsonl").write_text(result.trace_jsonl())
    (out / "report.json").write_text(result.report.to_json() + "\n")
    (out / "report.csv").write_text(result.report.to_csv())
    (out / "transcripts.jsonl").write_text(result.transcripts_jsonl(full=args.full_trace))
    r = result.report
    print(
        f"{r.scheme} seed={r.seed}: groups {r.groups_initial}->{r.groups_final}, "
        f"rekeys={r.rekey_count}, blacklisted={r.blacklist_count}, "
        f"t_pow={r.t_pow:.4f} J, t_time={r.t_time:.2f} ms"
    )
    print(f"wrote {out / 'trace.jsonl'}, {out / 'report.json'}, {out / 'report.csv'}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _read_config(args.config, args.seed)
    ours = run_scenario(cfg).report
    base = run_baseline(cfg).report
    table = compare(ours, base)
    if args.json:
        print(json.dumps(table.to_dict(), indent=2))
    else:
        print(table.render())
    return EXIT_OK


def cmd_keygen(args: argparse.Namespace) -> int:
    if args.bits < 16:
        raise UsageError(f"--bits must be at least 16, got {args.bits}")
    kp = crypto.drsa_keygen(args.node_id, args.bits)
    if args.entropy:
        m = secrets.randbelow(kp.n)
    else:
        m = random.Random(args.node_id).randrange(kp.n)
    c = crypto.rsa_encrypt(m, kp.public)
    ok = crypto.rsa_decrypt(c, kp.private) == m
    print(json.dumps({"node": args.node_id, "bits": args.bits, "public": kp.public_json()}))
    print(f"round-trip m={m:x} c={c:x}: {'ok' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_USAGE


def cmd_handshake_demo(args: argparse.Namespace) -> int:
    params = crypto.DH_PARAMS[args.params]
    rng = random.Random(args.seed)
    cases = [
        ("honest responder", crypto.Behaviour.HONEST),
        ("responder with substituted key", crypto.Behaviour.RANDOM_KEY),
        ("responder advertising public value 1", crypto.Behaviour.UNIT_PUBLIC),
    ]
    for label, behaviour in cases:
        hs = crypto.verify_handshake(crypto.Party(1), crypto.Party(2, behaviour), params, rng)
        extra = f" ({hs.reason})" if hs.reason else ""
        print(f"{label}: {hs.status.value}{extra}, {len(hs.messages)} messages")
    return EXIT_OK


def cmd_trace(args: argparse.Namespace) -> int:
    kinds = {EventKind(k) for k in args.kind} if args.kind else None
    try:
        fh = open(args.trace)
    except OSError as exc:
        raise OSError(f"cannot read trace {args.trace}: {exc.strerror}") from exc
    count = 0
    energy = 0.0
    with fh:
        for ev in read_trace(fh):
            if kinds and ev.kind not in kinds:
                continue
            if args.node is not None and ev.node != args.node:
                continue
            if args.start is not None and ev.time < args.start:
                continue
            if args.end is not None and ev.time > args.end:
                continue
            count += 1
            energy += ev.energy
            if not args.summary:
                print(ev.to_json())
    if args.summary:
        print(json.dumps({"events": count, "energy": energy}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="htrcf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one scenario and write trace and reports")
    p.add_argument("--config", required=True, help="scenario JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--full-trace", action="store_true", help="include ciphertexts in transcripts")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run HT-RCF and the flat baseline on one config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the seed for both runs")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("keygen", help="derive a device RSA key pair and test it")
    p.add_argument("--node-id", type=int, required=True)
    p.add_argument("--bits", type=int, default=512)
    p.add_argument("--entropy", action="store_true", help="use system entropy for the test message")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("handshake-demo", help="DH verification against honest and bad peers")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", choices=sorted(crypto.DH_PARAMS), default="default")
    p.set_defaults(func=cmd_handshake_demo)

    p = sub.add_parser("trace", help="filter a JSON-lines trace")
    p.add_argument("trace", help="trace.jsonl path")
    p.add_argument("--kind", action="append", choices=[k.value for k in EventKind])
    p.add_argument("--node", type=int)
    p.add_argument("--start", type=int, help="earliest time (ms)")
    p.add_argument("--end", type=int, help="latest time (ms)")
    p.add_argument("--summary", action="store_true", help="print counts only")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
