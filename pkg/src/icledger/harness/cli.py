"""Command-line interface: ``icledger run | validate | sweep | export-chain | verify-piece``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

from ..chain import ChainError, IndividualChain, check_piece
from ..consensus.log import ConsensusLog, FaultBoundExceeded
from ..core import DecodeError, Piece, decode_stream
from ..simnet.config import ConfigError, SimConfig
from ..simnet.runner import run
from .metrics import compute_metrics
from .state import StateError, export_state, replay

OK = 0
FAILED = 1  # a check the command performs did not pass
BAD_INPUT = 2  # malformed config or arguments
ABORTED = 3  # the run aborted (fault bound, stall or safety)
NO_STATE = 4  # missing or unreadable state / export files

OUT_ENV = "ICLEDGER_OUT"
DEFAULT_ROUNDS = 8


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _out_dir(arg: Optional[str]) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or "icledger-out")


def _load_config(path: str, seed: Optional[int] = None) -> SimConfig:
    try:
        cfg = SimConfig.load(path)
    except FileNotFoundError:
        raise CliError(BAD_INPUT, f"config not found: {path}") from None
    except ConfigError as exc:
        raise CliError(BAD_INPUT, str(exc)) from None
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    return cfg


def _write_csv(path: Path, rows: Sequence[Sequence[object]]) -> None:
    with path.open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _simulate(cfg: SimConfig, rounds: int):
    try:
        return run(cfg, rounds)
    except FaultBoundExceeded as exc:
        raise CliError(ABORTED, f"fault-bound abort: {exc}") from None
    except ConfigError as exc:
        raise CliError(BAD_INPUT, str(exc)) from None


def write_run(trace, out: Path) -> dict:
    """Everything ``run`` writes; returns the metrics as a dict."""
    out.mkdir(parents=True, exist_ok=True)
    metrics = compute_metrics(trace)
    (out / "config.json").write_text(trace.config.to_json() + "\n")
    (out / "trace.jsonl").write_text(trace.to_jsonl())
    (out / "metrics.json").write_text(metrics.to_json())
    for name, rows in metrics.tables().items():
        _write_csv(out / f"{name}.csv", rows)
    export_state(trace, out / "state")
    return metrics.to_dict()


# -- subcommands ----------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed)
    trace = _simulate(cfg, args.rounds)
    out = _out_dir(args.out)
    m = write_run(trace, out)
    summary = {k: m[k] for k in ("n", "issued", "validated", "falsificated", "undecided", "aborted")}
    summary["out"] = str(out)
    print(json.dumps(summary, sort_keys=True))
    if trace.aborted is not None:
        print(f"icledger: run aborted ({trace.abort_kind}): {trace.aborted}", file=sys.stderr)
        return ABORTED
    return OK


def _state_root(path: str) -> Path:
    root = Path(path)
    if (root / "state" / "keys.json").is_file():
        return root / "state"
    return root


def cmd_validate(args) -> int:
    try:
        report = replay(_state_root(args.state), args.tx, args.node)
    except (StateError, FileNotFoundError, DecodeError, ValueError) as exc:
        raise CliError(NO_STATE, str(exc)) from None
    print(json.dumps(report, sort_keys=True, indent=2))
    return OK


def _parse_vary(spec: str):
    key, sep, values = spec.partition("=")
    if not sep or not key or not values:
        raise CliError(BAD_INPUT, f"--vary expects KEY=V1,V2,...; got {spec!r}")
    key = "n" if key == "N" else key  # node count is written N in sweep specs
    try:
        return key, [json.loads(v) for v in values.split(",")]
    except json.JSONDecodeError:
        raise CliError(BAD_INPUT, f"--vary values must be JSON scalars: {values!r}") from None


def sweep_point(job) -> dict:
    """One isolated sweep run; module level so worker processes can pickle it."""
    config_dict, rounds = job
    cfg = SimConfig.from_dict(config_dict)
    try:
        trace = run(cfg, rounds)
    except FaultBoundExceeded as exc:
        return {"aborted": str(exc)}
    m = compute_metrics(trace)
    honest = [str(i) for i in cfg.honest]
    received = [m.messages[i]["received"].get("ledger", 0) for i in honest]
    sent = [m.messages[i]["sent"].get("ledger", 0) for i in honest]
    foreign = [m.storage[i]["foreign"] for i in honest]
    groups = m.groups
    return {
        "n": m.n,
        "g": m.g,
        "capacity": m.capacity,
        "issued": m.issued,
        "validated": m.validated,
        "falsificated": m.falsificated,
        "undecided": m.undecided,
        "R_v": m.R_v,
        "ledger_received_per_node": sum(received) / len(received),
        "ledger_sent_per_node": sum(sent) / len(sent),
        "foreign_blocks_per_node": sum(foreign) / len(foreign),
        "valid_over_capacity": min((gt.valid_over_capacity for gt in groups), default=0.0),
        "max_t_p_over_bound": max(
            (max(gt.t_p.values(), default=0.0) / gt.t_p_bound for gt in groups if gt.t_p_bound), default=0.0
        ),
        "aborted": m.aborted,
    }


SWEEP_COLUMNS = (
    "n", "g", "capacity", "issued", "validated", "falsificated", "undecided", "R_v",
    "ledger_received_per_node", "ledger_sent_per_node", "foreign_blocks_per_node",
    "valid_over_capacity", "max_t_p_over_bound", "aborted",
)


def run_sweep(cfg: SimConfig, key: str, values: List[object], rounds: int, jobs: Optional[int] = None) -> List[dict]:
    base = cfg.to_dict()
    points = []
    for v in values:
        d = dict(base)
        d[key] = v
        try:
            SimConfig.from_dict(d).validate()
        except (ConfigError, FaultBoundExceeded) as exc:
            raise CliError(BAD_INPUT, f"{key}={v}: {exc}") from None
        points.append((d, rounds))
    workers = jobs or min(len(points), os.cpu_count() or 1)
    if workers <= 1:
        results = [sweep_point(p) for p in points]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(sweep_point, points))
    return [dict({key: v}, **r) for v, r in zip(values, results)]


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config, args.seed)
    key, values = _parse_vary(args.vary)
    rows = run_sweep(cfg, key, values, args.rounds, args.jobs)
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    columns = [key] + [c for c in SWEEP_COLUMNS if c != key]
    _write_csv(out / "sweep.csv", [columns] + [[r.get(c) for c in columns] for r in rows])
    (out / "sweep.json").write_text(json.dumps(rows, sort_keys=True, indent=2) + "\n")
    width = max(len(c) for c in columns)
    for c in columns:
        print(f"{c:<{width}}  " + "  ".join(f"{r.get(c)!s:>12.12}" for r in rows))
    return ABORTED if any(r.get("aborted") for r in rows) else OK


def cmd_export_chain(args) -> int:
    root = _state_root(args.state)
    src = root / f"node-{args.node}" / f"chain-{args.version}.bin"
    if not src.is_file():
        raise CliError(NO_STATE, f"no chain version {args.version!r} for node {args.node} under {root}")
    data = src.read_bytes()
    try:
        chain = IndividualChain.import_bytes(data)
    except (ChainError, DecodeError) as exc:
        raise CliError(NO_STATE, f"{src}: {exc}") from None
    out = Path(args.out)
    out.write_bytes(data)
    info = {"owner": chain.owner, "blocks": len(chain), "check_points": chain.cp_count, "transaction_blocks": chain.tb_count,
            "head": chain.blocks[-1].digest.hex(), "out": str(out)}
    if args.log_out:
        log_src = root / f"node-{args.node}" / "log.bin"
        if not log_src.is_file():
            raise CliError(NO_STATE, f"no consensus log for node {args.node} under {root}")
        Path(args.log_out).write_bytes(log_src.read_bytes())
        info["log_out"] = args.log_out
    print(json.dumps(info, sort_keys=True))
    return OK


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(NO_STATE, str(exc)) from None


def cmd_verify_piece(args) -> int:
    try:
        log = ConsensusLog.decode(_read(args.log))
    except (DecodeError, ValueError) as exc:
        raise CliError(NO_STATE, f"{args.log}: {exc}") from None
    pieces: List[Piece] = []
    if args.piece:
        try:
            values = decode_stream(_read(args.piece))
        except DecodeError as exc:
            print(json.dumps({"piece": args.piece, "correct": False, "fault": f"undecodable: {exc}"}))
            return FAILED
        pieces = [v for v in values if isinstance(v, Piece)]
        if len(pieces) != len(values) or not pieces:
            print(json.dumps({"piece": args.piece, "correct": False, "fault": "not a piece stream"}))
            return FAILED
    else:
        try:
            chain = IndividualChain.import_bytes(_read(args.chain))
        except (ChainError, DecodeError) as exc:
            print(json.dumps({"chain": args.chain, "correct": False, "fault": f"unreadable chain: {exc}"}))
            return FAILED
        ordinals = [args.ordinal] if args.ordinal else range(1, chain.cp_count)
        for l in ordinals:
            if not 1 <= l < chain.cp_count:
                raise CliError(BAD_INPUT, f"ordinal {l} outside 1..{chain.cp_count - 1}")
            pieces.append(chain.extract_piece(l))
    ok = True
    for piece in pieces:
        fault = check_piece(piece, log)
        ok = ok and fault is None
        print(json.dumps({"owner": piece.owner, "ordinal": piece.start_ordinal, "correct": fault is None,
                          "fault": fault.value if fault else None}, sort_keys=True))
    return OK if ok else FAILED


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="icledger", description="Implicit-consensus ledger simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario and write metrics, tables, trace and state")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--rounds", type=int, default=DEFAULT_ROUNDS, help="issuing rounds (default %(default)s)")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./icledger-out)")
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("validate", help="replay one validation from exported state")
    v.add_argument("--state", required=True, help="a run output directory or its state/ subdirectory")
    v.add_argument("--tx", required=True, help="transaction id (hex digest)")
    v.add_argument("--as", dest="node", type=int, required=True, help="validating node")
    v.set_defaults(fn=cmd_validate)

    s = sub.add_parser("sweep", help="run a scenario over several values of one config key")
    s.add_argument("--config", required=True)
    s.add_argument("--vary", required=True, help="KEY=V1,V2,... e.g. n=4,8,16")
    s.add_argument("--seed", type=int)
    s.add_argument("--rounds", type=int, default=DEFAULT_ROUNDS)
    s.add_argument("--jobs", type=int, help="worker processes (default: one per point, up to the CPU count)")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_sweep)

    e = sub.add_parser("export-chain", help="write one node's chain (and optionally its log) as export files")
    e.add_argument("--state", required=True)
    e.add_argument("--node", type=int, required=True)
    e.add_argument("--version", default="main", help="chain version name (default %(default)s)")
    e.add_argument("--out", required=True)
    e.add_argument("--log-out", help="also write the node's consensus log export here")
    e.set_defaults(fn=cmd_export_chain)

    c = sub.add_parser("verify-piece", help="check pieces against a consensus log export")
    c.add_argument("--log", required=True, help="consensus log export")
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--chain", help="chain export; its pieces are extracted and checked")
    src.add_argument("--piece", help="stream of encoded pieces")
    c.add_argument("--ordinal", type=int, help="with --chain: only the piece starting at this check point")
    c.set_defaults(fn=cmd_verify_piece)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"icledger: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
