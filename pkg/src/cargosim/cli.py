"""Command-line entry point: ``cargosim <subcommand>``."""

from __future__ import annotations

import argparse
import csv
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

from .config import ExperimentConfig, apply_section, load_config
from .errors import ConfigError
from .metrics import compare, finalize, format_compare, read_summary, write_report
from .trace import TraceFormatError, read_trace, write_trace
from .tracegen import generate_trace
from .workload import TABLE1_BANDWIDTHS, TABLE1_COLUMNS, run_simulation, table1

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

SWEEP_BANDWIDTH = {1: 10.0, 2: 10.0, 4: 10.0, 8: 20.0, 16: 40.0}

SWEEP_FIELDS = ["label", "cores", "threads", "bandwidth_gbps", "latency_mean_ns",
                "latency_p99_ns", "throughput_rps", "utilization", "power_w",
                "efficiency_rpj", "requests_dropped"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _overrides(cfg: ExperimentConfig, sets: list[str]) -> None:
    for item in sets or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        apply_section(cfg, section, {key: value})
    cfg.validate()


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    _overrides(cfg, getattr(args, "set", None))
    if getattr(args, "baseline", False):
        cfg.sim.critical.enable = False
        cfg.sim.nic.offload_enable = False
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get("SIM_OUT")
    if env:
        return Path(env)
    return Path(cfg.run.output)


def _read_trace(path: str):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"trace not found: {path}")
    return read_trace(p)


def _write_atomic(outdir: Path, writer) -> None:
    """Write into a scratch directory and move it into place only on success."""
    outdir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=outdir.parent))
    try:
        writer(tmp)
        if outdir.exists():
            shutil.rmtree(outdir)
        tmp.rename(outdir)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)


# -- subcommands -------------------------------------------------------------

def cmd_gen_trace(args) -> int:
    cfg = _load(args)
    spec = cfg.tracegen
    if args.kind:
        spec.kind = args.kind
    if args.requests:
        spec.request_count = args.requests
    spec.validate()
    seed = args.seed if args.seed is not None else cfg.run.seed
    items = generate_trace(spec, seed)
    write_trace(items, args.out, text=args.text)
    print(f"wrote {len(items)} items to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    items = _read_trace(args.trace)
    result = run_simulation(cfg.sim, items)
    report = finalize(result, cfg.power)
    outdir = _out_dir(args, cfg)
    _write_atomic(outdir, lambda d: write_report(report, d))
    s = report.summary
    print(f"{cfg.run.name}: {s['requests_completed']} requests, "
          f"mean {s['latency_mean_ns']:.1f} ns, p99 {s['latency_p99_ns']:.1f} ns -> {outdir}")
    return EXIT_OK


def _sweep_point(payload) -> dict:
    cfg, items, cores = payload
    sim = cfg.sim
    sim.core.cores = cores
    sim.workload.offered_gbps = SWEEP_BANDWIDTH[cores]
    sim.workload.offered_pps = None
    rep = finalize(run_simulation(sim, items), cfg.power)
    s = rep.summary
    threads = cores * sim.core.hw_threads_per_core
    row = {"label": f"{cores}C/{threads}T", "cores": cores, "threads": threads,
           "bandwidth_gbps": SWEEP_BANDWIDTH[cores]}
    for k in SWEEP_FIELDS[4:]:
        row[k] = s[k]
    return row


def cmd_sweep(args) -> int:
    try:
        cores = [int(c) for c in args.cores.split(",") if c]
    except ValueError:
        raise UsageError(f"bad --cores list {args.cores!r}") from None
    bad = [c for c in cores if c not in SWEEP_BANDWIDTH]
    if bad or not cores:
        raise UsageError(f"sweep core counts must be among {sorted(SWEEP_BANDWIDTH)}; got {bad}")
    cfg = _load(args)
    items = _read_trace(args.trace)
    payloads = []
    for c in cores:
        sub = load_config(args.config)
        _overrides(sub, args.set)
        if args.baseline:
            sub.sim.critical.enable = False
            sub.sim.nic.offload_enable = False
        payloads.append((sub, items, c))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            rows = list(ex.map(_sweep_point, payloads))
    else:
        rows = [_sweep_point(p) for p in payloads]
    outdir = _out_dir(args, cfg)

    def write(d: Path):
        with (d / "sweep.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    _write_atomic(outdir, write)
    for r in rows:
        print(f"{r['label']:>8} {r['bandwidth_gbps']:>5.0f} Gbps  mean {r['latency_mean_ns']:.1f} ns"
              f"  p99 {r['latency_p99_ns']:.1f} ns")
    return EXIT_OK


def cmd_report(args) -> int:
    if args.compare:
        a, b = args.compare
        ratios = compare(read_summary(a), read_summary(b))
        sys.stdout.write(format_compare(ratios))
        return EXIT_OK
    if not args.dir:
        raise UsageError("report needs a run directory or --compare A B")
    for k, v in read_summary(args.dir).items():
        print(f"{k} = {v}")
    return EXIT_OK


def cmd_golden(args) -> int:
    from .golden import check_golden, run_golden

    res = run_golden()
    if args.dump:
        sys.stdout.write(res.text)
    ok, msg = check_golden(res)
    print(("PASS: " if ok else "FAIL: ") + msg)
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_table1(args) -> int:
    t = table1(args.packet_bytes)
    head = "Gbps  " + "".join(f"{c:>10}us" for c in TABLE1_COLUMNS)
    print(head)
    for i, bw in enumerate(TABLE1_BANDWIDTHS):
        print(f"{bw:<6}" + "".join(f"{t[c]['cells'][i]:>12}" for c in TABLE1_COLUMNS))
    print("fitted" + "".join(f"{t[c]['latency_us']:>10.3f}us" for c in TABLE1_COLUMNS))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cargosim", description="NIC-CPU critical-region offload simulator")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, trace=True):
        sp.add_argument("--config", help="sectioned key=value config file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
        if trace:
            sp.add_argument("--trace", required=True, help="trace file")
        sp.add_argument("--out", help="output path (default: $SIM_OUT or [run] output)")

    g = sub.add_parser("gen-trace", help="write a synthetic workload trace")
    common(g, trace=False)
    g.add_argument("--kind", choices=["hash_chain", "tree_walk"])
    g.add_argument("--requests", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--text", action="store_true", help="write the text variant")
    g.set_defaults(func=cmd_gen_trace)

    r = sub.add_parser("run", help="simulate one configuration")
    common(r)
    r.add_argument("--baseline", action="store_true", help="disable identification and offload")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="sweep core counts")
    common(s)
    s.add_argument("--cores", default="1,2,4,8,16")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--baseline", action="store_true")
    s.set_defaults(func=cmd_sweep)

    rp = sub.add_parser("report", help="print or compare run summaries")
    rp.add_argument("dir", nargs="?")
    rp.add_argument("--compare", nargs=2, metavar=("BASELINE", "CANDIDATE"))
    rp.set_defaults(func=cmd_report)

    gd = sub.add_parser("golden", help="replay the hash-chain walkthrough")
    gd.add_argument("--dump", action="store_true", help="print the table snapshots")
    gd.set_defaults(func=cmd_golden)

    t = sub.add_parser("table1", help="print the line-rate concurrency table")
    t.add_argument("--packet-bytes", type=int, default=64)
    t.set_defaults(func=cmd_table1)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        if args.command == "gen-trace" and not args.out:
            raise UsageError("gen-trace needs --out")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, TraceFormatError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
